#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use dmlann_core::synth::{generate_synthetic, generate_synthetic_queries, SyntheticSpec};
use dmlann_core::{
    kmeans, ClusterModel, DistanceMatrix, FeatureVector, Geometry, GrayImage, LabeledVector, ReferenceSet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CLUSTER_SEED: u64 = 11;
pub const QUERY_SEED: u64 = 1001;

pub struct Fixture {
    pub spec: SyntheticSpec,
    pub refs: ReferenceSet,
    pub matrix: DistanceMatrix,
    pub models: BTreeMap<usize, ClusterModel>,
}

impl Fixture {
    pub fn new(spec: SyntheticSpec, ks: &[usize]) -> Self {
        let refs = ReferenceSet::from_records(generate_synthetic(&spec)).unwrap();
        let matrix = DistanceMatrix::build(&refs);
        let models = ks.iter().map(|&k| (k, kmeans(&refs, k, CLUSTER_SEED).unwrap())).collect();
        Self { spec, refs, matrix, models }
    }

    pub fn default_synthetic() -> Self {
        Self::new(SyntheticSpec::default(), &[1, 2, 3])
    }

    pub fn queries(&self, count: usize) -> Vec<LabeledVector> {
        generate_synthetic_queries(&self.spec, count, QUERY_SEED)
    }

    pub fn model(&self, k: usize) -> &ClusterModel {
        &self.models[&k]
    }
}

pub fn random_histogram(rng: &mut impl Rng, dim: usize, zero_prob: f64) -> FeatureVector {
    let values = (0..dim).map(|_| if rng.random_bool(zero_prob) { 0.0 } else { rng.random::<f64>() }).collect();
    FeatureVector::normalized(values, Geometry { width: 1, height: 1, bins: dim }).unwrap()
}

/// A random reference set of `r` histograms spread over `classes` labels.
pub fn random_refs(rng: &mut impl Rng, r: usize, dim: usize, classes: usize) -> ReferenceSet {
    let vectors = (0..r).map(|_| random_histogram(rng, dim, 0.2)).collect();
    let labels = (0..r).map(|i| format!("c{}", i % classes)).collect();
    ReferenceSet::new(vectors, labels).unwrap()
}

/// Writes a directory of cartoon face images, one subdirectory per person.
/// Each person has fixed proportions; each image jitters position,
/// brightness and pixel noise.
pub fn write_face_directory(dir: &Path, people: usize, images: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in 0..people {
        let person = Person {
            head_w: rng.random_range(16.0..24.0),
            head_h: rng.random_range(22.0..29.0),
            eye_dx: rng.random_range(5.0..10.0),
            eye_y: rng.random_range(-10.0..-3.0),
            eye_r: rng.random_range(1.5..4.0),
            mouth_y: rng.random_range(7.0..14.0),
            mouth_w: rng.random_range(4.0..11.0),
            nose_len: rng.random_range(2.0..8.0),
            skin: rng.random_range(0.55..0.85),
        };
        let class_dir = dir.join(format!("person{p:02}"));
        std::fs::create_dir_all(&class_dir).unwrap();
        for i in 0..images {
            let jitter = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
            let gain = rng.random_range(0.9..1.1);
            let mut noise = ChaCha8Rng::seed_from_u64(rng.random());
            let img = GrayImage::from_fn(64, 64, |x, y| {
                let v = person.shade(x as f64 - 32.0 - jitter.0, y as f64 - 32.0 - jitter.1) * gain;
                v + noise.random_range(-0.03..0.03)
            })
            .unwrap();
            std::fs::write(class_dir.join(format!("img{i:02}.pgm")), img.to_pgm_bytes()).unwrap();
        }
    }
}

struct Person {
    head_w: f64,
    head_h: f64,
    eye_dx: f64,
    eye_y: f64,
    eye_r: f64,
    mouth_y: f64,
    mouth_w: f64,
    nose_len: f64,
    skin: f64,
}

impl Person {
    fn shade(&self, x: f64, y: f64) -> f64 {
        let head = (x / self.head_w).powi(2) + (y / self.head_h).powi(2);
        if head > 1.0 {
            return 0.15;
        }
        for side in [-1.0, 1.0] {
            if (x - side * self.eye_dx).hypot(y - self.eye_y) < self.eye_r {
                return 0.05;
            }
        }
        if (y - self.mouth_y).abs() < 1.2 && x.abs() < self.mouth_w {
            return 0.25;
        }
        if x.abs() < 1.0 && y > self.eye_y + 2.0 && y < self.eye_y + 2.0 + self.nose_len {
            return self.skin - 0.2;
        }
        self.skin
    }
}
