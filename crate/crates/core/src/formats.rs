//! On-disk artifacts.
//!
//! - Feature file: `DMLANN-FEATURES v1,U,V,N,dim,count` then one
//!   `label,path,v1,...,vdim` row per image.
//! - Distance matrix: `DMLM`, `u16` version, `u32` R, then R*R little-endian
//!   `f64` in row-major order. A CSV export exists for inspection.
//! - Cluster model: `DMLANN-CLUSTERS v1,k,R`, R rows `r,assignment`, k rows
//!   `cluster,medoid`, k rows `cluster,c1,...,cdim`.
//! - Index bundle: a directory holding the above plus `manifest.json` with
//!   SHA-256 checksums of every artifact.
//!
//! Reals are written with 17 significant digits, which round-trips `f64`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{kmeans, ClusterModel};
use crate::distance::{DistanceMatrix, ReferenceSet};
use crate::error::{Error, Result};
use crate::feature::{FeatureVector, Geometry, HogParams, LabeledVector};

pub const FEATURES_MAGIC: &str = "DMLANN-FEATURES v1";
pub const CLUSTERS_MAGIC: &str = "DMLANN-CLUSTERS v1";
pub const MATRIX_MAGIC: &[u8; 4] = b"DMLM";
pub const MATRIX_VERSION: u16 = 1;
pub const MANIFEST_FORMAT: &str = "DMLANN-INDEX v1";

/// 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_real(s: &str, context: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::parse(context, format!("bad number '{s}'")))
}

fn parse_usize(s: &str, context: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::parse(context, format!("bad integer '{s}'")))
}

fn check_field(field: &str, what: &str) -> Result<()> {
    if field.contains([',', '\n', '\r']) {
        return Err(Error::Dataset(format!("{what} '{field}' contains a comma or newline")));
    }
    Ok(())
}

pub fn write_features<W: Write>(mut w: W, records: &[LabeledVector]) -> Result<()> {
    let first = records.first().ok_or_else(|| Error::Dataset("no feature records to write".into()))?;
    let g = first.vector.geometry();
    let dim = first.vector.len();
    let io = |e| Error::io("<features>", e);
    writeln!(w, "{FEATURES_MAGIC},{},{},{},{dim},{}", g.width, g.height, g.bins, records.len()).map_err(io)?;
    for rec in records {
        check_field(&rec.label, "label")?;
        check_field(&rec.path, "path")?;
        if rec.vector.len() != dim || rec.vector.geometry() != g {
            return Err(Error::GeometryMismatch(format!("record {} differs from the first record", rec.path)));
        }
        let mut line = String::with_capacity(dim * 24 + rec.path.len() + rec.label.len() + 2);
        line.push_str(&rec.label);
        line.push(',');
        line.push_str(&rec.path);
        for v in rec.vector.values() {
            line.push(',');
            line.push_str(&fmt_real(*v));
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_features<R: Read>(r: R) -> Result<Vec<LabeledVector>> {
    let ctx = "feature file";
    let mut lines = BufReader::new(r).lines();
    let header =
        lines.next().ok_or_else(|| Error::parse(ctx, "empty file"))?.map_err(|e| Error::io("<features>", e))?;
    let fields: Vec<&str> = header.trim_end().split(',').collect();
    if fields.len() != 6 || fields[0] != FEATURES_MAGIC {
        return Err(Error::parse(ctx, format!("bad header '{header}'")));
    }
    let geometry = Geometry {
        width: parse_usize(fields[1], ctx)?,
        height: parse_usize(fields[2], ctx)?,
        bins: parse_usize(fields[3], ctx)?,
    };
    let dim = parse_usize(fields[4], ctx)?;
    let count = parse_usize(fields[5], ctx)?;
    let mut records = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io("<features>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.trim_end().split(',');
        let label = parts.next().unwrap_or_default().to_string();
        let path = parts.next().ok_or_else(|| Error::parse(ctx, format!("row {i} has no path")))?.to_string();
        let values = parts.map(|p| parse_real(p, ctx)).collect::<Result<Vec<_>>>()?;
        if values.len() != dim {
            return Err(Error::parse(ctx, format!("row {i} has {} values, header says {dim}", values.len())));
        }
        if label.is_empty() {
            return Err(Error::parse(ctx, format!("row {i} has an empty label")));
        }
        let vector = FeatureVector::new(values, geometry).map_err(|e| Error::parse(ctx, format!("row {i}: {e}")))?;
        records.push(LabeledVector { label, path, vector });
    }
    if records.len() != count {
        return Err(Error::parse(ctx, format!("{} rows, header says {count}", records.len())));
    }
    Ok(records)
}

pub fn write_matrix<W: Write>(mut w: W, matrix: &DistanceMatrix) -> Result<()> {
    let io = |e| Error::io("<matrix>", e);
    let size = u32::try_from(matrix.size()).map_err(|_| Error::Dataset("matrix too large".into()))?;
    w.write_all(MATRIX_MAGIC).map_err(io)?;
    w.write_all(&MATRIX_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&size.to_le_bytes()).map_err(io)?;
    for v in matrix.entries() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<DistanceMatrix> {
    let ctx = "distance matrix";
    let io = |e| Error::io("<matrix>", e);
    let mut head = [0u8; 10];
    r.read_exact(&mut head).map_err(|_| Error::parse(ctx, "truncated header"))?;
    if &head[..4] != MATRIX_MAGIC {
        return Err(Error::parse(ctx, "bad magic"));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != MATRIX_VERSION {
        return Err(Error::parse(ctx, format!("unsupported version {version}")));
    }
    let size = u32::from_le_bytes([head[6], head[7], head[8], head[9]]) as usize;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(io)?;
    if raw.len() != size * size * 8 {
        return Err(Error::parse(ctx, format!("{} payload bytes for R={size}", raw.len())));
    }
    let entries = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    DistanceMatrix::from_entries(size, entries)
}

pub fn write_matrix_csv<W: Write>(mut w: W, matrix: &DistanceMatrix) -> Result<()> {
    let io = |e| Error::io("<matrix csv>", e);
    for i in 0..matrix.size() {
        let row: Vec<String> = matrix.row(i).iter().map(|v| fmt_real(*v)).collect();
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_clusters<W: Write>(mut w: W, model: &ClusterModel) -> Result<()> {
    let io = |e| Error::io("<clusters>", e);
    writeln!(w, "{CLUSTERS_MAGIC},{},{}", model.k(), model.len()).map_err(io)?;
    for (r, c) in model.assignment().iter().enumerate() {
        writeln!(w, "{r},{c}").map_err(io)?;
    }
    for (c, m) in model.medoids().iter().enumerate() {
        writeln!(w, "{c},{m}").map_err(io)?;
    }
    for (c, centroid) in model.centroids().iter().enumerate() {
        let values: Vec<String> = centroid.iter().map(|v| fmt_real(*v)).collect();
        writeln!(w, "{c},{}", values.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_clusters<R: Read>(r: R) -> Result<ClusterModel> {
    let ctx = "cluster model";
    let lines: Vec<String> =
        BufReader::new(r).lines().collect::<std::io::Result<_>>().map_err(|e| Error::io("<clusters>", e))?;
    let header = lines.first().ok_or_else(|| Error::parse(ctx, "empty file"))?;
    let fields: Vec<&str> = header.trim_end().split(',').collect();
    if fields.len() != 3 || fields[0] != CLUSTERS_MAGIC {
        return Err(Error::parse(ctx, format!("bad header '{header}'")));
    }
    let k = parse_usize(fields[1], ctx)?;
    let r_count = parse_usize(fields[2], ctx)?;
    let body: Vec<&String> = lines[1..].iter().filter(|l| !l.trim().is_empty()).collect();
    if body.len() != r_count + 2 * k {
        return Err(Error::parse(ctx, format!("{} rows, expected {}", body.len(), r_count + 2 * k)));
    }
    let pair = |line: &str, expect_first: usize| -> Result<usize> {
        let mut it = line.trim_end().split(',');
        let first = parse_usize(it.next().unwrap_or_default(), ctx)?;
        let second = parse_usize(it.next().ok_or_else(|| Error::parse(ctx, "short row"))?, ctx)?;
        if first != expect_first || it.next().is_some() {
            return Err(Error::parse(ctx, format!("unexpected row '{line}'")));
        }
        Ok(second)
    };
    let assignment = (0..r_count).map(|i| pair(body[i], i)).collect::<Result<Vec<_>>>()?;
    let medoids = (0..k).map(|c| pair(body[r_count + c], c)).collect::<Result<Vec<_>>>()?;
    let centroids = (0..k)
        .map(|c| {
            let line = body[r_count + k + c];
            let mut it = line.trim_end().split(',');
            if parse_usize(it.next().unwrap_or_default(), ctx)? != c {
                return Err(Error::parse(ctx, format!("centroid row {c} out of order")));
            }
            it.map(|v| parse_real(v, ctx)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    ClusterModel::from_parts(assignment, centroids, medoids)
}

/// A file inside an index bundle and its SHA-256 digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub seed: u64,
    pub query_count: usize,
    pub resubstitution: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub geometry: Geometry,
    pub dim: usize,
    pub reference_count: usize,
    pub class_count: usize,
    pub k_list: Vec<usize>,
    pub cluster_seed: u64,
    pub hog: Option<HogParams>,
    pub split: Option<SplitInfo>,
    pub features: Artifact,
    pub matrix: Artifact,
    pub clusters: BTreeMap<usize, Artifact>,
    pub queries: Option<Artifact>,
}

/// A loaded, checksum-verified index.
#[derive(Debug, Clone)]
pub struct IndexBundle {
    pub manifest: Manifest,
    pub records: Vec<LabeledVector>,
    pub refs: ReferenceSet,
    pub matrix: DistanceMatrix,
    pub models: BTreeMap<usize, ClusterModel>,
    pub queries: Option<Vec<LabeledVector>>,
}

/// What to put into a new index bundle.
#[derive(Debug, Clone)]
pub struct IndexSpec {
    pub k_list: Vec<usize>,
    pub cluster_seed: u64,
    pub hog: Option<HogParams>,
    pub split: Option<SplitInfo>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_artifact(dir: &Path, name: &str, write: impl FnOnce(BufWriter<File>) -> Result<()>) -> Result<Artifact> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    write(BufWriter::new(file))?;
    Ok(Artifact { file: name.to_string(), sha256: sha256_file(&path)? })
}

fn open_artifact(dir: &Path, artifact: &Artifact) -> Result<BufReader<File>> {
    let path = dir.join(&artifact.file);
    if sha256_file(&path)? != artifact.sha256 {
        return Err(Error::Checksum(path.display().to_string()));
    }
    Ok(BufReader::new(File::open(&path).map_err(|e| Error::io(&path, e))?))
}

impl IndexBundle {
    /// Builds the distance matrix once and one cluster model per requested
    /// `k`, writes every artifact into `dir`, and returns the loaded bundle.
    pub fn create(
        dir: impl AsRef<Path>,
        records: Vec<LabeledVector>,
        queries: Option<Vec<LabeledVector>>,
        spec: &IndexSpec,
    ) -> Result<Self> {
        let dir = dir.as_ref();
        if spec.k_list.is_empty() {
            return Err(Error::InvalidConfig("at least one cluster count is required".into()));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let refs = ReferenceSet::from_records(records.clone())?;
        if let Some(qs) = &queries {
            for q in qs {
                refs.check_query(&q.vector)?;
            }
        }
        let mut k_list = spec.k_list.clone();
        k_list.sort_unstable();
        k_list.dedup();
        let mut models = BTreeMap::new();
        for &k in &k_list {
            models.insert(k, kmeans(&refs, k, spec.cluster_seed)?);
        }
        let matrix = DistanceMatrix::build(&refs);

        let features = write_artifact(dir, "features.csv", |w| write_features(w, &records))?;
        let matrix_artifact = write_artifact(dir, "matrix.dmlm", |w| write_matrix(w, &matrix))?;
        let mut clusters = BTreeMap::new();
        for (&k, model) in &models {
            clusters.insert(k, write_artifact(dir, &format!("clusters_k{k}.csv"), |w| write_clusters(w, model))?);
        }
        let queries_artifact = match &queries {
            Some(qs) if !qs.is_empty() => Some(write_artifact(dir, "queries.csv", |w| write_features(w, qs))?),
            _ => None,
        };
        let manifest = Manifest {
            format: MANIFEST_FORMAT.to_string(),
            geometry: refs.geometry(),
            dim: refs.dim(),
            reference_count: refs.len(),
            class_count: refs.class_count(),
            k_list,
            cluster_seed: spec.cluster_seed,
            hog: spec.hog,
            split: spec.split.clone(),
            features,
            matrix: matrix_artifact,
            clusters,
            queries: queries_artifact,
        };
        let manifest_path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;
        Ok(Self { manifest, records, refs, matrix, models, queries: queries.filter(|q| !q.is_empty()) })
    }

    /// Loads a bundle, verifying checksums and that every artifact agrees
    /// with the manifest geometry and reference count.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::parse("manifest", format!("unsupported format '{}'", manifest.format)));
        }
        let records = read_features(open_artifact(dir, &manifest.features)?)?;
        let refs = ReferenceSet::from_records(records.clone())?;
        if refs.geometry() != manifest.geometry || refs.dim() != manifest.dim || refs.len() != manifest.reference_count
        {
            return Err(Error::GeometryMismatch("feature file disagrees with manifest".into()));
        }
        let matrix = read_matrix(open_artifact(dir, &manifest.matrix)?)?;
        if matrix.size() != refs.len() {
            return Err(Error::Inconsistent("matrix size disagrees with manifest".into()));
        }
        let mut models = BTreeMap::new();
        for (&k, artifact) in &manifest.clusters {
            let model = read_clusters(open_artifact(dir, artifact)?)?;
            if model.k() != k || model.len() != refs.len() {
                return Err(Error::Inconsistent(format!("cluster file for k={k} disagrees with manifest")));
            }
            model.validate_medoids(&refs)?;
            models.insert(k, model);
        }
        let queries = match &manifest.queries {
            Some(a) => {
                let qs = read_features(open_artifact(dir, a)?)?;
                for q in &qs {
                    refs.check_query(&q.vector)?;
                }
                Some(qs)
            }
            None => None,
        };
        Ok(Self { manifest, records, refs, matrix, models, queries })
    }

    pub fn model(&self, k: usize) -> Result<&ClusterModel> {
        self.models.get(&k).ok_or_else(|| Error::Inconsistent(format!("index has no cluster model for k={k}")))
    }

    pub fn artifact_paths(&self, dir: &Path) -> Vec<PathBuf> {
        let m = &self.manifest;
        let mut out = vec![dir.join(&m.features.file), dir.join(&m.matrix.file)];
        out.extend(m.clusters.values().map(|a| dir.join(&a.file)));
        out.extend(m.queries.iter().map(|a| dir.join(&a.file)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SyntheticSpec};

    fn small() -> Vec<LabeledVector> {
        generate_synthetic(&SyntheticSpec { class_count: 4, refs_per_class: 3, dimension: 12, ..Default::default() })
    }

    #[test]
    fn features_round_trip_bit_exact() {
        let recs = small();
        let mut buf = Vec::new();
        write_features(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("DMLANN-FEATURES v1,1,1,12,12,12\n"));
        let back = read_features(&buf[..]).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn features_reject_commas_and_bad_rows() {
        let mut recs = small();
        recs[0].label = "a,b".into();
        assert!(write_features(Vec::new(), &recs).is_err());
        assert!(read_features(&b"DMLANN-FEATURES v1,1,1,2,2,1\nx,p,0.5\n"[..]).is_err());
        assert!(read_features(&b"DMLANN-FEATURES v1,1,1,2,2,2\nx,p,0.5,0.5\n"[..]).is_err());
        assert!(read_features(&b"NOPE\n"[..]).is_err());
    }

    #[test]
    fn matrix_binary_layout() {
        let m = DistanceMatrix::from_entries(2, vec![0.0, 0.25, 0.25, 0.0]).unwrap();
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        assert_eq!(&buf[..4], b"DMLM");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[6..10], &[2, 0, 0, 0]);
        assert_eq!(&buf[18..26], &0.25f64.to_le_bytes());
        assert_eq!(buf.len(), 10 + 4 * 8);
        assert_eq!(read_matrix(&buf[..]).unwrap(), m);
        assert!(read_matrix(&buf[..buf.len() - 1]).is_err());
        let mut csv = Vec::new();
        write_matrix_csv(&mut csv, &m).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 2);
    }

    #[test]
    fn clusters_round_trip() {
        let refs = ReferenceSet::from_records(small()).unwrap();
        let model = kmeans(&refs, 3, 7).unwrap();
        let mut buf = Vec::new();
        write_clusters(&mut buf, &model).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("DMLANN-CLUSTERS v1,3,12\n"));
        let back = read_clusters(&buf[..]).unwrap();
        assert_eq!(back, model);
        for r in 0..refs.len() {
            assert_eq!(back.cluster_of(r).unwrap(), model.cluster_of(r).unwrap());
        }
    }

    #[test]
    fn bundle_checksums_detect_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let spec = IndexSpec { k_list: vec![2, 1], cluster_seed: 3, hog: None, split: None };
        let created = IndexBundle::create(dir.path(), small(), None, &spec).unwrap();
        assert_eq!(created.manifest.k_list, vec![1, 2]);
        let loaded = IndexBundle::load(dir.path()).unwrap();
        assert_eq!(loaded.matrix, created.matrix);
        assert_eq!(loaded.models, created.models);
        let path = dir.path().join("clusters_k2.csv");
        let mut text = fs::read_to_string(&path).unwrap();
        text.push('\n');
        fs::write(&path, text).unwrap();
        assert!(matches!(IndexBundle::load(dir.path()), Err(Error::Checksum(_))));
    }
}
