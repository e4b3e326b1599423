//! Chi-square distance, the reference distance matrix, and query-time
//! distance accounting.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature::{FeatureVector, Geometry, LabeledVector};

/// `sum (a_i - b_i)^2 / (a_i + b_i)`, skipping terms where both entries are 0.
pub fn chi_square(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    Ok(chi_square_unchecked(a, b))
}

#[inline]
pub(crate) fn chi_square_unchecked(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut sum = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let den = x + y;
        if den > 0.0 {
            let diff = x - y;
            sum += diff * diff / den;
        }
    }
    sum
}

/// Labeled reference vectors sharing one geometry and length.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    vectors: Vec<FeatureVector>,
    labels: Vec<String>,
    geometry: Geometry,
}

impl ReferenceSet {
    pub fn new(vectors: Vec<FeatureVector>, labels: Vec<String>) -> Result<Self> {
        let first = vectors.first().ok_or_else(|| Error::Dataset("reference set is empty".into()))?;
        if labels.len() != vectors.len() {
            return Err(Error::Dataset(format!("{} labels for {} vectors", labels.len(), vectors.len())));
        }
        let (geometry, dim) = (first.geometry(), first.len());
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::LengthMismatch { left: dim, right: v.len() });
            }
            if v.geometry() != geometry {
                return Err(Error::GeometryMismatch(format!(
                    "reference {i} has {} but reference 0 has {geometry}",
                    v.geometry()
                )));
            }
        }
        if let Some(i) = labels.iter().position(|l| l.is_empty()) {
            return Err(Error::Dataset(format!("reference {i} has an empty label")));
        }
        Ok(Self { vectors, labels, geometry })
    }

    pub fn from_records(records: Vec<LabeledVector>) -> Result<Self> {
        let (labels, vectors) = records.into_iter().map(|r| (r.label, r.vector)).unzip();
        Self::new(vectors, labels)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn vectors(&self) -> &[FeatureVector] {
        &self.vectors
    }

    pub fn vector(&self, r: usize) -> &FeatureVector {
        &self.vectors[r]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, r: usize) -> &str {
        &self.labels[r]
    }

    pub fn class_count(&self) -> usize {
        self.labels.iter().collect::<BTreeSet<_>>().len()
    }

    /// Checks that a query vector is comparable with the references.
    pub fn check_query(&self, x: &FeatureVector) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::LengthMismatch { left: x.len(), right: self.dim() });
        }
        if x.geometry() != self.geometry {
            return Err(Error::GeometryMismatch(format!("query has {} but index has {}", x.geometry(), self.geometry)));
        }
        Ok(())
    }
}

/// Symmetric `R x R` matrix of reference-to-reference chi-square distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    /// Computes the upper triangle (rows in parallel) and mirrors it.
    pub fn build(refs: &ReferenceSet) -> Self {
        let size = refs.len();
        let rows: Vec<Vec<f64>> = (0..size)
            .into_par_iter()
            .map(|i| {
                let a = refs.vector(i).values();
                ((i + 1)..size).map(|j| chi_square_unchecked(a, refs.vector(j).values())).collect()
            })
            .collect();
        let mut entries = vec![0.0; size * size];
        for (i, row) in rows.into_iter().enumerate() {
            for (offset, d) in row.into_iter().enumerate() {
                let j = i + 1 + offset;
                entries[i * size + j] = d;
                entries[j * size + i] = d;
            }
        }
        Self { size, entries }
    }

    /// Wraps row-major entries, validating shape, symmetry, and the zero diagonal.
    pub fn from_entries(size: usize, entries: Vec<f64>) -> Result<Self> {
        if size == 0 || entries.len() != size * size {
            return Err(Error::Inconsistent(format!("{} entries for a {size}x{size} matrix", entries.len())));
        }
        for i in 0..size {
            if entries[i * size + i] != 0.0 {
                return Err(Error::Inconsistent(format!("non-zero diagonal at {i}")));
            }
            for j in (i + 1)..size {
                let d = entries[i * size + j];
                if !(d.is_finite() && d >= 0.0) || d.to_bits() != entries[j * size + i].to_bits() {
                    return Err(Error::Inconsistent(format!("matrix not symmetric/non-negative at ({i},{j})")));
                }
            }
        }
        Ok(Self { size, entries })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.size..(i + 1) * self.size]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// Number of query-time distance evaluations. Atomic so concurrent workers
/// on one query can share it.
#[derive(Debug, Default)]
pub struct DistanceCounter(AtomicU64);

impl DistanceCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn increment(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn count(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Per-query memo of input-to-reference distances. Each reference is
/// evaluated at most once and every evaluation bumps the counter.
#[derive(Debug)]
pub struct QueryDistances<'a> {
    query: &'a [f64],
    refs: &'a ReferenceSet,
    memo: Vec<Option<f64>>,
    counter: DistanceCounter,
}

impl<'a> QueryDistances<'a> {
    pub fn new(query: &'a FeatureVector, refs: &'a ReferenceSet) -> Result<Self> {
        refs.check_query(query)?;
        Ok(Self { query: query.values(), refs, memo: vec![None; refs.len()], counter: DistanceCounter::new() })
    }

    pub fn distance(&mut self, r: usize) -> Result<f64> {
        let slot = self.memo.get_mut(r).ok_or(Error::IndexOutOfRange { index: r, len: self.refs.len() })?;
        if let Some(d) = *slot {
            return Ok(d);
        }
        let d = chi_square_unchecked(self.query, self.refs.vector(r).values());
        self.counter.increment();
        *slot = Some(d);
        Ok(d)
    }

    pub fn cached(&self, r: usize) -> Option<f64> {
        self.memo.get(r).copied().flatten()
    }

    pub fn count(&self) -> u64 {
        self.counter.count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(n: usize) -> Geometry {
        Geometry { width: 1, height: 1, bins: n }
    }

    fn fv(values: &[f64]) -> FeatureVector {
        FeatureVector::new(values.to_vec(), geom(values.len())).unwrap()
    }

    fn refs(vectors: &[&[f64]]) -> ReferenceSet {
        let vs: Vec<_> = vectors.iter().map(|v| fv(v)).collect();
        let labels = (0..vs.len()).map(|i| format!("c{i}")).collect();
        ReferenceSet::new(vs, labels).unwrap()
    }

    #[test]
    fn hand_computed_values() {
        let d = chi_square(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((d - (0.25 / 1.5 + 0.25 / 0.5)).abs() < 1e-15);
        assert_eq!(chi_square(&[0.0, 0.0, 1.0], &[0.0, 1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(chi_square(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(chi_square(&[1.0], &[0.5, 0.5]), Err(Error::LengthMismatch { left: 1, right: 2 })));
    }

    #[test]
    fn matrix_single_and_one_hot() {
        let one = DistanceMatrix::build(&refs(&[&[1.0]]));
        assert_eq!(one.entries(), &[0.0]);
        let m = DistanceMatrix::build(&refs(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]));
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j), if i == j { 0.0 } else { 2.0 });
            }
        }
    }

    #[test]
    fn from_entries_validates() {
        assert!(DistanceMatrix::from_entries(2, vec![0.0, 1.0, 1.0, 0.0]).is_ok());
        assert!(DistanceMatrix::from_entries(2, vec![0.0, 1.0, 0.5, 0.0]).is_err());
        assert!(DistanceMatrix::from_entries(2, vec![0.1, 1.0, 1.0, 0.0]).is_err());
        assert!(DistanceMatrix::from_entries(2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn memoized_counting() {
        let set = refs(&[&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5], &[0.25, 0.75], &[0.75, 0.25]]);
        let q = fv(&[0.5, 0.5]);
        let mut qd = QueryDistances::new(&q, &set).unwrap();
        let a = qd.distance(1).unwrap();
        let b = qd.distance(1).unwrap();
        assert_eq!(a, b);
        assert_eq!(qd.count(), 1);
        for r in 0..5 {
            qd.distance(r).unwrap();
        }
        assert_eq!(qd.count(), 5);
        assert!(matches!(qd.distance(5), Err(Error::IndexOutOfRange { index: 5, len: 5 })));
        assert_eq!(qd.count(), 5);
    }

    #[test]
    fn reference_set_validation() {
        assert!(ReferenceSet::new(vec![], vec![]).is_err());
        let a = fv(&[1.0, 0.0]);
        let b = fv(&[1.0, 0.0, 0.0]);
        assert!(ReferenceSet::new(vec![a.clone(), b], vec!["x".into(), "y".into()]).is_err());
        assert!(ReferenceSet::new(vec![a.clone()], vec![String::new()]).is_err());
        let other = FeatureVector::new(vec![1.0, 0.0], Geometry { width: 2, height: 1, bins: 2 }).unwrap();
        assert!(matches!(
            ReferenceSet::new(vec![a, other], vec!["x".into(), "y".into()]),
            Err(Error::GeometryMismatch(_))
        ));
    }

    #[test]
    fn counter_is_thread_safe() {
        let counter = DistanceCounter::new();
        (0..1000).into_par_iter().for_each(|_| counter.increment());
        assert_eq!(counter.count(), 1000);
    }
}
