//! K-means partitioning of the reference set.
//!
//! Clustering runs in Euclidean feature space. Each cluster also records its
//! medoid, the member reference nearest the centroid, which seeds that
//! cluster's candidate queue at query time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distance::ReferenceSet;
use crate::error::{Error, Result};

/// Lloyd sweep limit.
pub const MAX_SWEEPS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    assignment: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    medoids: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl ClusterModel {
    /// Assembles a model from its parts and checks every invariant: clusters
    /// are non-empty, membership matches the assignment, and each medoid is a
    /// member nearest its centroid (ties to the lowest index).
    pub fn from_parts(assignment: Vec<usize>, centroids: Vec<Vec<f64>>, medoids: Vec<usize>) -> Result<Self> {
        let k = centroids.len();
        let r = assignment.len();
        if k == 0 || k > r {
            return Err(Error::InvalidClusterCount { k, r });
        }
        if medoids.len() != k {
            return Err(Error::Inconsistent(format!("{} medoids for {k} clusters", medoids.len())));
        }
        let mut members = vec![Vec::new(); k];
        for (idx, &c) in assignment.iter().enumerate() {
            if c >= k {
                return Err(Error::Inconsistent(format!("reference {idx} assigned to cluster {c} of {k}")));
            }
            members[c].push(idx);
        }
        if let Some(c) = members.iter().position(Vec::is_empty) {
            return Err(Error::Inconsistent(format!("cluster {c} is empty")));
        }
        for (c, &m) in medoids.iter().enumerate() {
            if assignment.get(m) != Some(&c) {
                return Err(Error::Inconsistent(format!("medoid {m} is not a member of cluster {c}")));
            }
        }
        Ok(Self { assignment, centroids, medoids, members })
    }

    /// Checks each medoid against one recomputed from the reference vectors.
    pub fn validate_medoids(&self, refs: &ReferenceSet) -> Result<()> {
        if refs.len() != self.assignment.len() {
            return Err(Error::Inconsistent(format!(
                "model covers {} references, set has {}",
                self.assignment.len(),
                refs.len()
            )));
        }
        let data: Vec<&[f64]> = refs.vectors().iter().map(|v| v.values()).collect();
        for c in 0..self.k() {
            let expected = medoid_of(&data, &self.members[c], &self.centroids[c]);
            if expected != self.medoids[c] {
                return Err(Error::Inconsistent(format!(
                    "cluster {c}: medoid {} but nearest member is {expected}",
                    self.medoids[c]
                )));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn medoids(&self) -> &[usize] {
        &self.medoids
    }

    pub fn medoid(&self, cluster: usize) -> usize {
        self.medoids[cluster]
    }

    pub fn members(&self, cluster: usize) -> &[usize] {
        &self.members[cluster]
    }

    pub fn cluster_of(&self, r: usize) -> Result<usize> {
        self.assignment.get(r).copied().ok_or(Error::IndexOutOfRange { index: r, len: self.assignment.len() })
    }
}

#[inline]
fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn medoid_of(data: &[&[f64]], members: &[usize], centroid: &[f64]) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    for &m in members {
        let d = sq_euclidean(data[m], centroid);
        if d < best.0 || (d == best.0 && m < best.1) {
            best = (d, m);
        }
    }
    best.1
}

/// Runs seeded k-means (k-means++ seeding, Lloyd sweeps).
pub fn kmeans(refs: &ReferenceSet, k: usize, seed: u64) -> Result<ClusterModel> {
    kmeans_with_objective(refs, k, seed).map(|(model, _)| model)
}

/// Same as [`kmeans`], also returning the within-cluster sum of squares after
/// every sweep.
pub fn kmeans_with_objective(refs: &ReferenceSet, k: usize, seed: u64) -> Result<(ClusterModel, Vec<f64>)> {
    let r = refs.len();
    if k == 0 || k > r {
        return Err(Error::InvalidClusterCount { k, r });
    }
    let data: Vec<&[f64]> = refs.vectors().iter().map(|v| v.values()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(&data, k, &mut rng);
    let mut assignment = vec![usize::MAX; r];
    let mut objectives = Vec::new();

    for _ in 0..MAX_SWEEPS {
        let mut changed = false;
        for (i, point) in data.iter().enumerate() {
            let nearest = nearest_centroid(point, &centroids).0;
            if assignment[i] != nearest {
                assignment[i] = nearest;
                changed = true;
            }
        }
        changed |= repair_empty_clusters(&data, &mut assignment, &mut centroids);
        update_centroids(&data, &assignment, &mut centroids);
        objectives.push(objective(&data, &assignment, &centroids));
        if !changed {
            break;
        }
    }

    let mut members = vec![Vec::new(); k];
    for (i, &c) in assignment.iter().enumerate() {
        members[c].push(i);
    }
    let medoids = (0..k).map(|c| medoid_of(&data, &members[c], &centroids[c])).collect();
    Ok((ClusterModel { assignment, centroids, medoids, members }, objectives))
}

fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_euclidean(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++: first centre uniform, the rest drawn proportionally to the
/// squared distance to the nearest chosen centre. When every remaining point
/// coincides with a chosen centre, the lowest unchosen index is used.
fn seed_centroids(data: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let r = data.len();
    let mut chosen = vec![false; r];
    let first = rng.random_range(0..r);
    chosen[first] = true;
    let mut centroids = vec![data[first].to_vec()];
    let mut nearest: Vec<f64> = data.iter().map(|p| sq_euclidean(p, data[first])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `target` just above the accumulated mass
            pick.unwrap_or_else(|| nearest.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            chosen.iter().position(|c| !c).unwrap()
        };
        chosen[pick] = true;
        centroids.push(data[pick].to_vec());
        for (i, p) in data.iter().enumerate() {
            nearest[i] = nearest[i].min(sq_euclidean(p, data[pick]));
        }
    }
    centroids
}

/// Gives every empty cluster the point farthest from its own centroid, taken
/// from a cluster that keeps at least one member. Returns whether anything moved.
fn repair_empty_clusters(data: &[&[f64]], assignment: &mut [usize], centroids: &mut [Vec<f64>]) -> bool {
    let k = centroids.len();
    let mut moved = false;
    loop {
        let mut sizes = vec![0usize; k];
        for &c in assignment.iter() {
            sizes[c] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return moved;
        };
        let mut far = (f64::NEG_INFINITY, usize::MAX);
        for (i, p) in data.iter().enumerate() {
            let c = assignment[i];
            if sizes[c] < 2 {
                continue;
            }
            let d = sq_euclidean(p, &centroids[c]);
            if d > far.0 {
                far = (d, i);
            }
        }
        let victim = far.1;
        assignment[victim] = empty;
        centroids[empty] = data[victim].to_vec();
        moved = true;
    }
}

fn update_centroids(data: &[&[f64]], assignment: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = data[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &c) in data.iter().zip(assignment) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p.iter()) {
            *s += v;
        }
    }
    for ((centroid, sum), count) in centroids.iter_mut().zip(sums).zip(counts) {
        if count > 0 {
            *centroid = sum.into_iter().map(|s| s / count as f64).collect();
        }
    }
}

fn objective(data: &[&[f64]], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    data.iter().zip(assignment).map(|(p, &c)| sq_euclidean(p, &centroids[c])).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::{FeatureVector, Geometry};

    fn set(points: &[Vec<f64>]) -> ReferenceSet {
        let g = Geometry { width: 1, height: 1, bins: points[0].len() };
        let vs = points.iter().map(|p| FeatureVector::normalized(p.clone(), g).unwrap()).collect::<Vec<_>>();
        let labels = (0..vs.len()).map(|i| format!("p{i}")).collect();
        ReferenceSet::new(vs, labels).unwrap()
    }

    fn grid(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![1.0 + i as f64, 2.0 + (i * 7 % 5) as f64, 3.0]).collect()
    }

    #[test]
    fn single_cluster_medoid_is_nearest_to_mean() {
        let refs = set(&grid(7));
        let model = kmeans(&refs, 1, 3).unwrap();
        assert_eq!(model.k(), 1);
        assert!(model.assignment().iter().all(|&c| c == 0));
        let dim = refs.dim();
        let mean: Vec<f64> =
            (0..dim).map(|d| refs.vectors().iter().map(|v| v.values()[d]).sum::<f64>() / refs.len() as f64).collect();
        let expected = (0..refs.len())
            .min_by(|&a, &b| {
                sq_euclidean(refs.vector(a).values(), &mean)
                    .total_cmp(&sq_euclidean(refs.vector(b).values(), &mean))
                    .then(a.cmp(&b))
            })
            .unwrap();
        assert_eq!(model.medoid(0), expected);
        for r in 0..refs.len() {
            assert_eq!(model.cluster_of(r).unwrap(), 0);
        }
    }

    #[test]
    fn k_equals_r_gives_singletons() {
        let refs = set(&grid(6));
        let model = kmeans(&refs, 6, 11).unwrap();
        for c in 0..6 {
            assert_eq!(model.members(c).len(), 1);
            assert_eq!(model.medoid(c), model.members(c)[0]);
        }
        for r in 0..6 {
            let c = model.cluster_of(r).unwrap();
            assert_eq!(model.members(c), &[r]);
        }
    }

    #[test]
    fn invalid_k() {
        let refs = set(&grid(3));
        assert!(matches!(kmeans(&refs, 0, 1), Err(Error::InvalidClusterCount { k: 0, r: 3 })));
        assert!(matches!(kmeans(&refs, 4, 1), Err(Error::InvalidClusterCount { k: 4, r: 3 })));
        let model = kmeans(&refs, 2, 1).unwrap();
        assert!(matches!(model.cluster_of(3), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn duplicates_still_yield_non_empty_clusters() {
        let refs = set(&vec![vec![1.0, 1.0]; 5]);
        let model = kmeans(&refs, 3, 9).unwrap();
        for c in 0..3 {
            assert!(!model.members(c).is_empty());
            assert!(model.members(c).contains(&model.medoid(c)));
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let refs = set(&grid(20));
        assert_eq!(kmeans(&refs, 4, 5).unwrap(), kmeans(&refs, 4, 5).unwrap());
    }

    #[test]
    fn from_parts_rejects_bad_models() {
        assert!(ClusterModel::from_parts(vec![0, 1], vec![vec![0.0], vec![1.0]], vec![0, 1]).is_ok());
        assert!(ClusterModel::from_parts(vec![0, 0], vec![vec![0.0], vec![1.0]], vec![0, 1]).is_err());
        assert!(ClusterModel::from_parts(vec![0, 1], vec![vec![0.0], vec![1.0]], vec![1, 0]).is_err());
        assert!(ClusterModel::from_parts(vec![0, 2], vec![vec![0.0], vec![1.0]], vec![0, 1]).is_err());
    }
}
