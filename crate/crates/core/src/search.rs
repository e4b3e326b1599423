//! Query-time search engines.
//!
//! Three engines share one instrumented distance cache and one trace type:
//!
//! - [`search_bruteforce`]: exact linear scan.
//! - [`search_mlann`]: single-queue maximum-likelihood ANN. Each next
//!   candidate minimizes the accumulated discrepancy statistic [`phi`] between
//!   its precomputed distances to the already-checked references and the
//!   query's distances to them, minus its log prior.
//! - [`search_dmlann`]: one queue per k-means cluster, seeded with the cluster
//!   medoid. Every sweep draws `weight_i` candidates from cluster `i`, where
//!   `weight_i = ceil(max_avg / avg_i)` over the queues' average query
//!   distances, so clusters that look closer to the query get more picks.
//!   Candidate scores use the evidence from all queues.
//!
//! All engines stop as soon as a checked reference is closer than `rho0` and
//! otherwise run until their budget is spent. In both cases the nearest
//! checked reference is returned.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::distance::{DistanceMatrix, QueryDistances, ReferenceSet};
use crate::error::{Error, Result};
use crate::feature::{FeatureVector, Geometry};

/// Matrix distances below this are treated as zero by [`phi`].
pub const PHI_EPSILON: f64 = 1e-12;
/// Value of [`phi`] for a zero matrix distance paired with a non-zero query distance.
pub const PHI_SENTINEL: f64 = 1e18;

/// How `max_iterations` is counted by [`search_dmlann`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetUnit {
    /// Outer sweeps after the medoid initialization.
    #[default]
    Sweeps,
    /// Total references checked, medoids included.
    Candidates,
}

/// Tie policy for candidate selection and for picking the nearest result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchParams {
    /// Acceptance threshold; a distance strictly below it ends the search.
    pub rho0: f64,
    /// Sweeps (D-ML-ANN, see [`BudgetUnit`]) or candidates (ML-ANN).
    pub max_iterations: usize,
    pub budget_unit: BudgetUnit,
    pub tie_break: TieBreak,
    /// Select per-cluster candidates on the rayon pool. Results do not depend on it.
    pub parallel: bool,
    priors: Option<Vec<f64>>,
}

impl SearchParams {
    pub fn new(rho0: f64, max_iterations: usize) -> Result<Self> {
        if !rho0.is_finite() || rho0 < 0.0 {
            return Err(Error::InvalidParams(format!("rho0 must be finite and >= 0, got {rho0}")));
        }
        if max_iterations == 0 {
            return Err(Error::InvalidParams("max_iterations must be >= 1".into()));
        }
        Ok(Self {
            rho0,
            max_iterations,
            budget_unit: BudgetUnit::Sweeps,
            tie_break: TieBreak::LowestIndex,
            parallel: false,
            priors: None,
        })
    }

    /// Per-reference prior weights. They need not sum to one.
    pub fn with_priors(mut self, priors: Vec<f64>) -> Result<Self> {
        if priors.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidParams("priors must be finite and strictly positive".into()));
        }
        self.priors = Some(priors);
        Ok(self)
    }

    pub fn with_budget_unit(mut self, unit: BudgetUnit) -> Self {
        self.budget_unit = unit;
        self
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn priors(&self) -> Option<&[f64]> {
        self.priors.as_deref()
    }

    /// `ln p_mu`; uniform priors give `ln(1/R)`.
    pub fn ln_prior(&self, mu: usize, reference_count: usize) -> f64 {
        match &self.priors {
            Some(p) => p[mu].ln(),
            None => (1.0 / reference_count as f64).ln(),
        }
    }

    fn check_priors(&self, reference_count: usize) -> Result<()> {
        match &self.priors {
            Some(p) if p.len() != reference_count => {
                Err(Error::InvalidParams(format!("{} priors for {reference_count} references", p.len())))
            }
            _ => Ok(()),
        }
    }
}

/// Threshold test: `distance < rho0`.
#[inline]
pub fn accept(distance: f64, params: &SearchParams) -> bool {
    distance < params.rho0
}

/// Normal approximation of the conditional density of the query distance
/// `rho` given that the query belongs to the class of a reference whose
/// precomputed distance to the checked reference is `rho_nu_ri`. Diagnostic
/// only; selection uses [`phi`].
pub fn conditional_density(rho: f64, rho_nu_ri: f64, geometry: Geometry) -> Result<f64> {
    if !rho.is_finite() || !rho_nu_ri.is_finite() {
        return Err(Error::NonFinite("conditional_density input"));
    }
    if rho < 0.0 || rho_nu_ri < 0.0 {
        return Err(Error::InvalidParams("distances must be non-negative".into()));
    }
    if geometry.area() == 0 || geometry.bins < 2 {
        return Err(Error::InvalidParams(format!("density needs UV > 0 and N >= 2, got {geometry}")));
    }
    let uv = geometry.area() as f64;
    let dof = (geometry.bins - 1) as f64;
    let scale = uv / (std::f64::consts::TAU * (4.0 * uv * rho_nu_ri + 2.0 * dof)).sqrt();
    let offset = rho - rho_nu_ri - dof / uv;
    let exponent = -uv * offset * offset / (8.0 * rho_nu_ri + 4.0 * dof / uv);
    Ok(scale * exponent.exp())
}

/// Discrepancy `(query_dist - matrix_dist)^2 / matrix_dist`.
///
/// A matrix distance below [`PHI_EPSILON`] (duplicate references) yields 0
/// when the query distance matches it too, else [`PHI_SENTINEL`].
#[inline]
pub fn phi(query_dist: f64, matrix_dist: f64) -> f64 {
    let diff = query_dist - matrix_dist;
    let num = diff * diff;
    if matrix_dist < PHI_EPSILON {
        if num < PHI_EPSILON * PHI_EPSILON {
            0.0
        } else {
            PHI_SENTINEL
        }
    } else {
        num / matrix_dist
    }
}

/// `weight_i = ceil(max_avg / avg_i)`, capped at `cap`. The cluster(s) with the
/// largest average get exactly 1; a zero average below a positive maximum gets `cap`.
pub fn cluster_weights(averages: &[f64], cap: usize) -> Vec<usize> {
    let cap = cap.max(1);
    let max = averages.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    averages
        .iter()
        .map(|&avg| {
            if avg == max {
                1
            } else if avg <= 0.0 {
                cap
            } else {
                let ratio = (max / avg).ceil();
                if ratio >= cap as f64 {
                    cap
                } else {
                    (ratio as usize).max(1)
                }
            }
        })
        .collect()
}

/// Splits each cluster's weight into picks it can actually serve.
///
/// A cluster with fewer unconsidered members than its weight gives the
/// surplus back; the pooled surplus is shared among clusters with spare
/// members proportionally to their weights (largest remainder, ties to the
/// lower cluster index) until it is used up or nobody has spare members.
pub fn allocate_picks(weights: &[usize], remaining: &[usize]) -> Vec<usize> {
    assert_eq!(weights.len(), remaining.len());
    let mut alloc: Vec<usize> = weights.iter().zip(remaining).map(|(&w, &r)| w.min(r)).collect();
    let mut surplus: usize = weights.iter().zip(&alloc).map(|(&w, &a)| w - a).sum();
    while surplus > 0 {
        let open: Vec<usize> = (0..weights.len()).filter(|&i| alloc[i] < remaining[i]).collect();
        if open.is_empty() {
            break;
        }
        let total: u128 = open.iter().map(|&i| weights[i].max(1) as u128).sum();
        let mut shares: Vec<(usize, usize, u128)> = open
            .iter()
            .map(|&i| {
                let exact = surplus as u128 * weights[i].max(1) as u128;
                (i, (exact / total) as usize, exact % total)
            })
            .collect();
        let floor_sum: usize = shares.iter().map(|s| s.1).sum();
        let mut extra = surplus - floor_sum;
        let mut by_remainder: Vec<usize> = (0..shares.len()).collect();
        by_remainder.sort_by(|&a, &b| shares[b].2.cmp(&shares[a].2).then(shares[a].0.cmp(&shares[b].0)));
        for s in by_remainder {
            if extra == 0 {
                break;
            }
            shares[s].1 += 1;
            extra -= 1;
        }
        let mut placed = 0;
        for (i, share, _) in shares {
            let room = remaining[i] - alloc[i];
            let take = share.min(room);
            alloc[i] += take;
            placed += take;
        }
        surplus -= placed;
        if placed == 0 {
            break;
        }
    }
    alloc
}

/// Per-query search state: one queue per cluster plus the evidence each
/// reference has accumulated from every checked candidate.
#[derive(Debug, Clone)]
pub struct QueueState {
    queues: Vec<Vec<usize>>,
    considered: Vec<usize>,
    query_dist: Vec<Option<f64>>,
    sums: Vec<f64>,
    weights: Vec<usize>,
    evidence: Vec<f64>,
}

impl QueueState {
    pub fn new(reference_count: usize, clusters: usize) -> Self {
        Self {
            queues: vec![Vec::new(); clusters],
            considered: Vec::new(),
            query_dist: vec![None; reference_count],
            sums: vec![0.0; clusters],
            weights: vec![1; clusters],
            evidence: vec![0.0; reference_count],
        }
    }

    /// Records a checked candidate and folds its evidence into every score.
    pub fn push(&mut self, cluster: usize, reference: usize, distance: f64, matrix: &DistanceMatrix) {
        assert!(self.query_dist[reference].is_none(), "reference {reference} considered twice");
        self.queues[cluster].push(reference);
        self.considered.push(reference);
        self.query_dist[reference] = Some(distance);
        self.sums[cluster] += distance;
        let row = matrix.row(reference);
        for (e, &m) in self.evidence.iter_mut().zip(row) {
            *e += phi(distance, m);
        }
    }

    pub fn queues(&self) -> &[Vec<usize>] {
        &self.queues
    }

    /// Checked references in the order they were checked.
    pub fn considered(&self) -> &[usize] {
        &self.considered
    }

    pub fn is_considered(&self, r: usize) -> bool {
        self.query_dist[r].is_some()
    }

    pub fn query_distance(&self, r: usize) -> Option<f64> {
        self.query_dist[r]
    }

    /// Mean query distance per queue (`NaN` for an empty queue).
    pub fn averages(&self) -> Vec<f64> {
        self.sums.iter().zip(&self.queues).map(|(s, q)| s / q.len() as f64).collect()
    }

    pub fn weights(&self) -> &[usize] {
        &self.weights
    }

    /// Recomputes the cluster weights from the current queues.
    pub fn update_weights(&mut self, cap: usize) -> &[usize] {
        debug_assert!(self.queues.iter().all(|q| !q.is_empty()));
        self.weights = cluster_weights(&self.averages(), cap);
        &self.weights
    }

    /// Nearest checked reference, ties to the lowest index.
    pub fn nearest(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for &r in &self.considered {
            let d = self.query_dist[r].unwrap();
            match best {
                Some((br, bd)) if d > bd || (d == bd && r > br) => {}
                _ => best = Some((r, d)),
            }
        }
        best
    }

    fn running_score(&self, mu: usize, params: &SearchParams) -> f64 {
        self.evidence[mu] - params.ln_prior(mu, self.evidence.len())
    }
}

/// Likelihood score of an unchecked reference `mu`: the sum of [`phi`] over
/// every checked candidate in every queue, minus `ln p_mu`. Lower is more likely.
pub fn score(mu: usize, state: &QueueState, matrix: &DistanceMatrix, params: &SearchParams) -> f64 {
    let evidence =
        state.considered.iter().fold(0.0, |acc, &r| acc + phi(state.query_dist[r].unwrap(), matrix.get(mu, r)));
    evidence - params.ln_prior(mu, matrix.size())
}

/// The `count` lowest-scoring unchecked references among `pool`, ordered by
/// (score, index), each paired with its score.
fn best_candidates(state: &QueueState, pool: &[usize], count: usize, params: &SearchParams) -> Vec<(usize, f64)> {
    if count == 0 {
        return Vec::new();
    }
    let mut scored: Vec<(usize, f64)> =
        pool.iter().filter(|&&mu| !state.is_considered(mu)).map(|&mu| (mu, state.running_score(mu, params))).collect();
    let by_score = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if count == 1 {
        return scored.into_iter().min_by(by_score).into_iter().collect();
    }
    scored.sort_by(by_score);
    scored.truncate(count);
    scored
}

/// Most likely unchecked member of `cluster`, or `None` when the cluster is used up.
pub fn select_next(
    state: &QueueState,
    cluster: usize,
    matrix: &DistanceMatrix,
    model: &ClusterModel,
    params: &SearchParams,
) -> Option<usize> {
    debug_assert_eq!(matrix.size(), state.evidence.len());
    best_candidates(state, model.members(cluster), 1, params).first().map(|c| c.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Threshold,
    Budget,
}

/// One checked reference. `score` is absent for queue seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateStep {
    pub iteration: usize,
    pub cluster: usize,
    pub reference: usize,
    pub distance: f64,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub result_label: String,
    pub result_reference: usize,
    pub result_distance: f64,
    pub terminated_by: Termination,
    pub iterations: usize,
    pub distance_computations: u64,
    pub elapsed_seconds: f64,
    pub candidate_order: Vec<CandidateStep>,
}

impl QueryTrace {
    /// The reference indices in the order they were checked.
    pub fn references(&self) -> Vec<usize> {
        self.candidate_order.iter().map(|s| s.reference).collect()
    }

    /// The trace with timing zeroed, for comparisons across runs.
    pub fn without_timing(&self) -> Self {
        Self { elapsed_seconds: 0.0, ..self.clone() }
    }
}

fn finish(
    state: &QueueState,
    refs: &ReferenceSet,
    distances: &QueryDistances<'_>,
    terminated_by: Termination,
    iterations: usize,
    candidate_order: Vec<CandidateStep>,
    started: Instant,
) -> QueryTrace {
    let (result_reference, result_distance) = state.nearest().expect("at least one reference is always checked");
    QueryTrace {
        result_label: refs.label(result_reference).to_string(),
        result_reference,
        result_distance,
        terminated_by,
        iterations,
        distance_computations: distances.count(),
        elapsed_seconds: started.elapsed().as_secs_f64(),
        candidate_order,
    }
}

fn check_index(refs: &ReferenceSet, matrix: &DistanceMatrix, params: &SearchParams) -> Result<()> {
    if matrix.size() != refs.len() {
        return Err(Error::Inconsistent(format!(
            "distance matrix is {0}x{0} but there are {1} references",
            matrix.size(),
            refs.len()
        )));
    }
    params.check_priors(refs.len())
}

/// Exact nearest neighbour by linear scan (ties to the lowest index).
pub fn search_bruteforce(x: &FeatureVector, refs: &ReferenceSet) -> Result<QueryTrace> {
    let started = Instant::now();
    let mut distances = QueryDistances::new(x, refs)?;
    let mut best = (usize::MAX, f64::INFINITY);
    let mut order = Vec::with_capacity(refs.len());
    for r in 0..refs.len() {
        let d = distances.distance(r)?;
        if d < best.1 {
            best = (r, d);
        }
        order.push(CandidateStep { iteration: r, cluster: 0, reference: r, distance: d, score: None });
    }
    Ok(QueryTrace {
        result_label: refs.label(best.0).to_string(),
        result_reference: best.0,
        result_distance: best.1,
        terminated_by: Termination::Budget,
        iterations: refs.len(),
        distance_computations: distances.count(),
        elapsed_seconds: started.elapsed().as_secs_f64(),
        candidate_order: order,
    })
}

/// Single-queue ML-ANN starting from reference `first`.
///
/// `max_iterations` caps the number of checked references, `first` included.
/// `iterations` in the trace counts the selection steps after `first`.
pub fn search_mlann(
    x: &FeatureVector,
    refs: &ReferenceSet,
    matrix: &DistanceMatrix,
    params: &SearchParams,
    first: usize,
) -> Result<QueryTrace> {
    check_index(refs, matrix, params)?;
    if first >= refs.len() {
        return Err(Error::IndexOutOfRange { index: first, len: refs.len() });
    }
    let started = Instant::now();
    let r_count = refs.len();
    let mut distances = QueryDistances::new(x, refs)?;
    let mut state = QueueState::new(r_count, 1);
    let all: Vec<usize> = (0..r_count).collect();

    let d = distances.distance(first)?;
    state.push(0, first, d, matrix);
    let mut order = vec![CandidateStep { iteration: 0, cluster: 0, reference: first, distance: d, score: None }];
    if accept(d, params) {
        return Ok(finish(&state, refs, &distances, Termination::Threshold, 0, order, started));
    }
    let mut step = 0;
    while state.considered().len() < params.max_iterations.min(r_count) {
        let Some(&(mu, mu_score)) = best_candidates(&state, &all, 1, params).first() else {
            break;
        };
        step += 1;
        let d = distances.distance(mu)?;
        state.push(0, mu, d, matrix);
        order.push(CandidateStep { iteration: step, cluster: 0, reference: mu, distance: d, score: Some(mu_score) });
        if accept(d, params) {
            return Ok(finish(&state, refs, &distances, Termination::Threshold, step, order, started));
        }
    }
    Ok(finish(&state, refs, &distances, Termination::Budget, step, order, started))
}

/// Cluster-weighted multi-queue search.
///
/// Queues start with the cluster medoids, all of which are checked before the
/// threshold test. Each sweep then recomputes the cluster weights, gives every
/// cluster its share of picks (see [`allocate_picks`]), ranks each cluster's
/// unchecked members by [`score`] against the evidence gathered before the
/// sweep, and checks the picks cluster by cluster, stopping at the first
/// accepted one.
pub fn search_dmlann(
    x: &FeatureVector,
    refs: &ReferenceSet,
    matrix: &DistanceMatrix,
    model: &ClusterModel,
    params: &SearchParams,
) -> Result<QueryTrace> {
    check_index(refs, matrix, params)?;
    if model.len() != refs.len() {
        return Err(Error::Inconsistent(format!(
            "cluster model covers {} references but there are {}",
            model.len(),
            refs.len()
        )));
    }
    let started = Instant::now();
    let r_count = refs.len();
    let k = model.k();
    let mut distances = QueryDistances::new(x, refs)?;
    let mut state = QueueState::new(r_count, k);
    let mut order = Vec::new();

    for c in 0..k {
        let m = model.medoid(c);
        let d = distances.distance(m)?;
        state.push(c, m, d, matrix);
        order.push(CandidateStep { iteration: 0, cluster: c, reference: m, distance: d, score: None });
    }
    if order.iter().any(|s| accept(s.distance, params)) {
        return Ok(finish(&state, refs, &distances, Termination::Threshold, 0, order, started));
    }
    state.update_weights(r_count);

    let mut sweep = 0;
    loop {
        let checked = state.considered().len();
        let budget_left = match params.budget_unit {
            BudgetUnit::Sweeps => params.max_iterations.saturating_sub(sweep),
            BudgetUnit::Candidates => params.max_iterations.saturating_sub(checked),
        };
        if budget_left == 0 || checked == r_count {
            break;
        }
        sweep += 1;
        let remaining: Vec<usize> = (0..k).map(|c| model.members(c).len() - state.queues()[c].len()).collect();
        let mut alloc = allocate_picks(state.weights(), &remaining);
        if params.budget_unit == BudgetUnit::Candidates {
            let mut left = budget_left;
            for a in alloc.iter_mut() {
                *a = (*a).min(left);
                left -= *a;
            }
        }

        let pick = |c: usize| best_candidates(&state, model.members(c), alloc[c], params);
        let picks: Vec<Vec<(usize, f64)>> = if params.parallel && k > 1 {
            (0..k).into_par_iter().map(pick).collect()
        } else {
            (0..k).map(pick).collect()
        };

        for (c, cluster_picks) in picks.into_iter().enumerate() {
            for (mu, mu_score) in cluster_picks {
                let d = distances.distance(mu)?;
                state.push(c, mu, d, matrix);
                order.push(CandidateStep {
                    iteration: sweep,
                    cluster: c,
                    reference: mu,
                    distance: d,
                    score: Some(mu_score),
                });
                if accept(d, params) {
                    return Ok(finish(&state, refs, &distances, Termination::Threshold, sweep, order, started));
                }
            }
        }
        state.update_weights(r_count);
    }
    Ok(finish(&state, refs, &distances, Termination::Budget, sweep, order, started))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accept_is_strict() {
        let p = SearchParams::new(0.085, 10).unwrap();
        assert!(accept(0.0, &p));
        assert!(!accept(0.085, &p));
        assert!(accept(0.084, &p));
    }

    #[test]
    fn params_validation() {
        assert!(SearchParams::new(-0.1, 1).is_err());
        assert!(SearchParams::new(f64::NAN, 1).is_err());
        assert!(SearchParams::new(0.1, 0).is_err());
        assert!(SearchParams::new(0.1, 1).unwrap().with_priors(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn phi_values() {
        assert_eq!(phi(0.3, 0.3), 0.0);
        assert!((phi(0.4, 0.1) - 0.9).abs() < 1e-15);
        assert_eq!(phi(0.5, 1e-15), PHI_SENTINEL);
        assert_eq!(phi(0.0, 0.0), 0.0);
        assert_eq!(phi(1e-13, 0.0), 0.0);
    }

    #[test]
    fn weights_hand_computed() {
        assert_eq!(cluster_weights(&[0.2, 0.2, 0.2], 10), vec![1, 1, 1]);
        assert_eq!(cluster_weights(&[0.4, 0.15], 10), vec![1, 3]);
        assert_eq!(cluster_weights(&[0.3, 0.3, 0.1], 10), vec![1, 1, 3]);
        assert_eq!(cluster_weights(&[0.5, 0.0], 7), vec![1, 7]);
        assert_eq!(cluster_weights(&[0.0, 0.0], 7), vec![1, 1]);
        assert_eq!(cluster_weights(&[1.0, 0.01], 4), vec![1, 4]);
    }

    #[test]
    fn allocation_redistributes_surplus() {
        assert_eq!(allocate_picks(&[1, 3], &[5, 5]), vec![1, 3]);
        // cluster 1 is used up: its 3 picks go to cluster 0
        assert_eq!(allocate_picks(&[1, 3], &[5, 0]), vec![4, 0]);
        // surplus 4 split 1:3 between clusters 0 and 2
        assert_eq!(allocate_picks(&[1, 4, 3], &[10, 0, 10]), vec![2, 0, 6]);
        // capped by what remains overall
        assert_eq!(allocate_picks(&[2, 2], &[1, 1]), vec![1, 1]);
        // largest remainder: surplus 1 shared by equal weights goes to the lower index
        assert_eq!(allocate_picks(&[1, 1, 1], &[0, 3, 3]), vec![0, 2, 1]);
    }

    #[test]
    fn conditional_density_peak() {
        let g = Geometry { width: 10, height: 10, bins: 9 };
        let rho_nu = 0.05;
        let mode = rho_nu + 8.0 / 100.0;
        let peak = conditional_density(mode, rho_nu, g).unwrap();
        let scale = 100.0 / (std::f64::consts::TAU * (4.0 * 100.0 * rho_nu + 16.0)).sqrt();
        assert!((peak - scale).abs() < 1e-12);
        let mut last = peak;
        for step in 1..20 {
            let v = conditional_density(mode + step as f64 * 0.01, rho_nu, g).unwrap();
            assert!(v < last);
            last = v;
        }
        assert!(conditional_density(f64::NAN, 0.1, g).is_err());
        assert!(conditional_density(0.1, 0.1, Geometry { width: 10, height: 10, bins: 1 }).is_err());
    }

    #[test]
    fn conditional_density_scratch_value() {
        // values from an independent scalar evaluation (Python, math module)
        let g = Geometry { width: 10, height: 10, bins: 9 };
        let v = conditional_density(0.13, 0.05, g).unwrap();
        assert!((v - 6.649038006690545).abs() < 1e-9);
        let v = conditional_density(0.23, 0.05, g).unwrap();
        assert!((v - 1.6579523132124783).abs() < 1e-9);
    }
}
