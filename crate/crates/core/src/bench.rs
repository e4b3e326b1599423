//! Benchmark harness: accuracy, average distance computations and average
//! recognition time as functions of the threshold and the iteration budget,
//! for brute force, ML-ANN and D-ML-ANN with several cluster counts.
//!
//! Every row is an aggregate of persisted [`TraceRecord`]s, so the tables can
//! be recomputed from `traces.jsonl` alone (see [`aggregate`]).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::distance::{DistanceMatrix, ReferenceSet};
use crate::error::{Error, Result};
use crate::feature::LabeledVector;
use crate::search::{search_bruteforce, search_dmlann, search_mlann, BudgetUnit, QueryTrace, SearchParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmKind {
    #[serde(alias = "nn", alias = "NN", alias = "bruteforce")]
    Brute,
    #[serde(alias = "ml-ann", alias = "ML-ANN")]
    Mlann,
    #[serde(alias = "d-ml-ann", alias = "D-ML-ANN")]
    Dmlann,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub name: AlgorithmKind,
    #[serde(default = "one")]
    pub k: usize,
}

fn one() -> usize {
    1
}

impl AlgorithmSpec {
    pub fn brute() -> Self {
        Self { name: AlgorithmKind::Brute, k: 1 }
    }

    pub fn mlann() -> Self {
        Self { name: AlgorithmKind::Mlann, k: 1 }
    }

    pub fn dmlann(k: usize) -> Self {
        Self { name: AlgorithmKind::Dmlann, k }
    }
}

/// One algorithm/budget-interpretation pairing that produces rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub kind: AlgorithmKind,
    pub k: usize,
    pub unit: BudgetUnit,
}

impl Variant {
    /// Display name used in the output tables.
    pub fn name(&self) -> String {
        match (self.kind, self.unit) {
            (AlgorithmKind::Brute, _) => "NN".into(),
            (AlgorithmKind::Mlann, _) => "ML-ANN".into(),
            (AlgorithmKind::Dmlann, BudgetUnit::Sweeps) => format!("D-ML-ANN-Cl{}", self.k),
            (AlgorithmKind::Dmlann, BudgetUnit::Candidates) => format!("D-ML-ANN-Cl{}-cand", self.k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub algorithms: Vec<AlgorithmSpec>,
    pub thresholds: Vec<f64>,
    pub max_iteration_sweep: Vec<usize>,
    pub query_count: usize,
    /// Seed of the query/reference split; echoed into every trace record.
    pub split_seed: u64,
    /// Serial timing runs per query; the minimum is kept. 0 keeps the
    /// timing of the (possibly parallel) counting run.
    pub repetitions: usize,
    /// Also run every D-ML-ANN variant with the budget counted in checked
    /// references instead of sweeps.
    pub report_candidate_budget: bool,
    pub resubstitution: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            algorithms: vec![
                AlgorithmSpec::brute(),
                AlgorithmSpec::mlann(),
                AlgorithmSpec::dmlann(2),
                AlgorithmSpec::dmlann(3),
            ],
            thresholds: vec![0.083, 0.085],
            max_iteration_sweep: vec![1, 2, 4, 8, 16, 32],
            query_count: 50,
            split_seed: 7,
            repetitions: 1,
            report_candidate_budget: true,
            resubstitution: false,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.algorithms.is_empty() {
            return bad("no algorithms".into());
        }
        if let Some(a) = self.algorithms.iter().find(|a| a.k == 0) {
            return bad(format!("{:?} has k = 0", a.name));
        }
        if self.query_count == 0 {
            return bad("query_count must be >= 1".into());
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return bad("thresholds must be a non-empty list of finite values >= 0".into());
        }
        if self.max_iteration_sweep.is_empty()
            || self.max_iteration_sweep[0] == 0
            || self.max_iteration_sweep.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("max_iteration_sweep must be non-empty, positive and strictly increasing".into());
        }
        Ok(())
    }

    pub fn variants(&self) -> Vec<Variant> {
        let mut out = Vec::new();
        for a in &self.algorithms {
            let v = Variant { kind: a.name, k: a.k, unit: BudgetUnit::Sweeps };
            if !out.contains(&v) {
                out.push(v);
            }
        }
        if self.report_candidate_budget {
            for a in self.algorithms.iter().filter(|a| a.name == AlgorithmKind::Dmlann) {
                let v = Variant { kind: a.name, k: a.k, unit: BudgetUnit::Candidates };
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        out
    }

    /// Cluster counts the index must provide.
    pub fn required_k(&self) -> BTreeSet<usize> {
        self.algorithms
            .iter()
            .filter_map(|a| match a.name {
                AlgorithmKind::Brute => None,
                AlgorithmKind::Mlann => Some(1),
                AlgorithmKind::Dmlann => Some(a.k),
            })
            .collect()
    }
}

/// The precomputed artifacts a benchmark runs against.
#[derive(Debug, Clone, Copy)]
pub struct BenchIndex<'a> {
    pub refs: &'a ReferenceSet,
    pub matrix: &'a DistanceMatrix,
    pub models: &'a BTreeMap<usize, ClusterModel>,
}

/// One query run inside one sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub algorithm: String,
    pub k: usize,
    pub rho0: f64,
    pub max_iterations: usize,
    pub budget_unit: BudgetUnit,
    pub split_seed: u64,
    pub query: usize,
    pub query_path: String,
    pub truth: String,
    pub trace: QueryTrace,
}

impl TraceRecord {
    pub fn correct(&self) -> bool {
        self.trace.result_label == self.truth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub algorithm: String,
    pub k: usize,
    pub rho0: f64,
    pub max_iterations: usize,
    pub accuracy: f64,
    pub avg_distance_computations: f64,
    pub avg_recognition_time_seconds: f64,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinCostRow {
    pub algorithm: String,
    pub k: usize,
    pub rho0: f64,
    pub accuracy: f64,
    pub min_avg_distance_computations: f64,
    pub min_avg_recognition_time_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub rows: Vec<BenchRow>,
    pub traces: Vec<TraceRecord>,
}

/// How queries are drawn by [`split_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuerySelection {
    /// The same number of held-out images from every class.
    PerClass(usize),
    /// A total count drawn uniformly without replacement across all images;
    /// draws that would leave a class without references are skipped.
    Total(usize),
}

/// Seeded split into references and labeled queries, both returned in
/// input order. With `resubstitution` the queries also stay in the references.
pub fn split_dataset(
    records: &[LabeledVector],
    selection: QuerySelection,
    seed: u64,
    resubstitution: bool,
) -> Result<(Vec<LabeledVector>, Vec<LabeledVector>)> {
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_class.entry(r.label.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_query = vec![false; records.len()];
    match selection {
        QuerySelection::PerClass(n) => {
            for (label, idx) in &by_class {
                if idx.len() <= n && !resubstitution {
                    return Err(Error::Dataset(format!(
                        "class '{label}' has {} images, needs more than {n}",
                        idx.len()
                    )));
                }
                if idx.len() < n {
                    return Err(Error::Dataset(format!("class '{label}' has fewer than {n} images")));
                }
                let mut shuffled = idx.clone();
                shuffled.shuffle(&mut rng);
                for &i in &shuffled[..n] {
                    is_query[i] = true;
                }
            }
        }
        QuerySelection::Total(n) => {
            let mut left: BTreeMap<&str, usize> = by_class.iter().map(|(l, v)| (*l, v.len())).collect();
            let mut order: Vec<usize> = (0..records.len()).collect();
            order.shuffle(&mut rng);
            let mut taken = 0;
            for i in order {
                if taken == n {
                    break;
                }
                let remaining = left.get_mut(records[i].label.as_str()).unwrap();
                if *remaining > 1 || resubstitution {
                    *remaining -= 1;
                    is_query[i] = true;
                    taken += 1;
                }
            }
            if taken < n {
                return Err(Error::Dataset(format!("cannot hold out {n} queries and keep every class referenced")));
            }
        }
    }
    let queries = records.iter().zip(&is_query).filter(|(_, q)| **q).map(|(r, _)| r.clone()).collect();
    let refs = records.iter().zip(&is_query).filter(|(_, q)| resubstitution || !**q).map(|(r, _)| r.clone()).collect();
    Ok((refs, queries))
}

fn run_query(
    variant: Variant,
    rho0: f64,
    budget: usize,
    query: &LabeledVector,
    index: &BenchIndex<'_>,
) -> Result<QueryTrace> {
    let model =
        |k: usize| index.models.get(&k).ok_or_else(|| Error::Inconsistent(format!("missing cluster model for k={k}")));
    match variant.kind {
        AlgorithmKind::Brute => search_bruteforce(&query.vector, index.refs),
        AlgorithmKind::Mlann => {
            let params = SearchParams::new(rho0, budget)?;
            search_mlann(&query.vector, index.refs, index.matrix, &params, model(1)?.medoid(0))
        }
        AlgorithmKind::Dmlann => {
            let params = SearchParams::new(rho0, budget)?.with_budget_unit(variant.unit);
            search_dmlann(&query.vector, index.refs, index.matrix, model(variant.k)?, &params)
        }
    }
}

/// Runs the full sweep. Counting runs use `threads` workers (0 = all cores);
/// timing runs are serial on the calling thread.
pub fn run_bench(
    config: &BenchConfig,
    index: &BenchIndex<'_>,
    queries: &[LabeledVector],
    threads: usize,
) -> Result<BenchOutput> {
    config.validate()?;
    if queries.len() < config.query_count {
        return Err(Error::InvalidConfig(format!(
            "{} queries requested but only {} available",
            config.query_count,
            queries.len()
        )));
    }
    for k in config.required_k() {
        if !index.models.contains_key(&k) {
            return Err(Error::Inconsistent(format!("missing cluster model for k={k}")));
        }
    }
    if index.matrix.size() != index.refs.len() {
        return Err(Error::Inconsistent("distance matrix does not match the reference set".into()));
    }
    let queries = &queries[..config.query_count];
    for q in queries {
        index.refs.check_query(&q.vector)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;

    let mut traces = Vec::new();
    for variant in config.variants() {
        for &rho0 in &config.thresholds {
            let budgets = match variant.kind {
                AlgorithmKind::Brute => vec![index.refs.len()],
                _ => config.max_iteration_sweep.clone(),
            };
            for budget in budgets {
                let mut cell: Vec<QueryTrace> = pool.install(|| {
                    queries.par_iter().map(|q| run_query(variant, rho0, budget, q, index)).collect::<Result<_>>()
                })?;
                if config.repetitions > 0 {
                    for (trace, q) in cell.iter_mut().zip(queries) {
                        let mut best = f64::INFINITY;
                        for _ in 0..config.repetitions {
                            best = best.min(run_query(variant, rho0, budget, q, index)?.elapsed_seconds);
                        }
                        trace.elapsed_seconds = best;
                    }
                }
                traces.extend(cell.into_iter().zip(queries).enumerate().map(|(i, (trace, q))| TraceRecord {
                    algorithm: variant.name(),
                    k: variant.k,
                    rho0,
                    max_iterations: budget,
                    budget_unit: variant.unit,
                    split_seed: config.split_seed,
                    query: i,
                    query_path: q.path.clone(),
                    truth: q.label.clone(),
                    trace,
                }));
            }
        }
    }
    Ok(BenchOutput { rows: aggregate(&traces), traces })
}

/// Folds trace records into one row per (algorithm, k, rho0, max_iterations)
/// cell, in order of first appearance.
pub fn aggregate(traces: &[TraceRecord]) -> Vec<BenchRow> {
    let mut cells: Vec<(BenchRow, usize, f64, f64)> = Vec::new();
    for t in traces {
        let pos = cells.iter().position(|(row, ..)| {
            row.algorithm == t.algorithm && row.k == t.k && row.rho0 == t.rho0 && row.max_iterations == t.max_iterations
        });
        let pos = pos.unwrap_or_else(|| {
            cells.push((
                BenchRow {
                    algorithm: t.algorithm.clone(),
                    k: t.k,
                    rho0: t.rho0,
                    max_iterations: t.max_iterations,
                    accuracy: 0.0,
                    avg_distance_computations: 0.0,
                    avg_recognition_time_seconds: 0.0,
                    queries: 0,
                },
                0,
                0.0,
                0.0,
            ));
            cells.len() - 1
        });
        let (row, correct, comps, time) = &mut cells[pos];
        row.queries += 1;
        *correct += t.correct() as usize;
        *comps += t.trace.distance_computations as f64;
        *time += t.trace.elapsed_seconds;
    }
    cells
        .into_iter()
        .map(|(mut row, correct, comps, time)| {
            let n = row.queries as f64;
            row.accuracy = correct as f64 / n;
            row.avg_distance_computations = comps / n;
            row.avg_recognition_time_seconds = time / n;
            row
        })
        .collect()
}

type GroupRows<'a> = ((String, usize, u64), Vec<&'a BenchRow>);

/// For every (algorithm, k, rho0) group and every accuracy level reached in
/// it, the smallest average distance-computation count and the smallest
/// average time over the rows at that level. Levels are listed ascending.
pub fn min_cost_for_accuracy(rows: &[BenchRow]) -> Result<Vec<MinCostRow>> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig("no bench rows".into()));
    }
    let mut groups: Vec<GroupRows<'_>> = Vec::new();
    for row in rows {
        let key = (row.algorithm.clone(), row.k, row.rho0.to_bits());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(row),
            None => groups.push((key, vec![row])),
        }
    }
    let mut out = Vec::new();
    for ((algorithm, k, _), group) in groups {
        let mut levels: Vec<f64> = group.iter().map(|r| r.accuracy).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        for accuracy in levels {
            let at_level = group.iter().filter(|r| r.accuracy == accuracy);
            let (comps, time) = at_level.fold((f64::INFINITY, f64::INFINITY), |(c, t), r| {
                (c.min(r.avg_distance_computations), t.min(r.avg_recognition_time_seconds))
            });
            out.push(MinCostRow {
                algorithm: algorithm.clone(),
                k,
                rho0: group[0].rho0,
                accuracy,
                min_avg_distance_computations: comps,
                min_avg_recognition_time_seconds: time,
            });
        }
    }
    Ok(out)
}

pub const BENCH_HEADER: &str = "algorithm,k,rho0,max_iterations,accuracy,avg_dist_comp,avg_time_s";
pub const MIN_COST_HEADER: &str = "algorithm,k,rho0,accuracy,min_avg_dist_comp,min_avg_time_s";

pub fn write_bench_csv<W: Write>(mut w: W, rows: &[BenchRow]) -> Result<()> {
    let io = |e| Error::io("bench.csv", e);
    writeln!(w, "{BENCH_HEADER}").map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.algorithm,
            r.k,
            r.rho0,
            r.max_iterations,
            r.accuracy,
            r.avg_distance_computations,
            r.avg_recognition_time_seconds
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_min_cost_csv<W: Write>(mut w: W, rows: &[MinCostRow]) -> Result<()> {
    let io = |e| Error::io("min_cost.csv", e);
    writeln!(w, "{MIN_COST_HEADER}").map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.algorithm, r.k, r.rho0, r.accuracy, r.min_avg_distance_computations, r.min_avg_recognition_time_seconds
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_traces_jsonl<W: Write>(mut w: W, traces: &[TraceRecord]) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(|e| Error::io("traces.jsonl", e))?;
    }
    w.flush().map_err(|e| Error::io("traces.jsonl", e))
}

pub fn read_traces_jsonl<R: BufRead>(r: R) -> Result<Vec<TraceRecord>> {
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l.map_err(|e| Error::io("traces.jsonl", e))?)?))
        .collect()
}

/// The bench table without its timing column, for cross-run comparisons.
pub fn strip_timing_column(csv: &str) -> String {
    csv.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head)).collect::<Vec<_>>().join("\n")
}

/// The `q`-quantile (nearest rank) of the distances between references that
/// share a label. `None` when no class has two references.
pub fn intra_class_distance_quantile(refs: &ReferenceSet, matrix: &DistanceMatrix, q: f64) -> Option<f64> {
    let mut d = Vec::new();
    for i in 0..refs.len() {
        for j in (i + 1)..refs.len() {
            if refs.label(i) == refs.label(j) {
                d.push(matrix.get(i, j));
            }
        }
    }
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    let rank = ((q.clamp(0.0, 1.0) * d.len() as f64).ceil() as usize).clamp(1, d.len());
    Some(d[rank - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::{FeatureVector, Geometry};

    fn rec(label: &str, i: usize) -> LabeledVector {
        let g = Geometry { width: 1, height: 1, bins: 2 };
        let x = (i as f64 + 1.0) / 10.0;
        LabeledVector {
            label: label.into(),
            path: format!("{label}/{i}"),
            vector: FeatureVector::normalized(vec![x, 1.0 - x], g).unwrap(),
        }
    }

    fn row(alg: &str, it: usize, acc: f64, comps: f64, time: f64) -> BenchRow {
        BenchRow {
            algorithm: alg.into(),
            k: 1,
            rho0: 0.085,
            max_iterations: it,
            accuracy: acc,
            avg_distance_computations: comps,
            avg_recognition_time_seconds: time,
            queries: 10,
        }
    }

    #[test]
    fn per_class_split() {
        let records: Vec<_> = (0..3).map(|i| rec("a", i)).chain((0..3).map(|i| rec("b", i))).collect();
        let (refs, queries) = split_dataset(&records, QuerySelection::PerClass(1), 5, false).unwrap();
        assert_eq!((refs.len(), queries.len()), (4, 2));
        assert_eq!(queries.iter().filter(|q| q.label == "a").count(), 1);
        assert!(queries.iter().all(|q| !refs.contains(q)));
        let again = split_dataset(&records, QuerySelection::PerClass(1), 5, false).unwrap();
        assert_eq!(again, (refs, queries));
        assert!(split_dataset(&records, QuerySelection::PerClass(3), 5, false).is_err());
        let (refs, queries) = split_dataset(&records, QuerySelection::PerClass(1), 5, true).unwrap();
        assert_eq!((refs.len(), queries.len()), (6, 2));
    }

    #[test]
    fn total_split_matches_dataset_scale() {
        let records: Vec<_> = (0..153).flat_map(|c| (0..20).map(move |i| rec(&format!("p{c:03}"), i))).collect();
        let (refs, queries) = split_dataset(&records, QuerySelection::Total(50), 1, false).unwrap();
        assert_eq!((refs.len(), queries.len()), (3010, 50));
        let tiny: Vec<_> = vec![rec("a", 0), rec("b", 0)];
        assert!(split_dataset(&tiny, QuerySelection::Total(1), 1, false).is_err());
    }

    #[test]
    fn min_cost_rules() {
        let single = min_cost_for_accuracy(&[row("ML-ANN", 1, 0.5, 10.0, 1.0)]).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].min_avg_distance_computations, 10.0);
        assert_eq!(single[0].accuracy, 0.5);
        let two =
            min_cost_for_accuracy(&[row("ML-ANN", 1, 0.5, 100.0, 2.0), row("ML-ANN", 2, 0.5, 80.0, 3.0)]).unwrap();
        assert_eq!(two.len(), 1);
        assert_eq!(two[0].min_avg_distance_computations, 80.0);
        assert_eq!(two[0].min_avg_recognition_time_seconds, 2.0);
        assert!(min_cost_for_accuracy(&[]).is_err());
    }

    #[test]
    fn min_cost_matches_direct_enumeration() {
        let rows: Vec<BenchRow> =
            [(1, 0.2, 5.0), (2, 0.4, 9.0), (4, 0.4, 12.0), (8, 0.6, 20.0), (16, 0.6, 25.0), (32, 0.6, 31.0)]
                .iter()
                .map(|&(it, acc, c)| row("D-ML-ANN-Cl3", it, acc, c, c / 1000.0))
                .collect();
        let table = min_cost_for_accuracy(&rows).unwrap();
        for entry in &table {
            let direct = rows
                .iter()
                .filter(|r| r.accuracy == entry.accuracy)
                .map(|r| r.avg_distance_computations)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(entry.min_avg_distance_computations, direct);
        }
        let levels: Vec<f64> = table.iter().map(|r| r.accuracy).collect();
        assert_eq!(levels, vec![0.2, 0.4, 0.6]);
        assert_eq!(table.iter().map(|r| r.min_avg_distance_computations).collect::<Vec<_>>(), vec![5.0, 9.0, 20.0]);
    }

    #[test]
    fn config_validation() {
        assert!(BenchConfig::default().validate().is_ok());
        let bad = BenchConfig { max_iteration_sweep: vec![2, 2], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = BenchConfig { query_count: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = BenchConfig { algorithms: vec![AlgorithmSpec::dmlann(0)], ..Default::default() };
        assert!(bad.validate().is_err());
        let names: Vec<String> = BenchConfig::default().variants().iter().map(Variant::name).collect();
        assert_eq!(names, ["NN", "ML-ANN", "D-ML-ANN-Cl2", "D-ML-ANN-Cl3", "D-ML-ANN-Cl2-cand", "D-ML-ANN-Cl3-cand"]);
    }

    #[test]
    fn strip_timing() {
        assert_eq!(strip_timing_column("a,b,c\n1,2,3\n"), "a,b\n1,2");
    }
}
