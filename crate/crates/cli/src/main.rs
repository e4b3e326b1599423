use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dmlann_core::bench::{
    min_cost_for_accuracy, run_bench, split_dataset, write_bench_csv, write_min_cost_csv, write_traces_jsonl,
    AlgorithmKind, AlgorithmSpec, BenchConfig, BenchIndex, QuerySelection,
};
use dmlann_core::formats::{read_features, write_features, IndexBundle, IndexSpec, SplitInfo};
use dmlann_core::synth::{generate_synthetic, generate_synthetic_queries, SyntheticSpec};
use dmlann_core::{
    extract_directory, extract_hog, kmeans, load_image, search_bruteforce, search_dmlann, search_mlann, BudgetUnit,
    FeatureVector, HogParams, QueryTrace, SearchParams,
};
use serde::Serialize;

/// Histogram nearest-neighbour recognition with cluster-distributed
/// maximum-likelihood search.
#[derive(Parser)]
#[command(name = "dmlann", version)]
struct Cli {
    /// Worker threads for extraction, indexing and benchmark counting runs
    /// (0 = all cores). Timing runs are always serial.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic feature file.
    Synth(SynthArgs),
    /// Extract HOG features from a directory with one subdirectory per class.
    Extract(ExtractArgs),
    /// Build the distance matrix and cluster models from a feature file.
    Index(IndexArgs),
    /// Recognize a single image or feature row.
    Query(QueryArgs),
    /// Run a threshold / budget sweep and write the result tables.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    /// TOML or JSON file with SyntheticSpec fields; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    intra_spread: Option<f64>,
    #[arg(long)]
    inter_spread: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write this many fresh query vectors to `--queries-output`.
    #[arg(long, requires = "queries_output")]
    queries: Option<usize>,
    #[arg(long)]
    queries_output: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    query_seed: u64,
}

#[derive(Args)]
struct HogArgs {
    #[arg(long, default_value_t = 8)]
    cell_size: usize,
    #[arg(long, default_value_t = 2)]
    block_size: usize,
    #[arg(long, default_value_t = 9)]
    bins: usize,
    /// Use 0-360 degree orientations instead of 0-180.
    #[arg(long)]
    signed: bool,
}

impl HogArgs {
    fn params(&self) -> HogParams {
        HogParams {
            cell_size: self.cell_size,
            block_size: self.block_size,
            bins: self.bins,
            signed_gradients: self.signed,
        }
    }
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    hog: HogArgs,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    features: PathBuf,
    /// Cluster counts, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    k: Vec<usize>,
    /// k-means seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Hold out this many images per class as benchmark queries.
    #[arg(long, conflicts_with = "holdout_total")]
    holdout_per_class: Option<usize>,
    /// Hold out this many images in total, drawn uniformly across classes.
    #[arg(long)]
    holdout_total: Option<usize>,
    #[arg(long, default_value_t = 7)]
    split_seed: u64,
    /// Keep held-out queries in the reference set too.
    #[arg(long)]
    resubstitution: bool,
    /// Record the HOG flags below in the manifest so `query --image` can
    /// extract matching features.
    #[arg(long)]
    record_hog: bool,
    #[command(flatten)]
    hog_params: HogArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Brute,
    Mlann,
    Dmlann,
}

#[derive(Clone, Copy, ValueEnum)]
enum Unit {
    Sweeps,
    Candidates,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    /// Image file; its features use the HOG parameters recorded in the index.
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    image: Option<PathBuf>,
    /// Feature file holding the query vector (see `--row`).
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    row: usize,
    #[arg(long, value_enum, default_value = "dmlann")]
    algo: Algo,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0.085)]
    rho0: f64,
    #[arg(long, default_value_t = 32)]
    max_iter: usize,
    #[arg(long, value_enum, default_value = "sweeps")]
    budget_unit: Unit,
    /// First reference for ML-ANN (default: the medoid of the whole set).
    #[arg(long)]
    first: Option<usize>,
    /// Write the full query trace as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    index: PathBuf,
    /// TOML or JSON file with BenchConfig fields; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Query feature file (default: the queries stored in the index).
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    max_iter: Option<Vec<usize>>,
    /// D-ML-ANN cluster counts to compare (brute force and ML-ANN always run).
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long)]
    query_count: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global().context("thread pool")?;
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Extract(a) => extract(a),
        Command::Index(a) => index(a),
        Command::Query(a) => query(a),
        Command::Bench(a) => bench(a, cli.threads),
    }
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Writes through a sibling temporary file so a failed run leaves no partial output.
fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let mut w = BufWriter::new(File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?);
    let written = write(&mut w).and_then(|_| w.flush().map_err(Into::into));
    drop(w);
    if let Err(e) = written {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

fn read_feature_file(path: &Path) -> Result<Vec<dmlann_core::LabeledVector>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_features(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec: SyntheticSpec = match &a.config {
        Some(p) => read_config(p)?,
        None => SyntheticSpec::default(),
    };
    spec.class_count = a.classes.unwrap_or(spec.class_count);
    spec.refs_per_class = a.per_class.unwrap_or(spec.refs_per_class);
    spec.dimension = a.dim.unwrap_or(spec.dimension);
    spec.intra_class_spread = a.intra_spread.unwrap_or(spec.intra_class_spread);
    spec.inter_class_spread = a.inter_spread.unwrap_or(spec.inter_class_spread);
    spec.seed = a.seed.unwrap_or(spec.seed);
    spec.validate()?;
    let records = generate_synthetic(&spec);
    write_atomic(&a.output, |w| Ok(write_features(w, &records)?))?;
    println!(
        "wrote {} vectors ({} classes, dim {}, seed {}) to {}",
        records.len(),
        spec.class_count,
        spec.dimension,
        spec.seed,
        a.output.display()
    );
    if let (Some(n), Some(path)) = (a.queries, &a.queries_output) {
        let queries = generate_synthetic_queries(&spec, n, a.query_seed);
        write_atomic(path, |w| Ok(write_features(w, &queries)?))?;
        println!("wrote {n} queries (seed {}) to {}", a.query_seed, path.display());
    }
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let params = a.hog.params();
    let records = extract_directory(&a.input, &params).with_context(|| format!("extracting {}", a.input.display()))?;
    write_atomic(&a.output, |w| Ok(write_features(w, &records)?))?;
    let classes: std::collections::BTreeSet<&str> = records.iter().map(|r| r.label.as_str()).collect();
    println!(
        "wrote {} records ({} classes, dim {}) to {}",
        records.len(),
        classes.len(),
        records[0].vector.len(),
        a.output.display()
    );
    Ok(())
}

fn index(a: IndexArgs) -> Result<()> {
    let records = read_feature_file(&a.features)?;
    let selection = match (a.holdout_per_class, a.holdout_total) {
        (Some(n), _) => Some(QuerySelection::PerClass(n)),
        (None, Some(n)) => Some(QuerySelection::Total(n)),
        _ => None,
    };
    let (refs, queries, split) = match selection {
        Some(sel) => {
            let (refs, queries) = split_dataset(&records, sel, a.split_seed, a.resubstitution)?;
            let info = SplitInfo { seed: a.split_seed, query_count: queries.len(), resubstitution: a.resubstitution };
            (refs, Some(queries), Some(info))
        }
        None => (records, None, None),
    };
    let spec = IndexSpec {
        k_list: a.k.clone(),
        cluster_seed: a.seed,
        hog: a.record_hog.then(|| a.hog_params.params()),
        split,
    };
    let bundle = IndexBundle::create(&a.output, refs, queries, &spec)?;
    let m = &bundle.manifest;
    println!(
        "indexed R={} references ({} classes, {}) with k={:?}, seed {}{}",
        m.reference_count,
        m.class_count,
        m.geometry,
        m.k_list,
        m.cluster_seed,
        m.split
            .as_ref()
            .map_or(String::new(), |s| format!("; {} held-out queries, split seed {}", s.query_count, s.seed)),
    );
    Ok(())
}

fn load_index(dir: &Path) -> Result<IndexBundle> {
    IndexBundle::load(dir).with_context(|| format!("loading index {}", dir.display()))
}

fn query_vector(a: &QueryArgs, bundle: &IndexBundle) -> Result<FeatureVector> {
    if let Some(image) = &a.image {
        let Some(hog) = bundle.manifest.hog else {
            bail!("the index records no HOG parameters; query it with --features");
        };
        let img = load_image(image).with_context(|| format!("loading {}", image.display()))?;
        return Ok(extract_hog(&img, &hog)?);
    }
    let path = a.features.as_ref().expect("clap requires --image or --features");
    let mut records = read_feature_file(path)?;
    if a.row >= records.len() {
        bail!("{} has {} rows, --row {} is out of range", path.display(), records.len(), a.row);
    }
    Ok(records.swap_remove(a.row).vector)
}

fn global_medoid(bundle: &IndexBundle) -> Result<usize> {
    match bundle.models.get(&1) {
        Some(m) => Ok(m.medoid(0)),
        None => Ok(kmeans(&bundle.refs, 1, bundle.manifest.cluster_seed)?.medoid(0)),
    }
}

fn query(a: QueryArgs) -> Result<()> {
    let bundle = load_index(&a.index)?;
    let x = query_vector(&a, &bundle)?;
    bundle.refs.check_query(&x).context("query does not match the index")?;
    let unit = match a.budget_unit {
        Unit::Sweeps => BudgetUnit::Sweeps,
        Unit::Candidates => BudgetUnit::Candidates,
    };
    let params = SearchParams::new(a.rho0, a.max_iter)?.with_budget_unit(unit);
    let trace: QueryTrace = match a.algo {
        Algo::Brute => search_bruteforce(&x, &bundle.refs)?,
        Algo::Mlann => {
            let first = match a.first {
                Some(f) => f,
                None => global_medoid(&bundle)?,
            };
            search_mlann(&x, &bundle.refs, &bundle.matrix, &params, first)?
        }
        Algo::Dmlann => {
            search_dmlann(&x, &bundle.refs, &bundle.matrix, bundle.model(a.k)?, &params.with_parallel(true))?
        }
    };
    println!("label: {}", trace.result_label);
    println!("reference: {} ({})", trace.result_reference, bundle.records[trace.result_reference].path);
    println!("distance: {}", trace.result_distance);
    println!("terminated_by: {}", serde_json::to_value(trace.terminated_by)?.as_str().unwrap_or_default());
    println!("iterations: {}", trace.iterations);
    println!("distance_computations: {}", trace.distance_computations);
    println!("time_s: {:.6e}", trace.elapsed_seconds);
    if let Some(path) = &a.trace {
        write_atomic(path, |w| {
            serde_json::to_writer_pretty(&mut *w, &trace)?;
            writeln!(w)?;
            Ok(())
        })?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RunInfo<'a> {
    index: String,
    cluster_seed: u64,
    split: Option<&'a SplitInfo>,
    queries: String,
    threads: usize,
    reference_count: usize,
    config: &'a BenchConfig,
}

fn bench(a: BenchArgs, threads: usize) -> Result<()> {
    let bundle = load_index(&a.index)?;
    let mut config: BenchConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => BenchConfig::default(),
    };
    if let Some(t) = a.thresholds {
        config.thresholds = t;
    }
    if let Some(m) = a.max_iter {
        config.max_iteration_sweep = m;
    }
    if let Some(ks) = a.k {
        config.algorithms.retain(|s| s.name != AlgorithmKind::Dmlann);
        config.algorithms.extend(ks.into_iter().map(AlgorithmSpec::dmlann));
    }
    if let Some(r) = a.repetitions {
        config.repetitions = r;
    }
    let (queries, source) = match &a.queries {
        Some(p) => (read_feature_file(p)?, p.display().to_string()),
        None => match &bundle.queries {
            Some(q) => (q.clone(), "index".to_string()),
            None => bail!("the index holds no queries; pass --queries or rebuild it with --holdout-per-class"),
        },
    };
    match a.query_count {
        Some(n) => config.query_count = n,
        None if a.config.is_none() => config.query_count = config.query_count.min(queries.len()),
        None => {}
    }
    if let Some(split) = &bundle.manifest.split {
        if a.queries.is_none() {
            config.split_seed = split.seed;
            config.resubstitution = split.resubstitution;
        }
    }
    config.validate()?;

    let index = BenchIndex { refs: &bundle.refs, matrix: &bundle.matrix, models: &bundle.models };
    let out = run_bench(&config, &index, &queries, threads)?;
    let min_cost = min_cost_for_accuracy(&out.rows)?;

    fs::create_dir_all(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    let info = RunInfo {
        index: a.index.display().to_string(),
        cluster_seed: bundle.manifest.cluster_seed,
        split: bundle.manifest.split.as_ref(),
        queries: source,
        threads,
        reference_count: bundle.refs.len(),
        config: &config,
    };
    write_atomic(&a.output.join("traces.jsonl"), |w| Ok(write_traces_jsonl(w, &out.traces)?))?;
    write_atomic(&a.output.join("min_cost.csv"), |w| Ok(write_min_cost_csv(w, &min_cost)?))?;
    write_atomic(&a.output.join("run.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &info)?;
        writeln!(w)?;
        Ok(())
    })?;
    write_atomic(&a.output.join("bench.csv"), |w| Ok(write_bench_csv(w, &out.rows)?))?;
    println!(
        "{} rows over {} queries (split seed {}, cluster seed {}) written to {}",
        out.rows.len(),
        config.query_count,
        config.split_seed,
        bundle.manifest.cluster_seed,
        a.output.display()
    );
    Ok(())
}
