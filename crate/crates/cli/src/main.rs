use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;
use veil_core::analysis::{
    compute_metrics, ffd_attack_demo, fresh_setup_buckets, leakage, vsr_permutation_test, AnalysisReport,
    AttackSection, VsrSection,
};
use veil_core::bench::{run_plan, BenchPlan, DatasetSource};
use veil_core::datagen::{generate, SkewSpec};
use veil_core::engine::{delete, insert, query, DeleteOutcome, InsertOutcome};
use veil_core::{
    exec, pipeline, ClientState, Dataset, Execution, HashAlgorithm, Metrics, OutsourcedBundle, Params, Ratio,
};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error(transparent)]
    Core(#[from] veil_core::Error),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use veil_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Internal(_) => 1,
            CliError::Core(e) if e.is_integrity() => 3,
            CliError::Core(
                E::Io(_)
                | E::EmptyDataset
                | E::InvalidParams(_)
                | E::InvalidSpec(_)
                | E::Parse { .. }
                | E::UnknownHash(_)
                | E::FanoutExceedsBuckets { .. }
                | E::ParityError { .. }
                | E::DegreeTooLarge { .. }
                | E::OverlapInfeasible { .. }
                | E::RecordTooWide { .. }
                | E::NotFound,
            ) => 2,
            CliError::Core(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_ctx(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

/// Volume-hiding encrypted key-value store.
#[derive(Debug, Parser)]
#[command(name = "veil", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a skewed synthetic dataset as `key<TAB>value` lines.
    GenData(GenDataArgs),
    /// Bucketize, pad and encrypt a dataset into a bundle and client state.
    Setup(SetupArgs),
    /// Print every record of a key.
    Query(QueryArgs),
    /// Add a record, reusing a fake slot when one is free.
    Insert(UpdateArgs),
    /// Remove one record, turning its slot into a fake.
    Delete(UpdateArgs),
    /// Run a parameter sweep and write one CSV row per run.
    Bench(BenchArgs),
    /// Report metrics, leakage, the bin-packing attack and the VSR test.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 5000)]
    keys: usize,
    #[arg(long, default_value_t = 100_000)]
    records: usize,
    /// Zipf exponent.
    #[arg(long, default_value_t = 0.4)]
    z: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    value_width: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ParamArgs {
    #[arg(long, default_value = "1")]
    qa: Ratio,
    #[arg(long, default_value = "1.2")]
    sa: Ratio,
    #[arg(long, default_value_t = 6)]
    fanout: usize,
    /// Overlap graph degree; 0 pads buckets independently.
    #[arg(long, default_value_t = 0)]
    degree: usize,
    #[arg(long)]
    desired_overlap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "sha256")]
    hash: HashAlgorithm,
    /// Plaintext bytes per encrypted record.
    #[arg(long, default_value_t = Params::default().record_width)]
    record_width: usize,
}

impl ParamArgs {
    fn params(&self) -> Params {
        Params {
            qa: self.qa,
            sa: self.sa,
            fanout: self.fanout,
            degree: self.degree,
            desired_overlap: self.desired_overlap,
            seed: self.seed,
            hash: self.hash,
            record_width: self.record_width,
        }
    }
}

#[derive(Debug, Args)]
struct SetupArgs {
    /// Dataset as `key<TAB>value` lines.
    data: PathBuf,
    /// Receives `bundle/` (server side) and `client/` (kept private).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Debug, Args)]
struct StateArgs {
    #[arg(long)]
    client: PathBuf,
    #[arg(long)]
    bundle: PathBuf,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[command(flatten)]
    state: StateArgs,
    key: String,
}

#[derive(Debug, Args)]
struct UpdateArgs {
    #[command(flatten)]
    state: StateArgs,
    key: String,
    value: String,
    /// Seed for re-encryption randomness; fresh entropy when absent.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Built-in sweep: fanout, storage, query, degree, overlap or skew.
    #[arg(long, conflicts_with = "plan", required_unless_present = "plan")]
    preset: Option<String>,
    /// Plan as JSON.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Override the number of seeds per cell (0..N).
    #[arg(long)]
    seeds: Option<u64>,
    /// Override the generated dataset size.
    #[arg(long)]
    records: Option<usize>,
    #[arg(long)]
    keys: Option<usize>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// The plaintext dataset the bundle was built from.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    state: StateArgs,
    /// Sampled queries for the leakage profile and attack.
    #[arg(long, default_value_t = 100)]
    queries: usize,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 999)]
    permutations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let f = File::open(path).map_err(io_ctx(format!("cannot open {}", path.display())))?;
    Ok(Dataset::read_tsv(BufReader::new(f))?)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(io_ctx(format!("cannot create {}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn load_state(s: &StateArgs) -> Result<(ClientState, OutsourcedBundle)> {
    for p in [&s.client, &s.bundle] {
        if !p.is_dir() {
            return Err(CliError::Usage(format!("{} is not a directory", p.display())));
        }
    }
    Ok((ClientState::load(&s.client)?, OutsourcedBundle::load(&s.bundle)?))
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let ds = generate(&SkewSpec {
        num_keys: a.keys,
        num_records: a.records,
        z: a.z,
        seed: a.seed,
        value_width: a.value_width,
    })?;
    let mut w = output(a.out.as_deref())?;
    ds.write_tsv(&mut w)?;
    w.flush().map_err(io_ctx("write failed"))?;
    Ok(())
}

#[derive(Serialize)]
struct SetupSummary {
    records: usize,
    keys: usize,
    l_max: usize,
    bucket_size: usize,
    bucket_count: usize,
    overlap: usize,
    stash: usize,
    metrics: Metrics,
}

fn setup(a: SetupArgs) -> Result<()> {
    let ds = read_dataset(&a.data)?;
    let s = pipeline::setup(&ds, &a.params.params())?;
    s.bundle.store(&a.out.join("bundle"))?;
    s.client.store(&a.out.join("client"))?;
    print_json(&SetupSummary {
        records: ds.len(),
        keys: ds.key_count(),
        l_max: ds.l_max(),
        bucket_size: s.client.bucket_size,
        bucket_count: s.bundle.bucket_count(),
        overlap: s.padded.overlap_size(),
        stash: s.client.stash.len(),
        metrics: compute_metrics(&ds, &s.bundle, &s.client),
    })
}

fn run_query(a: QueryArgs) -> Result<()> {
    let (client, bundle) = load_state(&a.state)?;
    let r = query(&client, &bundle, a.key.as_bytes())?;
    let mut out = BufWriter::new(io::stdout().lock());
    for rec in r.records {
        out.write_all(&rec.key)
            .and_then(|_| out.write_all(b"\t"))
            .and_then(|_| out.write_all(&rec.value))
            .and_then(|_| out.write_all(b"\n"))
            .map_err(io_ctx("write failed"))?;
    }
    out.flush().map_err(io_ctx("write failed"))
}

fn update_rng(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    }
}

fn save_state(s: &StateArgs, client: &ClientState, bundle: &OutsourcedBundle) -> Result<()> {
    bundle.store(&s.bundle)?;
    client.store(&s.client)?;
    Ok(())
}

fn run_insert(a: UpdateArgs) -> Result<()> {
    let (mut client, mut bundle) = load_state(&a.state)?;
    let mut rng = update_rng(a.seed);
    let out = insert(&mut client, &mut bundle, a.key.as_bytes(), a.value.as_bytes(), &mut rng)?;
    save_state(&a.state, &client, &bundle)?;
    let v = match out {
        InsertOutcome::Bucket { bucket, rid } => serde_json::json!({"placed": "bucket", "bucket": bucket, "rid": rid}),
        InsertOutcome::Stash => serde_json::json!({"placed": "stash"}),
        InsertOutcome::CapacityWarning { count, capacity } => {
            eprintln!("warning: key holds {count} records, buckets were sized for {capacity}; consider a new setup");
            serde_json::json!({"placed": "stash", "count": count, "capacity": capacity})
        }
    };
    print_json(&v)
}

fn run_delete(a: UpdateArgs) -> Result<()> {
    let (mut client, mut bundle) = load_state(&a.state)?;
    let mut rng = update_rng(a.seed);
    let out = delete(&mut client, &mut bundle, a.key.as_bytes(), a.value.as_bytes(), &mut rng)?;
    save_state(&a.state, &client, &bundle)?;
    print_json(&match out {
        DeleteOutcome::Bucket { bucket, rid } => serde_json::json!({"removed": "bucket", "bucket": bucket, "rid": rid}),
        DeleteOutcome::Stash => serde_json::json!({"removed": "stash"}),
    })
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut plan = match (&a.preset, &a.plan) {
        (Some(name), _) => BenchPlan::preset(name).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown preset `{name}`; one of {}",
                BenchPlan::PRESETS.join(", ")
            ))
        })?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(io_ctx(format!("cannot read {}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad plan {}: {e}", path.display())))?
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    if let Some(n) = a.seeds {
        plan.seeds = (0..n).collect();
    }
    if let DatasetSource::Zipf {
        num_keys, num_records, ..
    } = &mut plan.dataset
    {
        *num_records = a.records.unwrap_or(*num_records);
        *num_keys = a.keys.unwrap_or(*num_keys);
    }
    let report = run_plan(&plan, Execution::default())?;
    let mut w = output(a.out.as_deref())?;
    report.write_csv(&mut w)?;
    w.flush().map_err(io_ctx("write failed"))?;
    if let Some(p) = a.json {
        let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
        fs::write(&p, text).map_err(io_ctx(format!("cannot write {}", p.display())))?;
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let ds = read_dataset(&a.data)?;
    let (client, bundle) = load_state(&a.state)?;
    let metrics = compute_metrics(&ds, &bundle, &client);

    let keys: Vec<&Vec<u8>> = ds.counts().keys().collect();
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed);
    let queries: Vec<&[u8]> = (0..a.queries)
        .map(|_| keys[rng.gen_range(0..keys.len())].as_slice())
        .collect();
    let leak = leakage(&ds, &queries);
    let attack = ffd_attack_demo(&ds, &queries);

    // largest against smallest key: the pair volume leakage separates best
    let (big, small) = {
        let mut by_count: Vec<(&Vec<u8>, &usize)> = ds.counts().iter().collect();
        by_count.sort_by(|x, y| y.1.cmp(x.1));
        (by_count[0].0.clone(), by_count[by_count.len() - 1].0.clone())
    };
    let (n, fanout, hash) = (client.n, client.fanout, client.hash);
    let vsr = vsr_permutation_test(
        |seed, key| fresh_setup_buckets(seed, key, n, fanout, hash),
        &big,
        &small,
        a.trials,
        a.permutations,
        a.seed,
        Execution::default(),
    );
    print_json(&AnalysisReport {
        metrics,
        leakage: leak,
        attack: AttackSection {
            per_query_candidates: attack.per_query_candidates,
            accuracy: attack.accuracy,
        },
        vsr: VsrSection {
            p_value: vsr.p_value,
            trials: vsr.trials,
        },
    })
}

fn run(cli: Cli) -> Result<()> {
    exec::init_from_env()?;
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Setup(a) => setup(a),
        Command::Query(a) => run_query(a),
        Command::Insert(a) => run_insert(a),
        Command::Delete(a) => run_delete(a),
        Command::Bench(a) => bench(a),
        Command::Analyze(a) => analyze(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("veil: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
