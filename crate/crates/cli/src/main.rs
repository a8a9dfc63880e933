use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use scca::benchmark::{paired_comparisons, recovery_metrics, run_benchmark, BenchmarkConfig};
use scca::io::{self, MetricsDoc, StoredModel};
use scca::learner::{embed_with, learn, Algorithm, LearnConfig};
use scca::model::Partition;
use scca::quadrature::{QuadratureCache, DEFAULT_LATENT_GRID, DEFAULT_THETA_GRID};
use scca::score::{pair_breakdown, pcl, sufficient_stats};
use scca::synthetic::{gen_dataset, gen_true_model, PurityRule, SynthConfig};
use scca::ErrorKind;

#[derive(Parser)]
#[command(name = "scca", about = "Latent factor models with residual copula dependencies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random ground truth and sample data from it.
    Simulate(SimulateArgs),
    /// Fit a model to a binary data matrix.
    Learn(LearnArgs),
    /// Pairwise composite log-likelihood of data under a model.
    Score(ScoreArgs),
    /// Latent embeddings of each row of a data matrix.
    Embed(EmbedArgs),
    /// Recovery metrics against a truth, or paired comparisons of metric files.
    Eval(EvalArgs),
    /// Repeated simulate/learn/eval trials with a summary table.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Latent quadrature points per dimension.
    #[arg(long, env = "SCCA_LATENT_GRID", default_value_t = DEFAULT_LATENT_GRID)]
    latent_grid: usize,
    /// Copula parameter grid size.
    #[arg(long, env = "SCCA_THETA_GRID", default_value_t = DEFAULT_THETA_GRID)]
    theta_grid: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    groups: usize,
    #[arg(long, default_value_t = 4)]
    children: usize,
    #[arg(long, default_value_t = 0.2)]
    edge_prob: f64,
    #[arg(long, value_enum, default_value_t = Purity::MutuallyUnlinked)]
    purity: Purity,
}

#[derive(Clone, Copy, ValueEnum)]
enum Purity {
    MutuallyUnlinked,
    NoEdges,
}

impl SynthArgs {
    fn config(&self) -> SynthConfig {
        SynthConfig {
            n_groups: self.groups,
            children_per_group: self.children,
            edge_prob: self.edge_prob,
            purity: match self.purity {
                Purity::MutuallyUnlinked => PurityRule::MutuallyUnlinked,
                Purity::NoEdges => PurityRule::NoEdges,
            },
            ..SynthConfig::default()
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Directory receiving truth.json, partition.json and data.csv.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(short, long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    synth: SynthArgs,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    partition: PathBuf,
    #[arg(long, default_value = "lsc2")]
    algorithm: Algorithm,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    max_outer_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Include the score of every variable pair.
    #[arg(long)]
    pairs: bool,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "compare", conflicts_with = "compare")]
    truth: Option<PathBuf>,
    #[arg(long, required_unless_present = "compare", conflicts_with = "compare")]
    learned: Option<PathBuf>,
    /// Trial index recorded in the metrics file.
    #[arg(long)]
    trial: Option<usize>,
    /// Per-trial metric files to compare; files for the same trial are merged.
    #[arg(long, num_args = 1..)]
    compare: Vec<PathBuf>,
    #[arg(long, default_value = "lsc2")]
    baseline: Algorithm,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(short, long, default_value_t = 5000)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_value = "lsc0,lsc1,lsc2")]
    algorithms: Vec<Algorithm>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Reuse trials whose metrics are already written.
    #[arg(long)]
    resume: bool,
    /// Worker threads (0 = available parallelism).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[command(flatten)]
    synth: SynthArgs,
    #[command(flatten)]
    grid: GridArgs,
}

fn write_text(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut rng = scca::benchmark::trial_rng(a.seed, 0);
    let truth = gen_true_model(&a.synth.config(), &mut rng)?;
    let data = gen_dataset(&truth, a.n, &mut rng)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    io::save_truth(a.out_dir.join("truth.json"), &truth)?;
    io::save_partition(a.out_dir.join("partition.json"), truth.graph.partition())?;
    io::save_csv(a.out_dir.join("data.csv"), &data)?;
    log::info!("{} edges, {} rows written to {}", truth.graph.n_edges(), a.n, a.out_dir.display());
    Ok(())
}

fn run_learn(a: LearnArgs) -> Result<()> {
    let partition = io::load_partition(&a.partition)?;
    let data = io::load_csv(&a.data)?;
    let cfg = LearnConfig {
        algorithm: a.algorithm,
        max_outer_iters: a.max_outer_iters,
        seed: a.seed,
        latent_grid: a.grid.latent_grid,
        theta_grid: a.grid.theta_grid,
        ..LearnConfig::default()
    };
    let fitted = learn(&partition, &data, &cfg)?;
    io::save_model(&a.out, &StoredModel::from(&fitted))?;
    println!(
        "{}: {} edges, pcl {:.6}, pcl regressions {}",
        fitted.algorithm,
        fitted.graph.n_edges(),
        fitted.pcl,
        fitted.pcl_regressions
    );
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let model = io::load_model(&a.model)?;
    let data = io::load_csv(&a.data)?;
    let part = model.graph.partition();
    let stats = sufficient_stats(&data, part)?;
    let cache = QuadratureCache::with_theta_grid(a.grid.latent_grid, a.grid.theta_grid)?;
    let total = pcl(&model.graph, &model.params, &stats, &cache)?;
    let mut out = serde_json::json!({ "pcl": total, "rows": data.n_rows() });
    if a.pairs {
        let pairs: Vec<_> = pair_breakdown(&model.graph, &model.params, &stats, &cache)
            .into_iter()
            .map(|(i, j, edge, s)| serde_json::json!({ "a": part.name(i), "b": part.name(j), "edge": edge, "score": s }))
            .collect();
        out["pairs"] = serde_json::Value::Array(pairs);
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let model = io::load_model(&a.model)?;
    let part: &Arc<Partition> = model.graph.partition();
    let data = io::load_csv(&a.data)?.aligned_to(part)?;
    let rows = data
        .rows()
        .map(|row| embed_with(&model.graph, &model.params, row))
        .collect::<scca::Result<Vec<_>>>()?;
    io::save_embeddings(&a.out, part, &rows)?;
    let failed = rows.iter().filter(|e| !e.converged).count();
    if failed > 0 {
        log::warn!("{failed} of {} embeddings did not converge", rows.len());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    if !a.compare.is_empty() {
        let mut by_trial: BTreeMap<usize, MetricsDoc> = BTreeMap::new();
        for path in &a.compare {
            let doc = io::load_metrics(path)?;
            let Some(trial) = doc.trial else {
                bail!("{} has no trial index", path.display());
            };
            let entry = by_trial.entry(trial).or_insert_with(|| MetricsDoc::new(Some(trial)));
            entry.algorithms.extend(doc.algorithms);
            entry.pcl_regressions.extend(doc.pcl_regressions);
        }
        let docs: Vec<MetricsDoc> = by_trial.into_values().collect();
        let rows = paired_comparisons(&docs, a.baseline);
        let text = serde_json::to_string_pretty(&serde_json::json!({
            "trials": docs.len(),
            "baseline": a.baseline,
            "comparisons": rows,
        }))?;
        return write_text(&a.out, text + "\n");
    }
    let (Some(truth_path), Some(learned_path)) = (&a.truth, &a.learned) else {
        bail!("--truth and --learned are required without --compare");
    };
    let truth = io::load_truth(truth_path)?;
    let learned = io::load_model(learned_path)?;
    let algorithm = learned
        .fit
        .as_ref()
        .map(|f| f.algorithm)
        .with_context(|| format!("{} carries no fit information", learned_path.display()))?;
    let mut doc = MetricsDoc::new(a.trial);
    doc.algorithms
        .insert(algorithm, recovery_metrics(&truth, &learned.graph, &learned.params)?);
    if let Some(fit) = &learned.fit {
        doc.pcl_regressions.insert(algorithm, fit.pcl_regressions);
    }
    io::save_metrics(&a.out, &doc)?;
    Ok(())
}

fn benchmark(a: BenchmarkArgs) -> Result<()> {
    let mut cfg = BenchmarkConfig::new(a.trials, a.n, a.algorithms, a.seed, a.out_dir);
    cfg.resume = a.resume;
    cfg.jobs = a.jobs;
    cfg.synth = a.synth.config();
    cfg.learn.latent_grid = a.grid.latent_grid;
    cfg.learn.theta_grid = a.grid.theta_grid;
    let summary = run_benchmark(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn version_text() -> String {
    let mut s = env!("CARGO_PKG_VERSION").to_string();
    for (format, schema) in io::SCHEMAS {
        s.push_str(&format!("\n{format}: {schema}"));
    }
    s
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<scca::Error>().map(scca::Error::kind) {
        Some(ErrorKind::Usage) => 1,
        Some(ErrorKind::Numerical) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let version: &'static str = Box::leak(version_text().into_boxed_str());
    let matches = match Cli::command().version(version).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Learn(a) => run_learn(a),
        Command::Score(a) => score(a),
        Command::Embed(a) => embed(a),
        Command::Eval(a) => eval(a),
        Command::Benchmark(a) => benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
