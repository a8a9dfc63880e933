//! End-to-end simulation study: generate truths, sample data, run the
//! learners and summarize recovery with paired comparisons.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::{self, MetricsDoc, RecoveryMetrics, StoredModel, SUMMARY_SCHEMA};
use crate::learner::{learn_from_stats, Algorithm, LearnConfig};
use crate::metrics::{edge_commission, edge_omission, slope_rmse, wilcoxon_signed_rank};
use crate::model::{MixedGraph, ModelParams};
use crate::score::sufficient_stats;
use crate::synthetic::{gen_dataset, gen_true_model, SynthConfig, TrueModel};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub trials: usize,
    pub n: usize,
    pub algorithms: Vec<Algorithm>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub resume: bool,
    /// Worker threads; 0 uses the available parallelism.
    pub jobs: usize,
    pub synth: SynthConfig,
    /// Learner settings; the algorithm field is overridden per run.
    pub learn: LearnConfig,
}

impl BenchmarkConfig {
    pub fn new(trials: usize, n: usize, algorithms: Vec<Algorithm>, seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        BenchmarkConfig {
            trials,
            n,
            algorithms,
            seed,
            out_dir: out_dir.into(),
            resume: false,
            jobs: 0,
            synth: SynthConfig::default(),
            learn: LearnConfig::default(),
        }
    }
}

/// Omission, commission and slope RMSE of a learned model.
pub fn recovery_metrics(truth: &TrueModel, graph: &MixedGraph, params: &ModelParams) -> Result<RecoveryMetrics> {
    let part = truth.graph.partition();
    if **graph.partition() != **part {
        return Err(Error::InvalidPartition("learned model and truth use different partitions".into()));
    }
    let omission = if truth.graph.n_edges() == 0 {
        None
    } else {
        Some(edge_omission(&truth.graph, graph)?)
    };
    Ok(RecoveryMetrics {
        omission,
        commission: edge_commission(&truth.graph, graph, part.n_vars())?,
        slope_rmse: slope_rmse(&truth.params, params, part)?,
        true_edges: truth.graph.n_edges(),
        learned_edges: graph.n_edges(),
    })
}

/// The random stream for one trial: the base seed with the trial index as stream id.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

pub fn trial_dir(out_dir: &Path, trial: usize) -> PathBuf {
    out_dir.join(format!("trial-{trial:03}"))
}

/// Runs one trial, writing its truth, data, models and metrics into `dir`.
pub fn run_trial(cfg: &BenchmarkConfig, trial: usize, dir: &Path) -> Result<MetricsDoc> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = trial_rng(cfg.seed, trial);
    let truth = gen_true_model(&cfg.synth, &mut rng)?;
    let data = gen_dataset(&truth, cfg.n, &mut rng)?;
    io::save_truth(dir.join("truth.json"), &truth)?;
    io::save_csv(dir.join("data.csv"), &data)?;
    let part = Arc::clone(truth.graph.partition());
    let stats = sufficient_stats(&data, &part)?;
    let cache = cfg.learn.build_cache()?;
    let mut doc = MetricsDoc::new(Some(trial));
    for &algorithm in &cfg.algorithms {
        let lc = LearnConfig {
            algorithm,
            seed: cfg.learn.seed ^ trial as u64,
            ..cfg.learn.clone()
        };
        let fitted = learn_from_stats(Arc::clone(&part), &stats, &cache, &lc)?;
        io::save_model(dir.join(format!("model-{algorithm}.json")), &StoredModel::from(&fitted))?;
        doc.algorithms
            .insert(algorithm, recovery_metrics(&truth, &fitted.graph, &fitted.params)?);
        doc.pcl_regressions.insert(algorithm, fitted.pcl_regressions);
        log::info!("trial {trial}: {algorithm} done, {} edges", fitted.graph.n_edges());
    }
    io::save_metrics(dir.join("metrics.json"), &doc)?;
    Ok(doc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub median: f64,
    pub n: usize,
}

impl Stat {
    fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        let median = if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) };
        Some(Stat {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median,
            n: v.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub omission: Option<Stat>,
    pub commission: Option<Stat>,
    pub slope_rmse: Option<Stat>,
    pub pcl_regressions: usize,
}

/// One row of the paired-difference table: `other − baseline` per trial, for
/// a metric where lower is better.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub metric: String,
    pub baseline: Algorithm,
    pub other: Algorithm,
    pub mean_difference: f64,
    /// Trials where the baseline is strictly better.
    pub baseline_wins: usize,
    pub ties: usize,
    pub other_wins: usize,
    pub wilcoxon_w: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub schema_version: String,
    pub trials: usize,
    pub n: usize,
    pub seed: u64,
    pub algorithms: Vec<Algorithm>,
    pub completed: usize,
    pub failures: Vec<TrialFailure>,
    pub per_algorithm: BTreeMap<Algorithm, AlgorithmSummary>,
    pub comparisons: Vec<PairedComparison>,
}

const METRIC_NAMES: [&str; 3] = ["omission", "commission", "slope_rmse"];

fn metric(m: &RecoveryMetrics, name: &str) -> Option<f64> {
    match name {
        "omission" => m.omission,
        "commission" => Some(m.commission),
        _ => Some(m.slope_rmse),
    }
}

/// Paired differences of every other algorithm against `baseline`, over the
/// trials where both have a value.
pub fn paired_comparisons(docs: &[MetricsDoc], baseline: Algorithm) -> Vec<PairedComparison> {
    let mut others: Vec<Algorithm> = docs
        .iter()
        .flat_map(|d| d.algorithms.keys().copied())
        .filter(|&a| a != baseline)
        .collect();
    others.sort();
    others.dedup();
    let mut out = Vec::new();
    for other in others {
        for name in METRIC_NAMES {
            let diffs: Vec<f64> = docs
                .iter()
                .filter_map(|d| {
                    let b = metric(d.algorithms.get(&baseline)?, name)?;
                    let o = metric(d.algorithms.get(&other)?, name)?;
                    Some(o - b)
                })
                .collect();
            if diffs.is_empty() {
                continue;
            }
            let test = wilcoxon_signed_rank(&diffs).ok();
            out.push(PairedComparison {
                metric: name.to_string(),
                baseline,
                other,
                mean_difference: diffs.iter().sum::<f64>() / diffs.len() as f64,
                baseline_wins: diffs.iter().filter(|&&d| d > 0.0).count(),
                ties: diffs.iter().filter(|&&d| d == 0.0).count(),
                other_wins: diffs.iter().filter(|&&d| d < 0.0).count(),
                wilcoxon_w: test.map(|t| t.w),
                p_value: test.map(|t| t.p_value),
            });
        }
    }
    out
}

/// Per-algorithm means and medians over completed trials.
pub fn summarize_algorithms(docs: &[MetricsDoc], algorithms: &[Algorithm]) -> BTreeMap<Algorithm, AlgorithmSummary> {
    algorithms
        .iter()
        .map(|&a| {
            let rows: Vec<&RecoveryMetrics> = docs.iter().filter_map(|d| d.algorithms.get(&a)).collect();
            let col = |name: &str| Stat::of(&rows.iter().filter_map(|m| metric(m, name)).collect::<Vec<_>>());
            let summary = AlgorithmSummary {
                omission: col("omission"),
                commission: col("commission"),
                slope_rmse: col("slope_rmse"),
                pcl_regressions: docs.iter().filter_map(|d| d.pcl_regressions.get(&a)).sum(),
            };
            (a, summary)
        })
        .collect()
}

/// The comparison baseline: LSC-II when it was run, otherwise the last algorithm listed.
fn baseline_of(algorithms: &[Algorithm]) -> Option<Algorithm> {
    if algorithms.contains(&Algorithm::Lsc2) {
        Some(Algorithm::Lsc2)
    } else {
        algorithms.iter().max().copied()
    }
}

/// Runs every trial (skipping completed ones when resuming) and writes
/// `summary.json` into the output directory.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkSummary> {
    if cfg.trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    if cfg.algorithms.is_empty() {
        return Err(Error::Config("no algorithms requested".into()));
    }
    cfg.synth.validate()?;
    cfg.learn.validate()?;
    let mut algorithms = cfg.algorithms.clone();
    algorithms.sort();
    algorithms.dedup();
    let cfg = BenchmarkConfig {
        algorithms,
        ..cfg.clone()
    };
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;

    let run = |trial: usize| -> Result<MetricsDoc> {
        let dir = trial_dir(&cfg.out_dir, trial);
        if cfg.resume {
            if let Ok(doc) = io::load_metrics(dir.join("metrics.json")) {
                if cfg.algorithms.iter().all(|a| doc.algorithms.contains_key(a)) {
                    log::info!("trial {trial}: already complete");
                    return Ok(doc);
                }
            }
        }
        run_trial(&cfg, trial, &dir)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<MetricsDoc>> = pool.install(|| (0..cfg.trials).into_par_iter().map(run).collect());

    let mut docs = Vec::new();
    let mut failures = Vec::new();
    for (trial, r) in results.into_iter().enumerate() {
        match r {
            Ok(mut doc) => {
                doc.algorithms.retain(|a, _| cfg.algorithms.contains(a));
                docs.push(doc);
            }
            Err(e) => {
                log::warn!("trial {trial} failed: {e}");
                failures.push(TrialFailure {
                    trial,
                    message: e.to_string(),
                });
            }
        }
    }
    let summary = BenchmarkSummary {
        schema_version: SUMMARY_SCHEMA.into(),
        trials: cfg.trials,
        n: cfg.n,
        seed: cfg.seed,
        algorithms: cfg.algorithms.clone(),
        completed: docs.len(),
        failures,
        per_algorithm: summarize_algorithms(&docs, &cfg.algorithms),
        comparisons: baseline_of(&cfg.algorithms)
            .map(|b| paired_comparisons(&docs, b))
            .unwrap_or_default(),
    };
    io::save_json(cfg.out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(trial: usize, rows: &[(Algorithm, f64)]) -> MetricsDoc {
        let mut d = MetricsDoc::new(Some(trial));
        for &(a, c) in rows {
            d.algorithms.insert(
                a,
                RecoveryMetrics {
                    omission: None,
                    commission: c,
                    slope_rmse: c,
                    true_edges: 0,
                    learned_edges: 0,
                },
            );
        }
        d
    }

    #[test]
    fn stat_median_even_and_odd() {
        assert_eq!(Stat::of(&[3.0, 1.0, 2.0]).unwrap().median, 2.0);
        assert_eq!(Stat::of(&[4.0, 1.0, 2.0, 3.0]).unwrap().median, 2.5);
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn comparisons_count_wins_against_baseline() {
        use Algorithm::*;
        let docs = vec![
            doc(0, &[(Lsc0, 0.3), (Lsc2, 0.1)]),
            doc(1, &[(Lsc0, 0.2), (Lsc2, 0.2)]),
            doc(2, &[(Lsc0, 0.1), (Lsc2, 0.4)]),
        ];
        let rows = paired_comparisons(&docs, Lsc2);
        let c = rows.iter().find(|r| r.metric == "commission").unwrap();
        assert_eq!((c.baseline_wins, c.ties, c.other_wins), (1, 1, 1));
        assert!((c.mean_difference - (0.2 - 0.3) / 3.0).abs() < 1e-12);
        assert!(rows.iter().all(|r| r.metric != "omission"));
    }
}
