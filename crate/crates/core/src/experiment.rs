//! Experiment orchestration: load, split, fit the window, train and evaluate
//! for each seed, then aggregate.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! node_map.csv
//! <mode>/seed_<s>/metrics.json
//! <mode>/seed_<s>/loss_history.csv
//! <mode>/seed_<s>/checkpoint.bin
//! <mode>/aggregate.json
//! ablation_grid.csv                 (grid runs)
//! sweep_<param>.csv, <param>=<v>/   (sweeps)
//! ```

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{error, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalConfig, MetricsReport};
use crate::graph::{load_edge_list, split_train_test, DataSplit, Dataset, IngestStats};
use crate::model::NodeFeatures;
use crate::powerlaw::{collect_inter_event_times, fit_power_law, intimate_window_size};
use crate::rng::{stream_rng, Stream};
use crate::training::{train, EpochRecord, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationMode {
    #[serde(rename = "BGNN")]
    Bgnn,
    #[serde(rename = "BGNN+S")]
    BgnnS,
    #[serde(rename = "BGNN+I")]
    BgnnI,
    #[serde(rename = "STGNN")]
    Stgnn,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::Bgnn,
        AblationMode::BgnnS,
        AblationMode::BgnnI,
        AblationMode::Stgnn,
    ];

    /// `(use_significant_selection, use_intimate_window)`.
    pub fn flags(self) -> (bool, bool) {
        match self {
            AblationMode::Bgnn => (false, false),
            AblationMode::BgnnS => (true, false),
            AblationMode::BgnnI => (false, true),
            AblationMode::Stgnn => (true, true),
        }
    }

    pub fn apply(self, cfg: &mut TrainConfig) {
        let (sel, win) = self.flags();
        cfg.use_significant_selection = sel;
        cfg.use_intimate_window = win;
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            AblationMode::Bgnn => "bgnn",
            AblationMode::BgnnS => "bgnn_s",
            AblationMode::BgnnI => "bgnn_i",
            AblationMode::Stgnn => "stgnn",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationMode::Bgnn => "BGNN",
            AblationMode::BgnnS => "BGNN+S",
            AblationMode::BgnnI => "BGNN+I",
            AblationMode::Stgnn => "STGNN",
        })
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('_', "+").as_str() {
            "BGNN" => Ok(AblationMode::Bgnn),
            "BGNN+S" => Ok(AblationMode::BgnnS),
            "BGNN+I" => Ok(AblationMode::BgnnI),
            "STGNN" => Ok(AblationMode::Stgnn),
            other => Err(Error::Config(format!("unknown ablation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    /// Raw timestamp units per model time unit (86400 turns seconds into days).
    pub time_unit: Option<f64>,
    pub split_ratio: f64,
    pub repetitions: usize,
    pub output_dir: PathBuf,
    pub ablation: AblationMode,
    /// Fixed window size; skips the power-law fit when set.
    pub window_size: Option<f64>,
    /// `train.seed` is the master seed; repetition `k` uses `seed + k`.
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: PathBuf::new(),
            time_unit: None,
            split_ratio: 0.75,
            repetitions: 10,
            output_dir: PathBuf::from("out"),
            ablation: AblationMode::Stgnn,
            window_size: None,
            train: TrainConfig::default(),
        }
    }
}

/// Per-dataset `(time_unit, p)` defaults for the known public edge lists,
/// matched on the file name.
pub fn dataset_defaults(path: &Path) -> Option<(f64, f64)> {
    let name = path.file_name()?.to_string_lossy().to_ascii_lowercase();
    const DAY: f64 = 86_400.0;
    if name.contains("college") {
        Some((DAY, 0.8))
    } else if ["radoslaw", "contact", "wiki"]
        .iter()
        .any(|k| name.contains(k))
    {
        Some((DAY, 0.5))
    } else {
        None
    }
}

impl ExperimentConfig {
    pub fn for_dataset(path: impl Into<PathBuf>) -> Self {
        let dataset = path.into();
        let mut cfg = ExperimentConfig::default();
        if let Some((unit, p)) = dataset_defaults(&dataset) {
            cfg.time_unit = Some(unit);
            cfg.train.p = p;
        }
        cfg.dataset = dataset;
        cfg
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split_ratio must lie in (0, 1), got {}",
                self.split_ratio
            )));
        }
        match self.time_unit {
            Some(u) if u > 0.0 && u.is_finite() => {}
            Some(u) => {
                return Err(Error::Config(format!(
                    "time_unit must be positive, got {u}"
                )))
            }
            None => {
                return Err(Error::Config(format!(
                    "time_unit is required for {}",
                    self.dataset.display()
                )))
            }
        }
        if let Some(w) = self.window_size {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!(
                    "window_size must be positive, got {w}"
                )));
            }
        }
        self.train.validate()
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.repetitions as u64).map(move |k| self.train.seed.wrapping_add(k))
    }

    fn dataset_name(&self) -> String {
        self.dataset
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    /// `"power_law"` or `"fixed"`.
    pub source: String,
    pub alpha: Option<f64>,
    pub xmin: Option<f64>,
    pub c: Option<f64>,
    pub ks_distance: Option<f64>,
    pub n_tail: Option<usize>,
    pub n_intervals: usize,
    pub zero_gaps_dropped: usize,
    pub p: f64,
    pub delta: f64,
}

/// Fits the window on the training stream only, or takes `window_size`.
pub fn resolve_window(split: &DataSplit, cfg: &ExperimentConfig) -> Result<FitSummary> {
    if let Some(delta) = cfg.window_size {
        return Ok(FitSummary {
            source: "fixed".into(),
            alpha: None,
            xmin: None,
            c: None,
            ks_distance: None,
            n_tail: None,
            n_intervals: 0,
            zero_gaps_dropped: 0,
            p: cfg.train.p,
            delta,
        });
    }
    let iet = collect_inter_event_times(&split.train)?;
    let fit = fit_power_law(&iet.intervals)?;
    let delta = intimate_window_size(&fit, cfg.train.p)?;
    Ok(FitSummary {
        source: "power_law".into(),
        alpha: Some(fit.alpha),
        xmin: Some(fit.xmin),
        c: Some(fit.c),
        ks_distance: Some(fit.ks_distance),
        n_tail: Some(fit.n_tail),
        n_intervals: iet.intervals.len(),
        zero_gaps_dropped: iet.zero_gaps_dropped,
        p: cfg.train.p,
        delta,
    })
}

/// Loaded and split data shared by every run on one dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub split: DataSplit,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let dataset = load_edge_list(&cfg.dataset, cfg.time_unit.expect("validated"))?;
    let split = split_train_test(&dataset.graph, cfg.split_ratio)?;
    Ok(Prepared { dataset, split })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub num_nodes: usize,
    pub num_events: usize,
    pub num_pairs: usize,
    pub train_events: usize,
    pub test_pairs: usize,
    pub t_split: f64,
    pub ingest: IngestStats,
    pub undirected: bool,
    pub duplicates_kept: bool,
    pub test_negatives: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub dataset: String,
    pub seed: u64,
    pub ablation: AblationMode,
    #[serde(flatten)]
    pub metrics: MetricsReport,
    pub fit: FitSummary,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub negatives_skipped: usize,
    pub normalization: Normalization,
    /// Reproduces this run exactly when fed back as the config.
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub best_auc: f64,
    pub best_map: f64,
    pub reference_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dataset: String,
    pub ablation: AblationMode,
    pub repetitions: usize,
    pub completed: usize,
    pub mean_best_auc: f64,
    /// Sample standard deviation (0 for a single seed).
    pub std_best_auc: f64,
    pub mean_best_map: f64,
    pub std_best_map: f64,
    pub mean_reference_auc: f64,
    pub per_seed: Vec<SeedSummary>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub report: SeedReport,
    pub history: Vec<EpochRecord>,
    pub checkpoint: Checkpoint,
}

fn normalization(prep: &Prepared) -> Normalization {
    let g = &prep.dataset.graph;
    Normalization {
        num_nodes: g.num_nodes(),
        num_events: g.num_events(),
        num_pairs: g.num_pairs(),
        train_events: prep.split.train.num_events(),
        test_pairs: prep.split.test_pairs.len(),
        t_split: prep.split.t_split,
        ingest: prep.dataset.stats.clone(),
        undirected: true,
        duplicates_kept: true,
        test_negatives: "uniform pairs never linked anywhere in the stream".into(),
    }
}

/// One train + evaluate cycle for `seed` under `cfg.ablation`.
pub fn run_seed(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    fit: &FitSummary,
    seed: u64,
) -> Result<SeedRun> {
    let mut tcfg = cfg.train.clone();
    tcfg.seed = seed;
    cfg.ablation.apply(&mut tcfg);

    let n = prep.dataset.graph.num_nodes();
    let feats = NodeFeatures::random(n, tcfg.input_dim, &mut stream_rng(seed, Stream::Features));
    let outcome = train(&prep.split.train, &feats, &tcfg, fit.delta)?;
    let eval_cfg = EvalConfig {
        m: tcfg.m,
        lambda: tcfg.lambda,
        selection: tcfg.selection(),
    };
    let metrics = evaluate(
        &prep.split,
        &prep.dataset.graph,
        &outcome.params,
        &feats,
        &eval_cfg,
        &mut stream_rng(seed, Stream::EvalNegatives),
    )?;

    let mut echo = cfg.clone();
    echo.train.seed = seed;
    echo.repetitions = 1;
    let report = SeedReport {
        dataset: cfg.dataset_name(),
        seed,
        ablation: cfg.ablation,
        metrics,
        fit: fit.clone(),
        epochs_run: outcome.history.len(),
        final_loss: outcome.history.last().map_or(f64::NAN, |r| r.mean_loss),
        negatives_skipped: outcome.negatives_skipped,
        normalization: normalization(prep),
        config: echo,
    };
    Ok(SeedRun {
        report,
        history: outcome.history,
        checkpoint: Checkpoint {
            seed,
            params: outcome.params,
            features: feats,
        },
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn loss_history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,mean_loss,wall_time\n");
    for r in history {
        s.push_str(&format!("{},{},{:.3}\n", r.epoch, r.mean_loss, r.wall_time));
    }
    s
}

fn write_seed(dir: &Path, run: &SeedRun) -> Result<()> {
    let seed_dir = dir.join(format!("seed_{}", run.report.seed));
    write_file(
        &seed_dir.join("metrics.json"),
        serde_json::to_string_pretty(&run.report)?.as_bytes(),
    )?;
    write_file(
        &seed_dir.join("loss_history.csv"),
        loss_history_csv(&run.history).as_bytes(),
    )?;
    run.checkpoint.save(&seed_dir.join("checkpoint.bin"))
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub aggregate: Aggregate,
    pub runs: Vec<SeedRun>,
    /// `(seed, message)` for every failed seed.
    pub failures: Vec<(u64, String)>,
    pub wall_time: f64,
}

impl ExperimentOutcome {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs every seed of `cfg.ablation` on prepared data, writing reports into
/// `out_dir`. Failed seeds are recorded; finished ones are kept.
pub fn run_prepared(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    out_dir: &Path,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let fit = resolve_window(&prep.split, cfg)?;
    info!(
        "{}: {} seeds, delta = {:.4} ({})",
        cfg.ablation, cfg.repetitions, fit.delta, fit.source
    );
    let seeds: Vec<u64> = cfg.seeds().collect();
    let results: Vec<(u64, Result<SeedRun>)> = seeds
        .par_iter()
        .map(|&s| (s, run_seed(cfg, prep, &fit, s)))
        .collect();

    let mode_dir = out_dir.join(cfg.ablation.dir_name());
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, res) in results {
        match res {
            Ok(run) => {
                write_seed(&mode_dir, &run)?;
                runs.push(run);
            }
            Err(e) => {
                error!("seed {seed}: {e}");
                if let Error::Diverged { last_finite, .. } = &e {
                    let n = prep.dataset.graph.num_nodes();
                    let ck = Checkpoint {
                        seed,
                        params: (**last_finite).clone(),
                        features: NodeFeatures::random(
                            n,
                            cfg.train.input_dim,
                            &mut stream_rng(seed, Stream::Features),
                        ),
                    };
                    let path = mode_dir
                        .join(format!("seed_{seed}"))
                        .join("last_finite.bin");
                    if let Some(dir) = path.parent() {
                        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    }
                    ck.save(&path)?;
                }
                failures.push((seed, e.to_string()));
            }
        }
    }

    let auc: Vec<f64> = runs.iter().map(|r| r.report.metrics.best_auc).collect();
    let map: Vec<f64> = runs.iter().map(|r| r.report.metrics.best_map).collect();
    let reference: Vec<f64> = runs
        .iter()
        .map(|r| r.report.metrics.reference_auc)
        .collect();
    let (mean_best_auc, std_best_auc) = mean_std(&auc);
    let (mean_best_map, std_best_map) = mean_std(&map);
    let aggregate = Aggregate {
        dataset: cfg.dataset_name(),
        ablation: cfg.ablation,
        repetitions: cfg.repetitions,
        completed: runs.len(),
        mean_best_auc,
        std_best_auc,
        mean_best_map,
        std_best_map,
        mean_reference_auc: mean_std(&reference).0,
        per_seed: runs
            .iter()
            .map(|r| SeedSummary {
                seed: r.report.seed,
                best_auc: r.report.metrics.best_auc,
                best_map: r.report.metrics.best_map,
                reference_auc: r.report.metrics.reference_auc,
            })
            .collect(),
    };
    write_file(
        &mode_dir.join("aggregate.json"),
        serde_json::to_string_pretty(&aggregate)?.as_bytes(),
    )?;
    Ok(ExperimentOutcome {
        aggregate,
        runs,
        failures,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// Load, split, and run all seeds for `cfg.ablation`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let prep = prepare(cfg)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    prep.dataset
        .write_node_map(&cfg.output_dir.join("node_map.csv"))?;
    run_prepared(cfg, &prep, &cfg.output_dir)
}

/// All four ablation modes on identical data and seeds; writes
/// `ablation_grid.csv`.
pub fn run_ablation_grid(cfg: &ExperimentConfig) -> Result<Vec<ExperimentOutcome>> {
    let prep = prepare(cfg)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    prep.dataset
        .write_node_map(&cfg.output_dir.join("node_map.csv"))?;
    let mut outcomes = Vec::new();
    let mut csv = String::from("mode,mean_auc,std_auc,mean_map,std_map,completed\n");
    for mode in AblationMode::ALL {
        let mode_cfg = ExperimentConfig {
            ablation: mode,
            ..cfg.clone()
        };
        let out = run_prepared(&mode_cfg, &prep, &cfg.output_dir)?;
        let a = &out.aggregate;
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            mode, a.mean_best_auc, a.std_best_auc, a.mean_best_map, a.std_best_map, a.completed
        ));
        outcomes.push(out);
    }
    write_file(&cfg.output_dir.join("ablation_grid.csv"), csv.as_bytes())?;
    Ok(outcomes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    P,
    M,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p" => Ok(SweepParam::P),
            "m" => Ok(SweepParam::M),
            other => Err(Error::Config(format!("cannot sweep `{other}`; use p or m"))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::P => "p",
            SweepParam::M => "m",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub mean_map: f64,
    pub std_map: f64,
}

pub fn validate_sweep(param: SweepParam, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    for &v in values {
        let ok = match param {
            SweepParam::P => (0.0..1.0).contains(&v),
            SweepParam::M => v >= 1.0 && v.fract() == 0.0,
        };
        if !ok {
            return Err(Error::Config(format!("invalid {param} value {v}")));
        }
    }
    Ok(())
}

/// One aggregate per value; writes `sweep_<param>.csv`.
pub fn sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    validate_sweep(param, values)?;
    let prep = prepare(cfg)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    prep.dataset
        .write_node_map(&cfg.output_dir.join("node_map.csv"))?;
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for &value in values {
        let mut point = cfg.clone();
        match param {
            SweepParam::P => point.train.p = value,
            SweepParam::M => point.train.m = value as usize,
        }
        let dir = cfg.output_dir.join(format!("{param}={value}"));
        let out = run_prepared(&point, &prep, &dir)?;
        if !out.succeeded() {
            failed.push(value);
        }
        let a = out.aggregate;
        rows.push(SweepRow {
            value,
            mean_auc: a.mean_best_auc,
            std_auc: a.std_best_auc,
            mean_map: a.mean_best_map,
            std_map: a.std_best_map,
        });
    }
    let path = cfg.output_dir.join(format!("sweep_{param}.csv"));
    let mut csv = Vec::new();
    writeln!(csv, "value,mean_auc,std_auc,mean_map,std_map").expect("vec write");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{}",
            r.value, r.mean_auc, r.std_auc, r.mean_map, r.std_map
        )
        .expect("vec write");
    }
    write_file(&path, &csv)?;
    if !failed.is_empty() {
        return Err(Error::Evaluation(format!(
            "sweep points with failed seeds: {failed:?}"
        )));
    }
    Ok(rows)
}

/// Re-evaluates a saved checkpoint on the configured dataset and split.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<MetricsReport> {
    let prep = prepare(cfg)?;
    let ck = Checkpoint::load(checkpoint)?;
    if ck.features.num_nodes() != prep.dataset.graph.num_nodes() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} nodes, dataset has {}",
            ck.features.num_nodes(),
            prep.dataset.graph.num_nodes()
        )));
    }
    let mut tcfg = cfg.train.clone();
    tcfg.seed = ck.seed;
    cfg.ablation.apply(&mut tcfg);
    let eval_cfg = EvalConfig {
        m: ck.params.beta.len(),
        lambda: tcfg.lambda,
        selection: tcfg.selection(),
    };
    evaluate(
        &prep.split,
        &prep.dataset.graph,
        &ck.params,
        &ck.features,
        &eval_cfg,
        &mut stream_rng(ck.seed, Stream::EvalNegatives),
    )
}
