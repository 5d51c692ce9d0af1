use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use stgnn::experiment::{
    evaluate_checkpoint, prepare, resolve_window, run_ablation_grid, run_experiment, sweep,
    AblationMode, ExperimentConfig, SweepParam,
};
use stgnn::graph::load_edge_list;
use stgnn::powerlaw::{collect_inter_event_times, fit_power_law, intimate_window_size};
use stgnn::synth::{generate, SyntheticSpec};

#[derive(Parser)]
#[command(
    name = "stgnn",
    version,
    about = "Temporal link prediction with significant ties"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate over all seeds, for one ablation mode or the full grid.
    Run {
        #[command(flatten)]
        opts: ExperimentArgs,
        /// Run BGNN, BGNN+S, BGNN+I and STGNN on identical seeds.
        #[arg(long)]
        grid: bool,
    },
    /// Repeat the experiment over values of `p` or `m`.
    Sweep {
        #[command(flatten)]
        opts: ExperimentArgs,
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values, e.g. `0.2,0.5,0.8`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Score a saved checkpoint on the configured dataset split.
    Eval {
        #[command(flatten)]
        opts: ExperimentArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Fit the inter-contact power law and print the window size.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        time_unit: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        /// Fit only the training portion of this split ratio.
        #[arg(long)]
        split_ratio: Option<f64>,
    },
    /// Write a synthetic stream with planted significant pairs.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// TOML file with generator settings; flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        communities: Option<usize>,
        #[arg(long)]
        planted_pairs: Option<usize>,
        #[arg(long)]
        events_per_pair: Option<usize>,
        #[arg(long)]
        background_events: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Settings shared by the experiment verbs. Flags override the config file.
#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Raw timestamp units per model time unit.
    #[arg(long)]
    time_unit: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    ablation: Option<AblationMode>,
    /// Master seed; repetition k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    split_ratio: Option<f64>,
    /// Fixed window size instead of the fitted one.
    #[arg(long)]
    window_size: Option<f64>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.dataset) {
            (Some(path), _) => ExperimentConfig::from_toml_file(path)?,
            (None, Some(dataset)) => ExperimentConfig::for_dataset(dataset),
            (None, None) => bail!("either --config or --dataset is required"),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { cfg.$($field).+ = v.clone(); })*
            };
        }
        set!(
            output => output_dir,
            ablation => ablation,
            seed => train.seed,
            repetitions => repetitions,
            epochs => train.epochs,
            lr => train.lr,
            batch_size => train.batch_size,
            patience => train.patience,
            m => train.m,
            p => train.p,
            split_ratio => split_ratio,
        );
        if self.time_unit.is_some() {
            cfg.time_unit = self.time_unit;
        }
        if self.window_size.is_some() {
            cfg.window_size = self.window_size;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report_failures(failed: usize) -> Result<()> {
    if failed > 0 {
        bail!("{failed} seed run(s) failed; finished seeds were written");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { opts, grid } => {
            let cfg = opts.resolve()?;
            if grid {
                let outcomes = run_ablation_grid(&cfg)?;
                let mut failed = 0;
                for o in &outcomes {
                    let a = &o.aggregate;
                    println!(
                        "{:<7} AUC {:.4} ± {:.4}  MAP {:.4} ± {:.4}",
                        a.ablation.to_string(),
                        a.mean_best_auc,
                        a.std_best_auc,
                        a.mean_best_map,
                        a.std_best_map
                    );
                    failed += o.failures.len();
                }
                report_failures(failed)
            } else {
                let o = run_experiment(&cfg)?;
                let a = &o.aggregate;
                println!("{}", serde_json::to_string_pretty(a)?);
                info!("finished in {:.1}s", o.wall_time);
                report_failures(o.failures.len())
            }
        }
        Command::Sweep {
            opts,
            param,
            values,
        } => {
            let cfg = opts.resolve()?;
            let rows = sweep(&cfg, param, &values)?;
            println!("{param},mean_auc,std_auc,mean_map,std_map");
            for r in rows {
                println!(
                    "{},{:.4},{:.4},{:.4},{:.4}",
                    r.value, r.mean_auc, r.std_auc, r.mean_map, r.std_map
                );
            }
            Ok(())
        }
        Command::Eval { opts, checkpoint } => {
            let cfg = opts.resolve()?;
            let report = evaluate_checkpoint(&cfg, &checkpoint)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Fit {
            dataset,
            time_unit,
            p,
            split_ratio,
        } => {
            let mut cfg = ExperimentConfig::for_dataset(&dataset);
            if time_unit.is_some() {
                cfg.time_unit = time_unit;
            }
            cfg.train.p = p;
            if let Some(r) = split_ratio {
                cfg.split_ratio = r;
                let prep = prepare(&cfg)?;
                let fit = resolve_window(&prep.split, &cfg)?;
                println!("{}", serde_json::to_string_pretty(&fit)?);
            } else {
                let unit = cfg
                    .time_unit
                    .context("--time-unit is required for this dataset")?;
                let data = load_edge_list(&dataset, unit)?;
                let iet = collect_inter_event_times(&data.graph)?;
                let fit = fit_power_law(&iet.intervals)?;
                let delta = intimate_window_size(&fit, p)?;
                println!(
                    "{}",
                    serde_json::json!({
                        "alpha": fit.alpha,
                        "xmin": fit.xmin,
                        "c": fit.c,
                        "ks_distance": fit.ks_distance,
                        "n_tail": fit.n_tail,
                        "n_intervals": iet.intervals.len(),
                        "zero_gaps_dropped": iet.zero_gaps_dropped,
                        "p": p,
                        "delta": delta,
                    })
                );
            }
            Ok(())
        }
        Command::Synth {
            out,
            spec,
            nodes,
            communities,
            planted_pairs,
            events_per_pair,
            background_events,
            seed,
        } => {
            let mut s = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    toml::from_str::<SyntheticSpec>(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                None => SyntheticSpec::default(),
            };
            s.n_nodes = nodes.unwrap_or(s.n_nodes);
            s.n_communities = communities.unwrap_or(s.n_communities);
            s.n_significant_pairs = planted_pairs.unwrap_or(s.n_significant_pairs);
            s.events_per_significant_pair =
                events_per_pair.unwrap_or(s.events_per_significant_pair);
            s.n_background_events = background_events.unwrap_or(s.n_background_events);
            s.seed = seed.unwrap_or(s.seed);
            let stream = generate(&s)?;
            let planted = stream.write(&out)?;
            println!(
                "wrote {} events to {} and {} planted pairs to {}",
                stream.events.len(),
                out.display(),
                stream.planted.len(),
                planted.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
