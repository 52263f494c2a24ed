//! `dlab` command-line entry point.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dlab::data::GroundTruthModel;
use dlab::harness::experiment::{traversal_extension, TRAVERSAL_RANGE, TRAVERSAL_STEPS};
use dlab::harness::reports::{parse_scores, rebuild_reports, Reports};
use dlab::harness::spec::{CorruptionKind, ExperimentSpec};
use dlab::harness::traversal::traversal_grid;
use dlab::harness::{run_experiment, LabelKey, Strategy};
use dlab::labeling::{draw_labeled_subset, split_train_val, LabeledSet};
use dlab::metrics::{evaluate_test, evaluate_validation, EvalConfig, Metric};
use dlab::vae::{train, Architecture, Method, MethodConfig, TrainedModel};

#[derive(Parser)]
#[command(name = "dlab", version, about = "Disentangled representations with few labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export a built-in data set as a factor table, optionally with a labeled subset.
    GenerateData {
        #[arg(long, default_value_t = 16)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also draw this many labeled examples.
        #[arg(long)]
        labels: Option<usize>,
        #[arg(long, default_value_t = 0)]
        label_seed: u64,
        #[arg(long)]
        labels_out: Option<PathBuf>,
    },
    /// Train one model and save its checkpoint.
    Train {
        #[arg(long)]
        method: Method,
        /// The method's regularization strength.
        #[arg(long, default_value_t = 1.0)]
        strength: f64,
        #[arg(long, default_value_t = 0.0)]
        gamma_sup: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = dlab::vae::config::DEFAULT_STEPS)]
        steps: usize,
        #[arg(long, default_value = "mlp-small")]
        architecture: Architecture,
        #[arg(long, default_value_t = 16)]
        resolution: usize,
        /// Labeled set (JSON) for semi-supervised training; its 90% split is used.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test metrics (and validation metrics on a labeled set) for a saved model.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 16)]
        resolution: usize,
        #[arg(long, default_value_t = 10_000)]
        test_samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select from a scores file with one strategy, e.g. U/S:MIG or S2/S:Rs.
    Select {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        method: Method,
        /// Label condition, e.g. n100.perfect.l0.
        #[arg(long)]
        labels: LabelKey,
    },
    /// Rebuild the selection, rank-correlation and win-rate reports from scores.csv.
    Report {
        /// Directory holding scores.csv.
        dir: PathBuf,
    },
    /// Run a full sweep from a spec file (or defaults), with optional overrides.
    Sweep {
        spec: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        method: Vec<Method>,
        #[arg(long, value_delimiter = ',')]
        labels: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        corruption: Vec<CorruptionKind>,
        #[arg(long)]
        smoke: bool,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a latent traversal grid for a saved model.
    Traverse {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 16)]
        resolution: usize,
        /// Flat configuration index of the base image.
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long, default_value_t = TRAVERSAL_STEPS)]
        steps: usize,
        #[arg(long, default_value_t = TRAVERSAL_RANGE.0, allow_negative_numbers = true)]
        lo: f32,
        #[arg(long, default_value_t = TRAVERSAL_RANGE.1, allow_negative_numbers = true)]
        hi: f32,
        #[arg(long)]
        out: PathBuf,
    },
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("DLAB_SEED") {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("DLAB_SEED='{v}' is not an integer"))?)),
        Err(_) => Ok(None),
    }
}

fn seed_or_env(seed: Option<u64>) -> Result<u64> {
    Ok(match seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    })
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenerateData {
            resolution,
            out,
            labels,
            label_seed,
            labels_out,
        } => {
            let data = GroundTruthModel::mini_shapes(resolution)?;
            data.export_factor_table(&out)?;
            println!("wrote {} configurations to {}", data.space().num_configs(), out.display());
            if let Some(n) = labels {
                let path = labels_out.unwrap_or_else(|| out.with_extension("labels.json"));
                draw_labeled_subset(&data, n, label_seed)?.save(&path)?;
                println!("wrote {n} labeled examples to {}", path.display());
            }
        }
        Command::Train {
            method,
            strength,
            gamma_sup,
            seed,
            steps,
            architecture,
            resolution,
            labels,
            out,
        } => {
            let data = GroundTruthModel::mini_shapes(resolution)?;
            let config = MethodConfig::new(method, strength, gamma_sup, seed_or_env(seed)?)
                .with_architecture(architecture)
                .with_steps(steps);
            let split = match labels {
                Some(path) => {
                    let set = LabeledSet::load(&path)?;
                    Some(split_train_val(&set, 0.9, set.seed)?.0)
                }
                None => None,
            };
            let model = train(&config, &data, split.as_ref())?;
            model.save(&out)?;
            println!("trained {method} in {:.1}s, saved to {}", model.train_seconds, out.display());
        }
        Command::Evaluate {
            model,
            resolution,
            test_samples,
            seed,
            labels,
            out,
        } => {
            let data = GroundTruthModel::mini_shapes(resolution)?;
            let model = TrainedModel::load(&model)?;
            let cfg = EvalConfig {
                test_samples,
                ..EvalConfig::default()
            };
            let mut reports = vec![evaluate_test(&data, &model, &cfg, seed_or_env(seed)?)?];
            if let Some(path) = labels {
                let set = LabeledSet::load(&path)?;
                reports.push(evaluate_validation(&data, &model, &set, &Metric::VALIDATION, cfg.bins)?);
            }
            let text = serde_json::to_string_pretty(&reports)?;
            match out {
                Some(p) => fs::write(p, text)?,
                None => println!("{text}"),
            }
        }
        Command::Select {
            scores,
            strategy,
            method,
            labels,
        } => {
            let rows = parse_scores(&fs::read_to_string(&scores)?)?;
            let reports = Reports::from_scores(&rows)?;
            let method = if strategy == Strategy::Baseline { Method::SupervisedOnly } else { method };
            let Some(s) = reports
                .selections
                .iter()
                .find(|s| s.strategy == strategy && s.method == method && s.key == labels)
            else {
                bail!("no {strategy} selection for {method} under {labels}");
            };
            println!("{} {} (score {}, {} ties)", s.strategy, s.model_id, s.score, s.ties);
        }
        Command::Report { dir } => {
            let r = rebuild_reports(&dir)?;
            println!(
                "{} selections, {} rank correlations, {} win-rate rows",
                r.selections.len(),
                r.rank_corr.len(),
                r.win_rates.len()
            );
        }
        Command::Sweep {
            spec,
            method,
            labels,
            corruption,
            smoke,
            workers,
            out,
        } => {
            let mut s = match spec {
                Some(p) => ExperimentSpec::parse(&fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                None => ExperimentSpec::default(),
            };
            if !method.is_empty() {
                s.methods.retain(|m| method.contains(&m.method));
                for m in &method {
                    if !s.methods.iter().any(|g| g.method == *m) {
                        s.methods.push(dlab::harness::spec::MethodGrid::default_for(*m));
                    }
                }
            }
            if !labels.is_empty() {
                s.budgets = labels;
            }
            if !corruption.is_empty() {
                s.corruptions = corruption;
            }
            if smoke {
                s.apply_smoke();
            }
            if let Some(seed) = env_seed()? {
                s.seed = seed;
            }
            if let Some(o) = out {
                s.output = o;
            }
            let summary = run_experiment(&s, workers)?;
            let failed = summary.failed_members().count();
            println!(
                "{} members ({failed} failed); reports in {}",
                summary.results.len(),
                s.output.join("reports").display()
            );
            for e in &summary.report_errors {
                eprintln!("report error: {e}");
            }
            return Ok(summary.report_errors.is_empty());
        }
        Command::Traverse {
            model,
            resolution,
            index,
            steps,
            lo,
            hi,
            out,
        } => {
            let data = GroundTruthModel::mini_shapes(resolution)?;
            let model = TrainedModel::load(&model)?;
            let grid = traversal_grid(&model, &data.render_index(index)?, lo, hi, steps)?;
            let out = if out.extension().is_none() {
                out.with_extension(traversal_extension(grid.channels))
            } else {
                out
            };
            grid.write_pnm(&out)?;
            println!("wrote {}x{} grid to {}", grid.width, grid.height, out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
