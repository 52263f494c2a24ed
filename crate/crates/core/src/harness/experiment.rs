//! The sweep: label sets, cohort enumeration, training on a bounded worker
//! pool, evaluation and report files.
//!
//! Output layout under the experiment's output directory:
//!
//! ```text
//! labels/<key>.json            full labeled set per condition
//! models/<id>/                 checkpoint, model.json, result.json
//! reports/scores.csv           every validation and test score
//! reports/downstream.csv
//! reports/{selections,rank_corr,win_rates}.csv
//! traversals/<id>.pgm          for every selected model
//! ```
//!
//! A member whose `result.json` exists is not retrained or re-evaluated.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::GroundTruthModel;
use crate::downstream::{downstream_report, DownstreamCell, DownstreamConfig};
use crate::error::{Error, Result};
use crate::harness::ids::{LabelKey, ModelId};
use crate::harness::reports::{format_downstream, format_scores, sort_rows, Reports, ScoreRow, RS, TEST_SPLIT};
use crate::harness::spec::{CorruptionKind, DataSpec, ExperimentSpec};
use crate::harness::traversal::traversal_grid;
use crate::labeling::{
    corrupt_bin, corrupt_noise, corrupt_partial, corrupt_permute, draw_labeled_subset, split_train_val, LabeledSet,
};
use crate::metrics::{evaluate_test, evaluate_validation, EvalConfig, InterventionConfig, Metric};
use crate::seed::SeedMixer;
use crate::vae::{train, Method, MethodConfig, TrainedModel};

pub fn load_data(spec: &ExperimentSpec) -> Result<GroundTruthModel> {
    match &spec.data {
        DataSpec::Builtin { resolution } => GroundTruthModel::mini_shapes(*resolution),
        DataSpec::Import(path) => GroundTruthModel::import_factor_table(path),
    }
}

/// One labeled set and its train/validation split.
#[derive(Clone, Debug)]
pub struct LabelSets {
    pub full: LabeledSet,
    pub train: LabeledSet,
    pub val: LabeledSet,
}

pub fn label_keys(spec: &ExperimentSpec) -> Vec<LabelKey> {
    let mut keys = Vec::new();
    for &budget in &spec.budgets {
        for &corruption in &spec.corruptions {
            for seed in 0..spec.label_seeds {
                keys.push(LabelKey { budget, corruption, seed });
            }
        }
    }
    keys
}

/// Corruptions of one perfect draw per (budget, label seed), so every
/// corruption mode sees the same images and the same train/val split.
pub fn build_label_sets(spec: &ExperimentSpec, data: &GroundTruthModel) -> Result<BTreeMap<LabelKey, LabelSets>> {
    let mix = SeedMixer::new(spec.seed);
    let mut out = BTreeMap::new();
    for key in label_keys(spec) {
        let stream = |tag: &str| mix.tag(tag).int(key.budget as u64).int(key.seed as u64);
        let perfect = draw_labeled_subset(data, key.budget, stream("labels").finish())?;
        let corrupt_seed = stream("corrupt").tag(key.corruption.name()).finish();
        let full = match key.corruption {
            CorruptionKind::Perfect => perfect,
            CorruptionKind::Binned => corrupt_bin(&perfect, spec.bins)?,
            CorruptionKind::Noisy => corrupt_noise(&perfect, spec.noise, corrupt_seed)?,
            CorruptionKind::Partial => corrupt_partial(&perfect, spec.partial_factors, corrupt_seed)?,
            CorruptionKind::Permuted => corrupt_permute(&perfect, corrupt_seed)?,
        };
        let (train, val) = split_train_val(&full, spec.split_ratio, stream("split").finish())?;
        out.insert(key, LabelSets { full, train, val });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Job {
    pub id: ModelId,
    pub config: MethodConfig,
}

fn job_config(spec: &ExperimentSpec, method: Method, strength: f64, gamma_sup: f64, seed: u64) -> MethodConfig {
    let mut c = MethodConfig::new(method, strength, gamma_sup, seed)
        .with_architecture(spec.architecture)
        .with_steps(spec.steps);
    c.batch_size = spec.batch_size;
    c.latent_dim = spec.latent_dim;
    c.learning_rate = spec.learning_rate;
    if method == Method::FactorVae {
        if let Some(w) = spec.discriminator_width {
            c.discriminator_width = Some(w);
        }
    }
    c
}

/// Every cohort member of the experiment: U/S cohorts (grid x seeds, shared by
/// all label conditions), one S2/S cohort (grid x supervised grid) per
/// method and label condition, and one baseline cohort per condition.
pub fn enumerate_jobs(spec: &ExperimentSpec) -> Vec<Job> {
    let mix = SeedMixer::new(spec.seed);
    let mut jobs = Vec::new();
    for m in spec.methods() {
        for (gi, &strength) in m.grid.iter().enumerate() {
            for si in 0..spec.us_seeds {
                let seed = mix.tag("us").tag(m.method.name()).int(gi as u64).int(si as u64).finish();
                jobs.push(Job {
                    id: ModelId::Us { method: m.method, grid: gi, seed: si },
                    config: job_config(spec, m.method, strength, 0.0, seed),
                });
            }
        }
    }
    for key in label_keys(spec) {
        let label_tag = key.to_string();
        for m in spec.methods() {
            for (gi, &strength) in m.grid.iter().enumerate() {
                for (ui, &gamma_sup) in m.sup_grid.iter().enumerate() {
                    let seed = mix
                        .tag("s2s")
                        .tag(m.method.name())
                        .tag(&label_tag)
                        .int(gi as u64)
                        .int(ui as u64)
                        .finish();
                    jobs.push(Job {
                        id: ModelId::S2s { method: m.method, key, grid: gi, sup: ui },
                        config: job_config(spec, m.method, strength, gamma_sup, seed),
                    });
                }
            }
        }
        if spec.baseline {
            for si in 0..spec.us_seeds {
                let seed = mix.tag("base").tag(&label_tag).int(0).int(si as u64).finish();
                jobs.push(Job {
                    id: ModelId::Base { key, seed: si },
                    config: job_config(spec, Method::SupervisedOnly, 0.0, 1.0, seed),
                });
            }
        }
    }
    jobs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub id: String,
    pub config: MethodConfig,
    pub train_seconds: f64,
    /// Set when training or evaluation aborted; such members have no scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub scores: Vec<ScoreRow>,
    pub downstream: Vec<DownstreamCell>,
}

/// Shared, immutable inputs of every job.
pub struct Context<'a> {
    pub spec: &'a ExperimentSpec,
    pub data: &'a GroundTruthModel,
    pub labels: &'a BTreeMap<LabelKey, LabelSets>,
    pub models_dir: PathBuf,
}

impl Context<'_> {
    fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            bins: self.spec.metric_bins,
            test_samples: self.spec.test_samples,
            intervention: InterventionConfig {
                n_train: self.spec.intervention_train,
                n_test: self.spec.intervention_test,
                ..InterventionConfig::default()
            },
        }
    }

    pub fn test_seed(&self) -> u64 {
        SeedMixer::new(self.spec.seed).tag("test").finish()
    }

    fn downstream_seed(&self) -> u64 {
        SeedMixer::new(self.spec.seed).tag("downstream").finish()
    }

    fn labels_for(&self, key: LabelKey) -> Result<&LabelSets> {
        self.labels
            .get(&key)
            .ok_or_else(|| Error::Config(format!("no labeled set for {key}")))
    }

    pub fn model_dir(&self, id: &ModelId) -> PathBuf {
        self.models_dir.join(id.to_string())
    }
}

fn score_rows(id: &str, split: &str, n: usize, seed: u64, scores: &[(Metric, f64)]) -> Vec<ScoreRow> {
    scores
        .iter()
        .map(|&(m, value)| ScoreRow {
            model_id: id.to_string(),
            split: split.to_string(),
            metric: m.name().to_string(),
            value,
            n,
            seed,
        })
        .collect()
}

fn train_or_load(ctx: &Context<'_>, job: &Job, dir: &Path) -> Result<TrainedModel> {
    if TrainedModel::is_saved(dir) {
        return TrainedModel::load(dir);
    }
    let labeled = match job.id.label_key() {
        Some(key) => Some(&ctx.labels_for(key)?.train),
        None => None,
    };
    log::info!("training {}", job.id);
    let model = train(&job.config, ctx.data, labeled)?;
    model.save(dir)?;
    Ok(model)
}

fn evaluate_member(ctx: &Context<'_>, job: &Job, model: &TrainedModel) -> Result<(Vec<ScoreRow>, Vec<DownstreamCell>)> {
    let id = job.id.to_string();
    let mut rows = Vec::new();
    match job.id.label_key() {
        None => {
            for (&key, sets) in ctx.labels {
                let r = evaluate_validation(ctx.data, model, &sets.full, &Metric::VALIDATION, ctx.spec.metric_bins)?;
                rows.extend(score_rows(&id, &key.labels_split(), sets.full.len(), sets.full.seed, &r.scores));
            }
        }
        Some(key) => {
            let val = &ctx.labels_for(key)?.val;
            rows.push(ScoreRow {
                model_id: id.clone(),
                split: key.val_split(),
                metric: RS.to_string(),
                value: model.supervised_loss(ctx.data, val)?,
                n: val.len(),
                seed: val.seed,
            });
        }
    }
    let test = evaluate_test(ctx.data, model, &ctx.eval_config(), ctx.test_seed())?;
    for note in &test.notes {
        log::warn!("{id}: {note}");
    }
    rows.extend(score_rows(&id, TEST_SPLIT, test.samples, test.seed, &test.scores));
    let downstream = if ctx.spec.downstream {
        let cfg = DownstreamConfig {
            sizes: ctx.spec.downstream_sizes.clone(),
            test_samples: ctx.spec.downstream_test,
            ..DownstreamConfig::default()
        };
        downstream_report(ctx.data, model, &cfg, ctx.downstream_seed())?.cells
    } else {
        Vec::new()
    };
    Ok((rows, downstream))
}

/// Trains (or loads) and evaluates one member. Errors are captured in the
/// result rather than propagated, so one member cannot sink its cohort.
pub fn run_job(ctx: &Context<'_>, job: &Job) -> Result<ModelResult> {
    let dir = ctx.model_dir(&job.id);
    let result_path = dir.join("result.json");
    if result_path.exists() {
        let result: ModelResult = serde_json::from_str(&fs::read_to_string(&result_path)?)?;
        if result.config == job.config {
            return Ok(result);
        }
        log::warn!("{}: stored result has a different config, recomputing", job.id);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
    }
    fs::create_dir_all(&dir)?;
    let outcome = train_or_load(ctx, job, &dir).and_then(|model| {
        let (scores, downstream) = evaluate_member(ctx, job, &model)?;
        Ok((model.train_seconds, scores, downstream))
    });
    let result = match outcome {
        Ok((train_seconds, mut scores, downstream)) => {
            sort_rows(&mut scores);
            ModelResult {
                id: job.id.to_string(),
                config: job.config.clone(),
                train_seconds,
                failure: None,
                scores,
                downstream,
            }
        }
        Err(e) => {
            log::error!("{} failed: {e}", job.id);
            ModelResult {
                id: job.id.to_string(),
                config: job.config.clone(),
                train_seconds: 0.0,
                failure: Some(e.to_string()),
                scores: Vec::new(),
                downstream: Vec::new(),
            }
        }
    };
    let tmp = dir.join("result.json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(&result)?)?;
    fs::rename(&tmp, &result_path)?;
    Ok(result)
}

#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    pub results: Vec<ModelResult>,
    pub reports: Reports,
    /// Artifacts that could not be written; the run counts as failed.
    pub report_errors: Vec<String>,
}

impl ExperimentSummary {
    pub fn failed_members(&self) -> impl Iterator<Item = &ModelResult> {
        self.results.iter().filter(|r| r.failure.is_some())
    }
}

pub const TRAVERSAL_RANGE: (f32, f32) = (-2.0, 2.0);
pub const TRAVERSAL_STEPS: usize = 7;

pub fn traversal_extension(channels: usize) -> &'static str {
    if channels == 3 {
        "ppm"
    } else {
        "pgm"
    }
}

/// Runs the whole sweep with at most `workers` members in flight.
pub fn run_experiment(spec: &ExperimentSpec, workers: usize) -> Result<ExperimentSummary> {
    spec.validate()?;
    let data = load_data(spec)?;
    let labels = build_label_sets(spec, &data)?;
    let out = &spec.output;
    let reports_dir = out.join("reports");
    let labels_dir = out.join("labels");
    fs::create_dir_all(&reports_dir)?;
    fs::create_dir_all(&labels_dir)?;
    for (key, sets) in &labels {
        sets.full.save(labels_dir.join(format!("{key}.json")))?;
    }
    let ctx = Context {
        spec,
        data: &data,
        labels: &labels,
        models_dir: out.join("models"),
    };
    let jobs = enumerate_jobs(spec);
    log::info!("{} cohort members, {} label sets, {workers} workers", jobs.len(), labels.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<ModelResult> =
        pool.install(|| jobs.par_iter().map(|job| run_job(&ctx, job)).collect::<Result<Vec<_>>>())?;

    let mut report_errors = Vec::new();
    let mut rows: Vec<ScoreRow> = results.iter().flat_map(|r| r.scores.iter().cloned()).collect();
    sort_rows(&mut rows);
    fs::write(reports_dir.join("scores.csv"), format_scores(&rows))?;
    let mut cells: Vec<(String, DownstreamCell)> = results
        .iter()
        .flat_map(|r| r.downstream.iter().map(|c| (r.id.clone(), c.clone())))
        .collect();
    cells.sort_by(|a, b| {
        (&a.0, a.1.classifier.name(), a.1.train_size, a.1.factor).cmp(&(&b.0, b.1.classifier.name(), b.1.train_size, b.1.factor))
    });
    fs::write(reports_dir.join("downstream.csv"), format_downstream(&cells))?;
    let mut failures = String::from("model_id,error\n");
    for r in results.iter().filter(|r| r.failure.is_some()) {
        let msg = r.failure.as_deref().unwrap_or("").replace([',', '\n'], ";");
        failures.push_str(&format!("{},{msg}\n", r.id));
    }
    fs::write(reports_dir.join("failures.csv"), failures)?;

    let reports = match Reports::from_scores(&rows).and_then(|r| r.write(&reports_dir).map(|_| r)) {
        Ok(r) => r,
        Err(e) => {
            report_errors.push(format!("derived reports: {e}"));
            Reports::default()
        }
    };

    // Baselines have no decoder to traverse.
    let selected: BTreeSet<&str> = reports
        .selections
        .iter()
        .filter(|s| s.method != Method::SupervisedOnly)
        .map(|s| s.model_id.as_str())
        .collect();
    if !selected.is_empty() {
        let trav_dir = out.join("traversals");
        fs::create_dir_all(&trav_dir)?;
        let base_config = data
            .sample_factors_seeded(1, SeedMixer::new(spec.seed).tag("traversal").finish())?
            .row(0)
            .to_vec();
        let base = data.render_one(&base_config)?;
        for id in selected {
            let written = (|| -> Result<()> {
                let model = TrainedModel::load(ctx.models_dir.join(id))?;
                let grid = traversal_grid(&model, &base, TRAVERSAL_RANGE.0, TRAVERSAL_RANGE.1, TRAVERSAL_STEPS)?;
                grid.write_pnm(trav_dir.join(format!("{id}.{}", traversal_extension(grid.channels))))
            })();
            if let Err(e) = written {
                report_errors.push(format!("traversal {id}: {e}"));
            }
        }
    }
    Ok(ExperimentSummary {
        results,
        reports,
        report_errors,
    })
}
