//! CSV reports. Everything except `downstream.csv` is derived from the
//! rows of `scores.csv`, so [`Reports::from_scores`] can rebuild the
//! selection, rank-correlation and win-rate tables offline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::downstream::DownstreamCell;
use crate::error::{Error, Result};
use crate::harness::ids::{LabelKey, ModelId};
use crate::harness::select::{select, Strategy};
use crate::harness::spec::CorruptionKind;
use crate::harness::stats::{binomial_se, spearman, win_rates};
use crate::metrics::Metric;
use crate::vae::Method;

pub const RS: &str = "Rs";
pub const TEST_SPLIT: &str = "test";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model_id: String,
    pub split: String,
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub seed: u64,
}

const SCORES_HEADER: &str = "model_id,split,metric,value,n,seed";

pub fn sort_rows(rows: &mut [ScoreRow]) {
    rows.sort_by(|a, b| {
        (&a.model_id, &a.split, &a.metric)
            .cmp(&(&b.model_id, &b.split, &b.metric))
    });
}

pub fn format_scores(rows: &[ScoreRow]) -> String {
    let mut out = String::from(SCORES_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.model_id, r.split, r.metric, r.value, r.n, r.seed);
    }
    out
}

pub fn parse_scores(text: &str) -> Result<Vec<ScoreRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(SCORES_HEADER) {
        return Err(Error::Config(format!("scores file must start with '{SCORES_HEADER}'")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = |what: &str| Error::Config(format!("scores line {}: bad {what}", i + 2));
            let f: Vec<&str> = l.trim().split(',').collect();
            if f.len() != 6 {
                return Err(bad("field count"));
            }
            Ok(ScoreRow {
                model_id: f[0].to_string(),
                split: f[1].to_string(),
                metric: f[2].to_string(),
                value: f[3].parse().map_err(|_| bad("value"))?,
                n: f[4].parse().map_err(|_| bad("n"))?,
                seed: f[5].parse().map_err(|_| bad("seed"))?,
            })
        })
        .collect()
}

pub fn format_downstream(rows: &[(String, DownstreamCell)]) -> String {
    let mut out = String::from("model_id,classifier,train_size,factor,accuracy\n");
    for (id, c) in rows {
        let acc = c.accuracy.map_or("null".to_string(), |a| a.to_string());
        let _ = writeln!(out, "{id},{},{},{},{acc}", c.classifier.name(), c.train_size, c.factor);
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or("null".to_string(), |v| v.to_string())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionRow {
    pub method: Method,
    pub key: LabelKey,
    pub strategy: Strategy,
    pub model_id: String,
    pub score: f64,
    pub ties: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankCorrRow {
    /// `None` pools the U/S members of every method.
    pub method: Option<Method>,
    pub key: LabelKey,
    pub validation: Metric,
    pub test: Metric,
    pub members: usize,
    pub spearman: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WinRateRow {
    pub comparison: &'static str,
    pub method: Method,
    pub budget: usize,
    pub corruption: CorruptionKind,
    pub strategy: String,
    pub wins: f64,
    pub trials: usize,
    pub probability: f64,
    pub standard_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Reports {
    pub selections: Vec<SelectionRow>,
    pub rank_corr: Vec<RankCorrRow>,
    pub win_rates: Vec<WinRateRow>,
}

/// Test metrics over which win-rate trials are formed.
pub const WIN_METRICS: [Metric; 3] = [Metric::Mig, Metric::Dci, Metric::Sap];

struct Index {
    values: BTreeMap<(String, String, String), f64>,
    ids: BTreeSet<ModelId>,
    keys: BTreeSet<LabelKey>,
}

impl Index {
    fn new(rows: &[ScoreRow]) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut ids = BTreeSet::new();
        let mut keys = BTreeSet::new();
        for r in rows {
            let id: ModelId = r.model_id.parse()?;
            ids.insert(id);
            if let Some(k) = r.split.strip_prefix("labels.").or_else(|| r.split.strip_prefix("val.")) {
                keys.insert(k.parse()?);
            }
            if let Some(k) = id.label_key() {
                keys.insert(k);
            }
            values.insert((r.model_id.clone(), r.split.clone(), r.metric.clone()), r.value);
        }
        Ok(Self { values, ids, keys })
    }

    fn get(&self, id: &ModelId, split: &str, metric: &str) -> Option<f64> {
        self.values
            .get(&(id.to_string(), split.to_string(), metric.to_string()))
            .copied()
    }

    fn members(&self, f: impl Fn(&ModelId) -> bool) -> Vec<ModelId> {
        self.ids.iter().copied().filter(|id| f(id)).collect()
    }

    fn methods(&self) -> BTreeSet<Method> {
        self.ids
            .iter()
            .filter(|id| !matches!(id, ModelId::Base { .. }))
            .map(|id| id.method())
            .collect()
    }

    fn pick(&self, members: &[ModelId], split: &str, metric: &str, strategy: Strategy) -> Option<(ModelId, f64, usize)> {
        let ids: Vec<String> = members.iter().map(|m| m.to_string()).collect();
        let scores: Vec<Option<f64>> = members.iter().map(|m| self.get(m, split, metric)).collect();
        let out = select(&ids, &scores, strategy).ok()?;
        Some((members[out.index], out.score, out.tied_with.len()))
    }
}

impl Reports {
    pub fn from_scores(rows: &[ScoreRow]) -> Result<Self> {
        let ix = Index::new(rows)?;
        let mut reports = Reports::default();
        let mut chosen: BTreeMap<(Method, LabelKey, Strategy), ModelId> = BTreeMap::new();
        let mut record = |reports: &mut Reports, method, key, strategy, pick: Option<(ModelId, f64, usize)>| {
            if let Some((id, score, ties)) = pick {
                chosen.insert((method, key, strategy), id);
                reports.selections.push(SelectionRow {
                    method,
                    key,
                    strategy,
                    model_id: id.to_string(),
                    score,
                    ties,
                });
            }
        };
        for &key in &ix.keys {
            for method in ix.methods() {
                let us = ix.members(|id| matches!(id, ModelId::Us { method: m, .. } if *m == method));
                for v in Metric::SELECTION {
                    let s = Strategy::Unsupervised(v);
                    record(&mut reports, method, key, s, ix.pick(&us, &key.labels_split(), v.name(), s));
                }
                let s2s = ix.members(|id| matches!(id, ModelId::S2s { method: m, key: k, .. } if *m == method && *k == key));
                let s = Strategy::SemiSupervised;
                record(&mut reports, method, key, s, ix.pick(&s2s, &key.val_split(), RS, s));
            }
            let base = ix.members(|id| matches!(id, ModelId::Base { key: k, .. } if *k == key));
            let s = Strategy::Baseline;
            record(&mut reports, Method::SupervisedOnly, key, s, ix.pick(&base, &key.val_split(), RS, s));
        }

        for &key in &ix.keys {
            let mut groups: Vec<Option<Method>> = ix.methods().into_iter().map(Some).collect();
            groups.push(None);
            for group in groups {
                let us = ix.members(|id| matches!(id, ModelId::Us { method, .. } if group.is_none_or(|g| g == *method)));
                if us.is_empty() {
                    continue;
                }
                for v in Metric::SELECTION {
                    for t in Metric::BOUNDED {
                        let pairs: Vec<(f64, f64)> = us
                            .iter()
                            .filter_map(|id| Some((ix.get(id, &key.labels_split(), v.name())?, ix.get(id, TEST_SPLIT, t.name())?)))
                            .collect();
                        if pairs.is_empty() {
                            continue;
                        }
                        let (x, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
                        let rho = if pairs.len() >= 3 { spearman(&x, &y) } else { None };
                        reports.rank_corr.push(RankCorrRow {
                            method: group,
                            key,
                            validation: v,
                            test: t,
                            members: pairs.len(),
                            spearman: rho,
                        });
                    }
                }
            }
        }

        let conditions: BTreeSet<(usize, CorruptionKind)> = ix.keys.iter().map(|k| k.condition()).collect();
        for (budget, corruption) in conditions {
            let keys: Vec<LabelKey> = ix.keys.iter().copied().filter(|k| k.condition() == (budget, corruption)).collect();
            for method in ix.methods() {
                let test = |id: Option<&ModelId>, m: Metric| id.and_then(|id| ix.get(id, TEST_SPLIT, m.name()));
                // U/S against S2/S: one trial per (label seed, test metric),
                // the U/S validation metric averaged out over its choices.
                let mut expanded = Vec::new();
                let mut s2s_base = Vec::new();
                for &key in &keys {
                    let s2s = chosen.get(&(method, key, Strategy::SemiSupervised));
                    let base = chosen.get(&(Method::SupervisedOnly, key, Strategy::Baseline));
                    for tm in WIN_METRICS {
                        let b = test(s2s, tm);
                        let us: Vec<Option<f64>> = Metric::SELECTION
                            .iter()
                            .map(|&v| test(chosen.get(&(method, key, Strategy::Unsupervised(v))), tm))
                            .collect();
                        if let (Some(b), true) = (b, us.iter().all(Option::is_some)) {
                            expanded.extend(us.iter().map(|a| vec![a.unwrap(), b]));
                        }
                        if let (Some(b), Some(c)) = (b, test(base, tm)) {
                            s2s_base.push(vec![b, c]);
                        }
                    }
                }
                let per_trial = Metric::SELECTION.len();
                for (comparison, trials, names, scale) in [
                    ("us-vs-s2s", &expanded, ["U/S", "S2/S"], per_trial),
                    ("s2s-vs-baseline", &s2s_base, ["S2/S", "baseline"], 1),
                ] {
                    if trials.is_empty() {
                        continue;
                    }
                    let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
                    let n = trials.len() / scale;
                    for w in win_rates(&names, trials) {
                        reports.win_rates.push(WinRateRow {
                            comparison,
                            method,
                            budget,
                            corruption,
                            strategy: w.strategy,
                            wins: w.wins / scale as f64,
                            trials: n,
                            probability: w.probability,
                            standard_error: binomial_se(w.probability, n),
                        });
                    }
                }
            }
        }
        Ok(reports)
    }

    pub fn selections_csv(&self) -> String {
        let mut out = String::from("method,labels,strategy,model_id,score,ties\n");
        for s in &self.selections {
            let _ = writeln!(out, "{},{},{},{},{},{}", s.method, s.key, s.strategy, s.model_id, s.score, s.ties);
        }
        out
    }

    pub fn rank_corr_csv(&self) -> String {
        let mut out = String::from("method,labels,validation_metric,test_metric,members,spearman\n");
        for r in &self.rank_corr {
            let method = r.method.map_or("all", |m| m.name());
            let _ = writeln!(
                out,
                "{method},{},{},{},{},{}",
                r.key,
                r.validation,
                r.test,
                r.members,
                opt(r.spearman)
            );
        }
        out
    }

    pub fn win_rates_csv(&self) -> String {
        let mut out = String::from("comparison,method,budget,corruption,strategy,wins,trials,probability,standard_error\n");
        for w in &self.win_rates {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                w.comparison,
                w.method,
                w.budget,
                w.corruption.name(),
                w.strategy,
                w.wins,
                w.trials,
                w.probability,
                w.standard_error
            );
        }
        out
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("selections.csv"), self.selections_csv())?;
        fs::write(dir.join("rank_corr.csv"), self.rank_corr_csv())?;
        fs::write(dir.join("win_rates.csv"), self.win_rates_csv())?;
        Ok(())
    }
}

/// Rebuilds the derived reports from `<dir>/scores.csv` and writes them
/// next to it.
pub fn rebuild_reports(dir: impl AsRef<Path>) -> Result<Reports> {
    let dir = dir.as_ref();
    let rows = parse_scores(&fs::read_to_string(dir.join("scores.csv"))?)?;
    let reports = Reports::from_scores(&rows)?;
    reports.write(dir)?;
    Ok(reports)
}
