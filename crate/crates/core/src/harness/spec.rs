//! Experiment spec files.
//!
//! ```text
//! # comments start with '#'
//! [experiment]
//! seed = 3
//! output = runs/demo
//!
//! [data]
//! builtin = mini-shapes      # or: import = path/to/table.ftable
//! resolution = 16
//!
//! [labels]
//! budgets = 100, 1000
//! corruptions = perfect, binned, noisy, partial, permuted
//! seeds = 5
//!
//! [methods]
//! list = beta-vae, factor-vae
//! beta-vae.grid = 1, 2, 4
//! beta-vae.sup_grid = 1, 16
//! baseline = true
//!
//! [training]
//! steps = 10000
//! us_seeds = 6
//! architecture = mlp-small
//!
//! [evaluation]
//! test_samples = 10000
//! downstream_sizes = 10, 100, 1000, 10000
//! ```
//!
//! Every key is optional; unknown sections or keys are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::labeling::Corruption;
use crate::vae::{Architecture, Method};

#[derive(Clone, Debug, PartialEq)]
pub enum DataSpec {
    Builtin { resolution: usize },
    Import(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CorruptionKind {
    Perfect,
    Binned,
    Noisy,
    Partial,
    Permuted,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 5] = [
        CorruptionKind::Perfect,
        CorruptionKind::Binned,
        CorruptionKind::Noisy,
        CorruptionKind::Partial,
        CorruptionKind::Permuted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::Perfect => "perfect",
            CorruptionKind::Binned => "binned",
            CorruptionKind::Noisy => "noisy",
            CorruptionKind::Partial => "partial",
            CorruptionKind::Permuted => "permuted",
        }
    }

    pub fn of(c: &Corruption) -> Self {
        match c {
            Corruption::Perfect => CorruptionKind::Perfect,
            Corruption::Binned { .. } => CorruptionKind::Binned,
            Corruption::Noisy { .. } => CorruptionKind::Noisy,
            Corruption::Partial { .. } => CorruptionKind::Partial,
            Corruption::Permuted { .. } => CorruptionKind::Permuted,
        }
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown corruption '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodGrid {
    pub method: Method,
    pub grid: Vec<f64>,
    pub sup_grid: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub output: PathBuf,
    pub data: DataSpec,
    pub budgets: Vec<usize>,
    pub corruptions: Vec<CorruptionKind>,
    pub label_seeds: usize,
    pub bins: usize,
    pub noise: f64,
    pub partial_factors: usize,
    pub split_ratio: f64,
    pub methods: Vec<MethodGrid>,
    pub baseline: bool,
    pub steps: usize,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub architecture: Architecture,
    pub us_seeds: usize,
    pub discriminator_width: Option<usize>,
    pub test_samples: usize,
    pub metric_bins: usize,
    pub intervention_train: usize,
    pub intervention_test: usize,
    pub downstream: bool,
    pub downstream_sizes: Vec<usize>,
    pub downstream_test: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            output: PathBuf::from("runs"),
            data: DataSpec::Builtin { resolution: 16 },
            budgets: vec![100, 1000],
            corruptions: vec![CorruptionKind::Perfect],
            label_seeds: 5,
            bins: 5,
            noise: 0.1,
            partial_factors: 2,
            split_ratio: 0.9,
            methods: Method::UNSUPERVISED.into_iter().map(MethodGrid::default_for).collect(),
            baseline: true,
            steps: crate::vae::config::DEFAULT_STEPS,
            batch_size: crate::vae::config::DEFAULT_BATCH,
            latent_dim: crate::vae::config::DEFAULT_LATENT,
            learning_rate: crate::vae::config::DEFAULT_LR,
            architecture: Architecture::MlpSmall,
            us_seeds: 6,
            discriminator_width: None,
            test_samples: 10_000,
            metric_bins: crate::metrics::DEFAULT_BINS,
            intervention_train: 1000,
            intervention_test: 500,
            downstream: true,
            downstream_sizes: crate::downstream::SIZES.to_vec(),
            downstream_test: 1000,
        }
    }
}

impl MethodGrid {
    pub fn default_for(method: Method) -> Self {
        Self {
            method,
            grid: method.default_grid(),
            sup_grid: method.default_sup_grid(),
        }
    }
}

fn list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("'{s}': {e}")))
        .collect()
}

fn scalar<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("'{value}': {e}"))
}

fn boolean(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("'{value}' is not a boolean")),
    }
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = ExperimentSpec::default();
        let mut section = String::from("experiment");
        let mut grids: BTreeMap<Method, (Option<Vec<f64>>, Option<Vec<f64>>)> = BTreeMap::new();
        let mut method_list: Option<Vec<Method>> = None;
        let mut smoke = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: String| Error::SpecFile { line: line_no, message };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err("unterminated section header".into()))?
                    .trim();
                if !["experiment", "data", "labels", "methods", "training", "evaluation"].contains(&name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected 'key = value'".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let r: std::result::Result<(), String> = (|| {
                match (section.as_str(), key) {
                    ("experiment", "seed") => spec.seed = scalar(value)?,
                    ("experiment", "output") => spec.output = PathBuf::from(value),
                    ("experiment", "profile") => match value {
                        "smoke" => smoke = true,
                        "default" => smoke = false,
                        _ => return Err(format!("unknown profile '{value}'")),
                    },
                    ("data", "builtin") => {
                        if value != "mini-shapes" {
                            return Err(format!("unknown builtin data set '{value}'"));
                        }
                        if let DataSpec::Import(_) = spec.data {
                            spec.data = DataSpec::Builtin { resolution: 16 };
                        }
                    }
                    ("data", "resolution") => spec.data = DataSpec::Builtin { resolution: scalar(value)? },
                    ("data", "import") => spec.data = DataSpec::Import(PathBuf::from(value)),
                    ("labels", "budgets") => spec.budgets = list(value)?,
                    ("labels", "corruptions") => spec.corruptions = list(value)?,
                    ("labels", "seeds") => spec.label_seeds = scalar(value)?,
                    ("labels", "bins") => spec.bins = scalar(value)?,
                    ("labels", "noise") => spec.noise = scalar(value)?,
                    ("labels", "partial_factors") => spec.partial_factors = scalar(value)?,
                    ("labels", "split") => spec.split_ratio = scalar(value)?,
                    ("methods", "list") => method_list = Some(list(value)?),
                    ("methods", "baseline") => spec.baseline = boolean(value)?,
                    ("methods", k) => {
                        let (m, field) = k.split_once('.').ok_or_else(|| format!("unknown key '{k}'"))?;
                        let m: Method = m.parse().map_err(|e| format!("{e}"))?;
                        let entry = grids.entry(m).or_default();
                        match field {
                            "grid" => entry.0 = Some(list(value)?),
                            "sup_grid" => entry.1 = Some(list(value)?),
                            _ => return Err(format!("unknown key '{k}'")),
                        }
                    }
                    ("training", "steps") => spec.steps = scalar(value)?,
                    ("training", "batch") => spec.batch_size = scalar(value)?,
                    ("training", "latent") => spec.latent_dim = scalar(value)?,
                    ("training", "learning_rate") => spec.learning_rate = scalar(value)?,
                    ("training", "architecture") => spec.architecture = scalar(value)?,
                    ("training", "us_seeds") => spec.us_seeds = scalar(value)?,
                    ("training", "discriminator_width") => spec.discriminator_width = Some(scalar(value)?),
                    ("evaluation", "test_samples") => spec.test_samples = scalar(value)?,
                    ("evaluation", "bins") => spec.metric_bins = scalar(value)?,
                    ("evaluation", "intervention_train") => spec.intervention_train = scalar(value)?,
                    ("evaluation", "intervention_test") => spec.intervention_test = scalar(value)?,
                    ("evaluation", "downstream") => spec.downstream = boolean(value)?,
                    ("evaluation", "downstream_sizes") => spec.downstream_sizes = list(value)?,
                    ("evaluation", "downstream_test") => spec.downstream_test = scalar(value)?,
                    (s, k) => return Err(format!("unknown key '{k}' in [{s}]")),
                }
                Ok(())
            })();
            r.map_err(err)?;
        }
        if let Some(methods) = method_list {
            spec.methods = methods.into_iter().map(MethodGrid::default_for).collect();
        }
        for (method, (grid, sup)) in grids {
            let Some(entry) = spec.methods.iter_mut().find(|m| m.method == method) else {
                return Err(Error::Config(format!("grid given for {method}, which is not in the method list")));
            };
            if let Some(g) = grid {
                entry.grid = g;
            }
            if let Some(s) = sup {
                entry.sup_grid = s;
            }
        }
        if smoke {
            spec.apply_smoke();
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Two seeds, two grid points, 2000 steps, 2000 test samples and
    /// downstream sizes up to 1000.
    pub fn apply_smoke(&mut self) {
        self.label_seeds = self.label_seeds.min(2);
        self.us_seeds = self.us_seeds.min(2);
        for m in &mut self.methods {
            m.grid.truncate(2);
            m.sup_grid.truncate(2);
        }
        self.steps = self.steps.min(2000);
        self.test_samples = self.test_samples.min(2000);
        self.downstream_sizes.retain(|&s| s <= 1000);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.budgets.is_empty() || self.budgets.iter().any(|&b| b < 10) {
            return bad("label budgets must be nonempty and at least 10".into());
        }
        if self.corruptions.is_empty() {
            return bad("no corruption modes".into());
        }
        if self.label_seeds == 0 || self.us_seeds == 0 {
            return bad("seed counts must be positive".into());
        }
        if self.methods.is_empty() {
            return bad("no methods".into());
        }
        for m in &self.methods {
            if m.method == Method::SupervisedOnly {
                return bad("supervised-only is the baseline; enable it with 'baseline = true'".into());
            }
            if m.grid.is_empty() || m.sup_grid.is_empty() {
                return bad(format!("{} has an empty grid", m.method));
            }
        }
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if self.test_samples < 20 {
            return bad("test_samples must be at least 20".into());
        }
        if let DataSpec::Builtin { resolution } = self.data {
            if ![16, 32, 64].contains(&resolution) {
                return bad(format!("unsupported resolution {resolution}"));
            }
        }
        Ok(())
    }

    pub fn methods(&self) -> impl Iterator<Item = &MethodGrid> {
        self.methods.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_cohort_sizes() {
        let spec = ExperimentSpec::parse("").unwrap();
        for m in spec.methods() {
            assert_eq!(m.grid.len() * spec.us_seeds, 36);
            assert_eq!(m.grid.len() * m.sup_grid.len(), 36);
        }
    }

    #[test]
    fn parses_sections() {
        let text = "seed = 4\n[labels]\nbudgets = 100\ncorruptions = binned, noisy # two\n[methods]\nlist = beta-tcvae\nbeta-tcvae.grid = 1, 10\n";
        let spec = ExperimentSpec::parse(text).unwrap();
        assert_eq!(spec.seed, 4);
        assert_eq!(spec.budgets, [100]);
        assert_eq!(spec.corruptions, [CorruptionKind::Binned, CorruptionKind::Noisy]);
        assert_eq!(spec.methods[0].grid, [1.0, 10.0]);
        assert_eq!(spec.methods[0].sup_grid, Method::BetaTcvae.default_sup_grid());
    }

    #[test]
    fn errors_name_the_line() {
        let err = ExperimentSpec::parse("[training]\nsteps = many\n").unwrap_err();
        assert!(matches!(err, Error::SpecFile { line: 2, .. }));
        let err = ExperimentSpec::parse("[nope]\n").unwrap_err();
        assert!(matches!(err, Error::SpecFile { line: 1, .. }));
    }

    #[test]
    fn smoke_profile() {
        let spec = ExperimentSpec::parse("profile = smoke\n").unwrap();
        assert_eq!((spec.label_seeds, spec.us_seeds, spec.steps), (2, 2, 2000));
        assert!(spec.methods().all(|m| m.grid.len() == 2 && m.sup_grid.len() == 2));
        assert_eq!(spec.downstream_sizes, [10, 100, 1000]);
    }
}
