use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use paud::eval::{Axis, AxisValue, ExperimentConfig, SweepSpec};
use serde::{Deserialize, Serialize};

/// One experiment's configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed; every module seed is derived from it.
    #[serde(default)]
    pub seed: u64,
    /// Relative paths are resolved against the config file's directory.
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub serve: ServeConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("paud-out")
}

/// External corpora. Without them, commands read what `gen-synthetic` wrote.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub corpus: Option<PathBuf>,
    /// Reference users for the shadows; defaults to a slice of `corpus`.
    pub reference: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeConfig {
    pub addr: String,
    /// Per-connection query budget.
    pub budget: Option<usize>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { addr: "127.0.0.1:7878".into(), budget: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    /// Address of a served target; audits the local checkpoint when unset.
    pub target: Option<String>,
    pub budget: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: Axis,
    pub values: Vec<AxisValue>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
}

fn default_repetitions() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Share of most frequent training words counted as the head band.
    pub band_fraction: f64,
    pub logprob_bins: usize,
    pub bucket_size: usize,
    pub ablation_fractions: Vec<f64>,
    pub head_fraction: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            band_fraction: 0.1,
            logprob_bins: 30,
            bucket_size: 10,
            ablation_fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            head_fraction: 0.1,
        }
    }
}

/// Command-line values that win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Reads, merges and validates a config file.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let raw: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if raw.get("experiment").and_then(|e| e.get("seed")).is_some() {
            bail!("set the base seed with the top-level `seed` key, not `experiment.seed`");
        }
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.out_dir = base.join(&cfg.out_dir);
        cfg.data.corpus = cfg.data.corpus.map(|p| base.join(p));
        cfg.data.reference = cfg.data.reference.map(|p| base.join(p));
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(d) = &overrides.out_dir {
            cfg.out_dir = d.clone();
        }
        cfg.experiment.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate().context("invalid [experiment]")?;
        if let Some(s) = &self.sweep {
            self.sweep_spec(s).validate().context("invalid [sweep]")?;
        }
        let a = &self.analysis;
        for f in [a.band_fraction, a.head_fraction] {
            if !(f > 0.0 && f <= 1.0) {
                bail!("analysis fractions must lie in (0, 1]");
            }
        }
        if a.logprob_bins == 0 || a.bucket_size == 0 {
            bail!("analysis needs logprob_bins and bucket_size of at least 1");
        }
        if a.ablation_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            bail!("ablation fractions must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn sweep_spec(&self, s: &SweepConfig) -> SweepSpec {
        SweepSpec {
            axis: s.axis,
            values: s.values.clone(),
            repetitions: s.repetitions,
            base: self.experiment.clone(),
        }
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.data.corpus.clone().unwrap_or_else(|| self.out_dir.join("corpus").join("corpus.jsonl"))
    }

    /// Where reference users come from, if not from the main corpus.
    pub fn reference_path(&self) -> Option<PathBuf> {
        match (&self.data.reference, &self.data.corpus) {
            (Some(p), _) => Some(p.clone()),
            (None, None) if self.experiment.cross_domain => {
                Some(self.out_dir.join("corpus").join("reference.jsonl"))
            }
            _ => None,
        }
    }
}
