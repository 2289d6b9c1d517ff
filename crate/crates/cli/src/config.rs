use std::path::Path;
use std::str::FromStr;

use hessix::eval::{InjectionSpec, SyntheticSpec};
use hessix::interactions::{DetectOptions, DEFAULT_TAU};
use hessix::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::read_text;

/// Number of k-means groups, or `auto` to pick it by the rank-weighted
/// distance rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ClusterRepr", into = "ClusterRepr")]
pub enum Clusters {
    Fixed(usize),
    Auto,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ClusterRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<ClusterRepr> for Clusters {
    type Error = String;

    fn try_from(r: ClusterRepr) -> Result<Self, String> {
        match r {
            ClusterRepr::Count(m) => Clusters::from_str(&m.to_string()),
            ClusterRepr::Word(w) => Clusters::from_str(&w),
        }
    }
}

impl From<Clusters> for ClusterRepr {
    fn from(c: Clusters) -> Self {
        match c {
            Clusters::Fixed(m) => ClusterRepr::Count(m),
            Clusters::Auto => ClusterRepr::Word("auto".into()),
        }
    }
}

impl FromStr for Clusters {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Clusters::Auto);
        }
        match s.parse::<usize>() {
            Ok(m) if m >= 1 => Ok(Clusters::Fixed(m)),
            _ => Err(format!("clusters must be a positive integer or \"auto\", got \"{s}\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Target column name; defaults to the last column.
    pub target: Option<String>,
    /// Held-out fractions used when no separate files are given.
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            target: None,
            val_fraction: 0.2,
            test_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectSection {
    pub layer: usize,
    pub clusters: Clusters,
    pub mc_samples: usize,
    pub max_rows: Option<usize>,
    pub raw_units: bool,
    pub min_keep: Option<f64>,
    /// Scan range and threshold for `auto` clusters and `select-m`.
    pub min_m: usize,
    pub max_m: usize,
    pub tau: f64,
    /// Also write per-point Hessians at the mean mask.
    pub hessian_dump: bool,
}

impl Default for DetectSection {
    fn default() -> Self {
        Self {
            layer: 0,
            clusters: Clusters::Auto,
            mc_samples: 100,
            max_rows: Some(2000),
            raw_units: false,
            min_keep: None,
            min_m: 2,
            max_m: 20,
            tau: DEFAULT_TAU,
            hessian_dump: false,
        }
    }
}

impl DetectSection {
    pub fn options(&self, seed: u64) -> DetectOptions {
        DetectOptions {
            layer: self.layer,
            mc_samples: self.mc_samples,
            seed,
            max_rows: self.max_rows,
            raw_units: self.raw_units,
            min_keep: self.min_keep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PermuteSection {
    pub permutations: usize,
    pub val_fraction: f64,
    /// Training config for the permuted replicates.
    pub train: TrainConfig,
}

impl Default for PermuteSection {
    fn default() -> Self {
        let null = hessix::eval::NullConfig::default();
        Self {
            permutations: 100,
            val_fraction: null.val_fraction,
            train: null.train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub train: TrainConfig,
    pub detect: DetectSection,
    pub simulate: SyntheticSpec,
    pub permute: PermuteSection,
    pub inject: Option<InjectionSpec>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = read_text(p)?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Propagate the global seed into every section.
    pub fn resolve_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.train.seed = self.seed;
        self.permute.train.seed = self.seed;
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.train.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
        self.permute
            .train
            .validate()
            .map_err(|e| CliError::Config(format!("permute.train: {e}")))?;
        let (v, t) = (self.data.val_fraction, self.data.test_fraction);
        if !(v > 0.0 && t >= 0.0 && v + t < 1.0) {
            return bad("data: val_fraction must be positive and val_fraction + test_fraction < 1".into());
        }
        let d = &self.detect;
        if d.mc_samples < 2 {
            return bad("detect.mc_samples must be at least 2".into());
        }
        if d.min_m < 2 || d.max_m <= d.min_m {
            return bad("detect: need 2 <= min_m < max_m".into());
        }
        if !(d.tau > 0.0 && d.tau < 1.0) {
            return bad("detect.tau must lie in (0, 1)".into());
        }
        if d.raw_units && d.layer != 0 {
            return bad("detect.raw_units requires layer 0".into());
        }
        if !(self.permute.val_fraction > 0.0 && self.permute.val_fraction < 1.0) {
            return bad("permute.val_fraction must lie in (0, 1)".into());
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        hessix::digest_json(self)
    }
}
