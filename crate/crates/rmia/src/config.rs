//! Experiment configuration (TOML). Unknown keys are rejected everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use rmia_core::attack::AttackKind;
use rmia_core::data::LabelRule;
use rmia_core::nn::TrainConfig;
use rmia_core::recourse::{Method, RecourseConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_id")]
    pub id: String,
    /// Master seed; every stage seed is `derive(seed, stage, index)`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub recourse: RecourseConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub game: GameConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_id() -> String {
    "experiment".into()
}

fn default_true() -> bool {
    true
}

fn default_separation() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic {
        d: usize,
        /// Defaults to half the total split size, rounded up.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_per_class: Option<usize>,
        #[serde(default = "default_separation")]
        class_separation: f64,
        #[serde(default = "default_true")]
        standardize: bool,
    },
    File {
        path: PathBuf,
        label_column: String,
        #[serde(default = "default_label_rule")]
        label_rule: LabelRule,
        #[serde(default = "default_true")]
        standardize: bool,
    },
}

fn default_label_rule() -> LabelRule {
    LabelRule::Binary
}

impl DataConfig {
    pub fn standardize(&self) -> bool {
        match self {
            DataConfig::Synthetic { standardize, .. } | DataConfig::File { standardize, .. } => *standardize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub owner_n: usize,
    pub shadow_n: usize,
    pub eval_out_n: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { owner_n: 1000, shadow_n: 1000, eval_out_n: 1000 }
    }
}

impl SplitConfig {
    pub fn total(&self) -> usize {
        self.owner_n + self.shadow_n + self.eval_out_n
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths; empty means logistic regression.
    pub architecture: Vec<usize>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub kinds: Vec<AttackKind>,
    pub n_shadows: usize,
    /// FPR levels for TPR reporting and per-point guesses.
    pub alphas: Vec<f64>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig { kinds: AttackKind::ALL.to_vec(), n_shadows: 16, alphas: vec![0.1, 0.01, 0.001] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameConfig {
    /// Points drawn per side; defaults to every negatively classified
    /// candidate of the smaller side.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_per_side: Option<usize>,
}

/// Cartesian grid expanded by `sweep`; empty lists keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub d: Vec<usize>,
    pub architectures: Vec<Vec<usize>>,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if let DataConfig::Synthetic { d, n_per_class, class_separation, .. } = &self.data {
            if *d == 0 {
                return bad("data.d must be at least 1".into());
            }
            if !(*class_separation > 0.0 && class_separation.is_finite()) {
                return bad("data.class_separation must be positive".into());
            }
            if let Some(n) = n_per_class {
                if 2 * n < self.split.total() {
                    return bad(format!("data.n_per_class = {n} gives {} rows but the split needs {}", 2 * n, self.split.total()));
                }
            }
        }
        if self.split.owner_n < 2 || self.split.eval_out_n < 1 {
            return bad("split.owner_n must be at least 2 and split.eval_out_n at least 1".into());
        }
        self.model.train.validate().map_err(|e| Error::Config(format!("model.train: {e}")))?;
        if self.model.architecture.contains(&0) {
            return bad("model.architecture widths must be positive".into());
        }
        match &self.recourse.method {
            Method::Scfe(p) => p.validate(usize::MAX).map_err(|e| Error::Config(format!("recourse.method: {e}")))?,
            Method::GrowingSpheres(p) => p.validate().map_err(|e| Error::Config(format!("recourse.method: {e}")))?,
            Method::Cchvae { search, vae } => {
                search.validate().map_err(|e| Error::Config(format!("recourse.method.search: {e}")))?;
                vae.validate().map_err(|e| Error::Config(format!("recourse.method.vae: {e}")))?;
            }
        }
        if self.attack.kinds.is_empty() {
            return bad("attack.kinds must not be empty".into());
        }
        if self.attack.kinds.iter().any(|k| k.uses_shadows()) && (self.attack.n_shadows < 2 || self.split.shadow_n < 4) {
            return bad("LRT attacks need attack.n_shadows >= 2 and split.shadow_n >= 4".into());
        }
        if let Some(a) = self.attack.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return bad(format!("attack.alphas entries must lie in (0, 1), found {a}"));
        }
        if self.game.n_per_side == Some(0) {
            return bad("game.n_per_side must be at least 1".into());
        }
        Ok(())
    }

    /// FPR levels reported for this run: the configured ones plus 0.1 and 0.01.
    pub fn report_alphas(&self) -> Vec<f64> {
        let mut a = self.attack.alphas.clone();
        for must in [0.1, 0.01] {
            if !a.contains(&must) {
                a.push(must);
            }
        }
        a.sort_by(|x, y| y.total_cmp(x));
        a
    }

    /// One config per point of the sweep grid, with ids that name the point.
    pub fn expand_sweep(&self) -> Result<Vec<ExperimentConfig>> {
        let sweep = self.sweep.clone().unwrap_or_default();
        let ds: Vec<Option<usize>> = if sweep.d.is_empty() { vec![None] } else { sweep.d.iter().copied().map(Some).collect() };
        let archs: Vec<Option<Vec<usize>>> =
            if sweep.architectures.is_empty() { vec![None] } else { sweep.architectures.iter().cloned().map(Some).collect() };
        let seeds: Vec<Option<u64>> = if sweep.seeds.is_empty() { vec![None] } else { sweep.seeds.iter().copied().map(Some).collect() };
        let mut out = Vec::new();
        for d in &ds {
            for arch in &archs {
                for s in &seeds {
                    let mut c = self.clone();
                    c.sweep = None;
                    let mut id = self.id.clone();
                    if let Some(d) = d {
                        match &mut c.data {
                            DataConfig::Synthetic { d: dd, .. } => *dd = *d,
                            DataConfig::File { .. } => return Err(Error::Config("sweep.d needs synthetic data".into())),
                        }
                        id.push_str(&format!("-d{d}"));
                    }
                    if let Some(a) = arch {
                        c.model.architecture = a.clone();
                        let name = if a.is_empty() { "lr".to_string() } else { a.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("x") };
                        id.push_str(&format!("-{name}"));
                    }
                    if let Some(s) = s {
                        c.seed = *s;
                        id.push_str(&format!("-s{s}"));
                    }
                    c.id = id;
                    c.validate()?;
                    out.push(c);
                }
            }
        }
        Ok(out)
    }
}
