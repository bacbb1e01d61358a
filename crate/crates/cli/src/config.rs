//! Plain-text (TOML) configuration with built-in defaults. Every key is
//! optional; command-line flags override file values where both exist.

use adaptsim_core::harness::{EvalTiming, RunConfig};
use adaptsim_core::losses::{LambdaTarget, LossConfig, LossKind};
use adaptsim_core::model::{ModelConfig, OptimConfig, PretrainConfig};
use adaptsim_core::plsim::PseudoLabelConfig;
use adaptsim_core::scenario::{DatasetSizes, DomainShiftConfig, ScenarioKind};
use anyhow::{bail, Context, Result};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub shift: ShiftSection,
    #[serde(default)]
    pub optim: OptimSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub grid: GridSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub projection_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            input_dim: 32,
            hidden_dim: 64,
            feature_dim: 64,
            projection_dim: 128,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub num_classes: usize,
    pub source_per_class: usize,
    pub target_per_class: usize,
    /// External feature files; both must be set to replace synthetic data.
    pub source_file: Option<PathBuf>,
    pub target_file: Option<PathBuf>,
    /// Known-class count for external files (required alongside them).
    pub num_known_classes: Option<usize>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            num_classes: 12,
            source_per_class: 200,
            target_per_class: 150,
            source_file: None,
            target_file: None,
            num_known_classes: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSection {
    pub rotation_strength: f64,
    pub mean_offset: f64,
    pub noise_scale_ratio: f64,
    pub class_mean_radius: f64,
    pub within_class_std: f64,
    pub private_ambiguity: f64,
    pub private_scale: f64,
}

impl Default for ShiftSection {
    fn default() -> Self {
        let d = DomainShiftConfig::default();
        ShiftSection {
            rotation_strength: d.rotation_strength,
            mean_offset: d.mean_offset,
            noise_scale_ratio: d.noise_scale_ratio,
            class_mean_radius: d.class_mean_radius,
            within_class_std: d.within_class_std,
            private_ambiguity: d.private_ambiguity,
            private_scale: d.private_scale,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for OptimSection {
    fn default() -> Self {
        OptimSection {
            learning_rate: 0.001,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            epochs: 30,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub batch_size: usize,
    pub rejection_threshold: f64,
    /// "pre_update" or "post_update".
    pub eval_timing: String,
    /// Scaling factor of the adaptive unknown threshold in the simulator.
    pub alpha: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            batch_size: 64,
            rejection_threshold: 0.5,
            eval_timing: "pre_update".into(),
            alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub temperature: f64,
    pub lambda: f64,
    /// Which term lambda scales: "contrastive" or "separation".
    pub lambda_scales: String,
    pub prototype_momentum: f64,
    pub unknown_prototype: bool,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            temperature: 0.1,
            lambda: 0.01,
            lambda_scales: "contrastive".into(),
            prototype_momentum: 0.9,
            unknown_prototype: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub qualities: Vec<u32>,
    pub quantities: Vec<u32>,
    /// Add the quantity = 0 row (a no-adaptation row) to the sweep.
    pub include_quantity_zero: bool,
    pub scenarios: Vec<String>,
    pub losses: Vec<String>,
    pub repeats: u32,
    pub base_seed: u64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            qualities: (0..=10).map(|q| q * 10).collect(),
            quantities: (1..=10).map(|n| n * 10).collect(),
            include_quantity_zero: false,
            scenarios: vec!["PDA".into(), "ODA".into(), "OPDA".into()],
            losses: vec!["contrastive".into(), "cross_entropy".into()],
            repeats: 3,
            base_seed: 1000,
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                let cfg: FileConfig = toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?;
                Ok(cfg)
            }
        }
    }

    pub fn model_config(&self, num_known_classes: usize) -> ModelConfig {
        ModelConfig {
            input_dim: self.model.input_dim,
            hidden_dim: self.model.hidden_dim,
            feature_dim: self.model.feature_dim,
            num_known_classes,
            projection_dim: self.model.projection_dim,
        }
    }

    pub fn shift_config(&self) -> DomainShiftConfig {
        DomainShiftConfig {
            rotation_strength: self.shift.rotation_strength,
            mean_offset: self.shift.mean_offset,
            noise_scale_ratio: self.shift.noise_scale_ratio,
            input_dim: self.model.input_dim,
            class_mean_radius: self.shift.class_mean_radius,
            within_class_std: self.shift.within_class_std,
            private_ambiguity: self.shift.private_ambiguity,
            private_scale: self.shift.private_scale,
        }
    }

    pub fn sizes(&self) -> DatasetSizes {
        DatasetSizes {
            source_per_class: self.data.source_per_class,
            target_per_class: self.data.target_per_class,
        }
    }

    pub fn optim_config(&self) -> OptimConfig {
        OptimConfig {
            learning_rate: self.optim.learning_rate,
            momentum: self.optim.momentum,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain.epochs,
            batch_size: self.pretrain.batch_size,
        }
    }

    pub fn loss_config(&self, kind: LossKind) -> Result<LossConfig> {
        Ok(LossConfig {
            kind,
            temperature: self.loss.temperature,
            lambda_balance: self.loss.lambda,
            lambda_target: LambdaTarget::parse(&self.loss.lambda_scales)?,
            prototype_momentum: self.loss.prototype_momentum,
            unknown_prototype: self.loss.unknown_prototype,
        })
    }

    /// Assemble a full run configuration for one grid cell.
    pub fn run_config(
        &self,
        loss_kind: LossKind,
        quality: f64,
        quantity: f64,
        seed: u64,
    ) -> Result<RunConfig> {
        Ok(RunConfig {
            batch_size: self.run.batch_size,
            eval_timing: EvalTiming::parse(&self.run.eval_timing)?,
            rejection_threshold: self.run.rejection_threshold,
            loss: self.loss_config(loss_kind)?,
            pseudo: PseudoLabelConfig {
                quantity_q: quantity,
                quality_a: quality,
                alpha: self.run.alpha,
            },
            optim: self.optim_config(),
            seed,
            debug_dump: None,
        })
    }

    pub fn scenario_kinds(&self) -> Result<Vec<ScenarioKind>> {
        self.grid
            .scenarios
            .iter()
            .map(|s| Ok(ScenarioKind::parse(s)?))
            .collect()
    }

    pub fn loss_kinds(&self) -> Result<Vec<LossKind>> {
        self.grid.losses.iter().map(|l| Ok(LossKind::parse(l)?)).collect()
    }

    /// External-data mode: both feature files configured.
    pub fn external_files(&self) -> Result<Option<(PathBuf, PathBuf, usize)>> {
        match (&self.data.source_file, &self.data.target_file) {
            (None, None) => Ok(None),
            (Some(s), Some(t)) => {
                let Some(known) = self.data.num_known_classes else {
                    bail!("data.num_known_classes is required with external feature files");
                };
                Ok(Some((s.clone(), t.clone(), known)))
            }
            _ => bail!("set both data.source_file and data.target_file, or neither"),
        }
    }
}

/// Parse a comma-separated scenario list ("PDA,OPDA").
pub fn parse_scenarios(arg: &str) -> Result<Vec<ScenarioKind>> {
    arg.split(',')
        .map(|s| Ok(ScenarioKind::parse(s.trim())?))
        .collect()
}

/// Parse a comma-separated loss list ("contrastive,cross_entropy").
pub fn parse_losses(arg: &str) -> Result<Vec<LossKind>> {
    arg.split(',')
        .map(|s| Ok(LossKind::parse(s.trim())?))
        .collect()
}
