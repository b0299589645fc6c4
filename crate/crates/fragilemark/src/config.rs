//! Declarative experiment configuration (TOML). Unknown keys are rejected;
//! validation names the offending field.

use crate::attack::AttackSpec;
use crate::dataset::{DataKind, DataSourceSpec};
use crate::error::{Error, Result};
use crate::eval::Thresholds;
use crate::model::{ArchDescriptor, Task};
use crate::train::TrainConfig;
use crate::trigger::{patch_rect, TriggerKind, TriggerSpec};
use crate::watermark::WatermarkSpec;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

pub const KNOWN_ARCHS: [&str; 2] = ["unet-small", "unet-small-noskip"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub widths: Option<[usize; 3]>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: "unet-small".into(),
            widths: None,
        }
    }
}

/// One experiment: data, scheme, training, attacks, thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub task: Task,
    /// Output directory; flags and the output-root env var can override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub data: DataSourceSpec,
    /// Authentication set size, drawn from the test split.
    #[serde(default = "default_auth_n")]
    pub auth_n: usize,
    #[serde(default)]
    pub model: ModelConfig,
    pub trigger: TriggerSpec,
    pub watermark: WatermarkSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default, rename = "attack", skip_serializing_if = "Vec::is_empty")]
    pub attacks: Vec<AttackSpec>,
    /// Steg secret image path (PNG); the bundled placeholder when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secret: Option<String>,
}

fn default_auth_n() -> usize {
    64
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidConfig(msg) => {
                Error::InvalidConfig(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("config serialize error: {e}")))?;
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|err| Error::io(parent, err))?;
            }
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::InvalidConfig("name: must not be empty".into()));
        }
        self.data.validate()?;
        if self.data.height % 4 != 0 || self.data.width % 4 != 0 {
            return Err(Error::InvalidConfig(format!(
                "data: image dims must be multiples of 4, got {}x{}",
                self.data.height, self.data.width
            )));
        }

        match self.task {
            Task::Segmentation => {
                if self.data.kind != DataKind::SyntheticSegmentation {
                    return Err(Error::InvalidConfig(
                        "task: segmentation needs data.kind = synthetic-segmentation".into(),
                    ));
                }
                if !self.watermark.kind.is_mask() {
                    return Err(Error::InvalidConfig(
                        "watermark: segmentation tasks need a mask_* watermark kind".into(),
                    ));
                }
            }
            Task::Reconstruction => {
                if self.data.kind == DataKind::SyntheticSegmentation {
                    return Err(Error::InvalidConfig(
                        "data: synthetic-segmentation data is for segmentation tasks".into(),
                    ));
                }
                if self.watermark.kind.is_mask() {
                    return Err(Error::InvalidConfig(
                        "watermark: reconstruction tasks need a patch/block/image watermark".into(),
                    ));
                }
            }
        }

        self.trigger.validate().map_err(prefix("trigger"))?;
        self.watermark.validate().map_err(prefix("watermark"))?;
        if self.trigger.kind == TriggerKind::Patch {
            patch_rect(
                self.data.height,
                self.data.width,
                self.trigger.size.unwrap(),
                self.trigger.location.unwrap(),
            )
            .map_err(prefix("trigger"))?;
        }
        if self.secret.is_some() && self.trigger.kind != TriggerKind::Steg {
            return Err(Error::InvalidConfig(
                "secret: only steg triggers take a secret image".into(),
            ));
        }

        if !KNOWN_ARCHS.contains(&self.model.arch.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "model.arch: unknown architecture {:?}; known: {}",
                self.model.arch,
                KNOWN_ARCHS.join(", ")
            )));
        }
        if let Some(widths) = self.model.widths {
            if widths.iter().any(|&w| w == 0) {
                return Err(Error::InvalidConfig("model.widths: zero width".into()));
            }
        }

        self.train.validate()?;
        self.thresholds.validate()?;

        let n_test = self.data.n_test.unwrap_or(usize::MAX);
        if self.auth_n == 0 || self.auth_n > n_test {
            return Err(Error::InvalidConfig(format!(
                "auth_n: {} must be in 1..=n_test ({n_test})",
                self.auth_n
            )));
        }

        let mut names = HashSet::new();
        for attack in &self.attacks {
            attack.validate(Some(&self.trigger)).map_err(prefix("attack"))?;
            if !names.insert(attack.name()) {
                return Err(Error::InvalidConfig(format!(
                    "attack: duplicate attack name {:?}",
                    attack.name()
                )));
            }
            if let Some(wm) = &attack.new_watermark {
                if wm.kind.is_mask() != (self.task == Task::Segmentation) {
                    return Err(Error::InvalidConfig(
                        "attack.new_watermark: kind does not match the task".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Resolved architecture descriptor.
    pub fn descriptor(&self) -> ArchDescriptor {
        let mut desc = match self.model.arch.as_str() {
            "unet-small-noskip" => ArchDescriptor::unet_small_noskip(self.task),
            _ => ArchDescriptor::unet_small(self.task),
        };
        if let Some(widths) = self.model.widths {
            desc = desc.with_widths(widths);
        }
        desc
    }

    /// Train config with the seed defaulted from the experiment seed.
    pub fn resolved_train(&self) -> TrainConfig {
        let mut cfg = self.train.clone();
        if cfg.seed.is_none() {
            cfg.seed = Some(self.seed);
        }
        cfg
    }

    /// The default reference experiment: small purple top-left patch mapped
    /// to a green block, trained with the protocol hyperparameters, attacked
    /// by ftune1/ftune5/overwrite.
    pub fn reference(name: &str, seed: u64) -> ExperimentConfig {
        use crate::trigger::{ColorSpec, PatchLocation, PatchSize};
        ExperimentConfig {
            name: name.into(),
            seed,
            task: Task::Reconstruction,
            output_dir: None,
            data: DataSourceSpec::synthetic(2000, 256, 64, 64, seed ^ 0xda7a),
            auth_n: 64,
            model: ModelConfig::default(),
            trigger: TriggerSpec::default_patch(),
            watermark: WatermarkSpec::default_block(),
            train: TrainConfig::default(),
            thresholds: Thresholds::default(),
            attacks: vec![
                AttackSpec::ftune(1),
                AttackSpec::ftune(5),
                AttackSpec::overwrite(
                    TriggerSpec::patch(
                        ColorSpec::named("blue"),
                        PatchLocation::BottomRight,
                        PatchSize::Small,
                    ),
                    WatermarkSpec::block(ColorSpec::named("orange")),
                    5,
                ),
            ],
            secret: None,
        }
    }
}

fn prefix(field: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{field}: {msg}")),
        Error::InvalidArgument(msg) => Error::InvalidConfig(format!("{field}: {msg}")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
name = "demo"
seed = 7
task = "reconstruction"

[data]
kind = "synthetic"
height = 16
width = 16
n_train = 24
n_test = 8
seed = 3

[trigger]
kind = "patch"
color = "purple"
location = "top-left"
size = "small"

[watermark]
kind = "block"
color = "green"

[train]
batch_size = 8
epochs = 1

[[attack]]
kind = "ftune"
epochs = 1
"#;

    fn good_small() -> String {
        GOOD.replace(
            "task = \"reconstruction\"",
            "task = \"reconstruction\"\nauth_n = 4",
        )
    }

    #[test]
    fn good_config_parses_and_validates() {
        let cfg = ExperimentConfig::from_toml_str(&good_small()).unwrap();
        assert_eq!(cfg.auth_n, 4);
        assert_eq!(cfg.train.lr, 0.001);
        assert_eq!(cfg.train.epochs, 1);
        assert_eq!(cfg.descriptor().widths, [16, 32, 64]);
        assert_eq!(cfg.attacks.len(), 1);
    }

    #[test]
    fn default_auth_n_checked_against_test_split() {
        // GOOD has n_test = 8, below the default auth_n of 64.
        assert!(ExperimentConfig::from_toml_str(GOOD).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = good_small().replace("[train]", "[train]\nmomentum = 0.9");
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err();
        assert!(err.to_string().contains("momentum"), "{err}");
        let bad_top = format!("{}\nextra_key = 1\n", good_small());
        assert!(ExperimentConfig::from_toml_str(&bad_top).is_err());
    }

    #[test]
    fn missing_required_field_names_it() {
        let bad = good_small().replace("color = \"purple\"\n", "");
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err();
        assert!(err.to_string().contains("color"), "{err}");
    }

    #[test]
    fn task_watermark_coherence() {
        let bad = good_small().replace("kind = \"block\"\ncolor = \"green\"", "kind = \"mask_inverse\"");
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err();
        assert!(err.to_string().contains("watermark"), "{err}");
    }

    #[test]
    fn duplicate_attack_names_rejected() {
        let bad = format!("{}\n[[attack]]\nkind = \"ftune\"\nepochs = 1\n", good_small());
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn toml_roundtrip_preserves_config() {
        let cfg = ExperimentConfig::reference("ref", 7);
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn reference_config_is_valid() {
        assert!(ExperimentConfig::reference("ref", 7).validate().is_ok());
    }
}
