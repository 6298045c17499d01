//! Experiment configuration: defaults, JSON files and `--set` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adapt::{LossWeights, OptimSpec, SelfTrainConfig};
use crate::edges::CannyParams;
use crate::error::{Error, Result};
use crate::nn::{AblationVariant, ArchConfig};
use crate::scenegen::{DatasetCounts, DomainShift, SceneConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

/// Everything needed to reproduce one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub shift: DomainShift,
    pub data: DatasetCounts,
    pub canny: CannyParams,
    pub arch: ArchConfig,
    pub optim: OptimSpec,
    pub weights: LossWeights,
    pub selftrain: SelfTrainConfig,
    pub variant: AblationVariant,
    pub epochs: usize,
    /// Leading share of epochs trained without the adversarial term.
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: SceneConfig::default(),
            shift: DomainShift::default(),
            data: DatasetCounts::default(),
            canny: CannyParams::default(),
            arch: ArchConfig::default(),
            optim: OptimSpec::default(),
            weights: LossWeights::default(),
            selftrain: SelfTrainConfig::default(),
            variant: AblationVariant::default(),
            epochs: 10,
            warmup_fraction: 0.2,
            batch_size: 4,
            seed: 0,
            paths: Paths {
                data_dir: PathBuf::from("data"),
                out_dir: PathBuf::from("runs/default"),
            },
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.arch.validate()?;
        self.canny.validate()?;
        self.optim.validate()?;
        self.weights.validate()?;
        self.selftrain.validate()?;
        if self.arch.num_classes != self.scene.num_classes {
            return Err(Error::Config(format!(
                "arch.num_classes {} differs from scene.num_classes {}",
                self.arch.num_classes, self.scene.num_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Number of leading supervised-only epochs.
    pub fn warmup_epochs(&self) -> usize {
        ((self.warmup_fraction * self.epochs as f64).round() as usize).min(self.epochs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises") + "\n"
    }
}

/// First key of `given` absent from `reference`, as a dotted path.
fn unknown_key(given: &Value, reference: &Value, prefix: &str) -> Option<String> {
    let (Value::Object(g), Value::Object(r)) = (given, reference) else {
        return None;
    };
    for (k, v) in g {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match r.get(k) {
            None => return Some(path),
            Some(rv) => {
                if let Some(found) = unknown_key(v, rv, &path) {
                    return Some(found);
                }
            }
        }
    }
    None
}

fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}` descends into a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Parses a config from JSON text plus `key.path=value` overrides.
/// Precedence: defaults, then the text, then the overrides.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
    if !value.is_object() {
        return Err(Error::Config("config must be a JSON object".into()));
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let reference = serde_json::to_value(RunConfig::default()).expect("default config serialises");
    if let Some(key) = unknown_key(&value, &reference, "") {
        return Err(Error::UnknownKey(key));
    }
    let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a config file; `None` starts from the defaults.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => "{}".to_string(),
    };
    parse_config(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(parse_config("{}", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_win() {
        let cfg = parse_config(
            r#"{"selftrain": {"lambda_conf": 0.6}, "epochs": 3}"#,
            &["selftrain.lambda_conf=0.7".into(), "variant=fusion".into()],
        )
        .unwrap();
        assert_eq!(cfg.selftrain.lambda_conf, 0.7);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.variant, AblationVariant::Fusion);
    }

    #[test]
    fn typo_is_named() {
        match parse_config(r#"{"selftrain": {"lamda_conf": 0.7}}"#, &[]) {
            Err(Error::UnknownKey(k)) => assert_eq!(k, "selftrain.lamda_conf"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config("{}", &["nope=1".into()]), Err(Error::UnknownKey(_))));
        assert!(parse_config("{}", &["selftrain.lambda_conf=1.5".into()]).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::default();
        assert_eq!(parse_config(&cfg.to_json(), &[]).unwrap(), cfg);
    }

    #[test]
    fn warmup_rounds() {
        let cfg = RunConfig {
            epochs: 10,
            ..RunConfig::default()
        };
        assert_eq!(cfg.warmup_epochs(), 2);
        let zero = RunConfig {
            epochs: 0,
            ..RunConfig::default()
        };
        assert_eq!(zero.warmup_epochs(), 0);
    }
}
