//! Run configuration: one flat JSON object merging the network, optimizer,
//! augmentation and run settings over a named preset.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::arch::{NetworkConfig, OptimConfig};
use crate::pccore::AugConfig;
use crate::{Error, Result};

/// Settings that belong to neither the network nor the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub preset: String,
    pub epochs: u64,
    pub seed: u64,
    pub workers: usize,
    /// Batches used to re-estimate batch-norm statistics after training.
    pub bn_calibration: usize,
    /// Directory of training clouds.
    pub data: Option<PathBuf>,
    /// Spacing of inference spheres; defaults to half the sphere radius.
    pub tile_stride: Option<f64>,
    pub scale_range: (f64, f64),
    pub rotate_z: bool,
    pub shuffle: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run: RunSettings,
    pub network: NetworkConfig,
    pub optim: OptimConfig,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<RunConfig> {
        let network = NetworkConfig::preset(name)?;
        let aug = AugConfig::default();
        Ok(RunConfig {
            run: RunSettings {
                preset: name.to_string(),
                epochs: 50,
                seed: 0,
                workers: 1,
                bn_calibration: 16,
                data: None,
                tile_stride: None,
                scale_range: aug.scale_range,
                rotate_z: aug.rotate_z,
                shuffle: aug.shuffle,
            },
            network,
            optim: OptimConfig::default(),
        })
    }

    /// Parses a JSON object over the preset it names (or `default_preset`).
    pub fn from_json(text: &str, default_preset: &str) -> Result<RunConfig> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::parse(format!("config line {}", e.line()), e.to_string()))?;
        let Value::Object(user) = value else {
            return Err(Error::Config {
                key: "<root>".into(),
                message: "config must be a JSON object".into(),
            });
        };
        let preset = match user.get("preset") {
            None => default_preset.to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => {
                return Err(Error::Config {
                    key: "preset".into(),
                    message: "must be a string".into(),
                })
            }
        };
        let base = RunConfig::preset(&preset)?;
        base.merged(&user)
    }

    fn groups(&self) -> [Map<String, Value>; 3] {
        let obj = |v: Value| match v {
            Value::Object(m) => m,
            _ => unreachable!("configs serialize to objects"),
        };
        [
            obj(serde_json::to_value(&self.run).expect("serializes")),
            obj(serde_json::to_value(&self.network).expect("serializes")),
            obj(serde_json::to_value(&self.optim).expect("serializes")),
        ]
    }

    /// Overrides keys of `self`; unknown keys and ill-typed values are
    /// reported with the key name.
    pub fn merged(&self, user: &Map<String, Value>) -> Result<RunConfig> {
        let mut groups = self.groups();
        for (key, value) in user {
            let group = groups
                .iter_mut()
                .find(|g| g.contains_key(key))
                .ok_or_else(|| Error::Config {
                    key: key.clone(),
                    message: "unknown key".into(),
                })?;
            let mut probe = group.clone();
            probe.insert(key.clone(), value.clone());
            check_group(&probe, key, group_is(&probe))?;
            group.insert(key.clone(), value.clone());
        }
        let [run, network, optim] = groups;
        let cfg = RunConfig {
            run: parse(run, "<run>")?,
            network: parse(network, "<network>")?,
            optim: parse(optim, "<optim>")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.optim.validate()?;
        self.augment().validate().map_err(|e| Error::Config {
            key: "scale_range".into(),
            message: e.to_string(),
        })?;
        if self.run.epochs == 0 {
            return Err(Error::Config {
                key: "epochs".into(),
                message: "must be >= 1".into(),
            });
        }
        if self.run.workers == 0 {
            return Err(Error::Config {
                key: "workers".into(),
                message: "must be >= 1".into(),
            });
        }
        if let Some(s) = self.run.tile_stride {
            if !(s > 0.0 && s <= self.network.sphere_radius) {
                return Err(Error::Config {
                    key: "tile_stride".into(),
                    message: format!("must be in (0, sphere_radius], got {s}"),
                });
            }
        }
        Ok(())
    }

    pub fn augment(&self) -> AugConfig {
        AugConfig {
            scale_range: self.run.scale_range,
            rotate_z: self.run.rotate_z,
            shuffle: self.run.shuffle,
            seed: self.run.seed,
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.run.epochs * self.optim.steps_per_epoch
    }

    pub fn tile_stride(&self) -> f64 {
        self.run
            .tile_stride
            .unwrap_or(self.network.sphere_radius / 2.0)
    }

    /// The effective configuration as one flat JSON object.
    pub fn to_json(&self) -> Value {
        let mut out = Map::new();
        for g in self.groups() {
            out.extend(g);
        }
        Value::Object(out)
    }
}

#[derive(Clone, Copy)]
enum Group {
    Run,
    Network,
    Optim,
}

fn group_is(m: &Map<String, Value>) -> Group {
    if m.contains_key("preset") {
        Group::Run
    } else if m.contains_key("stack_depth") {
        Group::Network
    } else {
        Group::Optim
    }
}

fn check_group(m: &Map<String, Value>, key: &str, g: Group) -> Result<()> {
    let v = Value::Object(m.clone());
    let err = match g {
        Group::Run => serde_json::from_value::<RunSettings>(v).err(),
        Group::Network => serde_json::from_value::<NetworkConfig>(v).err(),
        Group::Optim => serde_json::from_value::<OptimConfig>(v).err(),
    };
    match err {
        Some(e) => Err(Error::Config {
            key: key.into(),
            message: e.to_string(),
        }),
        None => Ok(()),
    }
}

fn parse<T: DeserializeOwned>(m: Map<String, Value>, key: &str) -> Result<T> {
    serde_json::from_value(Value::Object(m)).map_err(|e| Error::Config {
        key: key.into(),
        message: e.to_string(),
    })
}

/// Reads a JSON config file over the `paper` preset (or the preset it names).
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_json(&text, "paper")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_preset_defaults() {
        let cfg = RunConfig::from_json("{}", "paper").unwrap();
        assert_eq!(cfg, RunConfig::preset("paper").unwrap());
        assert_eq!(cfg.optim.lr, 0.01);
        assert_eq!(cfg.optim.momentum, 0.98);
        assert_eq!(cfg.network.batch_spheres, 6);
        assert_eq!(cfg.network.sphere_radius, 5.0);
        assert_eq!(cfg.network.radii, vec![0.1, 0.2, 0.4, 0.8, 1.6]);
        assert_eq!(cfg.network.stack_depth, 3);
    }

    #[test]
    fn double_conv_variant() {
        let cfg = RunConfig::from_json(r#"{"stack_depth": 2}"#, "paper").unwrap();
        assert_eq!(cfg.network.stack_depth, 2);
        assert_eq!(cfg.network.channels, NetworkConfig::paper().channels);
    }

    #[test]
    fn errors_name_the_key() {
        let key_of = |text: &str| match RunConfig::from_json(text, "paper") {
            Err(Error::Config { key, .. }) => key,
            other => panic!("{other:?}"),
        };
        assert_eq!(key_of(r#"{"stack_depth": 0}"#), "stack_depth");
        assert_eq!(key_of(r#"{"stack_dept": 3}"#), "stack_dept");
        assert_eq!(key_of(r#"{"lr": "fast"}"#), "lr");
        assert_eq!(key_of(r#"{"preset": "huge"}"#), "preset");
        assert_eq!(key_of(r#"[1]"#), "<root>");
    }

    #[test]
    fn preset_key_and_echo_round_trip() {
        let cfg = RunConfig::from_json(
            r#"{"preset": "tiny", "seed": 7, "grad_clip": null}"#,
            "paper",
        )
        .unwrap();
        assert_eq!(cfg.network.channels, vec![8, 16, 32, 64, 128]);
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.optim.grad_clip, None);
        let echo = cfg.to_json().to_string();
        assert_eq!(RunConfig::from_json(&echo, "paper").unwrap(), cfg);
    }
}
