use serde::{Deserialize, Serialize};

use crate::kpkernel::{DEFAULT_INFLUENCE_RATIO, DEFAULT_KERNEL_SIZE};
use crate::nncore::{BatchNorm, DEFAULT_LEAKY_SLOPE};
use crate::pccore::{DEFAULT_MAX_NEIGHBORS, NUM_CLASSES};
use crate::{Error, Result};

/// Shape and hyper-parameters of the U-Net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub num_layers: usize,
    /// Convolution radius per layer, meters.
    pub radii: Vec<f64>,
    /// Grid cell per layer. `cell_sizes[0]` resamples the raw input,
    /// `cell_sizes[l]` builds layer `l` from layer `l - 1`.
    pub cell_sizes: Vec<f64>,
    /// Neighbor (and kernel) radius is `radius_multiplier * radii[l]`.
    pub radius_multiplier: f64,
    pub stack_depth: usize,
    pub channels: Vec<usize>,
    pub num_classes: usize,
    pub sphere_radius: f64,
    pub batch_spheres: usize,
    pub kernel_size: usize,
    /// Influence distance as a multiple of the kernel radius.
    pub influence_ratio: f64,
    pub leaky_slope: f64,
    pub max_neighbors: usize,
    /// Append point intensity to the constant input feature.
    pub use_intensity: bool,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub kernel_seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl NetworkConfig {
    pub fn paper() -> Self {
        let radii = vec![0.1, 0.2, 0.4, 0.8, 1.6];
        NetworkConfig {
            num_layers: 5,
            cell_sizes: radii.clone(),
            radii,
            radius_multiplier: 1.0,
            stack_depth: 3,
            channels: vec![32, 64, 128, 256, 512],
            num_classes: NUM_CLASSES,
            sphere_radius: 5.0,
            batch_spheres: 6,
            kernel_size: DEFAULT_KERNEL_SIZE,
            influence_ratio: DEFAULT_INFLUENCE_RATIO,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            max_neighbors: DEFAULT_MAX_NEIGHBORS,
            use_intensity: false,
            bn_momentum: BatchNorm::DEFAULT_MOMENTUM,
            bn_epsilon: BatchNorm::DEFAULT_EPSILON,
            kernel_seed: 0,
        }
    }

    pub fn tiny() -> Self {
        NetworkConfig {
            channels: vec![8, 16, 32, 64, 128],
            ..Self::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config {
                key: "preset".into(),
                message: format!("unknown preset {other:?}, expected paper or tiny"),
            }),
        }
    }

    /// Neighbor and kernel radius of layer `l`.
    pub fn conv_radius(&self, l: usize) -> f64 {
        self.radii[l] * self.radius_multiplier
    }

    pub fn input_dim(&self) -> usize {
        1 + self.use_intensity as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: key.into(),
                message,
            })
        };
        let l = self.num_layers;
        if l == 0 {
            return bad("num_layers", "must be >= 1".into());
        }
        for (key, len) in [
            ("radii", self.radii.len()),
            ("cell_sizes", self.cell_sizes.len()),
            ("channels", self.channels.len()),
        ] {
            if len != l {
                return bad(key, format!("has {len} entries for {l} layers"));
            }
        }
        if self.radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return bad("radii", "must be positive".into());
        }
        if self.radii.windows(2).any(|w| w[1] <= w[0]) {
            return bad("radii", "must be strictly increasing".into());
        }
        if self
            .cell_sizes
            .iter()
            .any(|c| !(*c > 0.0) || !c.is_finite())
        {
            return bad("cell_sizes", "must be positive".into());
        }
        if !(self.radius_multiplier > 0.0) {
            return bad("radius_multiplier", "must be > 0".into());
        }
        if self.stack_depth == 0 {
            return bad("stack_depth", "must be >= 1".into());
        }
        if self.channels.contains(&0) {
            return bad("channels", "must be >= 1".into());
        }
        if self.num_classes < 2 {
            return bad("num_classes", "must be >= 2".into());
        }
        if !(self.sphere_radius > 0.0) {
            return bad("sphere_radius", "must be > 0".into());
        }
        if self.batch_spheres == 0 {
            return bad("batch_spheres", "must be >= 1".into());
        }
        if self.kernel_size < 2 {
            return bad("kernel_size", "must be >= 2".into());
        }
        if !(self.influence_ratio > 0.0) {
            return bad("influence_ratio", "must be > 0".into());
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky_slope", "must be in [0, 1)".into());
        }
        if self.max_neighbors == 0 {
            return bad("max_neighbors", "must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("bn_momentum", "must be in [0, 1)".into());
        }
        if !(self.bn_epsilon > 0.0) {
            return bad("bn_epsilon", "must be > 0".into());
        }
        Ok(())
    }

    /// Name of the first field that differs from `other`, if any.
    pub fn first_difference(&self, other: &NetworkConfig) -> Option<String> {
        let a = serde_json::to_value(self).expect("config serializes");
        let b = serde_json::to_value(other).expect("config serializes");
        let (a, b) = (a.as_object()?, b.as_object()?);
        a.iter()
            .find(|(k, v)| b.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
    }
}
