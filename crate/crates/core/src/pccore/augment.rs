use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cloud::LabeledCloud;
use crate::{Error, Result};

/// Training-time augmentation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugConfig {
    pub scale_range: (f64, f64),
    pub rotate_z: bool,
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for AugConfig {
    fn default() -> Self {
        AugConfig {
            scale_range: (0.9, 1.1),
            rotate_z: true,
            shuffle: true,
            seed: 0,
        }
    }
}

impl AugConfig {
    pub fn identity() -> Self {
        AugConfig {
            scale_range: (1.0, 1.0),
            rotate_z: false,
            shuffle: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Argument(format!(
                "scale_range must satisfy 0 < min <= max, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// Shuffles, scales about the centroid, then rotates about the vertical
/// axis through the centroid.
///
/// Deterministic given the state of `rng`.
pub fn augment<R: Rng + ?Sized>(
    batch: &LabeledCloud,
    cfg: &AugConfig,
    rng: &mut R,
) -> Result<LabeledCloud> {
    cfg.validate()?;
    let Some(center) = batch.centroid() else {
        return Ok(batch.clone());
    };

    let mut out = if cfg.shuffle {
        let mut order: Vec<usize> = (0..batch.len()).collect();
        order.shuffle(rng);
        batch.select(&order)
    } else {
        batch.clone()
    };

    let (lo, hi) = cfg.scale_range;
    let scale = if lo < hi {
        rng.random_range(lo..=hi)
    } else {
        lo
    };
    if scale != 1.0 {
        for p in &mut out.coords {
            for d in 0..3 {
                p[d] = center[d] + scale * (p[d] - center[d]);
            }
        }
    }

    if cfg.rotate_z {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let (s, c) = theta.sin_cos();
        for p in &mut out.coords {
            let x = p[0] - center[0];
            let y = p[1] - center[1];
            p[0] = center[0] + c * x - s * y;
            p[1] = center[1] + s * x + c * y;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pccore::dist2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_cloud(n: usize, seed: u64) -> LabeledCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = (0..n)
            .map(|_| {
                [
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(0.0..3.0),
                ]
            })
            .collect();
        let labels = (0..n).map(|i| (i % 6) as u8).collect();
        LabeledCloud::new(coords, None, Some(labels)).unwrap()
    }

    fn distances(c: &LabeledCloud) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..c.len() {
            for j in 0..c.len() {
                out.push(dist2(&c.coords[i], &c.coords[j]).sqrt());
            }
        }
        out
    }

    #[test]
    fn identity_config() {
        let c = sample_cloud(50, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(augment(&c, &AugConfig::identity(), &mut rng).unwrap(), c);
    }

    #[test]
    fn rotation_is_rigid_about_z() {
        let c = sample_cloud(40, 2);
        let cfg = AugConfig {
            rotate_z: true,
            ..AugConfig::identity()
        };
        let out = augment(&c, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for (a, b) in c.coords.iter().zip(&out.coords) {
            assert_eq!(a[2], b[2]);
        }
        for (a, b) in distances(&c).iter().zip(distances(&out)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_multiplies_distances() {
        let c = sample_cloud(40, 4);
        let cfg = AugConfig {
            scale_range: (1.1, 1.1),
            ..AugConfig::identity()
        };
        let out = augment(&c, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (a, b) in distances(&c).iter().zip(distances(&out)) {
            assert!((a * 1.1 - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shuffle_co_permutes_labels() {
        let c = sample_cloud(60, 5);
        let cfg = AugConfig {
            shuffle: true,
            ..AugConfig::identity()
        };
        let out = augment(&c, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_ne!(out.coords, c.coords);
        for (p, l) in out.coords.iter().zip(out.labels.as_ref().unwrap()) {
            let i = c.coords.iter().position(|q| q == p).unwrap();
            assert_eq!(c.labels.as_ref().unwrap()[i], *l);
        }
    }

    #[test]
    fn deterministic_given_rng_state() {
        let c = sample_cloud(80, 6);
        let cfg = AugConfig::default();
        let a = augment(&c, &cfg, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        let b = augment(&c, &cfg, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_scale() {
        let cfg = AugConfig {
            scale_range: (1.2, 1.0),
            ..AugConfig::default()
        };
        assert!(augment(&sample_cloud(3, 0), &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
