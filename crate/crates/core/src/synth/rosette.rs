use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::geometry::{add, cross, dot, normalize, scale, Primitive};
use super::scene::{albedo, Ground, Scene};
use crate::pccore::{ClassId, LabeledCloud, Point3};
use crate::{Error, Result};

/// Golden ratio, used to keep the two scan frequencies incommensurate.
const PHI: f64 = 1.618_033_988_749_895;

/// Rose-curve scan model: the beam swings out from the boresight and back
/// with `|sin(2π f_petal t)|` while the petal direction spins at `f_spin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RosetteConfig {
    /// Full field-of-view angle, degrees.
    pub fov: f64,
    /// Points per second.
    pub rate: f64,
    pub f_spin: f64,
    pub f_petal: f64,
    pub range_max: f64,
    pub range_noise_sigma: f64,
}

impl Default for RosetteConfig {
    fn default() -> Self {
        RosetteConfig {
            fov: 38.4,
            rate: 100_000.0,
            f_spin: 16.0 * PHI,
            f_petal: 32.0,
            range_max: 260.0,
            range_noise_sigma: 0.02,
        }
    }
}

impl RosetteConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: key.into(),
                message,
            })
        };
        if !(self.fov > 0.0 && self.fov < 180.0) {
            return bad("fov", format!("must be in (0, 180), got {}", self.fov));
        }
        for (key, v) in [
            ("rate", self.rate),
            ("f_spin", self.f_spin),
            ("f_petal", self.f_petal),
            ("range_max", self.range_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(key, format!("must be > 0, got {v}"));
            }
        }
        if !(self.range_noise_sigma >= 0.0) {
            return bad("range_noise_sigma", "must be >= 0".into());
        }
        // Small-denominator ratios close the curve on itself and stop filling the disk.
        let ratio = self.f_spin / self.f_petal;
        for q in 1..=12u32 {
            let p = (ratio * q as f64).round();
            if (ratio * q as f64 - p).abs() < 1e-6 {
                return bad(
                    "f_spin",
                    format!("f_spin / f_petal = {p}/{q} repeats; choose an incommensurate pair"),
                );
            }
        }
        Ok(())
    }

    pub fn half_fov(&self) -> f64 {
        self.fov.to_radians() / 2.0
    }

    /// Off-boresight angle and azimuth at time `t`.
    pub fn angles(&self, t: f64) -> (f64, f64) {
        let theta = self.half_fov() * (2.0 * PI * self.f_petal * t).sin().abs();
        (theta, 2.0 * PI * self.f_spin * t)
    }
}

/// One emitted beam: timestamp and unit direction in the sensor frame (boresight `+z`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beam {
    pub t: f64,
    pub dir: Point3,
}

/// `round(rate · (t1 - t0))` beams at `t0 + i / rate`.
pub fn rosette_directions(cfg: &RosetteConfig, t0: f64, t1: f64) -> Vec<Beam> {
    if !(t1 > t0) {
        return Vec::new();
    }
    let n = (cfg.rate * (t1 - t0)).round() as usize;
    (0..n)
        .map(|i| {
            let t = t0 + i as f64 / cfg.rate;
            let (theta, phi) = cfg.angles(t);
            let s = theta.sin();
            Beam {
                t,
                dir: [s * phi.cos(), s * phi.sin(), theta.cos()],
            }
        })
        .collect()
}

/// Fraction of the field-of-view disk hit by at least one beam during `[0, t]`.
///
/// The disk is drawn in angle space (offset `θ / (fov/2)` as radius) onto
/// a `grid_res²` raster; a cell belongs to the disk when its center does.
pub fn fov_coverage(cfg: &RosetteConfig, t: f64, grid_res: usize) -> Result<f64> {
    if grid_res < 32 {
        return Err(Error::Argument(format!(
            "grid_res must be >= 32, got {grid_res}"
        )));
    }
    let res = grid_res as f64;
    let center = |i: usize| (i as f64 + 0.5) / res * 2.0 - 1.0;
    let in_disk = |i: usize, j: usize| center(i).powi(2) + center(j).powi(2) <= 1.0;
    let mut hit = vec![false; grid_res * grid_res];
    let n = (cfg.rate * t.max(0.0)).round() as usize;
    let half = cfg.half_fov();
    for k in 0..n {
        let (theta, phi) = cfg.angles(k as f64 / cfg.rate);
        let r = theta / half;
        let cell = |v: f64| (((v + 1.0) / 2.0 * res).floor().max(0.0) as usize).min(grid_res - 1);
        hit[cell(r * phi.cos()) * grid_res + cell(r * phi.sin())] = true;
    }
    let (mut covered, mut total) = (0usize, 0usize);
    for i in 0..grid_res {
        for j in 0..grid_res {
            if in_disk(i, j) {
                total += 1;
                covered += hit[i * grid_res + j] as usize;
            }
        }
    }
    Ok(covered as f64 / total as f64)
}

/// Sensor position and boresight direction (yaw about `+z`, pitch above the horizon).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorPose {
    pub position: Point3,
    pub yaw: f64,
    pub pitch: f64,
}

impl SensorPose {
    pub fn boresight(&self) -> Point3 {
        [
            self.pitch.cos() * self.yaw.cos(),
            self.pitch.cos() * self.yaw.sin(),
            self.pitch.sin(),
        ]
    }

    /// Sensor-frame direction in world coordinates.
    pub fn to_world(&self, d: Point3) -> Point3 {
        let f = self.boresight();
        let helper = if f[2].abs() > 0.999 {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 0.0, 1.0]
        };
        let r = normalize(cross(f, helper));
        let u = cross(r, f);
        add(add(scale(r, d[0]), scale(u, d[1])), scale(f, d[2]))
    }
}

/// Step of the ground ray march, meters.
const MARCH_STEP: f64 = 0.1;

fn ground_hit(g: &Ground, o: Point3, d: Point3, t_max: f64) -> Option<(f64, Point3, ClassId)> {
    let (zlo, zhi) = g.z_range();
    let (mut ta, mut tb) = (0.0f64, t_max);
    if d[2].abs() < 1e-12 {
        if o[2] < zlo || o[2] > zhi {
            return None;
        }
    } else {
        let (a, b) = ((zlo - o[2]) / d[2], (zhi - o[2]) / d[2]);
        ta = ta.max(a.min(b));
        tb = tb.min(a.max(b));
    }
    if ta > tb {
        return None;
    }
    let at = |t: f64| add(o, scale(d, t));
    let f = |t: f64| {
        let p = at(t);
        p[2] - g.height(p[0], p[1])
    };
    if zlo == zhi {
        let t = ta.max(1e-9);
        let p = at(t);
        return g.class_at(p[0], p[1]).map(|c| (t, g.normal(p[0], p[1]), c));
    }
    let mut t0 = ta;
    let mut f0 = f(t0);
    while t0 < tb {
        let t1 = (t0 + MARCH_STEP).min(tb);
        let f1 = f(t1);
        if f0 > 0.0 && f1 <= 0.0 {
            let (mut lo, mut hi) = (t0, t1);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let p = at(hi);
            if let Some(c) = g.class_at(p[0], p[1]) {
                return Some((hi, g.normal(p[0], p[1]), c));
            }
        }
        t0 = t1;
        f0 = f1;
    }
    None
}

impl Scene {
    /// Scene with no ground, only the given primitives.
    pub fn from_primitives(primitives: Vec<Primitive>) -> Scene {
        Scene {
            spec: super::scene::SceneSpec::default(),
            ground: Ground {
                extent: [0.0, 0.0],
                waves: Vec::new(),
                amplitude: 0.0,
                has_terrain: false,
                roads: Vec::new(),
            },
            primitives,
        }
    }

    /// Nearest surface along a ray within `t_max`: distance, normal, class.
    pub fn cast(&self, origin: Point3, dir: Point3, t_max: f64) -> Option<(f64, Point3, ClassId)> {
        let mut best = ground_hit(&self.ground, origin, dir, t_max);
        for p in &self.primitives {
            if let Some((t, n)) = p.intersect(origin, dir, 1e-9) {
                if t <= t_max && best.is_none_or(|b| t < b.0) {
                    best = Some((t, n, p.class()));
                }
            }
        }
        best
    }
}

/// Simulated scan: nearest hit per beam, Gaussian range noise, label of
/// the hit surface. Output points are in beam (time) order.
pub fn rosette_scan(
    scene: &Scene,
    pose: &SensorPose,
    cfg: &RosetteConfig,
    t0: f64,
    duration: f64,
    seed: u64,
) -> Result<LabeledCloud> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise =
        Normal::new(0.0, cfg.range_noise_sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let mut coords = Vec::new();
    let mut intensity = Vec::new();
    let mut labels = Vec::new();
    for beam in rosette_directions(cfg, t0, t0 + duration) {
        let d = pose.to_world(beam.dir);
        if let Some((t, n, class)) = scene.cast(pose.position, d, cfg.range_max) {
            let range = t + noise.sample(&mut rng);
            coords.push(add(pose.position, scale(d, range)));
            intensity.push((albedo(class) * dot(n, d).abs()).clamp(0.0, 1.0));
            labels.push(class.0);
        }
    }
    LabeledCloud::new(coords, Some(intensity), Some(labels))
}

/// A flight along the scene's x axis at `altitude`, scanning forward and
/// down, `poses` stops of `dwell` seconds each.
pub fn flyover_scan(
    scene: &Scene,
    cfg: &RosetteConfig,
    altitude: f64,
    poses: usize,
    dwell: f64,
    seed: u64,
) -> Result<LabeledCloud> {
    let [ex, ey] = scene.spec.extent;
    let mut out = LabeledCloud {
        intensity: Some(Vec::new()),
        labels: Some(Vec::new()),
        ..LabeledCloud::default()
    };
    for i in 0..poses {
        let s = (i as f64 + 0.5) / poses as f64;
        let pose = SensorPose {
            position: [s * ex, ey / 2.0, altitude],
            yaw: if i % 2 == 0 { PI / 2.0 } else { -PI / 2.0 },
            pitch: -0.9,
        };
        let part = rosette_scan(
            scene,
            &pose,
            cfg,
            i as f64 * dwell,
            dwell,
            seed.wrapping_add(i as u64),
        )?;
        out.extend(&part);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::geometry::norm;

    fn facing_plane(distance: f64, class: ClassId) -> Primitive {
        Primitive::Quad {
            origin: [-100.0, -100.0, distance],
            u: [200.0, 0.0, 0.0],
            v: [0.0, 200.0, 0.0],
            class: class.0,
        }
    }

    fn up_pose() -> SensorPose {
        SensorPose {
            position: [0.0; 3],
            yaw: 0.0,
            pitch: PI / 2.0,
        }
    }

    #[test]
    fn beam_counts_and_envelope() {
        let cfg = RosetteConfig::default();
        cfg.validate().unwrap();
        assert_eq!(rosette_directions(&cfg, 0.0, 0.1).len(), 10_000);
        let beams = rosette_directions(&cfg, 0.0, 1.0);
        assert_eq!(beams[0].dir, [0.0, 0.0, 1.0]);
        let max = beams.iter().map(|b| b.dir[2].acos()).fold(0.0, f64::max);
        assert!(max <= cfg.half_fov() + 1e-9);
        assert!((max.to_degrees() - 19.2).abs() < 1e-3);
        for b in &beams {
            assert!((norm(b.dir) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coverage_calibration_and_monotonicity() {
        let cfg = RosetteConfig::default();
        let c01 = fov_coverage(&cfg, 0.1, 64).unwrap();
        let c1 = fov_coverage(&cfg, 1.0, 64).unwrap();
        assert!((0.15..=0.25).contains(&c01), "{c01}");
        assert!(c1 >= 0.88, "{c1}");
        assert_eq!(fov_coverage(&cfg, 0.0, 64).unwrap(), 0.0);
        let mut prev = 0.0;
        for t in [0.01, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0] {
            let c = fov_coverage(&cfg, t, 64).unwrap();
            assert!(c >= prev);
            prev = c;
        }
        assert!(fov_coverage(&cfg, 1.0, 16).is_err());
    }

    #[test]
    fn commensurate_pair_rejected() {
        let cfg = RosetteConfig {
            f_spin: 16.0,
            ..RosetteConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn plane_ranges_follow_noise_model() {
        let cfg = RosetteConfig::default();
        let scene = Scene::from_primitives(vec![facing_plane(10.0, ClassId::BRIDGE)]);
        let cloud = rosette_scan(&scene, &up_pose(), &cfg, 0.0, 0.1, 1).unwrap();
        assert_eq!(cloud.len(), 10_000);
        let sigma = cfg.range_noise_sigma;
        for p in &cloud.coords {
            let r = norm(*p);
            let expected = 10.0 * r / p[2];
            assert!((r - expected).abs() <= 5.0 * sigma, "{r} vs {expected}");
        }
    }

    #[test]
    fn nearest_surface_occludes() {
        let cfg = RosetteConfig::default();
        let scene = Scene::from_primitives(vec![
            facing_plane(20.0, ClassId::ROAD),
            facing_plane(8.0, ClassId::CAR),
        ]);
        let cloud = rosette_scan(&scene, &up_pose(), &cfg, 0.0, 0.05, 2).unwrap();
        assert!(!cloud.is_empty());
        assert!(cloud.labels.unwrap().iter().all(|&l| l == ClassId::CAR.0));
        let empty = Scene::from_primitives(Vec::new());
        assert!(rosette_scan(&empty, &up_pose(), &cfg, 0.0, 0.05, 2)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn flyover_hits_scene_with_matching_labels() {
        let spec = crate::synth::SceneSpec::random(40.0, 5.0, 4);
        let scene = crate::synth::build_scene(&spec, 4).unwrap();
        let cfg = RosetteConfig::default();
        let cloud = flyover_scan(&scene, &cfg, 18.0, 2, 0.02, 3).unwrap();
        assert!(cloud.len() > 1000);
        // Re-casting each beam without noise gives the same class.
        let labels = cloud.labels.as_ref().unwrap();
        assert!(labels.iter().all(|&l| ClassId(l).is_valid()));
    }
}
