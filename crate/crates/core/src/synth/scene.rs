use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::geometry::{normalize, Primitive};
use crate::pccore::{ClassId, LabeledCloud, Point3};
use crate::{Error, Result};

/// Default sampling density, points per square meter.
pub const DEFAULT_DENSITY: f64 = 750.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainSpec {
    /// Peak height of the ground undulation, meters.
    pub amplitude: f64,
    /// Wavelength of the undulation, meters.
    pub wavelength: f64,
    /// Height of the vegetation clutter on natural ground: each natural
    /// point is lifted by a uniform draw in `[0, roughness)`. Roads stay smooth.
    #[serde(default)]
    pub roughness: f64,
}

/// A straight ground strip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSpec {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BridgeSpec {
    /// Plan-view polyline of the deck center line.
    pub deck: Vec<[f64; 2]>,
    pub width: f64,
    /// Height of the deck top above the datum.
    pub elevation: f64,
    pub thickness: f64,
    /// Distance between piers along the deck; 0 builds no piers.
    pub pier_spacing: f64,
    pub pier_radius: f64,
}

impl Default for BridgeSpec {
    fn default() -> Self {
        BridgeSpec {
            deck: Vec::new(),
            width: 8.0,
            elevation: 7.0,
            thickness: 1.0,
            pier_spacing: 15.0,
            pier_radius: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarSpec {
    pub count: usize,
    pub length: [f64; 2],
    pub width: [f64; 2],
    pub height: [f64; 2],
}

impl Default for CarSpec {
    fn default() -> Self {
        CarSpec {
            count: 6,
            length: [3.8, 4.8],
            width: [1.6, 2.0],
            height: [1.4, 1.8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoleSpec {
    pub count: usize,
    pub height: [f64; 2],
    pub radius: [f64; 2],
}

impl Default for PoleSpec {
    fn default() -> Self {
        PoleSpec {
            count: 4,
            height: [6.0, 10.0],
            radius: [0.1, 0.2],
        }
    }
}

/// Layout of a synthetic interchange. The scene spans `[0, extent.x] × [0, extent.y]` in plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub extent: [f64; 2],
    /// Surface sampling density, points per square meter.
    pub density: f64,
    /// Gaussian offset of sampled points along the surface normal, meters.
    pub noise_sigma: f64,
    pub terrain: Option<TerrainSpec>,
    pub roads: Vec<RoadSpec>,
    pub bridges: Vec<BridgeSpec>,
    pub cars: CarSpec,
    pub poles: PoleSpec,
    /// Rail height along both deck edges; 0 builds no guardrails.
    pub guardrail_height: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            extent: [40.0, 40.0],
            density: DEFAULT_DENSITY,
            noise_sigma: 0.01,
            terrain: Some(TerrainSpec {
                amplitude: 0.5,
                wavelength: 20.0,
                roughness: 0.15,
            }),
            roads: vec![RoadSpec {
                start: [0.0, 12.0],
                end: [40.0, 12.0],
                width: 7.0,
            }],
            bridges: vec![
                BridgeSpec {
                    deck: vec![[0.0, 5.0], [20.0, 22.0], [40.0, 35.0]],
                    elevation: 7.0,
                    ..BridgeSpec::default()
                },
                BridgeSpec {
                    deck: vec![[8.0, 40.0], [22.0, 0.0]],
                    elevation: 13.0,
                    ..BridgeSpec::default()
                },
            ],
            cars: CarSpec::default(),
            poles: PoleSpec::default(),
            guardrail_height: 0.9,
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config {
            key: key.into(),
            message: format!("must be > 0, got {v}"),
        })
    }
}

fn range(key: &str, r: [f64; 2]) -> Result<()> {
    positive(key, r[0])?;
    if r[1] < r[0] {
        return Err(Error::Config {
            key: key.into(),
            message: format!("range {r:?} is reversed"),
        });
    }
    Ok(())
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        positive("extent", self.extent[0])?;
        positive("extent", self.extent[1])?;
        positive("density", self.density)?;
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config {
                key: "noise_sigma".into(),
                message: "must be >= 0".into(),
            });
        }
        if let Some(t) = &self.terrain {
            if !(t.amplitude >= 0.0) {
                return Err(Error::Config {
                    key: "terrain.amplitude".into(),
                    message: "must be >= 0".into(),
                });
            }
            positive("terrain.wavelength", t.wavelength)?;
            if !(t.roughness >= 0.0 && t.roughness.is_finite()) {
                return Err(Error::Config {
                    key: "terrain.roughness".into(),
                    message: "must be a finite value >= 0".into(),
                });
            }
        }
        for r in &self.roads {
            positive("roads.width", r.width)?;
            if r.start == r.end {
                return Err(Error::Config {
                    key: "roads".into(),
                    message: "road start equals end".into(),
                });
            }
        }
        for b in &self.bridges {
            if b.deck.len() < 2 || b.deck.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Config {
                    key: "bridges.deck".into(),
                    message: "needs at least two distinct points".into(),
                });
            }
            positive("bridges.width", b.width)?;
            positive("bridges.elevation", b.elevation)?;
            positive("bridges.thickness", b.thickness)?;
            if b.thickness >= b.elevation {
                return Err(Error::Config {
                    key: "bridges.thickness".into(),
                    message: "deck thicker than its elevation".into(),
                });
            }
            if !(b.pier_spacing >= 0.0) {
                return Err(Error::Config {
                    key: "bridges.pier_spacing".into(),
                    message: "must be >= 0".into(),
                });
            }
            positive("bridges.pier_radius", b.pier_radius)?;
        }
        if self.cars.count > 0 {
            range("cars.length", self.cars.length)?;
            range("cars.width", self.cars.width)?;
            range("cars.height", self.cars.height)?;
        }
        if self.poles.count > 0 {
            range("poles.height", self.poles.height)?;
            range("poles.radius", self.poles.radius)?;
        }
        if !(self.guardrail_height >= 0.0) {
            return Err(Error::Config {
                key: "guardrail_height".into(),
                message: "must be >= 0".into(),
            });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<SceneSpec> {
        let spec: SceneSpec = serde_json::from_str(text)
            .map_err(|e| Error::parse(format!("scene spec line {}", e.line()), e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SceneSpec> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// A random interchange: undulating terrain, two crossing ground roads,
    /// two or three decks at stacked elevations, cars, poles, guardrails.
    pub fn random(extent: f64, density: f64, seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = extent;
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let y_road = u(0.25, 0.75) * e;
        let x_road = u(0.25, 0.75) * e;
        let roads = vec![
            RoadSpec {
                start: [0.0, y_road],
                end: [e, y_road + u(-0.2, 0.2) * e],
                width: u(6.0, 9.0),
            },
            RoadSpec {
                start: [x_road, 0.0],
                end: [x_road + u(-0.2, 0.2) * e, e],
                width: u(6.0, 9.0),
            },
        ];
        let n_decks = if u(0.0, 1.0) < 0.5 { 2 } else { 3 };
        let mut bridges = Vec::new();
        for level in 0..n_decks {
            let elevation = 6.0 + 6.0 * level as f64 + u(-0.5, 1.5);
            // Alternate roughly diagonal directions so the decks cross.
            let (a, b) = if level % 2 == 0 {
                ([0.0, u(0.0, 0.4) * e], [e, u(0.6, 1.0) * e])
            } else {
                ([u(0.0, 0.4) * e, e], [u(0.6, 1.0) * e, 0.0])
            };
            let mid = [
                0.5 * (a[0] + b[0]) + u(-0.15, 0.15) * e,
                0.5 * (a[1] + b[1]) + u(-0.15, 0.15) * e,
            ];
            bridges.push(BridgeSpec {
                deck: vec![a, mid, b],
                width: u(7.0, 10.0),
                elevation,
                thickness: u(0.8, 1.4),
                pier_spacing: u(12.0, 18.0),
                pier_radius: u(0.5, 0.8),
            });
        }
        let area_scale = (e * e / 1600.0).max(0.25);
        SceneSpec {
            extent: [e, e],
            density,
            noise_sigma: 0.01,
            terrain: Some(TerrainSpec {
                amplitude: u(0.3, 1.0),
                wavelength: u(15.0, 30.0),
                roughness: u(0.1, 0.25),
            }),
            roads,
            bridges,
            cars: CarSpec {
                count: ((u(6.0, 10.0)) * area_scale).round().max(2.0) as usize,
                ..CarSpec::default()
            },
            poles: PoleSpec {
                count: ((u(4.0, 8.0)) * area_scale).round().max(2.0) as usize,
                ..PoleSpec::default()
            },
            guardrail_height: 0.9,
        }
    }
}

/// Undulating ground with road strips on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ground {
    pub extent: [f64; 2],
    /// `(kx, ky, phase)` of each sinusoid; empty when there is no terrain.
    pub waves: Vec<[f64; 3]>,
    pub amplitude: f64,
    pub has_terrain: bool,
    pub roads: Vec<RoadSpec>,
}

impl Ground {
    pub fn height(&self, x: f64, y: f64) -> f64 {
        if self.waves.is_empty() {
            return 0.0;
        }
        let s: f64 = self
            .waves
            .iter()
            .map(|w| (w[0] * x + w[1] * y + w[2]).sin())
            .sum();
        self.amplitude * s / self.waves.len() as f64
    }

    pub fn normal(&self, x: f64, y: f64) -> Point3 {
        if self.waves.is_empty() {
            return [0.0, 0.0, 1.0];
        }
        let k = self.amplitude / self.waves.len() as f64;
        let (mut gx, mut gy) = (0.0, 0.0);
        for w in &self.waves {
            let c = (w[0] * x + w[1] * y + w[2]).cos();
            gx += k * w[0] * c;
            gy += k * w[1] * c;
        }
        normalize([-gx, -gy, 1.0])
    }

    pub fn in_extent(&self, x: f64, y: f64) -> bool {
        (0.0..=self.extent[0]).contains(&x) && (0.0..=self.extent[1]).contains(&y)
    }

    pub fn on_road(&self, x: f64, y: f64) -> bool {
        self.roads
            .iter()
            .any(|r| strip_contains(r.start, r.end, r.width, x, y))
    }

    /// Class of the ground surface at `(x, y)`, if there is any.
    pub fn class_at(&self, x: f64, y: f64) -> Option<ClassId> {
        if self.on_road(x, y) {
            Some(ClassId::ROAD)
        } else if self.has_terrain && self.in_extent(x, y) {
            Some(ClassId::NATURAL)
        } else {
            None
        }
    }

    /// Height bounds of the surface.
    pub fn z_range(&self) -> (f64, f64) {
        if self.waves.is_empty() {
            (0.0, 0.0)
        } else {
            (-self.amplitude, self.amplitude)
        }
    }
}

fn strip_contains(a: [f64; 2], b: [f64; 2], width: f64, x: f64, y: f64) -> bool {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let w = [x - a[0], y - a[1]];
    let along = (w[0] * d[0] + w[1] * d[1]) / len2;
    let lateral = (w[0] * d[1] - w[1] * d[0]).abs() / len2.sqrt();
    (0.0..=1.0).contains(&along) && lateral <= width / 2.0
}

/// A scene's geometry: the ground plus a primitive list with class bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub spec: SceneSpec,
    pub ground: Ground,
    pub primitives: Vec<Primitive>,
}

/// A straight stretch cars and poles can be placed along.
struct Lane {
    start: [f64; 2],
    end: [f64; 2],
    width: f64,
    /// Deck top elevation, or `None` for the ground.
    elevation: Option<f64>,
}

fn quad(origin: Point3, u: Point3, v: Point3, class: ClassId) -> Primitive {
    Primitive::Quad {
        origin,
        u,
        v,
        class: class.0,
    }
}

/// Instantiates the spec's objects; random placements depend only on the seed.
pub fn build_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves = match &spec.terrain {
        Some(t) if t.amplitude > 0.0 => (0..3)
            .map(|_| {
                let dir: f64 = rng.random_range(0.0..2.0 * PI);
                let k = 2.0 * PI / (t.wavelength * rng.random_range(0.7..1.3));
                [
                    k * dir.cos(),
                    k * dir.sin(),
                    rng.random_range(0.0..2.0 * PI),
                ]
            })
            .collect(),
        _ => Vec::new(),
    };
    let ground = Ground {
        extent: spec.extent,
        waves,
        amplitude: spec.terrain.as_ref().map_or(0.0, |t| t.amplitude),
        has_terrain: spec.terrain.is_some(),
        roads: spec.roads.clone(),
    };
    let mut prims = Vec::new();
    let mut lanes: Vec<Lane> = spec
        .roads
        .iter()
        .map(|r| Lane {
            start: r.start,
            end: r.end,
            width: r.width,
            elevation: None,
        })
        .collect();
    for b in &spec.bridges {
        let (top, bottom) = (b.elevation, b.elevation - b.thickness);
        let mut carried = 0.0;
        let mut next_pier = b.pier_spacing / 2.0;
        for w in b.deck.windows(2) {
            let (a, c) = (w[0], w[1]);
            let d = [c[0] - a[0], c[1] - a[1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            let n = [-d[1] / len, d[0] / len];
            let half = b.width / 2.0;
            let left = [a[0] + n[0] * half, a[1] + n[1] * half];
            let right = [a[0] - n[0] * half, a[1] - n[1] * half];
            let u = [d[0], d[1], 0.0];
            let across = [n[0] * b.width, n[1] * b.width, 0.0];
            prims.push(quad([right[0], right[1], top], u, across, ClassId::BRIDGE));
            prims.push(quad(
                [right[0], right[1], bottom],
                u,
                across,
                ClassId::BRIDGE,
            ));
            for side in [left, right] {
                prims.push(quad(
                    [side[0], side[1], bottom],
                    u,
                    [0.0, 0.0, b.thickness],
                    ClassId::BRIDGE,
                ));
                if spec.guardrail_height > 0.0 {
                    prims.push(quad(
                        [side[0], side[1], top],
                        u,
                        [0.0, 0.0, spec.guardrail_height],
                        ClassId::GUARDRAIL,
                    ));
                }
            }
            if b.pier_spacing > 0.0 {
                while next_pier <= carried + len {
                    let s = (next_pier - carried) / len;
                    let (x, y) = (a[0] + s * d[0], a[1] + s * d[1]);
                    let z0 = ground.height(x, y);
                    if bottom > z0 {
                        prims.push(Primitive::Cylinder {
                            base: [x, y, z0],
                            radius: b.pier_radius,
                            height: bottom - z0,
                            class: ClassId::BRIDGE.0,
                        });
                    }
                    next_pier += b.pier_spacing;
                }
            }
            carried += len;
            lanes.push(Lane {
                start: a,
                end: c,
                // Keep vehicles and posts clear of the rails.
                width: (b.width - 1.0).max(b.width / 2.0),
                elevation: Some(top),
            });
        }
    }
    let lane_len: Vec<f64> = lanes
        .iter()
        .map(|l| ((l.end[0] - l.start[0]).powi(2) + (l.end[1] - l.start[1]).powi(2)).sqrt())
        .collect();
    let total_len: f64 = lane_len.iter().sum();
    let pick_lane = |rng: &mut ChaCha8Rng| -> Option<usize> {
        if lanes.is_empty() {
            return None;
        }
        let mut g = rng.random_range(0.0..total_len);
        for (i, l) in lane_len.iter().enumerate() {
            if g < *l {
                return Some(i);
            }
            g -= l;
        }
        Some(lanes.len() - 1)
    };
    let draw = |rng: &mut ChaCha8Rng, r: [f64; 2]| {
        if r[1] > r[0] {
            rng.random_range(r[0]..r[1])
        } else {
            r[0]
        }
    };
    for _ in 0..spec.cars.count {
        let (length, width, height) = (
            draw(&mut rng, spec.cars.length),
            draw(&mut rng, spec.cars.width),
            draw(&mut rng, spec.cars.height),
        );
        let (center, dir, base_z) = match pick_lane(&mut rng) {
            Some(i) => {
                let l = &lanes[i];
                let d = [l.end[0] - l.start[0], l.end[1] - l.start[1]];
                let len = lane_len[i];
                let dir = [d[0] / len, d[1] / len];
                let s = rng.random_range(0.0..1.0);
                let slack = ((l.width - width) / 2.0).max(0.0);
                let off = if slack > 0.0 {
                    rng.random_range(-slack..slack)
                } else {
                    0.0
                };
                let c = [
                    l.start[0] + s * d[0] - dir[1] * off,
                    l.start[1] + s * d[1] + dir[0] * off,
                ];
                let z = l.elevation.unwrap_or_else(|| ground.height(c[0], c[1]));
                (c, dir, z)
            }
            None => {
                let c = [
                    rng.random_range(0.0..spec.extent[0]),
                    rng.random_range(0.0..spec.extent[1]),
                ];
                let a: f64 = rng.random_range(0.0..2.0 * PI);
                (c, [a.cos(), a.sin()], ground.height(c[0], c[1]))
            }
        };
        push_box(
            &mut prims,
            center,
            dir,
            base_z,
            [length, width, height],
            ClassId::CAR,
        );
    }
    for _ in 0..spec.poles.count {
        let (height, radius) = (
            draw(&mut rng, spec.poles.height),
            draw(&mut rng, spec.poles.radius),
        );
        let (x, y, z) = match pick_lane(&mut rng) {
            Some(i) => {
                let l = &lanes[i];
                let d = [l.end[0] - l.start[0], l.end[1] - l.start[1]];
                let len = lane_len[i];
                let s = rng.random_range(0.0..1.0);
                let side = if rng.random_range(0.0..1.0) < 0.5 {
                    -1.0
                } else {
                    1.0
                };
                // Ground posts stand beside the road, deck posts just inside the rail.
                let off = side
                    * match l.elevation {
                        None => l.width / 2.0 + 1.5,
                        Some(_) => l.width / 2.0 - radius,
                    };
                let (x, y) = (
                    l.start[0] + s * d[0] - d[1] / len * off,
                    l.start[1] + s * d[1] + d[0] / len * off,
                );
                (x, y, l.elevation.unwrap_or_else(|| ground.height(x, y)))
            }
            None => {
                let (x, y) = (
                    rng.random_range(0.0..spec.extent[0]),
                    rng.random_range(0.0..spec.extent[1]),
                );
                (x, y, ground.height(x, y))
            }
        };
        prims.push(Primitive::Cylinder {
            base: [x, y, z],
            radius,
            height,
            class: ClassId::POLE.0,
        });
    }
    Ok(Scene {
        spec: spec.clone(),
        ground,
        primitives: prims,
    })
}

/// Top and four sides of a box standing on `base_z`, long axis along `dir`.
fn push_box(
    prims: &mut Vec<Primitive>,
    center: [f64; 2],
    dir: [f64; 2],
    base_z: f64,
    size: [f64; 3],
    class: ClassId,
) {
    let [l, w, h] = size;
    let fwd = [dir[0] * l, dir[1] * l, 0.0];
    let side = [-dir[1] * w, dir[0] * w, 0.0];
    let up = [0.0, 0.0, h];
    let corner = [
        center[0] - fwd[0] / 2.0 - side[0] / 2.0,
        center[1] - fwd[1] / 2.0 - side[1] / 2.0,
        base_z,
    ];
    let at = |a: f64, b: f64, z: f64| {
        [
            corner[0] + a * fwd[0] + b * side[0],
            corner[1] + a * fwd[1] + b * side[1],
            z,
        ]
    };
    prims.push(quad(at(0.0, 0.0, base_z + h), fwd, side, class));
    prims.push(quad(at(0.0, 0.0, base_z), fwd, up, class));
    prims.push(quad(at(0.0, 1.0, base_z), fwd, up, class));
    prims.push(quad(at(0.0, 0.0, base_z), side, up, class));
    prims.push(quad(at(1.0, 0.0, base_z), side, up, class));
}

/// Albedo used for simulated intensity.
pub(crate) fn albedo(class: ClassId) -> f64 {
    match class.0 {
        0 => 0.35,
        1 => 0.6,
        2 => 0.25,
        3 => 0.8,
        4 => 0.5,
        5 => 0.9,
        _ => 0.5,
    }
}

/// Lambertian intensity under a fixed light from above.
fn sampled_intensity(class: ClassId, normal: Point3) -> f64 {
    let light = normalize([0.3, 0.2, 1.0]);
    let c = (normal[0] * light[0] + normal[1] * light[1] + normal[2] * light[2]).abs();
    (albedo(class) * c).clamp(0.0, 1.0)
}

/// Number of samples for `area`, rounded stochastically so the expectation is exact.
fn sample_count(rng: &mut ChaCha8Rng, area: f64, density: f64) -> usize {
    let x = area * density;
    let base = x.floor();
    base as usize + (rng.random_range(0.0..1.0) < x - base) as usize
}

impl Scene {
    /// Samples every surface at the spec density.
    pub fn sample(&self, seed: u64) -> Result<LabeledCloud> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = self.spec.noise_sigma;
        let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::Argument(e.to_string()))?;
        let mut coords = Vec::new();
        let mut intensity = Vec::new();
        let mut labels = Vec::new();
        let mut push = |p: Point3, n: Point3, class: ClassId, rng: &mut ChaCha8Rng| {
            // Truncated at three sigma so every point stays within a known band of its surface.
            let e = if sigma > 0.0 {
                noise.sample(rng).clamp(-3.0 * sigma, 3.0 * sigma)
            } else {
                0.0
            };
            coords.push([p[0] + e * n[0], p[1] + e * n[1], p[2] + e * n[2]]);
            intensity.push(sampled_intensity(class, n));
            labels.push(class.0);
        };
        let g = &self.ground;
        let density = self.spec.density;
        if g.has_terrain {
            let [ex, ey] = g.extent;
            let rough = self.spec.terrain.as_ref().map_or(0.0, |t| t.roughness);
            for _ in 0..sample_count(&mut rng, ex * ey, density) {
                let (x, y) = (rng.random_range(0.0..ex), rng.random_range(0.0..ey));
                let class = g.class_at(x, y).expect("terrain covers the extent");
                let lift = if class == ClassId::NATURAL && rough > 0.0 {
                    rng.random_range(0.0..rough)
                } else {
                    0.0
                };
                push(
                    [x, y, g.height(x, y) + lift],
                    g.normal(x, y),
                    class,
                    &mut rng,
                );
            }
        } else {
            for r in &g.roads {
                let d = [r.end[0] - r.start[0], r.end[1] - r.start[1]];
                let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
                for _ in 0..sample_count(&mut rng, len * r.width, density) {
                    let s = rng.random_range(0.0..1.0);
                    let t = rng.random_range(-0.5..0.5) * r.width;
                    let (x, y) = (
                        r.start[0] + s * d[0] - d[1] / len * t,
                        r.start[1] + s * d[1] + d[0] / len * t,
                    );
                    push(
                        [x, y, g.height(x, y)],
                        g.normal(x, y),
                        ClassId::ROAD,
                        &mut rng,
                    );
                }
            }
        }
        for prim in &self.primitives {
            for _ in 0..sample_count(&mut rng, prim.area(), density) {
                let (a, b) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
                let (p, n) = prim.surface_point(a, b);
                push(p, n, prim.class(), &mut rng);
            }
        }
        LabeledCloud::new(coords, Some(intensity), Some(labels))
    }
}

/// Samples a labeled cloud from a scene spec.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<LabeledCloud> {
    build_scene(spec, seed)?.sample(seed.wrapping_add(0x9e37_79b9_7f4a_7c15))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_spec() -> SceneSpec {
        SceneSpec {
            terrain: None,
            roads: Vec::new(),
            bridges: Vec::new(),
            cars: CarSpec {
                count: 0,
                ..CarSpec::default()
            },
            poles: PoleSpec {
                count: 0,
                ..PoleSpec::default()
            },
            ..SceneSpec::default()
        }
    }

    #[test]
    fn road_strip_count_and_height() {
        let spec = SceneSpec {
            roads: vec![RoadSpec {
                start: [0.0, 2.0],
                end: [10.0, 2.0],
                width: 4.0,
            }],
            ..empty_spec()
        };
        let cloud = generate_scene(&spec, 1).unwrap();
        let expected = 10.0 * 4.0 * 750.0;
        assert!((cloud.len() as f64 - expected).abs() < 0.05 * expected);
        assert!(cloud
            .labels
            .as_ref()
            .unwrap()
            .iter()
            .all(|&l| l == ClassId::ROAD.0));
        assert!(cloud
            .coords
            .iter()
            .all(|p| p[2].abs() < 6.0 * spec.noise_sigma));
    }

    #[test]
    fn poles_stay_near_their_axis() {
        let spec = SceneSpec {
            density: 200.0,
            poles: PoleSpec {
                count: 5,
                ..PoleSpec::default()
            },
            ..empty_spec()
        };
        let scene = build_scene(&spec, 3).unwrap();
        let cloud = scene.sample(4).unwrap();
        let poles: Vec<&Primitive> = scene
            .primitives
            .iter()
            .filter(|p| p.class() == ClassId::POLE)
            .collect();
        assert_eq!(poles.len(), 5);
        for (p, &l) in cloud.coords.iter().zip(cloud.labels.as_ref().unwrap()) {
            assert_eq!(l, ClassId::POLE.0);
            let ok = poles.iter().any(|c| match c {
                Primitive::Cylinder {
                    radius,
                    base,
                    height,
                    ..
                } => {
                    c.axis_distance(p).unwrap() <= radius + 3.0 * spec.noise_sigma + 1e-9
                        && p[2] >= base[2] - 1e-9
                        && p[2] <= base[2] + height + 1e-9
                }
                _ => false,
            });
            assert!(ok, "{p:?}");
        }
    }

    #[test]
    fn stacked_decks_form_two_height_clusters() {
        let deck = |elevation| BridgeSpec {
            deck: vec![[0.0, 10.0], [20.0, 10.0]],
            elevation,
            pier_spacing: 0.0,
            ..BridgeSpec::default()
        };
        let spec = SceneSpec {
            density: 50.0,
            bridges: vec![deck(6.0), deck(12.0)],
            guardrail_height: 0.0,
            ..empty_spec()
        };
        let cloud = generate_scene(&spec, 5).unwrap();
        let z: Vec<f64> = cloud.coords.iter().map(|p| p[2]).collect();
        assert!(!z.is_empty());
        let low = z.iter().filter(|&&z| (4.9..=6.1).contains(&z)).count();
        let high = z.iter().filter(|&&z| (10.9..=12.1).contains(&z)).count();
        assert_eq!(low + high, z.len());
        assert!(low > 100 && high > 100);
        assert!((low as f64 / high as f64 - 1.0).abs() < 0.1);
    }

    #[test]
    fn default_and_random_specs_cover_all_classes() {
        for spec in [
            SceneSpec {
                density: 5.0,
                ..SceneSpec::default()
            },
            SceneSpec::random(40.0, 5.0, 11),
        ] {
            let cloud = generate_scene(&spec, 2).unwrap();
            let hist = cloud.class_histogram();
            assert!(hist.iter().all(|&n| n > 0), "{hist:?}");
        }
    }

    #[test]
    fn seeded_determinism() {
        let spec = SceneSpec::random(30.0, 3.0, 2);
        assert_eq!(
            generate_scene(&spec, 9).unwrap(),
            generate_scene(&spec, 9).unwrap()
        );
        assert_ne!(
            generate_scene(&spec, 9).unwrap(),
            generate_scene(&spec, 10).unwrap()
        );
    }

    #[test]
    fn validation_and_json() {
        let bad = SceneSpec {
            extent: [0.0, 10.0],
            ..SceneSpec::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "extent"));
        let spec = SceneSpec::from_json(r#"{"extent": [20, 30], "density": 10}"#).unwrap();
        assert_eq!(spec.extent, [20.0, 30.0]);
        assert!(SceneSpec::from_json(r#"{"extnt": [20, 30]}"#).is_err());
        let text = serde_json::to_string(&SceneSpec::default()).unwrap();
        assert_eq!(SceneSpec::from_json(&text).unwrap(), SceneSpec::default());
    }
}
