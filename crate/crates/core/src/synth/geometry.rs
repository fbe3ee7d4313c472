use serde::{Deserialize, Serialize};

use crate::pccore::{ClassId, Point3};

pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalize(a: Point3) -> Point3 {
    scale(a, 1.0 / norm(a))
}

/// Surfaces that make up a scene; every one carries the class it was built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    /// Rectangle `origin + s·u + t·v`, `s, t ∈ [0, 1]`, with `u ⊥ v`.
    Quad {
        origin: Point3,
        u: Point3,
        v: Point3,
        class: u8,
    },
    /// Lateral surface of a vertical cylinder.
    Cylinder {
        base: Point3,
        radius: f64,
        height: f64,
        class: u8,
    },
}

impl Primitive {
    pub fn class(&self) -> ClassId {
        match self {
            Primitive::Quad { class, .. } | Primitive::Cylinder { class, .. } => ClassId(*class),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Primitive::Quad { u, v, .. } => norm(cross(*u, *v)),
            Primitive::Cylinder { radius, height, .. } => {
                2.0 * std::f64::consts::PI * radius * height
            }
        }
    }

    /// Point and unit normal at surface parameters `(a, b) ∈ [0, 1)²`.
    pub fn surface_point(&self, a: f64, b: f64) -> (Point3, Point3) {
        match self {
            Primitive::Quad { origin, u, v, .. } => {
                let p = add(*origin, add(scale(*u, a), scale(*v, b)));
                (p, normalize(cross(*u, *v)))
            }
            Primitive::Cylinder {
                base,
                radius,
                height,
                ..
            } => {
                let phi = 2.0 * std::f64::consts::PI * a;
                let n = [phi.cos(), phi.sin(), 0.0];
                let p = [
                    base[0] + radius * n[0],
                    base[1] + radius * n[1],
                    base[2] + height * b,
                ];
                (p, n)
            }
        }
    }

    /// Nearest ray parameter `τ > min_t` where `origin + τ·dir` hits the surface, with the normal.
    pub fn intersect(&self, origin: Point3, dir: Point3, min_t: f64) -> Option<(f64, Point3)> {
        match self {
            Primitive::Quad {
                origin: o, u, v, ..
            } => {
                let n = cross(*u, *v);
                let denom = dot(dir, n);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = dot(sub(*o, origin), n) / denom;
                if !(t > min_t) {
                    return None;
                }
                let w = sub(add(origin, scale(dir, t)), *o);
                let s = dot(w, *u) / dot(*u, *u);
                let r = dot(w, *v) / dot(*v, *v);
                ((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&r)).then(|| (t, normalize(n)))
            }
            Primitive::Cylinder {
                base,
                radius,
                height,
                ..
            } => {
                let (px, py) = (origin[0] - base[0], origin[1] - base[1]);
                let a = dir[0] * dir[0] + dir[1] * dir[1];
                if a < 1e-18 {
                    return None;
                }
                let b = 2.0 * (px * dir[0] + py * dir[1]);
                let c = px * px + py * py - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                    if t > min_t {
                        let z = origin[2] + t * dir[2] - base[2];
                        if (0.0..=*height).contains(&z) {
                            let n = [(px + t * dir[0]) / radius, (py + t * dir[1]) / radius, 0.0];
                            return Some((t, n));
                        }
                    }
                }
                None
            }
        }
    }

    /// Distance of a point from the cylinder axis (cylinders only).
    pub fn axis_distance(&self, p: &Point3) -> Option<f64> {
        match self {
            Primitive::Cylinder { base, .. } => {
                Some(((p[0] - base[0]).powi(2) + (p[1] - base[1]).powi(2)).sqrt())
            }
            Primitive::Quad { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quad_hit_and_miss() {
        let q = Primitive::Quad {
            origin: [-1.0, -1.0, 5.0],
            u: [2.0, 0.0, 0.0],
            v: [0.0, 2.0, 0.0],
            class: 2,
        };
        let (t, n) = q.intersect([0.0; 3], [0.0, 0.0, 1.0], 0.0).unwrap();
        assert!((t - 5.0).abs() < 1e-12);
        assert_eq!(n, [0.0, 0.0, 1.0]);
        assert!(q.intersect([3.0, 0.0, 0.0], [0.0, 0.0, 1.0], 0.0).is_none());
        assert!(q.intersect([0.0; 3], [0.0, 0.0, -1.0], 0.0).is_none());
        assert!((q.area() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn cylinder_hit() {
        let c = Primitive::Cylinder {
            base: [10.0, 0.0, 0.0],
            radius: 0.5,
            height: 4.0,
            class: 4,
        };
        let (t, n) = c.intersect([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 0.0).unwrap();
        assert!((t - 9.5).abs() < 1e-12);
        assert!((n[0] + 1.0).abs() < 1e-12);
        assert!(c.intersect([0.0, 0.0, 5.0], [1.0, 0.0, 0.0], 0.0).is_none());
        let (p, _) = c.surface_point(0.3, 0.5);
        assert!((c.axis_distance(&p).unwrap() - 0.5).abs() < 1e-12);
    }
}
