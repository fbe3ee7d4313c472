use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::nncore::Matrix;
use crate::pccore::{dist2, Point3};
use crate::{Error, Result};

pub const DEFAULT_KERNEL_SIZE: usize = 15;
/// Influence distance as a multiple of the kernel radius.
pub const DEFAULT_INFLUENCE_RATIO: f64 = 1.5;
/// Fixed iteration budget of the repulsion optimizer.
pub const REPULSION_ITERATIONS: usize = 10_000;

/// Kernel point positions around a query, with the convolution radius and
/// the influence distance of each kernel point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDisposition {
    pub points: Vec<Point3>,
    pub radius: f64,
    pub influence: f64,
}

impl KernelDisposition {
    pub fn new(points: Vec<Point3>, radius: f64, influence: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Argument("kernel needs at least one point".into()));
        }
        if !(radius > 0.0) || !(influence > 0.0) {
            return Err(Error::Argument(format!(
                "kernel radius and influence must be > 0, got {radius} and {influence}"
            )));
        }
        let limit = radius * radius * (1.0 + 1e-9);
        if let Some(p) = points.iter().find(|p| dist2(p, &[0.0; 3]) > limit) {
            return Err(Error::Argument(format!(
                "kernel point {p:?} lies outside radius {radius}"
            )));
        }
        Ok(KernelDisposition {
            points,
            radius,
            influence,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same shape at another radius; the influence distance scales along.
    pub fn rescaled(&self, radius: f64) -> KernelDisposition {
        let s = radius / self.radius;
        KernelDisposition {
            points: self
                .points
                .iter()
                .map(|p| [p[0] * s, p[1] * s, p[2] * s])
                .collect(),
            radius,
            influence: self.influence * s,
        }
    }

    pub fn with_influence(mut self, influence: f64) -> Self {
        self.influence = influence;
        self
    }
}

/// One kernel point at the origin and `k - 1` points on the sphere of radius
/// `radius`, spread by minimizing the electrostatic energy `Σ 1/|x_i - x_j|`.
///
/// The optimizer is projected gradient descent from a seeded random start
/// with a fixed iteration budget, so the result only depends on the seed.
/// Influence defaults to `1.5 * radius`.
pub fn generate_kernel_points(k: usize, radius: f64, seed: u64) -> Result<KernelDisposition> {
    if k < 2 {
        return Err(Error::Argument(format!(
            "kernel size must be >= 2, got {k}"
        )));
    }
    if !(radius > 0.0) {
        return Err(Error::Argument(format!(
            "kernel radius must be > 0, got {radius}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shell: Vec<Point3> = (0..k - 1)
        .map(|_| loop {
            let v: Point3 = [
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ];
            let n = dist2(&v, &[0.0; 3]).sqrt();
            if n > 1e-6 {
                break [v[0] / n, v[1] / n, v[2] / n];
            }
        })
        .collect();

    let n = shell.len();
    let step = 0.1 / n as f64;
    let mut forces = vec![[0.0; 3]; n];
    for _ in 0..REPULSION_ITERATIONS {
        for f in forces.iter_mut() {
            *f = [0.0; 3];
        }
        for i in 0..n {
            for j in i + 1..n {
                let d = [
                    shell[i][0] - shell[j][0],
                    shell[i][1] - shell[j][1],
                    shell[i][2] - shell[j][2],
                ];
                let r2 = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).max(1e-12);
                let inv3 = 1.0 / (r2 * r2.sqrt());
                for a in 0..3 {
                    forces[i][a] += d[a] * inv3;
                    forces[j][a] -= d[a] * inv3;
                }
            }
        }
        for (p, f) in shell.iter_mut().zip(&forces) {
            let radial = f[0] * p[0] + f[1] * p[1] + f[2] * p[2];
            let mut q = [0.0; 3];
            for a in 0..3 {
                q[a] = p[a] + step * (f[a] - radial * p[a]);
            }
            let norm = dist2(&q, &[0.0; 3]).sqrt();
            *p = [q[0] / norm, q[1] / norm, q[2] / norm];
        }
    }

    let mut points = Vec::with_capacity(k);
    points.push([0.0; 3]);
    points.extend(
        shell
            .iter()
            .map(|p| [p[0] * radius, p[1] * radius, p[2] * radius]),
    );
    KernelDisposition::new(points, radius, DEFAULT_INFLUENCE_RATIO * radius)
}

/// `Σ_{i<j} 1 / |x_i - x_j|` over the given points.
pub fn repulsion_energy(points: &[Point3]) -> f64 {
    let mut e = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            e += 1.0 / dist2(&points[i], &points[j]).sqrt();
        }
    }
    e
}

/// Influence of every kernel point on every relative position, `n × K`.
pub fn kernel_influence(rel_pos: &[Point3], kd: &KernelDisposition) -> Matrix {
    let k = kd.len();
    let mut h = Matrix::zeros(rel_pos.len(), k);
    for (i, x) in rel_pos.iter().enumerate() {
        influence_row(x, kd, h.row_mut(i));
    }
    h
}

#[inline]
pub(crate) fn influence_row(rel: &Point3, kd: &KernelDisposition, out: &mut [f64]) {
    let inv_d = 1.0 / kd.influence;
    for (o, kp) in out.iter_mut().zip(&kd.points) {
        *o = (1.0 - dist2(rel, kp).sqrt() * inv_d).max(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(p: &Point3) -> f64 {
        dist2(p, &[0.0; 3]).sqrt()
    }

    #[test]
    fn two_points() {
        let kd = generate_kernel_points(2, 0.7, 3).unwrap();
        assert_eq!(kd.points[0], [0.0; 3]);
        assert!((norm(&kd.points[1]) - 0.7).abs() < 1e-12);
        assert!((kd.influence - 1.05).abs() < 1e-12);
    }

    #[test]
    fn shell_norms_and_determinism() {
        for k in [7, 15] {
            let a = generate_kernel_points(k, 1.0, 42).unwrap();
            let b = generate_kernel_points(k, 1.0, 42).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), k);
            assert_eq!(a.points.iter().filter(|p| norm(p) == 0.0).count(), 1);
            for p in &a.points[1..] {
                assert!((norm(p) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_small_kernel() {
        assert!(generate_kernel_points(1, 1.0, 0).is_err());
        assert!(generate_kernel_points(15, 0.0, 0).is_err());
    }

    #[test]
    fn influence_analytic_values() {
        let kd = KernelDisposition::new(vec![[0.0; 3], [0.2, 0.0, 0.0]], 0.2, 0.3).unwrap();
        let h = kernel_influence(
            &[
                [0.2, 0.0, 0.0],
                [0.2, 0.15, 0.0],
                [0.2, 0.3, 0.0],
                [0.2, 0.5, 0.0],
            ],
            &kd,
        );
        assert!((h[(0, 1)] - 1.0).abs() < 1e-12);
        assert!((h[(1, 1)] - 0.5).abs() < 1e-12);
        assert!(h[(2, 1)].abs() < 1e-12);
        assert_eq!(h[(3, 1)], 0.0);
        assert!(h.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rescale_keeps_ratio() {
        let kd = generate_kernel_points(15, 1.0, 1).unwrap().rescaled(0.4);
        assert!((kd.influence - 0.6).abs() < 1e-12);
        assert!((norm(&kd.points[3]) - 0.4).abs() < 1e-12);
    }
}
