use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::disposition::{influence_row, KernelDisposition};
use crate::nncore::{gemm, Matrix};
use crate::pccore::{NeighborTable, Point3};
use crate::{Error, Result};

/// Kernel weights, laid out `[k][c_in][c_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub kernel_size: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub values: Vec<f64>,
}

impl ConvWeights {
    pub fn zeros(kernel_size: usize, c_in: usize, c_out: usize) -> Self {
        ConvWeights {
            kernel_size,
            c_in,
            c_out,
            values: vec![0.0; kernel_size * c_in * c_out],
        }
    }

    pub fn from_vec(
        kernel_size: usize,
        c_in: usize,
        c_out: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != kernel_size * c_in * c_out {
            return Err(Error::Shape(format!(
                "{} values for kernel weights {kernel_size}x{c_in}x{c_out}",
                values.len()
            )));
        }
        Ok(ConvWeights {
            kernel_size,
            c_in,
            c_out,
            values,
        })
    }

    /// He-style normal initialization with fan-in `kernel_size * c_in`.
    pub fn random<R: Rng + ?Sized>(
        kernel_size: usize,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / (kernel_size * c_in) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let values = (0..kernel_size * c_in * c_out)
            .map(|_| normal.sample(rng))
            .collect();
        ConvWeights {
            kernel_size,
            c_in,
            c_out,
            values,
        }
    }

    /// The `c_in × c_out` block of kernel point `k`.
    pub fn kernel(&self, k: usize) -> &[f64] {
        let n = self.c_in * self.c_out;
        &self.values[k * n..(k + 1) * n]
    }
}

/// Operands of one convolution: queries, supports, their neighbor table
/// and support features with a trailing zero shadow row.
#[derive(Debug, Clone, Copy)]
pub struct ConvInput<'a> {
    pub queries: &'a [Point3],
    pub supports: &'a [Point3],
    pub neighbors: &'a NeighborTable,
    /// `(S + 1) × C_in`, row `S` all zeros.
    pub features: &'a Matrix,
}

impl ConvInput<'_> {
    fn validate(&self, kd: &KernelDisposition) -> Result<()> {
        let s = self.supports.len();
        if self.features.rows() != s + 1 {
            return Err(Error::Shape(format!(
                "features have {} rows, expected {} supports plus the shadow row",
                self.features.rows(),
                s
            )));
        }
        if self.features.row(s).iter().any(|&v| v != 0.0) {
            return Err(Error::Argument("shadow feature row must be zero".into()));
        }
        let (r_table, r_kernel) = (self.neighbors.radius(), kd.radius);
        if (r_table - r_kernel).abs() > 1e-12 * r_kernel.max(1.0) {
            return Err(Error::Argument(format!(
                "neighbor radius {r_table} differs from kernel radius {r_kernel}"
            )));
        }
        Ok(())
    }
}

/// Kernel influences of every neighbor slot of a neighbor table.
///
/// Neighborhoods are shared by all convolutions of one scale, so the
/// `M × width × K` influence values are computed once and reused for the
/// forward and backward passes of each of them.
#[derive(Debug, Clone)]
pub struct InfluenceTable {
    num_queries: usize,
    num_supports: usize,
    width: usize,
    kernel_size: usize,
    indices: Vec<usize>,
    h: Vec<f64>,
}

impl InfluenceTable {
    pub fn new(
        queries: &[Point3],
        supports: &[Point3],
        neighbors: &NeighborTable,
        kd: &KernelDisposition,
    ) -> Result<Self> {
        if neighbors.num_queries() != queries.len() || neighbors.num_supports() != supports.len() {
            return Err(Error::Shape(format!(
                "neighbor table is {}→{}, points are {}→{}",
                neighbors.num_queries(),
                neighbors.num_supports(),
                queries.len(),
                supports.len()
            )));
        }
        let width = neighbors.width();
        let k = kd.len();
        let mut h = vec![0.0; queries.len() * width * k];
        for (m, q) in queries.iter().enumerate() {
            for (slot, &i) in neighbors.neighbors(m).iter().enumerate() {
                let s = &supports[i];
                let rel = [s[0] - q[0], s[1] - q[1], s[2] - q[2]];
                let off = (m * width + slot) * k;
                influence_row(&rel, kd, &mut h[off..off + k]);
            }
        }
        Ok(InfluenceTable {
            num_queries: queries.len(),
            num_supports: supports.len(),
            width,
            kernel_size: k,
            indices: neighbors.as_slice().to_vec(),
            h,
        })
    }

    pub fn num_queries(&self) -> usize {
        self.num_queries
    }

    pub fn num_supports(&self) -> usize {
        self.num_supports
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    fn check(&self, features: &Matrix, weights: &[f64], c_out: usize) -> Result<usize> {
        let c_in = features.cols();
        if features.rows() < self.num_supports {
            return Err(Error::Shape(format!(
                "{} feature rows for {} supports",
                features.rows(),
                self.num_supports
            )));
        }
        if weights.len() != self.kernel_size * c_in * c_out {
            return Err(Error::Shape(format!(
                "{} weights for K={} C_in={c_in} C_out={c_out}",
                weights.len(),
                self.kernel_size
            )));
        }
        Ok(c_in)
    }

    /// Per-kernel weighted feature sums of every query, `M × (K · C_in)`.
    fn gather(&self, features: &Matrix) -> Vec<f64> {
        let (k, c_in) = (self.kernel_size, features.cols());
        let mut acc = vec![0.0; self.num_queries * k * c_in];
        for (m, a) in acc.chunks_exact_mut(k * c_in.max(1)).enumerate() {
            let row = &self.indices[m * self.width..(m + 1) * self.width];
            for (slot, &i) in row.iter().enumerate() {
                if i >= self.num_supports {
                    break;
                }
                let f = features.row(i);
                let hs = &self.h[(m * self.width + slot) * k..(m * self.width + slot + 1) * k];
                for (kk, &hv) in hs.iter().enumerate() {
                    if hv == 0.0 {
                        continue;
                    }
                    axpy(hv, f, &mut a[kk * c_in..(kk + 1) * c_in]);
                }
            }
        }
        acc
    }

    /// `out[m] = Σ_i Σ_k h_ik · f_i W_k`. Features may carry extra rows
    /// beyond the supports; indices at or past the support count are shadow.
    pub fn forward(&self, features: &Matrix, weights: &[f64], c_out: usize) -> Result<Matrix> {
        let c_in = self.check(features, weights, c_out)?;
        let kc = self.kernel_size * c_in;
        let acc = self.gather(features);
        let mut out = Matrix::zeros(self.num_queries, c_out);
        gemm(
            (self.num_queries, kc, c_out),
            (&acc, kc, 1),
            (weights, c_out, 1),
            out.as_mut_slice(),
            0.0,
        );
        Ok(out)
    }

    /// Gradients of the features (`S × C_in`) and of the weights.
    pub fn backward(
        &self,
        features: &Matrix,
        weights: &[f64],
        grad_out: &Matrix,
    ) -> Result<(Matrix, Vec<f64>)> {
        let c_out = grad_out.cols();
        let c_in = self.check(features, weights, c_out)?;
        if grad_out.rows() != self.num_queries {
            return Err(Error::Shape(format!(
                "{} gradient rows for {} queries",
                grad_out.rows(),
                self.num_queries
            )));
        }
        let (m, k) = (self.num_queries, self.kernel_size);
        let kc = k * c_in;
        let acc = self.gather(features);
        let mut grad_w = vec![0.0; weights.len()];
        gemm(
            (kc, m, c_out),
            (&acc, 1, kc),
            (grad_out.as_slice(), c_out, 1),
            &mut grad_w,
            0.0,
        );
        let mut back = vec![0.0; m * kc];
        gemm(
            (m, c_out, kc),
            (grad_out.as_slice(), c_out, 1),
            (weights, 1, c_out),
            &mut back,
            0.0,
        );
        let mut grad_f = Matrix::zeros(self.num_supports, c_in);
        for (q, b) in back.chunks_exact(kc.max(1)).enumerate() {
            let row = &self.indices[q * self.width..(q + 1) * self.width];
            for (slot, &i) in row.iter().enumerate() {
                if i >= self.num_supports {
                    break;
                }
                let hs = &self.h[(q * self.width + slot) * k..(q * self.width + slot + 1) * k];
                let gf = grad_f.row_mut(i);
                for (kk, &hv) in hs.iter().enumerate() {
                    if hv == 0.0 {
                        continue;
                    }
                    axpy(hv, &b[kk * c_in..(kk + 1) * c_in], gf);
                }
            }
        }
        Ok((grad_f, grad_w))
    }
}

/// `y += a * x` over equal-length slices.
#[inline(always)]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    let mut yc = y.chunks_exact_mut(4);
    let mut xc = x.chunks_exact(4);
    for (yv, xv) in (&mut yc).zip(&mut xc) {
        let xv: &[f64; 4] = xv.try_into().expect("chunk of 4");
        let yv: &mut [f64; 4] = yv.try_into().expect("chunk of 4");
        for t in 0..4 {
            yv[t] += a * xv[t];
        }
    }
    for (yv, xv) in yc.into_remainder().iter_mut().zip(xc.remainder()) {
        *yv += a * xv;
    }
}

fn check_weights(input: &ConvInput<'_>, w: &ConvWeights, kd: &KernelDisposition) -> Result<()> {
    if w.kernel_size != kd.len() || w.c_in != input.features.cols() {
        return Err(Error::Shape(format!(
            "weights are K={} C_in={}, kernel has {} points and features {} channels",
            w.kernel_size,
            w.c_in,
            kd.len(),
            input.features.cols()
        )));
    }
    Ok(())
}

/// KPConv at every query: `M × C_out`.
pub fn kpconv_forward(
    input: &ConvInput<'_>,
    w: &ConvWeights,
    kd: &KernelDisposition,
) -> Result<Matrix> {
    input.validate(kd)?;
    check_weights(input, w, kd)?;
    InfluenceTable::new(input.queries, input.supports, input.neighbors, kd)?.forward(
        input.features,
        &w.values,
        w.c_out,
    )
}

/// Gradients of [`kpconv_forward`] for the features (`(S + 1) × C_in`, the
/// shadow row zeroed) and the weights. Positions are treated as constants.
pub fn kpconv_backward(
    input: &ConvInput<'_>,
    w: &ConvWeights,
    kd: &KernelDisposition,
    grad_out: &Matrix,
) -> Result<(Matrix, ConvWeights)> {
    input.validate(kd)?;
    check_weights(input, w, kd)?;
    if grad_out.cols() != w.c_out {
        return Err(Error::Shape(format!(
            "gradient has {} channels, weights produce {}",
            grad_out.cols(),
            w.c_out
        )));
    }
    let table = InfluenceTable::new(input.queries, input.supports, input.neighbors, kd)?;
    let (gf, gw) = table.backward(input.features, &w.values, grad_out)?;
    let mut grad_features = Matrix::zeros(gf.rows() + 1, gf.cols());
    grad_features.as_mut_slice()[..gf.as_slice().len()].copy_from_slice(gf.as_slice());
    Ok((
        grad_features,
        ConvWeights::from_vec(w.kernel_size, w.c_in, w.c_out, gw)?,
    ))
}
