use super::matrix::Matrix;
use crate::pccore::IGNORE_LABEL;
use crate::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.1;

/// Pointwise linear map `x·W + b`.
pub fn unary_forward(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    if b.len() != w.cols() {
        return Err(Error::Shape(format!(
            "bias of length {} for {} output channels",
            b.len(),
            w.cols()
        )));
    }
    let mut out = x.matmul(w)?;
    for i in 0..out.rows() {
        for (o, bv) in out.row_mut(i).iter_mut().zip(b) {
            *o += bv;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnaryGrads {
    pub x: Matrix,
    pub w: Matrix,
    pub b: Vec<f64>,
}

pub fn unary_backward(x: &Matrix, w: &Matrix, grad_out: &Matrix) -> Result<UnaryGrads> {
    if grad_out.rows() != x.rows() || grad_out.cols() != w.cols() {
        return Err(Error::Shape(format!(
            "gradient {:?} does not match output {}x{}",
            grad_out.shape(),
            x.rows(),
            w.cols()
        )));
    }
    let gx = grad_out.matmul_t(w)?;
    let gw = x.t_matmul(grad_out)?;
    let mut gb = vec![0.0; w.cols()];
    for i in 0..grad_out.rows() {
        for (g, v) in gb.iter_mut().zip(grad_out.row(i)) {
            *g += v;
        }
    }
    Ok(UnaryGrads {
        x: gx,
        w: gw,
        b: gb,
    })
}

pub fn leaky_relu(x: &Matrix, slope: f64) -> Matrix {
    x.map(|v| if v >= 0.0 { v } else { slope * v })
}

/// Gradient through leaky ReLU, given the layer *input*.
pub fn leaky_relu_backward(input: &Matrix, grad_out: &Matrix, slope: f64) -> Result<Matrix> {
    if input.shape() != grad_out.shape() {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            input.shape(),
            grad_out.shape()
        )));
    }
    let data = input
        .as_slice()
        .iter()
        .zip(grad_out.as_slice())
        .map(|(&x, &g)| if x >= 0.0 { g } else { slope * g })
        .collect();
    Matrix::from_vec(input.rows(), input.cols(), data)
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean cross-entropy of the softmax of `logits` against `labels`.
///
/// Points labelled [`IGNORE_LABEL`] contribute nothing and get a zero
/// gradient row. With `class_weights` the mean is weighted by the weight of
/// each point's true class.
pub fn softmax_cross_entropy(
    logits: &Matrix,
    labels: &[u8],
    class_weights: Option<&[f64]>,
) -> Result<(f64, Matrix)> {
    let c = logits.cols();
    if labels.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(w) = class_weights {
        if w.len() != c {
            return Err(Error::Shape(format!(
                "{} class weights for {c} classes",
                w.len()
            )));
        }
    }
    let mut grad = Matrix::zeros(logits.rows(), c);
    let mut total_weight = 0.0;
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label == IGNORE_LABEL {
            continue;
        }
        let y = label as usize;
        if y >= c {
            return Err(Error::Argument(format!(
                "label {label} at row {i} outside {c} classes"
            )));
        }
        let weight = class_weights.map_or(1.0, |w| w[y]);
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += weight * (log_sum - row[y]);
        total_weight += weight;
        let g = grad.row_mut(i);
        for (gv, v) in g.iter_mut().zip(row) {
            *gv = weight * (v - log_sum).exp();
        }
        g[y] -= weight;
    }
    if total_weight <= 0.0 {
        return Err(Error::Data("cross-entropy over zero labeled points".into()));
    }
    let inv = 1.0 / total_weight;
    for v in grad.as_mut_slice() {
        *v *= inv;
    }
    Ok((loss * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn unary_identity_and_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(4, 3, &mut rng);
        assert_eq!(
            unary_forward(&x, &Matrix::identity(3), &[0.0; 3]).unwrap(),
            x
        );
        let out =
            unary_forward(&Matrix::zeros(4, 3), &random(3, 2, &mut rng), &[0.5, -2.0]).unwrap();
        for i in 0..4 {
            assert_eq!(out.row(i), &[0.5, -2.0]);
        }
        assert!(unary_forward(&x, &Matrix::identity(2), &[0.0; 2]).is_err());
    }

    #[test]
    fn unary_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(5, 3, &mut rng);
        let w = random(3, 2, &mut rng);
        let b = vec![0.1, -0.3];
        let proj = random(5, 2, &mut rng);
        let g = unary_backward(&x, &w, &proj).unwrap();
        let params: Vec<f64> = [x.as_slice(), w.as_slice(), &b].concat();
        let analytic: Vec<f64> = [g.x.as_slice(), g.w.as_slice(), &g.b].concat();
        let report = finite_diff_check(&params, &analytic, 1e-6, |p| {
            let x = Matrix::from_vec(5, 3, p[..15].to_vec()).unwrap();
            let w = Matrix::from_vec(3, 2, p[15..21].to_vec()).unwrap();
            let out = unary_forward(&x, &w, &p[21..]).unwrap();
            out.as_slice()
                .iter()
                .zip(proj.as_slice())
                .map(|(a, b)| a * b)
                .sum()
        });
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn leaky_values_and_gradient() {
        let x = Matrix::from_rows(&[vec![-2.0, 3.0]]).unwrap();
        assert_eq!(leaky_relu(&x, 0.1).row(0), &[-0.2, 3.0]);
        assert_eq!(leaky_relu(&x, 1.0), x);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(6, 4, &mut rng).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        let proj = random(6, 4, &mut rng);
        let analytic = leaky_relu_backward(&x, &proj, 0.1).unwrap();
        let report = finite_diff_check(x.as_slice(), analytic.as_slice(), 1e-6, |p| {
            let m = Matrix::from_vec(6, 4, p.to_vec()).unwrap();
            leaky_relu(&m, 0.1)
                .as_slice()
                .iter()
                .zip(proj.as_slice())
                .map(|(a, b)| a * b)
                .sum()
        });
        assert!(report.max_rel_error < 1e-7, "{report:?}");
    }

    #[test]
    fn cross_entropy_cases() {
        let (loss, grad) = softmax_cross_entropy(&Matrix::zeros(3, 6), &[0, 3, 5], None).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-12);
        assert!((loss - 1.791759).abs() < 1e-6);
        for i in 0..3 {
            assert!(grad.row(i).iter().sum::<f64>().abs() < 1e-15);
        }

        let mut logits = Matrix::zeros(1, 6);
        logits[(0, 2)] = 1000.0;
        let (loss, _) = softmax_cross_entropy(&logits, &[2], None).unwrap();
        assert!((0.0..1e-6).contains(&loss));

        let (_, grad) = softmax_cross_entropy(&Matrix::zeros(2, 6), &[255, 1], None).unwrap();
        assert!(grad.row(0).iter().all(|&v| v == 0.0));
        assert!(softmax_cross_entropy(&Matrix::zeros(2, 6), &[255, 255], None).is_err());
        assert!(softmax_cross_entropy(&Matrix::zeros(1, 6), &[6], None).is_err());
    }

    #[test]
    fn cross_entropy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits = random(10, 6, &mut rng).scale(3.0);
        let labels: Vec<u8> = (0..10)
            .map(|i| if i == 7 { 255 } else { (i % 6) as u8 })
            .collect();
        for weights in [None, Some(vec![1.0, 2.0, 0.5, 1.5, 3.0, 1.0])] {
            let (_, grad) = softmax_cross_entropy(&logits, &labels, weights.as_deref()).unwrap();
            let report = finite_diff_check(logits.as_slice(), grad.as_slice(), 1e-6, |p| {
                let m = Matrix::from_vec(10, 6, p.to_vec()).unwrap();
                softmax_cross_entropy(&m, &labels, weights.as_deref())
                    .unwrap()
                    .0
            });
            assert!(report.max_rel_error < 1e-6, "{report:?}");
        }
    }

    #[test]
    fn softmax_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = softmax_rows(&random(7, 6, &mut rng).scale(20.0));
        for i in 0..7 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
