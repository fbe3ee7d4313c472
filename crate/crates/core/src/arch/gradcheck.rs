//! Finite-difference checks of every differentiable layer, used by the
//! `grad-check` command and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{build_batch, upsample_backward, upsample_nearest, Network, NetworkConfig};
use crate::kpkernel::{
    generate_kernel_points, kpconv_backward, kpconv_forward, ConvInput, ConvWeights,
};
use crate::nncore::{
    finite_diff_check, leaky_relu, leaky_relu_backward, softmax_cross_entropy, unary_backward,
    unary_forward, BatchNorm, Matrix, Mode,
};
use crate::pccore::{radius_search, LabeledCloud};
use crate::Result;

pub const FD_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCheck {
    pub layer: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl LayerCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .expect("sized to fit")
}

fn dot(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .sum()
}

fn check(
    layer: &str,
    tolerance: f64,
    x: &[f64],
    analytic: &[f64],
    f: impl FnMut(&[f64]) -> f64,
) -> LayerCheck {
    LayerCheck {
        layer: layer.into(),
        max_rel_error: finite_diff_check(x, analytic, FD_EPSILON, f).max_rel_error,
        tolerance,
    }
}

fn unary(rng: &mut ChaCha8Rng) -> Result<LayerCheck> {
    let (n, ci, co) = (7, 4, 3);
    let x = random_matrix(rng, n, ci);
    let w = random_matrix(rng, ci, co);
    let b: Vec<f64> = (0..co).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g = random_matrix(rng, n, co);
    let grads = unary_backward(&x, &w, &g)?;
    let p0 = [x.as_slice(), w.as_slice(), &b].concat();
    let analytic = [grads.x.as_slice(), grads.w.as_slice(), &grads.b].concat();
    Ok(check("unary", 1e-4, &p0, &analytic, |p| {
        let x = Matrix::from_vec(n, ci, p[..n * ci].to_vec()).expect("sized");
        let w = Matrix::from_vec(ci, co, p[n * ci..n * ci + ci * co].to_vec()).expect("sized");
        dot(
            &unary_forward(&x, &w, &p[n * ci + ci * co..]).expect("shapes"),
            &g,
        )
    }))
}

fn batchnorm(rng: &mut ChaCha8Rng, mode: Mode) -> Result<LayerCheck> {
    let (n, c) = (9, 3);
    let x = random_matrix(rng, n, c);
    let g = random_matrix(rng, n, c);
    let mut bn = BatchNorm::new(c);
    bn.gamma = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
    bn.beta = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
    bn.running_mean = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
    bn.running_var = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
    let (_, cache) = bn.clone().forward(&x, mode)?;
    let (gx, gg, gb) = bn.backward(&cache, &g)?;
    let p0 = [x.as_slice(), &bn.gamma, &bn.beta].concat();
    let analytic = [gx.as_slice(), &gg, &gb].concat();
    let name = match mode {
        Mode::Train => "batchnorm_train",
        Mode::Eval => "batchnorm_eval",
    };
    Ok(check(name, 1e-4, &p0, &analytic, |p| {
        let mut probe = bn.clone();
        probe.gamma = p[n * c..n * c + c].to_vec();
        probe.beta = p[n * c + c..].to_vec();
        let x = Matrix::from_vec(n, c, p[..n * c].to_vec()).expect("sized");
        dot(&probe.forward(&x, mode).expect("shapes").0, &g)
    }))
}

fn leaky(rng: &mut ChaCha8Rng) -> Result<LayerCheck> {
    let slope = 0.1;
    // Keep inputs away from the kink at zero.
    let x = random_matrix(rng, 6, 4).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let g = random_matrix(rng, 6, 4);
    let gx = leaky_relu_backward(&x, &g, slope)?;
    Ok(check(
        "leaky_relu",
        1e-4,
        x.as_slice(),
        gx.as_slice(),
        |p| {
            dot(
                &leaky_relu(&Matrix::from_vec(6, 4, p.to_vec()).expect("sized"), slope),
                &g,
            )
        },
    ))
}

fn softmax_ce(rng: &mut ChaCha8Rng) -> Result<LayerCheck> {
    let logits = random_matrix(rng, 8, 6).scale(3.0);
    let labels: Vec<u8> = (0..8)
        .map(|i| if i == 2 { 255 } else { rng.random_range(0..6) })
        .collect();
    let weights: Vec<f64> = (0..6).map(|_| rng.random_range(0.5..2.0)).collect();
    let mut worst: f64 = 0.0;
    for w in [None, Some(weights.as_slice())] {
        let (_, grad) = softmax_cross_entropy(&logits, &labels, w)?;
        let r = finite_diff_check(logits.as_slice(), grad.as_slice(), FD_EPSILON, |p| {
            let l = Matrix::from_vec(8, 6, p.to_vec()).expect("sized");
            softmax_cross_entropy(&l, &labels, w).expect("shapes").0
        });
        worst = worst.max(r.max_rel_error);
    }
    Ok(LayerCheck {
        layer: "softmax_ce".into(),
        max_rel_error: worst,
        tolerance: 1e-6,
    })
}

fn kpconv(rng: &mut ChaCha8Rng) -> Result<LayerCheck> {
    let (m, s, ci, co, radius) = (5, 12, 3, 4, 1.0);
    let mut point = || {
        [
            rng.random_range(0.0..1.2),
            rng.random_range(0.0..1.2),
            rng.random_range(0.0..0.6),
        ]
    };
    let queries: Vec<_> = (0..m).map(|_| point()).collect();
    let supports: Vec<_> = (0..s).map(|_| point()).collect();
    let table = radius_search(&queries, &supports, radius, 40)?;
    let kd = generate_kernel_points(15, radius, rng.random())?;
    let mut features = random_matrix(rng, s + 1, ci);
    features.row_mut(s).iter_mut().for_each(|v| *v = 0.0);
    let weights = ConvWeights::random(15, ci, co, rng);
    let g = random_matrix(rng, m, co);
    let input = ConvInput {
        queries: &queries,
        supports: &supports,
        neighbors: &table,
        features: &features,
    };
    let (gf, gw) = kpconv_backward(&input, &weights, &kd, &g)?;
    let nf = s * ci;
    let p0 = [&features.as_slice()[..nf], &weights.values].concat();
    let analytic = [&gf.as_slice()[..nf], &gw.values].concat();
    Ok(check("kpconv", 1e-6, &p0, &analytic, |p| {
        let mut feats = Matrix::zeros(s + 1, ci);
        feats.as_mut_slice()[..nf].copy_from_slice(&p[..nf]);
        let w = ConvWeights::from_vec(15, ci, co, p[nf..].to_vec()).expect("sized");
        let input = ConvInput {
            features: &feats,
            ..input
        };
        dot(&kpconv_forward(&input, &w, &kd).expect("shapes"), &g)
    }))
}

fn upsample(rng: &mut ChaCha8Rng) -> Result<LayerCheck> {
    let coarse = random_matrix(rng, 4, 3);
    let index: Vec<usize> = (0..10).map(|_| rng.random_range(0..4)).collect();
    let g = random_matrix(rng, 10, 3);
    let gc = upsample_backward(&g, &index, 4);
    Ok(check(
        "upsample",
        1e-4,
        coarse.as_slice(),
        gc.as_slice(),
        |p| {
            let c = Matrix::from_vec(4, 3, p.to_vec()).expect("sized");
            dot(&upsample_nearest(&c, &index).expect("indices in range"), &g)
        },
    ))
}

/// A two-layer network small enough to difference every parameter.
pub fn micro_config() -> NetworkConfig {
    NetworkConfig {
        num_layers: 2,
        radii: vec![0.3, 0.6],
        cell_sizes: vec![0.3, 0.6],
        channels: vec![4, 4],
        stack_depth: 2,
        num_classes: 3,
        kernel_size: 5,
        use_intensity: true,
        ..NetworkConfig::tiny()
    }
}

fn micro_network(rng: &mut ChaCha8Rng, mode: Mode) -> Result<LayerCheck> {
    let cfg = micro_config();
    let spheres = (0..2)
        .map(|_| {
            let n = 14;
            let coords = (0..n)
                .map(|_| {
                    [
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.0..0.5),
                    ]
                })
                .collect();
            let intensity = Some((0..n).map(|_| rng.random_range(0.0..1.0)).collect());
            let labels = Some(
                (0..n)
                    .map(|i| {
                        if i == 3 {
                            255
                        } else {
                            rng.random_range(0..3u8)
                        }
                    })
                    .collect(),
            );
            LabeledCloud::new(coords, intensity, labels)
        })
        .collect::<Result<Vec<_>>>()?;
    let batch = build_batch(&spheres, &cfg)?;
    let mut net = Network::new(cfg, rng.random())?;
    for p in net.params_mut().iter_mut() {
        if p.name.ends_with("gamma") || p.name.ends_with("beta") || p.name.ends_with(".b") {
            p.value
                .iter_mut()
                .for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
    }
    let (logits, cache) = net.forward(&batch, mode)?;
    let (_, g) = softmax_cross_entropy(&logits, &batch.labels, None)?;
    let analytic = net.backward(&batch, &cache, &g)?.concat();
    let x0 = net.params().flat_values();
    let mut probe = net.clone();
    let name = match mode {
        Mode::Train => "micro_network_train",
        Mode::Eval => "micro_network_eval",
    };
    Ok(check(name, 1e-4, &x0, &analytic, |x| {
        probe.params_mut().set_flat_values(x);
        let logits = probe.logits(&batch, mode).expect("batch matches");
        softmax_cross_entropy(&logits, &batch.labels, None)
            .expect("shapes")
            .0
    }))
}

/// Runs every check with inputs drawn from `seed`.
pub fn gradient_suite(seed: u64) -> Result<Vec<LayerCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        unary(&mut rng)?,
        batchnorm(&mut rng, Mode::Train)?,
        batchnorm(&mut rng, Mode::Eval)?,
        leaky(&mut rng)?,
        softmax_ce(&mut rng)?,
        kpconv(&mut rng)?,
        upsample(&mut rng)?,
        micro_network(&mut rng, Mode::Train)?,
        micro_network(&mut rng, Mode::Eval)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_layers_pass() {
        for seed in 0..3 {
            for c in gradient_suite(seed).unwrap() {
                assert!(c.passed(), "seed {seed}: {c:?}");
            }
        }
    }
}
