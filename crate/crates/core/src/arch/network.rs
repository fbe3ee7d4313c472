use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::NetworkConfig;
use super::pyramid::MultiscaleBatch;
use crate::kpkernel::{generate_kernel_points, ConvWeights, InfluenceTable, KernelDisposition};
use crate::nncore::batchnorm::{batch_norm_backward, batch_norm_forward};
use crate::nncore::{
    leaky_relu, leaky_relu_backward, unary_backward, unary_forward, BnCache, Matrix, Mode, ParamId,
    ParameterStore,
};
use crate::{Error, Result};

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct BnRef {
    gamma: ParamId,
    beta: ParamId,
    stats: usize,
}

/// BN → KPConv → LeakyReLU.
#[derive(Debug, Clone, Copy)]
struct ConvUnit {
    bn: BnRef,
    w: ParamId,
    c_out: usize,
}

/// BN → unary → LeakyReLU over `[upsampled, skip]`.
#[derive(Debug, Clone, Copy)]
struct DecoderUnit {
    bn: BnRef,
    w: ParamId,
    b: ParamId,
    c_in: usize,
    c_out: usize,
}

/// The U-Net: per layer a stacked block, a strided KPConv to the next
/// layer, and on the way back nearest upsampling, skip concatenation and a
/// unary decoder unit; a unary head produces the class logits.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    params: ParameterStore,
    stats: Vec<RunningStats>,
    kernels: Vec<KernelDisposition>,
    encoder: Vec<Vec<ConvUnit>>,
    pools: Vec<ConvUnit>,
    decoder: Vec<DecoderUnit>,
    head: (ParamId, ParamId),
}

struct UnitCache {
    bn: BnCache,
    normalized: Matrix,
    conv: Matrix,
}

struct DecoderCache {
    bn: BnCache,
    normalized: Matrix,
    pre: Matrix,
}

/// Intermediate values of a forward pass, consumed by [`Network::backward`].
pub struct ForwardCache {
    tables: Vec<InfluenceTable>,
    pool_tables: Vec<InfluenceTable>,
    encoder: Vec<Vec<UnitCache>>,
    pools: Vec<UnitCache>,
    decoder: Vec<DecoderCache>,
    head_input: Matrix,
    /// Running statistics after a train-mode pass.
    pub(crate) stats: Vec<RunningStats>,
}

/// Gradients indexed like the parameter store.
pub type Gradients = Vec<Vec<f64>>;

fn he_normal(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// Nearest upsampling: row `m` of the output is row `index[m]` of `coarse`.
pub fn upsample_nearest(coarse: &Matrix, index: &[usize]) -> Result<Matrix> {
    let c = coarse.cols();
    let mut out = Matrix::zeros(index.len(), c);
    for (m, &i) in index.iter().enumerate() {
        if i >= coarse.rows() {
            return Err(Error::Argument(format!(
                "upsample index {i} at row {m} exceeds {} coarse points",
                coarse.rows()
            )));
        }
        out.row_mut(m).copy_from_slice(coarse.row(i));
    }
    Ok(out)
}

/// Adjoint of [`upsample_nearest`]: gradients of fine rows summed per coarse row.
pub fn upsample_backward(grad: &Matrix, index: &[usize], coarse_rows: usize) -> Matrix {
    let mut out = Matrix::zeros(coarse_rows, grad.cols());
    for (m, &i) in index.iter().enumerate() {
        for (o, g) in out.row_mut(i).iter_mut().zip(grad.row(m)) {
            *o += g;
        }
    }
    out
}

impl Network {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Network> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = generate_kernel_points(config.kernel_size, 1.0, config.kernel_seed)?;
        let kernels = (0..config.num_layers)
            .map(|l| {
                let r = config.conv_radius(l);
                base.rescaled(r).with_influence(config.influence_ratio * r)
            })
            .collect();
        let mut params = ParameterStore::new();
        let mut stats = Vec::new();
        let k = config.kernel_size;
        let mut bn =
            |params: &mut ParameterStore, name: &str, c: usize, beta: f64| -> Result<BnRef> {
                let gamma = params.add(format!("{name}.gamma"), vec![c], vec![1.0; c])?;
                let beta = params.add(format!("{name}.beta"), vec![c], vec![beta; c])?;
                stats.push(RunningStats {
                    name: name.to_string(),
                    mean: vec![0.0; c],
                    var: vec![1.0; c],
                });
                Ok(BnRef {
                    gamma,
                    beta,
                    stats: stats.len() - 1,
                })
            };
        let mut conv_unit =
            |params: &mut ParameterStore,
             bn_fn: &mut dyn FnMut(&mut ParameterStore, &str, usize, f64) -> Result<BnRef>,
             name: &str,
             c_in: usize,
             c_out: usize,
             beta: f64|
             -> Result<ConvUnit> {
                let bn = bn_fn(params, &format!("{name}.bn"), c_in, beta)?;
                let w = ConvWeights::random(k, c_in, c_out, &mut rng);
                let w = params.add(format!("{name}.conv.w"), vec![k, c_in, c_out], w.values)?;
                Ok(ConvUnit { bn, w, c_out })
            };
        let layers = config.num_layers;
        let mut encoder = Vec::with_capacity(layers);
        let mut pools = Vec::with_capacity(layers - 1);
        for l in 0..layers {
            let c = config.channels[l];
            let mut units = Vec::with_capacity(config.stack_depth);
            for j in 0..config.stack_depth {
                let c_in = match (l, j) {
                    (0, 0) => config.input_dim(),
                    (_, 0) => config.channels[l],
                    _ => c,
                };
                // The raw input is a constant channel that normalization maps
                // to beta; starting beta at one keeps it alive.
                let beta = if l == 0 && j == 0 { 1.0 } else { 0.0 };
                units.push(conv_unit(
                    &mut params,
                    &mut bn,
                    &format!("enc{l}.unit{j}"),
                    c_in,
                    c,
                    beta,
                )?);
            }
            encoder.push(units);
            if l + 1 < layers {
                pools.push(conv_unit(
                    &mut params,
                    &mut bn,
                    &format!("pool{l}"),
                    c,
                    config.channels[l + 1],
                    0.0,
                )?);
            }
        }
        let mut decoder = Vec::with_capacity(layers - 1);
        for l in 0..layers - 1 {
            let c_in = config.channels[l + 1] + config.channels[l];
            let c_out = config.channels[l];
            let name = format!("dec{l}");
            let bn_ref = bn(&mut params, &format!("{name}.bn"), c_in, 0.0)?;
            let w = params.add(
                format!("{name}.unary.w"),
                vec![c_in, c_out],
                he_normal(&mut rng, c_in, c_in * c_out),
            )?;
            let b = params.add(format!("{name}.unary.b"), vec![c_out], vec![0.0; c_out])?;
            decoder.push(DecoderUnit {
                bn: bn_ref,
                w,
                b,
                c_in,
                c_out,
            });
        }
        let c0 = config.channels[0];
        let nc = config.num_classes;
        let hw = params.add("head.w", vec![c0, nc], he_normal(&mut rng, c0, c0 * nc))?;
        let hb = params.add("head.b", vec![nc], vec![0.0; nc])?;
        Ok(Network {
            config,
            params,
            stats,
            kernels,
            encoder,
            pools,
            decoder,
            head: (hw, hb),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.stats
    }

    pub fn kernels(&self) -> &[KernelDisposition] {
        &self.kernels
    }

    pub(crate) fn set_kernels(&mut self, kernels: Vec<KernelDisposition>) -> Result<()> {
        if kernels.len() != self.kernels.len()
            || kernels
                .iter()
                .zip(&self.kernels)
                .any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::Checkpoint(
                "kernel dispositions do not match the network layout".into(),
            ));
        }
        self.kernels = kernels;
        Ok(())
    }

    pub(crate) fn commit_stats(&mut self, stats: Vec<RunningStats>) {
        self.stats = stats;
    }

    fn check_batch(&self, batch: &MultiscaleBatch) -> Result<()> {
        let layers = self.config.num_layers;
        if batch.num_layers() != layers
            || batch.pools.len() + 1 != layers
            || batch.upsamples.len() + 1 != layers
        {
            return Err(Error::Argument(format!(
                "batch has {} layers, network has {layers}",
                batch.num_layers()
            )));
        }
        for l in 0..layers {
            let r = self.kernels[l].radius;
            if (batch.neighbors[l].radius() - r).abs() > 1e-12 * r {
                return Err(Error::Argument(format!(
                    "layer {l} neighbors use radius {}, network expects {r}",
                    batch.neighbors[l].radius()
                )));
            }
        }
        if batch.features.cols() != self.config.input_dim()
            || batch.features.rows() != batch.num_points()
        {
            return Err(Error::Shape(format!(
                "batch features are {:?}, expected {} x {}",
                batch.features.shape(),
                batch.num_points(),
                self.config.input_dim()
            )));
        }
        Ok(())
    }

    fn bn_forward(
        &self,
        bn: BnRef,
        x: &Matrix,
        mode: Mode,
        stats: &mut [RunningStats],
    ) -> Result<(Matrix, BnCache)> {
        let s = &mut stats[bn.stats];
        batch_norm_forward(
            x,
            self.params.value(bn.gamma),
            self.params.value(bn.beta),
            &mut s.mean,
            &mut s.var,
            self.config.bn_momentum,
            self.config.bn_epsilon,
            mode,
        )
    }

    fn unit_forward(
        &self,
        unit: &ConvUnit,
        table: &InfluenceTable,
        x: &Matrix,
        mode: Mode,
        stats: &mut [RunningStats],
    ) -> Result<(Matrix, UnitCache)> {
        let (normalized, bn) = self.bn_forward(unit.bn, x, mode, stats)?;
        let conv = table.forward(&normalized, self.params.value(unit.w), unit.c_out)?;
        let y = leaky_relu(&conv, self.config.leaky_slope);
        Ok((
            y,
            UnitCache {
                bn,
                normalized,
                conv,
            },
        ))
    }

    fn unit_backward(
        &self,
        unit: &ConvUnit,
        table: &InfluenceTable,
        cache: &UnitCache,
        grad: &Matrix,
        grads: &mut Gradients,
    ) -> Result<Matrix> {
        let g_conv = leaky_relu_backward(&cache.conv, grad, self.config.leaky_slope)?;
        let (g_norm, g_w) =
            table.backward(&cache.normalized, self.params.value(unit.w), &g_conv)?;
        add_into(&mut grads[unit.w.0], &g_w);
        let (g_x, g_gamma, g_beta) =
            batch_norm_backward(&cache.bn, self.params.value(unit.bn.gamma), &g_norm)?;
        add_into(&mut grads[unit.bn.gamma.0], &g_gamma);
        add_into(&mut grads[unit.bn.beta.0], &g_beta);
        Ok(g_x)
    }

    fn matrix(&self, id: ParamId) -> Matrix {
        let p = self.params.get(id);
        Matrix::from_vec(p.shape[0], p.shape[1], p.value.clone()).expect("parameter shape")
    }

    /// Replaces the running statistics by the mean batch statistics of
    /// `batches` under the current weights.
    pub fn recalibrate_stats(
        &mut self,
        batches: impl IntoIterator<Item = Result<MultiscaleBatch>>,
    ) -> Result<usize> {
        let mut probe = self.clone();
        probe.config.bn_momentum = 0.0;
        let mut sum: Vec<RunningStats> = self
            .stats
            .iter()
            .map(|s| RunningStats {
                name: s.name.clone(),
                mean: vec![0.0; s.mean.len()],
                var: vec![0.0; s.var.len()],
            })
            .collect();
        let mut count = 0;
        for batch in batches {
            let (_, cache) = probe.forward(&batch?, Mode::Train)?;
            for (acc, s) in sum.iter_mut().zip(&cache.stats) {
                add_into(&mut acc.mean, &s.mean);
                add_into(&mut acc.var, &s.var);
            }
            count += 1;
        }
        if count > 0 {
            let k = count as f64;
            for s in &mut sum {
                s.mean
                    .iter_mut()
                    .chain(s.var.iter_mut())
                    .for_each(|v| *v /= k);
            }
            self.stats = sum;
        }
        Ok(count)
    }

    /// One stacked block at layer `l`: `stack_depth` units over the layer's neighborhoods.
    pub fn stacked_block(
        &self,
        batch: &MultiscaleBatch,
        l: usize,
        x: &Matrix,
        mode: Mode,
    ) -> Result<Matrix> {
        let table = InfluenceTable::new(
            &batch.points[l],
            &batch.points[l],
            &batch.neighbors[l],
            &self.kernels[l],
        )?;
        let mut stats = self.stats.clone();
        let mut h = x.clone();
        for unit in &self.encoder[l] {
            h = self.unit_forward(unit, &table, &h, mode, &mut stats)?.0;
        }
        Ok(h)
    }

    /// Strided convolution from layer `l` to layer `l + 1`.
    pub fn pool_block(
        &self,
        batch: &MultiscaleBatch,
        l: usize,
        x: &Matrix,
        mode: Mode,
    ) -> Result<Matrix> {
        let table = InfluenceTable::new(
            &batch.points[l + 1],
            &batch.points[l],
            &batch.pools[l],
            &self.kernels[l + 1],
        )?;
        let mut stats = self.stats.clone();
        Ok(self
            .unit_forward(&self.pools[l], &table, x, mode, &mut stats)?
            .0)
    }

    /// Logits (`N × num_classes`) and the cache for the backward pass.
    pub fn forward(&self, batch: &MultiscaleBatch, mode: Mode) -> Result<(Matrix, ForwardCache)> {
        self.check_batch(batch)?;
        let layers = self.config.num_layers;
        let mut stats = self.stats.clone();
        let mut tables = Vec::with_capacity(layers);
        let mut pool_tables = Vec::with_capacity(layers - 1);
        for l in 0..layers {
            tables.push(InfluenceTable::new(
                &batch.points[l],
                &batch.points[l],
                &batch.neighbors[l],
                &self.kernels[l],
            )?);
            if l + 1 < layers {
                pool_tables.push(InfluenceTable::new(
                    &batch.points[l + 1],
                    &batch.points[l],
                    &batch.pools[l],
                    &self.kernels[l + 1],
                )?);
            }
        }
        let mut skips = Vec::with_capacity(layers);
        let mut enc_caches = Vec::with_capacity(layers);
        let mut pool_caches = Vec::with_capacity(layers - 1);
        let mut x = batch.features.clone();
        for l in 0..layers {
            let mut caches = Vec::with_capacity(self.config.stack_depth);
            for unit in &self.encoder[l] {
                let (y, c) = self.unit_forward(unit, &tables[l], &x, mode, &mut stats)?;
                caches.push(c);
                x = y;
            }
            enc_caches.push(caches);
            if l + 1 < layers {
                let (y, c) =
                    self.unit_forward(&self.pools[l], &pool_tables[l], &x, mode, &mut stats)?;
                pool_caches.push(c);
                skips.push(x);
                x = y;
            }
        }
        // x is now the deepest encoder output; walk back up.
        let mut dec_caches: Vec<Option<DecoderCache>> = (0..layers - 1).map(|_| None).collect();
        for l in (0..layers - 1).rev() {
            let unit = &self.decoder[l];
            let up = upsample_nearest(&x, &batch.upsamples[l])?;
            let cat = up.hcat(&skips[l])?;
            let (normalized, bn) = self.bn_forward(unit.bn, &cat, mode, &mut stats)?;
            let pre = unary_forward(&normalized, &self.matrix(unit.w), self.params.value(unit.b))?;
            x = leaky_relu(&pre, self.config.leaky_slope);
            dec_caches[l] = Some(DecoderCache {
                bn,
                normalized,
                pre,
            });
        }
        let logits = unary_forward(
            &x,
            &self.matrix(self.head.0),
            self.params.value(self.head.1),
        )?;
        if !logits.is_finite() {
            return Err(Error::Training("non-finite logits".into()));
        }
        Ok((
            logits,
            ForwardCache {
                tables,
                pool_tables,
                encoder: enc_caches,
                pools: pool_caches,
                decoder: dec_caches
                    .into_iter()
                    .map(|c| c.expect("decoder cache"))
                    .collect(),
                head_input: x,
                stats,
            },
        ))
    }

    /// Parameter gradients given the gradient of the loss w.r.t. the logits.
    pub fn backward(
        &self,
        batch: &MultiscaleBatch,
        cache: &ForwardCache,
        grad_logits: &Matrix,
    ) -> Result<Gradients> {
        let layers = self.config.num_layers;
        let mut grads: Gradients = self.params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let head = unary_backward(&cache.head_input, &self.matrix(self.head.0), grad_logits)?;
        add_into(&mut grads[self.head.0 .0], head.w.as_slice());
        add_into(&mut grads[self.head.1 .0], &head.b);
        let mut g = head.x;
        let mut skip_grads = Vec::with_capacity(layers - 1);
        for l in 0..layers - 1 {
            let unit = &self.decoder[l];
            let dc = &cache.decoder[l];
            let g_pre = leaky_relu_backward(&dc.pre, &g, self.config.leaky_slope)?;
            let ug = unary_backward(&dc.normalized, &self.matrix(unit.w), &g_pre)?;
            add_into(&mut grads[unit.w.0], ug.w.as_slice());
            add_into(&mut grads[unit.b.0], &ug.b);
            let (g_cat, g_gamma, g_beta) =
                batch_norm_backward(&dc.bn, self.params.value(unit.bn.gamma), &ug.x)?;
            add_into(&mut grads[unit.bn.gamma.0], &g_gamma);
            add_into(&mut grads[unit.bn.beta.0], &g_beta);
            debug_assert_eq!(g_cat.cols(), unit.c_in);
            let (g_up, g_skip) = g_cat.hsplit(unit.c_in - unit.c_out);
            skip_grads.push(g_skip);
            g = upsample_backward(&g_up, &batch.upsamples[l], batch.points[l + 1].len());
        }
        // g is the gradient of the deepest encoder output.
        for l in (0..layers).rev() {
            if l + 1 < layers {
                g.add_assign(&skip_grads[l])?;
            }
            for (unit, uc) in self.encoder[l].iter().zip(&cache.encoder[l]).rev() {
                g = self.unit_backward(unit, &cache.tables[l], uc, &g, &mut grads)?;
            }
            if l > 0 {
                g = self.unit_backward(
                    &self.pools[l - 1],
                    &cache.pool_tables[l - 1],
                    &cache.pools[l - 1],
                    &g,
                    &mut grads,
                )?;
            }
        }
        Ok(grads)
    }

    /// Logits only.
    pub fn logits(&self, batch: &MultiscaleBatch, mode: Mode) -> Result<Matrix> {
        Ok(self.forward(batch, mode)?.0)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_batch, micro_config};
    use crate::nncore::{finite_diff_check, softmax_cross_entropy, softmax_rows};
    use crate::pccore::LabeledCloud;
    use rand::Rng;

    fn micro_batch(cfg: &NetworkConfig, seed: u64) -> MultiscaleBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spheres: Vec<LabeledCloud> = (0..2)
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
                LabeledCloud::new(coords, intensity, labels).unwrap()
            })
            .collect();
        build_batch(&spheres, cfg).unwrap()
    }

    #[test]
    fn micro_network_gradients() {
        let cfg = micro_config();
        let batch = micro_batch(&cfg, 1);
        let mut net = Network::new(cfg, 3).unwrap();
        // Perturb BN affine terms and running stats away from their defaults.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in net.params.iter_mut() {
            if p.name.ends_with("gamma") || p.name.ends_with("beta") || p.name.ends_with(".b") {
                p.value
                    .iter_mut()
                    .for_each(|v| *v += rng.random_range(-0.3..0.3));
            }
        }
        for mode in [Mode::Train, Mode::Eval] {
            let (logits, cache) = net.forward(&batch, mode).unwrap();
            let (_, g) = softmax_cross_entropy(&logits, &batch.labels, None).unwrap();
            let grads = net.backward(&batch, &cache, &g).unwrap();
            let analytic: Vec<f64> = grads.concat();
            let x0 = net.params.flat_values();
            let mut probe = net.clone();
            let report = finite_diff_check(&x0, &analytic, 1e-6, |x| {
                probe.params.set_flat_values(x);
                let logits = probe.logits(&batch, mode).unwrap();
                softmax_cross_entropy(&logits, &batch.labels, None)
                    .unwrap()
                    .0
            });
            assert!(report.max_rel_error < 1e-4, "{mode:?} {report:?}");
        }
    }

    #[test]
    fn output_shape_and_softmax() {
        let cfg = micro_config();
        let batch = micro_batch(&cfg, 2);
        let net = Network::new(cfg, 0).unwrap();
        let logits = net.logits(&batch, Mode::Train).unwrap();
        assert_eq!(logits.shape(), (28, 3));
        let p = softmax_rows(&logits);
        for i in 0..p.rows() {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_definition() {
        let coarse = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let up = upsample_nearest(&coarse, &[1, 0, 1]).unwrap();
        assert_eq!(up.row(0), coarse.row(1));
        assert_eq!(up.row(1), coarse.row(0));
        assert!(upsample_nearest(&coarse, &[2]).is_err());
        let g = upsample_backward(&Matrix::filled(3, 2, 1.0), &[1, 0, 1], 2);
        assert_eq!(g.row(1), &[2.0, 2.0]);
    }

    #[test]
    fn rejects_mismatched_batch() {
        let cfg = micro_config();
        let batch = micro_batch(&cfg, 3);
        let other = NetworkConfig {
            radii: vec![0.3, 0.7],
            ..cfg
        };
        let net = Network::new(other, 0).unwrap();
        assert!(net.forward(&batch, Mode::Eval).is_err());
    }
}
