use std::sync::mpsc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::network::Network;
use super::pyramid::{build_batch, MultiscaleBatch};
use crate::nncore::{
    momentum_step, softmax_cross_entropy, Matrix, Mode, DEFAULT_LR, DEFAULT_MOMENTUM,
};
use crate::pccore::{
    augment, extract_sphere, grid_subsample, AugConfig, LabelMode, LabeledCloud, IGNORE_LABEL,
};
use crate::{Error, Result};

/// Attempts per sphere before giving up on finding labeled points.
pub const MAX_SPHERE_RETRIES: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Multiplicative learning-rate factor applied once per epoch.
    pub lr_decay: f64,
    pub steps_per_epoch: u64,
    /// Rescale the full gradient to at most this euclidean norm.
    pub grad_clip: Option<f64>,
    /// Weight the loss by inverse class frequency of the training data.
    pub class_weighting: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            lr_decay: 1.0,
            steps_per_epoch: 500,
            grad_clip: Some(100.0),
            class_weighting: false,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: key.into(),
                message: message.into(),
            })
        };
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", "must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must be in [0, 1)");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay", "must be in (0, 1]");
        }
        if self.steps_per_epoch == 0 {
            return bad("steps_per_epoch", "must be >= 1");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip", "must be > 0");
        }
        Ok(())
    }

    /// Learning rate in effect at `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        self.lr * self.lr_decay.powi((step / self.steps_per_epoch) as i32)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub batch_oa: f64,
    pub lr: f64,
}

/// Index of the largest entry of each row, ties to the smaller index.
pub fn argmax_rows(m: &Matrix) -> Vec<u8> {
    (0..m.rows())
        .map(|i| {
            let row = m.row(i);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}

/// Fraction of labeled points whose argmax matches the label.
pub fn batch_accuracy(logits: &Matrix, labels: &[u8]) -> f64 {
    let pred = argmax_rows(logits);
    let (mut hit, mut total) = (0usize, 0usize);
    for (p, &t) in pred.iter().zip(labels) {
        if t != IGNORE_LABEL {
            total += 1;
            hit += (*p == t) as usize;
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

impl Network {
    /// Forward, loss, backward and one momentum update on a prepared batch.
    /// The returned report carries step 0; callers fill in their counter.
    pub fn train_step(
        &mut self,
        batch: &MultiscaleBatch,
        optim: &OptimConfig,
        lr: f64,
        class_weights: Option<&[f64]>,
    ) -> Result<StepReport> {
        let (logits, cache) = self.forward(batch, Mode::Train)?;
        let (loss, grad) = softmax_cross_entropy(&logits, &batch.labels, class_weights)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("loss is {loss}")));
        }
        let mut grads = self.backward(batch, &cache, &grad)?;
        if let Some(clip) = optim.grad_clip {
            let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
            if norm > clip {
                let s = clip / norm;
                grads.iter_mut().flatten().for_each(|g| *g *= s);
            }
        }
        let batch_oa = batch_accuracy(&logits, &batch.labels);
        let stats = cache.stats;
        let params = self.params_mut();
        params.zero_grad();
        for (id, g) in grads.iter().enumerate() {
            params.accumulate(crate::nncore::ParamId(id), g);
        }
        momentum_step(params, lr, optim.momentum)?;
        self.commit_stats(stats);
        Ok(StepReport {
            step: 0,
            loss,
            batch_oa,
            lr,
        })
    }
}

/// Draws training batches of augmented spheres.
///
/// Batch `s` depends only on the seed and `s`, so batches can be produced
/// ahead of time by any number of threads without changing the result.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    scenes: Vec<LabeledCloud>,
    cumulative: Vec<usize>,
    config: NetworkConfig,
    aug: AugConfig,
    seed: u64,
}

impl BatchSampler {
    /// Resamples every scene on the layer-0 grid (majority labels).
    pub fn new(
        scenes: &[LabeledCloud],
        config: &NetworkConfig,
        aug: AugConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        aug.validate()?;
        let scenes = scenes
            .iter()
            .map(|s| grid_subsample(s, config.cell_sizes[0], LabelMode::Majority))
            .collect::<Result<Vec<_>>>()?;
        let mut cumulative = Vec::with_capacity(scenes.len());
        let mut total = 0;
        for s in &scenes {
            total += s.len();
            cumulative.push(total);
        }
        if total == 0 {
            return Err(Error::Data("no training points".into()));
        }
        if !scenes.iter().any(|s| {
            s.labels
                .as_ref()
                .is_some_and(|l| l.iter().any(|&v| v != IGNORE_LABEL))
        }) {
            return Err(Error::Data("training data has no labeled points".into()));
        }
        Ok(BatchSampler {
            scenes,
            cumulative,
            config: config.clone(),
            aug,
            seed,
        })
    }

    pub fn scenes(&self) -> &[LabeledCloud] {
        &self.scenes
    }

    /// Inverse-frequency class weights with mean one over present classes.
    pub fn class_weights(&self) -> Vec<f64> {
        let c = self.config.num_classes;
        let mut counts = vec![0usize; c];
        for s in &self.scenes {
            for &l in s.labels.iter().flatten() {
                if (l as usize) < c {
                    counts[l as usize] += 1;
                }
            }
        }
        let total: usize = counts.iter().sum();
        let present = counts.iter().filter(|&&n| n > 0).count().max(1);
        let raw: Vec<f64> = counts
            .iter()
            .map(|&n| {
                if n > 0 {
                    total as f64 / (present as f64 * n as f64)
                } else {
                    0.0
                }
            })
            .collect();
        let mean = raw.iter().sum::<f64>() / present as f64;
        raw.iter().map(|w| w / mean).collect()
    }

    fn rng_for(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step);
        rng
    }

    /// One sphere around a random point that holds at least one labeled point.
    fn sphere(&self, rng: &mut ChaCha8Rng) -> Result<LabeledCloud> {
        let total = *self.cumulative.last().expect("non-empty");
        for _ in 0..MAX_SPHERE_RETRIES {
            let g = rng.random_range(0..total);
            let scene = self.cumulative.partition_point(|&c| c <= g);
            let offset = if scene == 0 {
                0
            } else {
                self.cumulative[scene - 1]
            };
            let cloud = &self.scenes[scene];
            let center = cloud.coords[g - offset];
            let (sphere, _) = extract_sphere(cloud, center, self.config.sphere_radius)?;
            if sphere
                .labels
                .as_ref()
                .is_some_and(|l| l.iter().any(|&v| v != IGNORE_LABEL))
            {
                return augment(&sphere, &self.aug, rng);
            }
        }
        Err(Error::Training(format!(
            "no sphere with labeled points after {MAX_SPHERE_RETRIES} attempts"
        )))
    }

    pub fn sample(&self, step: u64) -> Result<MultiscaleBatch> {
        let mut rng = self.rng_for(step);
        let spheres = (0..self.config.batch_spheres)
            .map(|_| self.sphere(&mut rng))
            .collect::<Result<Vec<_>>>()?;
        build_batch(&spheres, &self.config)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub optim: OptimConfig,
    /// Step counter of the first step to run (non-zero when resuming).
    pub start_step: u64,
    pub steps: u64,
    /// Batch producer threads; 1 builds batches inline.
    pub workers: usize,
    /// Batches used after the last step to re-estimate the batch-norm
    /// statistics under the final weights; 0 keeps the running averages.
    pub calibration_batches: usize,
}

/// Runs `steps` training steps, calling `on_step` after each one.
///
/// With `workers > 1` batches are built ahead by producer threads and
/// consumed in step order; the parameters are only touched by the calling
/// thread, so the result does not depend on the worker count.
pub fn train(
    net: &mut Network,
    sampler: &BatchSampler,
    opts: &TrainOptions,
    mut on_step: impl FnMut(&StepReport) -> Result<()>,
) -> Result<Vec<StepReport>> {
    opts.optim.validate()?;
    if net.config() != &sampler.config {
        let field = net
            .config()
            .first_difference(&sampler.config)
            .unwrap_or_default();
        return Err(Error::Config {
            key: field,
            message: "sampler and network configs differ".into(),
        });
    }
    let weights = opts.optim.class_weighting.then(|| sampler.class_weights());
    let mut reports = Vec::with_capacity(opts.steps as usize);
    let mut run_step = |net: &mut Network, step: u64, batch: &MultiscaleBatch| -> Result<()> {
        let lr = opts.optim.lr_at(step);
        let mut report = net.train_step(batch, &opts.optim, lr, weights.as_deref())?;
        report.step = step;
        on_step(&report)?;
        reports.push(report);
        Ok(())
    };
    let steps = opts.start_step..opts.start_step + opts.steps;
    if opts.workers <= 1 {
        for step in steps.clone() {
            let batch = sampler.sample(step)?;
            run_step(net, step, &batch)?;
        }
    } else {
        run_pipelined(net, sampler, opts, steps.clone(), &mut run_step)?;
    }
    if opts.calibration_batches > 0 {
        let end = steps.end;
        net.recalibrate_stats(
            (0..opts.calibration_batches as u64).map(|i| sampler.sample(end + i)),
        )?;
    }
    Ok(reports)
}

fn run_pipelined(
    net: &mut Network,
    sampler: &BatchSampler,
    opts: &TrainOptions,
    steps: std::ops::Range<u64>,
    run_step: &mut impl FnMut(&mut Network, u64, &MultiscaleBatch) -> Result<()>,
) -> Result<()> {
    let k = opts.workers as u64;
    std::thread::scope(|scope| -> Result<()> {
        let mut receivers = Vec::with_capacity(opts.workers);
        for w in 0..k {
            let (tx, rx) = mpsc::sync_channel::<Result<MultiscaleBatch>>(1);
            receivers.push(rx);
            let steps = steps.clone();
            scope.spawn(move || {
                for step in steps.skip(w as usize).step_by(k as usize) {
                    if tx.send(sampler.sample(step)).is_err() {
                        break;
                    }
                }
            });
        }
        for step in steps.clone() {
            let rx = &receivers[((step - opts.start_step) % k) as usize];
            let batch = rx
                .recv()
                .map_err(|_| Error::Training("batch producer stopped".into()))??;
            run_step(net, step, &batch)?;
        }
        Ok(())
    })
}
