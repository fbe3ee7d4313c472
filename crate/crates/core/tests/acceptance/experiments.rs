//! Desk-scale training experiments.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kpseg::arch::{
    default_tile_stride, predict_cloud, train, BatchSampler, Network, NetworkConfig, OptimConfig,
    TrainOptions,
};
use kpseg::metrics::{compute_metrics, ConfusionMatrix, MetricsReport};
use kpseg::pccore::{AugConfig, LabeledCloud};
use kpseg::synth::{
    generate_scene, BridgeSpec, CarSpec, PoleSpec, RoadSpec, SceneSpec, TerrainSpec,
};

use super::{outcome, Outcome};

const OVERFIT_STEPS: u64 = 200;
const OVERFIT_SECONDS: f64 = 300.0;
const GENERALIZATION_STEPS: u64 = 600;
const GENERALIZATION_SECONDS: f64 = 1200.0;
const CALIBRATION_BATCHES: usize = 16;

/// A 14 m × 12 m crossing of one road under one deck, about 20k points.
fn compact_spec(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let y_road = u(2.5, 4.0);
    SceneSpec {
        extent: [14.0, 12.0],
        density: 38.0,
        noise_sigma: 0.01,
        terrain: Some(TerrainSpec {
            amplitude: u(0.2, 0.4),
            wavelength: u(12.0, 20.0),
            roughness: u(0.15, 0.25),
        }),
        roads: vec![RoadSpec {
            start: [0.0, y_road],
            end: [14.0, y_road + u(-1.0, 1.0)],
            width: u(4.5, 6.0),
        }],
        bridges: vec![BridgeSpec {
            deck: vec![[0.0, u(9.0, 11.5)], [14.0, u(4.0, 7.0)]],
            width: u(5.5, 7.0),
            elevation: u(5.0, 7.0),
            thickness: u(0.8, 1.2),
            pier_spacing: u(7.0, 9.0),
            pier_radius: u(0.4, 0.6),
        }],
        cars: CarSpec {
            count: 3,
            ..CarSpec::default()
        },
        poles: PoleSpec {
            count: 3,
            ..PoleSpec::default()
        },
        guardrail_height: 0.9,
    }
}

fn compact_scene(seed: u64) -> LabeledCloud {
    generate_scene(&compact_spec(seed), seed).expect("valid scene")
}

fn experiment_config(stack_depth: usize) -> NetworkConfig {
    NetworkConfig {
        stack_depth,
        radius_multiplier: 1.5,
        ..NetworkConfig::tiny()
    }
}

fn fit(scenes: &[LabeledCloud], cfg: &NetworkConfig, aug: AugConfig, steps: u64) -> Network {
    let sampler = BatchSampler::new(scenes, cfg, aug, 11).expect("sampler");
    let mut net = Network::new(cfg.clone(), 11).expect("network");
    let opts = TrainOptions {
        optim: OptimConfig::default(),
        start_step: 0,
        steps,
        workers: 1,
        calibration_batches: CALIBRATION_BATCHES,
    };
    train(&mut net, &sampler, &opts, |_| Ok(())).expect("training");
    net
}

fn evaluate(net: &Network, scenes: &[LabeledCloud]) -> MetricsReport {
    let mut cm = ConfusionMatrix::new(net.config().num_classes);
    for s in scenes {
        let pred = predict_cloud(net, s, default_tile_stride(net)).expect("prediction");
        cm.accumulate(&pred, s.labels.as_ref().expect("labels"))
            .expect("matching lengths");
    }
    compute_metrics(&cm).expect("metrics")
}

pub fn overfit() -> Outcome {
    let t = Instant::now();
    let scene = compact_scene(0);
    let net = fit(
        std::slice::from_ref(&scene),
        &experiment_config(3),
        AugConfig::identity(),
        OVERFIT_STEPS,
    );
    let report = evaluate(&net, std::slice::from_ref(&scene));
    let secs = t.elapsed().as_secs_f64();
    outcome(
        report.oa >= 0.95 && secs < OVERFIT_SECONDS,
        format!(
            "{} points, {OVERFIT_STEPS} steps: training OA {:.4} (need >= 0.95), mIoU {:.4}, {secs:.0}s (limit {OVERFIT_SECONDS:.0}s)",
            scene.len(),
            report.oa,
            report.miou
        ),
    )
}

pub fn generalization() -> Outcome {
    let t = Instant::now();
    let train_scenes: Vec<LabeledCloud> = (100..108).map(compact_scene).collect();
    let held_out: Vec<LabeledCloud> = (200..202).map(compact_scene).collect();
    let mut miou = Vec::new();
    for depth in [3, 1] {
        let net = fit(
            &train_scenes,
            &experiment_config(depth),
            AugConfig::default(),
            GENERALIZATION_STEPS,
        );
        miou.push(evaluate(&net, &held_out).miou);
    }
    let secs = t.elapsed().as_secs_f64();
    let (triple, single) = (miou[0], miou[1]);
    outcome(
        triple >= 0.60 && triple >= single - 0.02 && secs <= GENERALIZATION_SECONDS,
        format!(
            "held-out mIoU stack 3 {triple:.4} (need >= 0.60), stack 1 {single:.4} (need stack 3 >= stack 1 - 0.02), \
             {GENERALIZATION_STEPS} steps each, {secs:.0}s (limit {GENERALIZATION_SECONDS:.0}s)"
        ),
    )
}
