use kpseg::arch::{
    default_tile_stride, load_checkpoint, predict_cloud, save_checkpoint, train, BatchSampler,
    Network, NetworkConfig, OptimConfig, TrainOptions,
};
use kpseg::nncore::Mode;
use kpseg::pccore::{AugConfig, LabeledCloud};
use kpseg::synth::{generate_scene, SceneSpec};

fn setup() -> (LabeledCloud, NetworkConfig) {
    let scene = generate_scene(&SceneSpec::random(16.0, 6.0, 3), 3).unwrap();
    let cfg = NetworkConfig {
        batch_spheres: 2,
        sphere_radius: 3.0,
        ..NetworkConfig::tiny()
    };
    (scene, cfg)
}

fn options(steps: u64, calibration_batches: usize) -> TrainOptions {
    TrainOptions {
        optim: OptimConfig::default(),
        start_step: 0,
        steps,
        workers: 1,
        calibration_batches,
    }
}

#[test]
fn training_reports_every_step() {
    let (scene, cfg) = setup();
    let sampler = BatchSampler::new(&[scene], &cfg, AugConfig::default(), 1).unwrap();
    let mut net = Network::new(cfg, 1).unwrap();
    let mut seen = Vec::new();
    let log = train(&mut net, &sampler, &options(3, 0), |r| {
        seen.push(r.step);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![0, 1, 2]);
    assert!(log
        .iter()
        .all(|r| r.loss.is_finite() && (0.0..=1.0).contains(&r.batch_oa)));
}

#[test]
fn calibration_averages_batch_statistics() {
    let (scene, cfg) = setup();
    let sampler = BatchSampler::new(&[scene], &cfg, AugConfig::default(), 2).unwrap();
    let mut net = Network::new(cfg, 2).unwrap();
    train(&mut net, &sampler, &options(2, 0), |_| Ok(())).unwrap();
    let batch = sampler.sample(50).unwrap();
    let (before, _) = net.forward(&batch, Mode::Train).unwrap();
    let mut once = net.clone();
    assert_eq!(once.recalibrate_stats([Ok(batch.clone())]).unwrap(), 1);
    assert_eq!(
        net.recalibrate_stats([Ok(batch.clone()), Ok(batch.clone())])
            .unwrap(),
        2
    );
    for (a, b) in once.running_stats().iter().zip(net.running_stats()) {
        assert_eq!(a.name, b.name);
        for (x, y) in a.mean.iter().chain(&a.var).zip(b.mean.iter().chain(&b.var)) {
            assert!(
                (x - y).abs() <= 1e-12 * x.abs().max(1.0),
                "{}: {x} vs {y}",
                a.name
            );
        }
    }
    // The first unit sees the constant input feature.
    let first = &net.running_stats()[0];
    assert!(first.mean.iter().all(|&m| (m - 1.0).abs() < 1e-12));
    assert!(first.var.iter().all(|&v| v.abs() < 1e-12));
    // Train-mode outputs do not depend on the running statistics.
    assert!(before.max_abs_diff(&net.logits(&batch, Mode::Train).unwrap()) < 1e-12);
}

#[test]
fn calibration_with_no_batches_keeps_statistics() {
    let (_, cfg) = setup();
    let mut net = Network::new(cfg, 4).unwrap();
    let before = net.running_stats().to_vec();
    assert_eq!(net.recalibrate_stats(std::iter::empty()).unwrap(), 0);
    assert_eq!(net.running_stats(), before.as_slice());
}

#[test]
fn checkpoint_file_reproduces_predictions() {
    let (scene, cfg) = setup();
    let sampler =
        BatchSampler::new(std::slice::from_ref(&scene), &cfg, AugConfig::default(), 5).unwrap();
    let mut net = Network::new(cfg.clone(), 5).unwrap();
    train(&mut net, &sampler, &options(2, 2), |_| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.kpck");
    save_checkpoint(&net, 2, 5, &path).unwrap();
    let (loaded, ckpt) = load_checkpoint(&path, Some(&cfg)).unwrap();
    assert_eq!(ckpt.step, 2);
    let stride = default_tile_stride(&net);
    let pred = predict_cloud(&net, &scene, stride).unwrap();
    assert_eq!(pred.len(), scene.len());
    assert!(pred.iter().all(|&c| (c as usize) < cfg.num_classes));
    assert_eq!(predict_cloud(&loaded, &scene, stride).unwrap(), pred);
}
