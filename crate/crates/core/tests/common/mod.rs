#![allow(dead_code)]

use fieldnet_core::data::{synth_spirals, Dataset};
use fieldnet_core::experiment::{run_training, ExperimentConfig};
use fieldnet_core::fieldnn::{quantize, QuantConfig, QuantizedModel};
use fieldnet_core::nn::{
    loss_softmax_xent, ActivationKind, Cache, LayerSpec, Mode, Model, PoolKind, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
/// Lower limit of the relative-error denominator, for near-zero gradients.
pub const GRAD_FLOOR: f64 = 1e-4;

pub const ACTIVATIONS: [ActivationKind; 6] = [
    ActivationKind::Relu,
    ActivationKind::ScaledRelu { c: 2 },
    ActivationKind::ScaledRelu { c: 4 },
    ActivationKind::Square,
    ActivationKind::Poly { a: 1 },
    ActivationKind::Poly { a: 3 },
];

/// A small network exercising one layer kind, in front of a dense head.
pub struct Case {
    pub name: &'static str,
    pub input: Vec<usize>,
    pub body: fn(ActivationKind) -> Vec<LayerSpec>,
}

fn pool(kind: PoolKind, window: usize, stride: usize, padding: usize) -> LayerSpec {
    LayerSpec::Pool {
        kind,
        window,
        stride,
        padding,
    }
}

pub fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "dense",
            input: vec![5],
            body: |a| vec![LayerSpec::dense(4), LayerSpec::act(a), LayerSpec::dense(3)],
        },
        Case {
            name: "conv3x3/1 pad1",
            input: vec![2, 4, 4],
            body: |a| vec![LayerSpec::conv_same(2, 3), LayerSpec::act(a)],
        },
        Case {
            name: "conv2x2/2",
            input: vec![2, 5, 5],
            body: |a| {
                vec![
                    LayerSpec::Conv2d {
                        out_channels: 3,
                        kernel: 2,
                        stride: 2,
                        padding: 0,
                    },
                    LayerSpec::act(a),
                ]
            },
        },
        Case {
            name: "max-pool 2x2/2",
            input: vec![2, 4, 4],
            body: |a| {
                vec![
                    LayerSpec::conv_same(2, 3),
                    LayerSpec::act(a),
                    pool(PoolKind::Max, 2, 2, 0),
                ]
            },
        },
        Case {
            name: "max-pool 3x3/2 pad1",
            input: vec![1, 5, 5],
            body: |a| {
                vec![
                    LayerSpec::conv_same(2, 1),
                    LayerSpec::act(a),
                    pool(PoolKind::Max, 3, 2, 1),
                ]
            },
        },
        Case {
            name: "mean-pool 2x2/2",
            input: vec![2, 4, 4],
            body: |a| {
                vec![
                    LayerSpec::conv_same(2, 3),
                    LayerSpec::act(a),
                    pool(PoolKind::Mean, 2, 2, 0),
                ]
            },
        },
        Case {
            name: "mean-pool 3x3/2 pad1",
            input: vec![1, 5, 5],
            body: |a| {
                vec![
                    LayerSpec::conv_same(2, 1),
                    LayerSpec::act(a),
                    pool(PoolKind::Mean, 3, 2, 1),
                ]
            },
        },
        Case {
            name: "sum-pool 2x2/2",
            input: vec![2, 4, 4],
            body: |a| {
                vec![
                    LayerSpec::conv_same(2, 3),
                    LayerSpec::act(a),
                    pool(PoolKind::Sum, 2, 2, 0),
                ]
            },
        },
        Case {
            name: "sum-pool 3x3/2 pad1",
            input: vec![1, 5, 5],
            body: |a| {
                vec![
                    LayerSpec::conv_same(2, 1),
                    LayerSpec::act(a),
                    pool(PoolKind::Sum, 3, 2, 1),
                ]
            },
        },
        Case {
            name: "global-avg-pool",
            input: vec![2, 3, 3],
            body: |a| {
                vec![
                    LayerSpec::conv_same(3, 3),
                    LayerSpec::act(a),
                    LayerSpec::GlobalAvgPool,
                ]
            },
        },
        Case {
            name: "dropout",
            input: vec![6],
            body: |a| {
                vec![
                    LayerSpec::dense(6),
                    LayerSpec::act(a),
                    LayerSpec::Dropout { rate: 0.4 },
                    LayerSpec::dense(3),
                ]
            },
        },
    ]
}

/// Full model for a case: the body, a flatten if needed, and a 3-way head.
pub fn case_model(case: &Case, act: ActivationKind, seed: u64) -> Model {
    let mut layers = (case.body)(act);
    if !matches!(layers.last(), Some(LayerSpec::Dense { .. })) {
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::dense(3));
    }
    let mut model = Model::new(case.input.clone(), layers, seed, 1.0).unwrap();
    // non-zero biases so the bias gradients are exercised away from zero
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB1A5);
    for p in model.params.iter_mut().flatten() {
        for b in p.bias.data_mut() {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    model
}

pub fn random_batch(input: &[usize], n: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len: usize = input.iter().product();
    let data = (0..n * len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..3)).collect();
    let mut shape = vec![n];
    shape.extend_from_slice(input);
    (Tensor::new(shape, data), labels)
}

/// Discrete state of the non-smooth layers: which inputs sit on the active
/// side of each ReLU and which element wins each max-pool window.
fn kink_pattern(model: &Model, cache: &Cache) -> Vec<usize> {
    let mut pattern = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        let input = cache.input(i);
        match *layer {
            LayerSpec::Activation { activation } if activation.is_piecewise_linear() => {
                pattern.extend(input.data().iter().map(|&v| (v > 0.0) as usize));
            }
            LayerSpec::Pool {
                kind: PoolKind::Max,
                window,
                stride,
                padding,
            } => {
                let s = input.shape();
                let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
                let oh = (h + 2 * padding - window) / stride + 1;
                let ow = (w + 2 * padding - window) / stride + 1;
                for b in 0..n {
                    for ch in 0..c {
                        let plane = &input.data()[(b * c + ch) * h * w..][..h * w];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = (f64::NEG_INFINITY, usize::MAX);
                                for ky in 0..window {
                                    for kx in 0..window {
                                        let yy = (oy * stride + ky) as isize - padding as isize;
                                        let xx = (ox * stride + kx) as isize - padding as isize;
                                        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize
                                        {
                                            continue;
                                        }
                                        let idx = yy as usize * w + xx as usize;
                                        if plane[idx] > best.0 {
                                            best = (plane[idx], idx);
                                        }
                                    }
                                }
                                pattern.push(best.1);
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    pattern
}

/// Loss and kink pattern from one forward pass.
fn probe(model: &Model, x: &Tensor, labels: &[usize], mode: Mode) -> (f64, Vec<usize>) {
    let (logits, cache) = model.forward(x, mode).unwrap();
    (
        loss_softmax_xent(&logits, labels).unwrap().0,
        kink_pattern(model, &cache),
    )
}

#[derive(Debug, Default, Clone)]
pub struct GradReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
    pub worst: String,
}

impl GradReport {
    fn record(&mut self, analytic: f64, numeric: f64, what: impl FnOnce() -> String) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
        self.checked += 1;
        if rel > self.max_rel || self.worst.is_empty() {
            self.max_rel = rel;
            self.worst = format!("{} (analytic {analytic:e}, numeric {numeric:e})", what());
        }
    }

    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.max_rel > self.max_rel {
            self.max_rel = other.max_rel;
            self.worst = other.worst;
        }
    }
}

/// Central-difference check of every parameter and input gradient in train
/// mode (dropout masks fixed by `mode_seed`). Coordinates whose perturbation
/// moves a ReLU input across the kink or changes a max-pool winner are
/// skipped, since the loss is not differentiable there.
pub fn grad_check(model: &Model, x: &Tensor, labels: &[usize], mode_seed: u64) -> GradReport {
    let mode = Mode::Train { seed: mode_seed };
    let (logits, cache) = model.forward(x, mode).unwrap();
    let (_, dlogits) = loss_softmax_xent(&logits, labels).unwrap();
    let (grads, dx) = model.backward(&cache, &dlogits).unwrap();
    let base = kink_pattern(model, &cache);
    let mut report = GradReport::default();

    let mut perturbed = model.clone();
    for li in 0..model.params.len() {
        let Some(g) = &grads[li] else { continue };
        for (which, analytic) in [("weight", g.weight.data()), ("bias", g.bias.data())] {
            for (j, &a) in analytic.iter().enumerate() {
                let mut eval = |delta: f64| {
                    let p = perturbed.params[li].as_mut().unwrap();
                    let t = if which == "weight" {
                        &mut p.weight
                    } else {
                        &mut p.bias
                    };
                    let orig = t.data()[j];
                    t.data_mut()[j] = orig + delta;
                    let out = probe(&perturbed, x, labels, mode);
                    let p = perturbed.params[li].as_mut().unwrap();
                    let t = if which == "weight" {
                        &mut p.weight
                    } else {
                        &mut p.bias
                    };
                    t.data_mut()[j] = orig;
                    out
                };
                let (lp, pp) = eval(EPS);
                let (lm, pm) = eval(-EPS);
                if pp != base || pm != base {
                    report.skipped += 1;
                    continue;
                }
                report.record(a, (lp - lm) / (2.0 * EPS), || {
                    format!("layer {li} {which}[{j}]")
                });
            }
        }
    }

    let mut xp = x.clone();
    for j in 0..x.len() {
        let orig = xp.data()[j];
        xp.data_mut()[j] = orig + EPS;
        let (lp, pp) = probe(model, &xp, labels, mode);
        xp.data_mut()[j] = orig - EPS;
        let (lm, pm) = probe(model, &xp, labels, mode);
        xp.data_mut()[j] = orig;
        if pp != base || pm != base {
            report.skipped += 1;
            continue;
        }
        report.record(dx.data()[j], (lp - lm) / (2.0 * EPS), || {
            format!("input[{j}]")
        });
    }
    report
}

/// Runs the gradient check over every case, activation and seed.
pub fn gradient_suite(seeds: u64) -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    for case in cases() {
        for act in ACTIVATIONS {
            let mut total = GradReport::default();
            for seed in 0..seeds {
                let model = case_model(&case, act, seed);
                let (x, labels) = random_batch(&case.input, 2, seed.wrapping_mul(7919) + 1);
                total.merge(grad_check(&model, &x, &labels, seed));
            }
            out.push((format!("{} + {act:?}", case.name), total));
        }
    }
    out
}

/// A random small field-compatible network, quantised with random scales.
pub fn random_quantized_model(seed: u64) -> (QuantizedModel, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rng.random_range(1..=3);
    let act = if rng.random_bool(0.5) {
        ActivationKind::Poly { a }
    } else {
        ActivationKind::Square
    };
    let (input, layers) = match rng.random_range(0..4) {
        0 => (
            vec![rng.random_range(2..6)],
            vec![
                LayerSpec::dense(rng.random_range(2..5)),
                LayerSpec::act(act),
                LayerSpec::dense(rng.random_range(2..4)),
            ],
        ),
        1 => (
            vec![rng.random_range(1..3), 4, 4],
            vec![
                LayerSpec::conv_same(rng.random_range(1..3), 3),
                LayerSpec::act(act),
                LayerSpec::pool(PoolKind::Sum, 2, 2),
                LayerSpec::Flatten,
                LayerSpec::dense(2),
            ],
        ),
        2 => (
            vec![1, 5, 5],
            vec![
                LayerSpec::Conv2d {
                    out_channels: 2,
                    kernel: 2,
                    stride: 1,
                    padding: 0,
                },
                LayerSpec::pool(PoolKind::Mean, 2, 2),
                LayerSpec::act(act),
                LayerSpec::GlobalAvgPool,
                LayerSpec::dense(3),
            ],
        ),
        _ => (
            vec![3],
            vec![
                LayerSpec::dense(3),
                LayerSpec::act(act),
                LayerSpec::Dropout { rate: 0.2 },
                LayerSpec::dense(3),
                LayerSpec::act(act),
                LayerSpec::dense(2),
            ],
        ),
    };
    let mut model = Model::new(input.clone(), layers, seed, 1.0).unwrap();
    for p in model.params.iter_mut().flatten() {
        for b in p.bias.data_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let scale = 1u64 << rng.random_range(0..4);
    let qc = QuantConfig::new(scale, 1u64 << rng.random_range(0..4), a);
    (quantize(&model, qc).unwrap(), input)
}

pub fn random_input(len: usize, input_scale: u64, seed: u64) -> Vec<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = input_scale as i64;
    (0..len).map(|_| rng.random_range(-s..=s)).collect()
}

/// Config of the spirals model used for the scale-convergence checks.
pub fn spirals_config(out: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{
            "dataset": {{"name": "spirals", "n_train": 1000, "n_test": 500,
                         "turns": 1.0, "noise": 0.02, "seed": 3}},
            "architecture": {{"name": "mlp", "hidden": [16, 16]}},
            "scheme": {{"name": "poly", "a": 1}},
            "init_gain": 0.5,
            "train": {{"epochs": 60, "batch_size": 25, "learning_rate": 0.05,
                       "l2_lambda": 0.0001, "seed": 0}},
            "output_dir": {out:?}
        }}"#
    ))
    .unwrap()
}

pub fn spirals_data() -> (Dataset, Dataset) {
    (
        synth_spirals(1000, 1.0, 0.02, 3).unwrap(),
        synth_spirals(500, 1.0, 0.02, 4).unwrap(),
    )
}

pub fn trained_spirals_model() -> Model {
    let cfg = spirals_config("unused");
    let (train, test) = cfg.dataset.load(None).unwrap();
    run_training(&cfg, &train, &test, |_| {}).unwrap().model
}
