//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits nonzero if any criterion fails. A criterion that needs data which is
//! not present reports BLOCKED and does not fail the run.
//!
//! CIFAR-10 binary batches are read from `FIELDNET_DATA_DIR`.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{
    gradient_suite, random_input, random_quantized_model, spirals_config, spirals_data,
    trained_spirals_model,
};
use fieldnet_core::approx::{
    check_approx_unit_interval, check_interval_length, check_kernel_special_case,
    interpolate_deg2_exact, relu, relu_minimax_deg2, remez, scaled_relu, scaled_relu_unit_samples,
    AlgebraicKernelSpecialCase, Interval, Polynomial, Reason,
};
use fieldnet_core::data::{normalize, parse_cifar_records, Dataset, Normalization};
use fieldnet_core::experiment::{
    curves_csv, mean_accuracy, run_compare, run_training, CompareRow, ExperimentConfig, Scheme,
};
use fieldnet_core::field::Modulus;
use fieldnet_core::fieldnn::{
    auto_modulus, descale, field_forward, integer_forward, quantize, quantize_input, QuantConfig,
};
use fieldnet_core::nn::{metrics_csv, Mode};
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Blocked(String),
}

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sup_error(f: impl Fn(f64) -> f64, p: &Polynomial, iv: Interval, n: usize) -> f64 {
    (0..=n)
        .map(|i| iv.lo + (iv.hi - iv.lo) * i as f64 / n as f64)
        .map(|x| (f(x) - p.eval(x)).abs())
        .fold(0.0, f64::max)
}

fn unit() -> Interval {
    Interval::new(-1.0, 1.0).unwrap()
}

fn closed_form() -> Check {
    let r = relu_minimax_deg2(1.0).map_err(|e| e.to_string())?;
    ensure(r.poly.coeffs() == [1.0 / 16.0, 0.5, 0.5], || {
        format!("coefficients {:?}", r.poly.coeffs())
    })?;
    let err = sup_error(relu, &r.poly, unit(), 200_000);
    ensure((err - 1.0 / 16.0).abs() < 1e-10, || {
        format!("sup error {err}")
    })?;
    Ok(format!("coeffs {:?}, sup error {err:.12}", r.poly.coeffs()))
}

fn remez_convergence() -> Check {
    let r = remez(relu, 2, unit(), 1e-9, 100).map_err(|e| e.to_string())?;
    ensure(r.converged && r.iterations <= 30, || {
        format!(
            "converged {} after {} iterations",
            r.converged, r.iterations
        )
    })?;
    let exact = [1.0 / 16.0, 0.5, 0.5];
    let dev = r
        .poly
        .coeffs()
        .iter()
        .zip(exact)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(dev < 1e-6, || format!("relu coefficients off by {dev:e}"))?;

    let a = remez(f64::abs, 2, unit(), 1e-9, 100).map_err(|e| e.to_string())?;
    let c = a.poly.coeffs();
    ensure(
        (c[0] - 0.125).abs() < 1e-6 && c[1].abs() < 1e-6 && (c[2] - 1.0).abs() < 1e-6,
        || format!("|x| coefficients {c:?}"),
    )?;
    let grid = sup_error(f64::abs, &a.poly, unit(), 200_000);
    ensure(
        (a.error - 0.125).abs() < 1e-6 && (grid - 0.125).abs() < 1e-6,
        || format!("|x| error {} (grid {grid})", a.error),
    )?;
    Ok(format!(
        "relu in {} iterations (max coeff deviation {dev:.1e}), |x| error {:.9}",
        r.iterations, a.error
    ))
}

fn approximability() -> Check {
    let v = check_approx_unit_interval(relu(-1.0), relu(0.0), relu(1.0));
    ensure(
        !v.approximable && v.reason == Reason::ParityMismatch,
        || format!("relu verdict {v:?}"),
    )?;

    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    for c in 1..=20i64 {
        let f = |x: f64| scaled_relu(x, c as f64);
        let v = check_approx_unit_interval(f(-1.0), f(0.0), f(1.0));
        if c % 2 == 0 {
            ensure(v.approximable, || format!("c = {c}: {v:?}"))?;
            let [s0, s1, s2] = scaled_relu_unit_samples(c);
            let q = interpolate_deg2_exact(&s0, &s1, &s2);
            let k = BigRational::from_integer(BigInt::from(c)) * &half;
            let want = [BigRational::from_integer(BigInt::from(0)), k.clone(), k];
            ensure(q == want, || format!("c = {c}: interpolant {q:?}"))?;
        } else {
            ensure(
                !v.approximable && v.reason == Reason::ParityMismatch,
                || format!("c = {c}: {v:?}"),
            )?;
        }
    }

    let long = Interval::new(-2.0, 2.0).unwrap();
    let v = check_interval_length(long, false).map_err(|e| e.to_string())?;
    ensure(
        !v.approximable && v.reason == Reason::IntervalTooLong,
        || format!("[-2, 2]: {v:?}"),
    )?;

    let alpha = std::f64::consts::SQRT_2;
    let kernel = AlgebraicKernelSpecialCase::for_symmetric(alpha).ok_or("no kernel at sqrt(2)")?;
    let verdict = |f: &dyn Fn(f64) -> f64| {
        let samples: Vec<(f64, f64)> = kernel.points().iter().map(|&x| (x, f(x))).collect();
        check_kernel_special_case(alpha, &samples).map_err(|e| e.to_string())
    };
    for c in [1.0, 2.0] {
        let v = verdict(&|x| scaled_relu(x, c))?;
        ensure(
            !v.approximable && v.reason == Reason::KernelInterpolantNotInteger,
            || format!("kernel, c = {c}: {v:?}"),
        )?;
    }
    let v = verdict(&|x| x * x + x)?;
    ensure(v.approximable, || format!("kernel, x^2 + x: {v:?}"))?;
    Ok("relu parity, c = 1..20, [-2, 2] length, kernel at sqrt(2)".into())
}

fn gradients() -> Check {
    let suite = gradient_suite(20);
    let mut checked = 0;
    let mut skipped = 0;
    let mut worst = (0.0, String::new());
    for (name, r) in &suite {
        checked += r.checked;
        skipped += r.skipped;
        if r.max_rel > worst.0 {
            worst = (r.max_rel, format!("{name}: {}", r.worst));
        }
        ensure(r.max_rel < 1e-5, || {
            format!("{name}: rel error {:e} at {}", r.max_rel, r.worst)
        })?;
        ensure(r.checked > 0 && r.skipped * 10 <= r.checked, || {
            format!("{name}: {} checked, {} skipped", r.checked, r.skipped)
        })?;
    }
    Ok(format!(
        "{} combinations, {checked} coordinates ({skipped} at kinks skipped), worst {:.1e}",
        suite.len(),
        worst.0
    ))
}

fn field_equivalence() -> Check {
    let mut compared = 0;
    for seed in 0..100 {
        let (qm, _) = random_quantized_model(seed);
        let m = auto_modulus(qm.required_bound()).map_err(|e| e.to_string())?;
        for k in 0..5 {
            let x = random_input(qm.input_len(), qm.quant_config().input_scale, seed * 31 + k);
            let exact = integer_forward(&qm, &x).map_err(|e| e.to_string())?;
            let field: Vec<BigInt> = field_forward(&qm, &x, m, false)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(BigInt::from)
                .collect();
            ensure(field == exact, || {
                format!("model {seed}, input {k}, p = {}", m.p())
            })?;
            compared += 1;
        }
    }

    let p = Modulus::new(97).unwrap();
    for seed in 0..100 {
        let (qm, _) = random_quantized_model(seed);
        if qm.fits_modulus(p) {
            continue;
        }
        let x = random_input(qm.input_len(), qm.quant_config().input_scale, seed);
        let exact = integer_forward(&qm, &x).map_err(|e| e.to_string())?;
        ensure(field_forward(&qm, &x, p, false).is_err(), || {
            format!("model {seed}: undersized modulus accepted")
        })?;
        let wrapped: Vec<BigInt> = field_forward(&qm, &x, p, true)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(BigInt::from)
            .collect();
        if wrapped != exact {
            return Ok(format!(
                "{compared} model/input pairs exact; p = 97 diverges on model {seed} \
                 (bound {})",
                qm.required_bound()
            ));
        }
    }
    Err("no undersized modulus produced a divergent result".into())
}

struct ScalePoint {
    log2: u32,
    rel: f64,
    agree: f64,
}

fn scale_sweep() -> Result<Vec<ScalePoint>, String> {
    let model = trained_spirals_model();
    let (_, test) = spirals_data();
    let (float_logits, _) = model
        .forward(&test.images, Mode::Eval)
        .map_err(|e| e.to_string())?;
    let float_pred = float_logits.argmax_rows();
    let mut out = Vec::new();
    for log2 in 4..=12 {
        let s = 1u64 << log2;
        let qm = quantize(&model, QuantConfig::uniform(s, 1)).map_err(|e| e.to_string())?;
        let (mut num, mut den, mut agree) = (0.0f64, 0.0f64, 0usize);
        for i in 0..test.len() {
            let x = quantize_input(test.images.row(i), s);
            let logits = integer_forward(&qm, &x).map_err(|e| e.to_string())?;
            let d = descale(&logits, qm.output_scale());
            let f = float_logits.row(i);
            for (a, b) in d.iter().zip(f) {
                num = num.max((a - b).abs());
                den = den.max(b.abs());
            }
            let pred = (0..d.len()).max_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
            agree += usize::from(pred == float_pred[i]);
        }
        out.push(ScalePoint {
            log2,
            rel: num / den,
            agree: agree as f64 / test.len() as f64,
        });
    }
    Ok(out)
}

fn scale_convergence() -> Check {
    let sweep = scale_sweep()?;
    for w in sweep.windows(2) {
        ensure(w[1].rel <= 1.1 * w[0].rel, || {
            format!(
                "error rose from {:.3e} at 2^{} to {:.3e} at 2^{}",
                w[0].rel, w[0].log2, w[1].rel, w[1].log2
            )
        })?;
    }
    let at8 = sweep.iter().find(|p| p.log2 == 8).unwrap();
    ensure(at8.agree >= 0.95, || {
        format!("argmax agreement {} at 2^8", at8.agree)
    })?;
    let errs: Vec<String> = sweep.iter().map(|p| format!("{:.1e}", p.rel)).collect();
    Ok(format!(
        "relative error 2^4..2^12: [{}], agreement at 2^8 {:.3}",
        errs.join(", "),
        at8.agree
    ))
}

const SCHEMES: [Scheme; 3] = [Scheme::Relu, Scheme::Poly { a: 1 }, Scheme::Quad];

fn cifar_config() -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{
            "dataset": {"name": "cifar10", "train_per_class": 400, "test_per_class": 100},
            "architecture": {"name": "cnn_small", "conv_channels": [16, 32, 32], "dense": [64]},
            "scheme": {"name": "poly", "a": 1},
            "init_gain": 0.5,
            "field_pool": "mean",
            "lr_search_epochs": 3,
            "train": {"epochs": 15, "batch_size": 125, "l2_lambda": 0.0005,
                      "learning_rate": 0.01, "lr_grid": [0.03, 0.01, 0.003]}
        }"#,
    )
    .expect("acceptance config is valid")
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os("FIELDNET_DATA_DIR").map(PathBuf::from)
}

fn summarise(rows: &[CompareRow]) -> String {
    SCHEMES
        .iter()
        .map(|&s| match mean_accuracy(rows, s) {
            Some(a) => format!("{s} {:.1}%", 100.0 * a),
            None => format!("{s} diverged"),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn directional_accuracy(cifar: &Option<(Dataset, Dataset)>) -> Outcome {
    let Some((train, test)) = cifar else {
        return Outcome::Blocked("CIFAR-10 binary batches not found; set FIELDNET_DATA_DIR".into());
    };
    let rows = match run_compare(&cifar_config(), &SCHEMES, &[0, 1, 2], train, test) {
        Ok(rows) => rows,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let summary = summarise(&rows);
    let (Some(relu), Some(poly), Some(quad)) = (
        mean_accuracy(&rows, SCHEMES[0]),
        mean_accuracy(&rows, SCHEMES[1]),
        mean_accuracy(&rows, SCHEMES[2]),
    ) else {
        return Outcome::Fail(summary);
    };
    if rows.iter().any(|r| r.final_test_acc.is_none()) {
        return Outcome::Fail(format!("a run diverged: {summary}"));
    }
    if poly - quad >= 0.02 && (relu - poly).abs() <= 0.05 {
        Outcome::Pass(summary)
    } else {
        Outcome::Fail(summary)
    }
}

/// Class-dependent colour means with pixel noise, in CIFAR record layout.
fn synthetic_cifar(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bytes = Vec::with_capacity(n * 3073);
    for i in 0..n {
        let label = (i % 10) as u8;
        bytes.push(label);
        for ch in 0..3u32 {
            let mean = 40.0 + 18.0 * ((label as u32 * (ch + 3)) % 10) as f64;
            for _ in 0..1024 {
                let v = mean + rng.random_range(-40.0..40.0);
                bytes.push(v.clamp(0.0, 255.0) as u8);
            }
        }
    }
    let ds = parse_cifar_records(&bytes, 1, 0, 10, "synthetic").unwrap();
    normalize(&ds, Normalization::UnitInterval, None)
}

fn determinism(cifar: &Option<(Dataset, Dataset)>) -> Check {
    let spirals = || {
        let cfg = spirals_config("unused");
        let (train, test) = cfg.dataset.load(None).map_err(|e| e.to_string())?;
        let run = run_training(&cfg, &train, &test, |_| {}).map_err(|e| e.to_string())?;
        Ok::<_, String>(metrics_csv(&run.history))
    };
    let (a, b) = (spirals()?, spirals()?);
    ensure(a == b, || "spirals metrics differ between runs".into())?;

    let mut cfg = cifar_config();
    let (train, test, what) = match cifar {
        Some((train, test)) => (train.clone(), test.clone(), "CIFAR-10 seed 0, 15 epochs"),
        None => {
            cfg.train.epochs = 2;
            cfg.train.lr_grid = None;
            (
                synthetic_cifar(500, 10),
                synthetic_cifar(200, 11),
                "synthetic 3x32x32 records, 2 epochs",
            )
        }
    };
    let curves = || {
        run_compare(&cfg, &SCHEMES, &[0], &train, &test)
            .map(|rows| curves_csv(&rows))
            .map_err(|e| e.to_string())
    };
    let (a, b) = (curves()?, curves()?);
    ensure(a == b, || "compare curves differ between runs".into())?;
    Ok(format!(
        "spirals metrics and {what} curves byte-identical ({} + {} bytes)",
        a.len(),
        b.len()
    ))
}

fn main() -> ExitCode {
    // libtest-style flags passed by cargo are ignored
    let cifar = data_dir().map(|dir| {
        let mut cfg = cifar_config();
        if let fieldnet_core::experiment::DatasetConfig::Cifar10 { dir: d, .. } = &mut cfg.dataset {
            *d = Some(dir);
        }
        cfg.dataset.load(None)
    });
    let cifar = match cifar {
        Some(Ok(data)) => Some(data),
        Some(Err(e)) => {
            eprintln!("FIELDNET_DATA_DIR is set but CIFAR-10 failed to load: {e}");
            None
        }
        None => None,
    };

    let to_outcome = |r: Check| match r {
        Ok(s) => Outcome::Pass(s),
        Err(s) => Outcome::Fail(s),
    };
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (
            "1 closed-form minimax",
            Box::new(|| to_outcome(closed_form())),
        ),
        (
            "2 Remez convergence",
            Box::new(|| to_outcome(remez_convergence())),
        ),
        (
            "3 integer approximability",
            Box::new(|| to_outcome(approximability())),
        ),
        ("4 gradient suite", Box::new(|| to_outcome(gradients()))),
        (
            "5 field/oracle equivalence",
            Box::new(|| to_outcome(field_equivalence())),
        ),
        (
            "6 scale convergence",
            Box::new(|| to_outcome(scale_convergence())),
        ),
        (
            "7 directional accuracy",
            Box::new(|| directional_accuracy(&cifar)),
        ),
        (
            "8 determinism",
            Box::new(|| to_outcome(determinism(&cifar))),
        ),
    ];

    let mut failed = 0;
    for (name, run) in &criteria {
        let start = Instant::now();
        let outcome = run();
        let t = fmt_time(start.elapsed());
        match outcome {
            Outcome::Pass(msg) => println!("[PASS]    {name} ({t}): {msg}"),
            Outcome::Fail(msg) => {
                failed += 1;
                println!("[FAIL]    {name} ({t}): {msg}");
            }
            Outcome::Blocked(msg) => println!("[BLOCKED] {name} ({t}): {msg}"),
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn fmt_time(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}
