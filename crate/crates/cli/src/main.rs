//! `fieldnet`: approximation toolkit and experiment harness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use fieldnet_core::approx::{
    check_approx_unit_interval, check_interval_length, check_kernel_special_case,
    relu_minimax_deg2, remez, scale_to_integer, AlgebraicKernelSpecialCase, ApproximabilityVerdict,
    Interval, MinimaxResult, Polynomial,
};
use fieldnet_core::data::{
    load_cifar10, load_cifar100, normalize, synth_blobs, synth_spirals, Dataset, Normalization,
};
use fieldnet_core::experiment::{
    compare_csv, curves_csv, run_compare, run_training, write_run, Architecture, DatasetConfig,
    ExperimentConfig, Scheme,
};
use fieldnet_core::field::Modulus;
use fieldnet_core::fieldnn::{
    auto_modulus, field_forward, load_quantized, quantize, quantize_input, save_quantized,
    QModelMeta, QuantConfig, QuantizedModel,
};
use fieldnet_core::fsutil::write_atomic;
use fieldnet_core::nn::{load_model, predict};

const DATA_DIR_ENV: &str = "FIELDNET_DATA_DIR";

#[derive(Parser)]
#[command(
    name = "fieldnet",
    version,
    about = "Polynomial ReLU replacements and prime-field inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide whether a function is uniformly approximable on an interval by
    /// polynomials with integer coefficients.
    Check(CheckArgs),
    /// Minimax polynomial approximation.
    Approx(ApproxArgs),
    /// Train one experiment and write model.json and metrics.csv.
    Train(TrainArgs),
    /// Train several schemes over several seeds and tabulate test accuracy.
    Compare(CompareArgs),
    /// Quantise a trained model for prime-field inference.
    Quantize(QuantizeArgs),
    /// Run a quantised model in F_p over a dataset.
    Infer(InferArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Function {
    Relu,
    #[value(name = "scaled_relu", alias = "scaled-relu")]
    ScaledRelu,
    Abs,
    Square,
}

#[derive(Args)]
struct FunctionArgs {
    function: Function,
    /// Slope of the scaled ReLU `max(c x, 0)`.
    #[arg(long)]
    c: Option<f64>,
    /// Interval end points.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true, default_values_t = [-1.0, 1.0])]
    interval: Vec<f64>,
}

impl FunctionArgs {
    fn interval(&self) -> Result<Interval> {
        Ok(Interval::new(self.interval[0], self.interval[1])?)
    }

    fn eval(&self) -> Result<impl Fn(f64) -> f64> {
        let c = match (self.function, self.c) {
            (Function::ScaledRelu, Some(c)) => c,
            (Function::ScaledRelu, None) => bail!("scaled_relu needs --c"),
            (_, Some(_)) => bail!("--c only applies to scaled_relu"),
            (_, None) => 1.0,
        };
        let f = self.function;
        Ok(move |x: f64| match f {
            Function::Relu => x.max(0.0),
            Function::ScaledRelu => (c * x).max(0.0),
            Function::Abs => x.abs(),
            Function::Square => x * x,
        })
    }

    /// Whether the function agrees with an integer polynomial on the interval.
    fn is_integer_poly_on(&self, iv: Interval) -> bool {
        let one_sided = iv.lo >= 0.0 || iv.hi <= 0.0;
        match self.function {
            Function::Square => true,
            Function::Relu | Function::Abs => one_sided,
            Function::ScaledRelu => {
                let c = self.c.unwrap_or(1.0);
                one_sided && (iv.hi <= 0.0 || c.fract() == 0.0)
            }
        }
    }

    fn name(&self) -> String {
        match (self.function, self.c) {
            (Function::ScaledRelu, Some(c)) => format!("scaled_relu(c = {c})"),
            (f, _) => format!("{f:?}").to_lowercase(),
        }
    }
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    f: FunctionArgs,
}

#[derive(Args)]
struct ApproxArgs {
    #[command(flatten)]
    f: FunctionArgs,
    #[arg(long, default_value_t = 2)]
    degree: usize,
    /// Use the closed form instead of Remez (ReLU, degree 2, symmetric interval).
    #[arg(long)]
    closed_form: bool,
    /// Rescale to leading coefficient 1, drop the constant term and round.
    #[arg(long)]
    integerize: bool,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Replaces the config's output_dir.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Dataset root for CIFAR; defaults to $FIELDNET_DATA_DIR.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Experiment config (JSON); its scheme is replaced by each of --schemes.
    /// Without one, --arch and --dataset select a full-scale preset.
    config: Option<PathBuf>,
    /// Architecture preset: cnn_liu or nin.
    #[arg(long)]
    arch: Option<String>,
    /// Image dataset: cifar10 or cifar100.
    #[arg(long)]
    dataset: Option<String>,
    /// Comma-separated schemes: relu, poly, poly:<a>, quad.
    #[arg(long, value_delimiter = ',', default_values_t = ["relu".to_string(), "poly".to_string(), "quad".to_string()])]
    schemes: Vec<String>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
    seeds: Vec<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct QuantizeArgs {
    /// Trained float model (model.json).
    model: PathBuf,
    /// Weight and input scale, a power of two.
    #[arg(long)]
    scale: u64,
    /// Separate input scale; defaults to --scale.
    #[arg(long)]
    input_scale: Option<u64>,
    /// The `a` of the model's x^2 + a x activations.
    #[arg(long, default_value_t = 1)]
    a: i64,
    /// Add round(a^2 S^2 / 8) to every polynomial activation.
    #[arg(long)]
    fold_constant: bool,
    /// Pick the smallest prime p >= 2 * required_bound + 1.
    #[arg(long, conflicts_with = "modulus")]
    auto_prime: bool,
    #[arg(long)]
    modulus: Option<u64>,
    /// Accept a modulus below the required bound.
    #[arg(long)]
    allow_wrap: bool,
    /// Output path; defaults to qmodel.json next to the model.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    /// Quantised model (qmodel.json).
    qmodel: PathBuf,
    /// blobs-test, spirals-test, cifar10-test or cifar100-test.
    #[arg(long, conflicts_with = "config")]
    dataset: Option<String>,
    /// Use the test split of this experiment config instead of --dataset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Samples for the synthetic datasets.
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Seed for the synthetic datasets (training splits use 0, test splits 1).
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
    /// Evaluate only the first N samples.
    #[arg(long)]
    limit: Option<usize>,
    /// Overrides the modulus stored in the file.
    #[arg(long)]
    modulus: Option<u64>,
    #[arg(long)]
    allow_wrap: bool,
    /// Float model for the agreement rate; defaults to the file's source model.
    #[arg(long)]
    float_model: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

fn print_json(v: &Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(v).expect("json value serialises")
    );
}

fn data_root(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ExperimentConfig::from_json(&text)?)
}

fn poly_json(p: &Polynomial) -> Value {
    json!({ "coeffs": p.coeffs(), "polynomial": p.to_string() })
}

fn verdict_json(rule: &str, v: &ApproximabilityVerdict) -> Value {
    json!({
        "approximable": v.approximable,
        "reason": v.reason,
        "rule": rule,
        "witness": v.witness,
    })
}

fn cmd_check(args: CheckArgs) -> Result<()> {
    let f = args.f.eval()?;
    let iv = args.f.interval()?;
    let (rule, verdict) = if iv.len() >= 4.0 {
        (
            "interval_length",
            check_interval_length(iv, args.f.is_integer_poly_on(iv))?,
        )
    } else if iv.lo == -1.0 && iv.hi == 1.0 {
        (
            "unit_interval_parity",
            check_approx_unit_interval(f(-1.0), f(0.0), f(1.0)),
        )
    } else if let Some(kernel) = iv
        .symmetric_half_width()
        .and_then(AlgebraicKernelSpecialCase::for_symmetric)
    {
        let samples: Vec<(f64, f64)> = kernel.points().iter().map(|&x| (x, f(x))).collect();
        (
            "algebraic_kernel",
            check_kernel_special_case(iv.hi, &samples)?,
        )
    } else {
        (
            "none",
            ApproximabilityVerdict::unknown(format!(
                "no decision procedure covers [{}, {}]",
                iv.lo, iv.hi
            )),
        )
    };
    print_json(&json!({
        "function": args.f.name(),
        "interval": [iv.lo, iv.hi],
        "verdict": verdict_json(rule, &verdict),
    }));
    Ok(())
}

fn minimax_json(r: &MinimaxResult) -> Value {
    json!({
        "coeffs": r.poly.coeffs(),
        "polynomial": r.poly.to_string(),
        "error": r.error,
        "ref_points": r.ref_points,
        "iterations": r.iterations,
        "converged": r.converged,
    })
}

/// Returns whether the approximation converged.
fn cmd_approx(args: ApproxArgs) -> Result<bool> {
    let iv = args.f.interval()?;
    let result = if args.closed_form {
        let a = iv
            .symmetric_half_width()
            .ok_or_else(|| anyhow!("--closed-form needs a symmetric interval"))?;
        if !matches!(args.f.function, Function::Relu) || args.degree != 2 {
            bail!("--closed-form covers only relu with --degree 2");
        }
        relu_minimax_deg2(a)?
    } else {
        remez(args.f.eval()?, args.degree, iv, args.tol, args.max_iter)?
    };
    let mut out = json!({
        "function": args.f.name(),
        "degree": args.degree,
        "interval": [iv.lo, iv.hi],
    });
    out.as_object_mut()
        .unwrap()
        .extend(minimax_json(&result).as_object().unwrap().clone());
    if args.integerize {
        let integer = scale_to_integer(&result.poly, 1.0)?
            .without_constant()
            .rounded();
        out["integerized"] = poly_json(&integer);
    }
    print_json(&out);
    if !result.converged {
        eprintln!(
            "error: Remez did not converge in {} iterations",
            result.iterations
        );
    }
    Ok(result.converged)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = read_config(&args.config)?;
    if let Some(dir) = args.output_dir {
        cfg.output_dir = dir;
    }
    let (train, test) = cfg.dataset.load(data_root(args.data_dir).as_deref())?;
    let run = run_training(&cfg, &train, &test, |m| {
        eprintln!(
            "epoch {:>4}  loss {:.5}  train {:.4}  test {:.4}  lr {}",
            m.epoch, m.train_loss, m.train_acc, m.test_acc, m.lr
        )
    })?;
    let report = write_run(&cfg, &run)?;
    print_json(&serde_json::to_value(report)?);
    Ok(())
}

fn preset_arch(name: &str) -> Result<Architecture> {
    match name {
        "cnn_liu" => Ok(Architecture::CnnLiu),
        "nin" => Ok(Architecture::Nin),
        other => bail!("unknown architecture preset {other:?}; expected cnn_liu or nin"),
    }
}

fn compare_config(args: &CompareArgs) -> Result<ExperimentConfig> {
    let Some(path) = &args.config else {
        let (Some(arch), Some(ds)) = (&args.arch, &args.dataset) else {
            bail!("give a config file or both --arch and --dataset");
        };
        return Ok(ExperimentConfig::image_preset(
            preset_arch(arch)?,
            DatasetConfig::cifar(ds)?,
        )?);
    };
    let mut cfg = read_config(path)?;
    if let Some(arch) = &args.arch {
        cfg.architecture = preset_arch(arch)?;
    }
    if let Some(ds) = &args.dataset {
        cfg.dataset = DatasetConfig::cifar(ds)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let mut cfg = compare_config(&args)?;
    if let Some(dir) = args.output_dir {
        cfg.output_dir = dir;
    }
    let schemes = args
        .schemes
        .iter()
        .map(|s| s.parse::<Scheme>())
        .collect::<Result<Vec<_>, _>>()?;
    let (train, test) = cfg.dataset.load(data_root(args.data_dir).as_deref())?;
    let rows = run_compare(&cfg, &schemes, &args.seeds, &train, &test)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let table = cfg.output_dir.join("compare.csv");
    let curves = cfg.output_dir.join("curves.csv");
    write_atomic(&table, compare_csv(&rows).as_bytes())?;
    write_atomic(&curves, curves_csv(&rows).as_bytes())?;
    write_atomic(
        &cfg.output_dir.join("config.json"),
        cfg.to_json().as_bytes(),
    )?;
    for r in &rows {
        if let Some(e) = &r.error {
            eprintln!("{} seed {}: {e}", r.scheme, r.seed);
        }
    }
    print_json(&json!({ "table": table, "curves": curves, "rows": rows }));
    Ok(())
}

fn cmd_quantize(args: QuantizeArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let mut qc = QuantConfig::new(args.scale, args.input_scale.unwrap_or(args.scale), args.a);
    qc.fold_minimax_constant = args.fold_constant;
    let qm = quantize(&model, qc)?;
    let modulus = match (args.auto_prime, args.modulus) {
        (true, _) => Some(auto_modulus(qm.required_bound())?),
        (false, Some(p)) => {
            let m = Modulus::new(p)?;
            check_modulus(&qm, m, args.allow_wrap)?;
            Some(m)
        }
        (false, None) => None,
    };
    let output = args
        .output
        .unwrap_or_else(|| args.model.with_file_name("qmodel.json"));
    let source = relative_source(&args.model, &output);
    let meta = QModelMeta {
        modulus,
        source_model: Some(source),
    };
    save_quantized(&qm, &meta, &output)?;
    print_json(&json!({
        "output": output,
        "required_bound": qm.required_bound().to_string(),
        "required_bound_bits": qm.required_bound().bits(),
        "modulus": modulus.map(Modulus::p),
        "output_scale": qm.output_scale().to_string(),
    }));
    Ok(())
}

/// Path of `model` as seen from the directory holding `output`.
fn relative_source(model: &Path, output: &Path) -> String {
    let same_dir = model.parent().map(Path::to_path_buf).unwrap_or_default()
        == output.parent().map(Path::to_path_buf).unwrap_or_default();
    match (same_dir, model.file_name()) {
        (true, Some(name)) => name.to_string_lossy().into_owned(),
        _ => std::path::absolute(model)
            .unwrap_or_else(|_| model.to_path_buf())
            .to_string_lossy()
            .into_owned(),
    }
}

fn check_modulus(qm: &QuantizedModel, m: Modulus, allow_wrap: bool) -> Result<()> {
    if !allow_wrap && !qm.fits_modulus(m) {
        bail!(
            "modulus {} is below the required 2 * {} + 1; pass --allow-wrap to accept wrap-around",
            m.p(),
            qm.required_bound()
        );
    }
    Ok(())
}

fn infer_dataset(args: &InferArgs, qm: &QuantizedModel) -> Result<Dataset> {
    if let Some(path) = &args.config {
        let cfg = read_config(path)?;
        return Ok(cfg
            .dataset
            .load(data_root(args.data_dir.clone()).as_deref())?
            .1);
    }
    let name = args
        .dataset
        .as_deref()
        .ok_or_else(|| anyhow!("give --dataset or --config"))?;
    let root = || {
        data_root(args.data_dir.clone())
            .ok_or_else(|| anyhow!("no --data-dir and {DATA_DIR_ENV} is unset"))
    };
    let ds = match name {
        "blobs-test" => synth_blobs(qm.output_dim(), qm.input_len(), args.n, args.data_seed)?,
        "spirals-test" => synth_spirals(args.n, 1.0, 0.02, args.data_seed)?,
        "cifar10-test" => normalize(&load_cifar10(root()?)?.1, Normalization::UnitInterval, None),
        "cifar100-test" => normalize(
            &load_cifar100(root()?)?.1,
            Normalization::UnitInterval,
            None,
        ),
        other => bail!("unknown dataset {other:?}"),
    };
    Ok(ds)
}

fn cmd_infer(args: InferArgs) -> Result<()> {
    let (qm, meta) = load_quantized(&args.qmodel)?;
    let m = match args.modulus {
        Some(p) => Modulus::new(p)?,
        None => meta
            .modulus
            .ok_or_else(|| anyhow!("the file stores no modulus; pass --modulus"))?,
    };
    check_modulus(&qm, m, args.allow_wrap)?;
    let mut ds = infer_dataset(&args, &qm)?;
    if let Some(limit) = args.limit {
        let idx: Vec<usize> = (0..ds.len().min(limit)).collect();
        ds = ds.select(&idx);
    }
    if ds.sample_shape() != qm.input_shape() {
        bail!(
            "dataset samples have shape {:?}, model expects {:?}",
            ds.sample_shape(),
            qm.input_shape()
        );
    }
    let s_x = qm.quant_config().input_scale;
    let mut field_pred = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let x = quantize_input(ds.images.row(i), s_x);
        let logits = field_forward(&qm, &x, m, args.allow_wrap)?;
        let best = (0..logits.len()).fold(0, |b, j| if logits[j] > logits[b] { j } else { b });
        field_pred.push(best);
    }
    let correct = field_pred
        .iter()
        .zip(&ds.labels)
        .filter(|(p, l)| p == l)
        .count();
    let float_path = args.float_model.clone().or_else(|| {
        meta.source_model
            .as_ref()
            .map(|s| args.qmodel.parent().unwrap_or(Path::new(".")).join(s))
    });
    let agreement = match float_path.filter(|p| p.exists()) {
        Some(p) => {
            let model = load_model(&p)?;
            let float_pred = predict(&model, &ds)?;
            let same = float_pred
                .iter()
                .zip(&field_pred)
                .filter(|(a, b)| a == b)
                .count();
            Some(same as f64 / ds.len().max(1) as f64)
        }
        None => None,
    };
    print_json(&json!({
        "modulus": m.p(),
        "samples": ds.len(),
        "accuracy": correct as f64 / ds.len().max(1) as f64,
        "agreement_with_float": agreement,
        "required_bound": qm.required_bound().to_string(),
        "allow_wrap": args.allow_wrap,
    }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Check(a) => cmd_check(a),
        Command::Approx(a) => match cmd_approx(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(3),
            Err(e) => Err(e),
        },
        Command::Train(a) => cmd_train(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Quantize(a) => cmd_quantize(a),
        Command::Infer(a) => cmd_infer(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
