//! Command-line front end: simulate / fit / eval / bench.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nard_core::*;
use serde_json::json;

/// Named sub-stream tag so RBF feature draws are decoupled from the solver
/// stream while still flowing from the single --seed.
const RBF_STREAM: u64 = 0x7bf_5eed;

#[derive(Parser)]
#[command(
    name = "nard",
    version,
    about = "Joint sparse multi-output regression and precision-matrix estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known coefficients and precision.
    Simulate(SimulateArgs),
    /// Fit a model to a design/response pair.
    Fit(FitArgs),
    /// Compare a saved model against ground truth.
    Eval(EvalArgs),
    /// Per-iteration timing table over problem sizes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of features.
    #[arg(long)]
    d: usize,
    /// Number of outputs.
    #[arg(long)]
    m: usize,
    /// Number of samples.
    #[arg(long)]
    n: usize,
    /// Edge probability of the precision-matrix graph.
    #[arg(long, default_value_t = 0.1)]
    sparsity: f64,
    /// Fraction of nonzero coefficient entries.
    #[arg(long = "w-sparsity", default_value_t = 0.1)]
    w_sparsity: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Design matrix CSV, d rows x N columns.
    #[arg(long)]
    x: PathBuf,
    /// Response matrix CSV, m rows x N columns.
    #[arg(long)]
    y: PathBuf,
    #[arg(long, value_parser = parse_method, default_value = "nard")]
    method: Method,
    /// flat | gamma:A,B
    #[arg(long = "alpha-prior", default_value = "flat")]
    alpha_prior: String,
    /// flat | invwishart:NU
    #[arg(long = "v-prior", default_value = "flat")]
    v_prior: String,
    /// Graphical-lasso penalty. Mutually exclusive with --cv-lambda.
    #[arg(long, conflicts_with = "cv_lambda")]
    lambda: Option<f64>,
    /// Select lambda by 5-fold cross-validation. Optional value LO,HI,K
    /// (defaults to 20 log-spaced points over [1e-3, 1]).
    #[arg(long = "cv-lambda", num_args = 0..=1, default_missing_value = "1e-3,1,20")]
    cv_lambda: Option<String>,
    /// none | poly:DEGREE | rbf:GAMMA,D
    #[arg(long, default_value = "none")]
    kernel: String,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    #[arg(long = "max-iter", default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Fitted model (JSON, as written by `fit`).
    #[arg(long)]
    model: PathBuf,
    /// Directory holding w_true.csv and omega_true.csv (as written by
    /// `simulate`).
    #[arg(long)]
    truth: PathBuf,
    /// Report path (JSON).
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated feature counts, e.g. 500,2000,4000.
    #[arg(long)]
    sizes: String,
    #[arg(long, value_parser = parse_method, default_value = "nard")]
    method: Method,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path; written to standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    match s {
        "nard" => Ok(Method::Nard),
        "sequential" => Ok(Method::Sequential),
        "surrogate" => Ok(Method::Surrogate),
        "hybrid" => Ok(Method::Hybrid),
        other => Err(format!(
            "unknown method {other:?} (expected nard, sequential, surrogate, or hybrid)"
        )),
    }
}

fn parse_alpha_prior(s: &str) -> Result<AlphaPrior> {
    if s == "flat" {
        return Ok(AlphaPrior::Flat);
    }
    if let Some(rest) = s.strip_prefix("gamma:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() == 2 {
            let shape = parts[0].parse::<f64>();
            let rate = parts[1].parse::<f64>();
            if let (Ok(shape), Ok(rate)) = (shape, rate) {
                return Ok(AlphaPrior::Gamma { shape, rate });
            }
        }
    }
    Err(NardError::InvalidParameter(format!(
        "bad --alpha-prior {s:?} (expected flat or gamma:A,B)"
    )))
}

fn parse_v_prior(s: &str, m: usize) -> Result<VPrior> {
    if s == "flat" {
        return Ok(VPrior::Flat);
    }
    if let Some(rest) = s.strip_prefix("invwishart:") {
        if let Ok(nu) = rest.parse::<f64>() {
            // Identity scale matrix: the CLI exposes only the strength nu.
            let psi = (0..m)
                .map(|i| (0..m).map(|j| f64::from(u8::from(i == j))).collect())
                .collect();
            return Ok(VPrior::InverseWishart { psi, nu });
        }
    }
    Err(NardError::InvalidParameter(format!(
        "bad --v-prior {s:?} (expected flat or invwishart:NU)"
    )))
}

fn parse_kernel(s: &str, seed: u64) -> Result<KernelSpec> {
    if s == "none" {
        return Ok(KernelSpec::None);
    }
    if let Some(rest) = s.strip_prefix("poly:") {
        if let Ok(degree) = rest.parse::<u32>() {
            return Ok(KernelSpec::Polynomial {
                degree,
                include_bias: true,
            });
        }
    }
    if let Some(rest) = s.strip_prefix("rbf:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() == 2 {
            if let (Ok(gamma), Ok(n_features)) =
                (parts[0].parse::<f64>(), parts[1].parse::<usize>())
            {
                return Ok(KernelSpec::RbfRandomFeatures {
                    gamma,
                    n_features,
                    seed: seed ^ RBF_STREAM,
                });
            }
        }
    }
    Err(NardError::InvalidParameter(format!(
        "bad --kernel {s:?} (expected none, poly:DEGREE, or rbf:GAMMA,D)"
    )))
}

fn parse_cv_spec(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(',').collect();
    let bad = || {
        NardError::InvalidParameter(format!("bad --cv-lambda {s:?} (expected LO,HI,K)"))
    };
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let k: usize = parts[2].parse().map_err(|_| bad())?;
    if !(lo > 0.0) || !(hi > lo) || k < 2 {
        return Err(bad());
    }
    let step = (hi / lo).ln() / (k - 1) as f64;
    Ok((0..k).map(|i| lo * (step * i as f64).exp()).collect())
}

fn init_threads() {
    if let Ok(v) = std::env::var("NARD_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            // Ignores the error if a global pool already exists.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn exit_code_for(err: &NardError) -> i32 {
    if err.is_numerical() {
        return 3;
    }
    match err {
        NardError::Io { .. }
        | NardError::Parse { .. }
        | NardError::EmptyInput(_)
        | NardError::Dimension(_)
        | NardError::Serde(_) => 2,
        _ => 1,
    }
}

/// Parse and run; returns the process exit code.
pub fn run(args: impl IntoIterator<Item = OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> NardError {
    NardError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let spec = SynthSpec::new(args.d, args.m, args.n, args.w_sparsity, args.sparsity, args.seed);
    let (data, truth) = generate(&spec)?;
    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let paths = ["x.csv", "y.csv", "w_true.csv", "omega_true.csv"]
        .map(|name| args.out.join(name));
    save_matrix(&data.x, &paths[0])?;
    save_matrix(&data.y, &paths[1])?;
    save_matrix(&truth.w, &paths[2])?;
    save_matrix(&truth.omega, &paths[3])?;
    let mut manifest = RunManifest::new("simulate", serde_json::to_value(&spec)?);
    manifest.output_paths = paths.iter().map(|p| p.display().to_string()).collect();
    manifest.save(args.out.join("manifest.json"))?;
    println!(
        "simulated d={} m={} n={} -> {}",
        args.d,
        args.m,
        args.n,
        args.out.display()
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let x = load_matrix(&args.x)?;
    let y = load_matrix(&args.y)?;
    let raw = Dataset::new(x, y)?;
    let kernel = parse_kernel(&args.kernel, args.seed)?;
    let data = kernel.expand(&raw)?;

    let hyper = HyperpriorConfig {
        alpha_prior: parse_alpha_prior(&args.alpha_prior)?,
        v_prior: parse_v_prior(&args.v_prior, data.num_outputs())?,
    };

    let lambda = match (&args.lambda, &args.cv_lambda) {
        (Some(l), None) => *l,
        (None, spec) => {
            let grid = parse_cv_spec(spec.as_deref().unwrap_or("1e-3,1,20"))?;
            let folds = nard_core::glasso::make_folds(&data, 5)?;
            let chosen = select_lambda(&folds, &grid, &GlassoConfig::default(), |ds| {
                let n = ds.num_samples() as f64;
                Ok(nard_core::matrix::symmetrize(&(&ds.y * ds.y.transpose() / n)))
            })?;
            eprintln!("cross-validation selected lambda = {chosen}");
            chosen
        }
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    };

    let config = FitConfig {
        lambda,
        epsilon: args.epsilon,
        max_iter: args.max_iter,
        seed: args.seed,
        method: args.method,
        ..Default::default()
    };
    let state = fit(&data, &config, &hyper)?;

    let mut manifest = RunManifest::new(
        "fit",
        json!({
            "fit": serde_json::to_value(&config)?,
            "hyperpriors": serde_json::to_value(&hyper)?,
            "kernel": serde_json::to_value(&kernel)?,
        }),
    );
    manifest.input_paths = vec![
        args.x.display().to_string(),
        args.y.display().to_string(),
    ];
    manifest.output_paths = vec![args.out.display().to_string()];
    save_model(&state, Some(manifest), &args.out)?;
    println!(
        "fitted {:?}: {} active features, {} iterations -> {}",
        args.method,
        state.alpha.num_active(),
        state.iter,
        args.out.display()
    );
    for w in &state.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let w_est = model.w_matrix()?;
    let omega_est = model.omega_matrix()?;
    let w_true = load_matrix(args.truth.join("w_true.csv"))?;
    let omega_true = load_matrix(args.truth.join("omega_true.csv"))?;
    if w_true.shape() != w_est.shape() || omega_true.shape() != omega_est.shape() {
        return Err(NardError::Dimension(format!(
            "model is W {:?} / Omega {:?} but truth is W {:?} / Omega {:?}",
            w_est.shape(),
            omega_est.shape(),
            w_true.shape(),
            omega_true.shape()
        )));
    }

    let est_w = support(&w_est, 1e-4);
    let tru_w = support(&w_true, 0.0);
    let (tpr_w, fpr_w) = tpr_fpr(&est_w, &tru_w, w_true.nrows() * w_true.ncols());
    let est_o = precision_support(&omega_est, 0.0);
    let tru_o = precision_support(&omega_true, 0.0);
    let m = omega_true.nrows();
    let (tpr_o, fpr_o) = tpr_fpr(&est_o, &tru_o, m * (m - 1) / 2);

    let mut manifest = RunManifest::new("eval", serde_json::Value::Null);
    manifest.input_paths = vec![
        args.model.display().to_string(),
        args.truth.display().to_string(),
    ];
    manifest.output_paths = vec![args.report.display().to_string()];
    let report = json!({
        "tpr_w": tpr_w,
        "fpr_w": fpr_w,
        "tpr_omega": tpr_o,
        "fpr_omega": fpr_o,
        "jaccard_w": jaccard(&est_w, &tru_w),
        "jaccard_omega": jaccard(&est_o, &tru_o),
        "manifest": manifest,
    });
    std::fs::write(&args.report, serde_json::to_string_pretty(&report)?)
        .map_err(|e| io_err(&args.report, e))?;
    println!(
        "TPR(W) {tpr_w:.4} FPR(W) {fpr_w:.4} TPR(Omega) {tpr_o:.4} FPR(Omega) {fpr_o:.4} -> {}",
        args.report.display()
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let sizes: Vec<usize> = args
        .sizes
        .split(',')
        .map(|s| {
            s.parse::<usize>().map_err(|_| {
                NardError::InvalidParameter(format!("bad --sizes entry {s:?}"))
            })
        })
        .collect::<Result<_>>()?;
    if args.repeats == 0 {
        return Err(NardError::InvalidParameter("--repeats must be >= 1".into()));
    }

    let mut rows = vec!["method,d,m,n,repeats,secs_per_iter".to_string()];
    for &d in &sizes {
        let spec = SynthSpec::new(d, args.m, args.n, 0.05, 0.1, args.seed);
        let (data, _) = generate(&spec)?;
        let mut total = 0.0;
        for rep in 0..args.repeats {
            let cfg = |iters: usize| FitConfig {
                lambda: args.lambda,
                epsilon: 1e-300,
                max_iter: iters,
                seed: args.seed.wrapping_add(rep as u64),
                method: args.method,
                ..Default::default()
            };
            let t1 = Instant::now();
            fit(&data, &cfg(1), &HyperpriorConfig::default())?;
            let one = t1.elapsed().as_secs_f64();
            let t3 = Instant::now();
            fit(&data, &cfg(3), &HyperpriorConfig::default())?;
            let three = t3.elapsed().as_secs_f64();
            total += ((three - one) / 2.0).max(0.0);
        }
        rows.push(format!(
            "{:?},{d},{},{},{},{:.6}",
            args.method,
            args.m,
            args.n,
            args.repeats,
            total / args.repeats as f64
        ));
    }
    let table = rows.join("\n") + "\n";
    match &args.out {
        Some(path) => {
            std::fs::write(path, &table).map_err(|e| io_err(path, e))?;
            let mut manifest = RunManifest::new(
                "bench",
                json!({
                    "sizes": sizes,
                    "method": format!("{:?}", args.method),
                    "repeats": args.repeats,
                    "m": args.m,
                    "n": args.n,
                    "lambda": args.lambda,
                    "seed": args.seed,
                }),
            );
            manifest.output_paths = vec![path.display().to_string()];
            let manifest_path = path.with_extension("manifest.json");
            manifest.save(&manifest_path)?;
        }
        None => print!("{table}"),
    }
    Ok(())
}
