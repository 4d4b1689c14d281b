//! `blt`: build, evaluate, optimize and stream buffered linear Toeplitz factorizations.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure,
//! 3 verification mismatch.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use blt_core::blt_params::{BltFactorization, Method};
use blt_core::error_eval::{bounds_table, max_err};
use blt_core::io::{self, BltMeta};
use blt_core::optimizer::{optimize_blt, Init, OptConfig};
use blt_core::rational_approx::ra_blt_build;
use blt_core::recursive_factor::{BltBase, KeyedGaussian, RecursiveFactorization, RecursiveStream};
use blt_core::seq_core::{ltt_apply_dense, Matrix};
use blt_core::streaming::{
    gaussian_matrix, write_csv, write_f64, NoiseSidecar, NoiseStream, NoiseStreamConfig, OutputKind, RNG_NAME,
};

/// Largest horizon accepted by `verify`.
const VERIFY_CAP: usize = 1 << 14;

#[derive(Parser, Debug)]
#[command(name = "blt", version, about = "Buffered linear Toeplitz factorizations for private prefix sums")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Reference bounds over a grid of horizons as CSV.
    Bounds {
        /// Largest horizon.
        #[arg(long)]
        n_max: usize,
        /// Number of geometrically spaced horizons; every horizon up to `n_max` when absent.
        #[arg(long)]
        log_grid: Option<usize>,
        /// Factorization whose MaxErr fills the mechanism columns.
        #[arg(long)]
        blt: Option<PathBuf>,
    },
    /// Builds a closed-form factorization.
    Build {
        /// Construction.
        #[arg(long, value_enum)]
        method: BuildMethod,
        /// Number of buffers (rational approximation only).
        #[arg(long)]
        degree: Option<usize>,
        /// Target horizon.
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimizes the roots of a factorization for one horizon.
    Optimize {
        /// Number of buffers.
        #[arg(long)]
        degree: usize,
        /// Target horizon.
        #[arg(long)]
        steps: usize,
        /// Iteration cap.
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
        /// Jitters the starting point with this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Prints the MaxErr report of a factorization as JSON.
    Eval {
        /// Factorization file.
        #[arg(long)]
        blt: PathBuf,
        /// Horizon.
        #[arg(long)]
        steps: usize,
    },
    /// Generates correlated Gaussian noise.
    Noisegen {
        /// Factorization file.
        #[arg(long)]
        blt: PathBuf,
        /// Rows.
        #[arg(long)]
        steps: usize,
        /// Row width.
        #[arg(long)]
        dim: usize,
        /// RNG seed.
        #[arg(long)]
        seed: u64,
        /// Noise multiplier.
        #[arg(long)]
        zeta: f64,
        /// Per-step or prefix rows.
        #[arg(long, value_enum, default_value_t = Mode::PerStep)]
        mode: Mode,
        /// Output encoding.
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Output path; raw output also writes `<out>.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compares streamed noise against dense products.
    Verify {
        /// Factorization file.
        #[arg(long)]
        blt: PathBuf,
        /// Rows, at most 16384.
        #[arg(long)]
        steps: usize,
        /// Row width.
        #[arg(long)]
        dim: usize,
        /// RNG seed.
        #[arg(long)]
        seed: u64,
        /// Largest accepted absolute deviation.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// MaxErr ratios to the Toeplitz optimum as CSV.
    Compare {
        /// Comma-separated degrees.
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,9")]
        degrees: Vec<usize>,
        /// Comma-separated methods.
        #[arg(long, value_delimiter = ',', value_enum, default_value = "ra,opt")]
        methods: Vec<CompareMethod>,
        /// Comma-separated horizons.
        #[arg(long, value_delimiter = ',', default_value = "100,1000,10000,100000")]
        n_grid: Vec<usize>,
    },
    /// Checks a recursive factorization built on a base file and prints its norms.
    Recursive {
        /// Base factorization file; its horizon is the base size.
        #[arg(long)]
        base: PathBuf,
        /// Recursion depth.
        #[arg(long)]
        levels: usize,
        /// Leading rows checked densely.
        #[arg(long, default_value_t = 64)]
        steps_check: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BuildMethod {
    Ra,
    Degree1,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CompareMethod {
    Ra,
    Opt,
    Degree1,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    PerStep,
    Prefix,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    F64,
}

/// Error tagged with the exit code it maps to.
#[derive(Debug)]
struct Mismatch(String);

impl std::fmt::Display for Mismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Mismatch {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Mismatch>().is_some() {
        return 3;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<blt_core::Error>() {
            return if e.is_numerical() || matches!(e, blt_core::Error::Exhausted { .. }) {
                2
            } else {
                1
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match command {
        Command::Bounds { n_max, log_grid, blt } => {
            let mech = blt.as_deref().map(load).transpose()?;
            bounds(n_max, log_grid, mech.as_ref(), &mut out)
        }
        Command::Build {
            method,
            degree,
            steps,
            out: path,
        } => {
            let fact = match method {
                BuildMethod::Ra => {
                    let d = degree.ok_or_else(|| anyhow!("--degree is required for --method ra"))?;
                    ra_blt_build(d, steps)?
                }
                BuildMethod::Degree1 => io::degree1_factorization(steps)?,
                BuildMethod::Identity => BltFactorization::identity(steps)?,
            };
            io::save(&fact, BltMeta::new(fact.method()), &path).with_context(|| format!("writing {}", path.display()))
        }
        Command::Optimize {
            degree,
            steps,
            max_iters,
            seed,
            out: path,
        } => {
            let mut cfg = OptConfig::new(degree, steps);
            cfg.max_iters = max_iters;
            if let Some(seed) = seed {
                cfg.init = Init::JitteredLadder { seed };
            }
            let res = optimize_blt(&cfg)?;
            let report = max_err(&res.factorization, steps)?;
            let mut meta = BltMeta::new(Method::Opt);
            meta.n_target = Some(steps);
            meta.iterations = Some(res.iterations);
            meta.final_ratio = Some(report.ratio());
            io::save(&res.factorization, meta, &path).with_context(|| format!("writing {}", path.display()))?;
            writeln!(
                out,
                "{}",
                json!({
                    "degree": degree,
                    "n": steps,
                    "iterations": res.iterations,
                    "converged": res.converged,
                    "initial_loss": res.initial_loss,
                    "final_loss": res.final_loss,
                    "max_err": report.max_err,
                    "ratio": report.ratio(),
                })
            )?;
            Ok(())
        }
        Command::Eval { blt, steps } => {
            let fact = load(&blt)?;
            let report = max_err(&fact, steps)?;
            let mut v = serde_json::to_value(report)?;
            v["ratio"] = json!(report.ratio());
            v["method"] = json!(fact.method().as_str());
            v["degree"] = json!(fact.degree());
            writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
            Ok(())
        }
        Command::Noisegen {
            blt,
            steps,
            dim,
            seed,
            zeta,
            mode,
            format,
            out: path,
        } => noisegen(&blt, steps, dim, seed, zeta, mode, format, &path),
        Command::Verify {
            blt,
            steps,
            dim,
            seed,
            tol,
        } => verify(&blt, steps, dim, seed, tol, &mut out),
        Command::Compare {
            degrees,
            methods,
            n_grid,
        } => compare(&degrees, &methods, &n_grid, &mut out),
        Command::Recursive {
            base,
            levels,
            steps_check,
        } => recursive(&base, levels, steps_check, &mut out),
    }
}

fn load(path: &Path) -> anyhow::Result<BltFactorization> {
    io::load(path).with_context(|| format!("reading {}", path.display()))
}

/// Every horizon `1..=n_max`, or `k` geometrically spaced ones.
fn grid(n_max: usize, log_grid: Option<usize>) -> anyhow::Result<Vec<usize>> {
    if n_max == 0 {
        bail!("--n-max must be positive");
    }
    let Some(k) = log_grid else {
        return Ok((1..=n_max).collect());
    };
    if k == 0 {
        bail!("--log-grid must be positive");
    }
    if k == 1 {
        return Ok(vec![n_max]);
    }
    let top = (n_max as f64).ln();
    let mut g: Vec<usize> = (0..k)
        .map(|i| ((top * i as f64 / (k - 1) as f64).exp().round() as usize).clamp(1, n_max))
        .collect();
    g.dedup();
    Ok(g)
}

fn bounds(n_max: usize, log_grid: Option<usize>, mech: Option<&BltFactorization>, out: &mut impl Write) -> anyhow::Result<()> {
    writeln!(out, "n,opt_lt_toe,mathias_ub,matousek_lb,bintree,mechanism_maxerr,ratio")?;
    for n in grid(n_max, log_grid)? {
        let b = bounds_table(n)?;
        let (me, ratio) = match mech {
            Some(f) => {
                let r = max_err(f, n)?;
                (r.max_err.to_string(), r.ratio().to_string())
            }
            None => (String::new(), String::new()),
        };
        writeln!(
            out,
            "{n},{},{},{},{},{me},{ratio}",
            b.opt_lt_toe, b.mathias_ub, b.matousek_lb, b.bintree
        )?;
    }
    Ok(())
}

fn noise_threads() -> anyhow::Result<usize> {
    match std::env::var("BLT_NOISE_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("BLT_NOISE_THREADS={v} is not a thread count")),
        Err(_) => Ok(0),
    }
}

#[allow(clippy::too_many_arguments)]
fn noisegen(
    blt: &Path,
    steps: usize,
    dim: usize,
    seed: u64,
    zeta: f64,
    mode: Mode,
    format: Format,
    path: &Path,
) -> anyhow::Result<()> {
    let factorization = load(blt)?;
    let output_kind = match mode {
        Mode::PerStep => OutputKind::PerStep,
        Mode::Prefix => OutputKind::Prefix,
    };
    let cfg = NoiseStreamConfig {
        factorization,
        n: steps,
        m: dim,
        seed,
        zeta,
        output_kind,
    };
    let mut stream = NoiseStream::with_threads(&cfg, noise_threads()?)?;
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let w = BufWriter::new(file);
    match format {
        Format::Csv => {
            write_csv(&mut stream, w)?;
        }
        Format::F64 => {
            write_f64(&mut stream, w)?;
            let sidecar = NoiseSidecar {
                n: steps,
                m: dim,
                zeta,
                sigma: stream.sigma(),
                seed,
                rng: RNG_NAME.to_string(),
                factorization_path: blt.display().to_string(),
                mode: output_kind,
            };
            let mut side = path.as_os_str().to_owned();
            side.push(".json");
            std::fs::write(&side, serde_json::to_string_pretty(&sidecar)?)
                .with_context(|| format!("writing {}", Path::new(&side).display()))?;
        }
    }
    Ok(())
}

fn collect(stream: NoiseStream, n: usize, m: usize) -> anyhow::Result<Matrix> {
    let data: Vec<f64> = stream.flatten().collect();
    Ok(Matrix::from_vec(n, m, data)?)
}

fn verify(blt: &Path, steps: usize, dim: usize, seed: u64, tol: f64, out: &mut impl Write) -> anyhow::Result<()> {
    if steps > VERIFY_CAP {
        bail!("--steps is capped at {VERIFY_CAP}");
    }
    let factorization = load(blt)?;
    let mut cfg = NoiseStreamConfig {
        factorization: factorization.clone(),
        n: steps,
        m: dim,
        seed,
        zeta: 1.0,
        output_kind: OutputKind::PerStep,
    };
    let per_step_stream = NoiseStream::with_threads(&cfg, noise_threads()?)?;
    let sigma = per_step_stream.sigma();
    let per_step = collect(per_step_stream, steps, dim)?;
    cfg.output_kind = OutputKind::Prefix;
    let prefix = collect(NoiseStream::with_threads(&cfg, noise_threads()?)?, steps, dim)?;
    let z = gaussian_matrix(seed, steps, dim, sigma);
    let dense_step = ltt_apply_dense(&factorization.c_inverse_coeffs(steps)?, &z)?;
    let dense_prefix = ltt_apply_dense(&factorization.b_coeffs(steps)?, &z)?;
    let dev = per_step.max_abs_diff(&dense_step).max(prefix.max_abs_diff(&dense_prefix));
    let ok = dev <= tol;
    writeln!(
        out,
        "{}",
        json!({ "n": steps, "m": dim, "seed": seed, "max_abs_dev": dev, "tol": tol, "ok": ok })
    )?;
    if !ok {
        return Err(Mismatch(format!("max abs deviation {dev:e} exceeds {tol:e}")).into());
    }
    Ok(())
}

fn compare(degrees: &[usize], methods: &[CompareMethod], n_grid: &[usize], out: &mut impl Write) -> anyhow::Result<()> {
    let mut jobs = Vec::new();
    for &method in methods {
        let ds: &[usize] = if method == CompareMethod::Degree1 { &[1] } else { degrees };
        for &d in ds {
            if method == CompareMethod::Ra && d < 3 {
                eprintln!("skipping ra at degree {d}: needs at least 3 buffers");
                continue;
            }
            for &n in n_grid {
                jobs.push((method, d, n));
            }
        }
    }
    let rows: Vec<String> = jobs
        .par_iter()
        .map(|&(method, d, n)| -> anyhow::Result<String> {
            let (name, fact) = match method {
                CompareMethod::Ra => ("ra", ra_blt_build(d, n)?),
                CompareMethod::Opt => ("opt", optimize_blt(&OptConfig::new(d, n))?.factorization),
                CompareMethod::Degree1 => ("degree1", io::degree1_factorization(n)?),
            };
            let r = max_err(&fact, n)?;
            Ok(format!("{name},{d},{n},{},{},{}", r.max_err, r.bounds.opt_lt_toe, r.ratio()))
        })
        .collect::<anyhow::Result<_>>()?;
    writeln!(out, "method,degree,n,max_err,opt_lt_toe,ratio")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    Ok(())
}

fn recursive(base_path: &Path, levels: usize, steps_check: usize, out: &mut impl Write) -> anyhow::Result<()> {
    let base = load(base_path)?;
    let n1 = base.n();
    let rf = RecursiveFactorization::from_blt(&base, n1, levels)?;
    let n = rf.n();
    let k = steps_check.min(n);
    let b = rf.dense_b()?;
    let c = rf.dense_c()?;
    let bc = b.matmul(&c)?;
    let mut validity: f64 = 0.0;
    for i in 0..k {
        for j in 0..k {
            let want = if j <= i { 1.0 } else { 0.0 };
            validity = validity.max((bc[(i, j)] - want).abs());
        }
    }
    let factory = Arc::new(BltBase::new(base, n1)?);
    let mut stream = RecursiveStream::new(factory, levels, 1)?;
    let mut noise = KeyedGaussian::new(0, rf.n_prime(), 1, 1.0);
    let bz = b.matmul(&noise.dense())?;
    let mut stream_dev: f64 = 0.0;
    let mut peak_state = 0;
    for i in 0..k {
        let row = stream.next_row(&mut noise)?.ok_or_else(|| anyhow!("stream ended early"))?;
        peak_state = peak_state.max(stream.state_bytes());
        stream_dev = stream_dev.max((row[0] - bz[(i, 0)]).abs());
    }
    let (sens, row_bound) = rf.norms()?;
    let ok = validity <= 1e-8 && stream_dev <= 1e-9;
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&json!({
            "n1": n1,
            "levels": levels,
            "n": n,
            "n_prime": rf.n_prime(),
            "steps_checked": k,
            "validity_residual": validity,
            "stream_max_abs_dev": stream_dev,
            "peak_state_bytes": peak_state,
            "sensitivity": sens,
            "row_norm_bound": row_bound,
            "max_err_bound": sens * row_bound,
            "dense_sensitivity": c.max_col_norm(),
            "dense_row_norm": b.max_row_norm(),
            "ok": ok,
        }))?
    )?;
    if !ok {
        return Err(Mismatch("recursive factorization check failed".into()).into());
    }
    Ok(())
}
