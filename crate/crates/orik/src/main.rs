use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use orik::analysis::{erf_map, mad_count};
use orik::bench::{run_bench, BenchParams};
use orik::error::OrikError;
use orik::model::NetworkConfig;
use orik::offsets::{ConvConfig, Discretization, Parameterization};
use orik::scalar::Dtype;
use orik::verify::run_suite;

#[derive(Parser)]
#[command(name = "orik", about = "Oriented 1D depthwise convolution toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    All,
    Conv,
    Grad,
    Decomp,
    Gauss,
    Plan,
}

impl SuiteArg {
    fn name(self) -> &'static str {
        match self {
            SuiteArg::All => "all",
            SuiteArg::Conv => "conv",
            SuiteArg::Grad => "grad",
            SuiteArg::Decomp => "decomp",
            SuiteArg::Gauss => "gauss",
            SuiteArg::Plan => "plan",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DtypeArg {
    F32,
    F64,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Dtype {
        match d {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamArg {
    Rotation,
    ShearX,
    ShearY,
}

#[derive(Clone, Copy, ValueEnum)]
enum DiscArg {
    RoundDown,
    Bilinear,
}

#[derive(Subcommand)]
enum Command {
    /// Run property suites; exit 0 iff all checks pass.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Emit one JSON object per check instead of text lines.
        #[arg(long)]
        json: bool,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Time one operation: `warmup` dry runs, then `reps` measured runs.
    Bench {
        #[arg(long)]
        op: String,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 512)]
        c: usize,
        #[arg(long, default_value_t = 56)]
        h: usize,
        #[arg(long, default_value_t = 56)]
        w: usize,
        #[arg(long, default_value_t = 31)]
        k: usize,
        #[arg(long, default_value_t = 0.0)]
        angle: f64,
        /// Direction count; > 1 partitions channels into D angle groups.
        #[arg(long, default_value_t = 1)]
        dirs: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, value_enum, default_value = "f32")]
        dtype: DtypeArg,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        /// Append the report to this CSV file (header written once).
        #[arg(long)]
        csv: Option<std::path::PathBuf>,
    },
    /// Report per-element multiply-add counts.
    Madcount {
        #[arg(long)]
        op: String,
        #[arg(long)]
        k: u64,
        #[arg(long)]
        cprime: Option<u64>,
    },
    /// Dump an offset table as `k dh dw [frac_h frac_w]` lines.
    Offsets {
        #[arg(long)]
        k: usize,
        /// Defaults to floor(K/2).
        #[arg(long)]
        pad: Option<f64>,
        #[arg(long)]
        angle: f64,
        #[arg(long, value_enum, default_value = "rotation")]
        parameterization: ParamArg,
        #[arg(long, value_enum, default_value = "round-down")]
        discretization: DiscArg,
        /// Exterior padding for even-sized kernels.
        #[arg(long, requires = "pad_w")]
        pad_h: Option<i64>,
        #[arg(long, requires = "pad_h")]
        pad_w: Option<i64>,
    },
    /// Compute a receptive-field map for a network config and write a PGM.
    Erf {
        #[arg(long)]
        config: std::path::PathBuf,
        #[arg(long, default_value_t = 4)]
        samples: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: std::path::PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        params_seed: u64,
        #[arg(long, value_enum, default_value = "f32")]
        dtype: DtypeArg,
    },
}

fn default_threads() -> usize {
    if let Ok(v) = std::env::var("ORIK_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// 2 for usage-level errors, 1 for everything else.
fn error_exit(err: &OrikError) -> ExitCode {
    eprintln!("error: {err}");
    match err {
        OrikError::InvalidConfig(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Verify { suite, seed, json, threads } => {
            let threads = threads.unwrap_or_else(default_threads);
            let results = match run_suite(suite.name(), seed, threads) {
                Ok(r) => r,
                Err(e) => return error_exit(&e),
            };
            let mut all_pass = true;
            for r in &results {
                all_pass &= r.pass;
                if json {
                    println!(
                        "{}",
                        serde_json::json!({
                            "suite": r.suite,
                            "name": r.name,
                            "pass": r.pass,
                            "metric": r.metric,
                        })
                    );
                } else {
                    println!(
                        "[{}] {}::{} metric={:.3e}",
                        if r.pass { "PASS" } else { "FAIL" },
                        r.suite,
                        r.name,
                        r.metric
                    );
                }
            }
            if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::Bench {
            op,
            n,
            c,
            h,
            w,
            k,
            angle,
            dirs,
            stride,
            dtype,
            threads,
            reps,
            warmup,
            csv,
        } => {
            let params = BenchParams {
                n,
                c,
                h,
                w,
                k,
                angle_deg: angle,
                dirs,
                stride,
                dtype: dtype.into(),
                threads: threads.unwrap_or_else(default_threads),
            };
            let report = match run_bench(&op, &params, warmup, reps) {
                Ok(r) => r,
                Err(e) => return error_exit(&e),
            };
            println!(
                "{} N={} C={} H={} W={} K={} angle={} dirs={} stride={} threads={}: \
                 mean {:.0} ns +- {:.0} ns over {} reps (warmup {}), {} MADs/element",
                report.op_id,
                params.n,
                params.c,
                params.h,
                params.w,
                params.k,
                params.angle_deg,
                params.dirs,
                params.stride,
                params.threads,
                report.mean_ns,
                report.std_ns,
                report.reps,
                report.warmup,
                report.mads_per_element
            );
            if let Some(path) = csv {
                if let Err(e) = report.append_csv(&path) {
                    return error_exit(&e);
                }
            }
            ExitCode::SUCCESS
        }
        Command::Madcount { op, k, cprime } => match mad_count(&op, k, cprime, 1) {
            Ok(tally) => {
                println!("{}", tally.per_element_mads);
                ExitCode::SUCCESS
            }
            Err(e) => error_exit(&e),
        },
        Command::Offsets { k, pad, angle, parameterization, discretization, pad_h, pad_w } => {
            let cfg = ConvConfig {
                k,
                pad: pad.unwrap_or((k / 2) as f64),
                stride: 1,
                parameterization: match parameterization {
                    ParamArg::Rotation => Parameterization::Rotation,
                    ParamArg::ShearX => Parameterization::ShearX,
                    ParamArg::ShearY => Parameterization::ShearY,
                },
                discretization: match discretization {
                    DiscArg::RoundDown => Discretization::RoundDown,
                    DiscArg::Bilinear => Discretization::Bilinear,
                },
                even_pad: pad_h.zip(pad_w),
            };
            let table = match cfg.table_for_angle(angle) {
                Ok(t) => t,
                Err(e) => return error_exit(&e),
            };
            for (tap, &(dh, dw)) in table.entries.iter().enumerate() {
                match &table.fractional {
                    Some(frac) => {
                        let (fh, fw) = frac[tap];
                        println!("{tap} {dh} {dw} {fh} {fw}");
                    }
                    None => println!("{tap} {dh} {dw}"),
                }
            }
            ExitCode::SUCCESS
        }
        Command::Erf { config, samples, size, out, seed, params_seed, dtype } => {
            let json = match std::fs::read_to_string(&config) {
                Ok(s) => s,
                Err(e) => return error_exit(&OrikError::Io(e)),
            };
            let cfg = match NetworkConfig::from_json(&json) {
                Ok(c) => c,
                Err(e) => return error_exit(&e),
            };
            let map = match Dtype::from(dtype) {
                Dtype::F32 => erf_map::<f32>(&cfg, params_seed, samples, size, seed),
                Dtype::F64 => erf_map::<f64>(&cfg, params_seed, samples, size, seed),
            };
            let map = match map {
                Ok(m) => m,
                Err(e) => return error_exit(&e),
            };
            if let Err(e) = map.write_pgm(&out) {
                return error_exit(&e);
            }
            println!("wrote {} ({}x{})", out.display(), map.w, map.h);
            ExitCode::SUCCESS
        }
    }
}
