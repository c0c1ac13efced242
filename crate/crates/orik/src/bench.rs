//! Benchmark harness: monotonic-clock timing with warmup runs discarded,
//! sample mean and standard deviation over the measured repetitions, and an
//! append-only CSV sink.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::error::{OrikError, Result};
use crate::offsets::{direction_angles, AngleAssignment, ConvConfig};
use crate::optimized::{dwconv1d_fast_fwd, plan_build, DEFAULT_CACHE_BUDGET};
use crate::reference::{
    dsc_fwd, dwconv1d_bilinear_fwd, dwconv1d_fwd, dwconv2d_standard_fwd, pointwise_fwd,
    KernelWeights1D, KernelWeights2D, PointwiseWeights,
};
use crate::scalar::{Dtype, Element};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchParams {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub angle_deg: f64,
    pub dirs: usize,
    pub stride: usize,
    pub dtype: Dtype,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub op_id: String,
    pub params: BenchParams,
    pub reps: usize,
    pub warmup: usize,
    pub mean_ns: f64,
    pub std_ns: f64,
    pub mads_per_element: u64,
}

pub const CSV_HEADER: &str =
    "op_id,n,c,h,w,k,angle_deg,dirs,stride,dtype,threads,reps,warmup,mean_ns,std_ns,mads_per_element";

impl BenchReport {
    pub fn csv_row(&self) -> String {
        let p = &self.params;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.op_id,
            p.n,
            p.c,
            p.h,
            p.w,
            p.k,
            p.angle_deg,
            p.dirs,
            p.stride,
            match p.dtype {
                Dtype::F32 => "f32",
                Dtype::F64 => "f64",
            },
            p.threads,
            self.reps,
            self.warmup,
            self.mean_ns,
            self.std_ns,
            self.mads_per_element
        )
    }

    /// Appends one CSV row, writing the header first if the file is new or
    /// empty.
    pub fn append_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let need_header = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        if need_header {
            writeln!(f, "{CSV_HEADER}")?;
        }
        writeln!(f, "{}", self.csv_row())?;
        Ok(())
    }
}

/// Times `reps` calls of `f` after `warmup` discarded calls; returns
/// (mean_ns, sample std_ns).
pub fn time_op<F: FnMut()>(mut f: F, warmup: usize, reps: usize) -> Result<(f64, f64)> {
    if reps == 0 {
        return Err(OrikError::InvalidConfig("reps must be >= 1".into()));
    }
    for _ in 0..warmup {
        f();
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        f();
        samples.push(t0.elapsed().as_nanos() as f64);
    }
    let mean = samples.iter().sum::<f64>() / reps as f64;
    let std = if reps > 1 {
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (reps - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    Ok((mean, std))
}

fn angle_assignment(params: &BenchParams) -> Result<AngleAssignment> {
    if params.dirs > 1 {
        direction_angles(params.dirs, params.c)
    } else {
        Ok(AngleAssignment::uniform(params.angle_deg, params.c))
    }
}

fn bench_typed<T: Element>(
    op_id: &str,
    params: &BenchParams,
    warmup: usize,
    reps: usize,
) -> Result<BenchReport> {
    let &BenchParams { n, c, h, w, k, stride, threads, .. } = params;
    let x = Tensor::<T>::random(n, h, w, c, 0xB0B5)?;
    let angles = angle_assignment(params)?;
    let cfg = ConvConfig::centered(k).with_stride(stride);

    let (timing, mads_per_element): ((f64, f64), u64) = match op_id {
        "dw1d-fast" => {
            let wts = KernelWeights1D::<T>::random(k, c, 0x17);
            let plan = plan_build(h, w, &cfg, &angles, T::DTYPE.size_bytes(), DEFAULT_CACHE_BUDGET, threads)?;
            let t = time_op(
                || {
                    dwconv1d_fast_fwd(&x, &wts, &angles, &cfg, &plan).unwrap();
                },
                warmup,
                reps,
            )?;
            (t, k as u64)
        }
        "dw1d-ref" => {
            let wts = KernelWeights1D::<T>::random(k, c, 0x17);
            let t = time_op(
                || {
                    dwconv1d_fwd(&x, &wts, &angles, &cfg).unwrap();
                },
                warmup,
                reps,
            )?;
            (t, k as u64)
        }
        "dw1d-bilinear" => {
            let wts = KernelWeights1D::<T>::random(k, c, 0x17);
            let mut bcfg = cfg.clone();
            bcfg.discretization = crate::offsets::Discretization::Bilinear;
            let t = time_op(
                || {
                    dwconv1d_bilinear_fwd(&x, &wts, &angles, &bcfg).unwrap();
                },
                warmup,
                reps,
            )?;
            (t, 4 * k as u64)
        }
        "dw2d" => {
            let wts = KernelWeights2D::<T>::random(k, k, c, 0x17);
            let pad = k / 2;
            let t = time_op(
                || {
                    dwconv2d_standard_fwd(&x, &wts, stride, pad).unwrap();
                },
                warmup,
                reps,
            )?;
            (t, (k * k) as u64)
        }
        "pw" => {
            let wts = PointwiseWeights::<T>::random(c, c, 0x17);
            let t = time_op(
                || {
                    pointwise_fwd(&x, &wts).unwrap();
                },
                warmup,
                reps,
            )?;
            (t, c as u64)
        }
        "dsc1d" => {
            let w_dw = KernelWeights1D::<T>::random(k, c, 0x17);
            let w_pw = PointwiseWeights::<T>::random(c, c, 0x18);
            let t = time_op(
                || {
                    dsc_fwd(&x, &w_dw, &angles, &cfg, &w_pw).unwrap();
                },
                warmup,
                reps,
            )?;
            (t, (k + c) as u64)
        }
        other => {
            return Err(OrikError::InvalidConfig(format!(
                "unknown op {other}; expected dw1d-fast|dw1d-ref|dw1d-bilinear|dw2d|pw|dsc1d"
            )))
        }
    };

    Ok(BenchReport {
        op_id: op_id.to_string(),
        params: params.clone(),
        reps,
        warmup,
        mean_ns: timing.0,
        std_ns: timing.1,
        mads_per_element,
    })
}

/// Runs one benchmark; warmup/reps default to the 10/100 measurement
/// protocol at the CLI.
pub fn run_bench(
    op_id: &str,
    params: &BenchParams,
    warmup: usize,
    reps: usize,
) -> Result<BenchReport> {
    match params.dtype {
        Dtype::F32 => bench_typed::<f32>(op_id, params, warmup, reps),
        Dtype::F64 => bench_typed::<f64>(op_id, params, warmup, reps),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params() -> BenchParams {
        BenchParams {
            n: 1,
            c: 4,
            h: 8,
            w: 8,
            k: 3,
            angle_deg: 45.0,
            dirs: 1,
            stride: 1,
            dtype: Dtype::F32,
            threads: 1,
        }
    }

    #[test]
    fn mean_positive_and_std_nonnegative() {
        let r = run_bench("dw1d-fast", &small_params(), 1, 3).unwrap();
        assert!(r.mean_ns > 0.0);
        assert!(r.std_ns >= 0.0);
        assert_eq!(r.mads_per_element, 3);
    }

    #[test]
    fn zero_reps_rejected() {
        assert!(run_bench("dw1d-fast", &small_params(), 0, 0).is_err());
    }

    #[test]
    fn unknown_op_rejected() {
        assert!(run_bench("warp-drive", &small_params(), 0, 1).is_err());
    }

    #[test]
    fn csv_append_once_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.csv");
        let r = run_bench("dw1d-ref", &small_params(), 0, 1).unwrap();
        r.append_csv(&path).unwrap();
        r.append_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1].starts_with("dw1d-ref,1,4,8,8,3,45,"));
    }
}
