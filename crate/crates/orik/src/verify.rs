//! Deterministic property suites behind the `verify` CLI subcommand.
//!
//! Each check returns its worst measured metric so failures are diagnosable
//! from the report alone. Everything is seeded: identical seed, identical
//! pass/fail and metrics.

use crate::analysis::{downsampling_decomposition_sweep, gaussian_separability_check, GaussianSpec};
use crate::error::{OrikError, Result};
use crate::model::{Init, Network, NetworkConfig, Tape};
use crate::offsets::{direction_angles, AngleAssignment, ConvConfig, Discretization};
use crate::optimized::{dwconv1d_fast_bwd, dwconv1d_fast_fwd, plan_build, DEFAULT_CACHE_BUDGET};
use crate::reference::{
    dsc_fwd, dwconv1d_bilinear_fwd_counted, dwconv1d_bwd, dwconv1d_fwd, dwconv1d_fwd_counted,
    dwconv2d_oriented_fwd, dwconv2d_standard_fwd, out_size, softconv_fwd, softconv_grad_theta,
    KernelWeights1D, KernelWeights2D, PointwiseWeights, SoftConfig,
};
use crate::scalar::Element;
use crate::tensor::{SplitMix64, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    pub pass: bool,
    pub metric: f64,
}

impl CheckResult {
    fn new(suite: &str, name: &str, pass: bool, metric: f64) -> CheckResult {
        CheckResult { suite: suite.into(), name: name.into(), pass, metric }
    }
}

pub const SUITES: [&str; 5] = ["conv", "grad", "decomp", "gauss", "plan"];

/// Runs one named suite ("all" runs every suite) with a deterministic seed.
pub fn run_suite(suite: &str, seed: u64, threads: usize) -> Result<Vec<CheckResult>> {
    match suite {
        "all" => {
            let mut out = Vec::new();
            for s in SUITES {
                out.extend(run_suite(s, seed, threads)?);
            }
            Ok(out)
        }
        "conv" => Ok(suite_conv(seed)),
        "grad" => Ok(suite_grad(seed)),
        "decomp" => Ok(suite_decomp()),
        "gauss" => Ok(suite_gauss(seed)),
        "plan" => Ok(suite_plan(seed, threads)),
        other => Err(OrikError::InvalidConfig(format!(
            "unknown suite {other}; expected all|conv|grad|decomp|gauss|plan"
        ))),
    }
}

/// Independent horizontal 1D convolution: y[p][q][c] = sum_k
/// x[p][q*str + k - pad][c] * w[k][c], k ascending in the tensor dtype.
pub fn horizontal_conv_oracle<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    pad: i64,
    stride: usize,
) -> Tensor<T> {
    let (n, h, wd, c) = x.shape();
    let (p_out, q_out) = (out_size(h, stride), out_size(wd, stride));
    let mut y = Tensor::zeros(n, p_out, q_out, c).unwrap();
    for b in 0..n {
        for p in 0..p_out {
            for q in 0..q_out {
                for ch in 0..c {
                    let mut acc = T::zero();
                    for k in 0..w.k {
                        let col = (q * stride) as i64 + k as i64 - pad;
                        acc = acc + x.get_padded(b, (p * stride) as i64, col, ch) * w.get(k, ch);
                    }
                    y.set(b, p, q, ch, acc);
                }
            }
        }
    }
    y
}

/// Independent vertical 1D convolution matching the 90-degree orientation:
/// tap k reads row p*str - (k - pad).
pub fn vertical_conv_oracle<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    pad: i64,
    stride: usize,
) -> Tensor<T> {
    let (n, h, wd, c) = x.shape();
    let (p_out, q_out) = (out_size(h, stride), out_size(wd, stride));
    let mut y = Tensor::zeros(n, p_out, q_out, c).unwrap();
    for b in 0..n {
        for p in 0..p_out {
            for q in 0..q_out {
                for ch in 0..c {
                    let mut acc = T::zero();
                    for k in 0..w.k {
                        let row = (p * stride) as i64 - (k as i64 - pad);
                        acc = acc + x.get_padded(b, row, (q * stride) as i64, ch) * w.get(k, ch);
                    }
                    y.set(b, p, q, ch, acc);
                }
            }
        }
    }
    y
}

/// Bitwise axis-reduction check over `cases` randomized f32 configs.
pub fn axis_reduction_cases(seed: u64, cases: usize) -> (bool, f64) {
    let mut rng = SplitMix64::new(seed);
    let mut mismatches = 0u64;
    for _ in 0..cases {
        let k = [3usize, 5, 7, 9][(rng.next_u64() % 4) as usize];
        let stride = 1 + (rng.next_u64() % 2) as usize;
        let h = 5 + (rng.next_u64() % 8) as usize;
        let wd = 5 + (rng.next_u64() % 8) as usize;
        let c = 1 + (rng.next_u64() % 4) as usize;
        let x = Tensor::<f32>::random(1, h, wd, c, rng.next_u64()).unwrap();
        let w = KernelWeights1D::<f32>::random(k, c, rng.next_u64());
        let cfg = ConvConfig::centered(k).with_stride(stride);
        let pad = (k / 2) as i64;

        let y0 = dwconv1d_fwd(&x, &w, &AngleAssignment::uniform(0.0, c), &cfg).unwrap();
        if y0.data() != horizontal_conv_oracle(&x, &w, pad, stride).data() {
            mismatches += 1;
        }
        let y90 = dwconv1d_fwd(&x, &w, &AngleAssignment::uniform(90.0, c), &cfg).unwrap();
        if y90.data() != vertical_conv_oracle(&x, &w, pad, stride).data() {
            mismatches += 1;
        }
    }
    (mismatches == 0, mismatches as f64)
}

fn suite_conv(seed: u64) -> Vec<CheckResult> {
    let s = "conv";
    let mut out = Vec::new();

    let (pass, metric) = axis_reduction_cases(seed, 25);
    out.push(CheckResult::new(s, "axis_reduction_bitwise", pass, metric));

    // bilinear collapses to round-down at axis angles, at 4x the MADs
    {
        let k = 7;
        let c = 3;
        let x = Tensor::<f32>::random(1, 9, 9, c, seed ^ 0x10).unwrap();
        let w = KernelWeights1D::<f32>::random(k, c, seed ^ 0x11);
        let mut pass = true;
        let mut mads_ok = true;
        for theta in [0.0, 90.0] {
            let angles = AngleAssignment::uniform(theta, c);
            let hard_cfg = ConvConfig::centered(k);
            let mut soft_cfg = ConvConfig::centered(k);
            soft_cfg.discretization = Discretization::Bilinear;
            let mut hard_mads = 0u64;
            let hard = dwconv1d_fwd_counted(&x, &w, &angles, &hard_cfg, &mut hard_mads).unwrap();
            let mut bil_mads = 0u64;
            let bil =
                dwconv1d_bilinear_fwd_counted(&x, &w, &angles, &soft_cfg, &mut bil_mads).unwrap();
            pass &= hard.data() == bil.data();
            mads_ok &= bil_mads == 4 * hard_mads;
        }
        out.push(CheckResult::new(s, "bilinear_axis_collapse_bitwise", pass, if pass { 0.0 } else { 1.0 }));
        out.push(CheckResult::new(s, "bilinear_mads_4x", mads_ok, if mads_ok { 4.0 } else { 0.0 }));
    }

    // oriented 2D at theta=0 equals the standard conv bitwise; the R=1 slice
    // equals the 1D op bitwise
    {
        let c = 2;
        let x = Tensor::<f32>::random(1, 7, 7, c, seed ^ 0x20).unwrap();
        let w2 = KernelWeights2D::<f32>::random(3, 3, c, seed ^ 0x21);
        let angles0 = AngleAssignment::uniform(0.0, c);
        let a = dwconv2d_oriented_fwd(&x, &w2, &angles0, 1, 1.0, 1.0).unwrap();
        let b = dwconv2d_standard_fwd(&x, &w2, 1, 1).unwrap();
        let pass = a.data() == b.data();
        out.push(CheckResult::new(s, "oriented2d_theta0_bitwise", pass, if pass { 0.0 } else { 1.0 }));

        let k = 5;
        let w1 = KernelWeights1D::<f32>::random(k, c, seed ^ 0x22);
        let mut w_row = KernelWeights2D::<f32>::zeros(1, k, c);
        for tap in 0..k {
            for ch in 0..c {
                w_row.set(0, tap, ch, w1.get(tap, ch));
            }
        }
        let angles = AngleAssignment::uniform(67.5, c);
        let a = dwconv2d_oriented_fwd(&x, &w_row, &angles, 1, 0.0, (k / 2) as f64).unwrap();
        let b = dwconv1d_fwd(&x, &w1, &angles, &ConvConfig::centered(k)).unwrap();
        let pass = a.data() == b.data();
        out.push(CheckResult::new(s, "oriented2d_r1_slice_bitwise", pass, if pass { 0.0 } else { 1.0 }));
    }

    // optimized kernel equals the reference bitwise on a small sweep
    {
        let mut pass = true;
        for &k in &[3usize, 15] {
            for &theta in &[0.0, 22.5, 45.0, 112.5] {
                for &stride in &[1usize, 2] {
                    let c = 8;
                    let cfg = ConvConfig::centered(k).with_stride(stride);
                    let angles = AngleAssignment::uniform(theta, c);
                    let x = Tensor::<f32>::random(1, 14, 14, c, seed ^ k as u64).unwrap();
                    let w = KernelWeights1D::<f32>::random(k, c, seed ^ 0x31);
                    let plan =
                        plan_build(14, 14, &cfg, &angles, 4, DEFAULT_CACHE_BUDGET, 2).unwrap();
                    let fast = dwconv1d_fast_fwd(&x, &w, &angles, &cfg, &plan).unwrap();
                    let refr = dwconv1d_fwd(&x, &w, &angles, &cfg).unwrap();
                    pass &= fast.data() == refr.data();
                }
            }
        }
        out.push(CheckResult::new(s, "optimized_bitwise_small_sweep", pass, if pass { 0.0 } else { 1.0 }));
    }

    // 180-degree flip: theta+180 equals theta with the kernel index reversed
    {
        let k = 7;
        let c = 2;
        let x = Tensor::<f64>::random(1, 9, 9, c, seed ^ 0x40).unwrap();
        let w = KernelWeights1D::<f64>::random(k, c, seed ^ 0x41);
        let mut w_rev = KernelWeights1D::<f64>::zeros(k, c);
        for tap in 0..k {
            for ch in 0..c {
                w_rev.set(tap, ch, w.get(k - 1 - tap, ch));
            }
        }
        let cfg = ConvConfig::centered(k);
        let theta = 33.0;
        let a = dwconv1d_fwd(&x, &w, &AngleAssignment::uniform(theta + 180.0, c), &cfg).unwrap();
        let b = dwconv1d_fwd(&x, &w_rev, &AngleAssignment::uniform(theta, c), &cfg).unwrap();
        let err = a.max_abs_diff(&b);
        out.push(CheckResult::new(s, "flip_180", err <= 1e-12, err));
    }

    // linearity in x
    {
        let k = 5;
        let c = 2;
        let cfg = ConvConfig::centered(k);
        let angles = direction_angles(2, c).unwrap();
        let w = KernelWeights1D::<f64>::random(k, c, seed ^ 0x50);
        let x1 = Tensor::<f64>::random(1, 8, 8, c, seed ^ 0x51).unwrap();
        let x2 = Tensor::<f64>::random(1, 8, 8, c, seed ^ 0x52).unwrap();
        let alpha = 0.37;
        let mut mix = x1.clone();
        for (m, b) in mix.data_mut().iter_mut().zip(x2.data()) {
            *m = *m * alpha + *b;
        }
        let lhs = dwconv1d_fwd(&mix, &w, &angles, &cfg).unwrap();
        let y1 = dwconv1d_fwd(&x1, &w, &angles, &cfg).unwrap();
        let y2 = dwconv1d_fwd(&x2, &w, &angles, &cfg).unwrap();
        let mut rhs = y1.clone();
        for (r, b) in rhs.data_mut().iter_mut().zip(y2.data()) {
            *r = *r * alpha + *b;
        }
        let err = lhs.max_abs_diff(&rhs);
        out.push(CheckResult::new(s, "linearity_in_x", err <= 1e-12, err));
    }

    // DSC with the identity pointwise equals the depthwise alone
    {
        let k = 5;
        let c = 3;
        let cfg = ConvConfig::centered(k);
        let angles = AngleAssignment::uniform(45.0, c);
        let x = Tensor::<f32>::random(1, 8, 8, c, seed ^ 0x60).unwrap();
        let w = KernelWeights1D::<f32>::random(k, c, seed ^ 0x61);
        let a = dsc_fwd(&x, &w, &angles, &cfg, &PointwiseWeights::identity(c)).unwrap();
        let b = dwconv1d_fwd(&x, &w, &angles, &cfg).unwrap();
        let pass = a.data() == b.data();
        out.push(CheckResult::new(s, "dsc_identity_pointwise", pass, if pass { 0.0 } else { 1.0 }));
    }

    // soft -> hard limit at axis angles
    {
        let k = 5;
        let c = 1;
        let x = Tensor::<f64>::random(1, 9, 9, c, seed ^ 0x70).unwrap();
        let w = KernelWeights1D::<f64>::random(k, c, seed ^ 0x71);
        let mut worst = 0.0f64;
        for theta in [0.0, 90.0] {
            let soft = SoftConfig {
                theta_deg: theta,
                sigma: 1e-3,
                radius: 3.0,
                k,
                pad: (k / 2) as f64,
                stride: 1,
            };
            let ys = softconv_fwd(&x, &w, &soft).unwrap();
            let yh =
                dwconv1d_fwd(&x, &w, &AngleAssignment::uniform(theta, c), &ConvConfig::centered(k))
                    .unwrap();
            worst = worst.max(ys.max_abs_diff(&yh));
        }
        out.push(CheckResult::new(s, "soft_hard_limit", worst <= 1e-9, worst));
    }

    out
}

fn dot<T: Element>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.to_f64().unwrap() * y.to_f64().unwrap())
        .sum()
}

/// Worst relative error of (dx, dw) against central finite differences over
/// `cases` random f64 configurations.
pub fn bwd_fd_cases(seed: u64, cases: usize) -> f64 {
    let mut rng = SplitMix64::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let k = [3usize, 5, 7][(rng.next_u64() % 3) as usize];
        let stride = 1 + (rng.next_u64() % 2) as usize;
        let c = 2 + (rng.next_u64() % 3) as usize;
        let h = 6 + (rng.next_u64() % 4) as usize;
        let theta = (rng.next_u64() % 8) as f64 * 22.5;
        let cfg = ConvConfig::centered(k).with_stride(stride);
        let angles = AngleAssignment::uniform(theta, c);
        let x = Tensor::<f64>::random(1, h, h, c, rng.next_u64()).unwrap();
        let w = KernelWeights1D::<f64>::random(k, c, rng.next_u64());
        let dy = Tensor::<f64>::random(1, out_size(h, stride), out_size(h, stride), c, rng.next_u64())
            .unwrap();
        let vx = Tensor::<f64>::random(1, h, h, c, rng.next_u64()).unwrap();
        let vw = KernelWeights1D::<f64>::random(k, c, rng.next_u64());

        let (dx, dw) = dwconv1d_bwd(&x, &w, &angles, &cfg, &dy).unwrap();
        let analytic = dot(dx.data(), vx.data()) + dot(dw.data(), vw.data());

        let eps = 1e-6;
        let loss = |sign: f64| -> f64 {
            let mut xp = x.clone();
            for (a, v) in xp.data_mut().iter_mut().zip(vx.data()) {
                *a += sign * eps * v;
            }
            let mut wp = w.clone();
            for (a, v) in wp.data_mut().iter_mut().zip(vw.data()) {
                *a += sign * eps * v;
            }
            let y = dwconv1d_fwd(&xp, &wp, &angles, &cfg).unwrap();
            dot(y.data(), dy.data())
        };
        let numeric = (loss(1.0) - loss(-1.0)) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    worst
}

/// Worst relative error of softconv_grad_theta against central finite
/// differences over `cases` random configurations.
pub fn soft_grad_fd_cases(seed: u64, cases: usize) -> f64 {
    let mut rng = SplitMix64::new(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let k = [3usize, 5][(rng.next_u64() % 2) as usize];
        let c = 1 + (rng.next_u64() % 2) as usize;
        let h = 7 + (rng.next_u64() % 3) as usize;
        // keep clear of axis angles where the snapped trig is non-smooth
        let theta = 10.0 + (rng.next_u64() % 70) as f64 + case as f64 * 0.1;
        let soft = SoftConfig {
            theta_deg: theta,
            sigma: 0.8,
            radius: 3.0,
            k,
            pad: (k / 2) as f64,
            stride: 1,
        };
        let x = Tensor::<f64>::random(1, h, h, c, rng.next_u64()).unwrap();
        let w = KernelWeights1D::<f64>::random(k, c, rng.next_u64());
        let dy = Tensor::<f64>::random(1, h, h, c, rng.next_u64()).unwrap();

        let analytic = softconv_grad_theta(&x, &w, &soft, &dy).unwrap();
        let eps_rad = 1e-5f64;
        let eps_deg = eps_rad.to_degrees();
        let loss = |t: f64| -> f64 {
            let s = SoftConfig { theta_deg: t, ..soft.clone() };
            let y = softconv_fwd(&x, &w, &s).unwrap();
            dot(y.data(), dy.data())
        };
        let numeric = (loss(theta + eps_deg) - loss(theta - eps_deg)) / (2.0 * eps_rad);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-9);
        worst = worst.max(rel);
    }
    worst
}

/// Worst relative error of the tape gradient of a 1-block network against
/// central finite differences over `cases` random f64 cases.
pub fn network_fd_cases(seed: u64, cases: usize) -> f64 {
    let mut rng = SplitMix64::new(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let cfg = NetworkConfig {
            c0: 4,
            channels: [4, 4, 4, 4],
            blocks: [1, 0, 0, 0],
            k: [3, 3, 3, 3],
            d: 2,
            layerwise_shift_deg: 90.0,
            block_kind: match case % 4 {
                0 => crate::model::BlockKind::TwoD,
                1 => crate::model::BlockKind::OneD,
                2 => crate::model::BlockKind::OneDPlusPlus,
                _ => crate::model::BlockKind::TwoDPlusPlus,
            },
            stem_kind: if case % 2 == 0 {
                crate::model::StemKind::TwoD
            } else {
                crate::model::StemKind::Depthwise1D
            },
        };
        let net = Network::<f64>::build(&cfg, 2, Init::Random(rng.next_u64())).unwrap();
        let x = Tensor::<f64>::random(1, 32, 32, 2, rng.next_u64()).unwrap();
        let mut tape = Tape::new();
        let y = net.forward(&x, Some(&mut tape)).unwrap();
        let (n, p, q, c) = y.shape();
        let dy = Tensor::<f64>::random(n, p, q, c, rng.next_u64()).unwrap();
        let dx = net.grad_input(&mut tape, &dy);
        let vx = Tensor::<f64>::random(1, 32, 32, 2, rng.next_u64()).unwrap();
        let analytic = dot(dx.data(), vx.data());

        let eps = 1e-6;
        let loss = |sign: f64| -> f64 {
            let mut xp = x.clone();
            for (a, v) in xp.data_mut().iter_mut().zip(vx.data()) {
                *a += sign * eps * v;
            }
            let y = net.forward(&xp, None).unwrap();
            dot(y.data(), dy.data())
        };
        let numeric = (loss(1.0) - loss(-1.0)) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    worst
}

fn suite_grad(seed: u64) -> Vec<CheckResult> {
    let s = "grad";
    let mut out = Vec::new();

    let worst = bwd_fd_cases(seed, 10);
    out.push(CheckResult::new(s, "dwconv1d_bwd_fd", worst <= 1e-5, worst));

    // adjoint dot test: <dy, fwd(x)> == <bwd_x(dy), x> + <bwd_w(dy), w>
    {
        let k = 7;
        let c = 4;
        let cfg = ConvConfig::centered(k).with_stride(2);
        let angles = direction_angles(4, c).unwrap();
        let x = Tensor::<f64>::random(2, 9, 9, c, seed ^ 0x80).unwrap();
        let w = KernelWeights1D::<f64>::random(k, c, seed ^ 0x81);
        let y = dwconv1d_fwd(&x, &w, &angles, &cfg).unwrap();
        let (n, p, q, _) = y.shape();
        let dy = Tensor::<f64>::random(n, p, q, c, seed ^ 0x82).unwrap();
        let (dx, dw) = dwconv1d_bwd(&x, &w, &angles, &cfg, &dy).unwrap();
        let lhs = dot(y.data(), dy.data());
        // fwd is linear in x with w fixed, so <dy, fwd(x)> = <dx, x>; and
        // linear in w with x fixed, so it also equals <dw, w>
        let rel_x = (lhs - dot(dx.data(), x.data())).abs() / lhs.abs().max(1e-12);
        let rel_w = (lhs - dot(dw.data(), w.data())).abs() / lhs.abs().max(1e-12);
        let worst = rel_x.max(rel_w);
        out.push(CheckResult::new(s, "adjoint_dot_test", worst <= 1e-12, worst));
    }

    let worst = soft_grad_fd_cases(seed, 8);
    out.push(CheckResult::new(s, "softconv_grad_theta_fd", worst <= 1e-4, worst));

    let worst = network_fd_cases(seed, 4);
    out.push(CheckResult::new(s, "network_grad_input_fd", worst <= 1e-5, worst));

    // optimized backward agrees with the reference
    {
        let k = 7;
        let c = 4;
        let cfg = ConvConfig::centered(k);
        let angles = direction_angles(4, c).unwrap();
        let x = Tensor::<f32>::random(2, 10, 10, c, seed ^ 0x90).unwrap();
        let w = KernelWeights1D::<f32>::random(k, c, seed ^ 0x91);
        let dy = Tensor::<f32>::random(2, 10, 10, c, seed ^ 0x92).unwrap();
        let plan = plan_build(10, 10, &cfg, &angles, 4, DEFAULT_CACHE_BUDGET, 2).unwrap();
        let (dx_fast, _) = dwconv1d_fast_bwd(&x, &w, &angles, &cfg, &plan, &dy).unwrap();
        let (dx_ref, _) = dwconv1d_bwd(&x, &w, &angles, &cfg, &dy).unwrap();
        let pass = dx_fast.data() == dx_ref.data();
        out.push(CheckResult::new(s, "optimized_bwd_dx_bitwise", pass, if pass { 0.0 } else { 1.0 }));
    }

    out
}

fn suite_decomp() -> Vec<CheckResult> {
    let s = "decomp";
    let worst64 = downsampling_decomposition_sweep::<f64>(10, 10, 3, 10).unwrap();
    let worst32 = downsampling_decomposition_sweep::<f32>(10, 10, 3, 10).unwrap();
    vec![
        CheckResult::new(s, "downsampling_decomposition_f64", worst64 <= 1e-12, worst64),
        CheckResult::new(s, "downsampling_decomposition_f32", worst32 <= 1e-6, worst32),
    ]
}

fn suite_gauss(seed: u64) -> Vec<CheckResult> {
    let s = "gauss";
    let x = Tensor::<f64>::random(1, 16, 16, 2, seed ^ 0xA0).unwrap();
    let mut worst = 0.0f64;
    for &sigma in &[0.5, 1.0, 2.0] {
        for &k in &[5usize, 7, 9] {
            let spec = GaussianSpec { sigma1: sigma, sigma2: sigma, k };
            worst = worst.max(gaussian_separability_check(&spec, &x).unwrap());
        }
    }
    vec![CheckResult::new(s, "gaussian_separability", worst <= 1e-12, worst)]
}

fn suite_plan(seed: u64, threads: usize) -> Vec<CheckResult> {
    let s = "plan";
    let mut out = Vec::new();
    let cfg = ConvConfig::centered(31);
    let angles = direction_angles(8, 16).unwrap();

    let a = plan_build(56, 56, &cfg, &angles, 4, DEFAULT_CACHE_BUDGET, threads).unwrap();
    let b = plan_build(56, 56, &cfg, &angles, 4, DEFAULT_CACHE_BUDGET, threads).unwrap();
    let deterministic = format!("{a:?}") == format!("{b:?}");
    out.push(CheckResult::new(s, "plan_deterministic", deterministic, if deterministic { 0.0 } else { 1.0 }));

    let fits = a.scratch_bytes(4) <= DEFAULT_CACHE_BUDGET;
    out.push(CheckResult::new(s, "plan_cache_budget", fits, a.scratch_bytes(4) as f64));

    let impossible = plan_build(56, 56, &cfg, &angles, 4, 16, threads).is_err();
    out.push(CheckResult::new(s, "plan_impossible_budget_rejected", impossible, if impossible { 0.0 } else { 1.0 }));

    // thread count must not change a single bit
    {
        let c = 16;
        let x = Tensor::<f32>::random(2, 56, 56, c, seed ^ 0xB0).unwrap();
        let w = KernelWeights1D::<f32>::random(31, c, seed ^ 0xB1);
        let p1 = plan_build(56, 56, &cfg, &angles, 4, DEFAULT_CACHE_BUDGET, 1).unwrap();
        let p8 = plan_build(56, 56, &cfg, &angles, 4, DEFAULT_CACHE_BUDGET, 8).unwrap();
        let y1 = dwconv1d_fast_fwd(&x, &w, &angles, &cfg, &p1).unwrap();
        let y8 = dwconv1d_fast_fwd(&x, &w, &angles, &cfg, &p8).unwrap();
        let pass = y1.data() == y8.data();
        out.push(CheckResult::new(s, "thread_count_independent", pass, if pass { 0.0 } else { 1.0 }));
    }

    out
}
