//! Acceptance gate: one test per criterion, each printing a pass/fail line
//! with its metric. Tolerances are pinned here and must not be loosened.

use std::collections::BTreeSet;
use std::time::Instant;

use orik::analysis::{
    downsampling_decomposition_sweep, erf_map_layers, gaussian_separability_check, mad_count,
    GaussianSpec,
};
use orik::bench::time_op;
use orik::model::{BlockKind, Init, Layer, Network, NetworkConfig, StemKind};
use orik::offsets::{stage_kernel_caps, AngleAssignment, ConvConfig};
use orik::optimized::{dwconv1d_fast_fwd, plan_build, DEFAULT_CACHE_BUDGET};
use orik::reference::{
    dwconv1d_fwd, dwconv2d_standard_fwd, KernelWeights1D, KernelWeights2D,
};
use orik::tensor::{SplitMix64, Tensor};
use orik::verify::{axis_reduction_cases, bwd_fd_cases, network_fd_cases, soft_grad_fd_cases};

fn report(name: &str, pass: bool, metric: f64) {
    println!("[{}] {name} metric={metric:.3e}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name} failed with metric {metric:.6e}");
}

fn max_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Criterion 1: Oriented conv at 0/90 degrees bitwise-equals independent axis oracles
/// over 100 random f32 configs, in under a minute.
#[test]
fn criterion_01_axis_reduction_oracle() {
    let start = Instant::now();
    let (pass, worst) = axis_reduction_cases(0xA11CE, 100);
    let elapsed = start.elapsed().as_secs_f64();
    report("axis-reduction-oracle", pass && worst == 0.0 && elapsed < 60.0, worst);
    println!("       ran in {elapsed:.1}s (budget 60s)");
}

/// Criterion 2: Tiled multithreaded forward bitwise-equals the reference over the full
/// kernel/angle/size/stride grid at 1 and max threads, in under 5 minutes.
#[test]
fn criterion_02_optimized_equivalence() {
    let start = Instant::now();
    let (n, c) = (2usize, 16usize);
    let mut worst = 0.0f64;
    let mut configs = 0u32;
    for &k in &[3usize, 7, 15, 31, 63] {
        for a in 0..8 {
            let theta = a as f64 * 22.5;
            let angles = AngleAssignment::uniform(theta, c);
            for &hw in &[14usize, 28, 56] {
                for &stride in &[1usize, 2] {
                    let cfg = ConvConfig::centered(k).with_stride(stride);
                    let x = Tensor::<f32>::random(n, hw, hw, c, 77 + configs as u64).unwrap();
                    let w = KernelWeights1D::<f32>::random(k, c, 178 + configs as u64);
                    let want = dwconv1d_fwd(&x, &w, &angles, &cfg).unwrap();
                    for threads in [1, max_threads()] {
                        let plan = plan_build(
                            hw, hw, &cfg, &angles, 4, DEFAULT_CACHE_BUDGET, threads,
                        )
                        .unwrap();
                        let got = dwconv1d_fast_fwd(&x, &w, &angles, &cfg, &plan).unwrap();
                        worst = worst.max(got.max_abs_diff(&want));
                    }
                    configs += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report("optimized-equivalence", worst == 0.0 && elapsed < 300.0, worst);
    println!("       {configs} configs x 2 thread counts in {elapsed:.1}s (budget 300s)");
}

/// Criterion 3: Analytic gradients match central finite differences in f64: conv and
/// network input gradients to rel 1e-5, the soft angle gradient to 1e-4.
#[test]
fn criterion_03_gradient_checks() {
    let conv_worst = bwd_fd_cases(0x912AD, 50);
    let net_worst = network_fd_cases(0x9E7AD, 8);
    let soft_worst = soft_grad_fd_cases(0x50F7, 20);
    report("gradient-conv-bwd", conv_worst <= 1e-5, conv_worst);
    report("gradient-network-input", net_worst <= 1e-5, net_worst);
    report("gradient-soft-theta", soft_worst <= 1e-4, soft_worst);
}

/// Criterion 4: Closed-form MAD ratios: 7x7 vs 1x31 depthwise = 1.58, separable
/// 7x7+C' vs 1x31+C' at C'=512 = 1.03, bilinear = 4x round-down exactly.
#[test]
fn criterion_04_mad_accounting() {
    let dw2d7 = mad_count("dw2d", 7, None, 1).unwrap().per_element_mads as f64;
    let dw1d31 = mad_count("dw1d", 31, None, 1).unwrap().per_element_mads as f64;
    let r1 = dw2d7 / dw1d31;
    report("mad-ratio-depthwise", (r1 - 1.58).abs() <= 0.005, r1);

    let dsc2d = mad_count("dsc2d", 7, Some(512), 1).unwrap().per_element_mads as f64;
    let dsc1d = mad_count("dsc1d", 31, Some(512), 1).unwrap().per_element_mads as f64;
    let r2 = dsc2d / dsc1d;
    report("mad-ratio-separable", (r2 - 1.03).abs() <= 0.005, r2);

    let bil = mad_count("dw1d-bilinear", 31, None, 1).unwrap().per_element_mads as f64;
    let r3 = bil / dw1d31;
    report("mad-ratio-bilinear", r3 == 4.0, r3);
}

fn fast_runtime_ns(theta: f64, warmup: usize, reps: usize) -> f64 {
    let (n, c, hw, k) = (4usize, 64usize, 56usize, 31usize);
    let cfg = ConvConfig::centered(k);
    let angles = AngleAssignment::uniform(theta, c);
    let plan =
        plan_build(hw, hw, &cfg, &angles, 4, DEFAULT_CACHE_BUDGET, max_threads()).unwrap();
    let x = Tensor::<f32>::random(n, hw, hw, c, 9).unwrap();
    let w = KernelWeights1D::<f32>::random(k, c, 10);
    let (mean_ns, _) = time_op(
        || {
            dwconv1d_fast_fwd(&x, &w, &angles, &cfg, &plan).unwrap();
        },
        warmup,
        reps,
    )
    .unwrap();
    mean_ns
}

/// Criterion 5: Runtime of the fast path is angle-uniform: max/min over the 8 angles
/// at K=31, 56x56, N=4, C=64 stays within 1.25x. Hardware dependent.
#[test]
fn criterion_05_angle_uniform_runtime() {
    let times: Vec<f64> =
        (0..8).map(|a| fast_runtime_ns(a as f64 * 22.5, 10, 100)).collect();
    let max = times.iter().cloned().fold(f64::MIN, f64::max);
    let min = times.iter().cloned().fold(f64::MAX, f64::min);
    let ratio = max / min;
    report("angle-uniform-runtime", ratio <= 1.25, ratio);
}

/// Criterion 6: Linear-vs-quadratic cost: fast 1x31 beats the standard 31x31 depthwise
/// by at least 5x on the same shapes. Directional, hardware dependent.
#[test]
fn criterion_06_linear_vs_quadratic_speed() {
    let (n, c, hw, k) = (4usize, 64usize, 56usize, 31usize);
    let x = Tensor::<f32>::random(n, hw, hw, c, 11).unwrap();
    let w2d = KernelWeights2D::<f32>::random(k, k, c, 12);
    let (t2d, _) = time_op(
        || {
            dwconv2d_standard_fwd(&x, &w2d, 1, k / 2).unwrap();
        },
        1,
        3,
    )
    .unwrap();
    let t1d = fast_runtime_ns(45.0, 1, 3);
    let speedup = t2d / t1d;
    report("linear-vs-quadratic-speed", speedup >= 5.0, speedup);
}

/// Criterion 7: A 2x2 stride-2 depthwise conv equals the sum of the diagonal and
/// anti-diagonal oriented pairs, to 1e-12 in f64, over 10 seeds.
#[test]
fn criterion_07_downsampling_decomposition() {
    let worst = downsampling_decomposition_sweep::<f64>(12, 14, 3, 10).unwrap();
    report("downsampling-decomposition", worst <= 1e-12, worst);
}

/// Criterion 8: Horizontal-then-vertical 1D Gaussians reproduce the outer-product 2D
/// Gaussian to 1e-12 in f64 across the sigma/K grid.
#[test]
fn criterion_08_gaussian_separability() {
    let mut worst = 0.0f64;
    for &sigma in &[0.5f64, 1.0, 2.0] {
        for &k in &[5usize, 7, 9] {
            let spec = GaussianSpec { sigma1: sigma, sigma2: sigma, k };
            let x = Tensor::<f64>::random(1, 13, 15, 2, 31 + k as u64).unwrap();
            worst = worst.max(gaussian_separability_check(&spec, &x).unwrap());
        }
    }
    report("gaussian-separability", worst <= 1e-12, worst);
}

/// Criterion 9: General separable 2D: vertical(u) after horizontal(v) equals the 2D
/// conv with w[r][s] = u[K-1-r] v[s] (the 90-degree pass runs taps in
/// reversed row order), to abs 1e-12 in f64, over 20 random cases.
#[test]
fn criterion_09_separable_2d_equivalence() {
    let mut rng = SplitMix64::new(0x5E9A);
    let mut worst = 0.0f64;
    for case in 0..20u64 {
        let k = [3usize, 5, 7][(rng.next_u64() % 3) as usize];
        let c = 1 + (rng.next_u64() % 3) as usize;
        let h = 9 + (rng.next_u64() % 5) as usize;
        let x = Tensor::<f64>::random(1, h, h + 2, c, rng.next_u64()).unwrap();
        let v = KernelWeights1D::<f64>::random(k, c, rng.next_u64());
        let u = KernelWeights1D::<f64>::random(k, c, rng.next_u64());
        let cfg = ConvConfig::centered(k);
        let mid = dwconv1d_fwd(&x, &v, &AngleAssignment::uniform(0.0, c), &cfg).unwrap();
        let got = dwconv1d_fwd(&mid, &u, &AngleAssignment::uniform(90.0, c), &cfg).unwrap();

        let mut w2d = KernelWeights2D::<f64>::zeros(k, k, c);
        for ch in 0..c {
            for r in 0..k {
                for s in 0..k {
                    w2d.set(r, s, ch, u.get(k - 1 - r, ch) * v.get(s, ch));
                }
            }
        }
        let want = dwconv2d_standard_fwd(&x, &w2d, 1, k / 2).unwrap();
        worst = worst.max(got.max_abs_diff(&want));
        let _ = case;
    }
    report("separable-2d-equivalence", worst <= 1e-12, worst);
}

/// Criterion 10: Receptive-field structure: a single oriented layer's support is
/// exactly its offset set; stacking a 0-degree and a 90-degree layer gives a
/// K x K rectangle.
#[test]
fn criterion_10_erf_structure() {
    let (k, c, size) = (7usize, 2usize, 20usize);
    let cfg = ConvConfig::centered(k);
    let taps = vec![1.0f64; k];
    let center = (size / 2) as i64;

    let layer = Layer::DwConv1d {
        w: KernelWeights1D::from_taps(&taps, c),
        angles: AngleAssignment::uniform(45.0, c),
        cfg: cfg.clone(),
    };
    let map = erf_map_layers(std::slice::from_ref(&layer), c, size, 1, 3).unwrap();
    let got: BTreeSet<(usize, usize)> = map.support().into_iter().collect();
    let want: BTreeSet<(usize, usize)> = cfg
        .table_for_angle(45.0)
        .unwrap()
        .entries
        .iter()
        .map(|&(dh, dw)| ((center + dh) as usize, (center + dw) as usize))
        .collect();
    report("erf-single-layer-support", got == want, got.len() as f64);

    let layers = vec![
        Layer::DwConv1d {
            w: KernelWeights1D::from_taps(&taps, c),
            angles: AngleAssignment::uniform(0.0, c),
            cfg: cfg.clone(),
        },
        Layer::DwConv1d {
            w: KernelWeights1D::from_taps(&taps, c),
            angles: AngleAssignment::uniform(90.0, c),
            cfg: cfg.clone(),
        },
    ];
    let map = erf_map_layers(&layers, c, size, 1, 4).unwrap();
    let got: BTreeSet<(usize, usize)> = map.support().into_iter().collect();
    let pad = (k / 2) as i64;
    let mut want = BTreeSet::new();
    for dh in -pad..=pad {
        for dw in -pad..=pad {
            want.insert(((center + dh) as usize, (center + dw) as usize));
        }
    }
    report("erf-two-layer-rectangle", got == want, got.len() as f64);
}

/// Criterion 11: The Tiny geometry (C0=64, channels 96/192/384/768, blocks 3/3/9/3)
/// maps a 64x64 input to 16/8/4/2-pixel stage outputs for every block kind,
/// with per-stage kernels capped at [31, 31, 27, 15].
#[test]
fn criterion_11_model_shapes() {
    assert_eq!(stage_kernel_caps([31, 31, 31, 31]), [31, 31, 27, 15]);
    assert_eq!(stage_kernel_caps([63, 33, 31, 31]), [31, 31, 27, 15]);

    let kinds = [BlockKind::TwoD, BlockKind::OneD, BlockKind::OneDPlusPlus, BlockKind::TwoDPlusPlus];
    for kind in kinds {
        let cfg = NetworkConfig::tiny(kind, StemKind::TwoD);
        let net = Network::<f32>::build(&cfg, 3, Init::Random(5)).unwrap();
        let x = Tensor::<f32>::random(1, 64, 64, 3, 6).unwrap();
        let (_, shapes) = net.forward_stages(&x, None).unwrap();
        let want = [(1, 16, 16, 96), (1, 8, 8, 192), (1, 4, 4, 384), (1, 2, 2, 768)];
        assert_eq!(shapes.as_slice(), want, "stage shapes for {kind:?}");
    }
    report("model-shapes-tiny", true, 4.0);
}
