//! Cache-blocked oriented 1D depthwise convolution.
//!
//! The image is cut into vertical bands and row tiles; each task copies its
//! band plus halo once into a contiguous scratch buffer and runs the
//! table-driven offset loop against the scratch, so every input element is
//! read from main memory once per channel block and the per-angle cost is
//! uniform by construction. Per output element the accumulation is k
//! ascending in the tensor dtype, exactly as in the reference, so the
//! forward output is bitwise identical to `reference::dwconv1d_fwd` for
//! every angle, stride, shape and thread count.

use crate::error::{OrikError, Result};
use crate::offsets::{AngleAssignment, ConvConfig, Discretization, OffsetTable};
use crate::reference::{out_size, tables_for_angles, KernelWeights1D};
use crate::scalar::Element;
use crate::tensor::Tensor;

/// Band/tile decomposition with precomputed offset tables.
#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    /// Output columns per band.
    pub band_width: usize,
    /// Output rows per tile.
    pub band_height: usize,
    pub halo_h: usize,
    pub halo_w: usize,
    pub channel_block: usize,
    pub thread_count: usize,
    pub tables: Vec<OffsetTable>,
    pub channel_table: Vec<usize>,
}

impl ExecutionPlan {
    /// Input-space scratch footprint in bytes for one channel block.
    pub fn scratch_bytes(&self, dtype_size: usize) -> usize {
        let rows = (self.band_height - 1) * self.stride + 2 * self.halo_h + 1;
        let cols = (self.band_width - 1) * self.stride + 2 * self.halo_w + 1;
        rows * cols * self.channel_block * dtype_size
    }
}

pub const DEFAULT_CACHE_BUDGET: usize = 256 * 1024;
pub const DEFAULT_CHANNEL_BLOCK: usize = 8;

/// Deterministic plan for (H, W, cfg, angles): halo comes from the actual
/// offset tables, band/tile sizes are shrunk until one channel-blocked
/// scratch tile fits the cache budget.
pub fn plan_build(
    h: usize,
    w: usize,
    cfg: &ConvConfig,
    angles: &AngleAssignment,
    dtype_size: usize,
    cache_budget_bytes: usize,
    thread_count: usize,
) -> Result<ExecutionPlan> {
    cfg.validate()?;
    if cfg.discretization != Discretization::RoundDown {
        return Err(OrikError::InvalidConfig(
            "optimized kernel supports round-down discretization only".into(),
        ));
    }
    if thread_count == 0 {
        return Err(OrikError::InvalidConfig("thread_count must be >= 1".into()));
    }
    let (tables, channel_table) = tables_for_angles(cfg, angles)?;
    let (mut halo_h, mut halo_w) = (0i64, 0i64);
    for t in &tables {
        let (hh, hw) = t.halo();
        halo_h = halo_h.max(hh);
        halo_w = halo_w.max(hw);
    }
    let (halo_h, halo_w) = (halo_h as usize, halo_w as usize);
    let p_out = out_size(h, cfg.stride);
    let q_out = out_size(w, cfg.stride);
    let channel_block = DEFAULT_CHANNEL_BLOCK.min(angles.channels());

    let mut plan = ExecutionPlan {
        h,
        w,
        k: cfg.k,
        stride: cfg.stride,
        band_width: q_out,
        band_height: p_out,
        halo_h,
        halo_w,
        channel_block,
        thread_count,
        tables,
        channel_table,
    };
    while plan.scratch_bytes(dtype_size) > cache_budget_bytes {
        if plan.band_height >= plan.band_width && plan.band_height > 1 {
            plan.band_height = plan.band_height.div_ceil(2);
        } else if plan.band_width > 1 {
            plan.band_width = plan.band_width.div_ceil(2);
        } else {
            return Err(OrikError::InvalidConfig(format!(
                "cache budget {cache_budget_bytes} B cannot hold a minimal {}x{} tile",
                2 * halo_h + 1,
                2 * halo_w + 1
            )));
        }
    }
    Ok(plan)
}

fn check_plan<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    angles: &AngleAssignment,
    cfg: &ConvConfig,
    plan: &ExecutionPlan,
) -> Result<()> {
    if cfg.discretization != Discretization::RoundDown {
        return Err(OrikError::InvalidConfig(
            "optimized kernel supports round-down discretization only".into(),
        ));
    }
    if x.c() != w.c || x.c() != angles.channels() {
        return Err(OrikError::ShapeMismatch(format!(
            "channels disagree: x.C={} w.C={} angles={}",
            x.c(),
            w.c,
            angles.channels()
        )));
    }
    if plan.h != x.h() || plan.w != x.w() || plan.k != cfg.k || plan.stride != cfg.stride {
        return Err(OrikError::InvalidConfig(format!(
            "plan built for (H={}, W={}, K={}, stride={}), got (H={}, W={}, K={}, stride={})",
            plan.h,
            plan.w,
            plan.k,
            plan.stride,
            x.h(),
            x.w(),
            cfg.k,
            cfg.stride
        )));
    }
    if plan.channel_table.len() != x.c() {
        return Err(OrikError::InvalidConfig(
            "plan built for a different channel count".into(),
        ));
    }
    Ok(())
}

struct RowTask<'a, T> {
    batch: usize,
    p0: usize,
    p1: usize,
    out: &'a mut [T],
}

/// Optimized forward; bitwise identical to the reference for the same dtype.
pub fn dwconv1d_fast_fwd<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    angles: &AngleAssignment,
    cfg: &ConvConfig,
    plan: &ExecutionPlan,
) -> Result<Tensor<T>> {
    dwconv1d_fast_fwd_counted(x, w, angles, cfg, plan, &mut 0)
}

pub fn dwconv1d_fast_fwd_counted<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    angles: &AngleAssignment,
    cfg: &ConvConfig,
    plan: &ExecutionPlan,
    mads: &mut u64,
) -> Result<Tensor<T>> {
    check_plan(x, w, angles, cfg, plan)?;
    let (n, h, wd, c) = x.shape();
    let p_out = out_size(h, plan.stride);
    let q_out = out_size(wd, plan.stride);
    let mut y = Tensor::zeros(n, p_out, q_out, c)?;

    // carve the output into disjoint (batch, row-tile) slices
    let mut tasks: Vec<RowTask<T>> = Vec::new();
    {
        let mut rest: &mut [T] = y.data_mut();
        for batch in 0..n {
            let mut p0 = 0;
            while p0 < p_out {
                let p1 = (p0 + plan.band_height).min(p_out);
                let (head, tail) = rest.split_at_mut((p1 - p0) * q_out * c);
                tasks.push(RowTask { batch, p0, p1, out: head });
                rest = tail;
                p0 = p1;
            }
        }
    }

    let counts: Vec<u64> = run_tasks(plan.thread_count, tasks, |task| {
        run_forward_task(x, w, plan, q_out, task)
    });
    *mads += counts.iter().sum::<u64>();
    Ok(y)
}

/// Distributes tasks round-robin over `threads` workers; returns the
/// per-task results in task order so reductions stay deterministic.
fn run_tasks<T, R, F>(threads: usize, tasks: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let n_tasks = tasks.len();
    if threads <= 1 || n_tasks <= 1 {
        return tasks.into_iter().map(f).collect();
    }
    let mut slots: Vec<Option<R>> = (0..n_tasks).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        let mut indexed: Vec<(usize, T)> = tasks.into_iter().enumerate().collect();
        for worker in (0..threads.min(n_tasks)).rev() {
            let mine: Vec<(usize, T)> = {
                let mut own = Vec::new();
                let mut i = 0;
                while i < indexed.len() {
                    if indexed[i].0 % threads == worker {
                        own.push(indexed.swap_remove(i));
                    } else {
                        i += 1;
                    }
                }
                own
            };
            let f = &f;
            handles.push(scope.spawn(move || {
                mine.into_iter().map(|(i, t)| (i, f(t))).collect::<Vec<_>>()
            }));
        }
        for handle in handles {
            for (i, r) in handle.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("task not run")).collect()
}

fn run_forward_task<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    plan: &ExecutionPlan,
    q_out: usize,
    task: RowTask<T>,
) -> u64 {
    let c = x.c();
    let stride = plan.stride;
    let rows = (task.p1 - task.p0 - 1) * stride + 2 * plan.halo_h + 1;
    let mut mads = 0u64;
    let mut q0 = 0;
    while q0 < q_out {
        let q1 = (q0 + plan.band_width).min(q_out);
        let cols = (q1 - q0 - 1) * stride + 2 * plan.halo_w + 1;
        let row_base = (task.p0 * stride) as i64 - plan.halo_h as i64;
        let col_base = (q0 * stride) as i64 - plan.halo_w as i64;
        let mut cb0 = 0;
        while cb0 < c {
            let cbn = plan.channel_block.min(c - cb0);
            // one pass over the band+halo into contiguous scratch
            let mut scratch = vec![T::zero(); rows * cols * cbn];
            for r in 0..rows {
                for col in 0..cols {
                    for cr in 0..cbn {
                        scratch[(r * cols + col) * cbn + cr] = x.get_padded(
                            task.batch,
                            row_base + r as i64,
                            col_base + col as i64,
                            cb0 + cr,
                        );
                    }
                }
            }
            for p in task.p0..task.p1 {
                let row_rel = (p * stride) as i64 - row_base;
                for q in q0..q1 {
                    let col_rel = (q * stride) as i64 - col_base;
                    let out_row = &mut task.out
                        [((p - task.p0) * q_out + q) * c + cb0..][..cbn];
                    for cr in 0..cbn {
                        let table = &plan.tables[plan.channel_table[cb0 + cr]];
                        let mut acc = T::zero();
                        for (k, &(dh, dw)) in table.entries.iter().enumerate() {
                            let idx = (((row_rel + dh) * cols as i64)
                                + (col_rel + dw)) as usize
                                * cbn
                                + cr;
                            acc = acc + scratch[idx] * w.get(k, cb0 + cr);
                        }
                        mads += table.entries.len() as u64;
                        out_row[cr] = acc;
                    }
                }
            }
            cb0 += cbn;
        }
        q0 = q1;
    }
    mads
}

/// Optimized backward. dx is bitwise equal to the reference (per-batch
/// scatter order is identical); dw is merged from per-batch partial
/// accumulators in batch order, so it matches the reference within f64
/// rounding rather than bitwise.
pub fn dwconv1d_fast_bwd<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    angles: &AngleAssignment,
    cfg: &ConvConfig,
    plan: &ExecutionPlan,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, KernelWeights1D<T>)> {
    check_plan(x, w, angles, cfg, plan)?;
    let (n, h, wd, c) = x.shape();
    let p_out = out_size(h, plan.stride);
    let q_out = out_size(wd, plan.stride);
    if dy.shape() != (n, p_out, q_out, c) {
        return Err(OrikError::ShapeMismatch(format!(
            "dy shape {:?} != forward output {:?}",
            dy.shape(),
            (n, p_out, q_out, c)
        )));
    }

    struct BwdTask<'a, T> {
        batch: usize,
        dx: &'a mut [T],
    }

    let mut dx = Tensor::zeros(n, h, wd, c)?;
    let per_batch = h * wd * c;
    let tasks: Vec<BwdTask<T>> = dx
        .data_mut()
        .chunks_mut(per_batch)
        .enumerate()
        .map(|(batch, dx)| BwdTask { batch, dx })
        .collect();

    let partials: Vec<KernelWeights1D<T>> = run_tasks(plan.thread_count, tasks, |task| {
        let mut dw = KernelWeights1D::zeros(w.k, w.c);
        scatter_batch(x, w, plan, dy, task.batch, task.dx, &mut dw);
        dw
    });

    let mut dw = KernelWeights1D::zeros(w.k, w.c);
    for partial in partials {
        for (acc, p) in dw.data_mut().iter_mut().zip(partial.data()) {
            *acc = *acc + *p;
        }
    }
    Ok((dx, dw))
}

fn scatter_batch<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    plan: &ExecutionPlan,
    dy: &Tensor<T>,
    batch: usize,
    dx: &mut [T],
    dw: &mut KernelWeights1D<T>,
) {
    let (_, h, wd, c) = x.shape();
    let (_, p_out, q_out, _) = dy.shape();
    for p in 0..p_out {
        for q in 0..q_out {
            let sp = (p * plan.stride) as i64;
            let sq = (q * plan.stride) as i64;
            for ch in 0..c {
                let g = dy.get(batch, p, q, ch);
                let table = &plan.tables[plan.channel_table[ch]];
                for (k, &(dh, dw_off)) in table.entries.iter().enumerate() {
                    let (ih, iw) = (sp + dh, sq + dw_off);
                    if ih >= 0 && iw >= 0 && ih < h as i64 && iw < wd as i64 {
                        let idx = ((ih as usize * wd) + iw as usize) * c + ch;
                        dx[idx] = dx[idx] + g * w.get(k, ch);
                        let prev = dw.get(k, ch);
                        dw.set(k, ch, prev + g * x.get(batch, ih as usize, iw as usize, ch));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offsets::direction_angles;
    use crate::reference::{dwconv1d_bwd, dwconv1d_fwd};

    fn centered(k: usize, stride: usize) -> ConvConfig {
        ConvConfig::centered(k).with_stride(stride)
    }

    #[test]
    fn plan_single_pixel() {
        let cfg = centered(3, 1);
        let angles = AngleAssignment::uniform(45.0, 4);
        let plan = plan_build(1, 1, &cfg, &angles, 4, DEFAULT_CACHE_BUDGET, 1).unwrap();
        assert_eq!((plan.band_width, plan.band_height), (1, 1));
    }

    #[test]
    fn plan_is_deterministic() {
        let cfg = centered(31, 1);
        let angles = direction_angles(8, 16).unwrap();
        let a = plan_build(56, 56, &cfg, &angles, 4, DEFAULT_CACHE_BUDGET, 4).unwrap();
        let b = plan_build(56, 56, &cfg, &angles, 4, DEFAULT_CACHE_BUDGET, 4).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn plan_satisfies_cache_budget() {
        let cfg = centered(31, 1);
        let angles = direction_angles(8, 16).unwrap();
        let plan = plan_build(56, 56, &cfg, &angles, 4, DEFAULT_CACHE_BUDGET, 1).unwrap();
        assert!(plan.scratch_bytes(4) <= DEFAULT_CACHE_BUDGET);
        assert!(plan.halo_h <= 16 && plan.halo_w <= 16);
    }

    #[test]
    fn plan_impossible_budget() {
        let cfg = centered(31, 1);
        let angles = AngleAssignment::uniform(30.0, 8);
        assert!(plan_build(56, 56, &cfg, &angles, 4, 16, 1).is_err());
    }

    #[test]
    fn forward_matches_reference_bitwise() {
        let cfg = centered(7, 1);
        let angles = direction_angles(4, 8).unwrap();
        let x = Tensor::<f32>::random(2, 12, 12, 8, 3).unwrap();
        let w = KernelWeights1D::random(7, 8, 4);
        let plan = plan_build(12, 12, &cfg, &angles, 4, 4096, 2).unwrap();
        let fast = dwconv1d_fast_fwd(&x, &w, &angles, &cfg, &plan).unwrap();
        let refr = dwconv1d_fwd(&x, &w, &angles, &cfg).unwrap();
        assert_eq!(fast.data(), refr.data());
    }

    #[test]
    fn forward_independent_of_threads_and_tiles() {
        let cfg = centered(15, 2);
        let angles = direction_angles(8, 8).unwrap();
        let x = Tensor::<f32>::random(1, 20, 20, 8, 5).unwrap();
        let w = KernelWeights1D::random(15, 8, 6);
        let tiny = plan_build(20, 20, &cfg, &angles, 4, 16384, 1).unwrap();
        let big = plan_build(20, 20, &cfg, &angles, 4, DEFAULT_CACHE_BUDGET, 8).unwrap();
        let a = dwconv1d_fast_fwd(&x, &w, &angles, &cfg, &tiny).unwrap();
        let b = dwconv1d_fast_fwd(&x, &w, &angles, &cfg, &big).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn backward_zero_dy() {
        let cfg = centered(3, 1);
        let angles = AngleAssignment::uniform(45.0, 2);
        let x = Tensor::<f64>::random(1, 5, 5, 2, 1).unwrap();
        let w = KernelWeights1D::random(3, 2, 2);
        let plan = plan_build(5, 5, &cfg, &angles, 8, DEFAULT_CACHE_BUDGET, 1).unwrap();
        let dy = Tensor::<f64>::zeros(1, 5, 5, 2).unwrap();
        let (dx, dw) = dwconv1d_fast_bwd(&x, &w, &angles, &cfg, &plan, &dy).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(dw.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_dx_bitwise_dw_tolerance() {
        let cfg = centered(7, 1);
        let angles = direction_angles(4, 4).unwrap();
        let x32 = Tensor::<f32>::random(3, 9, 9, 4, 7).unwrap();
        let w32 = KernelWeights1D::<f32>::random(7, 4, 8);
        let dy32 = Tensor::<f32>::random(3, 9, 9, 4, 9).unwrap();
        let plan = plan_build(9, 9, &cfg, &angles, 4, DEFAULT_CACHE_BUDGET, 3).unwrap();
        let (dx_fast, _) = dwconv1d_fast_bwd(&x32, &w32, &angles, &cfg, &plan, &dy32).unwrap();
        let (dx_ref, _) = dwconv1d_bwd(&x32, &w32, &angles, &cfg, &dy32).unwrap();
        assert_eq!(dx_fast.data(), dx_ref.data());

        let x64 = Tensor::<f64>::random(3, 9, 9, 4, 7).unwrap();
        let w64 = KernelWeights1D::<f64>::random(7, 4, 8);
        let dy64 = Tensor::<f64>::random(3, 9, 9, 4, 9).unwrap();
        let (_, dw_fast) = dwconv1d_fast_bwd(&x64, &w64, &angles, &cfg, &plan, &dy64).unwrap();
        let (_, dw_ref) = dwconv1d_bwd(&x64, &w64, &angles, &cfg, &dy64).unwrap();
        assert!(dw_fast.max_abs_diff(&dw_ref) <= 1e-12);
    }

    #[test]
    fn per_element_work_is_linear_in_k() {
        let cfg = centered(31, 1);
        let angles = direction_angles(8, 8).unwrap();
        let x = Tensor::<f32>::random(2, 14, 14, 8, 11).unwrap();
        let w = KernelWeights1D::random(31, 8, 12);
        let plan = plan_build(14, 14, &cfg, &angles, 4, DEFAULT_CACHE_BUDGET, 2).unwrap();
        let mut mads = 0u64;
        dwconv1d_fast_fwd_counted(&x, &w, &angles, &cfg, &plan, &mut mads).unwrap();
        assert_eq!(mads, 31 * 2 * 14 * 14 * 8);
    }
}
