//! Naive, obviously-correct implementations of every convolution variant.
//!
//! These are the determinism and correctness oracles: single-threaded, with
//! a fixed accumulation order (k ascending, (r,s) lexicographic) carried out
//! in the tensor dtype. The optimized kernels promise bitwise equality
//! against the forward paths defined here.

use crate::error::{OrikError, Result};
use crate::offsets::{
    snapped_sin_cos, AngleAssignment, ConvConfig, Discretization, OffsetTable,
};
use crate::scalar::Element;
use crate::tensor::Tensor;

/// K x C depthwise weights, channels fastest (matching NHWC).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights1D<T: Element> {
    pub k: usize,
    pub c: usize,
    data: Vec<T>,
}

impl<T: Element> KernelWeights1D<T> {
    pub fn from_data(k: usize, c: usize, data: Vec<T>) -> Result<KernelWeights1D<T>> {
        if data.len() != k * c {
            return Err(OrikError::InvalidShape(format!(
                "weight length {} != K*C = {}",
                data.len(),
                k * c
            )));
        }
        Ok(KernelWeights1D { k, c, data })
    }

    pub fn zeros(k: usize, c: usize) -> KernelWeights1D<T> {
        KernelWeights1D { k, c, data: vec![T::zero(); k * c] }
    }

    pub fn random(k: usize, c: usize, seed: u64) -> KernelWeights1D<T> {
        let mut rng = crate::tensor::SplitMix64::new(seed);
        let data = (0..k * c)
            .map(|_| T::from_f64_exact(rng.next_signed()))
            .collect();
        KernelWeights1D { k, c, data }
    }

    /// Same per-tap value replicated over all channels.
    pub fn from_taps(taps: &[T], c: usize) -> KernelWeights1D<T> {
        let mut data = Vec::with_capacity(taps.len() * c);
        for &t in taps {
            data.extend(std::iter::repeat_n(t, c));
        }
        KernelWeights1D { k: taps.len(), c, data }
    }

    /// Delta kernel: 1 at tap == center, 0 elsewhere.
    pub fn delta(k: usize, center: usize, c: usize) -> KernelWeights1D<T> {
        let mut w = Self::zeros(k, c);
        for ch in 0..c {
            w.set(center, ch, T::one());
        }
        w
    }

    #[inline]
    pub fn get(&self, k: usize, c: usize) -> T {
        self.data[k * self.c + c]
    }

    #[inline]
    pub fn set(&mut self, k: usize, c: usize, v: T) {
        self.data[k * self.c + c] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn max_abs_diff(&self, other: &KernelWeights1D<T>) -> f64 {
        assert_eq!((self.k, self.c), (other.k, other.c));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs().to_f64().unwrap())
            .fold(0.0, f64::max)
    }
}

/// R x S x C depthwise weights, channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights2D<T: Element> {
    pub r: usize,
    pub s: usize,
    pub c: usize,
    data: Vec<T>,
}

impl<T: Element> KernelWeights2D<T> {
    pub fn from_data(r: usize, s: usize, c: usize, data: Vec<T>) -> Result<KernelWeights2D<T>> {
        if data.len() != r * s * c {
            return Err(OrikError::InvalidShape(format!(
                "weight length {} != R*S*C = {}",
                data.len(),
                r * s * c
            )));
        }
        Ok(KernelWeights2D { r, s, c, data })
    }

    pub fn zeros(r: usize, s: usize, c: usize) -> KernelWeights2D<T> {
        KernelWeights2D { r, s, c, data: vec![T::zero(); r * s * c] }
    }

    pub fn random(r: usize, s: usize, c: usize, seed: u64) -> KernelWeights2D<T> {
        let mut rng = crate::tensor::SplitMix64::new(seed);
        let data = (0..r * s * c)
            .map(|_| T::from_f64_exact(rng.next_signed()))
            .collect();
        KernelWeights2D { r, s, c, data }
    }

    #[inline]
    pub fn get(&self, r: usize, s: usize, c: usize) -> T {
        self.data[(r * self.s + s) * self.c + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, s: usize, c: usize, v: T) {
        self.data[(r * self.s + s) * self.c + c] = v;
    }
}

/// C_in x C_out pointwise (1x1) weights, output channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseWeights<T: Element> {
    pub c_in: usize,
    pub c_out: usize,
    data: Vec<T>,
}

impl<T: Element> PointwiseWeights<T> {
    pub fn from_data(c_in: usize, c_out: usize, data: Vec<T>) -> Result<PointwiseWeights<T>> {
        if data.len() != c_in * c_out {
            return Err(OrikError::InvalidShape(format!(
                "weight length {} != C_in*C_out = {}",
                data.len(),
                c_in * c_out
            )));
        }
        Ok(PointwiseWeights { c_in, c_out, data })
    }

    pub fn zeros(c_in: usize, c_out: usize) -> PointwiseWeights<T> {
        PointwiseWeights { c_in, c_out, data: vec![T::zero(); c_in * c_out] }
    }

    pub fn identity(c: usize) -> PointwiseWeights<T> {
        let mut w = Self::zeros(c, c);
        for i in 0..c {
            w.set(i, i, T::one());
        }
        w
    }

    pub fn random(c_in: usize, c_out: usize, seed: u64) -> PointwiseWeights<T> {
        let mut rng = crate::tensor::SplitMix64::new(seed);
        let data = (0..c_in * c_out)
            .map(|_| T::from_f64_exact(rng.next_signed()))
            .collect();
        PointwiseWeights { c_in, c_out, data }
    }

    #[inline]
    pub fn get(&self, ci: usize, co: usize) -> T {
        self.data[ci * self.c_out + co]
    }

    #[inline]
    pub fn set(&mut self, ci: usize, co: usize, v: T) {
        self.data[ci * self.c_out + co] = v;
    }
}

/// Soft (differentiable-angle) convolution parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftConfig {
    pub theta_deg: f64,
    pub sigma: f64,
    pub radius: f64,
    pub k: usize,
    pub pad: f64,
    pub stride: usize,
}

impl SoftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma <= 0.0 {
            return Err(OrikError::InvalidConfig("sigma must be > 0".into()));
        }
        if self.radius < 0.0 {
            return Err(OrikError::InvalidConfig("radius must be >= 0".into()));
        }
        if self.k == 0 || self.stride == 0 {
            return Err(OrikError::InvalidConfig("K and stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// Output spatial size for stride s: floor((len-1)/s) + 1.
#[inline]
pub fn out_size(len: usize, stride: usize) -> usize {
    (len - 1) / stride + 1
}

fn check_channels<T: Element>(
    x: &Tensor<T>,
    w_c: usize,
    angles: &AngleAssignment,
) -> Result<()> {
    if x.c() != w_c || x.c() != angles.channels() {
        return Err(OrikError::ShapeMismatch(format!(
            "channels disagree: x.C={} w.C={} angles={}",
            x.c(),
            w_c,
            angles.channels()
        )));
    }
    Ok(())
}

/// Deduplicated offset tables for a per-channel angle vector: one table per
/// distinct angle plus a channel -> table index map.
pub fn tables_for_angles(
    cfg: &ConvConfig,
    angles: &AngleAssignment,
) -> Result<(Vec<OffsetTable>, Vec<usize>)> {
    let mut distinct: Vec<u64> = Vec::new();
    let mut tables: Vec<OffsetTable> = Vec::new();
    let mut map = Vec::with_capacity(angles.channels());
    for &a in &angles.angles_deg {
        let bits = a.to_bits();
        let idx = match distinct.iter().position(|&b| b == bits) {
            Some(i) => i,
            None => {
                distinct.push(bits);
                tables.push(cfg.table_for_angle(a)?);
                tables.len() - 1
            }
        };
        map.push(idx);
    }
    Ok((tables, map))
}

/// Round-down forward over explicit per-channel tables. This is the common
/// core behind the 1D, even-kernel and decomposition paths.
pub fn dwconv_table_fwd<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    tables: &[OffsetTable],
    channel_table: &[usize],
    stride: usize,
    mads: &mut u64,
) -> Result<Tensor<T>> {
    if x.c() != w.c || channel_table.len() != x.c() {
        return Err(OrikError::ShapeMismatch(format!(
            "channels disagree: x.C={} w.C={} map={}",
            x.c(),
            w.c,
            channel_table.len()
        )));
    }
    let (n, h, wd, c) = x.shape();
    let (p_out, q_out) = (out_size(h, stride), out_size(wd, stride));
    let mut y = Tensor::zeros(n, p_out, q_out, c)?;
    for b in 0..n {
        for p in 0..p_out {
            for q in 0..q_out {
                let (sp, sq) = ((p * stride) as i64, (q * stride) as i64);
                for ch in 0..c {
                    let table = &tables[channel_table[ch]];
                    let mut acc = T::zero();
                    for (k, &(dh, dw)) in table.entries.iter().enumerate() {
                        acc = acc + x.get_padded(b, sp + dh, sq + dw, ch) * w.get(k, ch);
                        *mads += 1;
                    }
                    y.set(b, p, q, ch, acc);
                }
            }
        }
    }
    Ok(y)
}

/// Depthwise convolution of an oriented 1D kernel, round-down
/// discretization. Accumulation is in the tensor dtype, k ascending.
pub fn dwconv1d_fwd<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    angles: &AngleAssignment,
    cfg: &ConvConfig,
) -> Result<Tensor<T>> {
    dwconv1d_fwd_counted(x, w, angles, cfg, &mut 0)
}

pub fn dwconv1d_fwd_counted<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    angles: &AngleAssignment,
    cfg: &ConvConfig,
    mads: &mut u64,
) -> Result<Tensor<T>> {
    check_channels(x, w.c, angles)?;
    if cfg.discretization != Discretization::RoundDown {
        return Err(OrikError::InvalidConfig(
            "dwconv1d_fwd requires round-down discretization".into(),
        ));
    }
    let (tables, map) = tables_for_angles(cfg, angles)?;
    dwconv_table_fwd(x, w, &tables, &map, cfg.stride, mads)
}

/// Exact adjoint of `dwconv1d_fwd`: gradients w.r.t. the input and weights.
pub fn dwconv1d_bwd<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    angles: &AngleAssignment,
    cfg: &ConvConfig,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, KernelWeights1D<T>)> {
    check_channels(x, w.c, angles)?;
    let (n, h, wd, c) = x.shape();
    let expected = (n, out_size(h, cfg.stride), out_size(wd, cfg.stride), c);
    if dy.shape() != expected {
        return Err(OrikError::ShapeMismatch(format!(
            "dy shape {:?} != forward output {:?}",
            dy.shape(),
            expected
        )));
    }
    let (tables, map) = tables_for_angles(cfg, angles)?;
    let mut dx = Tensor::zeros(n, h, wd, c)?;
    let mut dw = KernelWeights1D::zeros(w.k, w.c);
    dwconv1d_bwd_into(x, w, &tables, &map, cfg.stride, dy, &mut dx, &mut dw);
    Ok((dx, dw))
}

/// Scatter backward over explicit tables; loops n outermost so a
/// batch-parallel caller reproduces the scatter order per batch element.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dwconv1d_bwd_into<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    tables: &[OffsetTable],
    channel_table: &[usize],
    stride: usize,
    dy: &Tensor<T>,
    dx: &mut Tensor<T>,
    dw: &mut KernelWeights1D<T>,
) {
    let (n, h, wd, c) = x.shape();
    let (_, p_out, q_out, _) = dy.shape();
    for b in 0..n {
        dwconv1d_bwd_batch(x, w, tables, channel_table, stride, dy, dx, dw, b, h, wd, c, p_out, q_out);
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dwconv1d_bwd_batch<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    tables: &[OffsetTable],
    channel_table: &[usize],
    stride: usize,
    dy: &Tensor<T>,
    dx: &mut Tensor<T>,
    dw: &mut KernelWeights1D<T>,
    b: usize,
    h: usize,
    wd: usize,
    c: usize,
    p_out: usize,
    q_out: usize,
) {
    for p in 0..p_out {
        for q in 0..q_out {
            let (sp, sq) = ((p * stride) as i64, (q * stride) as i64);
            for ch in 0..c {
                let g = dy.get(b, p, q, ch);
                let table = &tables[channel_table[ch]];
                for (k, &(dh, dw_off)) in table.entries.iter().enumerate() {
                    let (ih, iw) = (sp + dh, sq + dw_off);
                    if ih >= 0 && iw >= 0 && ih < h as i64 && iw < wd as i64 {
                        let (ih, iw) = (ih as usize, iw as usize);
                        let prev = dx.get(b, ih, iw, ch);
                        dx.set(b, ih, iw, ch, prev + g * w.get(k, ch));
                        let prev_w = dw.get(k, ch);
                        dw.set(k, ch, prev_w + g * x.get(b, ih, iw, ch));
                    }
                }
            }
        }
    }
}

/// Bilinear-discretized forward: each tap reads the 4 integer neighbors of
/// the real-valued offset.
pub fn dwconv1d_bilinear_fwd<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    angles: &AngleAssignment,
    cfg: &ConvConfig,
) -> Result<Tensor<T>> {
    dwconv1d_bilinear_fwd_counted(x, w, angles, cfg, &mut 0)
}

pub fn dwconv1d_bilinear_fwd_counted<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    angles: &AngleAssignment,
    cfg: &ConvConfig,
    mads: &mut u64,
) -> Result<Tensor<T>> {
    check_channels(x, w.c, angles)?;
    if cfg.discretization != Discretization::Bilinear {
        return Err(OrikError::InvalidConfig(
            "dwconv1d_bilinear_fwd requires bilinear discretization".into(),
        ));
    }
    let (tables, map) = tables_for_angles(cfg, angles)?;
    let (n, h, wd, c) = x.shape();
    let (p_out, q_out) = (out_size(h, cfg.stride), out_size(wd, cfg.stride));
    let mut y = Tensor::zeros(n, p_out, q_out, c)?;
    for b in 0..n {
        for p in 0..p_out {
            for q in 0..q_out {
                let sp = (p * cfg.stride) as i64;
                let sq = (q * cfg.stride) as i64;
                for ch in 0..c {
                    let table = &tables[map[ch]];
                    let frac = table.fractional.as_ref().expect("bilinear table");
                    let mut acc = T::zero();
                    for (k, (&(dh, dw), &(fh, fw))) in
                        table.entries.iter().zip(frac.iter()).enumerate()
                    {
                        let wk = w.get(k, ch);
                        let (ih, iw) = (sp + dh, sq + dw);
                        let (fh_t, fw_t) =
                            (T::from_f64_exact(fh), T::from_f64_exact(fw));
                        let one = T::one();
                        acc = acc
                            + x.get_padded(b, ih, iw, ch) * ((one - fh_t) * (one - fw_t)) * wk;
                        acc = acc
                            + x.get_padded(b, ih, iw + 1, ch) * ((one - fh_t) * fw_t) * wk;
                        acc = acc
                            + x.get_padded(b, ih + 1, iw, ch) * (fh_t * (one - fw_t)) * wk;
                        acc = acc + x.get_padded(b, ih + 1, iw + 1, ch) * (fh_t * fw_t) * wk;
                        *mads += 4;
                    }
                    y.set(b, p, q, ch, acc);
                }
            }
        }
    }
    Ok(y)
}

/// Even-kernel forward: same as `dwconv1d_fwd`, offsets shifted by the
/// exterior padding.
pub fn dwconv1d_even_fwd<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    angles: &AngleAssignment,
    cfg: &ConvConfig,
) -> Result<Tensor<T>> {
    if cfg.even_pad.is_none() {
        return Err(OrikError::InvalidConfig(
            "dwconv1d_even_fwd requires even_pad".into(),
        ));
    }
    check_channels(x, w.c, angles)?;
    let (tables, map) = tables_for_angles(cfg, angles)?;
    dwconv_table_fwd(x, w, &tables, &map, cfg.stride, &mut 0)
}

/// Oriented 2D depthwise forward: the (r,s) index pair rotated by the
/// per-channel angle and floored.
pub fn dwconv2d_oriented_fwd<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights2D<T>,
    angles: &AngleAssignment,
    stride: usize,
    pad_h: f64,
    pad_w: f64,
) -> Result<Tensor<T>> {
    if x.c() != w.c || x.c() != angles.channels() {
        return Err(OrikError::ShapeMismatch(format!(
            "channels disagree: x.C={} w.C={} angles={}",
            x.c(),
            w.c,
            angles.channels()
        )));
    }
    // per distinct angle: R*S offset table in (r,s) lexicographic order
    let mut distinct: Vec<u64> = Vec::new();
    let mut tables: Vec<Vec<(i64, i64)>> = Vec::new();
    let mut map = Vec::with_capacity(angles.channels());
    for &a in &angles.angles_deg {
        let bits = a.to_bits();
        let idx = match distinct.iter().position(|&b| b == bits) {
            Some(i) => i,
            None => {
                let (sin_t, cos_t) = snapped_sin_cos(a);
                let mut entries = Vec::with_capacity(w.r * w.s);
                for r in 0..w.r {
                    for s in 0..w.s {
                        let (a0, b0) = (r as f64 - pad_h, s as f64 - pad_w);
                        let dh = cos_t * a0 - sin_t * b0;
                        let dw = sin_t * a0 + cos_t * b0;
                        entries.push((dh.floor() as i64, dw.floor() as i64));
                    }
                }
                distinct.push(bits);
                tables.push(entries);
                tables.len() - 1
            }
        };
        map.push(idx);
    }
    let (n, h, wd, c) = x.shape();
    let (p_out, q_out) = (out_size(h, stride), out_size(wd, stride));
    let mut y = Tensor::zeros(n, p_out, q_out, c)?;
    for b in 0..n {
        for p in 0..p_out {
            for q in 0..q_out {
                let (sp, sq) = ((p * stride) as i64, (q * stride) as i64);
                for ch in 0..c {
                    let table = &tables[map[ch]];
                    let mut acc = T::zero();
                    let mut idx = 0;
                    for r in 0..w.r {
                        for s in 0..w.s {
                            let (dh, dw) = table[idx];
                            idx += 1;
                            acc = acc
                                + x.get_padded(b, sp + dh, sq + dw, ch) * w.get(r, s, ch);
                        }
                    }
                    y.set(b, p, q, ch, acc);
                }
            }
        }
    }
    Ok(y)
}

/// Standard depthwise cross-correlation with zero padding, accumulation in
/// (r,s) lexicographic order.
pub fn dwconv2d_standard_fwd<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights2D<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    dwconv2d_standard_fwd_counted(x, w, stride, pad, &mut 0)
}

pub fn dwconv2d_standard_fwd_counted<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights2D<T>,
    stride: usize,
    pad: usize,
    mads: &mut u64,
) -> Result<Tensor<T>> {
    if x.c() != w.c {
        return Err(OrikError::ShapeMismatch(format!(
            "channels disagree: x.C={} w.C={}",
            x.c(),
            w.c
        )));
    }
    let (n, h, wd, c) = x.shape();
    let (p_out, q_out) = (out_size(h, stride), out_size(wd, stride));
    let mut y = Tensor::zeros(n, p_out, q_out, c)?;
    for b in 0..n {
        for p in 0..p_out {
            for q in 0..q_out {
                let (sp, sq) = ((p * stride) as i64, (q * stride) as i64);
                for ch in 0..c {
                    let mut acc = T::zero();
                    for r in 0..w.r {
                        for s in 0..w.s {
                            let ih = sp + r as i64 - pad as i64;
                            let iw = sq + s as i64 - pad as i64;
                            acc = acc + x.get_padded(b, ih, iw, ch) * w.get(r, s, ch);
                            *mads += 1;
                        }
                    }
                    y.set(b, p, q, ch, acc);
                }
            }
        }
    }
    Ok(y)
}

/// Pointwise (1x1) convolution: per-pixel matrix product, C_in ascending.
pub fn pointwise_fwd<T: Element>(x: &Tensor<T>, w: &PointwiseWeights<T>) -> Result<Tensor<T>> {
    pointwise_fwd_counted(x, w, &mut 0)
}

pub fn pointwise_fwd_counted<T: Element>(
    x: &Tensor<T>,
    w: &PointwiseWeights<T>,
    mads: &mut u64,
) -> Result<Tensor<T>> {
    if x.c() != w.c_in {
        return Err(OrikError::ShapeMismatch(format!(
            "channels disagree: x.C={} w.C_in={}",
            x.c(),
            w.c_in
        )));
    }
    let (n, h, wd, _) = x.shape();
    let mut y = Tensor::zeros(n, h, wd, w.c_out)?;
    for b in 0..n {
        for p in 0..h {
            for q in 0..wd {
                for co in 0..w.c_out {
                    let mut acc = T::zero();
                    for ci in 0..w.c_in {
                        acc = acc + x.get(b, p, q, ci) * w.get(ci, co);
                        *mads += 1;
                    }
                    y.set(b, p, q, co, acc);
                }
            }
        }
    }
    Ok(y)
}

/// Depthwise separable convolution: oriented depthwise followed by
/// pointwise, exactly the sequential composition.
pub fn dsc_fwd<T: Element>(
    x: &Tensor<T>,
    w_dw: &KernelWeights1D<T>,
    angles: &AngleAssignment,
    cfg: &ConvConfig,
    w_pw: &PointwiseWeights<T>,
) -> Result<Tensor<T>> {
    dsc_fwd_counted(x, w_dw, angles, cfg, w_pw, &mut 0)
}

pub fn dsc_fwd_counted<T: Element>(
    x: &Tensor<T>,
    w_dw: &KernelWeights1D<T>,
    angles: &AngleAssignment,
    cfg: &ConvConfig,
    w_pw: &PointwiseWeights<T>,
    mads: &mut u64,
) -> Result<Tensor<T>> {
    let mid = dwconv1d_fwd_counted(x, w_dw, angles, cfg, mads)?;
    pointwise_fwd_counted(&mid, w_pw, mads)
}

/// Soft differentiable-angle forward: a Gaussian relaxation of the
/// coordinate constraint, truncated at distance `radius`.
pub fn softconv_fwd<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    soft: &SoftConfig,
) -> Result<Tensor<T>> {
    soft.validate()?;
    if x.c() != w.c || w.k != soft.k {
        return Err(OrikError::ShapeMismatch(format!(
            "x.C={} w.C={} or w.K={} soft.K={}",
            x.c(),
            w.c,
            w.k,
            soft.k
        )));
    }
    let (n, h, wd, c) = x.shape();
    let (p_out, q_out) = (out_size(h, soft.stride), out_size(wd, soft.stride));
    let (sin_t, cos_t) = snapped_sin_cos(soft.theta_deg);
    let inv_two_sigma2 = 1.0 / (2.0 * soft.sigma * soft.sigma);
    let r2 = soft.radius * soft.radius;
    let mut y = Tensor::zeros(n, p_out, q_out, c)?;
    for b in 0..n {
        for p in 0..p_out {
            for q in 0..q_out {
                for ch in 0..c {
                    let mut acc = T::zero();
                    for k in 0..soft.k {
                        let radius_k = k as f64 - soft.pad;
                        let alpha = (p * soft.stride) as f64 - radius_k * sin_t;
                        let beta = (q * soft.stride) as f64 + radius_k * cos_t;
                        let h_lo = ((alpha - soft.radius).ceil() as i64).max(0);
                        let h_hi = ((alpha + soft.radius).floor() as i64).min(h as i64 - 1);
                        let w_lo = ((beta - soft.radius).ceil() as i64).max(0);
                        let w_hi = ((beta + soft.radius).floor() as i64).min(wd as i64 - 1);
                        let wk = w.get(k, ch);
                        for ih in h_lo..=h_hi {
                            for iw in w_lo..=w_hi {
                                let dh = ih as f64 - alpha;
                                let dw = iw as f64 - beta;
                                let d2 = dh * dh + dw * dw;
                                if d2 > r2 {
                                    continue;
                                }
                                let omega = (-d2 * inv_two_sigma2).exp();
                                acc = acc
                                    + T::from_f64_exact(omega)
                                        * x.get(b, ih as usize, iw as usize, ch)
                                        * wk;
                            }
                        }
                    }
                    y.set(b, p, q, ch, acc);
                }
            }
        }
    }
    Ok(y)
}

/// d<dy, y>/d(theta) for the soft convolution, via the omega chain rule
/// through alpha(theta) and beta(theta). Same radius truncation as the
/// forward. Returned in f64 regardless of dtype.
pub fn softconv_grad_theta<T: Element>(
    x: &Tensor<T>,
    w: &KernelWeights1D<T>,
    soft: &SoftConfig,
    dy: &Tensor<T>,
) -> Result<f64> {
    soft.validate()?;
    if x.c() != w.c || w.k != soft.k {
        return Err(OrikError::ShapeMismatch("soft grad shape mismatch".into()));
    }
    let (n, h, wd, c) = x.shape();
    let (p_out, q_out) = (out_size(h, soft.stride), out_size(wd, soft.stride));
    if dy.shape() != (n, p_out, q_out, c) {
        return Err(OrikError::ShapeMismatch(format!(
            "dy shape {:?} != {:?}",
            dy.shape(),
            (n, p_out, q_out, c)
        )));
    }
    let (sin_t, cos_t) = snapped_sin_cos(soft.theta_deg);
    let inv_sigma2 = 1.0 / (soft.sigma * soft.sigma);
    let inv_two_sigma2 = 0.5 * inv_sigma2;
    let r2 = soft.radius * soft.radius;
    let mut dtheta = 0.0f64;
    for b in 0..n {
        for p in 0..p_out {
            for q in 0..q_out {
                for ch in 0..c {
                    let g = dy.get(b, p, q, ch).to_f64().unwrap();
                    if g == 0.0 {
                        continue;
                    }
                    for k in 0..soft.k {
                        let radius_k = k as f64 - soft.pad;
                        let alpha = (p * soft.stride) as f64 - radius_k * sin_t;
                        let beta = (q * soft.stride) as f64 + radius_k * cos_t;
                        // d(alpha)/d(theta), d(beta)/d(theta) in radians
                        let dalpha = -radius_k * cos_t;
                        let dbeta = -radius_k * sin_t;
                        let h_lo = ((alpha - soft.radius).ceil() as i64).max(0);
                        let h_hi = ((alpha + soft.radius).floor() as i64).min(h as i64 - 1);
                        let w_lo = ((beta - soft.radius).ceil() as i64).max(0);
                        let w_hi = ((beta + soft.radius).floor() as i64).min(wd as i64 - 1);
                        let wk = w.get(k, ch).to_f64().unwrap();
                        for ih in h_lo..=h_hi {
                            for iw in w_lo..=w_hi {
                                let dh = ih as f64 - alpha;
                                let dw = iw as f64 - beta;
                                let d2 = dh * dh + dw * dw;
                                if d2 > r2 {
                                    continue;
                                }
                                let omega = (-d2 * inv_two_sigma2).exp();
                                let domega = omega * (dh * dalpha + dw * dbeta) * inv_sigma2;
                                dtheta += g
                                    * x.get(b, ih as usize, iw as usize, ch).to_f64().unwrap()
                                    * wk
                                    * domega;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(dtheta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offsets::Parameterization;
    use crate::tensor::Tensor;

    fn row_tensor(vals: &[f64]) -> Tensor<f64> {
        Tensor::from_data(1, 1, vals.len(), 1, vals.to_vec()).unwrap()
    }

    #[test]
    fn horizontal_row_with_zero_padding() {
        let x = row_tensor(&[2.0, 3.0, 5.0]);
        let w = KernelWeights1D::from_taps(&[1.0, 1.0, 1.0], 1);
        let angles = AngleAssignment::uniform(0.0, 1);
        let y = dwconv1d_fwd(&x, &w, &angles, &ConvConfig::centered(3)).unwrap();
        assert_eq!(y.data(), &[5.0, 10.0, 8.0]);
    }

    #[test]
    fn delta_kernel_is_identity_for_any_angle() {
        let x = Tensor::<f64>::random(2, 6, 6, 3, 4).unwrap();
        for theta in [0.0, 30.0, 45.0, 90.0, 123.0] {
            let w = KernelWeights1D::delta(5, 2, 3);
            let angles = AngleAssignment::uniform(theta, 3);
            let y = dwconv1d_fwd(&x, &w, &angles, &ConvConfig::centered(5)).unwrap();
            assert_eq!(y.data(), x.data());
        }
    }

    #[test]
    fn diagonal_45_center_formula() {
        // offsets at 45 deg, K=3: (0,-1),(0,0),(-1,0)
        let vals: Vec<f64> = (0..9).map(|i| (i * i + 1) as f64).collect();
        let x = Tensor::from_data(1, 3, 3, 1, vals.clone()).unwrap();
        let w = KernelWeights1D::from_data(3, 1, vec![0.5, 2.0, -1.0]).unwrap();
        let angles = AngleAssignment::uniform(45.0, 1);
        let y = dwconv1d_fwd(&x, &w, &angles, &ConvConfig::centered(3)).unwrap();
        let get = |h: usize, wd: usize| vals[h * 3 + wd];
        let expect = 0.5 * get(1, 0) + 2.0 * get(1, 1) - get(0, 1);
        assert_eq!(y.get(0, 1, 1, 0), expect);
    }

    #[test]
    fn bwd_zero_dy() {
        let x = Tensor::<f64>::random(1, 5, 5, 2, 9).unwrap();
        let w = KernelWeights1D::random(3, 2, 10);
        let angles = AngleAssignment::uniform(45.0, 2);
        let dy = Tensor::<f64>::zeros(1, 5, 5, 2).unwrap();
        let (dx, dw) = dwconv1d_bwd(&x, &w, &angles, &ConvConfig::centered(3), &dy).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(dw.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bilinear_axis_angles_collapse_bitwise() {
        let x = Tensor::<f32>::random(1, 8, 8, 2, 11).unwrap();
        let w = KernelWeights1D::<f32>::random(5, 2, 12);
        for theta in [0.0, 90.0] {
            let angles = AngleAssignment::uniform(theta, 2);
            let hard = dwconv1d_fwd(&x, &w, &angles, &ConvConfig::centered(5)).unwrap();
            let mut cfg = ConvConfig::centered(5);
            cfg.discretization = Discretization::Bilinear;
            let mut mads = 0u64;
            let soft = dwconv1d_bilinear_fwd_counted(&x, &w, &angles, &cfg, &mut mads).unwrap();
            assert_eq!(hard.data(), soft.data());
            assert_eq!(mads, 4 * 5 * 8 * 8 * 2);
        }
    }

    #[test]
    fn even_diagonal_2x2_stride2() {
        // offsets {(0,0),(1,1)} anchored at the origin with stride 2
        let x = Tensor::from_data(1, 2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = KernelWeights1D::from_taps(&[1.0, 1.0], 1);
        let mut cfg = ConvConfig::centered(2).with_stride(2);
        cfg.pad = 1.0 - 2f64.sqrt();
        cfg.even_pad = Some((0, 0));
        let angles = AngleAssignment::uniform(315.0, 1);
        let y = dwconv1d_even_fwd(&x, &w, &angles, &cfg).unwrap();
        assert_eq!(y.shape(), (1, 1, 1, 1));
        assert_eq!(y.get(0, 0, 0, 0), 5.0); // a + d
    }

    #[test]
    fn even_requires_even_pad() {
        let x = Tensor::<f64>::random(1, 4, 4, 1, 1).unwrap();
        let w = KernelWeights1D::from_taps(&[1.0, 1.0], 1);
        let angles = AngleAssignment::uniform(0.0, 1);
        assert!(dwconv1d_even_fwd(&x, &w, &angles, &ConvConfig::centered(2)).is_err());
    }

    #[test]
    fn oriented2d_quarter_turn() {
        // theta=90: offsets (dh,dw) = (cos,-sin; sin,cos)... floor leaves the
        // integer rotation exact, so the result equals the standard conv with
        // the kernel rotated a quarter turn
        let c = 1;
        let x = Tensor::<f64>::random(1, 5, 5, c, 21).unwrap();
        let w = KernelWeights2D::<f64>::random(3, 3, c, 22);
        let angles = AngleAssignment::uniform(90.0, c);
        let y = dwconv2d_oriented_fwd(&x, &w, &angles, 1, 1.0, 1.0).unwrap();

        // rotated kernel: position (r,s) moves to (dh,dw)+pad where
        // dh = -(s-1), dw = (r-1) at 90 degrees
        let mut w_rot = KernelWeights2D::<f64>::zeros(3, 3, c);
        for r in 0..3 {
            for s in 0..3 {
                let dh = -(s as i64 - 1) + 1;
                let dw = (r as i64 - 1) + 1;
                w_rot.set(dh as usize, dw as usize, 0, w.get(r, s, 0));
            }
        }
        let oracle = dwconv2d_standard_fwd(&x, &w_rot, 1, 1).unwrap();
        assert!(y.max_abs_diff(&oracle) <= 1e-15);
    }

    #[test]
    fn standard2d_basics() {
        let x = Tensor::<f64>::random(1, 4, 4, 2, 31).unwrap();
        let ident = KernelWeights2D::from_data(1, 1, 2, vec![1.0, 1.0]).unwrap();
        let y = dwconv2d_standard_fwd(&x, &ident, 1, 0).unwrap();
        assert_eq!(y.data(), x.data());

        let ones_x = Tensor::from_data(1, 3, 3, 1, vec![1.0; 9]).unwrap();
        let ones_w = KernelWeights2D::from_data(3, 3, 1, vec![1.0; 9]).unwrap();
        let y = dwconv2d_standard_fwd(&ones_x, &ones_w, 1, 1).unwrap();
        assert_eq!(y.get(0, 1, 1, 0), 9.0);
    }

    #[test]
    fn pointwise_identity_and_sum() {
        let x = Tensor::<f32>::random(1, 3, 3, 4, 41).unwrap();
        let y = pointwise_fwd(&x, &PointwiseWeights::identity(4)).unwrap();
        assert_eq!(y.data(), x.data());

        let ones = PointwiseWeights::from_data(4, 1, vec![1.0f32; 4]).unwrap();
        let y = pointwise_fwd(&x, &ones).unwrap();
        for p in 0..3 {
            for q in 0..3 {
                let sum: f32 = (0..4).map(|c| x.get(0, p, q, c)).sum();
                assert_eq!(y.get(0, p, q, 0), sum);
            }
        }
    }

    #[test]
    fn dsc_mad_tally() {
        let c = 4;
        let k = 3;
        let x = Tensor::<f32>::random(1, 6, 6, c, 51).unwrap();
        let w_dw = KernelWeights1D::random(k, c, 52);
        let w_pw = PointwiseWeights::random(c, 5, 53);
        let angles = AngleAssignment::uniform(45.0, c);
        let mut mads = 0u64;
        dsc_fwd_counted(&x, &w_dw, &angles, &ConvConfig::centered(k), &w_pw, &mut mads).unwrap();
        // per pixel: K per depthwise channel output + C_in per pointwise output
        assert_eq!(mads, (k as u64 * c as u64 + c as u64 * 5) * 36);
    }

    #[test]
    fn soft_r0_noninteger_offsets_zero() {
        let x = Tensor::<f64>::random(1, 6, 6, 1, 61).unwrap();
        let w = KernelWeights1D::from_taps(&[1.0, 1.0, 1.0], 1);
        let soft = SoftConfig { theta_deg: 33.0, sigma: 1.0, radius: 0.0, k: 3, pad: 1.0, stride: 1 };
        let y = softconv_fwd(&x, &w, &soft).unwrap();
        // center tap lands on integers, the two oblique taps are cut
        let w_delta = KernelWeights1D::delta(3, 1, 1);
        let y_center = dwconv1d_fwd(&x, &w_delta, &AngleAssignment::uniform(33.0, 1), &ConvConfig::centered(3)).unwrap();
        assert!(y.max_abs_diff(&y_center) <= 1e-15);
    }

    #[test]
    fn soft_grad_trivial_zero_cases() {
        let x = Tensor::<f64>::random(1, 5, 5, 1, 71).unwrap();
        let w = KernelWeights1D::from_taps(&[0.3, -0.2, 0.9], 1);
        let soft = SoftConfig { theta_deg: 40.0, sigma: 1.0, radius: 2.0, k: 3, pad: 1.0, stride: 1 };
        let dy0 = Tensor::<f64>::zeros(1, 5, 5, 1).unwrap();
        assert_eq!(softconv_grad_theta(&x, &w, &soft, &dy0).unwrap(), 0.0);

        let w0 = KernelWeights1D::zeros(3, 1);
        let dy = Tensor::<f64>::random(1, 5, 5, 1, 72).unwrap();
        assert_eq!(softconv_grad_theta(&x, &w0, &soft, &dy).unwrap(), 0.0);
    }

    #[test]
    fn soft_bad_sigma() {
        let soft = SoftConfig { theta_deg: 0.0, sigma: 0.0, radius: 1.0, k: 3, pad: 1.0, stride: 1 };
        assert!(soft.validate().is_err());
    }

    #[test]
    fn shear_parameterization_through_fwd() {
        // exact diagonal at -45 through the shear-x table
        let x = Tensor::<f64>::random(1, 5, 5, 1, 81).unwrap();
        let w = KernelWeights1D::from_taps(&[1.0, 2.0, 3.0], 1);
        let mut cfg = ConvConfig::centered(3);
        cfg.parameterization = Parameterization::ShearX;
        let angles = AngleAssignment::uniform(315.0, 1);
        let y = dwconv1d_fwd(&x, &w, &angles, &cfg).unwrap();
        let expect = 1.0 * x.get(0, 1, 1, 0) + 2.0 * x.get(0, 2, 2, 0) + 3.0 * x.get(0, 3, 3, 0);
        assert_eq!(y.get(0, 2, 2, 0), expect);
    }
}
