//! Toy-scale block and stem assemblies with a minimal reverse-mode tape.
//!
//! Enough machinery for shape checks, gradient checks and receptive-field
//! analysis; not a training stack. The tape saves full inputs per primitive
//! and replays them in exact reverse traversal order.

use serde::{Deserialize, Serialize};

use crate::error::{OrikError, Result};
use crate::offsets::{
    direction_angles, layerwise_angles, stage_kernel_caps, AngleAssignment, ConvConfig,
};
use crate::reference::{
    dwconv1d_bwd, dwconv1d_fwd, KernelWeights1D, KernelWeights2D, PointwiseWeights,
};
use crate::scalar::Element;
use crate::tensor::{SplitMix64, Tensor};

/// Full (non-depthwise) R x S convolution weights, used by the 2D stem and
/// the inter-stage 2x2 downsamplers. Valid padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dWeights<T: Element> {
    pub r: usize,
    pub s: usize,
    pub c_in: usize,
    pub c_out: usize,
    data: Vec<T>,
}

impl<T: Element> Conv2dWeights<T> {
    pub fn zeros(r: usize, s: usize, c_in: usize, c_out: usize) -> Conv2dWeights<T> {
        Conv2dWeights { r, s, c_in, c_out, data: vec![T::zero(); r * s * c_in * c_out] }
    }

    pub fn random(r: usize, s: usize, c_in: usize, c_out: usize, rng: &mut SplitMix64) -> Conv2dWeights<T> {
        let scale = 1.0 / ((r * s * c_in) as f64).sqrt();
        let data = (0..r * s * c_in * c_out)
            .map(|_| T::from_f64_exact(rng.next_signed() * scale))
            .collect();
        Conv2dWeights { r, s, c_in, c_out, data }
    }

    #[inline]
    pub fn get(&self, r: usize, s: usize, ci: usize, co: usize) -> T {
        self.data[((r * self.s + s) * self.c_in + ci) * self.c_out + co]
    }

    #[inline]
    pub fn set(&mut self, r: usize, s: usize, ci: usize, co: usize, v: T) {
        self.data[((r * self.s + s) * self.c_in + ci) * self.c_out + co] = v;
    }
}

/// Per-pixel layer normalization over channels.
pub fn layernorm_fwd<T: Element>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> Result<Tensor<T>> {
    let (n, h, w, c) = x.shape();
    if gamma.len() != c || beta.len() != c {
        return Err(OrikError::ShapeMismatch(format!(
            "gamma/beta length {}/{} != C={}",
            gamma.len(),
            beta.len(),
            c
        )));
    }
    let mut y = Tensor::zeros(n, h, w, c)?;
    let inv_c = T::from_f64_exact(1.0 / c as f64);
    let eps_t = T::from_f64_exact(eps);
    for b in 0..n {
        for p in 0..h {
            for q in 0..w {
                let mut mean = T::zero();
                for ch in 0..c {
                    mean = mean + x.get(b, p, q, ch);
                }
                mean = mean * inv_c;
                let mut var = T::zero();
                for ch in 0..c {
                    let d = x.get(b, p, q, ch) - mean;
                    var = var + d * d;
                }
                var = var * inv_c;
                let inv_std = (var + eps_t).sqrt().recip();
                for ch in 0..c {
                    let xhat = (x.get(b, p, q, ch) - mean) * inv_std;
                    y.set(b, p, q, ch, xhat * gamma[ch] + beta[ch]);
                }
            }
        }
    }
    Ok(y)
}

fn layernorm_bwd_input<T: Element>(
    x: &Tensor<T>,
    gamma: &[T],
    eps: f64,
    dy: &Tensor<T>,
) -> Tensor<T> {
    let (n, h, w, c) = x.shape();
    let mut dx = Tensor::zeros(n, h, w, c).unwrap();
    let inv_c = T::from_f64_exact(1.0 / c as f64);
    let eps_t = T::from_f64_exact(eps);
    for b in 0..n {
        for p in 0..h {
            for q in 0..w {
                let mut mean = T::zero();
                for ch in 0..c {
                    mean = mean + x.get(b, p, q, ch);
                }
                mean = mean * inv_c;
                let mut var = T::zero();
                for ch in 0..c {
                    let d = x.get(b, p, q, ch) - mean;
                    var = var + d * d;
                }
                var = var * inv_c;
                let inv_std = (var + eps_t).sqrt().recip();
                // g = dL/d(xhat); dx = inv_std * (g - mean(g) - xhat*mean(g*xhat))
                let mut g_mean = T::zero();
                let mut gx_mean = T::zero();
                for ch in 0..c {
                    let xhat = (x.get(b, p, q, ch) - mean) * inv_std;
                    let g = dy.get(b, p, q, ch) * gamma[ch];
                    g_mean = g_mean + g;
                    gx_mean = gx_mean + g * xhat;
                }
                g_mean = g_mean * inv_c;
                gx_mean = gx_mean * inv_c;
                for ch in 0..c {
                    let xhat = (x.get(b, p, q, ch) - mean) * inv_std;
                    let g = dy.get(b, p, q, ch) * gamma[ch];
                    dx.set(b, p, q, ch, (g - g_mean - xhat * gx_mean) * inv_std);
                }
            }
        }
    }
    dx
}

/// Standard normal CDF.
#[inline]
fn phi(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Exact (CDF-based) GeLU: x * Phi(x).
pub fn gelu_fwd<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    for v in y.data_mut() {
        let xf = v.to_f64().unwrap();
        *v = T::from_f64_exact(xf * phi(xf));
    }
    y
}

fn gelu_bwd_input<T: Element>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, xv) in dx.data_mut().iter_mut().zip(x.data()) {
        let xf = xv.to_f64().unwrap();
        let pdf = (-0.5 * xf * xf).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let d = phi(xf) + xf * pdf;
        *g = *g * T::from_f64_exact(d);
    }
    dx
}

/// Full convolution with valid padding: out = floor((in - R)/stride) + 1.
pub fn conv2d_full_fwd<T: Element>(
    x: &Tensor<T>,
    w: &Conv2dWeights<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (n, h, wd, c) = x.shape();
    if c != w.c_in {
        return Err(OrikError::ShapeMismatch(format!(
            "x.C={} != w.C_in={}",
            c, w.c_in
        )));
    }
    if h < w.r || wd < w.s {
        return Err(OrikError::ShapeMismatch("input smaller than kernel".into()));
    }
    let p_out = (h - w.r) / stride + 1;
    let q_out = (wd - w.s) / stride + 1;
    let mut y = Tensor::zeros(n, p_out, q_out, w.c_out)?;
    for b in 0..n {
        for p in 0..p_out {
            for q in 0..q_out {
                for co in 0..w.c_out {
                    let mut acc = T::zero();
                    for r in 0..w.r {
                        for s in 0..w.s {
                            for ci in 0..c {
                                acc = acc
                                    + x.get(b, p * stride + r, q * stride + s, ci)
                                        * w.get(r, s, ci, co);
                            }
                        }
                    }
                    y.set(b, p, q, co, acc);
                }
            }
        }
    }
    Ok(y)
}

fn conv2d_full_bwd_input<T: Element>(
    x_shape: (usize, usize, usize, usize),
    w: &Conv2dWeights<T>,
    stride: usize,
    dy: &Tensor<T>,
) -> Tensor<T> {
    let (n, h, wd, c) = x_shape;
    let mut dx = Tensor::zeros(n, h, wd, c).unwrap();
    let (_, p_out, q_out, _) = dy.shape();
    for b in 0..n {
        for p in 0..p_out {
            for q in 0..q_out {
                for co in 0..w.c_out {
                    let g = dy.get(b, p, q, co);
                    for r in 0..w.r {
                        for s in 0..w.s {
                            for ci in 0..c {
                                let prev = dx.get(b, p * stride + r, q * stride + s, ci);
                                dx.set(
                                    b,
                                    p * stride + r,
                                    q * stride + s,
                                    ci,
                                    prev + g * w.get(r, s, ci, co),
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

fn dwconv2d_bwd_input<T: Element>(
    x_shape: (usize, usize, usize, usize),
    w: &KernelWeights2D<T>,
    stride: usize,
    pad: usize,
    dy: &Tensor<T>,
) -> Tensor<T> {
    let (n, h, wd, c) = x_shape;
    let mut dx = Tensor::zeros(n, h, wd, c).unwrap();
    let (_, p_out, q_out, _) = dy.shape();
    for b in 0..n {
        for p in 0..p_out {
            for q in 0..q_out {
                for ch in 0..c {
                    let g = dy.get(b, p, q, ch);
                    for r in 0..w.r {
                        for s in 0..w.s {
                            let ih = (p * stride + r) as i64 - pad as i64;
                            let iw = (q * stride + s) as i64 - pad as i64;
                            if ih >= 0 && iw >= 0 && ih < h as i64 && iw < wd as i64 {
                                let (ih, iw) = (ih as usize, iw as usize);
                                let prev = dx.get(b, ih, iw, ch);
                                dx.set(b, ih, iw, ch, prev + g * w.get(r, s, ch));
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

fn pointwise_bwd_input<T: Element>(w: &PointwiseWeights<T>, dy: &Tensor<T>) -> Tensor<T> {
    let (n, h, wd, _) = dy.shape();
    let mut dx = Tensor::zeros(n, h, wd, w.c_in).unwrap();
    for b in 0..n {
        for p in 0..h {
            for q in 0..wd {
                for ci in 0..w.c_in {
                    let mut acc = T::zero();
                    for co in 0..w.c_out {
                        acc = acc + dy.get(b, p, q, co) * w.get(ci, co);
                    }
                    dx.set(b, p, q, ci, acc);
                }
            }
        }
    }
    dx
}

/// One recorded primitive application per saved input, in forward traversal
/// order; backward pops in exact reverse order.
#[derive(Debug, Default)]
pub struct Tape<T: Element> {
    saved: Vec<Tensor<T>>,
}

impl<T: Element> Tape<T> {
    pub fn new() -> Tape<T> {
        Tape { saved: Vec::new() }
    }

    fn push(&mut self, x: Tensor<T>) {
        self.saved.push(x);
    }

    fn pop(&mut self) -> Tensor<T> {
        self.saved.pop().expect("tape underflow: backward without matching forward")
    }

    pub fn len(&self) -> usize {
        self.saved.len()
    }

    pub fn is_empty(&self) -> bool {
        self.saved.is_empty()
    }
}

/// Graph primitive. `Residual` wraps a branch whose output is added back to
/// its input.
#[derive(Debug, Clone)]
pub enum Layer<T: Element> {
    DwConv1d {
        w: KernelWeights1D<T>,
        angles: AngleAssignment,
        cfg: ConvConfig,
    },
    DwConv2d {
        w: KernelWeights2D<T>,
        stride: usize,
        pad: usize,
    },
    Conv2dFull {
        w: Conv2dWeights<T>,
        stride: usize,
    },
    Pointwise {
        w: PointwiseWeights<T>,
    },
    LayerNorm {
        gamma: Vec<T>,
        beta: Vec<T>,
        eps: f64,
    },
    Gelu,
    Residual(Vec<Layer<T>>),
}

impl<T: Element> Layer<T> {
    pub fn forward(&self, x: &Tensor<T>, mut tape: Option<&mut Tape<T>>) -> Result<Tensor<T>> {
        match self {
            Layer::Residual(branch) => {
                let fx = forward_layers(branch, x, tape)?;
                if fx.shape() != x.shape() {
                    return Err(OrikError::ShapeMismatch(format!(
                        "residual branch changed shape: {:?} -> {:?}",
                        x.shape(),
                        fx.shape()
                    )));
                }
                let mut y = x.clone();
                for (a, b) in y.data_mut().iter_mut().zip(fx.data()) {
                    *a = *a + *b;
                }
                Ok(y)
            }
            primitive => {
                if let Some(t) = &mut tape {
                    t.push(x.clone());
                }
                match primitive {
                    Layer::DwConv1d { w, angles, cfg } => dwconv1d_fwd(x, w, angles, cfg),
                    Layer::DwConv2d { w, stride, pad } => {
                        crate::reference::dwconv2d_standard_fwd(x, w, *stride, *pad)
                    }
                    Layer::Conv2dFull { w, stride } => conv2d_full_fwd(x, w, *stride),
                    Layer::Pointwise { w } => crate::reference::pointwise_fwd(x, w),
                    Layer::LayerNorm { gamma, beta, eps } => layernorm_fwd(x, gamma, beta, *eps),
                    Layer::Gelu => Ok(gelu_fwd(x)),
                    Layer::Residual(_) => unreachable!(),
                }
            }
        }
    }

    fn backward_input(&self, dy: &Tensor<T>, tape: &mut Tape<T>) -> Tensor<T> {
        match self {
            Layer::Residual(branch) => {
                let dbranch = backward_layers(branch, dy, tape);
                let mut dx = dy.clone();
                for (a, b) in dx.data_mut().iter_mut().zip(dbranch.data()) {
                    *a = *a + *b;
                }
                dx
            }
            Layer::DwConv1d { w, angles, cfg } => {
                let x = tape.pop();
                let (dx, _) = dwconv1d_bwd(&x, w, angles, cfg, dy).expect("tape shape mismatch");
                dx
            }
            Layer::DwConv2d { w, stride, pad } => {
                let x = tape.pop();
                dwconv2d_bwd_input(x.shape(), w, *stride, *pad, dy)
            }
            Layer::Conv2dFull { w, stride } => {
                let x = tape.pop();
                conv2d_full_bwd_input(x.shape(), w, *stride, dy)
            }
            Layer::Pointwise { w } => {
                let _ = tape.pop();
                pointwise_bwd_input(w, dy)
            }
            Layer::LayerNorm { gamma, eps, .. } => {
                let x = tape.pop();
                layernorm_bwd_input(&x, gamma, *eps, dy)
            }
            Layer::Gelu => {
                let x = tape.pop();
                gelu_bwd_input(&x, dy)
            }
        }
    }
}

pub fn forward_layers<T: Element>(
    layers: &[Layer<T>],
    x: &Tensor<T>,
    mut tape: Option<&mut Tape<T>>,
) -> Result<Tensor<T>> {
    let mut cur = x.clone();
    for layer in layers {
        cur = layer.forward(&cur, tape.as_deref_mut())?;
    }
    Ok(cur)
}

/// Reverse-mode gradient of <dy, forward_layers(x)> w.r.t. x; consumes the
/// saved inputs in reverse order.
pub fn backward_layers<T: Element>(
    layers: &[Layer<T>],
    dy: &Tensor<T>,
    tape: &mut Tape<T>,
) -> Tensor<T> {
    let mut grad = dy.clone();
    for layer in layers.iter().rev() {
        grad = layer.backward_input(&grad, tape);
    }
    grad
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "1d")]
    OneD,
    #[serde(rename = "1d++")]
    OneDPlusPlus,
    #[serde(rename = "2d++")]
    TwoDPlusPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StemKind {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "depthwise-1d")]
    Depthwise1D,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub c0: usize,
    pub channels: [usize; 4],
    pub blocks: [usize; 4],
    pub k: [usize; 4],
    pub d: usize,
    pub layerwise_shift_deg: f64,
    pub block_kind: BlockKind,
    pub stem_kind: StemKind,
}

impl NetworkConfig {
    /// ConvNeXt Tiny geometry.
    pub fn tiny(block_kind: BlockKind, stem_kind: StemKind) -> NetworkConfig {
        NetworkConfig {
            c0: 64,
            channels: [96, 192, 384, 768],
            blocks: [3, 3, 9, 3],
            k: [31, 31, 31, 31],
            d: 4,
            layerwise_shift_deg: 90.0,
            block_kind,
            stem_kind,
        }
    }

    pub fn from_json(json: &str) -> Result<NetworkConfig> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn validate(&self) -> Result<()> {
        for &c in &self.channels {
            if c % self.d != 0 && self.d != c {
                return Err(OrikError::InvalidConfig(format!(
                    "D={} must divide stage channel count {}",
                    self.d, c
                )));
            }
        }
        Ok(())
    }
}

/// Weight source for builders.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Random(u64),
}

/// Weight generator threaded through the builders so every parameter comes
/// from one seeded stream.
pub struct ParamGen {
    rng: Option<SplitMix64>,
}

impl ParamGen {
    pub fn new(init: Init) -> ParamGen {
        match init {
            Init::Zeros => ParamGen { rng: None },
            Init::Random(seed) => ParamGen { rng: Some(SplitMix64::new(seed)) },
        }
    }

    fn kernel1d<T: Element>(&mut self, k: usize, c: usize) -> KernelWeights1D<T> {
        match &mut self.rng {
            None => KernelWeights1D::zeros(k, c),
            Some(rng) => {
                let scale = 1.0 / (k as f64).sqrt();
                let mut w = KernelWeights1D::zeros(k, c);
                for v in w.data_mut() {
                    *v = T::from_f64_exact(rng.next_signed() * scale);
                }
                w
            }
        }
    }

    fn kernel2d<T: Element>(&mut self, r: usize, s: usize, c: usize) -> KernelWeights2D<T> {
        let mut w = KernelWeights2D::zeros(r, s, c);
        if let Some(rng) = &mut self.rng {
            let scale = 1.0 / ((r * s) as f64).sqrt();
            for ch in 0..c {
                for rr in 0..r {
                    for ss in 0..s {
                        w.set(rr, ss, ch, T::from_f64_exact(rng.next_signed() * scale));
                    }
                }
            }
        }
        w
    }

    fn pointwise<T: Element>(&mut self, c_in: usize, c_out: usize) -> PointwiseWeights<T> {
        let mut w = PointwiseWeights::zeros(c_in, c_out);
        if let Some(rng) = &mut self.rng {
            let scale = 1.0 / (c_in as f64).sqrt();
            for ci in 0..c_in {
                for co in 0..c_out {
                    w.set(ci, co, T::from_f64_exact(rng.next_signed() * scale));
                }
            }
        }
        w
    }

    fn conv2d<T: Element>(&mut self, r: usize, s: usize, c_in: usize, c_out: usize) -> Conv2dWeights<T> {
        match &mut self.rng {
            None => Conv2dWeights::zeros(r, s, c_in, c_out),
            Some(rng) => Conv2dWeights::random(r, s, c_in, c_out, rng),
        }
    }
}

fn layernorm_layer<T: Element>(c: usize) -> Layer<T> {
    Layer::LayerNorm { gamma: vec![T::one(); c], beta: vec![T::zero(); c], eps: 1e-6 }
}

fn oriented_layer<T: Element>(
    gen: &mut ParamGen,
    k: usize,
    c: usize,
    d: usize,
    layer_index: usize,
    shift_deg: f64,
    stride: usize,
) -> Result<Layer<T>> {
    let base = direction_angles(d, c)?;
    let angles = layerwise_angles(&base, layer_index, shift_deg);
    Ok(Layer::DwConv1d {
        w: gen.kernel1d(k, c),
        angles,
        cfg: ConvConfig::centered(k).with_stride(stride),
    })
}

/// Builds one block of the given kind over C channels. `layer_index` is the
/// block's depth for the layer-wise rotation schedule. K applies to the
/// oriented 1D kernels; the ++ kinds use min(K,15) for the main kernel and
/// min(K,31) for the residual large-kernel branch.
pub fn build_block<T: Element>(
    kind: BlockKind,
    c: usize,
    k: usize,
    d: usize,
    layer_index: usize,
    shift_deg: f64,
    gen: &mut ParamGen,
) -> Result<Layer<T>> {
    let expanded = 4 * c;
    let mut branch: Vec<Layer<T>> = Vec::new();
    match kind {
        BlockKind::TwoD | BlockKind::TwoDPlusPlus => {
            branch.push(Layer::DwConv2d { w: gen.kernel2d(7, 7, c), stride: 1, pad: 3 });
        }
        BlockKind::OneD => {
            branch.push(oriented_layer(gen, k, c, d, layer_index, shift_deg, 1)?);
        }
        BlockKind::OneDPlusPlus => {
            branch.push(oriented_layer(gen, k.min(15), c, d, layer_index, shift_deg, 1)?);
        }
    }
    branch.push(layernorm_layer(c));
    branch.push(Layer::Pointwise { w: gen.pointwise(c, expanded) });
    if matches!(kind, BlockKind::OneDPlusPlus | BlockKind::TwoDPlusPlus) {
        // residual large oriented kernel on the expanded features
        let aug = oriented_layer(gen, k.min(31), expanded, d, layer_index, shift_deg, 1)?;
        branch.push(Layer::Residual(vec![aug]));
    }
    branch.push(Layer::Gelu);
    branch.push(Layer::Pointwise { w: gen.pointwise(expanded, c) });
    Ok(Layer::Residual(branch))
}

/// Builds the stem. The 2D stem is a 4x4 stride-4 convolution; the
/// depthwise-1D stem alternates channel expansion/mixing with oriented 1x5
/// depthwise downsampling, for a total 4x spatial reduction.
pub fn build_stem<T: Element>(
    kind: StemKind,
    c_in: usize,
    c0: usize,
    c1: usize,
    gen: &mut ParamGen,
) -> Result<Vec<Layer<T>>> {
    match kind {
        StemKind::TwoD => Ok(vec![Layer::Conv2dFull { w: gen.conv2d(4, 4, c_in, c1), stride: 4 }]),
        StemKind::Depthwise1D => {
            let dw = |gen: &mut ParamGen, theta: f64, stride: usize| -> Layer<T> {
                Layer::DwConv1d {
                    w: gen.kernel1d(5, c0),
                    angles: AngleAssignment::uniform(theta, c0),
                    cfg: ConvConfig::centered(5).with_stride(stride),
                }
            };
            Ok(vec![
                Layer::Pointwise { w: gen.pointwise(c_in, c0) },
                dw(gen, 0.0, 2),
                dw(gen, 90.0, 1),
                Layer::Pointwise { w: gen.pointwise(c0, c0) },
                Layer::Gelu,
                dw(gen, 90.0, 2),
                dw(gen, 0.0, 1),
                Layer::Pointwise { w: gen.pointwise(c0, c1) },
                layernorm_layer(c1),
            ])
        }
    }
}

/// Assembled network: stem, then four stages of blocks separated by 2x2
/// stride-2 downsampling convolutions.
#[derive(Debug)]
pub struct Network<T: Element> {
    pub cfg: NetworkConfig,
    pub stem: Vec<Layer<T>>,
    /// Per stage: optional downsampler (absent for stage 1) and the blocks.
    pub stages: Vec<(Option<Layer<T>>, Vec<Layer<T>>)>,
    pub c_in: usize,
}

impl<T: Element> Network<T> {
    pub fn build(cfg: &NetworkConfig, c_in: usize, init: Init) -> Result<Network<T>> {
        cfg.validate()?;
        let mut gen = ParamGen::new(init);
        let capped = stage_kernel_caps(cfg.k);
        let stem = build_stem(cfg.stem_kind, c_in, cfg.c0, cfg.channels[0], &mut gen)?;
        let mut stages = Vec::with_capacity(4);
        for stage in 0..4 {
            let c = cfg.channels[stage];
            let down = if stage == 0 {
                None
            } else {
                Some(Layer::Conv2dFull {
                    w: gen.conv2d(2, 2, cfg.channels[stage - 1], c),
                    stride: 2,
                })
            };
            let mut blocks = Vec::with_capacity(cfg.blocks[stage]);
            for block_index in 0..cfg.blocks[stage] {
                blocks.push(build_block(
                    cfg.block_kind,
                    c,
                    capped[stage],
                    cfg.d,
                    block_index,
                    cfg.layerwise_shift_deg,
                    &mut gen,
                )?);
            }
            stages.push((down, blocks));
        }
        Ok(Network { cfg: cfg.clone(), stem, stages, c_in })
    }

    /// Forward pass; records to the tape when given. Returns the final
    /// feature map of shape (N, H/32, W/32, C4).
    pub fn forward(&self, x: &Tensor<T>, tape: Option<&mut Tape<T>>) -> Result<Tensor<T>> {
        Ok(self.forward_stages(x, tape)?.0)
    }

    /// Forward pass that also reports the per-stage output shapes.
    pub fn forward_stages(
        &self,
        x: &Tensor<T>,
        mut tape: Option<&mut Tape<T>>,
    ) -> Result<(Tensor<T>, Vec<(usize, usize, usize, usize)>)> {
        if !x.h().is_multiple_of(4) || !x.w().is_multiple_of(4) {
            return Err(OrikError::InvalidConfig(format!(
                "input H={} W={} must be divisible by 4",
                x.h(),
                x.w()
            )));
        }
        let mut cur = forward_layers(&self.stem, x, tape.as_deref_mut())?;
        let mut shapes = Vec::with_capacity(4);
        for (down, blocks) in &self.stages {
            if let Some(d) = down {
                cur = d.forward(&cur, tape.as_deref_mut())?;
            }
            cur = forward_layers(blocks, &cur, tape.as_deref_mut())?;
            shapes.push(cur.shape());
        }
        Ok((cur, shapes))
    }

    /// Exact reverse-mode gradient of <dy, output> w.r.t. the input, from a
    /// recorded forward.
    pub fn grad_input(&self, tape: &mut Tape<T>, dy: &Tensor<T>) -> Tensor<T> {
        let mut grad = dy.clone();
        for (down, blocks) in self.stages.iter().rev() {
            grad = backward_layers(blocks, &grad, tape);
            if let Some(d) = down {
                grad = d.backward_input(&grad, tape);
            }
        }
        backward_layers(&self.stem, &grad, tape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layernorm_hand_case() {
        let x = Tensor::from_data(1, 1, 1, 3, vec![1.0f64, 2.0, 3.0]).unwrap();
        let y = layernorm_fwd(&x, &[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0], 0.0).unwrap();
        let expect = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn layernorm_constant_and_gamma_zero() {
        let x = Tensor::from_data(1, 1, 1, 4, vec![3.0f64; 4]).unwrap();
        let y = layernorm_fwd(&x, &[1.0; 4], &[0.0; 4], 1e-6).unwrap();
        assert!(y.data().iter().all(|&v| v.abs() <= 1e-9));

        let x = Tensor::<f64>::random(1, 2, 2, 4, 3).unwrap();
        let y = layernorm_fwd(&x, &[0.0; 4], &[7.0; 4], 1e-6).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn gelu_values() {
        let x = Tensor::from_data(1, 1, 1, 3, vec![0.0f64, 1.0, 10.0]).unwrap();
        let y = gelu_fwd(&x);
        assert_eq!(y.get(0, 0, 0, 0), 0.0);
        assert!((y.get(0, 0, 0, 1) - 0.841345).abs() <= 1e-6);
        assert!((y.get(0, 0, 0, 2) - 10.0).abs() <= 1e-9);
    }

    #[test]
    fn residual_identity_with_zero_weights() {
        let c = 4;
        let x = Tensor::<f64>::random(2, 8, 8, c, 5).unwrap();
        let mut gen = ParamGen::new(Init::Zeros);
        for kind in [
            BlockKind::TwoD,
            BlockKind::OneD,
            BlockKind::OneDPlusPlus,
            BlockKind::TwoDPlusPlus,
        ] {
            let block = build_block::<f64>(kind, c, 7, 2, 0, 90.0, &mut gen).unwrap();
            let y = block.forward(&x, None).unwrap();
            assert_eq!(y.data(), x.data(), "{kind:?} not identity");
        }
    }

    #[test]
    fn blocks_preserve_shape() {
        let c = 4;
        let x = Tensor::<f32>::random(1, 6, 6, c, 7).unwrap();
        let mut gen = ParamGen::new(Init::Random(1));
        for kind in [
            BlockKind::TwoD,
            BlockKind::OneD,
            BlockKind::OneDPlusPlus,
            BlockKind::TwoDPlusPlus,
        ] {
            let block = build_block::<f32>(kind, c, 5, 2, 1, 90.0, &mut gen).unwrap();
            let y = block.forward(&x, None).unwrap();
            assert_eq!(y.shape(), x.shape());
        }
    }

    #[test]
    fn stems_downsample_4x() {
        let mut gen = ParamGen::new(Init::Random(2));
        let x = Tensor::<f32>::random(1, 16, 16, 3, 9).unwrap();
        for kind in [StemKind::TwoD, StemKind::Depthwise1D] {
            let stem = build_stem::<f32>(kind, 3, 4, 8, &mut gen).unwrap();
            let y = forward_layers(&stem, &x, None).unwrap();
            assert_eq!(y.shape(), (1, 4, 4, 8), "{kind:?}");
        }
    }

    #[test]
    fn stem_zero_weights_zero_output() {
        let mut gen = ParamGen::new(Init::Zeros);
        let x = Tensor::<f64>::random(1, 8, 8, 3, 11).unwrap();
        let stem = build_stem::<f64>(StemKind::TwoD, 3, 4, 8, &mut gen).unwrap();
        let y = forward_layers(&stem, &x, None).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiny_network_stage_shapes() {
        for block_kind in [
            BlockKind::TwoD,
            BlockKind::OneD,
            BlockKind::OneDPlusPlus,
            BlockKind::TwoDPlusPlus,
        ] {
            let mut cfg = NetworkConfig::tiny(block_kind, StemKind::TwoD);
            // one block per stage keeps the test quick; shapes are unaffected
            cfg.blocks = [1, 1, 1, 1];
            let net = Network::<f32>::build(&cfg, 3, Init::Random(3)).unwrap();
            let x = Tensor::<f32>::random(1, 64, 64, 3, 13).unwrap();
            let (y, shapes) = net.forward_stages(&x, None).unwrap();
            assert_eq!(y.shape(), (1, 2, 2, 768));
            assert_eq!(
                shapes,
                vec![(1, 16, 16, 96), (1, 8, 8, 192), (1, 4, 4, 384), (1, 2, 2, 768)]
            );
        }
    }

    #[test]
    fn zero_blocks_network_is_stem_plus_downsamplers() {
        let mut cfg = NetworkConfig::tiny(BlockKind::OneD, StemKind::TwoD);
        cfg.blocks = [0, 0, 0, 0];
        let net = Network::<f32>::build(&cfg, 3, Init::Random(5)).unwrap();
        let x = Tensor::<f32>::random(1, 32, 32, 3, 15).unwrap();
        let y = net.forward(&x, None).unwrap();
        assert_eq!(y.shape(), (1, 1, 1, 768));
    }

    #[test]
    fn input_not_divisible_by_4_rejected() {
        let cfg = NetworkConfig::tiny(BlockKind::OneD, StemKind::TwoD);
        let net = Network::<f32>::build(&cfg, 3, Init::Zeros).unwrap();
        let x = Tensor::<f32>::random(1, 66, 64, 3, 1).unwrap();
        assert!(net.forward(&x, None).is_err());
    }

    #[test]
    fn layerwise_angle_schedule_alternates() {
        let mut cfg = NetworkConfig::tiny(BlockKind::OneD, StemKind::TwoD);
        cfg.blocks = [2, 0, 0, 0];
        let net = Network::<f64>::build(&cfg, 3, Init::Zeros).unwrap();
        let blocks = &net.stages[0].1;
        let angle_of = |layer: &Layer<f64>| -> Vec<f64> {
            match layer {
                Layer::Residual(branch) => match &branch[0] {
                    Layer::DwConv1d { angles, .. } => angles.angles_deg.clone(),
                    other => panic!("unexpected head {other:?}"),
                },
                other => panic!("expected residual, got {other:?}"),
            }
        };
        let a0 = angle_of(&blocks[0]);
        let a1 = angle_of(&blocks[1]);
        for (x, y) in a0.iter().zip(&a1) {
            assert_eq!((x + 90.0).rem_euclid(180.0), *y);
        }
    }

    #[test]
    fn config_json_round_trip() {
        let json = r#"{
            "c0": 64,
            "channels": [96, 192, 384, 768],
            "blocks": [3, 3, 9, 3],
            "k": [31, 31, 31, 31],
            "d": 4,
            "layerwise_shift_deg": 90.0,
            "block_kind": "1d++",
            "stem_kind": "depthwise-1d"
        }"#;
        let cfg = NetworkConfig::from_json(json).unwrap();
        assert_eq!(cfg.block_kind, BlockKind::OneDPlusPlus);
        assert_eq!(cfg.stem_kind, StemKind::Depthwise1D);
        assert_eq!(cfg.channels, [96, 192, 384, 768]);
        let back = serde_json::to_string(&cfg).unwrap();
        let again = NetworkConfig::from_json(&back).unwrap();
        assert_eq!(again.blocks, cfg.blocks);
    }

    #[test]
    fn conv2d_full_valid_size() {
        let x = Tensor::<f64>::random(1, 8, 8, 2, 17).unwrap();
        let mut rng = SplitMix64::new(1);
        let w = Conv2dWeights::<f64>::random(4, 4, 2, 5, &mut rng);
        let y = conv2d_full_fwd(&x, &w, 4).unwrap();
        assert_eq!(y.shape(), (1, 2, 2, 5));
    }

    #[test]
    fn tape_balances_forward_backward() {
        let mut cfg = NetworkConfig::tiny(BlockKind::OneDPlusPlus, StemKind::Depthwise1D);
        cfg.c0 = 4;
        cfg.channels = [4, 4, 4, 4];
        cfg.blocks = [1, 1, 1, 1];
        cfg.d = 2;
        let net = Network::<f64>::build(&cfg, 3, Init::Random(7)).unwrap();
        let x = Tensor::<f64>::random(1, 32, 32, 3, 19).unwrap();
        let mut tape = Tape::new();
        let y = net.forward(&x, Some(&mut tape)).unwrap();
        let dy = Tensor::<f64>::random(1, y.h(), y.w(), y.c(), 23).unwrap();
        let dx = net.grad_input(&mut tape, &dy);
        assert!(tape.is_empty());
        assert_eq!(dx.shape(), x.shape());
    }
}
