//! Desk-scale quantitative checks: MAD accounting, effective-receptive-field
//! maps, the 2x2 downsampling decomposition and Gaussian separability.

use std::io::Write;
use std::path::Path;

use crate::error::{OrikError, Result};
use crate::model::{backward_layers, forward_layers, Init, Layer, Network, NetworkConfig, Tape};
use crate::offsets::OffsetTable;
use crate::reference::{dwconv2d_standard_fwd, dwconv_table_fwd, KernelWeights1D, KernelWeights2D};
use crate::scalar::Element;
use crate::tensor::Tensor;

/// Closed-form multiply-add tally per output element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MadTally {
    pub op_id: String,
    pub per_element_mads: u64,
    pub total_mads: u64,
}

/// Per-element MAD count for the covered ops; `elements` = N*P*Q*C scales
/// the total. C' is required for the pointwise and separable ops.
pub fn mad_count(op_id: &str, k: u64, c_prime: Option<u64>, elements: u64) -> Result<MadTally> {
    let need_cprime = || {
        c_prime.ok_or_else(|| OrikError::InvalidConfig(format!("op {op_id} requires --cprime")))
    };
    let per = match op_id {
        "dw1d" => k,
        "dw2d" => k * k,
        "dw1d-bilinear" => 4 * k,
        "pw" => need_cprime()?,
        "dsc1d" => k + need_cprime()?,
        "dsc2d" => k * k + need_cprime()?,
        other => {
            return Err(OrikError::InvalidConfig(format!(
                "unknown op {other}; expected dw1d|dw2d|dw1d-bilinear|pw|dsc1d|dsc2d"
            )))
        }
    };
    Ok(MadTally {
        op_id: op_id.to_string(),
        per_element_mads: per,
        total_mads: per * elements,
    })
}

/// H x W non-negative input-gradient magnitudes, normalized so the maximum
/// is 1 unless the map is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ErfMap {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f64>,
}

impl ErfMap {
    pub fn get(&self, h: usize, w: usize) -> f64 {
        self.values[h * self.w + w]
    }

    fn normalize(&mut self) {
        let max = self.values.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            for v in &mut self.values {
                *v /= max;
            }
        }
    }

    /// Support = pixels with nonzero contribution.
    pub fn support(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for h in 0..self.h {
            for w in 0..self.w {
                if self.get(h, w) != 0.0 {
                    out.push((h, w));
                }
            }
        }
        out
    }

    /// Binary PGM (P5), values scaled to [0,255] by the map maximum.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::with_capacity(self.values.len() + 32);
        buf.extend_from_slice(format!("P5\n{} {}\n255\n", self.w, self.h).as_bytes());
        let max = self.values.iter().cloned().fold(0.0, f64::max);
        let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
        for &v in &self.values {
            buf.push((v * scale).round().clamp(0.0, 255.0) as u8);
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }
}

/// ERF of an ad-hoc layer stack: average |d(central output sum)/d(input)|
/// over samples and channels. The central activation is the floor-center
/// output pixel summed across channels.
pub fn erf_map_layers<T: Element>(
    layers: &[Layer<T>],
    c_in: usize,
    input_size: usize,
    n_samples: usize,
    seed: u64,
) -> Result<ErfMap> {
    let mut map = ErfMap { h: input_size, w: input_size, values: vec![0.0; input_size * input_size] };
    for sample in 0..n_samples {
        let x = Tensor::<T>::random(1, input_size, input_size, c_in, seed ^ (sample as u64) << 1)?;
        let mut tape = Tape::new();
        let y = forward_layers(layers, &x, Some(&mut tape))?;
        let (_, p_out, q_out, c_out) = y.shape();
        let mut dy = Tensor::<T>::zeros(1, p_out, q_out, c_out)?;
        for ch in 0..c_out {
            dy.set(0, p_out / 2, q_out / 2, ch, T::one());
        }
        let dx = backward_layers(layers, &dy, &mut tape);
        for h in 0..input_size {
            for w in 0..input_size {
                let mut acc = 0.0;
                for ch in 0..c_in {
                    acc += dx.get(0, h, w, ch).to_f64().unwrap().abs();
                }
                map.values[h * input_size + w] += acc / c_in as f64;
            }
        }
    }
    map.normalize();
    Ok(map)
}

/// ERF of a full network built from a config with seeded random parameters.
pub fn erf_map<T: Element>(
    cfg: &NetworkConfig,
    params_seed: u64,
    n_samples: usize,
    input_size: usize,
    seed: u64,
) -> Result<ErfMap> {
    let c_in = 3;
    let net = Network::<T>::build(cfg, c_in, Init::Random(params_seed))?;
    let mut map = ErfMap { h: input_size, w: input_size, values: vec![0.0; input_size * input_size] };
    for sample in 0..n_samples {
        let x = Tensor::<T>::random(1, input_size, input_size, c_in, seed ^ (sample as u64) << 1)?;
        let mut tape = Tape::new();
        let y = net.forward(&x, Some(&mut tape))?;
        let (_, p_out, q_out, c_out) = y.shape();
        let mut dy = Tensor::<T>::zeros(1, p_out, q_out, c_out)?;
        for ch in 0..c_out {
            dy.set(0, p_out / 2, q_out / 2, ch, T::one());
        }
        let dx = net.grad_input(&mut tape, &dy);
        for h in 0..input_size {
            for w in 0..input_size {
                let mut acc = 0.0;
                for ch in 0..c_in {
                    acc += dx.get(0, h, w, ch).to_f64().unwrap().abs();
                }
                map.values[h * input_size + w] += acc / c_in as f64;
            }
        }
    }
    map.normalize();
    Ok(map)
}

fn split_2x2<T: Element>(
    w2x2: &KernelWeights2D<T>,
) -> (KernelWeights1D<T>, KernelWeights1D<T>) {
    let c = w2x2.c;
    let mut diag = KernelWeights1D::zeros(2, c);
    let mut anti = KernelWeights1D::zeros(2, c);
    for ch in 0..c {
        diag.set(0, ch, w2x2.get(0, 0, ch));
        diag.set(1, ch, w2x2.get(1, 1, ch));
        anti.set(0, ch, w2x2.get(0, 1, ch));
        anti.set(1, ch, w2x2.get(1, 0, ch));
    }
    (diag, anti)
}

/// Max abs error of "2x2 stride-2 conv == diagonal + anti-diagonal oriented
/// convolutions" on one input.
pub fn verify_downsampling_decomposition<T: Element>(
    w2x2: &KernelWeights2D<T>,
    x: &Tensor<T>,
) -> Result<f64> {
    if w2x2.r != 2 || w2x2.s != 2 {
        return Err(OrikError::InvalidShape("expected a 2x2 kernel".into()));
    }
    let c = x.c();
    if w2x2.c != c {
        return Err(OrikError::ShapeMismatch(format!(
            "channels disagree: x.C={} w.C={}",
            c, w2x2.c
        )));
    }
    let (diag_w, anti_w) = split_2x2(w2x2);
    let diag_table = OffsetTable { entries: vec![(0, 0), (1, 1)], fractional: None };
    let anti_table = OffsetTable { entries: vec![(0, 1), (1, 0)], fractional: None };
    let map: Vec<usize> = vec![0; c];
    let y1 = dwconv_table_fwd(x, &diag_w, std::slice::from_ref(&diag_table), &map, 2, &mut 0)?;
    let y2 = dwconv_table_fwd(x, &anti_w, std::slice::from_ref(&anti_table), &map, 2, &mut 0)?;
    let mut sum = y1.clone();
    for (a, b) in sum.data_mut().iter_mut().zip(y2.data()) {
        *a = *a + *b;
    }
    let oracle = dwconv2d_standard_fwd(x, w2x2, 2, 0)?;
    Ok(sum.max_abs_diff(&oracle))
}

/// Worst error of the decomposition over `seed_count` random (w, x) pairs.
pub fn downsampling_decomposition_sweep<T: Element>(
    h: usize,
    w: usize,
    c: usize,
    seed_count: u64,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for seed in 0..seed_count {
        let kernel = KernelWeights2D::<T>::random(2, 2, c, 1000 + seed);
        let x = Tensor::<T>::random(1, h, w, c, 2000 + seed)?;
        worst = worst.max(verify_downsampling_decomposition(&kernel, &x)?);
    }
    Ok(worst)
}

/// Axis-aligned truncated Gaussian pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSpec {
    pub sigma1: f64,
    pub sigma2: f64,
    pub k: usize,
}

impl GaussianSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigma1 <= 0.0 || self.sigma2 <= 0.0 {
            return Err(OrikError::InvalidConfig("sigmas must be > 0".into()));
        }
        if self.k == 0 || self.k.is_multiple_of(2) {
            return Err(OrikError::InvalidConfig("K must be odd and >= 1".into()));
        }
        Ok(())
    }
}

/// 1D Gaussian taps truncated to K and normalized to sum 1.
pub fn gaussian_taps<T: Element>(sigma: f64, k: usize) -> Vec<T> {
    let pad = (k / 2) as f64;
    let raw: Vec<f64> = (0..k)
        .map(|i| {
            let d = i as f64 - pad;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| T::from_f64_exact(v / sum)).collect()
}

/// Max abs error of "horizontal then vertical 1D Gaussian == K x K
/// outer-product 2D Gaussian" on one input.
pub fn gaussian_separability_check<T: Element>(spec: &GaussianSpec, x: &Tensor<T>) -> Result<f64> {
    spec.validate()?;
    let c = x.c();
    let k = spec.k;
    let g1 = gaussian_taps::<T>(spec.sigma1, k); // horizontal
    let g2 = gaussian_taps::<T>(spec.sigma2, k); // vertical
    let w1 = KernelWeights1D::from_taps(&g1, c);
    let w2 = KernelWeights1D::from_taps(&g2, c);
    let angles0 = crate::offsets::AngleAssignment::uniform(0.0, c);
    let angles90 = crate::offsets::AngleAssignment::uniform(90.0, c);
    let cfg = crate::offsets::ConvConfig::centered(k);
    let mid = crate::reference::dwconv1d_fwd(x, &w1, &angles0, &cfg)?;
    let composed = crate::reference::dwconv1d_fwd(&mid, &w2, &angles90, &cfg)?;

    // the vertical pass at 90 deg visits rows in reversed tap order, so the
    // 2D outer product uses g2 flipped (a no-op for symmetric Gaussians)
    let mut w2d = KernelWeights2D::zeros(k, k, c);
    for r in 0..k {
        for s in 0..k {
            let v = g2[k - 1 - r].to_f64().unwrap() * g1[s].to_f64().unwrap();
            for ch in 0..c {
                w2d.set(r, s, ch, T::from_f64_exact(v));
            }
        }
    }
    let oracle = dwconv2d_standard_fwd(x, &w2d, 1, k / 2)?;
    Ok(composed.max_abs_diff(&oracle))
}
