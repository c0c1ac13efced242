//! Integer filter-offset tables from angles, kernel sizes and paddings.
//!
//! An oriented 1D kernel is applied by mapping each tap index k to a
//! relative input position (dh, dw). The rotation parameterization samples
//! taps on concentric radii; the shear parameterizations intersect the
//! filter axis with integer columns or rows instead.

use serde::{Deserialize, Serialize};

use crate::error::{OrikError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    Rotation,
    ShearX,
    ShearY,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discretization {
    RoundDown,
    Bilinear,
}

/// Configuration of a single oriented 1D convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvConfig {
    pub k: usize,
    /// Scalar padding; non-integer values are allowed for the even-kernel
    /// variant.
    pub pad: f64,
    /// Stride applied to both axes.
    pub stride: usize,
    pub parameterization: Parameterization,
    pub discretization: Discretization,
    /// Exterior padding (pad_h, pad_w) for even-sized kernels.
    pub even_pad: Option<(i64, i64)>,
}

impl ConvConfig {
    /// Centered rotation config with pad = floor(K/2), stride 1, round-down.
    pub fn centered(k: usize) -> ConvConfig {
        ConvConfig {
            k,
            pad: (k / 2) as f64,
            stride: 1,
            parameterization: Parameterization::Rotation,
            discretization: Discretization::RoundDown,
            even_pad: None,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> ConvConfig {
        self.stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(OrikError::InvalidConfig("kernel size K must be >= 1".into()));
        }
        if self.stride == 0 {
            return Err(OrikError::InvalidConfig("stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Offset table for one channel angle under this config.
    pub fn table_for_angle(&self, theta_deg: f64) -> Result<OffsetTable> {
        self.validate()?;
        let mut table = match self.parameterization {
            Parameterization::Rotation => {
                offsets_rotation(self.k, self.pad, theta_deg, self.discretization)?
            }
            Parameterization::ShearX => offsets_shear(self.k, self.pad, theta_deg, ShearAxis::X)?,
            Parameterization::ShearY => offsets_shear(self.k, self.pad, theta_deg, ShearAxis::Y)?,
        };
        if let Some((pad_h, pad_w)) = self.even_pad {
            for e in &mut table.entries {
                e.0 -= pad_h;
                e.1 -= pad_w;
            }
        }
        Ok(table)
    }
}

/// Per-tap integer (dh, dw) offsets, plus fractional parts under bilinear
/// discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetTable {
    pub entries: Vec<(i64, i64)>,
    pub fractional: Option<Vec<(f64, f64)>>,
}

impl OffsetTable {
    pub fn k(&self) -> usize {
        self.entries.len()
    }

    /// Largest |dh| and |dw| over the table; the halo a tile must load.
    pub fn halo(&self) -> (i64, i64) {
        let mut hh = 0;
        let mut hw = 0;
        for &(dh, dw) in &self.entries {
            hh = hh.max(dh.abs());
            hw = hw.max(dw.abs());
        }
        if self.fractional.is_some() {
            // bilinear reads one extra neighbor in each direction
            hh += 1;
            hw += 1;
        }
        (hh, hw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShearAxis {
    X,
    Y,
}

/// Per-channel angle vector in degrees, each in [0, 360).
#[derive(Debug, Clone, PartialEq)]
pub struct AngleAssignment {
    pub angles_deg: Vec<f64>,
    pub directions: usize,
}

impl AngleAssignment {
    /// A single angle replicated over all channels.
    pub fn uniform(theta_deg: f64, channels: usize) -> AngleAssignment {
        AngleAssignment {
            angles_deg: vec![theta_deg.rem_euclid(360.0); channels],
            directions: 1,
        }
    }

    pub fn channels(&self) -> usize {
        self.angles_deg.len()
    }
}

/// sin/cos in f64, snapped to exact {0, +-1} at multiples of 90 degrees so
/// that floor boundaries cannot flip from trig noise.
pub fn snapped_sin_cos(theta_deg: f64) -> (f64, f64) {
    let norm = theta_deg.rem_euclid(360.0);
    if norm % 90.0 == 0.0 {
        let quadrant = (norm / 90.0) as i64 % 4;
        return match quadrant {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        };
    }
    // evaluate on the representative in (-180, 180] so an angle and its
    // mod-360 form give identical trig bits (floors must not depend on how
    // the caller spelled the angle)
    let centered = if norm > 180.0 { norm - 360.0 } else { norm };
    let rad = centered.to_radians();
    (rad.sin(), rad.cos())
}

/// True mathematical floor as integer; -0.0 maps to 0.
#[inline]
fn floor_i64(v: f64) -> i64 {
    v.floor() as i64
}

/// Rotation-parameterized table: entry[k] = floor((k-pad) * (-sin t, cos t)).
pub fn offsets_rotation(
    k: usize,
    pad: f64,
    theta_deg: f64,
    discretization: Discretization,
) -> Result<OffsetTable> {
    if k == 0 {
        return Err(OrikError::InvalidConfig("kernel size K must be >= 1".into()));
    }
    let (sin_t, cos_t) = snapped_sin_cos(theta_deg);
    let mut entries = Vec::with_capacity(k);
    let mut fractional = Vec::with_capacity(k);
    for tap in 0..k {
        let radius = tap as f64 - pad;
        let dh = -radius * sin_t;
        let dw = radius * cos_t;
        let (ih, iw) = (floor_i64(dh), floor_i64(dw));
        entries.push((ih, iw));
        fractional.push((dh - ih as f64, dw - iw as f64));
    }
    Ok(OffsetTable {
        entries,
        fractional: match discretization {
            Discretization::RoundDown => None,
            Discretization::Bilinear => Some(fractional),
        },
    })
}

/// Shear-parameterized table. Axis X intersects integer columns:
/// entry[k] = (floor(-(k-pad) tan t), k-pad). Axis Y intersects integer
/// rows: entry[k] = (k-pad, floor(-(k-pad) cot t)).
pub fn offsets_shear(k: usize, pad: f64, theta_deg: f64, axis: ShearAxis) -> Result<OffsetTable> {
    if k == 0 {
        return Err(OrikError::InvalidConfig("kernel size K must be >= 1".into()));
    }
    let (sin_t, cos_t) = snapped_sin_cos(theta_deg);
    match axis {
        ShearAxis::X if cos_t == 0.0 => {
            return Err(OrikError::InvalidConfig(format!(
                "shear axis x degenerate at theta={theta_deg} (cos = 0)"
            )));
        }
        ShearAxis::Y if sin_t == 0.0 => {
            return Err(OrikError::InvalidConfig(format!(
                "shear axis y degenerate at theta={theta_deg} (sin = 0)"
            )));
        }
        _ => {}
    }
    // tan/cot snapped to exact integers at multiples of 45 degrees so the
    // paper-exact diagonals cannot flip on a floor boundary
    let exact_45 = theta_deg.rem_euclid(45.0) == 0.0;
    let tan_t = if exact_45 { (sin_t / cos_t).round() } else { sin_t / cos_t };
    let cot_t = if exact_45 { (cos_t / sin_t).round() } else { cos_t / sin_t };
    let mut entries = Vec::with_capacity(k);
    for tap in 0..k {
        let radius = tap as f64 - pad;
        let e = match axis {
            ShearAxis::X => (floor_i64(-radius * tan_t), floor_i64(radius)),
            ShearAxis::Y => (floor_i64(radius), floor_i64(-radius * cot_t)),
        };
        entries.push(e);
    }
    Ok(OffsetTable { entries, fractional: None })
}

/// Even-kernel table with real-valued pad and exterior padding:
/// entry[k] = floor((k-pad) * (-sin t, cos t)) - (pad_h, pad_w).
pub fn offsets_even(
    k: usize,
    pad: f64,
    pad_h: i64,
    pad_w: i64,
    theta_deg: f64,
) -> Result<OffsetTable> {
    let mut table = offsets_rotation(k, pad, theta_deg, Discretization::RoundDown)?;
    for e in &mut table.entries {
        e.0 -= pad_h;
        e.1 -= pad_w;
    }
    Ok(table)
}

/// Partition C channels into D contiguous equal groups; group i gets angle
/// i*180/D. For D == C, channel c gets c*180/C.
pub fn direction_angles(directions: usize, channels: usize) -> Result<AngleAssignment> {
    if directions == 0 || channels == 0 {
        return Err(OrikError::InvalidConfig("D and C must be >= 1".into()));
    }
    if !channels.is_multiple_of(directions) && directions != channels {
        return Err(OrikError::InvalidConfig(format!(
            "D={directions} must divide C={channels} (or equal it)"
        )));
    }
    let angles_deg = (0..channels)
        .map(|c| {
            let group = c * directions / channels;
            group as f64 * 180.0 / directions as f64
        })
        .collect();
    Ok(AngleAssignment { angles_deg, directions })
}

/// Two-phase layer-wise rotation: angles[c] = (base[c] + shift*(layer mod 2))
/// mod 180.
pub fn layerwise_angles(
    base: &AngleAssignment,
    layer_index: usize,
    shift_deg: f64,
) -> AngleAssignment {
    let shift = shift_deg * (layer_index % 2) as f64;
    AngleAssignment {
        angles_deg: base
            .angles_deg
            .iter()
            .map(|a| (a + shift).rem_euclid(180.0))
            .collect(),
        directions: base.directions,
    }
}

/// Per-stage kernel caps for the 224^2 ConvNeXt geometry.
pub const STAGE_KERNEL_CAPS: [usize; 4] = [31, 31, 27, 15];

pub fn stage_kernel_caps(requested: [usize; 4]) -> [usize; 4] {
    let mut capped = requested;
    for (k, cap) in capped.iter_mut().zip(STAGE_KERNEL_CAPS) {
        *k = (*k).min(cap);
    }
    capped
}
