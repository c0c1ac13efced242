//! Dense NHWC tensor, deterministic random generation and the shared
//! binary file format.
//!
//! Layout is row-major with channels fastest-varying, so the per-channel
//! inner loops of the convolution kernels walk contiguous memory.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{OrikError, Result};
use crate::scalar::{Dtype, Element};

/// Magic bytes "OT1D" at the start of every tensor file.
pub const TENSOR_MAGIC: [u8; 4] = [0x4F, 0x54, 0x31, 0x44];
pub const TENSOR_FORMAT_VERSION: u16 = 1;

/// Dense NHWC tensor. Immutable once constructed for readers; mutation is
/// single-owner.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Element> {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Result<Tensor<T>> {
        Self::check_dims(n, h, w, c)?;
        Ok(Tensor { n, h, w, c, data: vec![T::zero(); n * h * w * c] })
    }

    pub fn from_data(n: usize, h: usize, w: usize, c: usize, data: Vec<T>) -> Result<Tensor<T>> {
        Self::check_dims(n, h, w, c)?;
        if data.len() != n * h * w * c {
            return Err(OrikError::InvalidShape(format!(
                "data length {} != {}x{}x{}x{}",
                data.len(),
                n,
                h,
                w,
                c
            )));
        }
        Ok(Tensor { n, h, w, c, data })
    }

    /// Uniform values in [-1, 1) from a SplitMix64 stream; pure in
    /// (shape, seed).
    pub fn random(n: usize, h: usize, w: usize, c: usize, seed: u64) -> Result<Tensor<T>> {
        Self::check_dims(n, h, w, c)?;
        let mut rng = SplitMix64::new(seed);
        let data = (0..n * h * w * c)
            .map(|_| T::from_f64_exact(rng.next_unit() * 2.0 - 1.0))
            .collect();
        Ok(Tensor { n, h, w, c, data })
    }

    fn check_dims(n: usize, h: usize, w: usize, c: usize) -> Result<()> {
        if n == 0 || h == 0 || w == 0 || c == 0 {
            return Err(OrikError::InvalidShape(format!(
                "all dims must be >= 1, got ({n},{h},{w},{c})"
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.h, self.w, self.c)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn h(&self) -> usize {
        self.h
    }
    pub fn w(&self) -> usize {
        self.w
    }
    pub fn c(&self) -> usize {
        self.c
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, n: usize, h: usize, w: usize, c: usize) -> usize {
        ((n * self.h + h) * self.w + w) * self.c + c
    }

    #[inline]
    pub fn get(&self, n: usize, h: usize, w: usize, c: usize) -> T {
        self.data[self.index(n, h, w, c)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, h: usize, w: usize, c: usize, v: T) {
        let i = self.index(n, h, w, c);
        self.data[i] = v;
    }

    /// Zero-padded read: out-of-bounds coordinates contribute 0.
    #[inline]
    pub fn get_padded(&self, n: usize, h: i64, w: i64, c: usize) -> T {
        if h < 0 || w < 0 || h >= self.h as i64 || w >= self.w as i64 {
            T::zero()
        } else {
            self.data[self.index(n, h as usize, w as usize, c)]
        }
    }

    /// Writes the tensor in the shared binary format (little-endian):
    /// magic "OT1D", u16 version, u8 dtype, u8 rank, rank x u64 dims,
    /// payload row-major with the last dim contiguous.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + self.data.len() * T::DTYPE.size_bytes());
        buf.extend_from_slice(&TENSOR_MAGIC);
        buf.extend_from_slice(&TENSOR_FORMAT_VERSION.to_le_bytes());
        buf.push(T::DTYPE as u8);
        buf.push(4u8);
        for d in [self.n, self.h, self.w, self.c] {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            v.write_le(&mut buf);
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Tensor<T>> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Tensor<T>> {
        let fail = |offset: usize, message: &str| OrikError::Format {
            offset,
            message: message.to_string(),
        };
        if bytes.len() < 4 || bytes[..4] != TENSOR_MAGIC {
            return Err(fail(0, "bad magic, expected OT1D"));
        }
        if bytes.len() < 8 {
            return Err(fail(4, "truncated header"));
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != TENSOR_FORMAT_VERSION {
            return Err(fail(4, &format!("unsupported version {version}")));
        }
        let dtype = Dtype::from_code(bytes[6])
            .ok_or_else(|| fail(6, &format!("unknown dtype code {}", bytes[6])))?;
        if dtype != T::DTYPE {
            return Err(fail(6, &format!("dtype {:?} does not match requested", dtype)));
        }
        let rank = bytes[7] as usize;
        if rank != 4 {
            return Err(fail(7, &format!("unsupported rank {rank}, expected 4")));
        }
        let dims_end = 8 + rank * 8;
        if bytes.len() < dims_end {
            return Err(fail(8, "truncated dims"));
        }
        let mut dims = [0usize; 4];
        for (i, d) in dims.iter_mut().enumerate() {
            let off = 8 + i * 8;
            *d = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize;
        }
        let count = dims.iter().product::<usize>();
        let payload = &bytes[dims_end..];
        let elem = T::DTYPE.size_bytes();
        if payload.len() != count * elem {
            return Err(fail(
                dims_end,
                &format!("truncated payload: {} bytes, expected {}", payload.len(), count * elem),
            ));
        }
        let data = payload.chunks_exact(elem).map(T::read_le).collect();
        Tensor::from_data(dims[0], dims[1], dims[2], dims[3], data)
    }

    /// Max absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs().to_f64().unwrap())
            .fold(0.0, f64::max)
    }
}

/// SplitMix64 stream; same seed gives an identical byte-for-byte stream on
/// every platform.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> SplitMix64 {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform f64 in [0, 1) using the top 53 bits.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform f64 in [-1, 1).
    pub fn next_signed(&mut self) -> f64 {
        self.next_unit() * 2.0 - 1.0
    }
}
