//! WHLF: a little-endian container for `[layers × frames × dim]` feature stacks.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "WHLF"
//! 4       4     version (u32, currently 1)
//! 8       4     layers (u32)
//! 12      4     frames (u32)
//! 16      4     dim (u32)
//! 20      4     dtype code (u32, 0 = f32)
//! 24      ...   payload, [layer][frame][dim] order
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use tensorcore::Tensor;

use super::{FrontendError, Result};

pub const WHLF_MAGIC: [u8; 4] = *b"WHLF";
pub const WHLF_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;
/// Reserved for half-precision payloads; not readable yet.
pub const DTYPE_F16: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureFileHeader {
    pub version: u32,
    pub layers: u32,
    pub frames: u32,
    pub dim: u32,
    pub dtype_code: u32,
}

impl FeatureFileHeader {
    pub fn payload_len(&self) -> u64 {
        self.layers as u64 * self.frames as u64 * self.dim as u64 * 4
    }

    fn to_bytes(self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[..4].copy_from_slice(&WHLF_MAGIC);
        for (i, v) in [self.version, self.layers, self.frames, self.dim, self.dtype_code]
            .into_iter()
            .enumerate()
        {
            b[4 + 4 * i..8 + 4 * i].copy_from_slice(&v.to_le_bytes());
        }
        b
    }
}

/// Per-layer encoder outputs for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    pub layers: usize,
    pub frames: usize,
    pub dim: usize,
    data: Vec<f32>,
}

impl LayerStack {
    pub fn new(layers: usize, frames: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != layers * frames * dim {
            return Err(FrontendError::Config(format!(
                "stack {layers}x{frames}x{dim} needs {} values, got {}",
                layers * frames * dim,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(FrontendError::NonFinite);
        }
        Ok(Self { layers, frames, dim, data })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn layer(&self, l: usize) -> &[f32] {
        let n = self.frames * self.dim;
        &self.data[l * n..(l + 1) * n]
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.layers, self.frames, self.dim]
    }

    /// `[layers, frames * dim]` view used by layer fusion.
    pub fn to_matrix(&self) -> Tensor<f32> {
        Tensor::new([self.layers, self.frames * self.dim], self.data.clone()).expect("shape checked at construction")
    }

    pub fn header(&self) -> FeatureFileHeader {
        FeatureFileHeader {
            version: WHLF_VERSION,
            layers: self.layers as u32,
            frames: self.frames as u32,
            dim: self.dim as u32,
            dtype_code: DTYPE_F32,
        }
    }
}

pub fn write_features(stack: &LayerStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |source| FrontendError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut buf = Vec::with_capacity(HEADER_LEN + stack.data.len() * 4);
    buf.extend_from_slice(&stack.header().to_bytes());
    for v in &stack.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&buf).map_err(io)
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

pub fn read_header(bytes: &[u8], path: &Path) -> Result<FeatureFileHeader> {
    if bytes.len() < 4 {
        return Err(FrontendError::TruncatedHeader { path: path.to_path_buf() });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != WHLF_MAGIC {
        return Err(FrontendError::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(FrontendError::TruncatedHeader { path: path.to_path_buf() });
    }
    let header = FeatureFileHeader {
        version: u32_at(bytes, 4),
        layers: u32_at(bytes, 8),
        frames: u32_at(bytes, 12),
        dim: u32_at(bytes, 16),
        dtype_code: u32_at(bytes, 20),
    };
    if header.version != WHLF_VERSION {
        return Err(FrontendError::UnsupportedVersion {
            path: path.to_path_buf(),
            version: header.version,
        });
    }
    if header.dtype_code != DTYPE_F32 {
        return Err(FrontendError::DtypeMismatch {
            path: path.to_path_buf(),
            code: header.dtype_code,
        });
    }
    Ok(header)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<LayerStack> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| FrontendError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let h = read_header(&bytes, path)?;
    let expected = h.payload_len();
    let actual = (bytes.len() - HEADER_LEN) as u64;
    if actual < expected {
        return Err(FrontendError::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    if actual > expected {
        return Err(FrontendError::TrailingBytes {
            path: path.to_path_buf(),
            expected,
            extra: actual - expected,
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LayerStack::new(h.layers as usize, h.frames as usize, h.dim as usize, data)
}
