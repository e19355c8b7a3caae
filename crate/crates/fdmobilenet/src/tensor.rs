//! Dense 4-D NCHW tensors, shape arithmetic and FDT1 binary I/O.
//!
//! A [`Tensor`] is a flat `f32` buffer in row-major `(n, c, h, w)` order;
//! element `(n, c, h, w)` lives at flat index `((n*C + c)*H + h)*W + w`.
//! Tensors are immutable after construction, so sharing them across
//! threads is safe.

use std::io::{self, Read, Write};

use thiserror::Error;

/// FDT1 tensor file magic.
pub const FDT1_MAGIC: [u8; 4] = *b"FDT1";

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("all dimensions must be >= 1, got {0}x{1}x{2}x{3}")]
    ZeroDim(usize, usize, usize, usize),
    #[error("data length {got} does not match shape {shape} ({expected} elements)")]
    LengthMismatch {
        shape: Shape,
        expected: usize,
        got: usize,
    },
    #[error("invalid convolution geometry: in_dim={in_dim} kernel={kernel} stride={stride} pad={pad}")]
    InvalidConvGeometry {
        in_dim: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    #[error("bad magic: expected \"FDT1\", got {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported ndim {0}, only 4-D tensors are stored")]
    UnsupportedNdim(u32),
    #[error("dimension product overflows addressable size")]
    DimOverflow,
    #[error("truncated tensor payload")]
    Truncated,
    #[error("trailing bytes after tensor payload")]
    TrailingBytes,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Logical extent of a 4-D tensor: batch, channels, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self, TensorError> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(TensorError::ZeroDim(n, c, h, w));
        }
        n.checked_mul(c)
            .and_then(|p| p.checked_mul(h))
            .and_then(|p| p.checked_mul(w))
            .and_then(|p| p.checked_mul(4))
            .ok_or(TensorError::DimOverflow)?;
        Ok(Shape { n, c, h, w })
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Flat index of element `(n, c, h, w)`.
    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(n < self.n && c < self.c && h < self.h && w < self.w);
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

impl TryFrom<[usize; 4]> for Shape {
    type Error = TensorError;
    fn try_from(d: [usize; 4]) -> Result<Self, TensorError> {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

impl From<Shape> for [usize; 4] {
    fn from(s: Shape) -> [usize; 4] {
        [s.n, s.c, s.h, s.w]
    }
}

/// Dense 4-D `f32` tensor in NCHW layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self, TensorError> {
        if data.len() != shape.numel() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected: shape.numel(),
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn filled(shape: Shape, value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    // Mutation is confined to construction sites inside the crate.
    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.shape.index(n, c, h, w)]
    }
}

/// Spatial output extent of a convolution: `floor((in + 2*pad - k)/stride) + 1`.
pub fn conv_output_dim(
    in_dim: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize, TensorError> {
    if kernel == 0 || stride == 0 || in_dim + 2 * pad < kernel {
        return Err(TensorError::InvalidConvGeometry {
            in_dim,
            kernel,
            stride,
            pad,
        });
    }
    Ok((in_dim + 2 * pad - kernel) / stride + 1)
}

/// Serialize in FDT1 format: magic, u32 LE ndim (4), four u32 LE dims,
/// then the flat f32 LE payload.
pub fn write_tensor(t: &Tensor, w: &mut impl Write) -> io::Result<()> {
    w.write_all(&FDT1_MAGIC)?;
    w.write_all(&4u32.to_le_bytes())?;
    let s = t.shape();
    for dim in [s.n, s.c, s.h, s.w] {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor, TensorError> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(r, &mut magic)?;
    if magic != FDT1_MAGIC {
        return Err(TensorError::BadMagic(magic));
    }
    let ndim = read_u32(r)?;
    if ndim != 4 {
        return Err(TensorError::UnsupportedNdim(ndim));
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = read_u32(r)? as usize;
    }
    let shape = Shape::try_from(dims)?;
    let mut data = vec![0.0f32; shape.numel()];
    let mut buf = [0u8; 4];
    for v in data.iter_mut() {
        read_exact_or_truncated(r, &mut buf)?;
        *v = f32::from_le_bytes(buf);
    }
    Tensor::new(shape, data)
}

pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + t.numel() * 4);
    write_tensor(t, &mut out).expect("writing to a Vec cannot fail");
    out
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor, TensorError> {
    let mut cursor = bytes;
    let t = read_tensor(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(TensorError::TrailingBytes);
    }
    Ok(t)
}

fn read_u32(r: &mut impl Read) -> Result<u32, TensorError> {
    let mut buf = [0u8; 4];
    read_exact_or_truncated(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8]) -> Result<(), TensorError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            TensorError::Truncated
        } else {
            TensorError::Io(e)
        }
    })
}
