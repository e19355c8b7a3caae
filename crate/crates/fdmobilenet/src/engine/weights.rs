//! Weight containers and the FDW1 binary container format.
//!
//! An FDW1 file is a little-endian sequence of layer entries:
//!
//! ```text
//! magic   4 bytes  "FDW1"
//! count   u32      number of entries
//! entry   repeated:
//!   layer u32      index into the architecture's layer list
//!   tag   u8       0 conv, 1 depthwise, 2 pointwise, 3 batch norm, 4 fc
//!   ndim  u32      number of dimensions that follow
//!   dims  u32 * ndim
//!   data  f32 * product(dims)
//! ```
//!
//! Dims per tag: conv `(c_out, c_in, k, k)`, depthwise `(c, 1, k, k)`,
//! pointwise `(c_out, c_in, 1, 1)`, batch norm `(4, c)` with rows gamma,
//! beta, mean, variance (epsilon is not stored; readers use the library
//! default), fc `(c_out, c_in + 1)` with the bias as the last column.
//! Convolution entries never carry a bias: the models are built with
//! bias-free convolutions and pick up their shift from batch norm.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{ArchitectureSpec, LayerKind};
use crate::ops::{BnParams, ConvWeights, FcWeights, OpError, DEFAULT_BN_EPSILON};

const MAGIC: &[u8; 4] = b"FDW1";

/// Errors reading or writing weight containers.
#[derive(Debug, thiserror::Error)]
pub enum WeightError {
    #[error("bad magic: expected \"FDW1\"")]
    BadMagic,
    #[error("unknown layer tag {0}")]
    UnknownTag(u8),
    #[error("entry for layer {layer}: expected {expected} dims, found {found}")]
    BadDims {
        layer: u32,
        expected: usize,
        found: usize,
    },
    #[error("entry for layer {layer} is malformed: {source}")]
    BadEntry { layer: u32, source: OpError },
    #[error("duplicate entry for layer {0}")]
    DuplicateEntry(usize),
    #[error("convolution biases cannot be serialized")]
    UnsupportedBias,
    #[error("file ends mid-entry")]
    Truncated,
    #[error("data continues past the last entry")]
    TrailingBytes,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Weights for one layer, matching the layer's kind.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeights {
    Conv(ConvWeights),
    Depthwise(ConvWeights),
    Pointwise(ConvWeights),
    BatchNorm(BnParams),
    Fc(FcWeights),
}

impl LayerWeights {
    fn tag(&self) -> u8 {
        match self {
            LayerWeights::Conv(_) => 0,
            LayerWeights::Depthwise(_) => 1,
            LayerWeights::Pointwise(_) => 2,
            LayerWeights::BatchNorm(_) => 3,
            LayerWeights::Fc(_) => 4,
        }
    }

    /// Name used in diagnostics.
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerWeights::Conv(_) => "conv",
            LayerWeights::Depthwise(_) => "depthwise_conv",
            LayerWeights::Pointwise(_) => "pointwise_conv",
            LayerWeights::BatchNorm(_) => "batch_norm",
            LayerWeights::Fc(_) => "fc",
        }
    }
}

/// All weights of a model, keyed by layer index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: BTreeMap<usize, LayerWeights>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, layer: usize, w: LayerWeights) -> Result<(), WeightError> {
        if self.entries.contains_key(&layer) {
            return Err(WeightError::DuplicateEntry(layer));
        }
        self.entries.insert(layer, w);
        Ok(())
    }

    /// Insert or replace, unlike the collision-checking [`Self::insert`].
    pub fn set(&mut self, layer: usize, w: LayerWeights) {
        self.entries.insert(layer, w);
    }

    pub fn remove(&mut self, layer: usize) -> Option<LayerWeights> {
        self.entries.remove(&layer)
    }

    pub fn get(&self, layer: usize) -> Option<&LayerWeights> {
        self.entries.get(&layer)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn layer_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), WeightError> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (&layer, entry) in &self.entries {
            w.write_all(&(layer as u32).to_le_bytes())?;
            w.write_all(&[entry.tag()])?;
            let (dims, data): (Vec<u32>, Vec<f32>) = match entry {
                LayerWeights::Conv(c) | LayerWeights::Depthwise(c) | LayerWeights::Pointwise(c) => {
                    if c.bias().is_some() {
                        return Err(WeightError::UnsupportedBias);
                    }
                    let per_filter = if matches!(entry, LayerWeights::Depthwise(_)) { 1 } else { c.c_in() };
                    (
                        vec![c.c_out() as u32, per_filter as u32, c.kernel() as u32, c.kernel() as u32],
                        c.data().to_vec(),
                    )
                }
                LayerWeights::BatchNorm(p) => {
                    let mut data = Vec::with_capacity(4 * p.channels());
                    data.extend_from_slice(p.gamma());
                    data.extend_from_slice(p.beta());
                    data.extend_from_slice(p.mean());
                    data.extend_from_slice(p.var());
                    (vec![4, p.channels() as u32], data)
                }
                LayerWeights::Fc(p) => {
                    let (c_out, c_in) = (p.c_out(), p.c_in());
                    let mut data = Vec::with_capacity(c_out * (c_in + 1));
                    for o in 0..c_out {
                        data.extend_from_slice(&p.weights()[o * c_in..(o + 1) * c_in]);
                        data.push(p.bias()[o]);
                    }
                    (vec![c_out as u32, (c_in + 1) as u32], data)
                }
            };
            w.write_all(&(dims.len() as u32).to_le_bytes())?;
            for d in &dims {
                w.write_all(&d.to_le_bytes())?;
            }
            for v in &data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, WeightError> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(WeightError::BadMagic);
        }
        let count = read_u32(r)?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let layer = read_u32(r)?;
            let mut tag = [0u8; 1];
            read_exact(r, &mut tag)?;
            let ndim = read_u32(r)? as usize;
            let expected = match tag[0] {
                0..=2 => 4,
                3 | 4 => 2,
                t => return Err(WeightError::UnknownTag(t)),
            };
            if ndim != expected {
                return Err(WeightError::BadDims { layer, expected, found: ndim });
            }
            let mut dims = vec![0usize; ndim];
            for d in dims.iter_mut() {
                *d = read_u32(r)? as usize;
            }
            let len: usize = dims.iter().product();
            let mut data = vec![0f32; len];
            for v in data.iter_mut() {
                let mut b = [0u8; 4];
                read_exact(r, &mut b)?;
                *v = f32::from_le_bytes(b);
            }
            let bad = |source: OpError| WeightError::BadEntry { layer, source };
            let entry = match tag[0] {
                0 => LayerWeights::Conv(
                    ConvWeights::standard(dims[0], dims[1], dims[2], data, None).map_err(bad)?,
                ),
                1 => {
                    if dims[1] != 1 {
                        return Err(WeightError::BadDims { layer, expected: 1, found: dims[1] });
                    }
                    LayerWeights::Depthwise(
                        ConvWeights::depthwise(dims[0], dims[2], data, None).map_err(bad)?,
                    )
                }
                2 => LayerWeights::Pointwise(
                    ConvWeights::standard(dims[0], dims[1], dims[2], data, None).map_err(bad)?,
                ),
                3 => {
                    if dims[0] != 4 {
                        return Err(WeightError::BadDims { layer, expected: 4, found: dims[0] });
                    }
                    let c = dims[1];
                    LayerWeights::BatchNorm(
                        BnParams::new(
                            data[..c].to_vec(),
                            data[c..2 * c].to_vec(),
                            data[2 * c..3 * c].to_vec(),
                            data[3 * c..].to_vec(),
                            DEFAULT_BN_EPSILON,
                        )
                        .map_err(bad)?,
                    )
                }
                4 => {
                    let (c_out, c_in) = (dims[0], dims[1] - 1);
                    let mut weights = Vec::with_capacity(c_out * c_in);
                    let mut bias = Vec::with_capacity(c_out);
                    for o in 0..c_out {
                        let row = &data[o * (c_in + 1)..(o + 1) * (c_in + 1)];
                        weights.extend_from_slice(&row[..c_in]);
                        bias.push(row[c_in]);
                    }
                    LayerWeights::Fc(FcWeights::new(c_out, c_in, weights, bias).map_err(bad)?)
                }
                _ => unreachable!("tag already validated"),
            };
            store.insert(layer as usize, entry)?;
        }
        Ok(store)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), WeightError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, WeightError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightError> {
        let mut cursor = bytes;
        let store = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(WeightError::TrailingBytes);
        }
        Ok(store)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), WeightError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            WeightError::Truncated
        } else {
            WeightError::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, WeightError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Deterministic random weights for every weighted layer of `spec`.
///
/// Filters and FC weights are drawn uniformly from `[-s, s]` with
/// `s = sqrt(6 / (fan_in + fan_out))`; batch norm starts as the identity
/// transform and FC biases at zero. The same seed always produces the
/// same store.
pub fn init_random_weights(spec: &ArchitectureSpec, seed: u64) -> WeightStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    let draw = |count: usize, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
        let dist = Uniform::new_inclusive(-s, s);
        (0..count).map(|_| dist.sample(rng)).collect::<Vec<f32>>()
    };
    for (index, layer) in spec.layers.iter().enumerate() {
        let k2 = layer.kernel * layer.kernel;
        let entry = match layer.kind {
            LayerKind::Conv => LayerWeights::Conv(
                ConvWeights::standard(
                    layer.c_out,
                    layer.c_in,
                    layer.kernel,
                    draw(layer.c_out * layer.c_in * k2, layer.c_in * k2, layer.c_out * k2, &mut rng),
                    None,
                )
                .expect("validated spec produces valid conv weights"),
            ),
            LayerKind::DepthwiseConv => LayerWeights::Depthwise(
                ConvWeights::depthwise(
                    layer.c_out,
                    layer.kernel,
                    draw(layer.c_out * k2, k2, k2, &mut rng),
                    None,
                )
                .expect("validated spec produces valid depthwise weights"),
            ),
            LayerKind::PointwiseConv => LayerWeights::Pointwise(
                ConvWeights::standard(
                    layer.c_out,
                    layer.c_in,
                    1,
                    draw(layer.c_out * layer.c_in, layer.c_in, layer.c_out, &mut rng),
                    None,
                )
                .expect("validated spec produces valid pointwise weights"),
            ),
            LayerKind::BatchNorm => LayerWeights::BatchNorm(BnParams::identity(layer.c_out)),
            LayerKind::Fc => LayerWeights::Fc(
                FcWeights::new(
                    layer.c_out,
                    layer.c_in,
                    draw(layer.c_out * layer.c_in, layer.c_in, layer.c_out, &mut rng),
                    vec![0.0; layer.c_out],
                )
                .expect("validated spec produces valid fc weights"),
            ),
            LayerKind::Relu | LayerKind::GlobalAvgPool | LayerKind::Softmax => continue,
        };
        store
            .insert(index, entry)
            .expect("layer indices are unique");
    }
    store
}
