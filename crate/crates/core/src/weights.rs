//! Named parameter tensors and the TXKW container.
//!
//! TXKW layout (little-endian): magic `b"TXKW"`, u32 record count, then per
//! record a u32 name length, the UTF-8 name, and an embedded TXK1 tensor.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{read_exact_or_truncated, read_tensor_from, read_u32, FeatureMap};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"TXKW";

/// Seed for the bundled default parameters.
pub const DEFAULT_WEIGHT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightSet {
    entries: Vec<(String, FeatureMap)>,
}

impl WeightSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Container format revision; TXKW has only one.
    pub fn version(&self) -> u32 {
        1
    }

    pub fn insert(&mut self, name: impl Into<String>, map: FeatureMap) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::DuplicateName(name));
        }
        self.entries.push((name, map));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&FeatureMap> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn require(&self, name: &str) -> Result<&FeatureMap> {
        self.get(name).ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FeatureMap)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    /// Reads `name` as a matrix stored as a 1×rows×cols map.
    pub fn matrix(&self, name: &str, rows: Option<usize>, cols: Option<usize>) -> Result<Array2<f64>> {
        let m = self.require(name)?;
        let (c, h, w) = m.dims();
        if c != 1 || rows.is_some_and(|r| r != h) || cols.is_some_and(|k| k != w) {
            return Err(Error::ShapeMismatch(format!(
                "weight {name:?} has shape {c}x{h}x{w}, expected 1x{}x{}",
                rows.map_or("?".into(), |r| r.to_string()),
                cols.map_or("?".into(), |k| k.to_string()),
            )));
        }
        Ok(Array2::from_shape_vec((h, w), m.data().iter().map(|&v| f64::from(v)).collect())
            .expect("shape checked above"))
    }

    /// Reads `name` as a vector stored as a 1×1×len map.
    pub fn vector(&self, name: &str, len: usize) -> Result<Array1<f64>> {
        let m = self.require(name)?;
        if m.dims() != (1, 1, len) {
            return Err(Error::ShapeMismatch(format!(
                "weight {name:?} has shape {:?}, expected 1x1x{len}",
                m.dims()
            )));
        }
        Ok(m.data().iter().map(|&v| f64::from(v)).collect())
    }

    pub fn insert_matrix(&mut self, name: &str, m: &Array2<f64>) -> Result<()> {
        let (r, c) = m.dim();
        let data: Vec<f64> = m.iter().copied().collect();
        self.insert(name, FeatureMap::from_f64(1, r, c, &data)?)
    }

    pub fn insert_vector(&mut self, name: &str, v: &Array1<f64>) -> Result<()> {
        let data: Vec<f64> = v.iter().copied().collect();
        self.insert(name, FeatureMap::from_f64(1, 1, v.len(), &data)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = WEIGHTS_MAGIC.to_vec();
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, map) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&map.to_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        read_exact_or_truncated(&mut r, &mut magic, "weights magic")?;
        if magic != WEIGHTS_MAGIC {
            return Err(Error::BadMagic {
                expected: WEIGHTS_MAGIC,
                found: magic,
            });
        }
        let count = read_u32(&mut r, "record count")?;
        let mut set = WeightSet::new();
        for _ in 0..count {
            let len = read_u32(&mut r, "name length")? as usize;
            let mut name = Vec::new();
            (&mut r)
                .take(len as u64)
                .read_to_end(&mut name)
                .map_err(|e| Error::Truncated(e.to_string()))?;
            if name.len() != len {
                return Err(Error::Truncated("weight name".into()));
            }
            let name = String::from_utf8(name)
                .map_err(|e| Error::InvalidConfig(format!("weight name is not UTF-8: {e}")))?;
            let map = read_tensor_from(&mut r)?;
            set.insert(name, map)?;
        }
        if (r.position() as usize) != bytes.len() {
            return Err(Error::Truncated("trailing bytes after last weight record".into()));
        }
        Ok(set)
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    WeightSet::from_bytes(&bytes)
}

pub fn write_weights(set: &WeightSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, set.to_bytes()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Layer widths of the bundled default parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DefaultDims {
    /// Channels C of the feature map the modules will see.
    pub channels: usize,
    pub tiem_hidden: usize,
    /// MLP output width; C₁ = C + this.
    pub tiem_mlp_out: usize,
    /// C₂, width of the reconstructed levels.
    pub tiem_level_dim: usize,
    pub ctiem_hidden: usize,
    pub ctiem_mlp_out: usize,
    /// Number of dilation steps the adaptation MLP expects.
    pub ctiem_steps: usize,
    pub ctiem_adapt_hidden: usize,
    /// C₃, width of the texture vector T.
    pub ctiem_out: usize,
}

impl DefaultDims {
    pub fn for_channels(channels: usize) -> Self {
        Self {
            channels,
            tiem_hidden: 16,
            tiem_mlp_out: 16,
            tiem_level_dim: 64,
            ctiem_hidden: 16,
            ctiem_mlp_out: 16,
            ctiem_steps: 3,
            ctiem_adapt_hidden: 32,
            ctiem_out: 32,
        }
    }
}

/// Weight and bias names of one affine layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerNames {
    pub weight: String,
    pub bias: String,
}

impl LayerNames {
    /// `<prefix>.w` / `<prefix>.b`, used for the 1×1 projections.
    pub fn linear(prefix: &str) -> Self {
        Self {
            weight: format!("{prefix}.w"),
            bias: format!("{prefix}.b"),
        }
    }

    /// `<prefix>.w{i}` / `<prefix>.b{i}`, used for MLP layers.
    pub fn mlp(prefix: &str, layer: usize) -> Self {
        Self {
            weight: format!("{prefix}.w{layer}"),
            bias: format!("{prefix}.b{layer}"),
        }
    }
}

struct XavierInit {
    rng: ChaCha8Rng,
}

impl XavierInit {
    fn matrix(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        Array2::from_shape_simple_fn((rows, cols), || self.rng.gen_range(-a..a))
    }

    fn layer(&mut self, set: &mut WeightSet, names: LayerNames, inp: usize, out: usize) -> Result<()> {
        let w = self.matrix(out, inp);
        set.insert_matrix(&names.weight, &w)?;
        set.insert_vector(&names.bias, &Array1::zeros(out))
    }
}

/// Xavier-uniform parameters for every TIEM and C-TIEM layer, from a fixed seed.
pub fn default_weights(dims: &DefaultDims) -> WeightSet {
    let mut init = XavierInit {
        rng: ChaCha8Rng::seed_from_u64(DEFAULT_WEIGHT_SEED),
    };
    let mut set = WeightSet::new();
    let c1 = dims.channels + dims.tiem_mlp_out;
    let block = dims.ctiem_mlp_out + dims.channels;
    let layers = [
        (LayerNames::mlp("tiem.mlp", 1), 2, dims.tiem_hidden),
        (LayerNames::mlp("tiem.mlp", 2), dims.tiem_hidden, dims.tiem_mlp_out),
        (LayerNames::linear("tiem.phi1"), c1, dims.tiem_level_dim),
        (LayerNames::linear("tiem.phi2"), c1, dims.tiem_level_dim),
        (LayerNames::linear("tiem.phi3"), c1, dims.tiem_level_dim),
        (LayerNames::mlp("ctiem.mlp", 1), 3, dims.ctiem_hidden),
        (LayerNames::mlp("ctiem.mlp", 2), dims.ctiem_hidden, dims.ctiem_mlp_out),
        (LayerNames::mlp("ctiem.adapt", 1), dims.ctiem_steps * block, dims.ctiem_adapt_hidden),
        (LayerNames::mlp("ctiem.adapt", 2), dims.ctiem_adapt_hidden, dims.ctiem_out),
    ];
    for (names, inp, out) in layers {
        init.layer(&mut set, names, inp, out)
            .expect("default layer names are unique and finite");
    }
    set
}
