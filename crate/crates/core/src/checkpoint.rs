//! Binary tensor container for checkpoints and datasets.
//!
//! Layout (all integers little-endian):
//!   magic "AGNO" | u32 version | u32 tensor count
//!   per tensor:  u32 name length | name bytes (UTF-8) | u32 rank | u64 dims...
//!   then all payloads in manifest order, row-major f64 little-endian.
//!
//! Round-trips are bit-exact: every f64 is written and read through its raw
//! byte image, so NaN payloads and signed zeros survive.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"AGNO";
const VERSION: u32 = 1;

/// Guards against absurd manifests from corrupt or hostile files.
const MAX_TENSORS: u32 = 1 << 20;
const MAX_NAME_LEN: u32 = 4096;
const MAX_RANK: u32 = 8;
const MAX_ELEMENTS: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorEntry {
    pub fn element_count(&self) -> usize {
        self.dims.iter().product()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a named tensor. Names must be unique; data length must match
    /// the product of dims.
    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        let expect: usize = dims.iter().product();
        if data.len() != expect {
            return Err(Error::Shape(format!(
                "tensor '{name}': dims {dims:?} imply {expect} values, got {}",
                data.len()
            )));
        }
        if self.tensors.iter().any(|t| t.name == name) {
            return Err(Error::Usage(format!("duplicate tensor name '{name}'")));
        }
        self.tensors.push(TensorEntry { name, dims, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&TensorEntry> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("missing tensor '{name}'")))
    }

    /// Fetches a rank-0/rank-1 single value, e.g. stored counts and codes.
    pub fn require_scalar(&self, name: &str) -> Result<f64> {
        let t = self.require(name)?;
        if t.data.len() != 1 {
            return Err(Error::Format(format!(
                "tensor '{name}' holds {} values, expected 1",
                t.data.len()
            )));
        }
        Ok(t.data[0])
    }

    pub fn tensors(&self) -> &[TensorEntry] {
        &self.tensors
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let count = u32::try_from(self.tensors.len())
            .map_err(|_| Error::Usage("too many tensors".to_string()))?;
        w.write_all(&count.to_le_bytes())?;
        for t in &self.tensors {
            let name_len = u32::try_from(t.name.len())
                .map_err(|_| Error::Usage(format!("tensor name too long: '{}'", t.name)))?;
            w.write_all(&name_len.to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            let rank = u32::try_from(t.dims.len()).expect("rank fits u32");
            w.write_all(&rank.to_le_bytes())?;
            for d in &t.dims {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
        }
        for t in &self.tensors {
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let count = read_u32(&mut r)?;
        if count > MAX_TENSORS {
            return Err(Error::Format(format!("tensor count {count} too large")));
        }
        let mut manifest = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = read_u32(&mut r)?;
            if name_len > MAX_NAME_LEN {
                return Err(Error::Format(format!("name length {name_len} too large")));
            }
            let mut name_bytes = vec![0u8; name_len as usize];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::Format("tensor name is not UTF-8".to_string()))?;
            let rank = read_u32(&mut r)?;
            if rank > MAX_RANK {
                return Err(Error::Format(format!("rank {rank} too large")));
            }
            let mut dims = Vec::with_capacity(rank as usize);
            let mut elements: u64 = 1;
            for _ in 0..rank {
                let d = read_u64(&mut r)?;
                elements = elements.saturating_mul(d);
                dims.push(usize::try_from(d).map_err(|_| {
                    Error::Format(format!("dimension {d} does not fit in usize"))
                })?);
            }
            if elements > MAX_ELEMENTS {
                return Err(Error::Format(format!(
                    "tensor '{name}' declares {elements} elements, limit {MAX_ELEMENTS}"
                )));
            }
            manifest.push((name, dims));
        }
        let mut tensors = Vec::with_capacity(manifest.len());
        for (name, dims) in manifest {
            let n: usize = dims.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            tensors.push(TensorEntry { name, dims, data });
        }
        // Trailing bytes mean the manifest and payload disagree.
        let mut one = [0u8; 1];
        match r.read(&mut one)? {
            0 => Ok(Self { tensors }),
            _ => Err(Error::Format("trailing bytes after payload".to_string())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        Self::read_from(BufReader::new(file))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Stores an MLP under `prefix`: per-layer weight/bias tensors plus an
/// activation-code vector, enough to rebuild the network without any
/// out-of-band architecture description.
pub fn push_mlp(ckpt: &mut Checkpoint, prefix: &str, mlp: &crate::nn::Mlp) -> Result<()> {
    let codes: Vec<f64> = mlp.activations().iter().map(|a| a.code() as f64).collect();
    ckpt.push(format!("{prefix}.activations"), vec![codes.len()], codes)?;
    for (i, layer) in mlp.layers().iter().enumerate() {
        ckpt.push(
            format!("{prefix}.layer{i}.weight"),
            vec![layer.out_dim, layer.in_dim],
            layer.weights.clone(),
        )?;
        ckpt.push(
            format!("{prefix}.layer{i}.bias"),
            vec![layer.out_dim],
            layer.bias.clone(),
        )?;
    }
    Ok(())
}

pub fn read_mlp(ckpt: &Checkpoint, prefix: &str) -> Result<crate::nn::Mlp> {
    use crate::nn::{Activation, DenseParams, Mlp};
    let codes = ckpt.require(&format!("{prefix}.activations"))?;
    let mut layers = Vec::with_capacity(codes.data.len());
    let mut activations = Vec::with_capacity(codes.data.len());
    for (i, code) in codes.data.iter().enumerate() {
        activations.push(Activation::from_code(*code as u8)?);
        let w = ckpt.require(&format!("{prefix}.layer{i}.weight"))?;
        let b = ckpt.require(&format!("{prefix}.layer{i}.bias"))?;
        if w.dims.len() != 2 || b.dims.len() != 1 || w.dims[0] != b.dims[0] {
            return Err(Error::Format(format!(
                "tensor shapes for '{prefix}.layer{i}' are inconsistent"
            )));
        }
        layers.push(DenseParams {
            in_dim: w.dims[1],
            out_dim: w.dims[0],
            weights: w.data.clone(),
            bias: b.data.clone(),
        });
    }
    Mlp::new(layers, activations)
}
