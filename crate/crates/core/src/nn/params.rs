use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;

use super::NnError;
use crate::autodiff::{Gradients, Tape, Tensor, Var};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VRGC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn weight(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        ParamSpec { name: name.into(), shape: vec![fan_in, fan_out], init: Init::Glorot { fan_in, fan_out } }
    }

    pub fn bias(name: impl Into<String>, len: usize) -> Self {
        ParamSpec { name: name.into(), shape: vec![len], init: Init::Zeros }
    }
}

/// Named parameter tensors of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub version: u32,
    pub tensors: BTreeMap<String, Tensor>,
}

pub fn init_params<R: Rng + ?Sized>(specs: &[ParamSpec], rng: &mut R) -> Result<ModelParams, NnError> {
    let mut tensors = BTreeMap::new();
    for s in specs {
        let numel = s.shape.iter().product();
        let data = match s.init {
            Init::Zeros => vec![0.0; numel],
            Init::Glorot { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..numel).map(|_| rng.random_range(-limit..limit)).collect()
            }
        };
        if tensors.insert(s.name.clone(), Tensor::new(s.shape.clone(), data)?).is_some() {
            return Err(NnError::DuplicateName(s.name.clone()));
        }
    }
    Ok(ModelParams { version: CHECKPOINT_VERSION, tensors })
}

impl ModelParams {
    pub fn get(&self, name: &str) -> Result<&Tensor, NnError> {
        self.tensors.get(name).ok_or_else(|| NnError::MissingTensor(name.to_string()))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Same names and shapes, all values zero.
    pub fn zeros_like(&self) -> ModelParams {
        let tensors = self.tensors.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect();
        ModelParams { version: self.version, tensors }
    }

    /// Records every tensor as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self.tensors.iter().map(|(k, t)| (k.clone(), tape.param(t.clone()))).collect();
        Bound { vars }
    }

    /// Verifies that names and shapes match `specs` exactly.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<(), NnError> {
        for s in specs {
            let t = self.get(&s.name)?;
            if t.shape() != s.shape.as_slice() {
                return Err(NnError::ShapeMismatch { name: s.name.clone(), expected: s.shape.clone(), found: t.shape().to_vec() });
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !specs.iter().any(|s| &s.name == *k)) {
            return Err(NnError::UnknownTensor(extra.clone()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(NnError::BadMagic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Version(version));
        }
        let count = r.u64()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| NnError::Format("tensor name is not UTF-8".into()))?.to_string();
            let rank = r.u32()? as usize;
            if rank == 0 || rank > 8 {
                return Err(NnError::Format(format!("tensor {name:?} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut numel: usize = 1;
            for _ in 0..rank {
                let d = usize::try_from(r.u64()?).map_err(|_| NnError::Truncated)?;
                numel = numel.checked_mul(d).ok_or(NnError::Truncated)?;
                shape.push(d);
            }
            let payload = r.take(numel.checked_mul(8).ok_or(NnError::Truncated)?)?;
            let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let t = Tensor::new(shape, data).map_err(|e| NnError::Format(format!("tensor {name:?}: {e}")))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(NnError::DuplicateName(name));
            }
        }
        if r.pos != bytes.len() {
            return Err(NnError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(ModelParams { version, tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(NnError::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Writes through a temporary file and renames it into place.
pub fn save_checkpoint(p: &ModelParams, path: impl AsRef<Path>) -> Result<(), NnError> {
    let path = path.as_ref();
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, p.to_bytes()).map_err(NnError::Io)?;
    fs::rename(&tmp, path).map_err(NnError::Io)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams, NnError> {
    ModelParams::from_bytes(&fs::read(path).map_err(NnError::Io)?)
}

/// Tape handles for every parameter of one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var, NnError> {
        self.vars.get(name).copied().ok_or_else(|| NnError::MissingTensor(name.to_string()))
    }

    /// Substitutes the handle used for `name` (e.g. to probe one tensor in a gradient check).
    pub fn replace(&mut self, name: &str, v: Var) {
        self.vars.insert(name.to_string(), v);
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    /// Gradient per parameter; zeros for parameters the loss did not reach.
    pub fn grads(&self, g: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars.iter().map(|(k, &v)| (k.clone(), g.get_or_zeros(v))).collect()
    }
}
