//! Layers built on the gradient tape: fully-connected layers, stacked GRUs
//! over packed variable-length sequences, parameter storage and checkpoints.
//!
//! Weight matrices are stored `input × output` so that a batch of row vectors
//! multiplies on the left (`x · W`).

mod gru;
mod params;

pub use gru::{GruLayer, GruStack};
pub use params::{
    init_params, load_checkpoint, save_checkpoint, Bound, Init, ModelParams, ParamSpec, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use crate::autodiff::{AutodiffError, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("unknown tensor {0:?}")]
    UnknownTensor(String),
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("tensor {name:?} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint i/o: {0}")]
    Io(std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::None => x,
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// `act(x · W + b)` with `W: in × out`, `b: out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Linear { name: name.into(), in_dim, out_dim, activation }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        vec![ParamSpec::weight(self.weight_name(), self.in_dim, self.out_dim), ParamSpec::bias(self.bias_name(), self.out_dim)]
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var, NnError> {
        let w = p.get(&self.weight_name())?;
        let b = p.get(&self.bias_name())?;
        let y = tape.matmul(x, w)?;
        let y = tape.add_row(y, b)?;
        Ok(self.activation.apply(tape, y))
    }
}
