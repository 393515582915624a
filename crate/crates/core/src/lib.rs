//! Recurrent graph classification over BFS-ordered adjacency sequences, with
//! an optional variational auto-regressive regularizer that predicts each next
//! node's adjacency row from the running hidden state.
//!
//! Pipeline: [`graphio`] loads TU-format datasets, [`ordering`] turns a graph
//! into a truncated BFS adjacency sequence, [`model`] embeds it with GRUs and
//! classifies, [`var`] adds the variational next-row predictor, [`train`] runs
//! Adam over cross-validation folds, and [`eval`] aggregates predictions over
//! many BFS roots at test time.

pub mod autodiff;
pub mod eval;
pub mod graphio;
pub mod model;
pub mod nn;
pub mod ordering;
pub mod seeds;
pub mod train;
pub mod var;

pub use autodiff::{Tape, Tensor, Var};
pub use graphio::{Dataset, Graph};
pub use model::{Vrgc, VrgcConfig};
pub use ordering::EncodedGraph;
