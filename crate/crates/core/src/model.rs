//! The full classifier.
//!
//! ```text
//! rows ─ FC(d_n→64) ─ GRU×2 (embedding, 128) ─┬─ GRU×2 (classifier, 128, dropout) ─ h̃ ─ FC+ReLU ─ FC ─ softmax
//!                                             └─ VAR: predict row i from state i-1
//! ```
//!
//! Sequences in a batch are packed: sorted by length, longest first, each
//! step holding only the sequences still running. The classifier reads its
//! state at each graph's last real node, so zero padding never reaches it.

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::nn::{init_params, Activation, Bound, GruStack, Linear, ModelParams, NnError, ParamSpec};
use crate::ordering::EncodedGraph;
use crate::seeds::StreamRng;
use crate::var::{PredNormalization, VarBlock, VarOutput};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("label {label} outside {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("bad batch: {0}")]
    Batch(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VrgcConfig {
    pub d_n: usize,
    pub n_g: usize,
    pub num_classes: usize,
    pub pre_embed_dim: usize,
    pub pre_embed_activation: Activation,
    pub embed_hidden: usize,
    pub embed_layers: usize,
    pub classifier_hidden: usize,
    pub classifier_layers: usize,
    pub head_hidden: usize,
    pub latent_dim: usize,
    pub decoder_hidden: usize,
    pub dropout: f64,
    pub alpha: f64,
    /// VAR term on (VRGC) or off (RGC).
    pub variational: bool,
    pub pred_normalization: PredNormalization,
}

impl VrgcConfig {
    /// Default widths: 64-wide pre-embedding, 2×128 GRUs, 8-dim latent, dropout 0.25, α = 0.1.
    pub fn new(d_n: usize, n_g: usize, num_classes: usize) -> Self {
        VrgcConfig {
            d_n,
            n_g,
            num_classes,
            pre_embed_dim: 64,
            pre_embed_activation: Activation::None,
            embed_hidden: 128,
            embed_layers: 2,
            classifier_hidden: 128,
            classifier_layers: 2,
            head_hidden: 128,
            latent_dim: 8,
            decoder_hidden: 32,
            dropout: 0.25,
            alpha: 0.1,
            variational: true,
            pred_normalization: PredNormalization::PerGraphSum,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("d_n", self.d_n),
            ("n_g", self.n_g),
            ("num_classes", self.num_classes),
            ("pre_embed_dim", self.pre_embed_dim),
            ("embed_hidden", self.embed_hidden),
            ("embed_layers", self.embed_layers),
            ("classifier_hidden", self.classifier_hidden),
            ("classifier_layers", self.classifier_layers),
            ("head_hidden", self.head_hidden),
            ("latent_dim", self.latent_dim),
            ("decoder_hidden", self.decoder_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(ModelError::Config(format!("alpha must be a finite non-negative number, got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Row layout of a packed batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packing {
    /// Packed slot -> batch index, longest sequence first.
    order: Vec<usize>,
    /// Length of the sequence in each packed slot.
    lengths: Vec<usize>,
    steps: Vec<usize>,
    offsets: Vec<usize>,
}

impl Packing {
    /// `lengths[b]` is the number of real steps of batch element `b` (at least 1).
    pub fn new(lengths: &[usize]) -> Self {
        let mut order: Vec<usize> = (0..lengths.len()).collect();
        order.sort_by_key(|&b| std::cmp::Reverse(lengths[b]));
        let sorted: Vec<usize> = order.iter().map(|&b| lengths[b]).collect();
        let max = sorted.first().copied().unwrap_or(0);
        let steps: Vec<usize> = (0..max).map(|t| sorted.iter().filter(|&&l| l > t).count()).collect();
        let mut offsets = Vec::with_capacity(steps.len());
        let mut acc = 0;
        for &n in &steps {
            offsets.push(acc);
            acc += n;
        }
        Packing { order, lengths: sorted, steps, offsets }
    }

    pub fn batch_size(&self) -> usize {
        self.order.len()
    }

    /// Active sequences per step (non-increasing).
    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn total_rows(&self) -> usize {
        self.steps.iter().sum()
    }

    /// Packed row of slot `j` at step `t`.
    pub fn row(&self, t: usize, j: usize) -> usize {
        self.offsets[t] + j
    }

    /// Packed row of each slot's last real step.
    pub fn last_rows(&self) -> Vec<usize> {
        self.lengths.iter().enumerate().map(|(j, &l)| self.row(l - 1, j)).collect()
    }

    /// Scatters per-slot rows back to batch order.
    pub fn unsort<T: Clone>(&self, slots: &[T]) -> Vec<T> {
        let mut out = slots.to_vec();
        for (j, &b) in self.order.iter().enumerate() {
            out[b] = slots[j].clone();
        }
        out
    }

    /// Packed rows `packed` laid out as a padded `(steps × batch)` list of
    /// optional rows, in batch order.
    pub fn unpack(&self, packed: &Tensor) -> Vec<Vec<Option<Vec<f64>>>> {
        let mut out = vec![vec![None; self.batch_size()]; self.steps.len()];
        for (t, &n) in self.steps.iter().enumerate() {
            for j in 0..n {
                out[t][self.order[j]] = Some(packed.row(self.row(t, j)).to_vec());
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Class probabilities per graph, in batch order.
    pub class_probs: Vec<Vec<f64>>,
    /// Classifier-GRU state at each graph's last real node, before dropout.
    pub h_tilde: Vec<Vec<f64>>,
    pub loss_classif: f64,
    pub loss_pred: f64,
    pub loss_total: f64,
    pub var: Option<VarOutput>,
}

/// One recorded forward pass, ready for backward.
pub struct Pass {
    pub tape: Tape,
    pub bound: Bound,
    pub packing: Packing,
    /// Packed top-layer embedding states.
    pub h_states: Var,
    pub loss: Option<Var>,
    pub out: ForwardOutput,
}

impl Pass {
    pub fn gradients(&self) -> Result<BTreeMap<String, Tensor>, ModelError> {
        let loss = self.loss.ok_or_else(|| ModelError::Batch("no labels, no loss to differentiate".into()))?;
        Ok(self.bound.grads(&self.tape.backward(loss)?))
    }

    /// Embedding states as `(steps × batch)` optional rows.
    pub fn h_states_padded(&self) -> Vec<Vec<Option<Vec<f64>>>> {
        self.packing.unpack(self.tape.value(self.h_states))
    }
}

/// Randomness consumed by a training-mode pass.
pub struct Noise {
    pub dropout: StreamRng,
    pub eps: StreamRng,
}

#[derive(Clone, Debug)]
pub struct Vrgc {
    pub cfg: VrgcConfig,
    pub pre: Linear,
    pub embed: GruStack,
    pub classifier: GruStack,
    pub head_hidden: Linear,
    pub head_out: Linear,
    pub var: VarBlock,
}

impl Vrgc {
    pub fn new(cfg: VrgcConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        Ok(Vrgc {
            pre: Linear::new("pre", cfg.d_n, cfg.pre_embed_dim, cfg.pre_embed_activation),
            embed: GruStack::new("embed", cfg.pre_embed_dim, cfg.embed_hidden, cfg.embed_layers, 0.0),
            classifier: GruStack::new("classifier", cfg.embed_hidden, cfg.classifier_hidden, cfg.classifier_layers, cfg.dropout),
            head_hidden: Linear::new("head.0", cfg.classifier_hidden, cfg.head_hidden, Activation::Relu),
            head_out: Linear::new("head.1", cfg.head_hidden, cfg.num_classes, Activation::None),
            var: VarBlock::new(cfg.embed_hidden, cfg.latent_dim, cfg.decoder_hidden, cfg.d_n),
            cfg,
        })
    }

    /// Every parameter, VAR included whether or not the VAR term is active,
    /// so RGC and VRGC share one parameter layout.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = self.pre.param_specs();
        v.extend(self.embed.param_specs());
        v.extend(self.classifier.param_specs());
        v.extend(self.head_hidden.param_specs());
        v.extend(self.head_out.param_specs());
        v.extend(self.var.param_specs());
        v
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ModelParams, ModelError> {
        Ok(init_params(&self.param_specs(), rng)?)
    }

    pub fn check_params(&self, params: &ModelParams) -> Result<(), ModelError> {
        Ok(params.check_against(&self.param_specs())?)
    }

    fn pack_inputs(&self, batch: &[EncodedGraph]) -> Result<(Packing, Tensor), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Batch("empty batch".into()));
        }
        if let Some(e) = batch.iter().find(|e| e.d_n() != self.cfg.d_n) {
            return Err(ModelError::Batch(format!("encoding width {} but model expects {}", e.d_n(), self.cfg.d_n)));
        }
        let lengths: Vec<usize> = batch.iter().map(EncodedGraph::true_len).collect();
        let packing = Packing::new(&lengths);
        let mut data = Vec::with_capacity(packing.total_rows() * self.cfg.d_n);
        for (t, &n) in packing.steps().iter().enumerate() {
            for &b in &packing.order()[..n] {
                data.extend(batch[b].row(t).iter().map(|&x| x as f64));
            }
        }
        let x = Tensor::matrix(packing.total_rows(), self.cfg.d_n, data)?;
        Ok((packing, x))
    }

    /// Forward pass over a batch of encodings. With `labels`, also computes
    /// `L = L_classif + α·L_pred` (the VAR term only when the config enables it).
    /// Dropout and latent sampling draw from `noise` in training mode only.
    pub fn forward(
        &self,
        params: &ModelParams,
        batch: &[EncodedGraph],
        labels: Option<&[usize]>,
        train: bool,
        noise: &mut Noise,
    ) -> Result<Pass, ModelError> {
        if let Some(labels) = labels {
            if labels.len() != batch.len() {
                return Err(ModelError::Batch(format!("{} labels for {} graphs", labels.len(), batch.len())));
            }
            if let Some(&l) = labels.iter().find(|&&l| l >= self.cfg.num_classes) {
                return Err(ModelError::Label { label: l, classes: self.cfg.num_classes });
            }
        }
        let (packing, x) = self.pack_inputs(batch)?;
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);

        let xv = tape.constant(x.clone());
        let pre = self.pre.forward(&mut tape, &p, xv)?;
        let h = self.embed.run_packed(&mut tape, &p, pre, packing.steps(), train, &mut noise.dropout)?;
        let c = self.classifier.run_packed(&mut tape, &p, h, packing.steps(), train, &mut noise.dropout)?;
        let h_tilde = tape.gather_rows(c, &packing.last_rows())?;
        let h_tilde_rows = tape.value(h_tilde).to_rows();
        let dropped = tape.dropout(h_tilde, self.cfg.dropout, train, &mut noise.dropout)?;
        let hidden = self.head_hidden.forward(&mut tape, &p, dropped)?;
        let logits = self.head_out.forward(&mut tape, &p, hidden)?;
        let logp = tape.log_softmax(logits)?;
        let probs: Vec<Vec<f64>> = tape.value(logp).to_rows().into_iter().map(|r| r.into_iter().map(f64::exp).collect()).collect();

        let mut out = ForwardOutput {
            class_probs: packing.unsort(&probs),
            h_tilde: packing.unsort(&h_tilde_rows),
            loss_classif: 0.0,
            loss_pred: 0.0,
            loss_total: 0.0,
            var: None,
        };
        let mut loss = None;
        if let Some(labels) = labels {
            let sorted: Vec<usize> = packing.order().iter().map(|&b| labels[b]).collect();
            let picked = tape.pick_cols(logp, &sorted)?;
            let mean = tape.mean(picked);
            let l_classif = tape.scale(mean, -1.0);
            out.loss_classif = tape.value(l_classif).item();
            let mut total = l_classif;
            if self.cfg.variational {
                let var = self.var.forward(&mut tape, &p, h, &x, &packing, &mut noise.eps, self.cfg.pred_normalization)?;
                let weighted = tape.scale(var.loss, self.cfg.alpha);
                total = tape.add(l_classif, weighted)?;
                out.loss_pred = tape.value(var.loss).item();
                out.var = Some(var);
            }
            out.loss_total = tape.value(total).item();
            loss = Some(total);
        }
        Ok(Pass { tape, bound: p, packing, h_states: h, loss, out })
    }

    /// Evaluation-mode class probabilities for each encoding.
    pub fn predict_batch(&self, params: &ModelParams, batch: &[EncodedGraph]) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(self.forward(params, batch, None, false, &mut idle_noise())?.out.class_probs)
    }

    /// `p̂(G, r)` for one rooted encoding.
    pub fn predict(&self, params: &ModelParams, e: &EncodedGraph) -> Result<Vec<f64>, ModelError> {
        Ok(self.predict_batch(params, std::slice::from_ref(e))?.remove(0))
    }

    /// Classifier state `h̃` at the last real node, evaluation mode.
    pub fn latents(&self, params: &ModelParams, batch: &[EncodedGraph]) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(self.forward(params, batch, None, false, &mut idle_noise())?.out.h_tilde)
    }

    /// Embedding states of one encoding, one row per real node.
    pub fn embedding_states(&self, params: &ModelParams, e: &EncodedGraph) -> Result<Vec<Vec<f64>>, ModelError> {
        let pass = self.forward(params, std::slice::from_ref(e), None, false, &mut idle_noise())?;
        Ok(pass.h_states_padded().into_iter().map(|mut step| step.remove(0).expect("single sequence")).collect())
    }

    /// VAR reconstruction of an encoding: row `i >= 1` is the hard-sampled
    /// prediction from the state after node `i-1`, restricted to the
    /// predecessor window; row 0 is empty.
    pub fn reconstruct<R: Rng + ?Sized>(
        &self,
        params: &ModelParams,
        e: &EncodedGraph,
        use_mean: bool,
        rng: &mut R,
    ) -> Result<EncodedGraph, ModelError> {
        let states = self.embedding_states(params, e)?;
        let d_n = self.cfg.d_n;
        let mut cells = vec![0u8; e.n_g() * d_n];
        for i in 1..e.true_len() {
            let row = self.var.sample_hard(params, &states[i - 1], use_mean, rng)?;
            for (k, &b) in row.iter().enumerate().take(i.min(d_n)) {
                cells[i * d_n + k] = b;
            }
        }
        EncodedGraph::from_parts(cells, e.n_g(), d_n, e.order().to_vec()).map_err(|err| ModelError::Batch(err.to_string()))
    }
}

fn idle_noise() -> Noise {
    use rand::SeedableRng;
    Noise { dropout: StreamRng::seed_from_u64(0), eps: StreamRng::seed_from_u64(0) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packing_layout() {
        let p = Packing::new(&[2, 4, 1, 4]);
        assert_eq!(p.order(), &[1, 3, 0, 2]);
        assert_eq!(p.steps(), &[4, 3, 2, 2]);
        assert_eq!(p.total_rows(), 11);
        assert_eq!(p.last_rows(), vec![9, 10, 6, 3]);
        assert_eq!(p.unsort(&['a', 'b', 'c', 'd']), vec!['c', 'a', 'd', 'b']);
    }

    #[test]
    fn config_validation() {
        let mut c = VrgcConfig::new(11, 28, 2);
        assert!(c.validate().is_ok());
        c.alpha = -0.1;
        assert!(c.validate().is_err());
        let mut c = VrgcConfig::new(0, 28, 2);
        assert!(c.validate().is_err());
        c.d_n = 3;
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }
}
