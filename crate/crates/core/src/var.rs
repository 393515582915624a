//! Variational auto-regression: from the embedding state after node `i-1`,
//! encode a Gaussian latent, sample it with the reparameterization trick and
//! decode Bernoulli means for node `i`'s adjacency row.
//!
//! The training objective is the negative ELBO: closed-form KL to a standard
//! normal prior plus the Bernoulli negative log-likelihood of the true row,
//! summed over every real step from the second node on.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Tensor, Var};
use crate::model::{ModelError, Packing};
use crate::nn::{Activation, Bound, Linear, ModelParams, ParamSpec};

pub const LOGVAR_CLAMP: f64 = 10.0;
pub const PROB_CLAMP: f64 = 1e-7;

/// How the summed per-step terms are scaled into `L_pred`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PredNormalization {
    /// Sum over steps of each graph, mean over graphs in the batch.
    #[default]
    PerGraphSum,
    /// Mean over every predicted step in the batch.
    PerStepMean,
}

#[derive(Clone, Debug)]
pub struct VarBlock {
    pub encoder: Linear,
    pub decoder_hidden: Linear,
    pub decoder_out: Linear,
    pub latent_dim: usize,
    pub d_n: usize,
}

#[derive(Clone, Debug)]
pub struct VarOutput {
    /// One row per predicted step, in packed order.
    pub mu: Vec<Vec<f64>>,
    pub logvar: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    /// Sums over the batch at each sequence step (index 0 is always zero).
    pub kl_per_step: Vec<f64>,
    pub recon_per_step: Vec<f64>,
    pub loss: Var,
}

/// Closed-form `KL(N(mu, exp(logvar)) || N(0, I))`.
pub fn kl_standard_normal(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu.iter().zip(logvar).map(|(m, l)| m * m + l.exp() - 1.0 - l).sum::<f64>()
}

/// Bernoulli negative log-likelihood with probabilities clamped away from 0 and 1.
pub fn bernoulli_nll(target: &[f64], probs: &[f64]) -> f64 {
    target
        .iter()
        .zip(probs)
        .map(|(&t, &p)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum()
}

/// `1` where `p >= 0.5`.
pub fn hard_threshold(probs: &[f64]) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= 0.5)).collect()
}

impl VarBlock {
    pub fn new(input: usize, latent_dim: usize, decoder_hidden: usize, d_n: usize) -> Self {
        VarBlock {
            encoder: Linear::new("var.encoder", input, 2 * latent_dim, Activation::None),
            decoder_hidden: Linear::new("var.decoder.0", latent_dim, decoder_hidden, Activation::Relu),
            decoder_out: Linear::new("var.decoder.1", decoder_hidden, d_n, Activation::Sigmoid),
            latent_dim,
            d_n,
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        [&self.encoder, &self.decoder_hidden, &self.decoder_out].iter().flat_map(|l| l.param_specs()).collect()
    }

    /// Returns `(mu, clamped logvar)`.
    fn encode(&self, tape: &mut Tape, p: &Bound, h: Var) -> Result<(Var, Var), ModelError> {
        let enc = self.encoder.forward(tape, p, h)?;
        let mu = tape.slice_cols(enc, 0, self.latent_dim)?;
        let lv = tape.slice_cols(enc, self.latent_dim, self.latent_dim)?;
        Ok((mu, tape.clamp(lv, -LOGVAR_CLAMP, LOGVAR_CLAMP)))
    }

    fn decode(&self, tape: &mut Tape, p: &Bound, z: Var) -> Result<Var, ModelError> {
        let hidden = self.decoder_hidden.forward(tape, p, z)?;
        Ok(self.decoder_out.forward(tape, p, hidden)?)
    }

    fn reparameterize<R: Rng + ?Sized>(&self, tape: &mut Tape, mu: Var, lv: Var, rng: &mut R) -> Result<Var, ModelError> {
        let shape = tape.value(mu).shape().to_vec();
        let noise: Vec<f64> = (0..shape.iter().product()).map(|_| rng.sample(StandardNormal)).collect();
        let eps = tape.constant(Tensor::new(shape, noise)?);
        let std = tape.affine(lv, 0.5, 0.0);
        let std = tape.exp(std);
        let spread = tape.mul(std, eps)?;
        Ok(tape.add(mu, spread)?)
    }

    /// Negative ELBO over a packed batch.
    ///
    /// `h` holds the embedding states and `targets` the adjacency rows, both
    /// packed by `packing`. The state after step `t-1` predicts the row at
    /// step `t` for `t >= 1`; padding never enters a packed batch.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        h: Var,
        targets: &Tensor,
        packing: &Packing,
        rng: &mut R,
        norm: PredNormalization,
    ) -> Result<VarOutput, ModelError> {
        let total = packing.total_rows();
        if tape.value(h).rows() != total || targets.rows() != total || targets.cols() != self.d_n {
            return Err(ModelError::Batch(format!(
                "states {:?} and targets {:?} do not match a packing of {total} rows x {} columns",
                tape.value(h).shape(),
                targets.shape(),
                self.d_n
            )));
        }
        let steps = packing.steps();
        let mut h_idx = Vec::new();
        let mut t_idx = Vec::new();
        let mut step_of = Vec::new();
        for t in 1..steps.len() {
            for j in 0..steps[t] {
                h_idx.push(packing.row(t - 1, j));
                t_idx.push(packing.row(t, j));
                step_of.push(t);
            }
        }
        let mut kl_per_step = vec![0.0; steps.len()];
        let mut recon_per_step = vec![0.0; steps.len()];
        if h_idx.is_empty() {
            let loss = tape.constant(Tensor::scalar(0.0));
            return Ok(VarOutput { mu: vec![], logvar: vec![], probs: vec![], kl_per_step, recon_per_step, loss });
        }

        let hs = tape.gather_rows(h, &h_idx)?;
        let (mu, lv) = self.encode(tape, p, hs)?;
        let z = self.reparameterize(tape, mu, lv, rng)?;
        let probs = self.decode(tape, p, z)?;

        let tgt: Vec<f64> = t_idx.iter().flat_map(|&r| targets.row(r).iter().copied()).collect();
        let rows = t_idx.len();
        // log q with q = p where the target is 1 and 1 - p where it is 0
        let pc = tape.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP);
        let sign = tape.constant(Tensor::matrix(rows, self.d_n, tgt.iter().map(|t| 2.0 * t - 1.0).collect())?);
        let offset = tape.constant(Tensor::matrix(rows, self.d_n, tgt.iter().map(|t| 1.0 - t).collect())?);
        let q = tape.mul(sign, pc)?;
        let q = tape.add(q, offset)?;
        let logq = tape.log(q);
        let loglik = tape.sum(logq);

        let mu2 = tape.mul(mu, mu)?;
        let var = tape.exp(lv);
        let kl = tape.add(mu2, var)?;
        let kl = tape.sub(kl, lv)?;
        let kl = tape.sum(kl);
        let kl = tape.affine(kl, 0.5, -0.5 * (rows * self.latent_dim) as f64);

        let neg_elbo = tape.sub(kl, loglik)?;
        let denom = match norm {
            PredNormalization::PerGraphSum => packing.batch_size(),
            PredNormalization::PerStepMean => rows,
        };
        let loss = tape.scale(neg_elbo, 1.0 / denom as f64);

        let mu_rows = tape.value(mu).to_rows();
        let lv_rows = tape.value(lv).to_rows();
        let prob_rows = tape.value(probs).to_rows();
        for (r, &t) in step_of.iter().enumerate() {
            kl_per_step[t] += kl_standard_normal(&mu_rows[r], &lv_rows[r]);
            recon_per_step[t] += bernoulli_nll(&tgt[r * self.d_n..(r + 1) * self.d_n], &prob_rows[r]);
        }
        Ok(VarOutput { mu: mu_rows, logvar: lv_rows, probs: prob_rows, kl_per_step, recon_per_step, loss })
    }

    /// Binary next-row prediction from one embedding state. Samples the latent
    /// unless `use_mean`, then thresholds the Bernoulli means at 0.5.
    pub fn sample_hard<R: Rng + ?Sized>(
        &self,
        params: &ModelParams,
        h_step: &[f64],
        use_mean: bool,
        rng: &mut R,
    ) -> Result<Vec<u8>, ModelError> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let h = tape.constant(Tensor::matrix(1, h_step.len(), h_step.to_vec())?);
        let (mu, lv) = self.encode(&mut tape, &p, h)?;
        let z = if use_mean { mu } else { self.reparameterize(&mut tape, mu, lv, rng)? };
        let probs = self.decode(&mut tape, &p, z)?;
        Ok(hard_threshold(tape.value(probs).data()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kl_is_zero_only_at_the_prior() {
        assert_eq!(kl_standard_normal(&[0.0; 8], &[0.0; 8]), 0.0);
        for (m, l) in [(1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3), (-0.2, 0.4)] {
            assert!(kl_standard_normal(&[m], &[l]) > 0.0);
        }
    }

    #[test]
    fn uniform_probabilities_cost_log2_per_bit() {
        let d = 11;
        assert!((bernoulli_nll(&vec![0.0; d], &vec![0.5; d]) - d as f64 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn threshold_ties_go_to_one() {
        assert_eq!(hard_threshold(&[0.9, 0.9]), vec![1, 1]);
        assert_eq!(hard_threshold(&[0.5, 0.5, 0.5]), vec![1, 1, 1]);
        assert_eq!(hard_threshold(&[0.4999]), vec![0]);
    }

    #[test]
    fn reparameterized_samples_are_unbiased() {
        let vb = VarBlock::new(4, 3, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut tape = Tape::new();
        let n = 100_000;
        let mu = tape.constant(Tensor::matrix(n, 1, vec![0.7; n]).unwrap());
        let lv = tape.constant(Tensor::matrix(n, 1, vec![(0.5f64).ln(); n]).unwrap());
        let z = vb.reparameterize(&mut tape, mu, lv, &mut rng).unwrap();
        let mean = tape.value(z).data().iter().sum::<f64>() / n as f64;
        let sigma = 0.5f64.sqrt();
        assert!((mean - 0.7).abs() < 4.0 * sigma / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn zero_encoder_gives_zero_kl() {
        let vb = VarBlock::new(4, 3, 5, 2);
        let params = init_params(&vb.param_specs(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut params = params;
        for (k, t) in params.tensors.iter_mut() {
            if k.starts_with("var.encoder") {
                *t = Tensor::zeros(t.shape());
            }
        }
        let packing = Packing::new(&[3, 2]);
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let h = tape.constant(Tensor::filled(&[packing.total_rows(), 4], 0.3));
        let targets = Tensor::zeros(&[packing.total_rows(), 2]);
        let out = vb
            .forward(&mut tape, &p, h, &targets, &packing, &mut ChaCha8Rng::seed_from_u64(2), PredNormalization::PerGraphSum)
            .unwrap();
        assert!(out.kl_per_step.iter().all(|&k| k == 0.0));
        let recon: f64 = out.recon_per_step.iter().sum();
        assert!((tape.value(out.loss).item() - recon / 2.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_targets_are_rejected() {
        let vb = VarBlock::new(4, 3, 5, 2);
        let params = init_params(&vb.param_specs(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let packing = Packing::new(&[3, 2]);
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let h = tape.constant(Tensor::zeros(&[packing.total_rows(), 4]));
        let targets = Tensor::zeros(&[packing.total_rows() + 1, 2]);
        let res = vb.forward(&mut tape, &p, h, &targets, &packing, &mut ChaCha8Rng::seed_from_u64(2), PredNormalization::PerGraphSum);
        assert!(matches!(res, Err(ModelError::Batch(_))));
    }
}
