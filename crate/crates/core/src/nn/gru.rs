use rand::Rng;

use super::{Bound, NnError, ParamSpec};
use crate::autodiff::{Tape, Tensor, Var};

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(x·W_z + h·U_z + b_z)
/// r  = σ(x·W_r + h·U_r + b_r)
/// h~ = tanh(x·W_h + (r ⊙ h)·U_h + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h~
/// ```
#[derive(Clone, Debug)]
pub struct GruLayer {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

struct GateParams {
    w: Var,
    b: Var,
    u_zr: Var,
    u_h: Var,
}

impl GruLayer {
    pub fn new(name: impl Into<String>, input: usize, hidden: usize) -> Self {
        GruLayer { name: name.into(), input, hidden }
    }

    fn p(&self, s: &str) -> String {
        format!("{}.{s}", self.name)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (i, h) = (self.input, self.hidden);
        let mut v = Vec::new();
        for g in ["z", "r", "h"] {
            v.push(ParamSpec::weight(self.p(&format!("w_{g}")), i, h));
            v.push(ParamSpec::weight(self.p(&format!("u_{g}")), h, h));
            v.push(ParamSpec::bias(self.p(&format!("b_{g}")), h));
        }
        v
    }

    fn gates(&self, tape: &mut Tape, p: &Bound) -> Result<GateParams, NnError> {
        let w = [p.get(&self.p("w_z"))?, p.get(&self.p("w_r"))?, p.get(&self.p("w_h"))?];
        let b = [p.get(&self.p("b_z"))?, p.get(&self.p("b_r"))?, p.get(&self.p("b_h"))?];
        let u = [p.get(&self.p("u_z"))?, p.get(&self.p("u_r"))?];
        Ok(GateParams {
            w: tape.concat(&w, 1)?,
            b: tape.concat(&b, 0)?,
            u_zr: tape.concat(&u, 1)?,
            u_h: p.get(&self.p("u_h"))?,
        })
    }

    /// One update from the input projection `px = x·W + b` (`n × 3H`).
    fn cell(&self, tape: &mut Tape, g: &GateParams, px: Var, h: Var) -> Result<Var, NnError> {
        let hd = self.hidden;
        let hzr = tape.matmul(h, g.u_zr)?;
        let (pz, pr, ph) = (tape.slice_cols(px, 0, hd)?, tape.slice_cols(px, hd, hd)?, tape.slice_cols(px, 2 * hd, hd)?);
        let (hz, hr) = (tape.slice_cols(hzr, 0, hd)?, tape.slice_cols(hzr, hd, hd)?);
        let z = tape.add(pz, hz)?;
        let z = tape.sigmoid(z);
        let r = tape.add(pr, hr)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let uh = tape.matmul(rh, g.u_h)?;
        let cand = tape.add(ph, uh)?;
        let cand = tape.tanh(cand);
        let diff = tape.sub(cand, h)?;
        let step = tape.mul(z, diff)?;
        Ok(tape.add(h, step)?)
    }

    /// Single step for a batch: `x: n × input`, `h: n × hidden`.
    pub fn step(&self, tape: &mut Tape, p: &Bound, x: Var, h: Var) -> Result<Var, NnError> {
        let g = self.gates(tape, p)?;
        let px = tape.matmul(x, g.w)?;
        let px = tape.add_row(px, g.b)?;
        self.cell(tape, &g, px, h)
    }

    /// Runs over a packed sequence. `input` stacks the rows of every step,
    /// step `t` contributing `steps[t]` rows; `steps` is non-increasing, so the
    /// sequences still alive at step `t` are always the first `steps[t]` rows.
    /// Returns the hidden states packed the same way. Initial state is zero.
    pub fn run_packed(&self, tape: &mut Tape, p: &Bound, input: Var, steps: &[usize]) -> Result<Var, NnError> {
        let g = self.gates(tape, p)?;
        let px_all = tape.matmul(input, g.w)?;
        let px_all = tape.add_row(px_all, g.b)?;
        let mut outs = Vec::with_capacity(steps.len());
        let mut prev: Option<Var> = None;
        let mut offset = 0;
        for &n in steps {
            let px = tape.slice_rows(px_all, offset, n)?;
            let h = match prev {
                None => tape.constant(Tensor::zeros(&[n, self.hidden])),
                Some(hp) if tape.value(hp).rows() == n => hp,
                Some(hp) => tape.slice_rows(hp, 0, n)?,
            };
            let h_new = self.cell(tape, &g, px, h)?;
            outs.push(h_new);
            prev = Some(h_new);
            offset += n;
        }
        Ok(tape.concat(&outs, 0)?)
    }
}

/// Stacked GRU layers with dropout on the inputs of every layer after the first.
#[derive(Clone, Debug)]
pub struct GruStack {
    pub layers: Vec<GruLayer>,
    pub dropout: f64,
}

impl GruStack {
    pub fn new(name: &str, input: usize, hidden: usize, num_layers: usize, dropout: f64) -> Self {
        let layers = (0..num_layers)
            .map(|i| GruLayer::new(format!("{name}.{i}"), if i == 0 { input } else { hidden }, hidden))
            .collect();
        GruStack { layers, dropout }
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().map(|l| l.hidden).unwrap_or(0)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        self.layers.iter().flat_map(GruLayer::param_specs).collect()
    }

    /// Top-layer states for a packed sequence; see [`GruLayer::run_packed`].
    pub fn run_packed<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        input: Var,
        steps: &[usize],
        train: bool,
        rng: &mut R,
    ) -> Result<Var, NnError> {
        let mut x = input;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                x = tape.dropout(x, self.dropout, train, rng)?;
            }
            x = layer.run_packed(tape, p, x, steps)?;
        }
        Ok(x)
    }

    /// Fixed-length batch: `seq` is `(T·batch) × input`, step-major.
    pub fn run_sequence<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        seq: Var,
        batch: usize,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, NnError> {
        let rows = tape.value(seq).rows();
        if batch == 0 || rows % batch != 0 {
            return Err(NnError::Format(format!("{rows} rows do not split into batches of {batch}")));
        }
        self.run_packed(tape, p, seq, &vec![batch; rows / batch], train, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::nn::init_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(s: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(s)
    }

    fn rand_tensor(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_weights_keep_zero_state() {
        let layer = GruLayer::new("g", 3, 4);
        let params = init_params(&layer.param_specs(), &mut rng(0)).unwrap().zeros_like();
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let x = tape.constant(rand_tensor(&[2, 3], &mut rng(1)));
        let h = tape.constant(Tensor::zeros(&[2, 4]));
        let out = layer.step(&mut tape, &p, x, h).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn state_stays_within_convex_bound() {
        let layer = GruLayer::new("g", 3, 5);
        let mut r = rng(4);
        let params = init_params(&layer.param_specs(), &mut r).unwrap();
        for _ in 0..20 {
            let mut tape = Tape::new();
            let p = params.bind(&mut tape);
            let x = tape.constant(rand_tensor(&[4, 3], &mut r));
            let h0 = rand_tensor(&[4, 5], &mut r).data().iter().map(|v| v * 3.0).collect::<Vec<_>>();
            let h = tape.constant(Tensor::matrix(4, 5, h0.clone()).unwrap());
            let out = layer.step(&mut tape, &p, x, h).unwrap();
            for (o, h) in tape.value(out).data().iter().zip(&h0) {
                assert!(o.abs() <= h.abs().max(1.0) + 1e-12);
            }
        }
    }

    #[test]
    fn step_gradients_match_finite_differences() {
        let layer = GruLayer::new("g", 3, 4);
        let mut r = rng(9);
        let params = init_params(&layer.param_specs(), &mut r).unwrap();
        let x = rand_tensor(&[2, 3], &mut r);
        let h = rand_tensor(&[2, 4], &mut r);
        for (name, t) in &params.tensors {
            // random biases so the check is not at a symmetric point
            let t = if name.contains(".b_") { rand_tensor(t.shape(), &mut r) } else { t.clone() };
            let report = grad_check(
                |tape, v| {
                    let mut p = params.bind(tape);
                    p.replace(name, v);
                    let xv = tape.constant(x.clone());
                    let hv = tape.constant(h.clone());
                    let out = layer.step(tape, &p, xv, hv).map_err(|e| match e {
                        NnError::Autodiff(a) => a,
                        other => panic!("{other}"),
                    })?;
                    Ok(tape.sum(out))
                },
                &t,
                1e-5,
                1e-5,
            )
            .unwrap();
            assert!(report.passed(), "{name}: max rel error {}", report.max_rel_error());
        }
    }

    #[test]
    fn single_step_sequence_matches_step_composition() {
        let stack = GruStack::new("s", 3, 4, 2, 0.0);
        let mut r = rng(2);
        let params = init_params(&stack.param_specs(), &mut r).unwrap();
        let x = rand_tensor(&[5, 3], &mut r);
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let xv = tape.constant(x);
        let seq = stack.run_sequence(&mut tape, &p, xv, 5, false, &mut r).unwrap();
        let h0 = tape.constant(Tensor::zeros(&[5, 4]));
        let l0 = stack.layers[0].step(&mut tape, &p, xv, h0).unwrap();
        let l1 = stack.layers[1].step(&mut tape, &p, l0, h0).unwrap();
        assert_eq!(tape.value(seq).data(), tape.value(l1).data());
    }

    #[test]
    fn outputs_are_causal() {
        let stack = GruStack::new("s", 3, 4, 2, 0.25);
        let mut r = rng(6);
        let params = init_params(&stack.param_specs(), &mut r).unwrap();
        let (t_len, batch) = (6, 2);
        let x = rand_tensor(&[t_len * batch, 3], &mut r);
        for train in [false, true] {
            let run = |x: &Tensor| {
                let mut tape = Tape::new();
                let p = params.bind(&mut tape);
                let xv = tape.constant(x.clone());
                let out = stack.run_sequence(&mut tape, &p, xv, batch, train, &mut rng(77)).unwrap();
                tape.value(out).clone()
            };
            let base = run(&x);
            for t in 0..t_len - 1 {
                let mut y = x.clone();
                for v in &mut y.data_mut()[(t + 1) * batch * 3..(t + 2) * batch * 3] {
                    *v += 0.5;
                }
                let out = run(&y);
                let cut = (t + 1) * batch * 4;
                assert_eq!(&out.data()[..cut], &base.data()[..cut], "step {t} changed by a later input");
                assert_ne!(&out.data()[cut..], &base.data()[cut..]);
            }
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let stack = GruStack::new("s", 2, 3, 2, 0.25);
        let mut r = rng(8);
        let params = init_params(&stack.param_specs(), &mut r).unwrap();
        let x = rand_tensor(&[8, 2], &mut r);
        let run = |seed| {
            let mut tape = Tape::new();
            let p = params.bind(&mut tape);
            let xv = tape.constant(x.clone());
            let out = stack.run_sequence(&mut tape, &p, xv, 2, false, &mut rng(seed)).unwrap();
            tape.value(out).clone()
        };
        assert_eq!(run(1), run(2));
    }
}
