use super::{AutodiffError, Tape, Tensor, Var};

/// Per-element comparison of backprop against central finite differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_errors: Vec<f64>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().cloned().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.rel_errors.iter().all(|&e| e < self.tol)
    }

    /// Element indices whose error exceeds the tolerance.
    pub fn failures(&self) -> Vec<usize> {
        self.rel_errors.iter().enumerate().filter(|(_, &e)| !(e < self.tol)).map(|(i, _)| i).collect()
    }
}

/// `|a - n| / max(|a|, |n|, floor)`. The floor keeps near-zero gradients from
/// turning round-off into huge relative errors.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// Checks the gradient of the scalar `f(x)` with respect to `x`.
///
/// `f` must be deterministic: any dropout masks or sampling noise it uses have
/// to be reproduced identically on every call.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64, tol: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let loss = f(&mut tape, xv)?;
    let analytic = tape.backward(loss)?.get_or_zeros(xv).into_data();

    let eval = |probe: &Tensor| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let xv = tape.param(probe.clone());
        let loss = f(&mut tape, xv)?;
        Ok(tape.value(loss).item())
    };
    let mut numeric = Vec::with_capacity(x.numel());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((up - down) / (2.0 * eps));
    }
    let rel_errors = analytic.iter().zip(&numeric).map(|(&a, &n)| relative_error(a, n, REL_ERROR_FLOOR)).collect();
    Ok(GradCheckReport { analytic, numeric, rel_errors, tol })
}
