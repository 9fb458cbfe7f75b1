//! Central finite-difference checks of tape gradients.

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// Relative error with a small floor so near-zero gradients compare on
/// an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Max relative error between reverse-mode and central-difference
/// gradients of the scalar `f(inputs)` with respect to every input element.
pub fn check_inputs<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t)).collect();
    let out = f(&mut tape, &vars)?;
    let analytic = tape.grad_wrt(out, &vars)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - eps;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            worst = worst.max(relative_error(a, (up - down) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

/// Same as [`check_inputs`] but differentiates with respect to every
/// trainable scalar in `store`, using [`Tape::backward`] for the analytic side.
pub fn check_params<F>(store: &mut ParamStore, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    tape.backward(out, store)?;
    let analytic: Vec<Vec<f64>> = store
        .ids()
        .map(|id| {
            let t = store.get(id);
            t.grad().map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec)
        })
        .collect();
    store.zero_grad();

    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for (id, grads) in ids.into_iter().zip(&analytic) {
        if !store.get(id).requires_grad() {
            continue;
        }
        for (j, &a) in grads.iter().enumerate() {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + eps;
            let up = {
                let mut t = Tape::new();
                let o = f(&mut t, store)?;
                t.scalar(o)
            };
            store.get_mut(id).data_mut()[j] = orig - eps;
            let down = {
                let mut t = Tape::new();
                let o = f(&mut t, store)?;
                t.scalar(o)
            };
            store.get_mut(id).data_mut()[j] = orig;
            worst = worst.max(relative_error(a, (up - down) / (2.0 * eps)));
        }
    }
    Ok(worst)
}
