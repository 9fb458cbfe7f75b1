use rand::Rng;

use super::init::glorot_uniform;
use crate::error::{dim_err, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(x·Wzᵀ + h·Uzᵀ + bz)
/// r  = σ(x·Wrᵀ + h·Urᵀ + br)
/// h̃  = tanh(x·Whᵀ + (r⊙h)·Uhᵀ + bh)
/// h' = (1 − z)⊙h + z⊙h̃
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    w: [ParamId; 3],
    u: [ParamId; 3],
    b: [ParamId; 3],
    input: usize,
    hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        group: usize,
        rng: &mut R,
    ) -> Self {
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for gate in ["z", "r", "h"] {
            w.push(store.add(format!("{name}.w{gate}"), glorot_uniform(rng, hidden, input), group));
            u.push(store.add(format!("{name}.u{gate}"), glorot_uniform(rng, hidden, hidden), group));
            b.push(store.add(format!("{name}.b{gate}"), Tensor::zeros(&[hidden]), group));
        }
        Self {
            w: [w[0], w[1], w[2]],
            u: [u[0], u[1], u[2]],
            b: [b[0], b[1], b[2]],
            input,
            hidden,
        }
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.w.iter().chain(&self.u).chain(&self.b).copied()
    }

    /// One step for a batch: `x` is `B×in`, `h` is `B×hidden`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        if tape.shape(x).last() != Some(&self.input) || tape.shape(h).last() != Some(&self.hidden)
        {
            return dim_err(format!(
                "GRU cell {}→{} given input {:?} and hidden {:?}",
                self.input,
                self.hidden,
                tape.shape(x),
                tape.shape(h)
            ));
        }
        let gate = |tape: &mut Tape, i: usize, hh: Var| -> Result<Var> {
            let w = tape.param(store, self.w[i]);
            let u = tape.param(store, self.u[i]);
            let b = tape.param(store, self.b[i]);
            let xw = tape.matmul_bt(x, w)?;
            let hu = tape.matmul_bt(hh, u)?;
            let s = tape.add(xw, hu)?;
            tape.add_bias(s, b)
        };
        let z = gate(tape, 0, h)?;
        let z = tape.sigmoid(z);
        let r = gate(tape, 1, h)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let cand = gate(tape, 2, rh)?;
        let cand = tape.tanh(cand);
        let delta = tape.sub(cand, h)?;
        let step = tape.mul(z, delta)?;
        tape.add(h, step)
    }
}
