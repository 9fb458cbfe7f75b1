use rand::Rng;

use super::init::glorot_uniform;
use crate::error::{dim_err, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// `y = x·Wᵀ + b` with `W: out×in`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    input: usize,
    output: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        group: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot_uniform(rng, output, input), group);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[output]), group);
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    pub fn output_width(&self) -> usize {
        self.output
    }

    /// `x` is `rows×in`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        if tape.shape(x).last() != Some(&self.input) {
            return dim_err(format!(
                "linear layer expects width {}, got shape {:?}",
                self.input,
                tape.shape(x)
            ));
        }
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul_bt(x, w)?;
        tape.add_bias(y, b)
    }
}

/// Dense stack with tanh between layers and a linear final layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists every boundary, so `[a, b, c]` builds two layers.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        group: usize,
        rng: &mut R,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], group, rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Result<Var> {
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, store, x)?;
            if i < last {
                x = tape.tanh(x);
            }
        }
        Ok(x)
    }
}
