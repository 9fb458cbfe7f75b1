use rand::Rng;

use super::init::glorot_uniform;
use crate::error::{dim_err, Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Elu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GatConfig {
    /// Feature width of each input node.
    pub input: usize,
    /// Projected width per head.
    pub width: usize,
    pub heads: usize,
    pub activation: OutputActivation,
    pub slope: f64,
}

impl Default for GatConfig {
    fn default() -> Self {
        Self {
            input: 1,
            width: 4,
            heads: 1,
            activation: OutputActivation::Elu,
            slope: 0.2,
        }
    }
}

/// Single graph attention layer over a fully connected graph with
/// self-loops. Each head owns a projection `W: width×input` and an
/// attention vector `a = [a_src ∥ a_dst]` of length `2·width`.
#[derive(Clone, Debug)]
pub struct Gat {
    config: GatConfig,
    projections: Vec<ParamId>,
    attention: Vec<ParamId>,
}

pub struct GatOutput {
    /// `B × (N·heads·width)`, node-major.
    pub features: Var,
    /// Per head, `B·N × N` rows of attention weights (row u attends over v).
    pub attention: Vec<Var>,
}

impl Gat {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        config: GatConfig,
        group: usize,
        rng: &mut R,
    ) -> Self {
        let mut projections = Vec::new();
        let mut attention = Vec::new();
        for h in 0..config.heads.max(1) {
            projections.push(store.add(
                format!("{name}.head{h}.w"),
                glorot_uniform(rng, config.width, config.input),
                group,
            ));
            let a = glorot_uniform(rng, 1, 2 * config.width);
            attention.push(store.add(
                format!("{name}.head{h}.a"),
                a.reshaped(vec![2 * config.width]),
                group,
            ));
        }
        Self {
            config,
            projections,
            attention,
        }
    }

    pub fn config(&self) -> &GatConfig {
        &self.config
    }

    /// Output width per graph for `nodes` input nodes.
    pub fn output_width(&self, nodes: usize) -> usize {
        nodes * self.projections.len() * self.config.width
    }

    /// `x` is `B × (N·input)`: one row per graph, nodes laid out in order.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, nodes: usize) -> Result<GatOutput> {
        if nodes == 0 {
            return Err(Error::EmptyInput("graph attention over zero nodes".into()));
        }
        let d_in = self.config.input;
        let d = self.config.width;
        let (batch, cols) = match tape.shape(x) {
            [b, c] => (*b, *c),
            s => return dim_err(format!("graph attention input must be a matrix, got {s:?}")),
        };
        if cols != nodes * d_in {
            return dim_err(format!(
                "graph attention expects {nodes} nodes of width {d_in}, got {cols} columns"
            ));
        }
        let h = tape.reshape(x, &[batch * nodes, d_in])?;
        let ones = tape.constant_from(&[1, nodes], vec![1.0; nodes])?;
        let graph_of_row: Vec<usize> = (0..batch * nodes).map(|r| r / nodes).collect();

        let mut heads = Vec::new();
        let mut weights = Vec::new();
        for (&wid, &aid) in self.projections.iter().zip(&self.attention) {
            let w = tape.param(store, wid);
            let a = tape.param(store, aid);
            let z = tape.matmul_bt(h, w)?;
            let a = tape.reshape(a, &[2, d])?;
            let a_src = tape.slice(a, 0, 0, 1)?;
            let a_dst = tape.slice(a, 0, 1, 1)?;
            let f_src = tape.matmul_bt(z, a_src)?;
            let f_dst = tape.matmul_bt(z, a_dst)?;
            // logits[(b,u), v] = f_src[b,u] + f_dst[b,v]
            let src = tape.matmul(f_src, ones)?;
            let dst = tape.reshape(f_dst, &[batch, nodes])?;
            let dst = tape.gather_rows(dst, &graph_of_row)?;
            let logits = tape.add(src, dst)?;
            let logits = tape.leaky_relu(logits, self.config.slope);
            let alpha = tape.softmax(logits, 1)?;
            let mixed = tape.bmm(alpha, z, batch)?;
            let out = match self.config.activation {
                OutputActivation::Elu => tape.elu(mixed, 1.0),
                OutputActivation::Identity => mixed,
            };
            heads.push(out);
            weights.push(alpha);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat(&heads, 1)?
        };
        let features = tape.reshape(joined, &[batch, self.output_width(nodes)])?;
        Ok(GatOutput {
            features,
            attention: weights,
        })
    }
}
