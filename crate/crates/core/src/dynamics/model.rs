use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::layers::{Gat, GatConfig, GruCell, Linear, Mlp};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Smallest per-feature scale used when standardizing states.
pub const SCALE_FLOOR: f64 = 1e-2;

pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 5.0;

/// Parameter group of encoder weights (GAT, encoder GRU, FC stack, heads).
pub const ENCODER_GROUP: usize = 0;
pub const DECODER_GROUP: usize = 1;

/// Shape of one primitive dynamics network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsArch {
    pub state_width: usize,
    pub hidden: usize,
    /// Relational encoding through a graph attention layer.
    pub graph: bool,
    /// Skip connection of target-entity features into the encoder output.
    pub residual: bool,
    /// Entity blocks copied by the skip connection.
    pub target_entities: Vec<usize>,
    pub gat_width: usize,
    pub encoder_fc_layers: usize,
    pub decoder_fc_layers: usize,
}

impl DynamicsArch {
    pub fn new(state_width: usize, hidden: usize, target_entities: Vec<usize>) -> Self {
        Self {
            state_width,
            hidden,
            graph: true,
            residual: true,
            target_entities,
            gat_width: 4,
            encoder_fc_layers: 1,
            decoder_fc_layers: 1,
        }
    }

    pub fn residual_width(&self) -> usize {
        if self.residual {
            7 * self.target_entities.len()
        } else {
            0
        }
    }

    /// Width of the encoder FC stack input.
    pub fn fc_input_width(&self) -> usize {
        self.hidden + self.residual_width()
    }

    pub fn latent_width(&self) -> usize {
        self.hidden
    }
}

/// Gaussian over the latent state, as mean and log-variance rows.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDistribution {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentMode {
    Sample,
    Mean,
}

impl std::str::FromStr for LatentMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(Self::Sample),
            "mean" => Ok(Self::Mean),
            _ => Err(Error::Config(format!("unknown latent mode {s:?}"))),
        }
    }
}

/// Encoder: optional GAT per step, GRU over the sequence, optional skip of
/// target features, FC stack, then mean and log-variance heads.
/// Decoder: GRU seeded with the latent sample, autoregressive FC head.
#[derive(Clone, Debug)]
pub struct DynamicsModel {
    arch: DynamicsArch,
    pub store: ParamStore,
    norm_mean: ParamId,
    norm_scale: ParamId,
    gat: Option<Gat>,
    encoder: GruCell,
    encoder_fc: Mlp,
    mean_head: Linear,
    logvar_head: Linear,
    decoder: GruCell,
    decoder_fc: Mlp,
}

/// Tape handles of an encoder pass.
#[derive(Clone, Copy, Debug)]
pub struct EncodedVars {
    pub mean: Var,
    pub log_variance: Var,
}

impl DynamicsModel {
    pub fn new<R: Rng + ?Sized>(arch: DynamicsArch, rng: &mut R) -> Result<Self> {
        if arch.hidden == 0 || arch.state_width == 0 || !arch.state_width.is_multiple_of(7) {
            return Err(Error::Config(format!(
                "dynamics model needs a positive hidden width and 7-wide entity blocks, got hidden {} width {}",
                arch.hidden, arch.state_width
            )));
        }
        if arch.residual && arch.target_entities.iter().any(|&e| 7 * e + 7 > arch.state_width) {
            return Err(Error::Config("residual target entity outside the state".into()));
        }
        if arch.encoder_fc_layers == 0 || arch.decoder_fc_layers == 0 {
            return Err(Error::Config("FC stacks need at least one layer".into()));
        }
        let mut store = ParamStore::new();
        let w = arch.state_width;
        let h = arch.hidden;
        let norm_mean = store.add_frozen("normalizer.mean", Tensor::zeros(&[w]), ENCODER_GROUP);
        let norm_scale = store.add_frozen("normalizer.scale", Tensor::vector(vec![1.0; w]), ENCODER_GROUP);
        let gat = arch.graph.then(|| {
            let config = GatConfig {
                width: arch.gat_width,
                ..GatConfig::default()
            };
            Gat::new(&mut store, "encoder.gat", config, ENCODER_GROUP, rng)
        });
        let enc_in = gat.as_ref().map_or(w, |g| g.output_width(w));
        let encoder = GruCell::new(&mut store, "encoder.gru", enc_in, h, ENCODER_GROUP, rng);
        let mut widths = vec![arch.fc_input_width()];
        widths.extend(std::iter::repeat_n(h, arch.encoder_fc_layers));
        let encoder_fc = Mlp::new(&mut store, "encoder.fc", &widths, ENCODER_GROUP, rng);
        let z = arch.latent_width();
        let mean_head = Linear::new(&mut store, "encoder.mean", h, z, ENCODER_GROUP, rng);
        let logvar_head = Linear::new(&mut store, "encoder.logvar", h, z, ENCODER_GROUP, rng);
        let decoder = GruCell::new(&mut store, "decoder.gru", w, z, DECODER_GROUP, rng);
        let mut widths = vec![z; arch.decoder_fc_layers];
        widths.push(w);
        let decoder_fc = Mlp::new(&mut store, "decoder.fc", &widths, DECODER_GROUP, rng);
        Ok(Self {
            arch,
            store,
            norm_mean,
            norm_scale,
            gat,
            encoder,
            encoder_fc,
            mean_head,
            logvar_head,
            decoder,
            decoder_fc,
        })
    }

    pub fn arch(&self) -> &DynamicsArch {
        &self.arch
    }

    pub fn gat(&self) -> Option<&Gat> {
        self.gat.as_ref()
    }

    /// Trainable scalars; the fixed normalizer is not counted.
    pub fn parameter_count(&self) -> usize {
        self.store.trainable_count()
    }

    /// Sets the per-feature standardization from example states. Scales
    /// below [`SCALE_FLOOR`] are raised to it.
    pub fn fit_normalizer<'a>(&mut self, states: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
        let w = self.arch.state_width;
        let mut sum = vec![0.0; w];
        let mut sq = vec![0.0; w];
        let mut n = 0usize;
        for s in states {
            self.check_state(s)?;
            for k in 0..w {
                sum[k] += s[k];
                sq[k] += s[k] * s[k];
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyInput("normalizer needs at least one state".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|v| v / n as f64).collect();
        let scale: Vec<f64> = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(SCALE_FLOOR))
            .collect();
        self.store.get_mut(self.norm_mean).data_mut().copy_from_slice(&mean);
        self.store.get_mut(self.norm_scale).data_mut().copy_from_slice(&scale);
        Ok(())
    }

    /// Maps a raw state into the standardized space the network works in.
    pub fn normalize(&self, state: &[f64]) -> Vec<f64> {
        let m = self.store.get(self.norm_mean).data();
        let s = self.store.get(self.norm_scale).data();
        state.iter().zip(m).zip(s).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn denormalize(&self, state: &[f64]) -> Vec<f64> {
        let m = self.store.get(self.norm_mean).data();
        let s = self.store.get(self.norm_scale).data();
        state.iter().zip(m).zip(s).map(|((x, m), s)| x * s + m).collect()
    }

    /// Encodes a batch of standardized states. `inputs` holds one `B×width`
    /// matrix per step; the skip connection reads the target features of
    /// `inputs[0]`.
    pub fn encode_vars(&self, tape: &mut Tape, inputs: &[Var]) -> Result<EncodedVars> {
        let Some(&first) = inputs.first() else {
            return Err(Error::EmptyInput("encoder needs at least one step".into()));
        };
        let w = self.arch.state_width;
        let batch = match tape.shape(first) {
            [b, c] if *c == w => *b,
            s => return dim_err(format!("encoder expects B×{w} inputs, got {s:?}")),
        };
        let mut h = tape.zeros(&[batch, self.arch.hidden]);
        for &x in inputs {
            if tape.shape(x) != [batch, w] {
                return dim_err(format!("encoder step of shape {:?}, expected [{batch}, {w}]", tape.shape(x)));
            }
            let feats = match &self.gat {
                Some(g) => g.forward(tape, &self.store, x, w)?.features,
                None => x,
            };
            h = self.encoder.step(tape, &self.store, feats, h)?;
        }
        if self.arch.residual {
            let mut parts = vec![h];
            for &e in &self.arch.target_entities {
                parts.push(tape.slice(first, 1, 7 * e, 7)?);
            }
            h = tape.concat(&parts, 1)?;
        }
        let f = self.encoder_fc.forward(tape, &self.store, h)?;
        let f = tape.tanh(f);
        let mean = self.mean_head.forward(tape, &self.store, f)?;
        let lv = self.logvar_head.forward(tape, &self.store, f)?;
        let log_variance = tape.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
        Ok(EncodedVars { mean, log_variance })
    }

    /// Reparameterized latent: `μ + exp(½·logσ²)⊙ε`, or `μ` in mean mode.
    pub fn sample_vars<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        enc: EncodedVars,
        mode: LatentMode,
        rng: &mut R,
    ) -> Result<Var> {
        match mode {
            LatentMode::Mean => Ok(enc.mean),
            LatentMode::Sample => {
                let shape = tape.shape(enc.mean).to_vec();
                let n = shape.iter().product();
                let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let eps = tape.constant_from(&shape, eps)?;
                let half = tape.scale(enc.log_variance, 0.5);
                let sigma = tape.exp(half);
                let noise = tape.mul(sigma, eps)?;
                tape.add(enc.mean, noise)
            }
        }
    }

    /// Unrolls the decoder for `steps` standardized outputs of shape `B×width`.
    pub fn decode_vars(&self, tape: &mut Tape, z: Var, steps: usize) -> Result<Vec<Var>> {
        let batch = match tape.shape(z) {
            [b, c] if *c == self.arch.latent_width() => *b,
            s => {
                return dim_err(format!(
                    "decoder expects B×{} latent, got {s:?}",
                    self.arch.latent_width()
                ))
            }
        };
        let mut x = tape.zeros(&[batch, self.arch.state_width]);
        let mut h = z;
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            h = self.decoder.step(tape, &self.store, x, h)?;
            x = self.decoder_fc.forward(tape, &self.store, h)?;
            out.push(x);
        }
        Ok(out)
    }

    /// KL divergence to a standard normal, averaged over the batch.
    pub fn kl_vars(&self, tape: &mut Tape, enc: EncodedVars) -> Result<Var> {
        let batch = tape.shape(enc.mean)[0].max(1);
        let var = tape.exp(enc.log_variance);
        let mu2 = tape.mul(enc.mean, enc.mean)?;
        let t = tape.sub(var, enc.log_variance)?;
        let t = tape.add(t, mu2)?;
        let t = tape.offset(t, -1.0);
        let s = tape.sum(t);
        Ok(tape.scale(s, 0.5 / batch as f64))
    }

    fn check_state(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.arch.state_width {
            return dim_err(format!(
                "state of width {}, model expects {}",
                s.len(),
                self.arch.state_width
            ));
        }
        Ok(())
    }

    /// Latent distribution of one sequence of raw states, unrolled over
    /// every given state.
    pub fn encode(&self, states: &[&[f64]]) -> Result<LatentDistribution> {
        let mut tape = Tape::new();
        let mut inputs = Vec::with_capacity(states.len());
        for s in states {
            self.check_state(s)?;
            inputs.push(tape.constant_from(&[1, s.len()], self.normalize(s))?);
        }
        let enc = self.encode_vars(&mut tape, &inputs)?;
        Ok(LatentDistribution {
            mean: tape.value(enc.mean).to_vec(),
            log_variance: tape.value(enc.log_variance).to_vec(),
        })
    }

    /// Test-time encoding: the initial state fed at each of `steps` steps.
    pub fn encode_initial(&self, initial: &[f64], steps: usize) -> Result<LatentDistribution> {
        self.encode(&vec![initial; steps.max(1)])
    }

    /// Encoder attention over the per-feature nodes for one raw state:
    /// row `u` holds the weights node `u` assigns to every node. `None`
    /// without the graph layer.
    pub fn attention(&self, state: &[f64]) -> Result<Option<Vec<Vec<f64>>>> {
        let Some(gat) = &self.gat else {
            return Ok(None);
        };
        self.check_state(state)?;
        let w = self.arch.state_width;
        let mut tape = Tape::new();
        let x = tape.constant_from(&[1, w], self.normalize(state))?;
        let out = gat.forward(&mut tape, &self.store, x, w)?;
        let alpha = tape.value(out.attention[0]);
        Ok(Some(alpha.chunks(w).map(<[f64]>::to_vec).collect()))
    }

    /// Raw predicted states for a latent.
    pub fn decode(&self, z: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let zv = tape.constant_from(&[1, z.len()], z.to_vec())?;
        let outs = self.decode_vars(&mut tape, zv, steps)?;
        Ok(outs.into_iter().map(|v| self.denormalize(tape.value(v))).collect())
    }
}

/// Draws a latent from `dist` outside of any tape.
pub fn sample_latent<R: Rng + ?Sized>(dist: &LatentDistribution, rng: &mut R, mode: LatentMode) -> Vec<f64> {
    match mode {
        LatentMode::Mean => dist.mean.clone(),
        LatentMode::Sample => dist
            .mean
            .iter()
            .zip(&dist.log_variance)
            .map(|(m, lv)| {
                let e: f64 = rng.sample(StandardNormal);
                m + (0.5 * lv.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp() * e
            })
            .collect(),
    }
}
