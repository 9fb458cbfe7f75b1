//! Trainable layers over the tape: dense, GRU cell and graph attention.

mod gat;
mod gru;
mod init;
mod linear;

pub use gat::{Gat, GatConfig, GatOutput, OutputActivation};
pub use gru::GruCell;
pub use init::{glorot_bound, glorot_uniform};
pub use linear::{Linear, Mlp};
