//! Barlow Twins self-supervised learning for audio, sized for a desk.
//!
//! The crate covers the whole pipeline: log-mel front end ([`dsp`]),
//! manifests and synthetic data ([`data`]), view generation ([`augment`]),
//! convolutional and transformer encoders ([`encoder`]), the projector
//! ([`projector`]), the redundancy-reduction objective ([`objective`]),
//! optimizers ([`optim`]), pretraining with checkpoints ([`train`]) and
//! frozen-embedding evaluation ([`eval`]).

pub mod augment;
pub mod config;
pub mod data;
pub mod dsp;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod objective;
pub mod optim;
pub mod pipeline;
pub mod projector;
pub mod provenance;
pub mod nn;
pub mod rng;
pub mod sweep;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
