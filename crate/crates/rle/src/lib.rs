//! Residual log-likelihood regression at desk scale.
//!
//! A regression head predicts a location and a scale per output dimension;
//! a RealNVP normalizing flow learns the shape of the standardized residual
//! density, either directly (DLE) or as a correction on top of a preset
//! Gaussian/Laplace base (RLE). Head and flow train jointly by maximum
//! likelihood with hand-derived reverse-mode gradients, verified against
//! central finite differences throughout.
//!
//! Layout:
//!
//! - [`numcore`]: dense matrices, small MLPs with exact backprop, Adam, and
//!   the finite-difference gradient checker.
//! - [`flow`]: affine coupling blocks with exact inverses and analytic
//!   log-determinants, composed over a standard-normal base.
//! - [`lik`]: the loss ladder (constant-variance l2/l1, Gaussian/Laplace
//!   NLL, DLE, RLE), the product normalizer `s`, and the confidence score.
//! - [`regress`]: the trunk-plus-two-heads regression model.
//! - [`synth`]: seeded synthetic benchmarks with exact noise-density oracles.
//! - [`trainer`]: the training loop, metrics, density fitting, and the
//!   benchmark suite.
//! - [`snapshot`]: the versioned JSON model document.
//! - [`cli`]: the `rle` command-line front end.
//!
//! The `examples/` directory holds one runnable example per capability;
//! start with `cargo run --release --example flow_basics`.

pub mod cli;
pub mod error;
pub mod flow;
pub mod grid;
pub mod lik;
pub mod numcore;
pub mod regress;
pub mod snapshot;
pub mod synth;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use flow::{FlowArch, FlowModel};
pub use lik::{BaseDensity, BaseFamily, LossKind, RiemannCfg};
pub use regress::{Prediction, RegressionHead, TrunkArch};
pub use synth::{gen_dataset, Dataset, NoiseKind};
pub use trainer::{bench_suite, train_run, BenchConfig, RunReport, TrainConfig, TrainedModel};
