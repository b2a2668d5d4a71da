//! Quadratic-gated mixture-of-experts regression lab.
//!
//! The crate covers the full pipeline: gate and expert forward passes
//! with an attention-form gate ([`model`]), exact least-squares
//! gradients with a finite-difference harness ([`grad`]), reproducible
//! synthetic data ([`synth`]), over-specified gradient-descent fitting
//! ([`fit`]), Voronoi-cell parameter losses ([`voronoi`]),
//! identifiability and gating-interaction diagnostics ([`ident`]), and
//! the convergence-rate experiment runner with slope estimation and the
//! gating-overhead calculator ([`lab`]).
//!
//! Everything is deterministic: randomness flows through labelled
//! ChaCha8 streams ([`rng`]) and reductions use fixed chunking, so a
//! configuration reproduces byte-identical outputs on any machine and
//! any worker count.

pub mod error;
pub mod fit;
pub mod grad;
pub mod ident;
pub mod lab;
pub mod model;
pub mod rng;
pub mod synth;
pub mod voronoi;

pub use error::{Error, Result};
pub use model::{
    Activation, Atom, AttnGateParams, AttnKey, ExpertFamily, ExpertParams, GateKind, GateTag,
    MixingMeasure, Nonlinearity,
};
pub use synth::{Dataset, InputDist, SynthConfig};
