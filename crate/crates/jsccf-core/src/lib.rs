//! Simulation laboratory for layered joint source-channel coding (JSCC) of
//! images over noisy channels with channel-output feedback.
//!
//! The crate bundles:
//!
//! * [`autodiff`] — a small deterministic tensor engine with reverse-mode
//!   differentiation, the convolutional/GDN/PReLU primitives the codec is
//!   built from, the Adam optimizer, and finite-difference gradient checking;
//! * [`channel`] — complex-baseband AWGN and slow Rayleigh fading simulation
//!   with exact per-block power normalization and seeded noise streams;
//! * [`model`] — the L-layer encoder/decoder/combiner pipeline with a
//!   transmitter-side estimate driven by the feedback link, end-to-end
//!   transmission traces, and binary checkpoints;
//! * [`training`] — layer-wise sequential optimization with freezing and
//!   validation-based early stopping;
//! * [`eval`] — PSNR metrics, multi-realization evaluation, SNR-mismatch
//!   sweeps, variable-length transmission, and gap distributions;
//! * [`baseline`] — separation-based comparison machinery (capacity bound,
//!   rate-distortion curve ingestion, abstract digital schemes, envelopes);
//! * [`data`] — dataset ingestion (CIFAR10 binary batches, binary PPM,
//!   seeded synthetic images).

pub mod autodiff;
pub mod baseline;
pub mod channel;
pub mod data;
pub mod eval;
pub mod gradsuite;
pub mod model;
pub mod seeds;
pub mod training;
