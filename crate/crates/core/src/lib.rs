//! Frequency-aware low-light image enhancement.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor_core`]: rank-4 tensors and a tape-based reverse-mode engine.
//! - [`fourier`]: unitary 2-D DFT, amplitude/phase decomposition, amplitude swapping.
//! - [`spectral_kl`]: Gaussian summaries of amplitude and phase spectra and the closed-form
//!   Fourier KL loss.
//! - [`perceptual_kl`]: discrete KL divergence between softmax-normalised deep features,
//!   with a pluggable fixed feature extractor.
//! - [`losses`]: smooth L1, soft histogram, MS-SSIM, PSNR and colour losses plus the
//!   weighted composite and its ablation presets.
//! - [`network`]: the U-shaped enhancer and its blocks (channel attention, gated
//!   enhancement layer, noise/dark-area correction, squeeze-and-excitation).
//! - [`harness`]: synthetic data, a deterministic training loop, metrics, PNG I/O and the
//!   operations behind the `llie` command-line tool.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod error;
pub mod fourier;
pub mod harness;
pub mod losses;
pub mod network;
pub mod perceptual_kl;
pub mod spectral_kl;
pub mod tensor_core;

pub use error::{Error, Result};
pub use tensor_core::{Graph, Shape, Tensor, Var};
