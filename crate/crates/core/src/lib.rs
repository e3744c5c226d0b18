//! DC optimal power flow imitation toolkit.
//!
//! The crate is organized around one pipeline:
//!
//! 1. [`grid`] — the power-network data model and topology queries.
//! 2. [`datagen`] — synthetic grids, demand/weather series, and dataset files.
//! 3. [`oracle`] — the exact DCOPF linear program and the feasibility
//!    projection that post-processes predictions.
//! 4. [`encoding`] — Laplacian positional encodings and the model's input
//!    feature matrix.
//! 5. [`nn`] — the attention network (multi-window graph self-attention,
//!    node-link attention, MLP head) with reverse-mode gradients.
//! 6. [`train`] — imitation-learning loop: loss, schedule, Adam, early stop.
//! 7. [`dispatch`] — node totals and merit-order generator allocation.
//! 8. [`eval`] — MAAPE, imbalance reporting, attention PCA, baselines,
//!    runtime benchmarks.
//!
//! All numeric work is in 64-bit floats, and every stage is deterministic
//! given its seed.

pub mod datagen;
pub mod dispatch;
pub mod encoding;
pub mod eval;
pub mod grid;
pub mod nn;
pub mod oracle;
pub mod train;
