//! Quantum-trajectory simulator for error-correction memory experiments with
//! leakage.
//!
//! A qutrit-level circuit is executed either exactly (`exact3`), with leakage
//! rendered incoherent through a random-phase twirl of every channel (`rpa`),
//! or restricted to the computational subspace (`qubit-only`). The incoherent
//! mode keeps every qudit inside a single labelled subspace block, so `n`
//! qutrits simulate in the memory footprint of `n` qubits.
//!
//! Module map:
//! - [`matrix`], [`subspace`], [`channel`]: complex linear algebra and channel
//!   algebra (Kraus sets, dephasing, incoherence tests, Choi conversions).
//! - [`rpa`]: the random-phase approximation of a channel and its realization
//!   as subspace-conditioned block operators.
//! - [`noise`]: Lindblad decoherence channels and the qutrit CZ gate.
//! - [`circuit`], [`builders`]: circuit IR plus repetition / rotated surface
//!   code memory experiments.
//! - [`scheduler`]: dependency-graph reordering that minimizes the number of
//!   simultaneously alive qudits.
//! - [`state`], [`engine`], [`rng`]: the trajectory engine.
//! - [`decoder`]: detector graphs and minimum-weight matching.
//! - [`analysis`]: logical error fits, detection statistics, rate models.
//! - [`experiment`]: batch experiment runner backing the CLI.

pub mod analysis;
pub mod builders;
pub mod channel;
pub mod circuit;
pub mod decoder;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod matrix;
pub mod noise;
pub mod rng;
pub mod rpa;
pub mod scheduler;
pub mod state;
pub mod subspace;

pub use channel::{dephase, is_incoherent_kraus_set, process_fidelity, KrausChannel};
pub use error::{Error, Result};
pub use matrix::{ComplexMatrix, C64};
// pub use rpa::RpaChannel;
pub use subspace::{BlockStructure, SubspaceDecomposition, SubspaceLabel};
