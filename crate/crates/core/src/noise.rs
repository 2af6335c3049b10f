//! Concrete noise channels: Lindblad decoherence / heating / cooling /
//! dephasing evolved over gate durations, and the qutrit CZ gate with
//! controlled-leakage phases, nonlinearity phases and coherent |11⟩↔|02⟩
//! transitions.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{choi_from_superop, KrausChannel};
use crate::error::Result;
use crate::matrix::{ComplexMatrix, C64, ONE, ZERO};

/// Decoherence time scales in microseconds; `f64::INFINITY` disables a term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoherenceParams {
    /// |1⟩→|0⟩ decay time; γ01 = 1/T1.
    pub t1_us: f64,
    /// White-noise dephasing time; L_dephase = sqrt(2/Tφ)·n.
    pub t_phi_us: f64,
    /// Leakage lifetime |2⟩→|1⟩; γ12 = 1/T_L.
    pub t_l_us: f64,
    /// Heating time; L_heat = a†/sqrt(T_h), so the 1→2 transition time is T_h/2.
    pub t_h_us: f64,
}

impl DecoherenceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t1_us", self.t1_us),
            ("t_phi_us", self.t_phi_us),
            ("t_l_us", self.t_l_us),
            ("t_h_us", self.t_h_us),
        ] {
            if !(v > 0.0) {
                return Err(crate::error::Error::Config(format!(
                    "{name} must be positive (or infinite), got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Drop every leakage-producing term (heating off). Decay, leakage
    /// cooling and dephasing are kept.
    pub fn without_heating(&self) -> Self {
        Self { t_h_us: f64::INFINITY, ..*self }
    }
}

/// Which qudit of a CZ pair undergoes the coherent |11⟩↔|02⟩ transition
/// (the one that ends in |2⟩).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeakingSlot {
    First,
    Second,
}

/// Parameters of the qutrit CZ gate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CzGateParams {
    /// |11⟩↔|02⟩ transition probability.
    pub p: f64,
    /// Transition phase of the |11⟩↔|02⟩ submatrix.
    pub phi_11_02: f64,
    /// Controlled leakage phase φ = φ02 − φ12; only the difference is
    /// observable, so φ12 is fixed to zero and φ02 carries it all.
    pub phi: f64,
    /// Transmon nonlinearity in GHz; leaked amplitudes accrue e^{-i 2π η t}
    /// per excitation beyond |1⟩ over the gate duration.
    pub eta_ghz: f64,
    /// Gate duration in ns.
    pub duration_ns: f64,
    /// Which qudit of the pair coherently leaks.
    pub leaking: LeakingSlot,
}

impl CzGateParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(crate::error::Error::Config(format!(
                "cz transition probability must be in [0,1], got {}",
                self.p
            )));
        }
        Ok(())
    }
}

/// Gate and readout durations in nanoseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateDurations {
    pub unitary_ns: f64,
    pub reset_ns: f64,
    pub measure_ns: f64,
}

impl Default for GateDurations {
    fn default() -> Self {
        Self { unitary_ns: 25.0, reset_ns: 600.0, measure_ns: 300.0 }
    }
}

/// Full noise parameter set for an experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseParams {
    pub decoherence: DecoherenceParams,
    /// CZ transition probability (0 disables coherent leakage).
    pub cz_p: f64,
    pub cz_phi_11_02: f64,
    /// Controlled leakage phase φ = φ02 − φ12.
    pub cz_phi: f64,
    /// Nonlinearity in GHz, applied during every timed window.
    pub eta_ghz: f64,
    pub durations: GateDurations,
}

impl NoiseParams {
    /// Heating-driven leakage, no coherent CZ transitions.
    pub fn thermal() -> Self {
        Self {
            decoherence: DecoherenceParams {
                t1_us: 20.0,
                t_phi_us: 80.0,
                t_l_us: 10.0,
                t_h_us: 1000.0,
            },
            cz_p: 0.0,
            cz_phi_11_02: 0.0,
            cz_phi: std::f64::consts::FRAC_PI_2,
            eta_ghz: 0.0,
            durations: GateDurations::default(),
        }
    }

    /// Purely coherent CZ leakage, no heating.
    pub fn coherent() -> Self {
        Self {
            decoherence: DecoherenceParams {
                t1_us: 20.0,
                t_phi_us: 80.0,
                t_l_us: 10.0,
                t_h_us: f64::INFINITY,
            },
            cz_p: 2.4e-3,
            cz_phi_11_02: 0.0,
            cz_phi: std::f64::consts::FRAC_PI_2,
            eta_ghz: 0.3,
            durations: GateDurations::default(),
        }
    }

    /// Both leakage mechanisms at experimentally motivated strengths.
    pub fn physical() -> Self {
        Self {
            decoherence: DecoherenceParams {
                t1_us: 20.0,
                t_phi_us: 40.0,
                t_l_us: 10.0,
                t_h_us: 1000.0,
            },
            cz_p: 4.0e-4,
            cz_phi_11_02: 0.0,
            cz_phi: std::f64::consts::FRAC_PI_2,
            eta_ghz: 0.2,
            durations: GateDurations::default(),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "thermal" => Some(Self::thermal()),
            "coherent" => Some(Self::coherent()),
            "physical" => Some(Self::physical()),
            _ => None,
        }
    }

    /// The matched zero-leakage baseline: CZ transitions off and heating off.
    pub fn leak_free(&self) -> Self {
        Self {
            decoherence: self.decoherence.without_heating(),
            cz_p: 0.0,
            ..*self
        }
    }

    pub fn cz_params(&self) -> CzGateParams {
        CzGateParams {
            p: self.cz_p,
            phi_11_02: self.cz_phi_11_02,
            phi: self.cz_phi,
            eta_ghz: self.eta_ghz,
            duration_ns: self.durations.unitary_ns,
            leaking: LeakingSlot::Second,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.decoherence.validate()?;
        self.cz_params().validate()
    }
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Lindblad jump operators for a `dim`-level transmon, rates per µs.
fn lindblad_ops(params: &DecoherenceParams, dim: usize) -> Vec<ComplexMatrix> {
    let mut ops = Vec::new();
    // Cooling: lowering operator entries sqrt(γ01), sqrt(γ12).
    let mut cool = ComplexMatrix::zeros(dim, dim);
    let mut any = false;
    if params.t1_us.is_finite() {
        cool[(0, 1)] = c((1.0 / params.t1_us).sqrt(), 0.0);
        any = true;
    }
    if dim > 2 && params.t_l_us.is_finite() {
        cool[(1, 2)] = c((1.0 / params.t_l_us).sqrt(), 0.0);
        any = true;
    }
    if any {
        ops.push(cool);
    }
    // Heating: a†/sqrt(T_h); the |2⟩⟨1| element is sqrt(2/T_h).
    if params.t_h_us.is_finite() {
        let mut heat = ComplexMatrix::zeros(dim, dim);
        heat[(1, 0)] = c((1.0 / params.t_h_us).sqrt(), 0.0);
        if dim > 2 {
            heat[(2, 1)] = c((2.0 / params.t_h_us).sqrt(), 0.0);
        }
        ops.push(heat);
    }
    // Dephasing: sqrt(2/Tφ) · n.
    if params.t_phi_us.is_finite() {
        let r = (2.0 / params.t_phi_us).sqrt();
        let mut deph = ComplexMatrix::zeros(dim, dim);
        for k in 1..dim {
            deph[(k, k)] = c(r * k as f64, 0.0);
        }
        ops.push(deph);
    }
    ops
}

/// Lindbladian superoperator `Σ_i D[L_i]` in the row-major vec convention.
pub fn lindblad_superop(params: &DecoherenceParams, dim: usize) -> ComplexMatrix {
    let n = dim * dim;
    let id = ComplexMatrix::identity(dim);
    let mut s = ComplexMatrix::zeros(n, n);
    for l in lindblad_ops(params, dim) {
        let ldl = l.adjoint().matmul(&l);
        let jump = l.kron(&l.conj());
        let anti = ldl
            .kron(&id)
            .add(&id.kron(&ldl.conj()))
            .scale(c(0.5, 0.0));
        s = s.add(&jump).add(&anti.scale(c(-1.0, 0.0)));
    }
    s
}

/// Kraus channel of `exp(t Σ D[L_i])` for a window of `t_ns` nanoseconds.
pub fn lindblad_channel(params: &DecoherenceParams, t_ns: f64, dim: usize) -> Result<KrausChannel> {
    assert!(t_ns >= 0.0);
    let t_us = t_ns * 1e-3;
    let gen = lindblad_superop(params, dim).scale(c(t_us, 0.0));
    let s = gen.expm()?;
    let choi = choi_from_superop(&s, dim, dim);
    KrausChannel::from_choi(&choi, dim, dim, 1e-12)
}

/// Diagonal of nonlinearity phases for one qudit over a window: level k
/// acquires `e^{-i 2π η t}` per excitation beyond |1⟩. η in GHz, t in ns.
pub fn eta_phase_diag(eta_ghz: f64, t_ns: f64, dim: usize) -> Vec<C64> {
    (0..dim)
        .map(|k| {
            let ex = k.saturating_sub(1) as f64;
            c(0.0, -2.0 * std::f64::consts::PI * eta_ghz * t_ns * ex).exp()
        })
        .collect()
}

/// Embed a 2x2 computational-subspace gate into a `dim`-level qudit, acting
/// as the nonlinearity phase on leaked levels.
pub fn embed_gate(base: &ComplexMatrix, dim: usize, eta_ghz: f64, t_ns: f64) -> ComplexMatrix {
    assert_eq!(base.rows(), 2);
    let mut u = ComplexMatrix::zeros(dim, dim);
    for r in 0..2 {
        for cc in 0..2 {
            u[(r, cc)] = base[(r, cc)];
        }
    }
    let phases = eta_phase_diag(eta_ghz, t_ns, dim);
    for k in 2..dim {
        u[(k, k)] = phases[k];
    }
    u
}

pub fn hadamard2() -> ComplexMatrix {
    let s = 1.0 / 2.0f64.sqrt();
    ComplexMatrix::from_vec(2, 2, vec![c(s, 0.0), c(s, 0.0), c(s, 0.0), c(-s, 0.0)]).unwrap()
}

pub fn pauli_x2() -> ComplexMatrix {
    ComplexMatrix::from_vec(2, 2, vec![ZERO, ONE, ONE, ZERO]).unwrap()
}

/// The qutrit CZ gate as a 9×9 unitary on the ordered pair, composed of the
/// diagonal phase matrix (π on |11⟩, φ02/φ12 on the leaked-data states,
/// nonlinearity phases on every excitation beyond |1⟩) multiplied by the
/// |11⟩↔|02⟩ transition submatrix.
pub fn cz_gate(params: &CzGateParams, local_dim: usize) -> Result<KrausChannel> {
    params.validate()?;
    let d = local_dim;
    let dim2 = d * d;
    // Index of the joint state (other, leaking) respecting the pair order.
    let idx = |other: usize, leak: usize| -> usize {
        match params.leaking {
            LeakingSlot::Second => other * d + leak,
            LeakingSlot::First => leak * d + other,
        }
    };
    let eta = eta_phase_diag(params.eta_ghz, params.duration_ns, d);
    let mut diag = vec![ONE; dim2];
    for other in 0..d {
        for leak in 0..d {
            let mut z = eta[other] * eta[leak];
            if other == 1 && leak == 1 {
                z *= c(-1.0, 0.0);
            }
            if leak == 2 && other == 0 {
                z *= c(0.0, params.phi).exp(); // φ02 carries the difference
            }
            // φ12 fixed to 0.
            diag[idx(other, leak)] = z;
        }
    }
    let mut u = ComplexMatrix::diag(&diag);
    if params.p > 0.0 && d > 2 {
        let a = idx(1, 1); // |11⟩
        let b = idx(0, 2); // |02⟩
        let sp = params.p.sqrt();
        let sq = (1.0 - params.p).sqrt();
        let ph = c(0.0, params.phi_11_02).exp();
        let mut t = ComplexMatrix::identity(dim2);
        t[(a, a)] = c(sq, 0.0);
        t[(a, b)] = ph.scale(-sp);
        t[(b, a)] = ph.conj().scale(sp);
        t[(b, b)] = c(sq, 0.0);
        u = t.matmul(&u);
    }
    debug_assert!(u.is_unitary(1e-12));
    KrausChannel::unitary(u)
}

/// The two Kraus operators of one idealized noiseless stabilizer cycle acting
/// on (data ⊗ rest-parity), with the measure qubit prepared in |0⟩ and read
/// out. `rest` is a two-level system whose |0⟩ stands for the −1 eigenspace
/// of the remaining stabilizer qubits. Used as an analysis oracle.
pub fn stabilizer_cz_kraus(phi: f64) -> (ComplexMatrix, ComplexMatrix) {
    let mut l0 = ComplexMatrix::zeros(3, 3);
    l0[(0, 0)] = ONE;
    l0[(2, 2)] = c((phi / 2.0).cos(), 0.0);
    let mut l1 = ComplexMatrix::zeros(3, 3);
    l1[(1, 1)] = ONE;
    l1[(2, 2)] = c(0.0, (phi / 2.0).sin());
    let p0 = ComplexMatrix::diag(&[ONE, ZERO]);
    let p1 = ComplexMatrix::diag(&[ZERO, ONE]);
    let k0 = l0.kron(&p0).add(&l1.kron(&p1));
    let k1 = l0.kron(&p1).add(&l1.kron(&p0));
    (k0, k1)
}

#[allow(dead_code)]
fn _unused(_: Complex64) {}
