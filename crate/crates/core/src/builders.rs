//! Memory-experiment circuit builders: the Z-basis repetition code and the
//! rotated surface code, with noise channels inserted after every gate and
//! idle window.
//!
//! Idle windows on a qudit are merged until its next gate (the Lindblad
//! channels form a semigroup, so splitting or merging windows is exact), but
//! never across a round boundary so leakage snapshots land at round ends.

use std::collections::HashMap;
use std::sync::Arc;

use crate::channel::KrausChannel;
use crate::circuit::{
    Circuit, CircuitMeta, ClassicalFnTable, CodeKind, OpKind, Operation, QuditDecl, QuditRole,
    RegId, StabInfo, StabKind,
};
use crate::error::{Error, Result};
use crate::matrix::{ComplexMatrix, C64, ONE, ZERO};
use crate::noise::{
    cz_gate, embed_gate, eta_phase_diag, hadamard2, lindblad_channel, pauli_x2, NoiseParams,
};
use crate::state::QuditId;

/// Snapshot request: record ⟨ψ|O|ψ⟩ on one data qudit after every round.
#[derive(Clone, Debug)]
pub struct SnapshotSpec {
    pub data_index: usize,
    pub observable: ComplexMatrix,
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub code: CodeKind,
    pub distance: usize,
    pub rounds: usize,
    pub params: NoiseParams,
    /// Local dimension: 3 for qutrit circuits, 2 for the leak-free subspace.
    pub local_dim: usize,
    pub noiseless: bool,
    /// Repetition code: start from a recorded random bit string.
    pub random_prep: bool,
    /// Repetition code: X flips on all data qubits at the end of each round.
    pub logical_flips: bool,
    /// Custom initial data states (overrides random_prep).
    pub initial_data_states: Option<Vec<Vec<C64>>>,
    pub snapshot: Option<SnapshotSpec>,
}

impl BuildOptions {
    pub fn new(code: CodeKind, distance: usize, rounds: usize, params: NoiseParams) -> Self {
        Self {
            code,
            distance,
            rounds,
            params,
            local_dim: 3,
            noiseless: false,
            random_prep: matches!(code, CodeKind::Repetition),
            logical_flips: matches!(code, CodeKind::Repetition),
            initial_data_states: None,
            snapshot: None,
        }
    }
}

pub fn build_repetition_code(d: usize, rounds: usize, params: NoiseParams) -> Result<Circuit> {
    build_circuit(&BuildOptions::new(CodeKind::Repetition, d, rounds, params))
}

pub fn build_surface_code(d: usize, rounds: usize, params: NoiseParams) -> Result<Circuit> {
    build_circuit(&BuildOptions::new(CodeKind::Surface, d, rounds, params))
}

// CZ slot directions on the rotated lattice (dx, dy).
const DIRS: [(i32, i32); 4] = [(1, 1), (-1, 1), (1, -1), (-1, -1)]; // NE, NW, SE, SW
const X_ORDER: [usize; 4] = [0, 1, 2, 3]; // NE, NW, SE, SW
const Z_ORDER: [usize; 4] = [0, 2, 1, 3]; // NE, SE, NW, SW

struct Geometry {
    qudits: Vec<QuditDecl>,
    data: Vec<QuditId>,
    stabs: Vec<(QuditId, StabKind, (i32, i32), Vec<Option<QuditId>>)>,
    logical_reps: Vec<usize>,
}

fn repetition_geometry(d: usize, local_dim: usize) -> Result<Geometry> {
    if d < 3 || d % 2 == 0 {
        return Err(Error::Config(format!("repetition distance must be odd and ≥ 3, got {d}")));
    }
    let mut qudits = Vec::new();
    for i in 0..d {
        qudits.push(QuditDecl {
            id: i,
            role: QuditRole::Data,
            local_dim,
            coord: (2 * i as i32, 0),
        });
    }
    let mut stabs = Vec::new();
    for j in 0..d - 1 {
        let id = d + j;
        qudits.push(QuditDecl {
            id,
            role: QuditRole::Measure,
            local_dim,
            coord: (2 * j as i32 + 1, 0),
        });
        // Slot 0: right neighbor, slot 1: left neighbor. The right-then-left
        // order lets the scheduler stream one measure qubit at a time.
        stabs.push((id, StabKind::Z, (2 * j as i32 + 1, 0), vec![Some(j + 1), Some(j)]));
    }
    Ok(Geometry {
        qudits,
        data: (0..d).collect(),
        stabs,
        logical_reps: vec![0],
    })
}

fn surface_geometry(d: usize, local_dim: usize) -> Result<Geometry> {
    if d != 3 && d != 5 {
        return Err(Error::Config(format!("surface distance must be 3 or 5, got {d}")));
    }
    let span = 2 * d as i32;
    let mut qudits = Vec::new();
    let mut data_at = HashMap::new();
    for y in (1..span).step_by(2) {
        for x in (1..span).step_by(2) {
            let id = qudits.len();
            data_at.insert((x, y), id);
            qudits.push(QuditDecl { id, role: QuditRole::Data, local_dim, coord: (x, y) });
        }
    }
    let n_data = qudits.len();
    let mut stabs = Vec::new();
    let mut coords: Vec<(i32, i32)> = Vec::new();
    for x in (0..=span).step_by(2) {
        for y in (0..=span).step_by(2) {
            let kind = if (x + y).rem_euclid(4) == 0 { StabKind::Z } else { StabKind::X };
            let neighbors: Vec<(i32, i32)> = DIRS
                .iter()
                .map(|&(dx, dy)| (x + dx, y + dy))
                .filter(|c| data_at.contains_key(c))
                .collect();
            let interior = x > 0 && x < span && y > 0 && y < span;
            let include = if interior {
                neighbors.len() == 4
            } else if neighbors.len() != 2 {
                false
            } else if y == 0 || y == span {
                kind == StabKind::X
            } else {
                kind == StabKind::Z
            };
            if include {
                coords.push((x, y));
            }
        }
    }
    coords.sort();
    for (x, y) in coords {
        let kind = if (x + y).rem_euclid(4) == 0 { StabKind::Z } else { StabKind::X };
        let id = qudits.len();
        qudits.push(QuditDecl { id, role: QuditRole::Measure, local_dim, coord: (x, y) });
        let order = if kind == StabKind::X { X_ORDER } else { Z_ORDER };
        let slots: Vec<Option<QuditId>> = order
            .iter()
            .map(|&k| {
                let (dx, dy) = DIRS[k];
                data_at.get(&(x + dx, y + dy)).copied()
            })
            .collect();
        stabs.push((id, kind, (x, y), slots));
    }
    let expected = d * d - 1;
    if stabs.len() != expected {
        return Err(Error::Config(format!(
            "surface layout produced {} stabilizers, expected {expected}",
            stabs.len()
        )));
    }
    // Logical Z: the y = 1 row of data qubits.
    let logical_reps: Vec<usize> = (0..n_data)
        .filter(|&i| qudits[i].coord.1 == 1)
        .collect();
    Ok(Geometry { qudits, data: (0..n_data).collect(), stabs, logical_reps })
}

/// Build-time emission state: operation list, idle accumulators, channel cache.
struct Emitter {
    ops: Vec<Operation>,
    idle_ns: Vec<f64>,
    alive: Vec<bool>,
    params: NoiseParams,
    local_dim: usize,
    noiseless: bool,
    // duration bits, with_eta -> channel
    cache: HashMap<(u64, bool), Arc<KrausChannel>>,
    unitary_cache: HashMap<&'static str, Arc<ComplexMatrix>>,
}

impl Emitter {
    fn new(n_qudits: usize, params: NoiseParams, local_dim: usize, noiseless: bool) -> Self {
        Self {
            ops: Vec::new(),
            idle_ns: vec![0.0; n_qudits],
            alive: vec![false; n_qudits],
            params,
            local_dim,
            noiseless,
            cache: HashMap::new(),
            unitary_cache: HashMap::new(),
        }
    }

    fn window_channel(&mut self, t_ns: f64, with_eta: bool) -> Result<Arc<KrausChannel>> {
        let key = (t_ns.to_bits(), with_eta);
        if let Some(ch) = self.cache.get(&key) {
            return Ok(ch.clone());
        }
        let base = lindblad_channel(&self.params.decoherence, t_ns, self.local_dim)?;
        let ch = if with_eta && self.params.eta_ghz != 0.0 && self.local_dim > 2 {
            let diag = ComplexMatrix::diag(&eta_phase_diag(self.params.eta_ghz, t_ns, self.local_dim));
            let kraus = base.kraus().iter().map(|k| k.matmul(&diag)).collect();
            KrausChannel::new(kraus, 1e-8)?
        } else {
            base
        };
        let ch = Arc::new(ch);
        self.cache.insert(key, ch.clone());
        Ok(ch)
    }

    /// Emit accumulated idle noise (with the nonlinearity phase) for a qudit.
    fn flush(&mut self, q: QuditId) -> Result<()> {
        let t = self.idle_ns[q];
        if t <= 0.0 {
            return Ok(());
        }
        self.idle_ns[q] = 0.0;
        if self.noiseless {
            if self.params.eta_ghz != 0.0 && self.local_dim > 2 {
                let diag = ComplexMatrix::diag(&eta_phase_diag(self.params.eta_ghz, t, self.local_dim));
                self.ops.push(Operation {
                    kind: OpKind::Unitary(Arc::new(diag)),
                    qudits: vec![q],
                    duration_ns: t,
                });
            }
            return Ok(());
        }
        let ch = self.window_channel(t, true)?;
        self.ops.push(Operation {
            kind: OpKind::Channel { channel: ch, record: None },
            qudits: vec![q],
            duration_ns: t,
        });
        Ok(())
    }

    fn idle_others(&mut self, active: &[QuditId], dur: f64) {
        for q in 0..self.alive.len() {
            if self.alive[q] && !active.contains(&q) {
                self.idle_ns[q] += dur;
            }
        }
    }

    fn post_gate_noise(&mut self, q: QuditId, dur: f64) -> Result<()> {
        if self.noiseless {
            return Ok(());
        }
        let ch = self.window_channel(dur, false)?;
        self.ops.push(Operation {
            kind: OpKind::Channel { channel: ch, record: None },
            qudits: vec![q],
            duration_ns: dur,
        });
        Ok(())
    }

    fn gate_1q(&mut self, q: QuditId, name: &'static str, dur: f64) -> Result<()> {
        self.flush(q)?;
        let mat = if let Some(m) = self.unitary_cache.get(name) {
            m.clone()
        } else {
            let base = match name {
                "h" => hadamard2(),
                "x" => pauli_x2(),
                _ => unreachable!(),
            };
            let m = Arc::new(embed_gate(&base, self.local_dim, self.params.eta_ghz, dur));
            self.unitary_cache.insert(name, m.clone());
            m
        };
        self.ops.push(Operation { kind: OpKind::Unitary(mat), qudits: vec![q], duration_ns: dur });
        self.post_gate_noise(q, dur)
    }

    fn gate_cz(&mut self, m: QuditId, d: QuditId, cz: &Arc<ComplexMatrix>, dur: f64) -> Result<()> {
        self.flush(m)?;
        self.flush(d)?;
        self.ops.push(Operation {
            kind: OpKind::Unitary(cz.clone()),
            qudits: vec![m, d],
            duration_ns: dur,
        });
        self.post_gate_noise(m, dur)?;
        self.post_gate_noise(d, dur)
    }

    fn create(&mut self, q: QuditId, state: Vec<C64>) {
        self.alive[q] = true;
        self.idle_ns[q] = 0.0;
        self.ops.push(Operation {
            kind: OpKind::Create(Arc::new(state)),
            qudits: vec![q],
            duration_ns: 0.0,
        });
    }

    /// Reset: create in |0⟩ followed by the reset-window noise.
    fn reset(&mut self, q: QuditId, reset_ns: f64) -> Result<()> {
        let mut state = vec![ZERO; self.local_dim];
        state[0] = ONE;
        self.create(q, state);
        if !self.noiseless {
            let ch = self.window_channel(reset_ns, true)?;
            self.ops.push(Operation {
                kind: OpKind::Channel { channel: ch, record: None },
                qudits: vec![q],
                duration_ns: reset_ns,
            });
        }
        Ok(())
    }

    /// Measurement-window noise, destructive readout, decode randomization.
    fn measure(&mut self, q: QuditId, raw: RegId, dec: RegId, measure_ns: f64) -> Result<()> {
        self.flush(q)?;
        if !self.noiseless {
            let ch = self.window_channel(measure_ns, true)?;
            self.ops.push(Operation {
                kind: OpKind::Channel { channel: ch, record: None },
                qudits: vec![q],
                duration_ns: measure_ns,
            });
        }
        self.ops.push(Operation {
            kind: OpKind::DestroyMeasure { record: raw },
            qudits: vec![q],
            duration_ns: 0.0,
        });
        self.alive[q] = false;
        let table = if self.local_dim > 2 {
            ClassicalFnTable::randomize_leaked(raw, dec)
        } else {
            ClassicalFnTable::copy(raw, dec, 2)
        };
        self.ops.push(Operation {
            kind: OpKind::ClassicalFn(Arc::new(table)),
            qudits: vec![],
            duration_ns: 0.0,
        });
        Ok(())
    }
}

pub fn build_circuit(opts: &BuildOptions) -> Result<Circuit> {
    opts.params.validate()?;
    if opts.local_dim != 2 && opts.local_dim != 3 {
        return Err(Error::Config(format!("local dimension must be 2 or 3, got {}", opts.local_dim)));
    }
    if opts.rounds == 0 {
        return Err(Error::Config("need at least one round".into()));
    }
    let geo = match opts.code {
        CodeKind::Repetition => repetition_geometry(opts.distance, opts.local_dim)?,
        CodeKind::Surface => surface_geometry(opts.distance, opts.local_dim)?,
    };
    let n_data = geo.data.len();
    let n_stabs = geo.stabs.len();
    let durations = opts.params.durations;

    // Register layout: [stab raw | stab dec] per (round, stab), then prep,
    // then final raw/dec per data qudit.
    let mut next_reg = 0usize;
    let mut alloc = |n: usize| -> Vec<RegId> {
        let v = (next_reg..next_reg + n).collect();
        next_reg += n;
        v
    };
    let mut raw_regs: Vec<Vec<RegId>> = vec![Vec::new(); n_stabs];
    let mut dec_regs: Vec<Vec<RegId>> = vec![Vec::new(); n_stabs];
    for _round in 0..opts.rounds {
        for s in 0..n_stabs {
            raw_regs[s].push(alloc(1)[0]);
            dec_regs[s].push(alloc(1)[0]);
        }
    }
    let use_random_prep = matches!(opts.code, CodeKind::Repetition)
        && opts.random_prep
        && opts.initial_data_states.is_none();
    let prep_regs = if use_random_prep { Some(alloc(n_data)) } else { None };
    let final_raw = alloc(n_data);
    let final_dec = alloc(n_data);
    let num_regs = next_reg;

    let mut em = Emitter::new(geo.qudits.len(), opts.params, opts.local_dim, opts.noiseless);

    // Initial data preparation.
    for (i, &q) in geo.data.iter().enumerate() {
        let state = if let Some(states) = &opts.initial_data_states {
            let s = states.get(i).cloned().ok_or_else(|| {
                Error::Config("initial_data_states must cover every data qudit".into())
            })?;
            if s.len() != opts.local_dim {
                return Err(Error::Config("initial state has wrong dimension".into()));
            }
            s
        } else {
            let mut s = vec![ZERO; opts.local_dim];
            s[0] = ONE;
            s
        };
        em.create(q, state);
    }
    if let Some(prep) = &prep_regs {
        // Recorded random bit string: I or X with probability 1/2 each.
        let dur = durations.unitary_ns;
        let half = C64::new(0.5f64.sqrt(), 0.0);
        let ident = ComplexMatrix::identity(opts.local_dim).scale(half);
        let flip = embed_gate(&pauli_x2(), opts.local_dim, opts.params.eta_ghz, dur).scale(half);
        let prep_channel = Arc::new(KrausChannel::new(vec![ident, flip], 1e-12)?);
        for (i, &q) in geo.data.iter().enumerate() {
            em.ops.push(Operation {
                kind: OpKind::Channel { channel: prep_channel.clone(), record: Some(prep[i]) },
                qudits: vec![q],
                duration_ns: dur,
            });
            em.post_gate_noise(q, dur)?;
        }
    }

    let cz_mat = if opts.local_dim == 3 {
        let ch = cz_gate(&opts.params.cz_params(), 3)?;
        Arc::new(ch.kraus()[0].clone())
    } else {
        Arc::new(ComplexMatrix::diag(&[ONE, ONE, ONE, C64::new(-1.0, 0.0)]))
    };

    let n_slots = match opts.code {
        CodeKind::Repetition => 2,
        CodeKind::Surface => 4,
    };
    // Per data qudit, the stabilizer kind interacting at each slot.
    let mut slot_kind: Vec<Vec<Option<StabKind>>> = vec![vec![None; n_slots]; n_data];
    for (_, kind, _, slots) in &geo.stabs {
        for (k, d) in slots.iter().enumerate() {
            if let Some(d) = d {
                slot_kind[*d][k] = Some(*kind);
            }
        }
    }
    // Hadamard windows per data qudit: in which of the n_slots+1 single-qubit
    // windows does the qudit change basis frame.
    let mut frame_flips: Vec<Vec<bool>> = vec![vec![false; n_slots + 1]; n_data];
    if matches!(opts.code, CodeKind::Surface) {
        for d in 0..n_data {
            let mut cur = StabKind::Z;
            for k in 0..n_slots {
                if let Some(kind) = slot_kind[d][k] {
                    if kind != cur {
                        frame_flips[d][k] = true;
                        cur = kind;
                    }
                }
            }
            if cur != StabKind::Z {
                frame_flips[d][n_slots] = true;
            }
        }
    }

    let gate_ns = durations.unitary_ns;
    for round in 0..opts.rounds {
        // Reset slice.
        let measures: Vec<QuditId> = geo.stabs.iter().map(|s| s.0).collect();
        for &m in &measures {
            em.reset(m, durations.reset_ns)?;
        }
        em.idle_others(&measures, durations.reset_ns);

        // Single-qubit window 0: measure Hadamards + data frame entries.
        let mut active = Vec::new();
        for &m in &measures {
            em.gate_1q(m, "h", gate_ns)?;
            active.push(m);
        }
        for d in 0..n_data {
            if frame_flips[d][0] {
                em.gate_1q(geo.data[d], "h", gate_ns)?;
                active.push(geo.data[d]);
            }
        }
        em.idle_others(&active, gate_ns);

        for slot in 0..n_slots {
            let mut active = Vec::new();
            for (m, _, _, slots) in &geo.stabs {
                if let Some(d) = slots[slot] {
                    em.gate_cz(*m, geo.data[d], &cz_mat, gate_ns)?;
                    active.push(*m);
                    active.push(geo.data[d]);
                }
            }
            em.idle_others(&active, gate_ns);
            // Inter-slot single-qubit window (surface code frame changes).
            if slot + 1 < n_slots {
                let mut active = Vec::new();
                if matches!(opts.code, CodeKind::Surface) {
                    for d in 0..n_data {
                        if frame_flips[d][slot + 1] {
                            em.gate_1q(geo.data[d], "h", gate_ns)?;
                            active.push(geo.data[d]);
                        }
                    }
                    em.idle_others(&active, gate_ns);
                }
                // The repetition code has back-to-back CZ slices.
            }
        }

        // Closing single-qubit window: measure Hadamards + data frame exits.
        let mut active = Vec::new();
        for &m in &measures {
            em.gate_1q(m, "h", gate_ns)?;
            active.push(m);
        }
        for d in 0..n_data {
            if frame_flips[d][n_slots] {
                em.gate_1q(geo.data[d], "h", gate_ns)?;
                active.push(geo.data[d]);
            }
        }
        em.idle_others(&active, gate_ns);

        // Measurement slice.
        for (s, (m, _, _, _)) in geo.stabs.iter().enumerate() {
            em.measure(*m, raw_regs[s][round], dec_regs[s][round], durations.measure_ns)?;
        }
        em.idle_others(&[], durations.measure_ns);

        // Logical flips (repetition code).
        if matches!(opts.code, CodeKind::Repetition) && opts.logical_flips {
            for &q in &geo.data {
                em.gate_1q(q, "x", gate_ns)?;
            }
        }

        // Round boundary: flush idles so leakage snapshots see the full round.
        for &q in &geo.data {
            em.flush(q)?;
        }
        em.ops.push(Operation {
            kind: OpKind::RoundBoundary { round },
            qudits: geo.data.clone(),
            duration_ns: 0.0,
        });
        if let Some(spec) = &opts.snapshot {
            em.ops.push(Operation {
                kind: OpKind::SnapshotObservable(Arc::new(spec.observable.clone())),
                qudits: vec![geo.data[spec.data_index]],
                duration_ns: 0.0,
            });
        }
    }

    // Final data readout.
    for (i, &q) in geo.data.iter().enumerate() {
        em.measure(q, final_raw[i], final_dec[i], durations.measure_ns)?;
    }

    let slot_windows = if matches!(opts.code, CodeKind::Surface) {
        (n_slots + 1) as f64
    } else {
        2.0 // opening and closing Hadamard windows only
    };
    let mut round_ns = durations.reset_ns
        + durations.measure_ns
        + gate_ns * (n_slots as f64 + slot_windows);
    if matches!(opts.code, CodeKind::Repetition) && opts.logical_flips {
        round_ns += gate_ns;
    }

    let stabilizers = geo
        .stabs
        .iter()
        .enumerate()
        .map(|(s, (id, kind, coord, slots))| StabInfo {
            qudit: *id,
            kind: *kind,
            coord: *coord,
            neighbors_by_slot: slots.clone(),
            raw_regs: raw_regs[s].clone(),
            dec_regs: dec_regs[s].clone(),
        })
        .collect();

    let circuit = Circuit {
        qudits: geo.qudits,
        num_regs,
        ops: em.ops,
        meta: CircuitMeta {
            code: opts.code,
            distance: opts.distance,
            rounds: opts.rounds,
            round_ns,
            stabilizers,
            data_qudits: geo.data,
            prep_regs,
            final_raw_regs: final_raw,
            final_dec_regs: final_dec,
            logical_reps: geo.logical_reps,
            flips_per_round: matches!(opts.code, CodeKind::Repetition) && opts.logical_flips,
        },
    };
    circuit.validate()?;
    Ok(circuit)
}
