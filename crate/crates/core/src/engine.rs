//! Trajectory execution: a scheduled circuit is compiled once per run mode,
//! then each trajectory applies the compiled operations to a fresh state,
//! Born-sampling Kraus indices from per-operation random substreams.
//!
//! Channel sampling applies candidate operators in descending order of
//! average weight; the squared norm of a candidate *is* its Born
//! probability, so the common case costs one operator application and no
//! reduced-density-matrix pass. Norm drift is checked at every destructive
//! measurement and at round boundaries.

use std::collections::HashMap;
use std::sync::Arc;

use crate::channel::KrausChannel;
use crate::circuit::{Circuit, ClassicalFnTable, OpKind, RegId};
use crate::error::{Error, Result};
use crate::matrix::{ComplexMatrix, C64};
use crate::rng::RngFactory;
use crate::rpa::{rpa_transform, RpaChannel};
use crate::scheduler::Schedule;
use crate::state::{QuditId, TrajectoryState};
use crate::subspace::{BlockStructure, SubspaceDecomposition, SubspaceLabel};

/// How a circuit is executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    /// Full local dimension of the circuit (qutrit circuits keep coherence
    /// between computational and leaked states).
    Exact,
    /// Every operation is replaced by its random-phase twirl; qudits carry a
    /// subspace label and the state vector holds one block per qudit.
    Rpa,
}

/// Norm drift beyond this aborts the trajectory.
const NORM_TOL: f64 = 1e-8;

/// One sampling candidate: a Kraus operator or twirl block.
struct Candidate {
    mat: ComplexMatrix,
    /// Per-target output dims (current dims for square operators).
    new_dims: Vec<usize>,
    /// Target labels after application (Rpa mode).
    labels: Vec<SubspaceLabel>,
    /// Original Kraus index.
    index: usize,
}

struct RpaTable {
    /// Indexed by source key: bit i set when target i is leaked.
    by_source: Vec<Option<Vec<Candidate>>>,
}

enum CKind {
    /// Diagonal unitary over the joint target levels.
    Diag(Vec<C64>),
    /// Diagonal followed by a two-level mix (the leaky CZ).
    DiagPairMix { diag: Vec<C64>, a: usize, b: usize, m: [C64; 4] },
    /// Dense unitary (norm drift caught downstream).
    Unitary(Arc<ComplexMatrix>),
    /// Kraus channel, candidates sorted by descending average weight.
    Channel { candidates: Arc<Vec<Candidate>>, record: Option<RegId> },
    /// Twirled channel applied by source-block lookup.
    Rpa { table: Arc<RpaTable>, record: Option<RegId> },
    Create { state: Arc<Vec<C64>>, label: SubspaceLabel, front: bool },
    DestroyMeasure { record: RegId, outcome_map: Vec<u8>, leak_offset: usize },
    Classical(Arc<ClassicalFnTable>),
    Boundary { round: usize },
    Snapshot { comp: ComplexMatrix, leak: Option<ComplexMatrix>, full: Arc<ComplexMatrix> },
}

struct CompiledOp {
    kind: CKind,
    qudits: Vec<QuditId>,
    /// Stream id: the op's index in the unscheduled circuit, so reordering
    /// does not reassign randomness.
    stream: u64,
}

pub struct CompiledCircuit {
    ops: Vec<CompiledOp>,
    pub circuit: Arc<Circuit>,
    pub mode: RunMode,
    pub peak_alive: usize,
    /// Upper bound on the amplitude-vector length implied by the schedule.
    pub state_len_bound: usize,
    n_data: usize,
    rounds: usize,
}

impl CompiledCircuit {
    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn n_data(&self) -> usize {
        self.n_data
    }
}

/// Result of a single trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub registers: Vec<u8>,
    /// Leakage indicator/population per (round, data qudit), row-major.
    pub leak: Vec<f64>,
    /// Snapshot observable values in circuit order.
    pub observables: Vec<C64>,
    pub aborted: Option<String>,
    /// Sampled index per scheduled op (only when requested).
    pub samples: Option<Vec<u32>>,
    pub peak_state_len: usize,
}

fn decomp_for(dim: usize) -> SubspaceDecomposition {
    if dim == 2 {
        SubspaceDecomposition::qubit()
    } else {
        SubspaceDecomposition::qutrit()
    }
}

fn label_bit(l: SubspaceLabel) -> usize {
    match l {
        SubspaceLabel::Comp => 0,
        SubspaceLabel::Leak => 1,
    }
}

/// Average channel weight of an operator under a maximally mixed input.
fn avg_weight(mat: &ComplexMatrix) -> f64 {
    mat.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / mat.cols() as f64
}

/// Detect a diagonal-plus-single-2x2-block structure (the leaky CZ).
fn pair_mix_form(m: &ComplexMatrix) -> Option<(Vec<C64>, usize, usize, [C64; 4])> {
    let n = m.rows();
    let mut offs = Vec::new();
    for r in 0..n {
        for c in 0..n {
            if r != c && m[(r, c)].norm() > 1e-14 {
                offs.push((r, c));
                if offs.len() > 2 {
                    return None;
                }
            }
        }
    }
    if offs.len() != 2 || offs[0] != (offs[1].1, offs[1].0) {
        return None;
    }
    let (a, b) = offs[0];
    let mut diag: Vec<C64> = (0..n).map(|i| m[(i, i)]).collect();
    let mix = [m[(a, a)], m[(a, b)], m[(b, a)], m[(b, b)]];
    diag[a] = C64::new(1.0, 0.0);
    diag[b] = C64::new(1.0, 0.0);
    Some((diag, a, b, mix))
}

fn rpa_table(rpa: &RpaChannel, dim: usize) -> RpaTable {
    let arity = rpa.arity();
    let decomp = decomp_for(dim);
    let mut by_source = Vec::new();
    let blocks = rpa.block_structure();
    for key in 0..(1usize << arity) {
        let source: Vec<SubspaceLabel> = (0..arity)
            .map(|i| {
                if key >> i & 1 == 1 {
                    SubspaceLabel::Leak
                } else {
                    SubspaceLabel::Comp
                }
            })
            .collect();
        if source.iter().any(|&l| decomp.block_dim(l) == 0) {
            by_source.push(None);
            continue;
        }
        let Some(list) = rpa.blocks_for_source(&source) else {
            by_source.push(None);
            continue;
        };
        let mut cands: Vec<Candidate> = list
            .iter()
            .map(|b| Candidate {
                mat: b.mat.clone(),
                new_dims: (0..arity)
                    .map(|i| blocks.qudit(i).block_dim(b.target[i]))
                    .collect(),
                labels: b.target.clone(),
                index: b.source_index,
            })
            .collect();
        cands.sort_by(|a, b| {
            avg_weight(&b.mat)
                .partial_cmp(&avg_weight(&a.mat))
                .unwrap()
                .then(a.index.cmp(&b.index))
        });
        by_source.push(Some(cands));
    }
    RpaTable { by_source }
}

/// Compile a circuit in scheduled order for a run mode.
pub fn compile(circuit: &Arc<Circuit>, schedule: &Schedule, mode: RunMode) -> Result<CompiledCircuit> {
    compile_with_tol(circuit, schedule, mode, 1e-10)
}

pub fn compile_with_tol(
    circuit: &Arc<Circuit>,
    schedule: &Schedule,
    mode: RunMode,
    truncation_tol: f64,
) -> Result<CompiledCircuit> {
    let mut rpa_cache: HashMap<usize, Arc<RpaTable>> = HashMap::new();
    let mut chan_cache: HashMap<usize, Arc<Vec<Candidate>>> = HashMap::new();

    let mut compile_rpa = |key: usize,
                           ch: &KrausChannel,
                           arity: usize,
                           dim: usize,
                           cache: &mut HashMap<usize, Arc<RpaTable>>|
     -> Result<Arc<RpaTable>> {
        if let Some(r) = cache.get(&key) {
            return Ok(r.clone());
        }
        let blocks = BlockStructure::uniform(&decomp_for(dim), arity);
        let rpa = rpa_transform(ch, &blocks, truncation_tol)?;
        let t = Arc::new(rpa_table(&rpa, dim));
        cache.insert(key, t.clone());
        Ok(t)
    };

    let mut ops = Vec::with_capacity(circuit.ops.len());
    for &idx in &schedule.order {
        let op = &circuit.ops[idx];
        let dim = op.qudits.first().map_or(2, |&q| circuit.local_dim(q));
        let kind = match (&op.kind, mode) {
            (OpKind::Unitary(m), RunMode::Exact) => {
                if m.is_diagonal(1e-14) {
                    CKind::Diag((0..m.rows()).map(|i| m[(i, i)]).collect())
                } else if let Some((diag, a, b, mix)) = pair_mix_form(m) {
                    CKind::DiagPairMix { diag, a, b, m: mix }
                } else {
                    CKind::Unitary(m.clone())
                }
            }
            (OpKind::Unitary(m), RunMode::Rpa) => {
                let key = Arc::as_ptr(m) as usize;
                let ch = KrausChannel::unitary(m.as_ref().clone())?;
                let table = compile_rpa(key, &ch, op.qudits.len(), dim, &mut rpa_cache)?;
                CKind::Rpa { table, record: None }
            }
            (OpKind::Channel { channel, record }, RunMode::Exact) => {
                let key = Arc::as_ptr(channel) as usize;
                let candidates = if let Some(c) = chan_cache.get(&key) {
                    c.clone()
                } else {
                    let dims: Vec<usize> = op.qudits.iter().map(|&q| circuit.local_dim(q)).collect();
                    let mut cands: Vec<Candidate> = channel
                        .kraus()
                        .iter()
                        .enumerate()
                        .map(|(j, k)| Candidate {
                            mat: k.clone(),
                            new_dims: dims.clone(),
                            labels: vec![],
                            index: j,
                        })
                        .collect();
                    cands.sort_by(|a, b| {
                        avg_weight(&b.mat)
                            .partial_cmp(&avg_weight(&a.mat))
                            .unwrap()
                            .then(a.index.cmp(&b.index))
                    });
                    let c = Arc::new(cands);
                    chan_cache.insert(key, c.clone());
                    c
                };
                CKind::Channel { candidates, record: *record }
            }
            (OpKind::Channel { channel, record }, RunMode::Rpa) => {
                let key = Arc::as_ptr(channel) as usize;
                let table = compile_rpa(key, channel, op.qudits.len(), dim, &mut rpa_cache)?;
                CKind::Rpa { table, record: *record }
            }
            (OpKind::Create(state), _) => {
                let (label, block_state) = match mode {
                    RunMode::Exact => (SubspaceLabel::Comp, state.as_ref().clone()),
                    RunMode::Rpa => {
                        let decomp = decomp_for(state.len());
                        let mut found = None;
                        for label in decomp.labels() {
                            let ix = decomp.block_indices(label).unwrap();
                            let inside: f64 = ix.iter().map(|&i| state[i].norm_sqr()).sum();
                            if (inside - 1.0).abs() < 1e-12 {
                                found =
                                    Some((label, ix.iter().map(|&i| state[i]).collect::<Vec<_>>()));
                                break;
                            }
                        }
                        found.ok_or_else(|| {
                            Error::Circuit(
                                "initial state spans subspace blocks; incoherent runs need \
                                 block-confined preparations"
                                    .into(),
                            )
                        })?
                    }
                };
                let front = circuit.qudits[op.qudits[0]].role
                    == crate::circuit::QuditRole::Measure;
                CKind::Create { state: Arc::new(block_state), label, front }
            }
            (OpKind::DestroyMeasure { record }, _) => {
                let decomp = decomp_for(dim);
                let mut outcome_map = Vec::new();
                let mut leak_offset = 0usize;
                match mode {
                    RunMode::Exact => {
                        outcome_map = (0..dim as u8).collect();
                    }
                    RunMode::Rpa => {
                        for l in decomp.labels() {
                            if l == SubspaceLabel::Leak {
                                leak_offset = outcome_map.len();
                            }
                            for &i in decomp.block_indices(l).unwrap() {
                                outcome_map.push(i as u8);
                            }
                        }
                    }
                }
                CKind::DestroyMeasure { record: *record, outcome_map, leak_offset }
            }
            (OpKind::ClassicalFn(t), _) => CKind::Classical(t.clone()),
            (OpKind::RoundBoundary { round }, _) => CKind::Boundary { round: *round },
            (OpKind::SnapshotObservable(m), _) => {
                let decomp = decomp_for(dim);
                let xc = decomp.embedding(SubspaceLabel::Comp);
                let comp = xc.adjoint().matmul(m).matmul(&xc);
                let leak = decomp.block_indices(SubspaceLabel::Leak).map(|_| {
                    let xl = decomp.embedding(SubspaceLabel::Leak);
                    xl.adjoint().matmul(m).matmul(&xl)
                });
                CKind::Snapshot { comp, leak, full: m.clone() }
            }
        };
        ops.push(CompiledOp { kind, qudits: op.qudits.clone(), stream: idx as u64 });
    }

    let max_block = match mode {
        RunMode::Exact => circuit.qudits.iter().map(|q| q.local_dim).max().unwrap_or(2),
        RunMode::Rpa => 2,
    };
    let state_len_bound = max_block.pow(schedule.peak_alive as u32);
    Ok(CompiledCircuit {
        ops,
        circuit: circuit.clone(),
        mode,
        peak_alive: schedule.peak_alive,
        state_len_bound,
        n_data: circuit.meta.data_qudits.len(),
        rounds: circuit.meta.rounds,
    })
}

/// Walk the candidate list, applying operators until the drawn uniform lands
/// inside one's Born probability. Returns the chosen candidate index within
/// the list.
fn sample_candidates(
    state: &mut TrajectoryState,
    targets: &[QuditId],
    candidates: &[Candidate],
    rng: &mut crate::rng::RandomStream,
) -> Result<usize> {
    let mut u = rng.next_f64();
    let scale_sq = state.norm_scale_sq();
    for (i, cand) in candidates.iter().enumerate() {
        let raw = state.apply_candidate(targets, &cand.mat, &cand.new_dims);
        let p = raw * scale_sq;
        if u < p {
            state.commit_candidate(raw);
            return Ok(i);
        }
        u -= p;
        state.discard_candidate();
    }
    Err(Error::Trajectory(format!(
        "channel probabilities fell short of the drawn uniform by {u:.3e}"
    )))
}

/// Apply a probabilistic register function.
fn apply_classical_fn(
    state: &mut TrajectoryState,
    table: &ClassicalFnTable,
    rng: &mut crate::rng::RandomStream,
) -> Result<usize> {
    let branch = if table.branches.len() == 1 {
        0
    } else {
        let mut u = rng.next_f64();
        let mut chosen = table.branches.len() - 1;
        for (j, (p, _)) in table.branches.iter().enumerate() {
            if u < *p {
                chosen = j;
                break;
            }
            u -= p;
        }
        chosen
    };
    let inputs: Vec<u8> = table.inputs.iter().map(|&r| state.reg(r)).collect();
    let outputs = table.branches[branch]
        .1
        .get(&inputs)
        .ok_or_else(|| Error::Trajectory(format!("classical fn undefined on {inputs:?}")))?;
    for (r, &v) in table.outputs.iter().zip(outputs) {
        state.set_reg(*r, v);
    }
    Ok(branch)
}

/// Execute one trajectory of a compiled circuit.
pub fn run_trajectory(
    compiled: &CompiledCircuit,
    factory: &RngFactory,
    trajectory: u64,
    record_samples: bool,
) -> TrajectoryRecord {
    let circuit = &compiled.circuit;
    let mut state = TrajectoryState::new(circuit.qudit_count(), circuit.num_regs);
    let mut leak = vec![0.0f64; compiled.rounds * compiled.n_data];
    let mut observables = Vec::new();
    let mut samples = if record_samples {
        Some(Vec::with_capacity(compiled.ops.len()))
    } else {
        None
    };
    let mut aborted = None;

    'run: for op in &compiled.ops {
        let mut sampled: u32 = 0;
        let result: Result<()> = (|| {
            match &op.kind {
                CKind::Diag(diag) => state.apply_diag(&op.qudits, diag),
                CKind::DiagPairMix { diag, a, b, m } => {
                    state.apply_diag(&op.qudits, diag);
                    state.apply_two_level_mix(&op.qudits, *a, *b, *m);
                }
                CKind::Unitary(mat) => {
                    state.apply_unitary(&op.qudits, mat);
                }
                CKind::Channel { candidates, record } => {
                    let mut rng = factory.op_stream(trajectory, op.stream);
                    let i = sample_candidates(&mut state, &op.qudits, candidates, &mut rng)?;
                    let j = candidates[i].index;
                    sampled = j as u32;
                    if let Some(r) = record {
                        state.set_reg(*r, j as u8);
                    }
                }
                CKind::Rpa { table, record } => {
                    let mut rng = factory.op_stream(trajectory, op.stream);
                    let key: usize = op
                        .qudits
                        .iter()
                        .enumerate()
                        .map(|(i, &q)| label_bit(state.label(q)) << i)
                        .sum();
                    let cands = table.by_source[key].as_ref().ok_or_else(|| {
                        Error::Trajectory(format!("no twirl blocks for source key {key}"))
                    })?;
                    let i = sample_candidates(&mut state, &op.qudits, cands, &mut rng)?;
                    let cand = &cands[i];
                    sampled = cand.index as u32;
                    for (t, &q) in op.qudits.iter().enumerate() {
                        state.set_label(q, cand.labels[t]);
                    }
                    if let Some(r) = record {
                        state.set_reg(*r, cand.index as u8);
                    }
                }
                CKind::Create { state: local, label, front } => {
                    state.create_qudit_at(op.qudits[0], local, *label, *front);
                    if state.len() > compiled.state_len_bound {
                        return Err(Error::Trajectory(format!(
                            "state length {} exceeded bound {}",
                            state.len(),
                            compiled.state_len_bound
                        )));
                    }
                }
                CKind::DestroyMeasure { record, outcome_map, leak_offset } => {
                    let mut rng = factory.op_stream(trajectory, op.stream);
                    let q = op.qudits[0];
                    let label = state.label(q);
                    let (digit, total) = state.destroy_measure(q, &mut rng);
                    if (total - 1.0).abs() > NORM_TOL {
                        return Err(Error::Trajectory(format!(
                            "norm drift {total:.12} at measurement"
                        )));
                    }
                    let outcome = match compiled.mode {
                        RunMode::Exact => outcome_map[digit],
                        RunMode::Rpa => {
                            let offset = match label {
                                SubspaceLabel::Comp => 0,
                                SubspaceLabel::Leak => *leak_offset,
                            };
                            outcome_map[offset + digit]
                        }
                    };
                    sampled = outcome as u32;
                    state.set_reg(*record, outcome);
                }
                CKind::Classical(table) => {
                    let mut rng = factory.op_stream(trajectory, op.stream);
                    sampled = apply_classical_fn(&mut state, table, &mut rng)? as u32;
                }
                CKind::Boundary { round } => {
                    let norm = state.norm_sqr();
                    if (norm - 1.0).abs() > NORM_TOL {
                        return Err(Error::Trajectory(format!(
                            "norm drift {norm:.12} at round boundary"
                        )));
                    }
                    for (di, &q) in circuit.meta.data_qudits.iter().enumerate() {
                        let v = match compiled.mode {
                            RunMode::Exact => state.population(q, 2),
                            RunMode::Rpa => {
                                if state.label(q) == SubspaceLabel::Leak {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        leak[round * compiled.n_data + di] = v;
                    }
                }
                CKind::Snapshot { comp, leak, full } => {
                    let q = op.qudits[0];
                    let v = match compiled.mode {
                        RunMode::Exact => state.local_expectation(q, full),
                        RunMode::Rpa => match state.label(q) {
                            SubspaceLabel::Comp => state.local_expectation(q, comp),
                            SubspaceLabel::Leak => {
                                state.local_expectation(q, leak.as_ref().unwrap())
                            }
                        },
                    };
                    observables.push(v);
                }
            }
            Ok(())
        })();
        if let Some(s) = samples.as_mut() {
            s.push(sampled);
        }
        if let Err(e) = result {
            aborted = Some(e.to_string());
            break 'run;
        }
    }

    TrajectoryRecord {
        registers: state.registers().to_vec(),
        leak,
        observables,
        aborted,
        samples,
        peak_state_len: state.peak_len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders::{build_circuit, BuildOptions};
    use crate::circuit::{CodeKind, StabKind};
    use crate::noise::NoiseParams;
    use crate::scheduler::schedule_circuit;

    fn compile_code(
        code: CodeKind,
        d: usize,
        rounds: usize,
        params: NoiseParams,
        mode: RunMode,
        local_dim: usize,
    ) -> CompiledCircuit {
        let mut opts = BuildOptions::new(code, d, rounds, params);
        opts.local_dim = local_dim;
        let circuit = Arc::new(build_circuit(&opts).unwrap());
        let (_, sched) = schedule_circuit(&circuit).unwrap();
        compile(&circuit, &sched, mode).unwrap()
    }

    #[test]
    fn noiseless_repetition_is_deterministic() {
        let mut params = NoiseParams::thermal();
        params.eta_ghz = 0.0;
        let mut opts = BuildOptions::new(CodeKind::Repetition, 3, 3, params);
        opts.noiseless = true;
        opts.random_prep = false;
        let circuit = Arc::new(build_circuit(&opts).unwrap());
        let (_, sched) = schedule_circuit(&circuit).unwrap();
        for mode in [RunMode::Exact, RunMode::Rpa] {
            let compiled = compile(&circuit, &sched, mode).unwrap();
            let factory = RngFactory::new(7);
            for traj in 0..20 {
                let rec = run_trajectory(&compiled, &factory, traj, false);
                assert!(rec.aborted.is_none());
                for s in &circuit.meta.stabilizers {
                    for &r in &s.dec_regs {
                        assert_eq!(rec.registers[r], 0);
                    }
                }
                for &r in &circuit.meta.final_dec_regs {
                    assert_eq!(rec.registers[r], 1);
                }
                assert!(rec.leak.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn noiseless_surface_code_has_quiet_detectors() {
        let mut params = NoiseParams::thermal();
        params.eta_ghz = 0.0;
        let mut opts = BuildOptions::new(CodeKind::Surface, 3, 3, params);
        opts.noiseless = true;
        let circuit = Arc::new(build_circuit(&opts).unwrap());
        let (_, sched) = schedule_circuit(&circuit).unwrap();
        for mode in [RunMode::Exact, RunMode::Rpa] {
            let compiled = compile(&circuit, &sched, mode).unwrap();
            let factory = RngFactory::new(11);
            for traj in 0..30 {
                let rec = run_trajectory(&compiled, &factory, traj, false);
                assert!(rec.aborted.is_none());
                for s in &circuit.meta.stabilizers {
                    let outcomes: Vec<u8> =
                        s.dec_regs.iter().map(|&r| rec.registers[r]).collect();
                    match s.kind {
                        StabKind::Z => {
                            assert!(outcomes.iter().all(|&o| o == 0), "Z stab {outcomes:?}");
                        }
                        StabKind::X => {
                            assert!(outcomes.windows(2).all(|w| w[0] == w[1]));
                        }
                    }
                }
                let parity: u8 = circuit
                    .meta
                    .logical_reps
                    .iter()
                    .map(|&i| rec.registers[circuit.meta.final_dec_regs[i]])
                    .fold(0, |a, b| a ^ b);
                assert_eq!(parity, 0);
                for s in &circuit.meta.stabilizers {
                    if s.kind == StabKind::Z {
                        let recon: u8 = s
                            .neighbors()
                            .iter()
                            .map(|&d| {
                                let di = circuit
                                    .meta
                                    .data_qudits
                                    .iter()
                                    .position(|&q| q == d)
                                    .unwrap();
                                rec.registers[circuit.meta.final_dec_regs[di]]
                            })
                            .fold(0, |a, b| a ^ b);
                        assert_eq!(recon, rec.registers[*s.dec_regs.last().unwrap()]);
                    }
                }
            }
        }
    }

    #[test]
    fn x_stab_first_round_is_unbiased() {
        let mut params = NoiseParams::thermal();
        params.eta_ghz = 0.0;
        let mut opts = BuildOptions::new(CodeKind::Surface, 3, 1, params);
        opts.noiseless = true;
        let circuit = Arc::new(build_circuit(&opts).unwrap());
        let (_, sched) = schedule_circuit(&circuit).unwrap();
        let compiled = compile(&circuit, &sched, RunMode::Exact).unwrap();
        let factory = RngFactory::new(5);
        let x_reg = circuit
            .meta
            .stabilizers
            .iter()
            .find(|s| s.kind == StabKind::X)
            .unwrap()
            .dec_regs[0];
        let n = 4000u64;
        let mut ones = 0usize;
        for traj in 0..n {
            let rec = run_trajectory(&compiled, &factory, traj, false);
            ones += rec.registers[x_reg] as usize;
        }
        let f = ones as f64 / n as f64;
        assert!((f - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt());
    }

    #[test]
    fn determinism_same_seed_same_record() {
        let compiled = compile_code(
            CodeKind::Repetition,
            3,
            2,
            NoiseParams::physical(),
            RunMode::Exact,
            3,
        );
        let factory = RngFactory::new(99);
        let a = run_trajectory(&compiled, &factory, 1234, true);
        let b = run_trajectory(&compiled, &factory, 1234, true);
        assert_eq!(a, b);
        let c = run_trajectory(&compiled, &factory, 1235, true);
        assert_ne!(a, c);
    }

    #[test]
    fn leak_channel_frequency_matches_born_rule() {
        use crate::circuit::{CircuitMeta, Operation, QuditDecl, QuditRole};
        let q = 0.3f64;
        let mut k0 = ComplexMatrix::identity(3);
        k0[(1, 1)] = C64::new((1.0 - q).sqrt(), 0.0);
        let mut k1 = ComplexMatrix::zeros(3, 3);
        k1[(2, 1)] = C64::new(q.sqrt(), 0.0);
        let leak = Arc::new(KrausChannel::new(vec![k0, k1], 1e-12).unwrap());
        let mut state1 = vec![C64::new(0.0, 0.0); 3];
        state1[1] = C64::new(1.0, 0.0);
        let circuit = Arc::new(Circuit {
            qudits: vec![QuditDecl { id: 0, role: QuditRole::Data, local_dim: 3, coord: (0, 0) }],
            num_regs: 1,
            ops: vec![
                Operation {
                    kind: OpKind::Create(Arc::new(state1)),
                    qudits: vec![0],
                    duration_ns: 0.0,
                },
                Operation {
                    kind: OpKind::Channel { channel: leak, record: None },
                    qudits: vec![0],
                    duration_ns: 0.0,
                },
                Operation {
                    kind: OpKind::RoundBoundary { round: 0 },
                    qudits: vec![0],
                    duration_ns: 0.0,
                },
                Operation {
                    kind: OpKind::DestroyMeasure { record: 0 },
                    qudits: vec![0],
                    duration_ns: 0.0,
                },
            ],
            meta: CircuitMeta {
                code: CodeKind::Repetition,
                distance: 1,
                rounds: 1,
                round_ns: 0.0,
                stabilizers: vec![],
                data_qudits: vec![0],
                prep_regs: None,
                final_raw_regs: vec![0],
                final_dec_regs: vec![0],
                logical_reps: vec![0],
                flips_per_round: false,
            },
        });
        let (_, sched) = schedule_circuit(&circuit).unwrap();
        for mode in [RunMode::Exact, RunMode::Rpa] {
            let compiled = compile(&circuit, &sched, mode).unwrap();
            let factory = RngFactory::new(2024);
            let n = 100_000u64;
            let mut leaked = 0usize;
            for traj in 0..n {
                let rec = run_trajectory(&compiled, &factory, traj, false);
                assert!(rec.aborted.is_none(), "{:?}", rec.aborted);
                if rec.registers[0] == 2 {
                    leaked += 1;
                }
                assert_eq!(rec.leak[0], if rec.registers[0] == 2 { 1.0 } else { 0.0 });
            }
            let f = leaked as f64 / n as f64;
            let sigma = (q * (1.0 - q) / n as f64).sqrt();
            assert!((f - q).abs() < 3.0 * sigma, "mode {mode:?}: {f} vs {q}");
        }
    }

    #[test]
    fn small_instance_matches_density_matrix() {
        use crate::circuit::{CircuitMeta, Operation, QuditDecl, QuditRole};
        use crate::noise::{cz_gate, embed_gate, hadamard2, CzGateParams, LeakingSlot};
        let h = Arc::new(embed_gate(&hadamard2(), 3, 0.0, 25.0));
        let cz = cz_gate(
            &CzGateParams {
                p: 0.2,
                phi_11_02: 0.3,
                phi: std::f64::consts::FRAC_PI_2,
                eta_ghz: 0.1,
                duration_ns: 25.0,
                leaking: LeakingSlot::Second,
            },
            3,
        )
        .unwrap();
        let cz_mat = Arc::new(cz.kraus()[0].clone());
        let mut zero = vec![C64::new(0.0, 0.0); 3];
        zero[0] = C64::new(1.0, 0.0);
        let mut one = vec![C64::new(0.0, 0.0); 3];
        one[1] = C64::new(1.0, 0.0);
        let circuit = Arc::new(Circuit {
            qudits: vec![
                QuditDecl { id: 0, role: QuditRole::Data, local_dim: 3, coord: (0, 0) },
                QuditDecl { id: 1, role: QuditRole::Data, local_dim: 3, coord: (1, 0) },
            ],
            num_regs: 2,
            ops: vec![
                Operation { kind: OpKind::Create(Arc::new(zero)), qudits: vec![0], duration_ns: 0.0 },
                Operation { kind: OpKind::Create(Arc::new(one)), qudits: vec![1], duration_ns: 0.0 },
                Operation { kind: OpKind::Unitary(h.clone()), qudits: vec![0], duration_ns: 25.0 },
                Operation { kind: OpKind::Unitary(cz_mat.clone()), qudits: vec![0, 1], duration_ns: 25.0 },
                Operation { kind: OpKind::Unitary(h), qudits: vec![0], duration_ns: 25.0 },
                Operation { kind: OpKind::DestroyMeasure { record: 0 }, qudits: vec![0], duration_ns: 0.0 },
                Operation { kind: OpKind::DestroyMeasure { record: 1 }, qudits: vec![1], duration_ns: 0.0 },
            ],
            meta: CircuitMeta {
                code: CodeKind::Repetition,
                distance: 1,
                rounds: 1,
                round_ns: 0.0,
                stabilizers: vec![],
                data_qudits: vec![0, 1],
                prep_regs: None,
                final_raw_regs: vec![0, 1],
                final_dec_regs: vec![0, 1],
                logical_reps: vec![0],
                flips_per_round: false,
            },
        });
        let mut psi = vec![C64::new(0.0, 0.0); 9];
        psi[1] = C64::new(1.0, 0.0);
        let rho0 = crate::channel::pure_density(&psi);
        let id3 = ComplexMatrix::identity(3);
        let h_full = embed_gate(&hadamard2(), 3, 0.0, 25.0).kron(&id3);
        let u_total = h_full.matmul(cz_mat.as_ref()).matmul(&h_full);
        let rho = u_total.matmul(&rho0).matmul(&u_total.adjoint());
        let exact: Vec<f64> = (0..9).map(|i| rho[(i, i)].re).collect();

        let (_, sched) = schedule_circuit(&circuit).unwrap();
        let compiled = compile(&circuit, &sched, RunMode::Exact).unwrap();
        let factory = RngFactory::new(31337);
        let n = 1_000_000u64;
        let mut counts = [0usize; 9];
        for traj in 0..n {
            let rec = run_trajectory(&compiled, &factory, traj, false);
            let a = rec.registers[0] as usize;
            let b = rec.registers[1] as usize;
            counts[a * 3 + b] += 1;
        }
        let tv: f64 = (0..9)
            .map(|i| (counts[i] as f64 / n as f64 - exact[i]).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.005, "total variation {tv}");
    }
}
