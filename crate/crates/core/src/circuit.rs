//! Circuit intermediate representation: an ordered operation list over named
//! qudits and classical registers, with enough metadata to detect, decode and
//! analyze memory experiments.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::channel::KrausChannel;
use crate::error::{Error, Result};
use crate::matrix::{ComplexMatrix, C64};
use crate::state::{QuditId, RegisterId};

pub type RegId = RegisterId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuditRole {
    Data,
    Measure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuditDecl {
    pub id: QuditId,
    pub role: QuditRole,
    pub local_dim: usize,
    pub coord: (i32, i32),
}

/// Probabilistic function on classical registers: with probability `p_j`
/// apply the j-th value map. Trace preservation corresponds to the branch
/// probabilities summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalFnTable {
    pub inputs: Vec<RegId>,
    pub outputs: Vec<RegId>,
    pub branches: Vec<(f64, BTreeMap<Vec<u8>, Vec<u8>>)>,
}

impl ClassicalFnTable {
    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.branches.iter().map(|(p, _)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Circuit(format!(
                "classical function branch probabilities sum to {total}"
            )));
        }
        if self.branches.iter().any(|(p, _)| *p < 0.0) {
            return Err(Error::Circuit("negative branch probability".into()));
        }
        Ok(())
    }

    /// Deterministic copy of one register to another.
    pub fn copy(src: RegId, dst: RegId, domain: u8) -> Self {
        let map: BTreeMap<Vec<u8>, Vec<u8>> =
            (0..domain).map(|v| (vec![v], vec![v])).collect();
        Self { inputs: vec![src], outputs: vec![dst], branches: vec![(1.0, map)] }
    }

    /// Fair coin into a register (no inputs).
    pub fn coin(dst: RegId) -> Self {
        Self {
            inputs: vec![],
            outputs: vec![dst],
            branches: vec![
                (0.5, [(vec![], vec![0])].into_iter().collect()),
                (0.5, [(vec![], vec![1])].into_iter().collect()),
            ],
        }
    }

    /// Decoding map for leaked readout: 0 and 1 pass through, a recorded 2 is
    /// replaced by a fair coin flip.
    pub fn randomize_leaked(src: RegId, dst: RegId) -> Self {
        let b = |two_goes_to: u8| -> BTreeMap<Vec<u8>, Vec<u8>> {
            [
                (vec![0u8], vec![0u8]),
                (vec![1], vec![1]),
                (vec![2], vec![two_goes_to]),
            ]
            .into_iter()
            .collect()
        };
        Self {
            inputs: vec![src],
            outputs: vec![dst],
            branches: vec![(0.5, b(0)), (0.5, b(1))],
        }
    }
}

#[derive(Clone, Debug)]
pub enum OpKind {
    /// Unitary gate (single-Kraus channel).
    Unitary(Arc<ComplexMatrix>),
    /// Channel sampled by the Born rule; the sampled index may be recorded.
    Channel { channel: Arc<KrausChannel>, record: Option<RegId> },
    /// Create a qudit in a pure local state.
    Create(Arc<Vec<C64>>),
    /// Destructive measurement in the local basis; outcome recorded.
    DestroyMeasure { record: RegId },
    /// Probabilistic classical register update.
    ClassicalFn(Arc<ClassicalFnTable>),
    /// Round boundary: the engine snapshots per-data-qudit leakage here.
    RoundBoundary { round: usize },
    /// Record ⟨ψ|O|ψ⟩ of a local operator on the target qudit.
    SnapshotObservable(Arc<ComplexMatrix>),
}

#[derive(Clone, Debug)]
pub struct Operation {
    pub kind: OpKind,
    pub qudits: Vec<QuditId>,
    pub duration_ns: f64,
}

impl Operation {
    /// Registers this operation reads or writes (classical dataflow).
    pub fn registers(&self) -> Vec<RegId> {
        match &self.kind {
            OpKind::Channel { record: Some(r), .. } => vec![*r],
            OpKind::DestroyMeasure { record } => vec![*record],
            OpKind::ClassicalFn(t) => {
                let mut v = t.inputs.clone();
                v.extend(&t.outputs);
                v
            }
            _ => vec![],
        }
    }

    pub fn is_create(&self) -> bool {
        matches!(self.kind, OpKind::Create(_))
    }

    pub fn is_destroy(&self) -> bool {
        matches!(self.kind, OpKind::DestroyMeasure { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabKind {
    Z,
    X,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabInfo {
    pub qudit: QuditId,
    pub kind: StabKind,
    pub coord: (i32, i32),
    /// Data neighbor per CZ slot (None = idle slot).
    pub neighbors_by_slot: Vec<Option<QuditId>>,
    /// Raw outcome register per round.
    pub raw_regs: Vec<RegId>,
    /// Randomized (decode) outcome register per round.
    pub dec_regs: Vec<RegId>,
}

impl StabInfo {
    pub fn neighbors(&self) -> Vec<QuditId> {
        self.neighbors_by_slot.iter().flatten().copied().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodeKind {
    Repetition,
    Surface,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CircuitMeta {
    pub code: CodeKind,
    pub distance: usize,
    pub rounds: usize,
    pub round_ns: f64,
    pub stabilizers: Vec<StabInfo>,
    pub data_qudits: Vec<QuditId>,
    /// Random-prep bit registers per data qudit (repetition code).
    pub prep_regs: Option<Vec<RegId>>,
    pub final_raw_regs: Vec<RegId>,
    pub final_dec_regs: Vec<RegId>,
    /// Indices into `data_qudits` whose final-readout parity is the logical
    /// observable.
    pub logical_reps: Vec<usize>,
    /// Whether data qubits are X-flipped at the end of every round.
    pub flips_per_round: bool,
}

#[derive(Clone, Debug)]
pub struct Circuit {
    pub qudits: Vec<QuditDecl>,
    pub num_regs: usize,
    pub ops: Vec<Operation>,
    pub meta: CircuitMeta,
}

impl Circuit {
    pub fn qudit_count(&self) -> usize {
        self.qudits.len()
    }

    pub fn local_dim(&self, q: QuditId) -> usize {
        self.qudits[q].local_dim
    }

    /// Structural checks: declared targets, one destroy per create interval,
    /// classical tables valid.
    pub fn validate(&self) -> Result<()> {
        let n = self.qudits.len();
        let mut alive = vec![false; n];
        for (i, op) in self.ops.iter().enumerate() {
            for &q in &op.qudits {
                if q >= n {
                    return Err(Error::Circuit(format!("op {i} targets undeclared qudit {q}")));
                }
            }
            match &op.kind {
                OpKind::Create(state) => {
                    let q = op.qudits[0];
                    if alive[q] {
                        return Err(Error::Circuit(format!("op {i} recreates live qudit {q}")));
                    }
                    if state.len() != self.qudits[q].local_dim {
                        return Err(Error::Circuit(format!(
                            "op {i} creates qudit {q} with wrong local dimension"
                        )));
                    }
                    alive[q] = true;
                }
                OpKind::DestroyMeasure { .. } => {
                    let q = op.qudits[0];
                    if !alive[q] {
                        return Err(Error::Circuit(format!("op {i} destroys dead qudit {q}")));
                    }
                    alive[q] = false;
                }
                OpKind::ClassicalFn(t) => t.validate()?,
                _ => {
                    for &q in &op.qudits {
                        if !alive[q] {
                            return Err(Error::Circuit(format!(
                                "op {i} acts on dead qudit {q}"
                            )));
                        }
                    }
                }
            }
            for r in op.registers() {
                if r >= self.num_regs {
                    return Err(Error::Circuit(format!("op {i} touches undeclared register {r}")));
                }
            }
        }
        Ok(())
    }

    // -- line-based text format -------------------------------------------

    pub fn export_text(&self) -> String {
        let mut out = String::new();
        out.push_str("circuit v1\n");
        for q in &self.qudits {
            out.push_str(&format!(
                "qudit {} {} dim={} coord={},{}\n",
                q.id,
                match q.role {
                    QuditRole::Data => "data",
                    QuditRole::Measure => "measure",
                },
                q.local_dim,
                q.coord.0,
                q.coord.1
            ));
        }
        out.push_str(&format!("regs {}\n", self.num_regs));
        out.push_str(&format!(
            "meta {}\n",
            serde_json::to_string(&self.meta).expect("meta serializes")
        ));
        for op in &self.ops {
            let targets = op
                .qudits
                .iter()
                .map(|q| q.to_string())
                .collect::<Vec<_>>()
                .join(",");
            match &op.kind {
                OpKind::Unitary(m) => out.push_str(&format!(
                    "op unitary q={} dur={:e} mat={}\n",
                    targets,
                    op.duration_ns,
                    fmt_cvec(m.data())
                )),
                OpKind::Channel { channel, record } => out.push_str(&format!(
                    "op channel q={} dur={:e} record={} dims={}x{} kraus={}\n",
                    targets,
                    op.duration_ns,
                    record.map_or("-".into(), |r| r.to_string()),
                    channel.output_dim(),
                    channel.input_dim(),
                    channel
                        .kraus()
                        .iter()
                        .map(|k| fmt_cvec(k.data()))
                        .collect::<Vec<_>>()
                        .join("|")
                )),
                OpKind::Create(state) => out.push_str(&format!(
                    "op create q={} state={}\n",
                    targets,
                    fmt_cvec(state)
                )),
                OpKind::DestroyMeasure { record } => {
                    out.push_str(&format!("op measure q={} reg={}\n", targets, record))
                }
                OpKind::ClassicalFn(t) => {
                    let branches = t
                        .branches
                        .iter()
                        .map(|(p, map)| {
                            let entries = map
                                .iter()
                                .map(|(k, v)| format!("{}>{}", fmt_u8s(k), fmt_u8s(v)))
                                .collect::<Vec<_>>()
                                .join(",");
                            format!("{p:e}:{entries}")
                        })
                        .collect::<Vec<_>>()
                        .join("|");
                    out.push_str(&format!(
                        "op classical in={} out={} branches={}\n",
                        fmt_regs(&t.inputs),
                        fmt_regs(&t.outputs),
                        branches
                    ))
                }
                OpKind::RoundBoundary { round } => {
                    out.push_str(&format!("op boundary q={} round={}\n", targets, round))
                }
                OpKind::SnapshotObservable(m) => out.push_str(&format!(
                    "op snapshot q={} mat={}\n",
                    targets,
                    fmt_cvec(m.data())
                )),
            }
        }
        out
    }

    pub fn import_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Circuit("empty circuit text".into()))?;
        if header.trim() != "circuit v1" {
            return Err(Error::Circuit(format!("unknown circuit header '{header}'")));
        }
        let mut qudits = Vec::new();
        let mut num_regs = 0usize;
        let mut meta: Option<CircuitMeta> = None;
        let mut ops = Vec::new();
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("qudit ") {
                let mut it = rest.split_whitespace();
                let id: QuditId = parse(it.next())?;
                let role = match it.next() {
                    Some("data") => QuditRole::Data,
                    Some("measure") => QuditRole::Measure,
                    other => return Err(Error::Circuit(format!("bad role {other:?}"))),
                };
                let dim: usize = parse(Some(field(it.next(), "dim=")?))?;
                let coord_s = field(it.next(), "coord=")?;
                let (x, y) = coord_s
                    .split_once(',')
                    .ok_or_else(|| Error::Circuit("bad coord".into()))?;
                qudits.push(QuditDecl {
                    id,
                    role,
                    local_dim: dim,
                    coord: (parse(Some(x))?, parse(Some(y))?),
                });
            } else if let Some(rest) = line.strip_prefix("regs ") {
                num_regs = parse(Some(rest))?;
            } else if let Some(rest) = line.strip_prefix("meta ") {
                meta = Some(serde_json::from_str(rest)?);
            } else if let Some(rest) = line.strip_prefix("op ") {
                ops.push(parse_op(rest)?);
            } else {
                return Err(Error::Circuit(format!("unrecognized line '{line}'")));
            }
        }
        let meta = meta.ok_or_else(|| Error::Circuit("missing meta line".into()))?;
        let circuit = Circuit { qudits, num_regs, ops, meta };
        circuit.validate()?;
        Ok(circuit)
    }
}

fn fmt_cvec(v: &[C64]) -> String {
    v.iter()
        .map(|z| format!("{:e},{:e}", z.re, z.im))
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_cvec(s: &str) -> Result<Vec<C64>> {
    if s.is_empty() {
        return Ok(vec![]);
    }
    s.split(';')
        .map(|pair| {
            let (re, im) = pair
                .split_once(',')
                .ok_or_else(|| Error::Circuit("bad complex entry".into()))?;
            Ok(C64::new(
                re.parse().map_err(|_| Error::Circuit("bad float".into()))?,
                im.parse().map_err(|_| Error::Circuit("bad float".into()))?,
            ))
        })
        .collect()
}

fn fmt_u8s(v: &[u8]) -> String {
    if v.is_empty() {
        "~".into()
    } else {
        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(".")
    }
}

fn parse_u8s(s: &str) -> Result<Vec<u8>> {
    if s == "~" {
        return Ok(vec![]);
    }
    s.split('.')
        .map(|x| x.parse().map_err(|_| Error::Circuit("bad u8".into())))
        .collect()
}

fn fmt_regs(v: &[RegId]) -> String {
    if v.is_empty() {
        "-".into()
    } else {
        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    }
}

fn parse_regs(s: &str) -> Result<Vec<RegId>> {
    if s == "-" {
        return Ok(vec![]);
    }
    s.split(',')
        .map(|x| x.parse().map_err(|_| Error::Circuit("bad register".into())))
        .collect()
}

fn field<'a>(tok: Option<&'a str>, prefix: &str) -> Result<&'a str> {
    tok.and_then(|t| t.strip_prefix(prefix))
        .ok_or_else(|| Error::Circuit(format!("expected field {prefix}")))
}

fn parse<T: std::str::FromStr>(tok: Option<&str>) -> Result<T> {
    tok.ok_or_else(|| Error::Circuit("missing token".into()))?
        .parse()
        .map_err(|_| Error::Circuit("bad token".into()))
}

fn parse_op(rest: &str) -> Result<Operation> {
    let mut it = rest.split_whitespace();
    let kind = it.next().ok_or_else(|| Error::Circuit("missing op kind".into()))?;
    match kind {
        "unitary" => {
            let q = parse_regs(field(it.next(), "q=")?)?;
            let dur: f64 = parse(Some(field(it.next(), "dur=")?))?;
            let data = parse_cvec(field(it.next(), "mat=")?)?;
            let n = (data.len() as f64).sqrt().round() as usize;
            let m = ComplexMatrix::from_vec(n, n, data)?;
            Ok(Operation { kind: OpKind::Unitary(Arc::new(m)), qudits: q, duration_ns: dur })
        }
        "channel" => {
            let q = parse_regs(field(it.next(), "q=")?)?;
            let dur: f64 = parse(Some(field(it.next(), "dur=")?))?;
            let rec_s = field(it.next(), "record=")?;
            let record = if rec_s == "-" { None } else { Some(parse::<usize>(Some(rec_s))?) };
            let dims = field(it.next(), "dims=")?;
            let (rows, cols) = dims
                .split_once('x')
                .ok_or_else(|| Error::Circuit("bad dims".into()))?;
            let rows: usize = parse(Some(rows))?;
            let cols: usize = parse(Some(cols))?;
            let kraus_s = field(it.next(), "kraus=")?;
            let kraus = kraus_s
                .split('|')
                .map(|ks| ComplexMatrix::from_vec(rows, cols, parse_cvec(ks)?))
                .collect::<Result<Vec<_>>>()?;
            let channel = KrausChannel::new(kraus, 1e-8)?;
            Ok(Operation {
                kind: OpKind::Channel { channel: Arc::new(channel), record },
                qudits: q,
                duration_ns: dur,
            })
        }
        "create" => {
            let q = parse_regs(field(it.next(), "q=")?)?;
            let state = parse_cvec(field(it.next(), "state=")?)?;
            Ok(Operation { kind: OpKind::Create(Arc::new(state)), qudits: q, duration_ns: 0.0 })
        }
        "measure" => {
            let q = parse_regs(field(it.next(), "q=")?)?;
            let reg: RegId = parse(Some(field(it.next(), "reg=")?))?;
            Ok(Operation {
                kind: OpKind::DestroyMeasure { record: reg },
                qudits: q,
                duration_ns: 0.0,
            })
        }
        "classical" => {
            let inputs = parse_regs(field(it.next(), "in=")?)?;
            let outputs = parse_regs(field(it.next(), "out=")?)?;
            let branches_s = field(it.next(), "branches=")?;
            let mut branches = Vec::new();
            for b in branches_s.split('|') {
                let (p, entries) = b
                    .split_once(':')
                    .ok_or_else(|| Error::Circuit("bad branch".into()))?;
                let p: f64 = p.parse().map_err(|_| Error::Circuit("bad prob".into()))?;
                let mut map = BTreeMap::new();
                for e in entries.split(',') {
                    let (k, v) = e
                        .split_once('>')
                        .ok_or_else(|| Error::Circuit("bad branch entry".into()))?;
                    map.insert(parse_u8s(k)?, parse_u8s(v)?);
                }
                branches.push((p, map));
            }
            Ok(Operation {
                kind: OpKind::ClassicalFn(Arc::new(ClassicalFnTable { inputs, outputs, branches })),
                qudits: vec![],
                duration_ns: 0.0,
            })
        }
        "boundary" => {
            let q = parse_regs(field(it.next(), "q=")?)?;
            let round: usize = parse(Some(field(it.next(), "round=")?))?;
            Ok(Operation { kind: OpKind::RoundBoundary { round }, qudits: q, duration_ns: 0.0 })
        }
        "snapshot" => {
            let q = parse_regs(field(it.next(), "q=")?)?;
            let data = parse_cvec(field(it.next(), "mat=")?)?;
            let n = (data.len() as f64).sqrt().round() as usize;
            let m = ComplexMatrix::from_vec(n, n, data)?;
            Ok(Operation {
                kind: OpKind::SnapshotObservable(Arc::new(m)),
                qudits: q,
                duration_ns: 0.0,
            })
        }
        other => Err(Error::Circuit(format!("unknown op kind '{other}'"))),
    }
}
