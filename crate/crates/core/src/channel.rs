//! Quantum channels as ordered Kraus operator lists, plus the channel
//! algebra used throughout: dephasing onto subspace blocks, incoherence
//! classification, process fidelity, and Choi-matrix conversions.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{ComplexMatrix, C64, ONE, ZERO};
use crate::subspace::{BlockStructure, LabelVec, SubspaceLabel};

/// Default numerical tolerance for trace preservation, block support and
/// Choi eigenvalue truncation.
pub const DEFAULT_TOL: f64 = 1e-10;

/// A completely positive trace-preserving map, stored as an ordered list of
/// Kraus operators. Operators may be non-square when the channel changes the
/// Hilbert-space dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct KrausChannel {
    input_dim: usize,
    output_dim: usize,
    kraus: Vec<ComplexMatrix>,
}

impl KrausChannel {
    /// Build a channel, checking trace preservation `Σ K†K = I` to `tol`.
    pub fn new(kraus: Vec<ComplexMatrix>, tol: f64) -> Result<Self> {
        if kraus.is_empty() {
            return Err(Error::Shape("channel needs at least one Kraus operator".into()));
        }
        let output_dim = kraus[0].rows();
        let input_dim = kraus[0].cols();
        for k in &kraus {
            if k.rows() != output_dim || k.cols() != input_dim {
                return Err(Error::Shape("inconsistent Kraus operator shapes".into()));
            }
        }
        let ch = Self { input_dim, output_dim, kraus };
        let dev = ch.trace_preservation_deviation();
        if dev > tol {
            return Err(Error::NotTracePreserving { deviation: dev, tol });
        }
        Ok(ch)
    }

    pub fn unitary(u: ComplexMatrix) -> Result<Self> {
        if !u.is_unitary(1e-10) {
            return Err(Error::Shape("matrix is not unitary".into()));
        }
        Self::new(vec![u], DEFAULT_TOL)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            input_dim: dim,
            output_dim: dim,
            kraus: vec![ComplexMatrix::identity(dim)],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn kraus(&self) -> &[ComplexMatrix] {
        &self.kraus
    }

    pub fn len(&self) -> usize {
        self.kraus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kraus.is_empty()
    }

    /// Max-abs deviation of `Σ K†K` from the identity.
    pub fn trace_preservation_deviation(&self) -> f64 {
        let mut acc = ComplexMatrix::zeros(self.input_dim, self.input_dim);
        for k in &self.kraus {
            acc = acc.add(&k.adjoint().matmul(k));
        }
        acc.max_abs_diff(&ComplexMatrix::identity(self.input_dim))
    }

    /// Apply the channel to a density matrix.
    pub fn apply_density(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(rho.rows(), self.input_dim);
        let mut out = ComplexMatrix::zeros(self.output_dim, self.output_dim);
        for k in &self.kraus {
            out = out.add(&k.matmul(rho).matmul(&k.adjoint()));
        }
        out
    }

    /// Composition `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if other.output_dim != self.input_dim {
            return Err(Error::Shape("composition dimension mismatch".into()));
        }
        let mut kraus = Vec::with_capacity(self.kraus.len() * other.kraus.len());
        for a in &self.kraus {
            for b in &other.kraus {
                kraus.push(a.matmul(b));
            }
        }
        Self::new(kraus, 1e-8)
    }

    /// Choi matrix with convention `C[(i,j),(k,l)] = Σ_a K_a[i,j] conj(K_a[k,l])`,
    /// i.e. the Gram form of row-major flattened Kraus operators. Channel
    /// equality is equivalent to Choi equality under a fixed convention.
    pub fn to_choi(&self) -> ComplexMatrix {
        let n = self.output_dim * self.input_dim;
        let mut c = ComplexMatrix::zeros(n, n);
        for k in &self.kraus {
            let v = k.data();
            for a in 0..n {
                if v[a] == ZERO {
                    continue;
                }
                for b in 0..n {
                    c[(a, b)] += v[a] * v[b].conj();
                }
            }
        }
        c
    }

    /// Extract Kraus operators from a Choi matrix (same convention as
    /// [`Self::to_choi`]). Eigenvalues below `tol` are truncated; operators
    /// come out sorted by descending eigenvalue.
    pub fn from_choi(choi: &ComplexMatrix, out_dim: usize, in_dim: usize, tol: f64) -> Result<Self> {
        let n = out_dim * in_dim;
        if choi.rows() != n || choi.cols() != n {
            return Err(Error::Shape("Choi matrix has wrong dimension".into()));
        }
        if !choi.is_hermitian(1e-8) {
            return Err(Error::Shape("Choi matrix is not Hermitian".into()));
        }
        let (vals, vecs) = choi.eigh_hermitian()?;
        if let Some(&min) = vals.iter().min_by(|a, b| a.partial_cmp(b).unwrap()) {
            if min < -1e-8 {
                return Err(Error::NotPositive { eigenvalue: min, tol: 1e-8 });
            }
        }
        let mut kraus = Vec::new();
        for (idx, &lambda) in vals.iter().enumerate() {
            if lambda <= tol {
                continue;
            }
            let s = lambda.sqrt();
            let mut k = ComplexMatrix::zeros(out_dim, in_dim);
            for i in 0..out_dim {
                for j in 0..in_dim {
                    k[(i, j)] = vecs[(i * in_dim + j, idx)] * C64::new(s, 0.0);
                }
            }
            kraus.push(k);
        }
        Self::new(kraus, 1e-8)
    }

    /// Superoperator acting on row-major flattened density matrices.
    pub fn to_superop(&self) -> ComplexMatrix {
        let choi = self.to_choi();
        superop_from_choi(&choi, self.output_dim, self.input_dim)
    }

    /// Max-abs Choi distance to another channel.
    pub fn choi_distance(&self, other: &Self) -> f64 {
        self.to_choi().max_abs_diff(&other.to_choi())
    }
}

/// Reshuffle a superoperator (row-major vec convention) into the Choi matrix.
pub fn choi_from_superop(s: &ComplexMatrix, out_dim: usize, in_dim: usize) -> ComplexMatrix {
    assert_eq!(s.rows(), out_dim * out_dim);
    assert_eq!(s.cols(), in_dim * in_dim);
    let n = out_dim * in_dim;
    let mut c = ComplexMatrix::zeros(n, n);
    for i in 0..out_dim {
        for k in 0..out_dim {
            for j in 0..in_dim {
                for l in 0..in_dim {
                    c[(i * in_dim + j, k * in_dim + l)] = s[(i * out_dim + k, j * in_dim + l)];
                }
            }
        }
    }
    c
}

/// Inverse of [`choi_from_superop`].
pub fn superop_from_choi(c: &ComplexMatrix, out_dim: usize, in_dim: usize) -> ComplexMatrix {
    let mut s = ComplexMatrix::zeros(out_dim * out_dim, in_dim * in_dim);
    for i in 0..out_dim {
        for k in 0..out_dim {
            for j in 0..in_dim {
                for l in 0..in_dim {
                    s[(i * out_dim + k, j * in_dim + l)] = c[(i * in_dim + j, k * in_dim + l)];
                }
            }
        }
    }
    s
}

/// Dephase an operator onto the block structure: `Σ_n P_n A P_n`.
pub fn dephase(a: &ComplexMatrix, blocks: &BlockStructure) -> Result<ComplexMatrix> {
    let dim = blocks.total_dim();
    if a.rows() != dim || a.cols() != dim {
        return Err(Error::Shape(format!(
            "operator is {}x{}, block structure spans dimension {}",
            a.rows(),
            a.cols(),
            dim
        )));
    }
    let mut out = ComplexMatrix::zeros(dim, dim);
    for labels in blocks.label_vectors() {
        let p = blocks.projector(&labels);
        out = out.add(&p.matmul(a).matmul(&p));
    }
    Ok(out)
}

/// Map from (Kraus index, source labels) to the unique target labels, where
/// defined; produced by [`is_incoherent_kraus_set`].
pub type TransitionMap = std::collections::BTreeMap<(usize, LabelVec), LabelVec>;

/// Check whether a Kraus set is incoherent for the block structure: every
/// `K_j P_n` must be supported on at most one target block `P_m`. Returns the
/// classification along with the transition map `m(j, n)` where defined.
pub fn is_incoherent_kraus_set(
    channel: &KrausChannel,
    blocks: &BlockStructure,
    tol: f64,
) -> (bool, TransitionMap) {
    let mut map = TransitionMap::new();
    let mut incoherent = true;
    let labels = blocks.label_vectors();
    for (j, k) in channel.kraus().iter().enumerate() {
        for src in &labels {
            let x_src = blocks.embedding(src);
            let kx = k.matmul(&x_src);
            let mut found: Option<LabelVec> = None;
            for dst in &labels {
                let x_dst = blocks.embedding(dst);
                let block = x_dst.adjoint().matmul(&kx);
                if block.max_abs() > tol {
                    if found.is_some() {
                        incoherent = false;
                    } else {
                        found = Some(dst.clone());
                    }
                }
            }
            if let Some(dst) = found {
                map.insert((j, src.clone()), dst);
            }
        }
    }
    (incoherent, map)
}

/// Generalized process fidelity against the identity on the computational
/// subspace: `(1/D²) Σ_j |Tr(P_C K_j)|²` with `D = 2^arity`.
pub fn process_fidelity(channel: &KrausChannel, blocks: &BlockStructure) -> Result<f64> {
    let dim = blocks.total_dim();
    if channel.input_dim() != dim || channel.output_dim() != dim {
        return Err(Error::Shape("channel does not match block structure".into()));
    }
    let p_c = blocks.computational_projector();
    let d = blocks.computational_dim() as f64;
    let mut acc = 0.0;
    for k in channel.kraus() {
        let t = p_c.matmul(k).trace();
        acc += t.norm_sqr();
    }
    Ok(acc / (d * d))
}

// ---------------------------------------------------------------------------
// JSON wire format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ChannelJson {
    input_dim: usize,
    output_dim: usize,
    /// One entry per Kraus operator: row-major [re, im] pairs.
    kraus: Vec<Vec<[f64; 2]>>,
}

impl KrausChannel {
    pub fn to_json(&self) -> String {
        let dto = ChannelJson {
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            kraus: self
                .kraus
                .iter()
                .map(|k| k.data().iter().map(|z| [z.re, z.im]).collect())
                .collect(),
        };
        serde_json::to_string(&dto).expect("channel serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let dto: ChannelJson = serde_json::from_str(s)?;
        let mut kraus = Vec::with_capacity(dto.kraus.len());
        for flat in dto.kraus {
            let data: Vec<C64> = flat.iter().map(|&[re, im]| C64::new(re, im)).collect();
            kraus.push(ComplexMatrix::from_vec(dto.output_dim, dto.input_dim, data)?);
        }
        Self::new(kraus, DEFAULT_TOL)
    }
}

// ---------------------------------------------------------------------------
// Random channels and unitaries (validation workloads)
// ---------------------------------------------------------------------------

/// Haar-like random unitary: eigenvector matrix of a random Hermitian.
pub fn random_unitary(rng: &mut impl Rng, dim: usize) -> ComplexMatrix {
    let g = ComplexMatrix::from_fn(dim, dim, |_, _| {
        C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    });
    let h = g.add(&g.adjoint()).scale(C64::new(0.5, 0.0));
    let (_, vecs) = h.eigh_hermitian().expect("random Hermitian eigh");
    vecs
}

/// Random trace-preserving channel: Ginibre Kraus operators whitened by
/// `S^{-1/2}` with `S = Σ G†G`.
pub fn random_channel(rng: &mut impl Rng, dim: usize, kraus_count: usize) -> KrausChannel {
    let gs: Vec<ComplexMatrix> = (0..kraus_count)
        .map(|_| {
            ComplexMatrix::from_fn(dim, dim, |_, _| {
                C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            })
        })
        .collect();
    let mut s = ComplexMatrix::zeros(dim, dim);
    for g in &gs {
        s = s.add(&g.adjoint().matmul(g));
    }
    let (vals, vecs) = s.eigh_hermitian().expect("Gram matrix eigh");
    let inv_sqrt = {
        let d: Vec<C64> = vals
            .iter()
            .map(|&v| C64::new(1.0 / v.max(1e-300).sqrt(), 0.0))
            .collect();
        vecs.matmul(&ComplexMatrix::diag(&d)).matmul(&vecs.adjoint())
    };
    let kraus = gs.into_iter().map(|g| g.matmul(&inv_sqrt)).collect();
    KrausChannel::new(kraus, 1e-9).expect("whitened Kraus set is trace preserving")
}

/// Remix the Kraus operators by a unitary `V`: `K'_i = Σ_j V[i,j] K_j`.
/// The result represents the same channel.
pub fn remix_kraus(channel: &KrausChannel, v: &ComplexMatrix) -> Result<KrausChannel> {
    let n = channel.len();
    if v.rows() != n || v.cols() != n {
        return Err(Error::Shape("remix unitary must match Kraus count".into()));
    }
    if !v.is_unitary(1e-9) {
        return Err(Error::Shape("remix matrix is not unitary".into()));
    }
    let mut kraus = Vec::with_capacity(n);
    for i in 0..n {
        let mut k = ComplexMatrix::zeros(channel.output_dim(), channel.input_dim());
        for j in 0..n {
            k = k.add(&channel.kraus()[j].scale(v[(i, j)]));
        }
        kraus.push(k);
    }
    KrausChannel::new(kraus, 1e-8)
}

/// Density matrix of a pure state.
pub fn pure_density(psi: &[C64]) -> ComplexMatrix {
    let n = psi.len();
    ComplexMatrix::from_fn(n, n, |r, c| psi[r] * psi[c].conj())
}

#[allow(dead_code)]
fn _unused(_: Complex64, _: SubspaceLabel) {
    let _ = ONE;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::SubspaceDecomposition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qutrit_blocks(arity: usize) -> BlockStructure {
        BlockStructure::uniform(&SubspaceDecomposition::qutrit(), arity)
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn dephase_leaves_block_diagonal_invariant() {
        let blocks = qutrit_blocks(1);
        let mut rho = ComplexMatrix::zeros(3, 3);
        rho[(0, 0)] = c(0.25, 0.0);
        rho[(1, 1)] = c(0.25, 0.0);
        rho[(0, 1)] = c(0.1, 0.05);
        rho[(1, 0)] = c(0.1, -0.05);
        rho[(2, 2)] = c(0.5, 0.0);
        let out = dephase(&rho, &blocks).unwrap();
        assert!(out.max_abs_diff(&rho) < 1e-15);
    }

    #[test]
    fn dephase_mixes_cross_block_superposition() {
        // |psi> = a|0> + b|2> across blocks -> |a|^2 |0><0| + |b|^2 |2><2|.
        let blocks = qutrit_blocks(1);
        let a = c(0.6, 0.0);
        let b = c(0.0, 0.8);
        let rho = pure_density(&[a, ZERO, b]);
        let out = dephase(&rho, &blocks).unwrap();
        let mut expect = ComplexMatrix::zeros(3, 3);
        expect[(0, 0)] = c(0.36, 0.0);
        expect[(2, 2)] = c(0.64, 0.0);
        assert!(out.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn dephase_zeroes_off_block_entries_of_random_hermitian() {
        let blocks = qutrit_blocks(1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = ComplexMatrix::from_fn(3, 3, |_, _| {
            c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let h = g.add(&g.adjoint());
        let out = dephase(&h, &blocks).unwrap();
        // Direct projector arithmetic oracle.
        let p_c = blocks.projector(&[SubspaceLabel::Comp]);
        let p_l = blocks.projector(&[SubspaceLabel::Leak]);
        let oracle = p_c.matmul(&h).matmul(&p_c).add(&p_l.matmul(&h).matmul(&p_l));
        assert!(out.max_abs_diff(&oracle) < 1e-14);
        for &(r, cc) in &[(0usize, 2usize), (1, 2), (2, 0), (2, 1)] {
            assert!(out[(r, cc)].norm() < 1e-15);
        }
        // Idempotence.
        let twice = dephase(&out, &blocks).unwrap();
        assert!(twice.max_abs_diff(&out) < 1e-14);
    }

    #[test]
    fn dephase_rejects_dimension_mismatch() {
        let blocks = qutrit_blocks(2);
        let a = ComplexMatrix::identity(3);
        assert!(dephase(&a, &blocks).is_err());
    }

    #[test]
    fn projector_kraus_set_is_incoherent() {
        let blocks = qutrit_blocks(1);
        let p_c = blocks.projector(&[SubspaceLabel::Comp]);
        let p_l = blocks.projector(&[SubspaceLabel::Leak]);
        let ch = KrausChannel::new(vec![p_c, p_l], DEFAULT_TOL).unwrap();
        let (ok, map) = is_incoherent_kraus_set(&ch, &blocks, DEFAULT_TOL);
        assert!(ok);
        // Projectors act as the identity transition on their own block.
        assert_eq!(
            map.get(&(0, vec![SubspaceLabel::Comp])),
            Some(&vec![SubspaceLabel::Comp])
        );
        assert_eq!(
            map.get(&(1, vec![SubspaceLabel::Leak])),
            Some(&vec![SubspaceLabel::Leak])
        );
    }

    #[test]
    fn cross_block_hadamard_is_not_incoherent() {
        // Hadamard on {|0>,|2>}, identity on |1>: P_c U P_2 and P_2 U P_2 both nonzero.
        let s = 1.0 / 2.0f64.sqrt();
        let mut u = ComplexMatrix::zeros(3, 3);
        u[(0, 0)] = c(s, 0.0);
        u[(0, 2)] = c(s, 0.0);
        u[(2, 0)] = c(s, 0.0);
        u[(2, 2)] = c(-s, 0.0);
        u[(1, 1)] = ONE;
        let ch = KrausChannel::unitary(u).unwrap();
        let (ok, _) = is_incoherent_kraus_set(&ch, &qutrit_blocks(1), DEFAULT_TOL);
        assert!(!ok);
    }

    #[test]
    fn process_fidelity_identity_and_projectors() {
        let blocks = qutrit_blocks(1);
        let id = KrausChannel::identity(3);
        assert!((process_fidelity(&id, &blocks).unwrap() - 1.0).abs() < 1e-15);
        let p_c = blocks.projector(&[SubspaceLabel::Comp]);
        let p_l = blocks.projector(&[SubspaceLabel::Leak]);
        let ch = KrausChannel::new(vec![p_c, p_l], DEFAULT_TOL).unwrap();
        // (1/4)(|Tr P_c|^2 + |Tr(P_c P_2)|^2) = (1/4)(4 + 0) = 1.
        assert!((process_fidelity(&ch, &blocks).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn choi_of_identity_qubit_channel() {
        let id = KrausChannel::identity(2);
        let choi = id.to_choi();
        // Rank one, trace 2: 2 * |Phi+><Phi+| in the flattened basis.
        let ch2 = KrausChannel::from_choi(&choi, 2, 2, DEFAULT_TOL).unwrap();
        assert_eq!(ch2.len(), 1);
        assert!(ch2.choi_distance(&id) < 1e-12);
    }

    #[test]
    fn choi_roundtrip_depolarizing_mixture() {
        let paulis = [
            ComplexMatrix::identity(2),
            ComplexMatrix::from_vec(2, 2, vec![ZERO, ONE, ONE, ZERO]).unwrap(),
            ComplexMatrix::from_vec(2, 2, vec![ZERO, c(0.0, -1.0), c(0.0, 1.0), ZERO]).unwrap(),
            ComplexMatrix::from_vec(2, 2, vec![ONE, ZERO, ZERO, c(-1.0, 0.0)]).unwrap(),
        ];
        // Equal weights: the Choi is maximally degenerate, so only the channel
        // (not the individual operators) is pinned down.
        let s = 0.5;
        let equal = KrausChannel::new(
            paulis.iter().map(|p| p.scale(c(s, 0.0))).collect(),
            1e-12,
        )
        .unwrap();
        let rt = KrausChannel::from_choi(&equal.to_choi(), 2, 2, DEFAULT_TOL).unwrap();
        assert_eq!(rt.len(), 4);
        assert!(rt.choi_distance(&equal) < 1e-12);

        // Distinct weights give a nondegenerate spectrum; then each extracted
        // operator is proportional to exactly one Pauli.
        let w = [0.4f64, 0.3, 0.2, 0.1];
        let distinct = KrausChannel::new(
            paulis
                .iter()
                .zip(&w)
                .map(|(p, &wi)| p.scale(c(wi.sqrt(), 0.0)))
                .collect(),
            1e-12,
        )
        .unwrap();
        let rt = KrausChannel::from_choi(&distinct.to_choi(), 2, 2, DEFAULT_TOL).unwrap();
        assert_eq!(rt.len(), 4);
        assert!(rt.choi_distance(&distinct) < 1e-12);
        for k in rt.kraus() {
            let mut overlaps = 0;
            for p in &paulis {
                if p.adjoint().matmul(k).trace().norm() > 1e-9 {
                    overlaps += 1;
                }
            }
            assert_eq!(overlaps, 1);
        }
    }

    #[test]
    fn random_channel_is_trace_preserving_and_roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for &dim in &[3usize, 9] {
            let ch = random_channel(&mut rng, dim, 4);
            assert!(ch.trace_preservation_deviation() < 1e-10);
            let rt = KrausChannel::from_choi(&ch.to_choi(), dim, dim, DEFAULT_TOL).unwrap();
            assert!(rt.choi_distance(&ch) < 1e-9);
        }
    }

    #[test]
    fn remix_preserves_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ch = random_channel(&mut rng, 3, 3);
        let v = random_unitary(&mut rng, 3);
        let remixed = remix_kraus(&ch, &v).unwrap();
        assert!(remixed.choi_distance(&ch) < 1e-10);
    }

    #[test]
    fn json_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ch = random_channel(&mut rng, 3, 2);
        let s = ch.to_json();
        let back = KrausChannel::from_json(&s).unwrap();
        assert!(back.choi_distance(&ch) < 1e-12);
    }

    #[test]
    fn superop_choi_reshuffle_is_involutive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ch = random_channel(&mut rng, 3, 3);
        let choi = ch.to_choi();
        let s = superop_from_choi(&choi, 3, 3);
        let back = choi_from_superop(&s, 3, 3);
        assert!(back.max_abs_diff(&choi) < 1e-15);
        // Superoperator actually evolves densities: compare against Kraus action.
        let rho = pure_density(&[c(0.6, 0.0), c(0.0, 0.8), ZERO]);
        let direct = ch.apply_density(&rho);
        let flat = ComplexMatrix::from_vec(9, 1, rho.data().to_vec()).unwrap();
        let evolved = s.matmul(&flat);
        let evolved_mat = ComplexMatrix::from_vec(3, 3, evolved.data().to_vec()).unwrap();
        assert!(evolved_mat.max_abs_diff(&direct) < 1e-12);
    }
}
