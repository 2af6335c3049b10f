//! Random-phase approximation of quantum channels.
//!
//! Twirling a channel over independent uniform phases on each subspace kills
//! every Kraus cross term except single off-diagonal blocks `P_m K_j P_n` and
//! the block-diagonal parts `Δ(K_j)`. On states confined to one subspace
//! block per qudit, the twirled channel acts as a lookup of the current block
//! followed by Born sampling of a block operator, so leaked qutrits cost no
//! more than qubits.
//!
//! The phase variables are never materialized: the surviving index patterns
//! are known, so the transform extracts blocks `X_s̄† K_j X_t̄` directly.

use std::collections::BTreeMap;

use crate::channel::KrausChannel;
use crate::error::{Error, Result};
use crate::matrix::{ComplexMatrix, C64};
use crate::rng::RandomStream;
use crate::state::{QuditId, TrajectoryState};
use crate::subspace::{BlockStructure, LabelVec, SubspaceLabel};

/// One surviving block of a twirled Kraus operator.
#[derive(Clone, Debug)]
pub struct RpaBlock {
    /// Index of the Kraus operator in the original channel.
    pub source_index: usize,
    /// Target label vector s̄.
    pub target: LabelVec,
    /// Block matrix `X_s̄† K_j X_t̄`, shape `dim(s̄) x dim(t̄)`.
    pub mat: ComplexMatrix,
    /// Precomputed `mat† mat` for Born probabilities.
    pub probe: ComplexMatrix,
}

/// A channel after the random-phase twirl, stored as a map from source label
/// vector t̄ to the surviving blocks (all targets s̄, all Kraus indices j).
#[derive(Clone, Debug)]
pub struct RpaChannel {
    blocks: BlockStructure,
    by_source: BTreeMap<LabelVec, Vec<RpaBlock>>,
    kraus_count: usize,
    truncation_tol: f64,
}

impl RpaChannel {
    pub fn arity(&self) -> usize {
        self.blocks.arity()
    }

    pub fn block_structure(&self) -> &BlockStructure {
        &self.blocks
    }

    pub fn truncation_tol(&self) -> f64 {
        self.truncation_tol
    }

    /// Blocks reachable from source labels t̄.
    pub fn blocks_for_source(&self, source: &[SubspaceLabel]) -> Option<&[RpaBlock]> {
        self.by_source.get(source).map(|v| v.as_slice())
    }

    /// Iterate all stored blocks as ((target s̄, source t̄), j, matrix).
    pub fn block_map(&self) -> impl Iterator<Item = ((&LabelVec, LabelVec), usize, &ComplexMatrix)> {
        self.by_source.iter().flat_map(|(src, blocks)| {
            blocks
                .iter()
                .map(move |b| ((&b.target, src.clone()), b.source_index, &b.mat))
        })
    }

    /// Transition map per original Kraus index: t̄ → s̄ where a block survives.
    /// Strict incoherence of the twirl means each of these maps is injective.
    pub fn transition_maps(&self) -> Vec<BTreeMap<LabelVec, Vec<LabelVec>>> {
        let mut maps: Vec<BTreeMap<LabelVec, Vec<LabelVec>>> = vec![BTreeMap::new(); self.kraus_count];
        for (src, blocks) in &self.by_source {
            for b in blocks {
                maps[b.source_index]
                    .entry(src.clone())
                    .or_default()
                    .push(b.target.clone());
            }
        }
        maps
    }

    /// The twirled channel itself: one Kraus operator per off-diagonal block
    /// and one block-diagonal operator `Δ(K_j)` per original index. This is
    /// the exact channel of the phase average and is representation
    /// independent.
    pub fn to_twirl_channel(&self) -> Result<KrausChannel> {
        let dim = self.blocks.total_dim();
        let mut diag: BTreeMap<usize, ComplexMatrix> = BTreeMap::new();
        let mut kraus: Vec<ComplexMatrix> = Vec::new();
        for (src, blocks) in &self.by_source {
            let x_src = self.blocks.embedding(src);
            for b in blocks {
                let x_dst = self.blocks.embedding(&b.target);
                let embedded = x_dst.matmul(&b.mat).matmul(&x_src.adjoint());
                if b.target == *src {
                    diag.entry(b.source_index)
                        .and_modify(|m| *m = m.add(&embedded))
                        .or_insert(embedded);
                } else {
                    kraus.push(embedded);
                }
            }
        }
        kraus.extend(diag.into_values());
        if kraus.is_empty() {
            kraus.push(ComplexMatrix::zeros(dim, dim));
        }
        KrausChannel::new(kraus, 1e-8)
    }

    /// The incoherent realization: every block is its own Kraus operator
    /// `K_{j,s̄,t̄} ⊗ |s̄⟩⟨t̄|`. Equivalent to the twirl on states that are
    /// incoherent across blocks, and the form the trajectory engine samples.
    pub fn to_incoherent_channel(&self) -> Result<KrausChannel> {
        let mut kraus = Vec::new();
        for (src, blocks) in &self.by_source {
            let x_src = self.blocks.embedding(src);
            for b in blocks {
                let x_dst = self.blocks.embedding(&b.target);
                kraus.push(x_dst.matmul(&b.mat).matmul(&x_src.adjoint()));
            }
        }
        KrausChannel::new(kraus, 1e-8)
    }

    /// Conditional trace-preservation defect for one source block:
    /// `‖Σ_{j,s̄} K†K − I_t̄‖_max`.
    pub fn conditional_tp_deviation(&self, source: &[SubspaceLabel]) -> f64 {
        let d = self.blocks.block_dim(source);
        let mut acc = ComplexMatrix::zeros(d, d);
        if let Some(blocks) = self.by_source.get(source) {
            for b in blocks {
                acc = acc.add(&b.probe);
            }
        }
        acc.max_abs_diff(&ComplexMatrix::identity(d))
    }
}

/// Twirl `channel` over independent uniform phases per subspace block.
///
/// Blocks whose max-abs entry is below `truncation_tol` are dropped; the
/// residual probability is checked again at sampling time.
pub fn rpa_transform(
    channel: &KrausChannel,
    blocks: &BlockStructure,
    truncation_tol: f64,
) -> Result<RpaChannel> {
    let dim = blocks.total_dim();
    if channel.input_dim() != dim || channel.output_dim() != dim {
        return Err(Error::Shape(format!(
            "channel dimension {} does not match block structure dimension {}",
            channel.input_dim(),
            dim
        )));
    }
    let dev = channel.trace_preservation_deviation();
    if dev > 1e-8 {
        return Err(Error::NotTracePreserving { deviation: dev, tol: 1e-8 });
    }
    let labels = blocks.label_vectors();
    let embeddings: Vec<ComplexMatrix> = labels.iter().map(|l| blocks.embedding(l)).collect();
    let mut by_source: BTreeMap<LabelVec, Vec<RpaBlock>> = BTreeMap::new();
    for (j, k) in channel.kraus().iter().enumerate() {
        for (ti, t) in labels.iter().enumerate() {
            let kx = k.matmul(&embeddings[ti]);
            for (si, s) in labels.iter().enumerate() {
                let block = embeddings[si].adjoint().matmul(&kx);
                if block.max_abs() <= truncation_tol {
                    continue;
                }
                let probe = block.adjoint().matmul(&block);
                by_source.entry(t.clone()).or_default().push(RpaBlock {
                    source_index: j,
                    target: s.clone(),
                    mat: block,
                    probe,
                });
            }
        }
    }
    let rpa = RpaChannel {
        blocks: blocks.clone(),
        by_source,
        kraus_count: channel.len(),
        truncation_tol,
    };
    for t in &labels {
        let defect = rpa.conditional_tp_deviation(t);
        if defect > 1e-8 {
            return Err(Error::NotTracePreserving { deviation: defect, tol: 1e-8 });
        }
    }
    Ok(rpa)
}

/// Outcome of sampling one twirled channel application.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RpaSample {
    /// Original Kraus index j.
    pub kraus_index: usize,
    /// Target labels the qudits transitioned to.
    pub target: LabelVec,
}

/// Apply a twirled channel to the trajectory state: look up the source block
/// from the targets' labels, Born-sample one block operator, rewrite the
/// labels and renormalize.
pub fn apply_rpa(
    state: &mut TrajectoryState,
    rpa: &RpaChannel,
    targets: &[QuditId],
    rng: &mut RandomStream,
) -> Result<RpaSample> {
    assert_eq!(targets.len(), rpa.arity());
    let source: LabelVec = targets.iter().map(|&q| state.label(q)).collect();
    let blocks = rpa
        .blocks_for_source(&source)
        .ok_or_else(|| Error::Trajectory(format!("no blocks for source labels {source:?}")))?;

    let src_dim = rpa.blocks.block_dim(&source);
    let mut rdm = vec![C64::new(0.0, 0.0); src_dim * src_dim];
    state.local_rdm(targets, &mut rdm);

    // Born probabilities p = Tr(K†K ρ).
    let mut probs = Vec::with_capacity(blocks.len());
    let mut total = 0.0f64;
    for b in blocks {
        let mut p = 0.0f64;
        for r in 0..src_dim {
            for c in 0..src_dim {
                let m = b.probe[(r, c)];
                let rho = rdm[c * src_dim + r];
                p += m.re * rho.re - m.im * rho.im;
            }
        }
        let p = p.max(0.0);
        probs.push(p);
        total += p;
    }
    if total < 1.0 - 1e-8 {
        return Err(Error::Trajectory(format!(
            "block probabilities sum to {total:.12}; truncation too aggressive"
        )));
    }

    let mut u = rng.next_f64() * total;
    let mut chosen = blocks.len() - 1;
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            chosen = i;
            break;
        }
        u -= p;
    }
    let b = &blocks[chosen];
    let new_dims: Vec<usize> = targets
        .iter()
        .enumerate()
        .map(|(i, _)| rpa.blocks.qudit(i).block_dim(b.target[i]))
        .collect();
    let norm_sqr = state.apply_op(targets, &b.mat, &new_dims);
    if norm_sqr <= 0.0 {
        return Err(Error::Trajectory("sampled block annihilated the state".into()));
    }
    state.rescale(1.0 / norm_sqr.sqrt());
    for (i, &q) in targets.iter().enumerate() {
        state.set_label(q, b.target[i]);
    }
    Ok(RpaSample { kraus_index: b.source_index, target: b.target.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{process_fidelity, random_channel, random_unitary, remix_kraus};
    use crate::matrix::ONE;
    use crate::subspace::SubspaceDecomposition;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qutrit_blocks(arity: usize) -> BlockStructure {
        BlockStructure::uniform(&SubspaceDecomposition::qutrit(), arity)
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    /// Phase-grid twirl oracle: average `U(-φ̄) ∘ E ∘ U(φ̄)` over a uniform
    /// grid of `grid` points for each subspace phase, one independent phase
    /// per joint block. Conjugation multiplies each Choi entry by
    /// `e^{i(φ_{b(j)}+φ_{b(k)}-φ_{b(i)}-φ_{b(l)})}`, so the grid average
    /// factorizes into per-block grid sums, which are evaluated literally.
    pub(crate) fn grid_twirl_choi(
        channel: &KrausChannel,
        blocks: &BlockStructure,
        grid: usize,
    ) -> ComplexMatrix {
        let dim = blocks.total_dim();
        // Joint block index of each basis state.
        let labels = blocks.label_vectors();
        let mut block_of = vec![usize::MAX; dim];
        for (bi, lv) in labels.iter().enumerate() {
            let x = blocks.embedding(lv);
            for col in 0..x.cols() {
                for row in 0..dim {
                    if x[(row, col)].re == 1.0 {
                        block_of[row] = bi;
                    }
                }
            }
        }
        assert!(block_of.iter().all(|&b| b != usize::MAX));
        // Grid average of e^{i k φ} over φ = 2π g / grid, for the k values
        // that occur (|k| ≤ 2).
        let mut avg = std::collections::HashMap::new();
        for k in -2i64..=2 {
            let mut s = C64::new(0.0, 0.0);
            for g in 0..grid {
                let phi = 2.0 * std::f64::consts::PI * g as f64 / grid as f64;
                s += c(0.0, k as f64 * phi).exp();
            }
            avg.insert(k, s.scale(1.0 / grid as f64));
        }
        let choi = channel.to_choi();
        let n_blocks = labels.len();
        let mut out = ComplexMatrix::zeros(dim * dim, dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    for l in 0..dim {
                        let mut counts = vec![0i64; n_blocks];
                        counts[block_of[j]] += 1;
                        counts[block_of[k]] += 1;
                        counts[block_of[i]] -= 1;
                        counts[block_of[l]] -= 1;
                        let mut factor = C64::new(1.0, 0.0);
                        for &kb in &counts {
                            factor *= avg[&kb];
                        }
                        out[(i * dim + j, k * dim + l)] =
                            choi[(i * dim + j, k * dim + l)] * factor;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn pure_phase_unitary_twirls_to_itself() {
        let blocks = qutrit_blocks(1);
        let theta = 0.7;
        let theta2 = -1.3;
        let u = ComplexMatrix::diag(&[
            c(0.0, theta).exp(),
            c(0.0, theta).exp(),
            c(0.0, theta2).exp(),
        ]);
        let ch = KrausChannel::unitary(u).unwrap();
        let rpa = rpa_transform(&ch, &blocks, 1e-10).unwrap();
        // Only diagonal blocks, each proportional to the identity.
        for ((target, source), _j, mat) in rpa.block_map() {
            assert_eq!(*target, source);
            let d = mat.rows();
            let scaled = mat.scale(ONE / mat[(0, 0)]);
            assert!(scaled.max_abs_diff(&ComplexMatrix::identity(d)) < 1e-12);
        }
        // Twirl equals the original channel for a block-phase unitary.
        assert!(rpa.to_twirl_channel().unwrap().choi_distance(&ch) < 1e-12);
    }

    #[test]
    fn twirl_matches_phase_grid_oracle_single_qutrit() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for _ in 0..4 {
            let ch = random_channel(&mut rng, 3, 3);
            let blocks = qutrit_blocks(1);
            let rpa = rpa_transform(&ch, &blocks, 1e-10).unwrap();
            let oracle = grid_twirl_choi(&ch, &blocks, 64);
            let got = rpa.to_twirl_channel().unwrap().to_choi();
            assert!(got.max_abs_diff(&oracle) < 1e-6);
        }
    }

    #[test]
    fn twirl_matches_phase_grid_oracle_two_qutrits() {
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        let ch = random_channel(&mut rng, 9, 2);
        let blocks = qutrit_blocks(2);
        let rpa = rpa_transform(&ch, &blocks, 1e-10).unwrap();
        let oracle = grid_twirl_choi(&ch, &blocks, 64);
        let got = rpa.to_twirl_channel().unwrap().to_choi();
        assert!(got.max_abs_diff(&oracle) < 1e-6);
    }

    #[test]
    fn representation_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(300);
        for _ in 0..5 {
            let ch = random_channel(&mut rng, 3, 4);
            let v = random_unitary(&mut rng, 4);
            let remixed = remix_kraus(&ch, &v).unwrap();
            let blocks = qutrit_blocks(1);
            let a = rpa_transform(&ch, &blocks, 1e-10).unwrap();
            let b = rpa_transform(&remixed, &blocks, 1e-10).unwrap();
            assert!(
                a.to_twirl_channel()
                    .unwrap()
                    .choi_distance(&b.to_twirl_channel().unwrap())
                    < 1e-9
            );
            // The incoherent split form is Δ∘twirl∘Δ, so it is representation
            // independent as well.
            assert!(
                a.to_incoherent_channel()
                    .unwrap()
                    .choi_distance(&b.to_incoherent_channel().unwrap())
                    < 1e-9
            );
        }
    }

    #[test]
    fn fidelity_preservation_and_strict_incoherence() {
        let mut rng = ChaCha8Rng::seed_from_u64(400);
        for arity in [1usize, 2] {
            let dim = 3usize.pow(arity as u32);
            let ch = random_channel(&mut rng, dim, 3);
            let blocks = qutrit_blocks(arity);
            let rpa = rpa_transform(&ch, &blocks, 1e-10).unwrap();
            let f_orig = process_fidelity(&ch, &blocks).unwrap();
            let f_twirl =
                process_fidelity(&rpa.to_twirl_channel().unwrap(), &blocks).unwrap();
            let f_split =
                process_fidelity(&rpa.to_incoherent_channel().unwrap(), &blocks).unwrap();
            assert!((f_orig - f_twirl).abs() < 1e-10);
            assert!((f_orig - f_split).abs() < 1e-10);
            // Strict incoherence: every Kraus operator of the twirled channel
            // maps each source block to at most one target block, injectively.
            let twirl = rpa.to_twirl_channel().unwrap();
            let (incoherent, map) =
                crate::channel::is_incoherent_kraus_set(&twirl, &blocks, 1e-10);
            assert!(incoherent);
            let mut by_kraus: BTreeMap<usize, std::collections::BTreeSet<LabelVec>> =
                BTreeMap::new();
            for ((j, _src), dst) in &map {
                assert!(
                    by_kraus.entry(*j).or_default().insert(dst.clone()),
                    "transition map of Kraus {j} not injective"
                );
            }
        }
    }

    #[test]
    fn conditional_trace_preservation_per_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        let ch = random_channel(&mut rng, 9, 3);
        let blocks = qutrit_blocks(2);
        let rpa = rpa_transform(&ch, &blocks, 1e-10).unwrap();
        for t in blocks.label_vectors() {
            assert!(rpa.conditional_tp_deviation(&t) < 1e-10);
        }
    }

    #[test]
    fn rejects_non_trace_preserving_input() {
        let blocks = qutrit_blocks(1);
        let half = ComplexMatrix::identity(3).scale(c(0.5, 0.0));
        let ch = KrausChannel::new(vec![half.clone(), half], 1.0).unwrap();
        assert!(rpa_transform(&ch, &blocks, 1e-10).is_err());
    }

    #[test]
    fn incoherent_form_agrees_with_twirl_on_incoherent_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(600);
        let ch = random_channel(&mut rng, 3, 3);
        let blocks = qutrit_blocks(1);
        let rpa = rpa_transform(&ch, &blocks, 1e-10).unwrap();
        let twirl = rpa.to_twirl_channel().unwrap();
        let split = rpa.to_incoherent_channel().unwrap();
        // Random block-diagonal (incoherent) density matrix.
        let mut rho = ComplexMatrix::zeros(3, 3);
        let a: f64 = rng.gen::<f64>() * 0.4;
        let b: f64 = rng.gen::<f64>() * 0.4;
        let z = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5).scale(0.2);
        rho[(0, 0)] = c(a, 0.0);
        rho[(1, 1)] = c(b, 0.0);
        rho[(0, 1)] = z;
        rho[(1, 0)] = z.conj();
        rho[(2, 2)] = c(1.0 - a - b, 0.0);
        assert!(twirl
            .apply_density(&rho)
            .max_abs_diff(&split.apply_density(&rho))
            < 1e-12);
    }
}
