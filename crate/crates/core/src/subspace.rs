//! Subspace decompositions of qudit Hilbert spaces.
//!
//! Each qudit's local space splits into a computational block spanning
//! |0⟩,|1⟩ and (for qutrits) a leakage block spanning |2⟩. Multi-qudit
//! block structure is the tensor product of the per-qudit splits, indexed
//! by label vectors.

use crate::error::{Error, Result};
use crate::matrix::{ComplexMatrix, C64, ONE};

/// Which block of the local space a qudit occupies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SubspaceLabel {
    /// Computational block, span{|0⟩, |1⟩}.
    Comp,
    /// Leaked block, span{|2⟩}.
    Leak,
}

impl std::fmt::Display for SubspaceLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SubspaceLabel::Comp => write!(f, "c"),
            SubspaceLabel::Leak => write!(f, "2"),
        }
    }
}

/// Vector of per-qudit labels, most-significant qudit first.
pub type LabelVec = Vec<SubspaceLabel>;

/// Partition of one qudit's local space into labelled blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubspaceDecomposition {
    local_dim: usize,
    blocks: Vec<(SubspaceLabel, Vec<usize>)>,
}

impl SubspaceDecomposition {
    /// Standard qutrit split: {|0⟩,|1⟩} computational, {|2⟩} leaked.
    pub fn qutrit() -> Self {
        Self {
            local_dim: 3,
            blocks: vec![
                (SubspaceLabel::Comp, vec![0, 1]),
                (SubspaceLabel::Leak, vec![2]),
            ],
        }
    }

    /// Two-level qudit with only the computational block (leak-free runs).
    pub fn qubit() -> Self {
        Self {
            local_dim: 2,
            blocks: vec![(SubspaceLabel::Comp, vec![0, 1])],
        }
    }

    pub fn for_dim(local_dim: usize) -> Result<Self> {
        match local_dim {
            2 => Ok(Self::qubit()),
            3 => Ok(Self::qutrit()),
            d => Err(Error::Shape(format!("unsupported local dimension {d}"))),
        }
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    pub fn labels(&self) -> impl Iterator<Item = SubspaceLabel> + '_ {
        self.blocks.iter().map(|(l, _)| *l)
    }

    pub fn block_dim(&self, label: SubspaceLabel) -> usize {
        self.block_indices(label).map_or(0, |ix| ix.len())
    }

    pub fn block_indices(&self, label: SubspaceLabel) -> Option<&[usize]> {
        self.blocks
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, ix)| ix.as_slice())
    }

    /// Embedding matrix X_r of shape `local_dim x block_dim`; columns are the
    /// standard basis vectors of the block.
    pub fn embedding(&self, label: SubspaceLabel) -> ComplexMatrix {
        let ix = self.block_indices(label).expect("label not in decomposition");
        let mut x = ComplexMatrix::zeros(self.local_dim, ix.len());
        for (col, &row) in ix.iter().enumerate() {
            x[(row, col)] = ONE;
        }
        x
    }

    pub fn projector(&self, label: SubspaceLabel) -> ComplexMatrix {
        let x = self.embedding(label);
        x.matmul(&x.adjoint())
    }
}

/// Joint block structure of an ordered list of qudits.
#[derive(Clone, Debug)]
pub struct BlockStructure {
    qudits: Vec<SubspaceDecomposition>,
}

impl BlockStructure {
    pub fn new(qudits: Vec<SubspaceDecomposition>) -> Self {
        Self { qudits }
    }

    /// Uniform structure: `arity` copies of the same per-qudit decomposition.
    pub fn uniform(decomp: &SubspaceDecomposition, arity: usize) -> Self {
        Self { qudits: vec![decomp.clone(); arity] }
    }

    pub fn arity(&self) -> usize {
        self.qudits.len()
    }

    pub fn qudit(&self, i: usize) -> &SubspaceDecomposition {
        &self.qudits[i]
    }

    pub fn total_dim(&self) -> usize {
        self.qudits.iter().map(|d| d.local_dim()).product()
    }

    /// All joint label vectors, in lexicographic order.
    pub fn label_vectors(&self) -> Vec<LabelVec> {
        let mut out: Vec<LabelVec> = vec![vec![]];
        for d in &self.qudits {
            let mut next = Vec::new();
            for prefix in &out {
                for l in d.labels() {
                    let mut v = prefix.clone();
                    v.push(l);
                    next.push(v);
                }
            }
            out = next;
        }
        out
    }

    pub fn block_dim(&self, labels: &[SubspaceLabel]) -> usize {
        assert_eq!(labels.len(), self.qudits.len());
        self.qudits
            .iter()
            .zip(labels)
            .map(|(d, &l)| d.block_dim(l))
            .product()
    }

    /// Joint embedding X_{labels} = X_{l1} ⊗ X_{l2} ⊗ ...
    pub fn embedding(&self, labels: &[SubspaceLabel]) -> ComplexMatrix {
        assert_eq!(labels.len(), self.qudits.len());
        let mut x = ComplexMatrix::identity(1);
        for (d, &l) in self.qudits.iter().zip(labels) {
            x = x.kron(&d.embedding(l));
        }
        x
    }

    pub fn projector(&self, labels: &[SubspaceLabel]) -> ComplexMatrix {
        let x = self.embedding(labels);
        x.matmul(&x.adjoint())
    }

    /// Projector onto the full computational subspace (all labels `Comp`).
    pub fn computational_projector(&self) -> ComplexMatrix {
        let labels: LabelVec = vec![SubspaceLabel::Comp; self.qudits.len()];
        self.projector(&labels)
    }

    /// Dimension of the joint computational block, `2^arity`.
    pub fn computational_dim(&self) -> usize {
        let labels: LabelVec = vec![SubspaceLabel::Comp; self.qudits.len()];
        self.block_dim(&labels)
    }

    /// Verify that blocks partition each local space and embeddings form a
    /// resolution of identity.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for d in &self.qudits {
            let mut seen = vec![false; d.local_dim()];
            for (_, ix) in &d.blocks {
                for &i in ix {
                    if i >= d.local_dim() || seen[i] {
                        return Err(Error::Shape("blocks do not partition local space".into()));
                    }
                    seen[i] = true;
                }
            }
            if !seen.iter().all(|&s| s) {
                return Err(Error::Shape("blocks do not cover local space".into()));
            }
            let mut sum = ComplexMatrix::zeros(d.local_dim(), d.local_dim());
            for l in d.labels() {
                let x = d.embedding(l);
                let xtx = x.adjoint().matmul(&x);
                if xtx.max_abs_diff(&ComplexMatrix::identity(x.cols())) > tol {
                    return Err(Error::Shape("embedding not isometric".into()));
                }
                sum = sum.add(&x.matmul(&x.adjoint()));
            }
            if sum.max_abs_diff(&ComplexMatrix::identity(d.local_dim())) > tol {
                return Err(Error::Shape("embeddings do not resolve identity".into()));
            }
        }
        Ok(())
    }
}

pub fn labels_to_string(labels: &[SubspaceLabel]) -> String {
    labels.iter().map(|l| l.to_string()).collect()
}

#[allow(dead_code)]
fn _unused(_: C64) {}
