//! Trajectory state: a complex amplitude vector over the currently-alive
//! qudits plus classical registers and per-qudit subspace labels.
//!
//! Amplitudes are stored split into real and imaginary planes so the hot
//! kernels vectorize. Qudits map to tensor axes, most significant first;
//! creating a qudit appends a least-significant axis, destroying one
//! contracts its axis.
//!
//! Normalization is lazy: the physical amplitudes are `scale * raw`, with
//! `scale_sq` updated when a Kraus operator is committed instead of rescaling
//! the vector. Probabilities are computed in the raw frame and corrected by
//! `scale_sq`; the vector is physically rescaled only if the factor drifts
//! far from one.

use crate::matrix::{ComplexMatrix, C64};
use crate::rng::RandomStream;
use crate::subspace::SubspaceLabel;

pub type QuditId = usize;
pub type RegisterId = usize;

const LANES: usize = 8;

#[derive(Clone, Copy, Debug)]
enum Slot {
    /// Part of the tensored amplitude vector.
    Tensored { axis: usize, dim: usize, label: SubspaceLabel },
    /// Still unentangled: a private local vector, tensored in on demand.
    Local { re: [f64; 3], im: [f64; 3], dim: usize, label: SubspaceLabel, front: bool },
}

impl Slot {
    fn dim(&self) -> usize {
        match *self {
            Slot::Tensored { dim, .. } | Slot::Local { dim, .. } => dim,
        }
    }

    fn label(&self) -> SubspaceLabel {
        match *self {
            Slot::Tensored { label, .. } | Slot::Local { label, .. } => label,
        }
    }

    fn set_label(&mut self, l: SubspaceLabel) {
        match self {
            Slot::Tensored { label, .. } | Slot::Local { label, .. } => *label = l,
        }
    }
}

#[derive(Debug)]
pub struct TrajectoryState {
    re: Vec<f64>,
    im: Vec<f64>,
    scr_re: Vec<f64>,
    scr_im: Vec<f64>,
    len: usize,
    /// Squared global scale: physical amplitude = sqrt(scale_sq) * raw.
    scale_sq: f64,
    /// Pending layout of the candidate in scratch (len, per-target dims).
    pending: Option<(usize, Vec<(QuditId, usize)>)>,
    /// Axis order, most significant first.
    axes: Vec<QuditId>,
    slots: Vec<Option<Slot>>,
    registers: Vec<u8>,
    peak_len: usize,
}

impl TrajectoryState {
    pub fn new(max_qudits: usize, num_registers: usize) -> Self {
        Self {
            re: vec![1.0],
            im: vec![0.0],
            scr_re: Vec::new(),
            scr_im: Vec::new(),
            len: 1,
            scale_sq: 1.0,
            pending: None,
            axes: Vec::new(),
            slots: vec![None; max_qudits],
            registers: vec![0; num_registers],
            peak_len: 1,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.axes.is_empty()
    }

    pub fn peak_len(&self) -> usize {
        self.peak_len
    }

    pub fn alive_count(&self) -> usize {
        self.axes.len()
    }

    pub fn is_alive(&self, q: QuditId) -> bool {
        self.slots[q].is_some()
    }

    pub fn dim_of(&self, q: QuditId) -> usize {
        self.slots[q].expect("qudit not alive").dim
    }

    pub fn label(&self, q: QuditId) -> SubspaceLabel {
        self.slots[q].expect("qudit not alive").label
    }

    pub fn set_label(&mut self, q: QuditId, label: SubspaceLabel) {
        self.slots[q].as_mut().expect("qudit not alive").label = label;
    }

    pub fn reg(&self, r: RegisterId) -> u8 {
        self.registers[r]
    }

    pub fn set_reg(&mut self, r: RegisterId, v: u8) {
        self.registers[r] = v;
    }

    pub fn registers(&self) -> &[u8] {
        &self.registers
    }

    fn raw_norm_sqr(&self) -> f64 {
        let mut lanes = [0.0f64; LANES];
        let chunks = self.len / LANES;
        for k in 0..chunks {
            let i = k * LANES;
            for l in 0..LANES {
                lanes[l] += self.re[i + l] * self.re[i + l] + self.im[i + l] * self.im[i + l];
            }
        }
        let mut acc: f64 = lanes.iter().sum();
        for i in chunks * LANES..self.len {
            acc += self.re[i] * self.re[i] + self.im[i] * self.im[i];
        }
        acc
    }

    /// Physical squared norm (raw norm corrected by the lazy scale).
    pub fn norm_sqr(&self) -> f64 {
        self.raw_norm_sqr() * self.scale_sq
    }

    /// The lazy normalization factor: physical probability of a candidate
    /// with raw squared norm `r` is `r * norm_scale_sq()`.
    pub fn norm_scale_sq(&self) -> f64 {
        self.scale_sq
    }

    /// Physically apply the lazy scale if it drifted far from one.
    fn maybe_renormalize_storage(&mut self) {
        if (0.25..=4.0).contains(&self.scale_sq) {
            return;
        }
        let f = self.scale_sq.sqrt();
        for i in 0..self.len {
            self.re[i] *= f;
            self.im[i] *= f;
        }
        self.scale_sq = 1.0;
    }

    /// Amplitudes as complex numbers, physically scaled (test and oracle use).
    pub fn amplitudes(&self) -> Vec<C64> {
        let f = self.scale_sq.sqrt();
        (0..self.len)
            .map(|i| C64::new(self.re[i] * f, self.im[i] * f))
            .collect()
    }

    fn stride_of_axis(&self, axis: usize) -> usize {
        let mut s = 1usize;
        for a in (axis + 1)..self.axes.len() {
            s *= self.slots[self.axes[a]].unwrap().dim;
        }
        s
    }

    fn target_axis_info(&self, targets: &[QuditId]) -> Vec<(usize, usize, usize)> {
        // (axis, dim, stride) per target, in target order.
        targets
            .iter()
            .map(|&q| {
                let slot = self.slots[q].expect("target qudit not alive");
                (slot.axis, slot.dim, self.stride_of_axis(slot.axis))
            })
            .collect()
    }

    /// Create a qudit in a pure local state, appended as the least
    /// significant axis. `local_state` must have unit norm.
    pub fn create_qudit(&mut self, q: QuditId, local_state: &[C64], label: SubspaceLabel) {
        self.create_qudit_at(q, local_state, label, false);
    }

    /// Create a qudit, choosing the axis position. `front` makes it the most
    /// significant axis (large stride), which keeps the hot kernels on the
    /// vectorized path for short-lived qudits that receive many operations.
    pub fn create_qudit_at(
        &mut self,
        q: QuditId,
        local_state: &[C64],
        label: SubspaceLabel,
        front: bool,
    ) {
        assert!(self.slots[q].is_none(), "qudit {q} already alive");
        let dim = local_state.len();
        let new_len = self.len * dim;
        self.scr_re.resize(new_len, 0.0);
        self.scr_im.resize(new_len, 0.0);
        if front {
            for (j, amp) in local_state.iter().enumerate() {
                let base = j * self.len;
                for i in 0..self.len {
                    let ar = self.re[i];
                    let ai = self.im[i];
                    self.scr_re[base + i] = ar * amp.re - ai * amp.im;
                    self.scr_im[base + i] = ar * amp.im + ai * amp.re;
                }
            }
        } else {
            for i in 0..self.len {
                let ar = self.re[i];
                let ai = self.im[i];
                for (j, amp) in local_state.iter().enumerate() {
                    self.scr_re[i * dim + j] = ar * amp.re - ai * amp.im;
                    self.scr_im[i * dim + j] = ar * amp.im + ai * amp.re;
                }
            }
        }
        std::mem::swap(&mut self.re, &mut self.scr_re);
        std::mem::swap(&mut self.im, &mut self.scr_im);
        self.len = new_len;
        self.peak_len = self.peak_len.max(new_len);
        if front {
            for slot in self.slots.iter_mut().flatten() {
                slot.axis += 1;
            }
            self.axes.insert(0, q);
            self.slots[q] = Some(Slot { axis: 0, dim, label });
        } else {
            let axis = self.axes.len();
            self.axes.push(q);
            self.slots[q] = Some(Slot { axis, dim, label });
        }
    }

    /// Destructively measure a qudit in its local basis: Born-sample the
    /// outcome, contract the axis and restore exact normalization. Returns
    /// the outcome digit and the physical probability total (≈1, a drift
    /// guard for the caller).
    pub fn destroy_measure(&mut self, q: QuditId, rng: &mut RandomStream) -> (usize, f64) {
        let slot = self.slots[q].expect("qudit not alive");
        let d = slot.dim;
        let s = self.stride_of_axis(slot.axis);
        let mut probs = [0.0f64; 8];
        assert!(d <= 8);
        let block = d * s;
        let mut hb = 0;
        while hb < self.len {
            for t in 0..d {
                let off = hb + t * s;
                let mut lanes = [0.0f64; LANES];
                let chunks = s / LANES;
                for k in 0..chunks {
                    let i = off + k * LANES;
                    for l in 0..LANES {
                        lanes[l] += self.re[i + l] * self.re[i + l]
                            + self.im[i + l] * self.im[i + l];
                    }
                }
                let mut acc: f64 = lanes.iter().sum();
                for i in off + chunks * LANES..off + s {
                    acc += self.re[i] * self.re[i] + self.im[i] * self.im[i];
                }
                probs[t] += acc;
            }
            hb += block;
        }
        let total: f64 = probs[..d].iter().sum();
        let mut u = rng.next_f64() * total;
        let mut outcome = d - 1;
        for (t, &p) in probs[..d].iter().enumerate() {
            if u < p {
                outcome = t;
                break;
            }
            u -= p;
        }
        let renorm = 1.0 / probs[outcome].sqrt();

        let new_len = self.len / d;
        self.scr_re.resize(new_len, 0.0);
        self.scr_im.resize(new_len, 0.0);
        let mut dst = 0;
        let mut hb = 0;
        while hb < self.len {
            let off = hb + outcome * s;
            for lo in 0..s {
                self.scr_re[dst] = self.re[off + lo] * renorm;
                self.scr_im[dst] = self.im[off + lo] * renorm;
                dst += 1;
            }
            hb += block;
        }
        std::mem::swap(&mut self.re, &mut self.scr_re);
        std::mem::swap(&mut self.im, &mut self.scr_im);
        self.len = new_len;
        let axis = slot.axis;
        self.axes.remove(axis);
        self.slots[q] = None;
        for slot in self.slots.iter_mut().flatten() {
            if slot.axis > axis {
                slot.axis -= 1;
            }
        }
        let physical_total = total * self.scale_sq;
        self.scale_sq = 1.0;
        (outcome, physical_total)
    }

    /// Apply an operator into scratch without committing: returns the raw
    /// squared norm of the candidate result. The matrix has shape
    /// `prod(new_dims) x prod(current dims)`, row-major, first target most
    /// significant on both sides.
    pub fn apply_candidate(
        &mut self,
        targets: &[QuditId],
        mat: &ComplexMatrix,
        new_dims: &[usize],
    ) -> f64 {
        let info = self.target_axis_info(targets);
        let cols: usize = info.iter().map(|&(_, d, _)| d).product();
        let rows: usize = new_dims.iter().product();
        assert_eq!(mat.cols(), cols, "operator column mismatch");
        assert_eq!(mat.rows(), rows, "operator row mismatch");

        let same_dims = targets.len() == 1 && new_dims[0] == info[0].1;
        let raw = if same_dims {
            let (_, d, s) = info[0];
            match d {
                2 => self.candidate_1q::<2>(mat, s),
                3 => self.candidate_1q::<3>(mat, s),
                _ => self.candidate_general(&info, mat, new_dims),
            }
        } else {
            self.candidate_general(&info, mat, new_dims)
        };
        let pending_dims = targets
            .iter()
            .zip(new_dims)
            .map(|(&q, &d)| (q, d))
            .collect();
        let out_len = self.len / cols * rows;
        self.pending = Some((out_len, pending_dims));
        raw
    }

    /// Commit the candidate in scratch as the new state with physical norm
    /// one, given its raw squared norm.
    pub fn commit_candidate(&mut self, raw_norm_sqr: f64) {
        let (out_len, dims) = self.pending.take().expect("no pending candidate");
        std::mem::swap(&mut self.re, &mut self.scr_re);
        std::mem::swap(&mut self.im, &mut self.scr_im);
        self.len = out_len;
        for (q, d) in dims {
            self.slots[q].as_mut().unwrap().dim = d;
        }
        self.peak_len = self.peak_len.max(out_len);
        self.scale_sq = 1.0 / raw_norm_sqr;
        self.maybe_renormalize_storage();
    }

    pub fn discard_candidate(&mut self) {
        self.pending = None;
    }

    /// Apply a square operator and commit immediately without norm tracking
    /// (unitary gates; drift is caught by later probability checks).
    pub fn apply_unitary(&mut self, targets: &[QuditId], mat: &ComplexMatrix) {
        let dims: Vec<usize> = targets.iter().map(|&q| self.dim_of(q)).collect();
        let _ = self.apply_candidate(targets, mat, &dims);
        let (out_len, _) = self.pending.take().expect("pending candidate");
        std::mem::swap(&mut self.re, &mut self.scr_re);
        std::mem::swap(&mut self.im, &mut self.scr_im);
        self.len = out_len;
    }

    /// Apply a (possibly resizing) operator, commit, and return the physical
    /// squared norm of the unnormalized result. General-purpose entry point.
    pub fn apply_op(&mut self, targets: &[QuditId], mat: &ComplexMatrix, new_dims: &[usize]) -> f64 {
        let raw = self.apply_candidate(targets, mat, new_dims);
        let physical = raw * self.scale_sq;
        let scale_before = self.scale_sq;
        let (out_len, dims) = self.pending.take().expect("pending candidate");
        std::mem::swap(&mut self.re, &mut self.scr_re);
        std::mem::swap(&mut self.im, &mut self.scr_im);
        self.len = out_len;
        for (q, d) in dims {
            self.slots[q].as_mut().unwrap().dim = d;
        }
        self.peak_len = self.peak_len.max(out_len);
        self.scale_sq = scale_before;
        physical
    }

    pub fn rescale(&mut self, factor: f64) {
        self.scale_sq *= factor * factor;
        self.maybe_renormalize_storage();
    }

    fn candidate_1q<const D: usize>(&mut self, mat: &ComplexMatrix, s: usize) -> f64 {
        let mut mr = [[0.0f64; D]; D];
        let mut mi = [[0.0f64; D]; D];
        for r in 0..D {
            for c in 0..D {
                mr[r][c] = mat[(r, c)].re;
                mi[r][c] = mat[(r, c)].im;
            }
        }
        self.scr_re.resize(self.len, 0.0);
        self.scr_im.resize(self.len, 0.0);
        let block = D * s;
        let mut lanes = [0.0f64; LANES];
        let mut tail = 0.0f64;
        // Single pass over the input: for each low offset, read the D input
        // components (contiguous across lo for each component), produce all D
        // outputs. Lane-split norm accumulators keep the loop vectorizable.
        let chunks = s / LANES;
        let mut hb = 0;
        while hb < self.len {
            for k in 0..chunks {
                let i = hb + k * LANES;
                for l in 0..LANES {
                    let base = i + l;
                    let mut xr = [0.0f64; D];
                    let mut xi = [0.0f64; D];
                    for c in 0..D {
                        xr[c] = self.re[base + c * s];
                        xi[c] = self.im[base + c * s];
                    }
                    let mut g = 0.0f64;
                    for r in 0..D {
                        let mut ar = 0.0;
                        let mut ai = 0.0;
                        for c in 0..D {
                            ar += mr[r][c] * xr[c] - mi[r][c] * xi[c];
                            ai += mr[r][c] * xi[c] + mi[r][c] * xr[c];
                        }
                        self.scr_re[base + r * s] = ar;
                        self.scr_im[base + r * s] = ai;
                        g += ar * ar + ai * ai;
                    }
                    lanes[l] += g;
                }
            }
            for lo in chunks * LANES..s {
                let base = hb + lo;
                let mut xr = [0.0f64; D];
                let mut xi = [0.0f64; D];
                for c in 0..D {
                    xr[c] = self.re[base + c * s];
                    xi[c] = self.im[base + c * s];
                }
                for r in 0..D {
                    let mut ar = 0.0;
                    let mut ai = 0.0;
                    for c in 0..D {
                        ar += mr[r][c] * xr[c] - mi[r][c] * xi[c];
                        ai += mr[r][c] * xi[c] + mi[r][c] * xr[c];
                    }
                    self.scr_re[base + r * s] = ar;
                    self.scr_im[base + r * s] = ai;
                    tail += ar * ar + ai * ai;
                }
            }
            hb += block;
        }
        lanes.iter().sum::<f64>() + tail
    }

    /// General (possibly resizing) candidate via an odometer over the
    /// non-target axes.
    fn candidate_general(
        &mut self,
        info: &[(usize, usize, usize)],
        mat: &ComplexMatrix,
        new_dims: &[usize],
    ) -> f64 {
        let cols: usize = info.iter().map(|&(_, d, _)| d).product();
        let rows: usize = new_dims.iter().product();

        let target_axes: Vec<usize> = info.iter().map(|&(a, _, _)| a).collect();
        let n_axes = self.axes.len();
        let mut out_dims: Vec<usize> = (0..n_axes)
            .map(|a| self.slots[self.axes[a]].unwrap().dim)
            .collect();
        for (i, &(a, _, _)) in info.iter().enumerate() {
            out_dims[a] = new_dims[i];
        }
        let mut out_strides = vec![1usize; n_axes];
        for a in (0..n_axes.saturating_sub(1)).rev() {
            out_strides[a] = out_strides[a + 1] * out_dims[a + 1];
        }
        let out_len: usize = out_dims.iter().product::<usize>().max(1);

        let mut in_off = vec![0usize; cols];
        for c in 0..cols {
            let mut rem = c;
            let mut off = 0;
            for i in (0..info.len()).rev() {
                let (_, d, s) = info[i];
                off += (rem % d) * s;
                rem /= d;
            }
            in_off[c] = off;
        }
        let mut out_off = vec![0usize; rows];
        for r in 0..rows {
            let mut rem = r;
            let mut off = 0;
            for i in (0..info.len()).rev() {
                let d = new_dims[i];
                off += (rem % d) * out_strides[target_axes[i]];
                rem /= d;
            }
            out_off[r] = off;
        }

        let mut rest: Vec<(usize, usize, usize)> = Vec::new(); // (dim, in_stride, out_stride)
        for a in 0..n_axes {
            if target_axes.contains(&a) {
                continue;
            }
            let d = self.slots[self.axes[a]].unwrap().dim;
            rest.push((d, self.stride_of_axis(a), out_strides[a]));
        }

        let mrr: Vec<f64> = mat.data().iter().map(|z| z.re).collect();
        let mii: Vec<f64> = mat.data().iter().map(|z| z.im).collect();

        self.scr_re.resize(out_len, 0.0);
        self.scr_im.resize(out_len, 0.0);
        let mut norm = 0.0f64;

        let rest_count: usize = rest.iter().map(|&(d, _, _)| d).product::<usize>().max(1);
        let mut digits = vec![0usize; rest.len()];
        let mut in_base = 0usize;
        let mut out_base = 0usize;
        let mut xr = [0.0f64; 16];
        let mut xi = [0.0f64; 16];
        assert!(cols <= 16);
        for step in 0..rest_count {
            for c in 0..cols {
                xr[c] = self.re[in_base + in_off[c]];
                xi[c] = self.im[in_base + in_off[c]];
            }
            for r in 0..rows {
                let mrow = r * cols;
                let mut ar = 0.0;
                let mut ai = 0.0;
                for c in 0..cols {
                    let mre = mrr[mrow + c];
                    let mim = mii[mrow + c];
                    ar += mre * xr[c] - mim * xi[c];
                    ai += mre * xi[c] + mim * xr[c];
                }
                self.scr_re[out_base + out_off[r]] = ar;
                self.scr_im[out_base + out_off[r]] = ai;
                norm += ar * ar + ai * ai;
            }
            if step + 1 == rest_count {
                break;
            }
            let mut i = rest.len();
            loop {
                i -= 1;
                digits[i] += 1;
                in_base += rest[i].1;
                out_base += rest[i].2;
                if digits[i] < rest[i].0 {
                    break;
                }
                digits[i] = 0;
                in_base -= rest[i].0 * rest[i].1;
                out_base -= rest[i].0 * rest[i].2;
            }
        }
        norm
    }

    /// Multiply amplitudes by a diagonal over the joint target digits
    /// (norm-preserving for unit-modulus entries).
    pub fn apply_diag(&mut self, targets: &[QuditId], diag: &[C64]) {
        let info = self.target_axis_info(targets);
        match info.len() {
            1 => {
                let (_, d, s) = info[0];
                assert_eq!(diag.len(), d);
                let block = d * s;
                let mut hb = 0;
                while hb < self.len {
                    for (t, z) in diag.iter().enumerate() {
                        if z.re == 1.0 && z.im == 0.0 {
                            continue;
                        }
                        let off = hb + t * s;
                        for lo in 0..s {
                            let ar = self.re[off + lo];
                            let ai = self.im[off + lo];
                            self.re[off + lo] = z.re * ar - z.im * ai;
                            self.im[off + lo] = z.re * ai + z.im * ar;
                        }
                    }
                    hb += block;
                }
            }
            2 => {
                let (_, d1, s1_raw) = info[0];
                let (_, d2, s2_raw) = info[1];
                assert_eq!(diag.len(), d1 * d2);
                let swap = s1_raw < s2_raw;
                let (da, sa, db, sb) = if swap {
                    (d2, s2_raw, d1, s1_raw)
                } else {
                    (d1, s1_raw, d2, s2_raw)
                };
                let mut hb = 0;
                while hb < self.len {
                    let mut mb = 0;
                    while mb < sa {
                        for ta in 0..da {
                            for tb in 0..db {
                                let z = if swap {
                                    diag[tb * da + ta]
                                } else {
                                    diag[ta * db + tb]
                                };
                                if z.re == 1.0 && z.im == 0.0 {
                                    continue;
                                }
                                let off = hb + mb + ta * sa + tb * sb;
                                for lo in 0..sb {
                                    let ar = self.re[off + lo];
                                    let ai = self.im[off + lo];
                                    self.re[off + lo] = z.re * ar - z.im * ai;
                                    self.im[off + lo] = z.re * ai + z.im * ar;
                                }
                            }
                        }
                        mb += db * sb;
                    }
                    hb += da * sa;
                }
            }
            _ => panic!("apply_diag supports 1 or 2 targets"),
        }
    }

    /// Mix two joint basis levels of the targets by a 2x2 matrix, leaving all
    /// other levels untouched. `level_a`/`level_b` are joint digit indices in
    /// the same convention as [`Self::apply_candidate`].
    pub fn apply_two_level_mix(
        &mut self,
        targets: &[QuditId],
        level_a: usize,
        level_b: usize,
        m: [C64; 4],
    ) {
        let info = self.target_axis_info(targets);
        let dims: Vec<usize> = info.iter().map(|&(_, d, _)| d).collect();
        let offset_of = |mut level: usize| -> usize {
            let mut off = 0;
            for i in (0..info.len()).rev() {
                off += (level % dims[i]) * info[i].2;
                level /= dims[i];
            }
            off
        };
        let off_a = offset_of(level_a);
        let off_b = offset_of(level_b);
        let mut rest: Vec<(usize, usize)> = Vec::new();
        let n_axes = self.axes.len();
        let target_axes: Vec<usize> = info.iter().map(|&(a, _, _)| a).collect();
        for a in 0..n_axes {
            if target_axes.contains(&a) {
                continue;
            }
            rest.push((self.slots[self.axes[a]].unwrap().dim, self.stride_of_axis(a)));
        }
        let rest_count: usize = rest.iter().map(|&(d, _)| d).product::<usize>().max(1);
        let mut digits = vec![0usize; rest.len()];
        let mut base = 0usize;
        for step in 0..rest_count {
            let ia = base + off_a;
            let ib = base + off_b;
            let (xr, xi) = (self.re[ia], self.im[ia]);
            let (yr, yi) = (self.re[ib], self.im[ib]);
            self.re[ia] = m[0].re * xr - m[0].im * xi + m[1].re * yr - m[1].im * yi;
            self.im[ia] = m[0].re * xi + m[0].im * xr + m[1].re * yi + m[1].im * yr;
            self.re[ib] = m[2].re * xr - m[2].im * xi + m[3].re * yr - m[3].im * yi;
            self.im[ib] = m[2].re * xi + m[2].im * xr + m[3].re * yi + m[3].im * yr;
            if step + 1 == rest_count {
                break;
            }
            let mut i = rest.len();
            loop {
                i -= 1;
                digits[i] += 1;
                base += rest[i].1;
                if digits[i] < rest[i].0 {
                    break;
                }
                digits[i] = 0;
                base -= rest[i].0 * rest[i].1;
            }
        }
    }

    /// Reduced density matrix of the target qudits, row-major into `out`
    /// (size D*D, D = product of current target dims), in the *physical*
    /// normalization.
    pub fn local_rdm(&self, targets: &[QuditId], out: &mut [C64]) {
        let info = self.target_axis_info(targets);
        let d: usize = info.iter().map(|&(_, d, _)| d).product();
        assert_eq!(out.len(), d * d);
        out.fill(C64::new(0.0, 0.0));
        if info.len() == 1 {
            let (_, d, s) = info[0];
            let block = d * s;
            let mut hb = 0;
            while hb < self.len {
                for r in 0..d {
                    for c in r..d {
                        let or = hb + r * s;
                        let oc = hb + c * s;
                        let mut lr = [0.0f64; LANES];
                        let mut li = [0.0f64; LANES];
                        let chunks = s / LANES;
                        for k in 0..chunks {
                            let i = k * LANES;
                            for l in 0..LANES {
                                let ar = self.re[or + i + l];
                                let ai = self.im[or + i + l];
                                let br = self.re[oc + i + l];
                                let bi = self.im[oc + i + l];
                                lr[l] += ar * br + ai * bi;
                                li[l] += ai * br - ar * bi;
                            }
                        }
                        let mut accr: f64 = lr.iter().sum();
                        let mut acci: f64 = li.iter().sum();
                        for lo in chunks * LANES..s {
                            let ar = self.re[or + lo];
                            let ai = self.im[or + lo];
                            let br = self.re[oc + lo];
                            let bi = self.im[oc + lo];
                            accr += ar * br + ai * bi;
                            acci += ai * br - ar * bi;
                        }
                        out[r * d + c] += C64::new(accr, acci);
                    }
                }
                hb += block;
            }
        } else {
            let mut off = vec![0usize; d];
            for c in 0..d {
                let mut rem = c;
                let mut o = 0;
                for i in (0..info.len()).rev() {
                    let (_, dd, ss) = info[i];
                    o += (rem % dd) * ss;
                    rem /= dd;
                }
                off[c] = o;
            }
            let target_axes: Vec<usize> = info.iter().map(|&(a, _, _)| a).collect();
            let mut rest: Vec<(usize, usize)> = Vec::new();
            for a in 0..self.axes.len() {
                if target_axes.contains(&a) {
                    continue;
                }
                rest.push((self.slots[self.axes[a]].unwrap().dim, self.stride_of_axis(a)));
            }
            let rest_count: usize = rest.iter().map(|&(dd, _)| dd).product::<usize>().max(1);
            let mut digits = vec![0usize; rest.len()];
            let mut base = 0usize;
            for step in 0..rest_count {
                for r in 0..d {
                    let ar = self.re[base + off[r]];
                    let ai = self.im[base + off[r]];
                    for c in r..d {
                        let br = self.re[base + off[c]];
                        let bi = self.im[base + off[c]];
                        out[r * d + c] += C64::new(ar * br + ai * bi, ai * br - ar * bi);
                    }
                }
                if step + 1 == rest_count {
                    break;
                }
                let mut i = rest.len();
                loop {
                    i -= 1;
                    digits[i] += 1;
                    base += rest[i].1;
                    if digits[i] < rest[i].0 {
                        break;
                    }
                    digits[i] = 0;
                    base -= rest[i].0 * rest[i].1;
                }
            }
        }
        for r in 0..d {
            for c in 0..r {
                out[r * d + c] = out[c * d + r].conj();
            }
        }
        if self.scale_sq != 1.0 {
            for v in out.iter_mut() {
                *v = v.scale(self.scale_sq);
            }
        }
    }

    /// Population of one local basis level of a qudit (physical).
    pub fn population(&self, q: QuditId, level: usize) -> f64 {
        let slot = self.slots[q].expect("qudit not alive");
        if level >= slot.dim {
            return 0.0;
        }
        let s = self.stride_of_axis(slot.axis);
        let d = slot.dim;
        let mut acc = 0.0;
        let mut hb = 0;
        while hb < self.len {
            let off = hb + level * s;
            for lo in 0..s {
                acc += self.re[off + lo] * self.re[off + lo] + self.im[off + lo] * self.im[off + lo];
            }
            hb += d * s;
        }
        acc * self.scale_sq
    }

    /// Expectation ⟨ψ| O_q |ψ⟩ of a local operator (need not be Hermitian).
    pub fn local_expectation(&self, q: QuditId, op: &ComplexMatrix) -> C64 {
        let slot = self.slots[q].expect("qudit not alive");
        let d = slot.dim;
        assert_eq!(op.rows(), d);
        assert_eq!(op.cols(), d);
        let mut rdm = vec![C64::new(0.0, 0.0); d * d];
        self.local_rdm(&[q], &mut rdm);
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..d {
            for c in 0..d {
                acc += rdm[c * d + r] * op[(r, c)];
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{ComplexMatrix, ONE, ZERO};
    use crate::rng::RngFactory;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn hadamard3() -> ComplexMatrix {
        let s = 1.0 / 2.0f64.sqrt();
        let mut h = ComplexMatrix::zeros(3, 3);
        h[(0, 0)] = c(s, 0.0);
        h[(0, 1)] = c(s, 0.0);
        h[(1, 0)] = c(s, 0.0);
        h[(1, 1)] = c(-s, 0.0);
        h[(2, 2)] = ONE;
        h
    }

    #[test]
    fn create_apply_destroy_roundtrip() {
        let f = RngFactory::new(1);
        let mut st = TrajectoryState::new(4, 0);
        st.create_qudit(0, &[ONE, ZERO, ZERO], SubspaceLabel::Comp);
        st.create_qudit(1, &[ONE, ZERO, ZERO], SubspaceLabel::Comp);
        assert_eq!(st.len(), 9);
        st.apply_unitary(&[0], &hadamard3());
        assert!((st.norm_sqr() - 1.0).abs() < 1e-12);
        let mut rng = f.op_stream(0, 0);
        let (out, total) = st.destroy_measure(1, &mut rng);
        assert_eq!(out, 0);
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(st.len(), 3);
        assert!((st.norm_sqr() - 1.0).abs() < 1e-12);
        assert!((st.population(0, 0) - 0.5).abs() < 1e-12);
        assert!((st.population(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn apply_matches_dense_reference_on_three_qudits() {
        let mut st = TrajectoryState::new(3, 0);
        let psi0 = [c(0.6, 0.0), c(0.0, 0.48), c(0.64, 0.0)];
        st.create_qudit(0, &psi0, SubspaceLabel::Comp);
        st.create_qudit(1, &[ZERO, ONE, ZERO], SubspaceLabel::Comp);
        st.create_qudit(2, &[c(0.8, 0.0), c(0.0, -0.6), ZERO], SubspaceLabel::Comp);
        let before = st.amplitudes();
        let h = hadamard3();
        st.apply_unitary(&[1], &h);
        let id3 = ComplexMatrix::identity(3);
        let full = id3.kron(&h).kron(&id3);
        let expect: Vec<C64> = (0..27)
            .map(|r| (0..27).map(|cc| full[(r, cc)] * before[cc]).sum())
            .collect();
        let got = st.amplitudes();
        for i in 0..27 {
            assert!((got[i] - expect[i]).norm() < 1e-12, "mismatch at {i}");
        }
    }

    #[test]
    fn two_qudit_general_apply_matches_dense() {
        let mut st = TrajectoryState::new(3, 0);
        st.create_qudit(0, &[c(0.6, 0.0), c(0.8, 0.0), ZERO], SubspaceLabel::Comp);
        st.create_qudit(1, &[ZERO, c(0.0, 1.0), ZERO], SubspaceLabel::Comp);
        st.create_qudit(2, &[ONE, ZERO, ZERO], SubspaceLabel::Comp);
        let before = st.amplitudes();
        let mut u = ComplexMatrix::identity(9);
        u[(4, 4)] = ZERO;
        u[(2, 2)] = ZERO;
        u[(4, 2)] = ONE;
        u[(2, 4)] = c(-1.0, 0.0);
        let norm = st.apply_op(&[0, 2], &u, &[3, 3]);
        assert!((norm - 1.0).abs() < 1e-12);
        let got = st.amplitudes();
        for a_out in 0..3 {
            for b in 0..3 {
                for c_out in 0..3 {
                    let mut acc = ZERO;
                    for a_in in 0..3 {
                        for c_in in 0..3 {
                            let m = u[(a_out * 3 + c_out, a_in * 3 + c_in)];
                            acc += m * before[a_in * 9 + b * 3 + c_in];
                        }
                    }
                    let idx = a_out * 9 + b * 3 + c_out;
                    assert!((got[idx] - acc).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn candidate_commit_normalizes() {
        // Project a qutrit onto its computational block: 2x3 operator.
        let mut st = TrajectoryState::new(2, 0);
        let a = (1.0f64 / 3.0).sqrt();
        st.create_qudit(0, &[c(a, 0.0), c(a, 0.0), c(a, 0.0)], SubspaceLabel::Comp);
        st.create_qudit(1, &[ONE, ZERO, ZERO], SubspaceLabel::Comp);
        let mut x = ComplexMatrix::zeros(2, 3);
        x[(0, 0)] = ONE;
        x[(1, 1)] = ONE;
        let raw = st.apply_candidate(&[0], &x, &[2]);
        assert!((raw - 2.0 / 3.0).abs() < 1e-12);
        st.commit_candidate(raw);
        assert_eq!(st.len(), 6);
        assert!((st.norm_sqr() - 1.0).abs() < 1e-12);
        assert_eq!(st.dim_of(0), 2);
        assert!((st.population(0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn candidate_discard_keeps_state() {
        let mut st = TrajectoryState::new(1, 0);
        st.create_qudit(0, &[c(0.6, 0.0), c(0.8, 0.0), ZERO], SubspaceLabel::Comp);
        let before = st.amplitudes();
        let raw = st.apply_candidate(&[0], &hadamard3(), &[3]);
        assert!((raw - 1.0).abs() < 1e-12);
        st.discard_candidate();
        assert_eq!(st.amplitudes(), before);
    }

    #[test]
    fn diag_and_two_level_mix_match_dense_apply() {
        let mut st = TrajectoryState::new(2, 0);
        st.create_qudit(0, &[c(0.5, 0.0), c(0.5, 0.5), c(0.0, 0.5)], SubspaceLabel::Comp);
        st.create_qudit(1, &[c(0.6, 0.0), ZERO, c(0.8, 0.0)], SubspaceLabel::Comp);
        let mut st2 = TrajectoryState::new(2, 0);
        st2.create_qudit(0, &[c(0.5, 0.0), c(0.5, 0.5), c(0.0, 0.5)], SubspaceLabel::Comp);
        st2.create_qudit(1, &[c(0.6, 0.0), ZERO, c(0.8, 0.0)], SubspaceLabel::Comp);

        let diag: Vec<C64> = (0..9).map(|k| c(0.0, 0.3 * k as f64).exp()).collect();
        let mut dense = ComplexMatrix::diag(&diag);
        let m = [c(0.8, 0.0), c(0.0, 0.6), c(0.0, 0.6), c(0.8, 0.0)];
        let mut mix = ComplexMatrix::identity(9);
        mix[(4, 4)] = m[0];
        mix[(4, 2)] = m[1];
        mix[(2, 4)] = m[2];
        mix[(2, 2)] = m[3];
        dense = mix.matmul(&dense);

        st.apply_diag(&[0, 1], &diag);
        st.apply_two_level_mix(&[0, 1], 4, 2, m);
        st2.apply_unitary(&[0, 1], &dense);
        let a = st.amplitudes();
        let b = st2.amplitudes();
        for i in 0..9 {
            assert!((a[i] - b[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn rdm_matches_outer_product() {
        let mut st = TrajectoryState::new(2, 0);
        st.create_qudit(0, &[c(0.6, 0.0), c(0.0, 0.8), ZERO], SubspaceLabel::Comp);
        st.create_qudit(
            1,
            &[c(0.5f64.sqrt(), 0.0), c(0.5f64.sqrt(), 0.0), ZERO],
            SubspaceLabel::Comp,
        );
        let mut rdm = vec![ZERO; 9];
        st.local_rdm(&[0], &mut rdm);
        assert!((rdm[0].re - 0.36).abs() < 1e-12);
        assert!((rdm[4].re - 0.64).abs() < 1e-12);
        assert!((rdm[1] - c(0.0, -0.48)).norm() < 1e-12);
        assert!((rdm[3] - c(0.0, 0.48)).norm() < 1e-12);

        let mut joint = vec![ZERO; 81];
        st.local_rdm(&[0, 1], &mut joint);
        let amps = st.amplitudes();
        for r in 0..9 {
            for cc in 0..9 {
                assert!((joint[r * 9 + cc] - amps[r] * amps[cc].conj()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rdm_respects_lazy_scale() {
        let mut st = TrajectoryState::new(1, 0);
        st.create_qudit(0, &[c(0.6, 0.0), c(0.8, 0.0), ZERO], SubspaceLabel::Comp);
        // Commit a sub-normalized candidate so scale_sq != 1.
        let damp = ComplexMatrix::diag(&[c(0.9, 0.0), c(0.9, 0.0), c(0.9, 0.0)]);
        let raw = st.apply_candidate(&[0], &damp, &[3]);
        st.commit_candidate(raw);
        assert!((st.norm_sqr() - 1.0).abs() < 1e-12);
        let mut rdm = vec![ZERO; 9];
        st.local_rdm(&[0], &mut rdm);
        assert!((rdm[0].re - 0.36).abs() < 1e-12);
        assert!((st.population(0, 1) - 0.64).abs() < 1e-12);
    }

    #[test]
    fn destroy_measure_obeys_born_statistics() {
        let f = RngFactory::new(77);
        let mut counts = [0usize; 3];
        let n = 20000;
        for traj in 0..n {
            let mut st = TrajectoryState::new(1, 0);
            st.create_qudit(
                0,
                &[c(0.6, 0.0), c(0.0, 0.64f64.sqrt()), ZERO],
                SubspaceLabel::Comp,
            );
            let mut rng = f.op_stream(traj, 0);
            counts[st.destroy_measure(0, &mut rng).0] += 1;
        }
        let p0 = counts[0] as f64 / n as f64;
        assert!((p0 - 0.36).abs() < 3.0 * (0.36f64 * 0.64 / n as f64).sqrt());
        assert_eq!(counts[2], 0);
    }

    #[test]
    fn local_expectation_reads_coherence() {
        let mut st = TrajectoryState::new(1, 0);
        let s = 0.5f64.sqrt();
        st.create_qudit(0, &[c(s, 0.0), ZERO, c(0.0, s)], SubspaceLabel::Comp);
        let mut o = ComplexMatrix::zeros(3, 3);
        o[(0, 2)] = ONE;
        let v = st.local_expectation(0, &o);
        assert!((v - c(0.0, 0.5)).norm() < 1e-12);
    }
}
