//! G-steerable convolution kernels: construction by group-averaging
//! projection, the steerability residual check, and the cross-correlation
//! primitive used by every place/pick network.
//!
//! The convolution convention is `(K★f)(v) = Σ_w f(v+w) K(w)` with the
//! kernel indexed by centered offsets `w` over its odd-sized support and
//! zero padding outside `f`.

use crate::field::{FeatureField, FiberType, Interp};
use crate::group::{GroupElement, GroupError, Mat, RepAction, Representation};
use crate::scalar::Scalar;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel size {0} must be odd")]
    EvenKernel(usize),
    #[error("kernel tensor length {got} does not match {d_out}x{d_in}x{k}x{k}")]
    WeightLength { d_out: usize, d_in: usize, k: usize, got: usize },
    #[error("kernel input channels {kernel} do not match field channels {field}")]
    ChannelMismatch { kernel: usize, field: usize },
    #[error("this check requires a trivial input representation")]
    NotTrivialInput,
    #[error("stride must be positive")]
    ZeroStride,
    #[error("element {0:?} is not in the kernel's group C_{1}")]
    NotInGroup(GroupElement, u32),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Field(#[from] crate::field::FieldError),
}

// ---------------------------------------------------------------------------
// Raw correlation loops (shared by the f64 library path and f32 autodiff).
// ---------------------------------------------------------------------------

/// `out[co, y, x] = Σ_{ci,ky,kx} kernel[co,ci,ky,kx] · input[ci, top + y·stride + ky − rh, left + x·stride + kx − rw]`
/// with zero padding outside the input. `(top, left)` offset the output
/// window inside the input plane; `(0, 0)` with stride 1 and `(oh, ow) =
/// (h, w)` is the usual "same" correlation.
#[allow(clippy::too_many_arguments)]
pub fn correlate2d<T: Scalar>(
    input: &[T],
    (c_in, h, w): (usize, usize, usize),
    kernel: &[T],
    (c_out, kc_in, kh, kw): (usize, usize, usize, usize),
    (top, left): (i64, i64),
    (oh, ow): (usize, usize),
    stride: usize,
) -> Vec<T> {
    assert_eq!(c_in, kc_in, "channel mismatch");
    assert_eq!(input.len(), c_in * h * w);
    assert_eq!(kernel.len(), c_out * c_in * kh * kw);
    assert!(stride >= 1);
    let rh = (kh / 2) as i64;
    let rw = (kw / 2) as i64;
    let mut out = vec![T::ZERO; c_out * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(co, out_c)| {
        for ci in 0..c_in {
            let in_plane = &input[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let kv = kernel[((co * c_in + ci) * kh + ky) * kw + kx];
                    if kv == T::ZERO {
                        continue;
                    }
                    let dy = ky as i64 - rh + top;
                    let dx = kx as i64 - rw + left;
                    for y in 0..oh {
                        let iy = y as i64 * stride as i64 + dy;
                        if iy < 0 || iy >= h as i64 {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                        let out_row = &mut out_c[y * ow..(y + 1) * ow];
                        if stride == 1 {
                            // x + dx in [0, w)
                            let x0 = (-dx).max(0) as usize;
                            let x1 = ((w as i64 - dx).min(ow as i64)).max(0) as usize;
                            let src = &in_row[(x0 as i64 + dx) as usize..(x1 as i64 + dx) as usize];
                            for (o, s) in out_row[x0..x1].iter_mut().zip(src) {
                                *o += kv * *s;
                            }
                        } else {
                            for (x, o) in out_row.iter_mut().enumerate() {
                                let ix = x as i64 * stride as i64 + dx;
                                if ix >= 0 && ix < w as i64 {
                                    *o += kv * in_plane[iy as usize * w + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient of `correlate2d` (stride 1) with respect to the input.
#[allow(clippy::too_many_arguments)]
pub fn correlate2d_grad_input<T: Scalar>(
    grad_out: &[T],
    (c_out, oh, ow): (usize, usize, usize),
    kernel: &[T],
    (kc_out, c_in, kh, kw): (usize, usize, usize, usize),
    (h, w): (usize, usize),
    (top, left): (i64, i64),
) -> Vec<T> {
    assert_eq!(c_out, kc_out);
    let rh = (kh / 2) as i64;
    let rw = (kw / 2) as i64;
    let mut grad_in = vec![T::ZERO; c_in * h * w];
    grad_in.par_chunks_mut(h * w).enumerate().for_each(|(ci, gin)| {
        for co in 0..c_out {
            let gout = &grad_out[co * oh * ow..(co + 1) * oh * ow];
            for ky in 0..kh {
                for kx in 0..kw {
                    let kv = kernel[((co * c_in + ci) * kh + ky) * kw + kx];
                    if kv == T::ZERO {
                        continue;
                    }
                    let dy = ky as i64 - rh + top;
                    let dx = kx as i64 - rw + left;
                    // input (iy, ix) received kv · from output (iy-dy, ix-dx)
                    for oy in 0..oh {
                        let iy = oy as i64 + dy;
                        if iy < 0 || iy >= h as i64 {
                            continue;
                        }
                        let grow = &gout[oy * ow..(oy + 1) * ow];
                        let irow = &mut gin[iy as usize * w..(iy as usize + 1) * w];
                        let x0 = (-dx).max(0) as usize;
                        let x1 = ((w as i64 - dx).min(ow as i64)).max(0) as usize;
                        for x in x0..x1 {
                            irow[(x as i64 + dx) as usize] += kv * grow[x];
                        }
                    }
                }
            }
        }
    });
    grad_in
}

/// Gradient of `correlate2d` (stride 1) with respect to the kernel.
#[allow(clippy::too_many_arguments)]
pub fn correlate2d_grad_kernel<T: Scalar>(
    grad_out: &[T],
    (c_out, oh, ow): (usize, usize, usize),
    input: &[T],
    (c_in, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (top, left): (i64, i64),
) -> Vec<T> {
    let rh = (kh / 2) as i64;
    let rw = (kw / 2) as i64;
    let mut grad_k = vec![T::ZERO; c_out * c_in * kh * kw];
    grad_k.par_chunks_mut(c_in * kh * kw).enumerate().for_each(|(co, gk)| {
        let gout = &grad_out[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..c_in {
            let in_plane = &input[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let dy = ky as i64 - rh + top;
                    let dx = kx as i64 - rw + left;
                    let mut acc = T::ZERO;
                    for y in 0..oh {
                        let iy = y as i64 + dy;
                        if iy < 0 || iy >= h as i64 {
                            continue;
                        }
                        let grow = &gout[y * ow..(y + 1) * ow];
                        let irow = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                        let x0 = (-dx).max(0) as usize;
                        let x1 = ((w as i64 - dx).min(ow as i64)).max(0) as usize;
                        for x in x0..x1 {
                            acc += grow[x] * irow[(x as i64 + dx) as usize];
                        }
                    }
                    gk[(ci * kh + ky) * kw + kx] = acc;
                }
            }
        }
    });
    grad_k
}

// ---------------------------------------------------------------------------
// Base-space rotation plans for k×k kernel grids.
// ---------------------------------------------------------------------------

/// Sparse resampling taps implementing a rotation of a `k×k` grid about its
/// center pixel. `apply` computes `T_g` (sampling at `ρ₁(g)⁻¹x`); the
/// adjoint scatters with transposed weights, which is the exact transpose
/// of the linear map regardless of interpolation.
#[derive(Debug, Clone)]
pub struct RotationPlan {
    k: usize,
    taps: Vec<(u32, u32, f64)>, // (dst, src, weight)
}

impl RotationPlan {
    pub fn new(k: usize, g: &GroupElement, interp: Interp) -> Self {
        let center = (k as f64 - 1.0) / 2.0;
        let (cos, sin) = g.cos_sin();
        let mut taps = Vec::new();
        for y in 0..k {
            let dr = y as f64 - center;
            for x in 0..k {
                let dc = x as f64 - center;
                let sr = center + dc * sin + dr * cos;
                let sc = center + dc * cos - dr * sin;
                let dst = (y * k + x) as u32;
                match interp {
                    Interp::Nearest => {
                        let ri = sr.round();
                        let ci = sc.round();
                        if ri >= 0.0 && ci >= 0.0 && ri < k as f64 && ci < k as f64 {
                            taps.push((dst, (ri as usize * k + ci as usize) as u32, 1.0));
                        }
                    }
                    Interp::Bilinear => {
                        let r0 = sr.floor();
                        let c0 = sc.floor();
                        let fr = sr - r0;
                        let fc = sc - c0;
                        for (ddr, wr) in [(0.0, 1.0 - fr), (1.0, fr)] {
                            for (ddc, wc) in [(0.0, 1.0 - fc), (1.0, fc)] {
                                let wgt = wr * wc;
                                if wgt == 0.0 {
                                    continue;
                                }
                                let rr = r0 + ddr;
                                let cc = c0 + ddc;
                                if rr >= 0.0 && cc >= 0.0 && rr < k as f64 && cc < k as f64 {
                                    taps.push((
                                        dst,
                                        (rr as usize * k + cc as usize) as u32,
                                        wgt,
                                    ));
                                }
                            }
                        }
                    }
                }
            }
        }
        RotationPlan { k, taps }
    }

    pub fn grid(&self) -> usize {
        self.k * self.k
    }

    /// `dst[d] += w · src[s]` over all taps (dst is zeroed first).
    pub fn apply<T: Scalar>(&self, src: &[T], dst: &mut [T]) {
        for v in dst.iter_mut() {
            *v = T::ZERO;
        }
        for &(d, s, w) in &self.taps {
            dst[d as usize] += T::from_f64(w) * src[s as usize];
        }
    }

    /// Transposed taps: `dst[s] += w · src[d]`.
    pub fn apply_adjoint<T: Scalar>(&self, src: &[T], dst: &mut [T]) {
        for v in dst.iter_mut() {
            *v = T::ZERO;
        }
        for &(d, s, w) in &self.taps {
            dst[s as usize] += T::from_f64(w) * src[d as usize];
        }
    }
}

// ---------------------------------------------------------------------------
// Channel-mixing helpers for representation actions on kernel tensors.
// ---------------------------------------------------------------------------

fn action_transposed(action: &RepAction) -> RepAction {
    match action {
        RepAction::Permutation(p) => {
            let mut inv = vec![0usize; p.len()];
            for (j, &src) in p.iter().enumerate() {
                inv[src] = j;
            }
            RepAction::Permutation(inv)
        }
        RepAction::Dense(m) => {
            let d = m.dim();
            let mut t = Mat::zeros(d);
            for r in 0..d {
                for c in 0..d {
                    t.set(r, c, m.get(c, r));
                }
            }
            RepAction::Dense(t)
        }
    }
}

/// Mix the out-channel axis of `w: [d_out_total, d_in_total, grid]`,
/// blockwise per fiber copy: `out[a] = Σ_a' M[a][a'] in[a']`.
fn mix_rows<T: Scalar>(
    w: &[T],
    out: &mut [T],
    action: &RepAction,
    copies_out: usize,
    d_out: usize,
    row_len: usize,
) {
    match action {
        RepAction::Permutation(p) => {
            for copy in 0..copies_out {
                for (a, &src) in p.iter().enumerate() {
                    let dst_off = ((copy * d_out) + a) * row_len;
                    let src_off = ((copy * d_out) + src) * row_len;
                    out[dst_off..dst_off + row_len].copy_from_slice(&w[src_off..src_off + row_len]);
                }
            }
        }
        RepAction::Dense(m) => {
            for v in out.iter_mut() {
                *v = T::ZERO;
            }
            for copy in 0..copies_out {
                for a in 0..d_out {
                    let dst_off = ((copy * d_out) + a) * row_len;
                    for a2 in 0..d_out {
                        let coef = T::from_f64(m.get(a, a2));
                        if coef == T::ZERO {
                            continue;
                        }
                        let src_off = ((copy * d_out) + a2) * row_len;
                        for i in 0..row_len {
                            out[dst_off + i] += coef * w[src_off + i];
                        }
                    }
                }
            }
        }
    }
}

/// Mix the in-channel axis: `out[·, b, ·] = Σ_b' in[·, b', ·] M[b'][b]`,
/// i.e. right-multiplication by the action matrix, blockwise per copy.
#[allow(clippy::too_many_arguments)]
fn mix_cols<T: Scalar>(
    w: &[T],
    out: &mut [T],
    action: &RepAction,
    d_out_total: usize,
    copies_in: usize,
    d_in: usize,
    grid: usize,
) {
    let d_in_total = copies_in * d_in;
    match action {
        RepAction::Permutation(p) => {
            // M[j][p[j]] = 1 ⇒ (K·M)[·,b] = K[·, p⁻¹(b)]; gather via inverse.
            let mut inv = vec![0usize; p.len()];
            for (j, &src) in p.iter().enumerate() {
                inv[src] = j;
            }
            for o in 0..d_out_total {
                for copy in 0..copies_in {
                    for b in 0..d_in {
                        let src_b = copy * d_in + inv[b];
                        let dst = (o * d_in_total + copy * d_in + b) * grid;
                        let src = (o * d_in_total + src_b) * grid;
                        out[dst..dst + grid].copy_from_slice(&w[src..src + grid]);
                    }
                }
            }
        }
        RepAction::Dense(m) => {
            for v in out.iter_mut() {
                *v = T::ZERO;
            }
            for o in 0..d_out_total {
                for copy in 0..copies_in {
                    for b in 0..d_in {
                        let dst = (o * d_in_total + copy * d_in + b) * grid;
                        for b2 in 0..d_in {
                            let coef = T::from_f64(m.get(b2, b));
                            if coef == T::ZERO {
                                continue;
                            }
                            let src = (o * d_in_total + copy * d_in + b2) * grid;
                            for i in 0..grid {
                                out[dst + i] += coef * w[src + i];
                            }
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// The group-averaging projector.
// ---------------------------------------------------------------------------

/// Linear idempotent map onto the space of `C_n`-steerable kernels:
/// `P(W) = (1/n) Σ_g ρ_out(g) · T_g(W) · ρ_in(g)⁻¹`, applied blockwise over
/// fiber copies. `apply_adjoint` is the exact transpose, used to route
/// gradients through the projection during training.
#[derive(Debug, Clone)]
pub struct Projector {
    rep_in: Representation,
    copies_in: usize,
    rep_out: Representation,
    copies_out: usize,
    order: u32,
    k: usize,
    plans: Vec<RotationPlan>,
    rows: Vec<RepAction>,     // ρ_out(g)
    cols: Vec<RepAction>,     // ρ_in(g)⁻¹
    rows_t: Vec<RepAction>,   // ρ_out(g)ᵀ
    cols_t: Vec<RepAction>,   // (ρ_in(g)⁻¹)ᵀ
}

impl Projector {
    pub fn new(
        rep_in: Representation,
        copies_in: usize,
        rep_out: Representation,
        copies_out: usize,
        order: u32,
        k: usize,
        interp: Interp,
    ) -> Result<Self, KernelError> {
        if k % 2 == 0 {
            return Err(KernelError::EvenKernel(k));
        }
        let elements = GroupElement::all(order)?;
        let mut plans = Vec::with_capacity(elements.len());
        let mut rows = Vec::with_capacity(elements.len());
        let mut cols = Vec::with_capacity(elements.len());
        for g in &elements {
            plans.push(RotationPlan::new(k, g, interp));
            rows.push(rep_out.action(g)?);
            cols.push(rep_in.action(&g.inverse())?);
        }
        let rows_t = rows.iter().map(action_transposed).collect();
        let cols_t = cols.iter().map(action_transposed).collect();
        Ok(Projector {
            rep_in,
            copies_in,
            rep_out,
            copies_out,
            order,
            k,
            plans,
            rows,
            cols,
            rows_t,
            cols_t,
        })
    }

    pub fn d_in_total(&self) -> usize {
        self.rep_in.dim() * self.copies_in
    }

    pub fn d_out_total(&self) -> usize {
        self.rep_out.dim() * self.copies_out
    }

    pub fn weight_len(&self) -> usize {
        self.d_out_total() * self.d_in_total() * self.k * self.k
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    fn check_len<T>(&self, w: &[T]) -> Result<(), KernelError> {
        if w.len() != self.weight_len() {
            return Err(KernelError::WeightLength {
                d_out: self.d_out_total(),
                d_in: self.d_in_total(),
                k: self.k,
                got: w.len(),
            });
        }
        Ok(())
    }

    fn accumulate<T: Scalar>(
        &self,
        w: &[T],
        rows: &[RepAction],
        cols: &[RepAction],
        adjoint: bool,
    ) -> Vec<T> {
        let grid = self.k * self.k;
        let d_in_total = self.d_in_total();
        let d_out_total = self.d_out_total();
        let row_len = d_in_total * grid;
        let mut acc = vec![T::ZERO; w.len()];
        let mut rotated = vec![T::ZERO; w.len()];
        let mut mixed = vec![T::ZERO; w.len()];
        for (gi, plan) in self.plans.iter().enumerate() {
            for (src, dst) in w.chunks(grid).zip(rotated.chunks_mut(grid)) {
                if adjoint {
                    plan.apply_adjoint(src, dst);
                } else {
                    plan.apply(src, dst);
                }
            }
            mix_rows(&rotated, &mut mixed, &rows[gi], self.copies_out, self.rep_out.dim(), row_len);
            mix_cols(
                &mixed,
                &mut rotated,
                &cols[gi],
                d_out_total,
                self.copies_in,
                self.rep_in.dim(),
                grid,
            );
            for (a, r) in acc.iter_mut().zip(&rotated) {
                *a += *r;
            }
        }
        let inv_n = T::from_f64(1.0 / f64::from(self.order));
        for a in acc.iter_mut() {
            *a = *a * inv_n;
        }
        acc
    }

    /// Project raw weights onto the steerable subspace.
    pub fn apply<T: Scalar>(&self, w: &[T]) -> Result<Vec<T>, KernelError> {
        self.check_len(w)?;
        Ok(self.accumulate(w, &self.rows, &self.cols, false))
    }

    /// Exact transpose of `apply` (gradient routing).
    pub fn apply_adjoint<T: Scalar>(&self, g: &[T]) -> Result<Vec<T>, KernelError> {
        self.check_len(g)?;
        Ok(self.accumulate(g, &self.rows_t, &self.cols_t, true))
    }
}

// ---------------------------------------------------------------------------
// SteerableKernel: grid-sampled kernels with declared field types.
// ---------------------------------------------------------------------------

/// A grid-sampled convolution kernel with declared input/output
/// representation types and a measurable steerability residual.
#[derive(Debug, Clone)]
pub struct SteerableKernel {
    weights: Vec<f64>, // [d_out_total × d_in_total × k × k]
    pub rep_in: Representation,
    pub copies_in: usize,
    pub rep_out: Representation,
    pub copies_out: usize,
    pub size: usize,
    pub order: u32,
    pub interp: Interp,
}

impl SteerableKernel {
    #[allow(clippy::too_many_arguments)]
    pub fn from_weights(
        weights: Vec<f64>,
        rep_in: Representation,
        copies_in: usize,
        rep_out: Representation,
        copies_out: usize,
        size: usize,
        order: u32,
        interp: Interp,
    ) -> Result<Self, KernelError> {
        if size % 2 == 0 {
            return Err(KernelError::EvenKernel(size));
        }
        let d_out = rep_out.dim() * copies_out;
        let d_in = rep_in.dim() * copies_in;
        if weights.len() != d_out * d_in * size * size {
            return Err(KernelError::WeightLength { d_out, d_in, k: size, got: weights.len() });
        }
        Ok(SteerableKernel { weights, rep_in, copies_in, rep_out, copies_out, size, order, interp })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn d_in_total(&self) -> usize {
        self.rep_in.dim() * self.copies_in
    }

    pub fn d_out_total(&self) -> usize {
        self.rep_out.dim() * self.copies_out
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.d_out_total(), self.d_in_total(), self.size, self.size)
    }

    fn check_group(&self, g: &GroupElement) -> Result<(), KernelError> {
        if g.order() != self.order {
            return Err(KernelError::NotInGroup(*g, self.order));
        }
        Ok(())
    }

    /// Correlate with a field ("same" spatial size, zero padding), tagging
    /// the output with this kernel's output type.
    pub fn correlate(&self, f: &FeatureField, stride: usize) -> Result<FeatureField, KernelError> {
        let out = cross_correlate(&self.weights, self.shape(), f, stride)?;
        Ok(out
            .with_fiber(FiberType::new(self.rep_out, self.copies_out))
            .expect("channel count matches kernel output type"))
    }
}

/// Build a steerable kernel by group-averaging projection of raw weights.
#[allow(clippy::too_many_arguments)]
pub fn project_kernel(
    raw: &[f64],
    rep_in: Representation,
    copies_in: usize,
    rep_out: Representation,
    copies_out: usize,
    order: u32,
    k: usize,
    interp: Interp,
) -> Result<SteerableKernel, KernelError> {
    let projector = Projector::new(rep_in, copies_in, rep_out, copies_out, order, k, interp)?;
    let weights = projector.apply(raw)?;
    SteerableKernel::from_weights(weights, rep_in, copies_in, rep_out, copies_out, k, order, interp)
}

/// Max-norm steerability residual of `K` at `g`:
/// `max |K(g·x) − ρ_out(g)·K(x)·ρ_in(g)⁻¹|` over grid points and channels.
pub fn check_steerability(kernel: &SteerableKernel, g: &GroupElement) -> Result<f64, KernelError> {
    kernel.check_group(g)?;
    let grid = kernel.size * kernel.size;
    // K(g·x) = (T_{g⁻¹} K)(x): resample with the plan for g⁻¹.
    let plan = RotationPlan::new(kernel.size, &g.inverse(), kernel.interp);
    let mut lhs = vec![0.0f64; kernel.weights.len()];
    for (src, dst) in kernel.weights.chunks(grid).zip(lhs.chunks_mut(grid)) {
        plan.apply(src, dst);
    }
    let mut mixed = vec![0.0f64; kernel.weights.len()];
    let mut rhs = vec![0.0f64; kernel.weights.len()];
    let row_len = kernel.d_in_total() * grid;
    mix_rows(
        &kernel.weights,
        &mut mixed,
        &kernel.rep_out.action(g)?,
        kernel.copies_out,
        kernel.rep_out.dim(),
        row_len,
    );
    mix_cols(
        &mixed,
        &mut rhs,
        &kernel.rep_in.action(&g.inverse())?,
        kernel.d_out_total(),
        kernel.copies_in,
        kernel.rep_in.dim(),
        grid,
    );
    Ok(lhs
        .iter()
        .zip(&rhs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Lemma on trivial-input steerable kernels: a spatial rotation of the
/// kernel equals the inverse channel-space transformation. Returns
/// `max |T_g K(x) − ρ_out(g⁻¹) K(x)|`.
pub fn lemma4_check(kernel: &SteerableKernel, g: &GroupElement) -> Result<f64, KernelError> {
    if kernel.rep_in.dim() != 1 || kernel.rep_in != Representation::trivial(kernel.rep_in.group_order()) {
        return Err(KernelError::NotTrivialInput);
    }
    kernel.check_group(g)?;
    let grid = kernel.size * kernel.size;
    let plan = RotationPlan::new(kernel.size, g, kernel.interp);
    let mut lhs = vec![0.0f64; kernel.weights.len()];
    for (src, dst) in kernel.weights.chunks(grid).zip(lhs.chunks_mut(grid)) {
        plan.apply(src, dst);
    }
    let mut rhs = vec![0.0f64; kernel.weights.len()];
    let row_len = kernel.d_in_total() * grid;
    mix_rows(
        &kernel.weights,
        &mut rhs,
        &kernel.rep_out.action(&g.inverse())?,
        kernel.copies_out,
        kernel.rep_out.dim(),
        row_len,
    );
    Ok(lhs
        .iter()
        .zip(&rhs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// `(K★f)` with zero padding and "same" spatial size (before striding).
pub fn cross_correlate(
    weights: &[f64],
    (c_out, c_in, kh, kw): (usize, usize, usize, usize),
    f: &FeatureField,
    stride: usize,
) -> Result<FeatureField, KernelError> {
    if stride == 0 {
        return Err(KernelError::ZeroStride);
    }
    let (fc, h, w) = f.shape();
    if fc != c_in {
        return Err(KernelError::ChannelMismatch { kernel: c_in, field: fc });
    }
    let oh = h.div_ceil(stride);
    let ow = w.div_ceil(stride);
    let out = correlate2d(
        f.data(),
        (c_in, h, w),
        weights,
        (c_out, c_in, kh, kw),
        (0, 0),
        (oh, ow),
        stride,
    );
    Ok(FeatureField::new(out, (c_out, oh, ow), FiberType::trivial(c_out), f.pixel_pitch())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn trivial() -> Representation {
        Representation::trivial(4)
    }

    #[test]
    fn one_hot_corner_isotropized_under_c4() {
        // trivial→trivial over C_4: a one-hot corner averages over the four
        // corners with weight 1/4.
        let k = 3usize;
        let mut raw = vec![0.0; k * k];
        raw[0] = 1.0; // corner (0,0)
        let kernel =
            project_kernel(&raw, trivial(), 1, trivial(), 1, 4, k, Interp::Nearest).unwrap();
        let w = kernel.weights();
        for (i, expect) in [(0usize, 0.25), (2, 0.25), (6, 0.25), (8, 0.25), (4, 0.0)] {
            assert!((w[i] - expect).abs() < 1e-15, "w[{i}] = {}", w[i]);
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rep_reg = Representation::regular(4).unwrap();
        let proj = Projector::new(trivial(), 2, rep_reg, 2, 4, 5, Interp::Nearest).unwrap();
        let raw = rand_vec(&mut rng, proj.weight_len());
        let once = proj.apply(&raw).unwrap();
        let twice = proj.apply(&once).unwrap();
        let diff = once
            .iter()
            .zip(&twice)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-12, "idempotence diff {diff}");
    }

    #[test]
    fn projected_kernel_is_steerable_under_c4() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rep_reg = Representation::regular(4).unwrap();
        let cases = [
            (trivial(), 1usize, rep_reg, 2usize),
            (rep_reg, 2, rep_reg, 1),
            (rep_reg, 1, trivial(), 2),
        ];
        for (rin, ci, rout, co) in cases {
            let d = rout.dim() * co * rin.dim() * ci * 25;
            let raw = rand_vec(&mut rng, d);
            let kernel = project_kernel(&raw, rin, ci, rout, co, 4, 5, Interp::Nearest).unwrap();
            for g in GroupElement::all(4).unwrap() {
                let r = check_steerability(&kernel, &g).unwrap();
                assert!(r <= 1e-10, "residual {r} for {rin:?}x{ci} -> {rout:?}x{co}");
            }
        }
    }

    #[test]
    fn unprojected_random_kernel_fails_steerability() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rep_reg = Representation::regular(4).unwrap();
        let mut below = 0usize;
        for _ in 0..100 {
            let raw = rand_vec(&mut rng, 4 * 25);
            let kernel = SteerableKernel::from_weights(
                raw,
                trivial(),
                1,
                rep_reg,
                1,
                5,
                4,
                Interp::Nearest,
            )
            .unwrap();
            let g = GroupElement::cyclic(4, 1).unwrap();
            if check_steerability(&kernel, &g).unwrap() <= 0.1 {
                below += 1;
            }
        }
        assert!(below <= 2, "{below}/100 random kernels looked steerable");
    }

    #[test]
    fn trivial_to_regular_blocks_are_rotated_copies() {
        // For trivial→regular(C_4), block i of the projected kernel equals
        // block 0 rotated by g_i.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw = rand_vec(&mut rng, 4 * 25);
        let rep_reg = Representation::regular(4).unwrap();
        let kernel = project_kernel(&raw, trivial(), 1, rep_reg, 1, 4, 5, Interp::Nearest).unwrap();
        let grid = 25;
        for i in 0..4u32 {
            let g = GroupElement::cyclic(4, i as i64).unwrap();
            let plan = RotationPlan::new(5, &g, Interp::Nearest);
            let mut rotated = vec![0.0; grid];
            plan.apply(&kernel.weights()[0..grid], &mut rotated);
            let block = &kernel.weights()[i as usize * grid..(i as usize + 1) * grid];
            let diff = block
                .iter()
                .zip(&rotated)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-12, "block {i} diff {diff}");
        }
    }

    #[test]
    fn projector_adjoint_matches_inner_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rep_reg = Representation::regular(6).unwrap();
        for interp in [Interp::Nearest, Interp::Bilinear] {
            let proj = Projector::new(rep_reg, 2, rep_reg, 1, 6, 5, interp).unwrap();
            let w = rand_vec(&mut rng, proj.weight_len());
            let g = rand_vec(&mut rng, proj.weight_len());
            let pw = proj.apply(&w).unwrap();
            let ptg = proj.apply_adjoint(&g).unwrap();
            let lhs: f64 = pw.iter().zip(&g).map(|(a, b)| a * b).sum();
            let rhs: f64 = w.iter().zip(&ptg).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn lemma4_trivial_input_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rep_reg = Representation::regular(4).unwrap();
        let raw = rand_vec(&mut rng, 4 * 2 * 25);
        let kernel = project_kernel(&raw, trivial(), 1, rep_reg, 2, 4, 5, Interp::Nearest).unwrap();
        for g in GroupElement::all(4).unwrap() {
            let r = lemma4_check(&kernel, &g).unwrap();
            assert!(r <= 1e-10, "residual {r}");
        }
        // identity is exactly zero
        let id = GroupElement::identity(4);
        assert_eq!(lemma4_check(&kernel, &id).unwrap(), 0.0);
        // non-trivial input rejected
        let raw2 = rand_vec(&mut rng, 4 * 4 * 25);
        let k2 = project_kernel(&raw2, rep_reg, 1, rep_reg, 1, 4, 5, Interp::Nearest).unwrap();
        assert!(lemma4_check(&k2, &GroupElement::identity(4)).is_err());
    }

    #[test]
    fn isotropic_kernel_has_zero_residual() {
        // trivial→trivial isotropic (center one-hot) kernel: residual 0.
        let mut raw = vec![0.0; 9];
        raw[4] = 1.0;
        let kernel =
            SteerableKernel::from_weights(raw, trivial(), 1, trivial(), 1, 3, 4, Interp::Nearest)
                .unwrap();
        for g in GroupElement::all(4).unwrap() {
            assert_eq!(check_steerability(&kernel, &g).unwrap(), 0.0);
            assert_eq!(lemma4_check(&kernel, &g).unwrap(), 0.0);
        }
    }

    #[test]
    fn identity_1x1_kernel_preserves_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = rand_vec(&mut rng, 5 * 7);
        let f = FeatureField::new(data.clone(), (1, 5, 7), FiberType::trivial(1), 1.0).unwrap();
        let out = cross_correlate(&[1.0], (1, 1, 1, 1), &f, 1).unwrap();
        assert_eq!(out.data(), data.as_slice());
    }

    #[test]
    fn correlation_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (c_in, h, w) = (2usize, 6usize, 5usize);
        let (c_out, k) = (3usize, 3usize);
        let input = rand_vec(&mut rng, c_in * h * w);
        let kernel = rand_vec(&mut rng, c_out * c_in * k * k);
        let out = correlate2d(
            &input,
            (c_in, h, w),
            &kernel,
            (c_out, c_in, k, k),
            (0, 0),
            (h, w),
            1,
        );
        let r = (k / 2) as i64;
        for co in 0..c_out {
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for ky in 0..k as i64 {
                            for kx in 0..k as i64 {
                                let iy = y + ky - r;
                                let ix = x + kx - r;
                                if iy >= 0 && iy < h as i64 && ix >= 0 && ix < w as i64 {
                                    acc += kernel
                                        [((co * c_in + ci) * k + ky as usize) * k + kx as usize]
                                        * input[(ci * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    let got = out[(co * h + y as usize) * w + x as usize];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn correlation_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (c_in, h, w) = (2usize, 5usize, 5usize);
        let (c_out, k) = (2usize, 3usize);
        let input = rand_vec(&mut rng, c_in * h * w);
        let kernel = rand_vec(&mut rng, c_out * c_in * k * k);
        let gout = rand_vec(&mut rng, c_out * h * w);
        let loss = |inp: &[f64], ker: &[f64]| -> f64 {
            let out = correlate2d(inp, (c_in, h, w), ker, (c_out, c_in, k, k), (0, 0), (h, w), 1);
            out.iter().zip(&gout).map(|(a, b)| a * b).sum()
        };
        let gin = correlate2d_grad_input(
            &gout,
            (c_out, h, w),
            &kernel,
            (c_out, c_in, k, k),
            (h, w),
            (0, 0),
        );
        let gk = correlate2d_grad_kernel(
            &gout,
            (c_out, h, w),
            &input,
            (c_in, h, w),
            (k, k),
            (0, 0),
        );
        let eps = 1e-6;
        for idx in [0usize, 7, 20, input.len() - 1] {
            let mut plus = input.clone();
            plus[idx] += eps;
            let mut minus = input.clone();
            minus[idx] -= eps;
            let fd = (loss(&plus, &kernel) - loss(&minus, &kernel)) / (2.0 * eps);
            assert!((fd - gin[idx]).abs() < 1e-6, "input grad {idx}: {fd} vs {}", gin[idx]);
        }
        for idx in [0usize, 5, kernel.len() - 1] {
            let mut plus = kernel.clone();
            plus[idx] += eps;
            let mut minus = kernel.clone();
            minus[idx] -= eps;
            let fd = (loss(&input, &plus) - loss(&input, &minus)) / (2.0 * eps);
            assert!((fd - gk[idx]).abs() < 1e-6, "kernel grad {idx}: {fd} vs {}", gk[idx]);
        }
    }

    #[test]
    fn correlation_is_linear_in_both_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shape = (2usize, 6usize, 6usize);
        let kshape = (1usize, 2usize, 3usize, 3usize);
        let f1 = rand_vec(&mut rng, 2 * 36);
        let f2 = rand_vec(&mut rng, 2 * 36);
        let k1 = rand_vec(&mut rng, 18);
        let k2 = rand_vec(&mut rng, 18);
        let run = |inp: &[f64], ker: &[f64]| {
            correlate2d(inp, shape, ker, kshape, (0, 0), (6, 6), 1)
        };
        let sum_f: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a + b).collect();
        let lhs = run(&sum_f, &k1);
        let rhs: Vec<f64> = run(&f1, &k1)
            .iter()
            .zip(run(&f2, &k1))
            .map(|(a, b)| a + b)
            .collect();
        assert!(lhs.iter().zip(&rhs).all(|(a, b)| (a - b).abs() <= 1e-12));
        let sum_k: Vec<f64> = k1.iter().zip(&k2).map(|(a, b)| a + b).collect();
        let lhs2 = run(&f1, &sum_k);
        let rhs2: Vec<f64> = run(&f1, &k1)
            .iter()
            .zip(run(&f1, &k2))
            .map(|(a, b)| a + b)
            .collect();
        assert!(lhs2.iter().zip(&rhs2).all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn strided_correlation_subsamples() {
        let f = FeatureField::new(
            (0..16).map(|i| i as f64).collect(),
            (1, 4, 4),
            FiberType::trivial(1),
            1.0,
        )
        .unwrap();
        let out = cross_correlate(&[1.0], (1, 1, 1, 1), &f, 2).unwrap();
        assert_eq!(out.shape(), (1, 2, 2));
        assert_eq!(out.data(), &[0.0, 2.0, 8.0, 10.0]);
    }
}
