//! Discretized feature fields `f: ℝ² → ℝᶜ` carrying a fiber representation,
//! the joint base-space/fiber transform `T_g^ρ`, the lifting operator, and
//! crop/pad plumbing.
//!
//! Pixel coordinates are `(u, v) = (row, col)`. Rotations act on pixel
//! offsets about the field origin by the standard 2×2 rotation matrix in
//! `(row, col)` coordinates; right-angle rotations are exact pixel
//! permutations regardless of the interpolation mode.

use crate::group::{GroupElement, GroupError, RepAction, Representation};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("data length {got} does not match shape {channels}x{height}x{width}")]
    DataLength { channels: usize, height: usize, width: usize, got: usize },
    #[error("channel count {channels} is not a multiple of the fiber dimension {dim}")]
    ChannelsNotMultiple { channels: usize, dim: usize },
    #[error("field contains a non-finite value")]
    NonFinite,
    #[error("expected a trivial fiber type for this operation")]
    NotTrivialFiber,
    #[error("lift order must be positive")]
    ZeroLiftOrder,
    #[error("crop size must be positive")]
    EmptyCrop,
    #[error("field shapes do not match: {0}x{1}x{2} vs {3}x{4}x{5}")]
    ShapeMismatch(usize, usize, usize, usize, usize, usize),
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// Interpolation mode for base-space resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Nearest,
    Bilinear,
}

/// Fiber type: a representation plus the number of independent copies of it
/// stacked along the channel axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberType {
    pub rep: Representation,
    pub copies: usize,
}

impl FiberType {
    pub fn new(rep: Representation, copies: usize) -> Self {
        FiberType { rep, copies }
    }

    pub fn trivial(copies: usize) -> Self {
        FiberType { rep: Representation::trivial(0), copies }
    }

    pub fn channels(&self) -> usize {
        self.rep.dim() * self.copies
    }
}

/// A dense `[channels × height × width]` field of finite values with an
/// attached fiber type, pixel pitch (meters per pixel) and rotation origin.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    data: Vec<f64>,
    channels: usize,
    height: usize,
    width: usize,
    fiber: FiberType,
    pixel_pitch: f64,
    origin: (f64, f64),
}

impl FeatureField {
    pub fn new(
        data: Vec<f64>,
        (channels, height, width): (usize, usize, usize),
        fiber: FiberType,
        pixel_pitch: f64,
    ) -> Result<Self, FieldError> {
        if data.len() != channels * height * width {
            return Err(FieldError::DataLength { channels, height, width, got: data.len() });
        }
        if channels != fiber.channels() {
            return Err(FieldError::ChannelsNotMultiple { channels, dim: fiber.rep.dim() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite);
        }
        let origin = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
        Ok(FeatureField { data, channels, height, width, fiber, pixel_pitch, origin })
    }

    pub fn zeros(shape: (usize, usize, usize), fiber: FiberType, pixel_pitch: f64) -> Self {
        FeatureField::new(vec![0.0; shape.0 * shape.1 * shape.2], shape, fiber, pixel_pitch)
            .expect("zero field is always valid")
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn fiber(&self) -> FiberType {
        self.fiber
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    /// Rotation center as a fractional `(row, col)` pixel coordinate.
    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn with_origin(mut self, origin: (f64, f64)) -> Self {
        self.origin = origin;
        self
    }

    /// Reinterpret the channel axis under a different fiber type (channel
    /// count must agree).
    pub fn with_fiber(mut self, fiber: FiberType) -> Result<Self, FieldError> {
        if fiber.channels() != self.channels {
            return Err(FieldError::ChannelsNotMultiple {
                channels: self.channels,
                dim: fiber.rep.dim(),
            });
        }
        self.fiber = fiber;
        Ok(self)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, ch: usize, r: usize, c: usize) -> f64 {
        self.data[(ch * self.height + r) * self.width + c]
    }

    pub fn set(&mut self, ch: usize, r: usize, c: usize, v: f64) {
        self.data[(ch * self.height + r) * self.width + c] = v;
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        let hw = self.height * self.width;
        &self.data[ch * hw..(ch + 1) * hw]
    }

    /// Sample one channel at a fractional `(row, col)` position; out of
    /// bounds reads return `pad`.
    fn sample(&self, ch: usize, r: f64, c: f64, interp: Interp, pad: f64) -> f64 {
        match interp {
            Interp::Nearest => {
                let ri = r.round();
                let ci = c.round();
                if ri < 0.0 || ci < 0.0 || ri >= self.height as f64 || ci >= self.width as f64 {
                    pad
                } else {
                    self.get(ch, ri as usize, ci as usize)
                }
            }
            Interp::Bilinear => {
                let r0 = r.floor();
                let c0 = c.floor();
                let fr = r - r0;
                let fc = c - c0;
                let mut acc = 0.0;
                for (dr, wr) in [(0.0, 1.0 - fr), (1.0, fr)] {
                    if wr == 0.0 {
                        continue;
                    }
                    for (dc, wc) in [(0.0, 1.0 - fc), (1.0, fc)] {
                        if wc == 0.0 {
                            continue;
                        }
                        let rr = r0 + dr;
                        let cc = c0 + dc;
                        let v = if rr < 0.0
                            || cc < 0.0
                            || rr >= self.height as f64
                            || cc >= self.width as f64
                        {
                            pad
                        } else {
                            self.get(ch, rr as usize, cc as usize)
                        };
                        acc += wr * wc * v;
                    }
                }
                acc
            }
        }
    }

    /// Base-space rotation only: resample every channel at
    /// `ρ₁(g)⁻¹ (x − origin) + origin`, leaving fibers untouched.
    pub fn rotate_base(&self, g: &GroupElement, interp: Interp) -> FeatureField {
        let (cos, sin) = g.cos_sin();
        let (or, oc) = self.origin;
        let mut out = self.clone();
        for r in 0..self.height {
            let dr = r as f64 - or;
            for c in 0..self.width {
                let dc = c as f64 - oc;
                // Inverse rotation of the destination offset.
                let sr = or + dc * sin + dr * cos;
                let sc = oc + dc * cos - dr * sin;
                for ch in 0..self.channels {
                    let v = self.sample(ch, sr, sc, interp, 0.0);
                    out.set(ch, r, c, v);
                }
            }
        }
        out
    }

    /// The feature-field transform `T_g^ρ`: base-space rotation composed
    /// with the fiber action of the field's representation.
    pub fn transform(&self, g: &GroupElement, interp: Interp) -> Result<FeatureField, FieldError> {
        let action = self.fiber.rep.action(g)?;
        let mut out = self.rotate_base(g, interp);
        out.apply_fiber(&action);
        Ok(out)
    }

    /// Apply a fiber action in place, per fiber copy.
    pub fn apply_fiber(&mut self, action: &RepAction) {
        let d = self.fiber.rep.dim();
        if d == 1 {
            return; // trivial and irrep(0) actions are the identity
        }
        let hw = self.height * self.width;
        let mut fiber_vec = vec![0.0; d];
        match action {
            RepAction::Permutation(perm) => {
                let mut scratch = vec![0.0; d * hw];
                for copy in 0..self.fiber.copies {
                    let base = copy * d * hw;
                    scratch.copy_from_slice(&self.data[base..base + d * hw]);
                    for (j, &src) in perm.iter().enumerate() {
                        self.data[base + j * hw..base + (j + 1) * hw]
                            .copy_from_slice(&scratch[src * hw..(src + 1) * hw]);
                    }
                }
            }
            RepAction::Dense(m) => {
                for copy in 0..self.fiber.copies {
                    let base = copy * d * hw;
                    for p in 0..hw {
                        for (k, item) in fiber_vec.iter_mut().enumerate() {
                            *item = self.data[base + k * hw + p];
                        }
                        let out = m.apply(&fiber_vec);
                        for (k, item) in out.iter().enumerate() {
                            self.data[base + k * hw + p] = *item;
                        }
                    }
                }
            }
        }
    }

    /// The lifting operator: stack `n` rotated copies of a trivial-fiber
    /// field. Output channel block `j·n + i` holds `T⁰_{2πi/n}` of input
    /// channel `j`; the output fiber is regular of order `n`.
    pub fn lift(&self, n: u32, interp: Interp) -> Result<FeatureField, FieldError> {
        if self.fiber.rep != Representation::trivial(0)
            && self.fiber.rep.kind() != crate::group::RepKind::Trivial
        {
            return Err(FieldError::NotTrivialFiber);
        }
        if n == 0 {
            return Err(FieldError::ZeroLiftOrder);
        }
        let hw = self.height * self.width;
        let n_us = n as usize;
        let mut data = vec![0.0; self.channels * n_us * hw];
        for (i, g) in GroupElement::all(n)?.iter().enumerate() {
            let rotated = self.rotate_base(g, interp);
            for j in 0..self.channels {
                let dst = (j * n_us + i) * hw;
                data[dst..dst + hw].copy_from_slice(rotated.channel(j));
            }
        }
        let fiber = FiberType::new(Representation::regular(n)?, self.channels);
        let mut out =
            FeatureField::new(data, (self.channels * n_us, self.height, self.width), fiber, self.pixel_pitch)?;
        out.origin = self.origin;
        Ok(out)
    }

    /// Cut an `(h × w)` patch centered at `spec.center`; out-of-bounds reads
    /// return the pad value. The patch's rotation origin is its own center.
    pub fn crop(&self, spec: &CropSpec) -> Result<FeatureField, FieldError> {
        let (h, w) = spec.size;
        if h == 0 || w == 0 {
            return Err(FieldError::EmptyCrop);
        }
        let top = spec.center.0 - (h as i64 - 1) / 2;
        let left = spec.center.1 - (w as i64 - 1) / 2;
        let mut out = FeatureField::new(
            vec![spec.pad_value; self.channels * h * w],
            (self.channels, h, w),
            self.fiber,
            self.pixel_pitch,
        )?;
        for ch in 0..self.channels {
            for r in 0..h {
                let sr = top + r as i64;
                if sr < 0 || sr >= self.height as i64 {
                    continue;
                }
                for c in 0..w {
                    let sc = left + c as i64;
                    if sc < 0 || sc >= self.width as i64 {
                        continue;
                    }
                    out.set(ch, r, c, self.get(ch, sr as usize, sc as usize));
                }
            }
        }
        Ok(out)
    }

    /// Symmetric border of `d` pixels per side filled with `value`; the
    /// origin shifts so it stays on the same scene point.
    pub fn pad(&self, d: usize, value: f64) -> FeatureField {
        let h = self.height + 2 * d;
        let w = self.width + 2 * d;
        let mut out = FeatureField::new(
            vec![value; self.channels * h * w],
            (self.channels, h, w),
            self.fiber,
            self.pixel_pitch,
        )
        .expect("padded field is valid");
        for ch in 0..self.channels {
            for r in 0..self.height {
                let src = ch * self.height * self.width + r * self.width;
                let dst = (ch * h + r + d) * w + d;
                out.data[dst..dst + self.width].copy_from_slice(&self.data[src..src + self.width]);
            }
        }
        out.origin = (self.origin.0 + d as f64, self.origin.1 + d as f64);
        out
    }

    /// Separable Gaussian blur with truncated support (radius `3σ`), zero
    /// padding at the borders. Used to band-limit fields before
    /// interpolated-rotation comparisons.
    pub fn gaussian_smoothed(&self, sigma: f64) -> FeatureField {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as i64;
        let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
        for i in -radius..=radius {
            kernel.push((-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp());
        }
        let sum: f64 = kernel.iter().sum();
        for k in kernel.iter_mut() {
            *k /= sum;
        }
        let mut tmp = self.clone();
        // rows
        for ch in 0..self.channels {
            for r in 0..self.height {
                for c in 0..self.width {
                    let mut acc = 0.0;
                    for (ki, kv) in kernel.iter().enumerate() {
                        let cc = c as i64 + ki as i64 - radius;
                        if cc >= 0 && cc < self.width as i64 {
                            acc += kv * self.get(ch, r, cc as usize);
                        }
                    }
                    tmp.set(ch, r, c, acc);
                }
            }
        }
        let mut out = tmp.clone();
        // cols
        for ch in 0..self.channels {
            for c in 0..self.width {
                for r in 0..self.height {
                    let mut acc = 0.0;
                    for (ki, kv) in kernel.iter().enumerate() {
                        let rr = r as i64 + ki as i64 - radius;
                        if rr >= 0 && rr < self.height as i64 {
                            acc += kv * tmp.get(ch, rr as usize, c);
                        }
                    }
                    out.set(ch, r, c, acc);
                }
            }
        }
        out
    }

    /// Multiply by a radial window about the origin: 1 inside `inner`,
    /// cosine falloff to 0 at `outer` (radii in pixels). Windowed fields
    /// survive arbitrary-angle rotation without corner clipping, which
    /// keeps interpolated-rotation comparisons meaningful.
    pub fn radial_windowed(&self, inner: f64, outer: f64) -> FeatureField {
        let (or, oc) = self.origin;
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                let d = ((r as f64 - or).powi(2) + (c as f64 - oc).powi(2)).sqrt();
                let w = if d <= inner {
                    1.0
                } else if d >= outer {
                    0.0
                } else {
                    0.5 * (1.0 + (std::f64::consts::PI * (d - inner) / (outer - inner)).cos())
                };
                for ch in 0..self.channels {
                    let v = out.get(ch, r, c);
                    out.set(ch, r, c, v * w);
                }
            }
        }
        out
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &FeatureField) -> Result<f64, FieldError> {
        if self.shape() != other.shape() {
            let (a, b, c) = self.shape();
            let (d, e, f) = other.shape();
            return Err(FieldError::ShapeMismatch(a, b, c, d, e, f));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    }

    /// `‖a − b‖₂ / ‖b‖₂`.
    pub fn relative_l2(&self, other: &FeatureField) -> Result<f64, FieldError> {
        if self.shape() != other.shape() {
            let (a, b, c) = self.shape();
            let (d, e, f) = other.shape();
            return Err(FieldError::ShapeMismatch(a, b, c, d, e, f));
        }
        let num: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let den: f64 = other.data.iter().map(|y| y * y).sum();
        if den == 0.0 {
            return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
        }
        Ok((num / den).sqrt())
    }
}

/// Where and how to cut a patch out of a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropSpec {
    /// Patch center as integer `(row, col)` pixel coordinates.
    pub center: (i64, i64),
    /// `(height, width)` in pixels.
    pub size: (usize, usize),
    pub pad_value: f64,
}
