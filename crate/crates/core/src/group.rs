//! Exact arithmetic for the cyclic rotation groups `C_n` and their matrix
//! representations.
//!
//! Every rotation matrix the rest of the crate multiplies by comes from
//! here. Angles of cyclic elements are tracked as exact `(index, order)`
//! rationals and converted to floats only when a matrix is evaluated, so
//! composed rotations never drift.

use thiserror::Error;

/// Two-pi, spelled once.
pub const TAU: f64 = std::f64::consts::TAU;

#[derive(Debug, Error, PartialEq)]
pub enum GroupError {
    #[error("group orders do not match: {0} vs {1}")]
    OrderMismatch(u32, u32),
    #[error("index {index} out of range for C_{order}")]
    IndexOutOfRange { order: u32, index: i64 },
    #[error("group order must be positive (0 denotes SO(2) elements, not a cyclic group)")]
    ZeroOrder,
    #[error("quotient C_{order}/C_{k} requires k to divide the group order")]
    QuotientIndivisible { order: u32, k: u32 },
    #[error("representation of order {rep_order} cannot act on an element of order {elem_order}")]
    RepIncompatible { rep_order: u32, elem_order: u32 },
    #[error("regular and quotient representations are undefined for continuous SO(2) elements")]
    ContinuousPermutation,
    #[error("angle is not commensurate with the {bins}-bin grid; nearest representable angle is {nearest}")]
    NonCommensurate { bins: usize, nearest: f64 },
    #[error("orientation distribution must contain at least one bin")]
    EmptyDistribution,
    #[error("orientation distribution contains a non-finite value")]
    NonFiniteDistribution,
    #[error("distribution values must be nonnegative with positive sum to normalize")]
    NotNormalizable,
}

/// A planar rotation: an element of `C_n` stored as an exact index, or a
/// continuous `SO(2)` element stored as an angle in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroupElement {
    /// Rotation by `2π·index/order`, with `index` in `[0, order)`.
    Cyclic { order: u32, index: u32 },
    /// Continuous rotation by `angle` radians in `[0, 2π)`.
    Continuous { angle: f64 },
}

impl GroupElement {
    /// Element of `C_order` with the given index (reduced mod order).
    pub fn cyclic(order: u32, index: i64) -> Result<Self, GroupError> {
        if order == 0 {
            return Err(GroupError::ZeroOrder);
        }
        let n = i64::from(order);
        let index = index.rem_euclid(n) as u32;
        Ok(GroupElement::Cyclic { order, index })
    }

    /// Continuous `SO(2)` rotation, angle reduced to `[0, 2π)`.
    pub fn continuous(angle: f64) -> Self {
        let mut a = angle.rem_euclid(TAU);
        if a >= TAU {
            a = 0.0;
        }
        GroupElement::Continuous { angle: a }
    }

    /// Identity element. Order 0 yields the continuous identity.
    pub fn identity(order: u32) -> Self {
        if order == 0 {
            GroupElement::Continuous { angle: 0.0 }
        } else {
            GroupElement::Cyclic { order, index: 0 }
        }
    }

    /// Group order; 0 denotes a continuous `SO(2)` element.
    pub fn order(&self) -> u32 {
        match self {
            GroupElement::Cyclic { order, .. } => *order,
            GroupElement::Continuous { .. } => 0,
        }
    }

    /// Index within `C_n`, if this is a cyclic element.
    pub fn index(&self) -> Option<u32> {
        match self {
            GroupElement::Cyclic { index, .. } => Some(*index),
            GroupElement::Continuous { .. } => None,
        }
    }

    /// Rotation angle in radians, evaluated from the exact rational for
    /// cyclic elements.
    pub fn angle(&self) -> f64 {
        match self {
            GroupElement::Cyclic { order, index } => {
                TAU * f64::from(*index) / f64::from(*order)
            }
            GroupElement::Continuous { angle } => *angle,
        }
    }

    pub fn is_identity(&self) -> bool {
        match self {
            GroupElement::Cyclic { index, .. } => *index == 0,
            GroupElement::Continuous { angle } => *angle == 0.0,
        }
    }

    /// Group law: rotation by the sum of angles. Index arithmetic is exact
    /// mod n for cyclic elements.
    pub fn compose(&self, other: &GroupElement) -> Result<GroupElement, GroupError> {
        match (self, other) {
            (
                GroupElement::Cyclic { order: n1, index: i1 },
                GroupElement::Cyclic { order: n2, index: i2 },
            ) => {
                if n1 != n2 {
                    return Err(GroupError::OrderMismatch(*n1, *n2));
                }
                Ok(GroupElement::Cyclic { order: *n1, index: (i1 + i2) % n1 })
            }
            (GroupElement::Continuous { angle: a1 }, GroupElement::Continuous { angle: a2 }) => {
                Ok(GroupElement::continuous(a1 + a2))
            }
            (a, b) => Err(GroupError::OrderMismatch(a.order(), b.order())),
        }
    }

    pub fn inverse(&self) -> GroupElement {
        match self {
            GroupElement::Cyclic { order, index } => GroupElement::Cyclic {
                order: *order,
                index: if *index == 0 { 0 } else { order - index },
            },
            GroupElement::Continuous { angle } => GroupElement::continuous(-angle),
        }
    }

    /// `(cos θ, sin θ)`, exact for multiples of `π/2`.
    pub fn cos_sin(&self) -> (f64, f64) {
        if let GroupElement::Cyclic { order, index } = self {
            // Right angles get exact ±1/0 so base-space resampling at these
            // angles is an exact pixel permutation.
            let four_i = 4u64 * u64::from(*index);
            if four_i % u64::from(*order) == 0 {
                return match four_i / u64::from(*order) {
                    0 => (1.0, 0.0),
                    1 => (0.0, 1.0),
                    2 => (-1.0, 0.0),
                    3 => (0.0, -1.0),
                    _ => unreachable!(),
                };
            }
        }
        let a = self.angle();
        (a.cos(), a.sin())
    }

    /// True when the rotation angle is an exact multiple of `π/2`.
    pub fn is_right_angle(&self) -> bool {
        match self {
            GroupElement::Cyclic { order, index } => {
                (4u64 * u64::from(*index)) % u64::from(*order) == 0
            }
            GroupElement::Continuous { angle } => {
                (angle / (TAU / 4.0)).fract() == 0.0
            }
        }
    }

    /// All elements of `C_n` in index order.
    pub fn all(order: u32) -> Result<Vec<GroupElement>, GroupError> {
        if order == 0 {
            return Err(GroupError::ZeroOrder);
        }
        Ok((0..order).map(|i| GroupElement::Cyclic { order, index: i }).collect())
    }
}

/// Small dense square matrix used for representation values.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    dim: usize,
    a: Vec<f64>,
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        Mat { dim, a: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Mat::zeros(dim);
        for i in 0..dim {
            m.a[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_rows(dim: usize, a: Vec<f64>) -> Self {
        assert_eq!(a.len(), dim * dim);
        Mat { dim, a }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.dim + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.a[r * self.dim + c] = v;
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.dim, other.dim);
        let d = self.dim;
        let mut out = Mat::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let v = self.a[i * d + k];
                if v == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.a[i * d + j] += v * other.a[k * d + j];
                }
            }
        }
        out
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim);
        let d = self.dim;
        let mut out = vec![0.0; d];
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += self.a[i * d + j] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.a
            .iter()
            .zip(&other.a)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// Exactly one 1 per row and per column, all other entries exactly 0.
    pub fn is_permutation(&self) -> bool {
        let d = self.dim;
        let mut col_count = vec![0usize; d];
        for r in 0..d {
            let mut row_count = 0;
            for c in 0..d {
                let v = self.a[r * d + c];
                if v == 1.0 {
                    row_count += 1;
                    col_count[c] += 1;
                } else if v != 0.0 {
                    return false;
                }
            }
            if row_count != 1 {
                return false;
            }
        }
        col_count.iter().all(|&c| c == 1)
    }
}

/// The five representation families of `C_n` (and the `SO(2)`-compatible
/// subset when `group_order == 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepKind {
    Trivial,
    Standard,
    Regular,
    /// Quotient by the subgroup `C_k`; acts on `n/k` channels.
    Quotient(u32),
    /// Frequency-`m` irreducible representation.
    Irrep(u32),
}

/// A tagged representation: maps group elements to invertible matrices
/// acting on fiber space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Representation {
    kind: RepKind,
    group_order: u32,
}

/// How a representation matrix acts on a channel vector. Permutations are
/// applied as index moves (exact); everything else as a dense multiply.
#[derive(Debug, Clone)]
pub enum RepAction {
    /// `out[j] = in[perm[j]]`.
    Permutation(Vec<usize>),
    Dense(Mat),
}

impl Representation {
    pub fn trivial(group_order: u32) -> Self {
        Representation { kind: RepKind::Trivial, group_order }
    }

    pub fn standard(group_order: u32) -> Self {
        Representation { kind: RepKind::Standard, group_order }
    }

    pub fn regular(group_order: u32) -> Result<Self, GroupError> {
        if group_order == 0 {
            return Err(GroupError::ContinuousPermutation);
        }
        Ok(Representation { kind: RepKind::Regular, group_order })
    }

    pub fn quotient(group_order: u32, k: u32) -> Result<Self, GroupError> {
        if group_order == 0 {
            return Err(GroupError::ContinuousPermutation);
        }
        if k == 0 || group_order % k != 0 {
            return Err(GroupError::QuotientIndivisible { order: group_order, k });
        }
        Ok(Representation { kind: RepKind::Quotient(k), group_order })
    }

    pub fn irrep(group_order: u32, frequency: u32) -> Self {
        Representation { kind: RepKind::Irrep(frequency), group_order }
    }

    pub fn kind(&self) -> RepKind {
        self.kind
    }

    pub fn group_order(&self) -> u32 {
        self.group_order
    }

    /// Fiber dimension.
    pub fn dim(&self) -> usize {
        match self.kind {
            RepKind::Trivial => 1,
            RepKind::Standard => 2,
            RepKind::Regular => self.group_order as usize,
            RepKind::Quotient(k) => (self.group_order / k) as usize,
            RepKind::Irrep(0) => 1,
            RepKind::Irrep(_) => 2,
        }
    }

    fn check_element(&self, g: &GroupElement) -> Result<(), GroupError> {
        let eo = g.order();
        if self.group_order == eo {
            return Ok(());
        }
        // SO(2)-defined reps act on any rotation.
        if self.group_order == 0
            && matches!(self.kind, RepKind::Trivial | RepKind::Standard | RepKind::Irrep(_))
        {
            return Ok(());
        }
        Err(GroupError::RepIncompatible { rep_order: self.group_order, elem_order: eo })
    }

    /// Cyclic shift amount for permutation-type representations.
    fn shift(&self, g: &GroupElement) -> Result<(usize, usize), GroupError> {
        let i = match g.index() {
            Some(i) => i as usize,
            None => return Err(GroupError::ContinuousPermutation),
        };
        let m = self.dim();
        Ok((i % m, m))
    }

    /// The action of `rep(g)` on channel vectors, using exact permutations
    /// where the representation is a permutation family.
    pub fn action(&self, g: &GroupElement) -> Result<RepAction, GroupError> {
        self.check_element(g)?;
        match self.kind {
            RepKind::Trivial => Ok(RepAction::Permutation(vec![0])),
            RepKind::Regular | RepKind::Quotient(_) => {
                // out[j] = in[(j - i) mod m]: the paper's worked example
                // (x_0,…,x_{n−1}) → (x_{n−1},x_0,…) for one step. The
                // quotient family inherits the same direction.
                let (i, m) = self.shift(g)?;
                Ok(RepAction::Permutation(
                    (0..m).map(|j| (j + m - i) % m).collect(),
                ))
            }
            RepKind::Standard => Ok(RepAction::Dense(rotation_mat(g, 1))),
            RepKind::Irrep(0) => Ok(RepAction::Permutation(vec![0])),
            RepKind::Irrep(m) => Ok(RepAction::Dense(rotation_mat(g, m))),
        }
    }

    /// The representation matrix `rep(g)`.
    pub fn matrix(&self, g: &GroupElement) -> Result<Mat, GroupError> {
        Ok(match self.action(g)? {
            RepAction::Permutation(perm) => {
                let d = perm.len();
                let mut m = Mat::zeros(d);
                for (j, &src) in perm.iter().enumerate() {
                    m.set(j, src, 1.0);
                }
                m
            }
            RepAction::Dense(m) => m,
        })
    }
}

/// 2×2 rotation by `frequency · angle(g)`, exact at right angles for
/// frequency 1.
fn rotation_mat(g: &GroupElement, frequency: u32) -> Mat {
    let (c, s) = if frequency == 1 {
        g.cos_sin()
    } else {
        let a = f64::from(frequency) * g.angle();
        (a.cos(), a.sin())
    };
    Mat::from_rows(2, vec![c, -s, s, c])
}

impl RepAction {
    /// Apply to a channel vector.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            RepAction::Permutation(p) => p.iter().map(|&src| v[src]).collect(),
            RepAction::Dense(m) => m.apply(v),
        }
    }
}

/// A discretized distribution over orientations: `values.len()` bins
/// covering `[0, period)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationDistribution {
    values: Vec<f64>,
    period: f64,
}

impl OrientationDistribution {
    pub fn new(values: Vec<f64>, period: f64) -> Result<Self, GroupError> {
        if values.is_empty() {
            return Err(GroupError::EmptyDistribution);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GroupError::NonFiniteDistribution);
        }
        Ok(OrientationDistribution { values, period })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn bins(&self) -> usize {
        self.values.len()
    }

    /// Angle of bin `j`'s left edge.
    pub fn bin_angle(&self, j: usize) -> f64 {
        self.period * j as f64 / self.bins() as f64
    }

    /// Interpret as probabilities: nonnegative entries scaled to sum 1.
    pub fn normalized(&self) -> Result<OrientationDistribution, GroupError> {
        if self.values.iter().any(|&v| v < 0.0) {
            return Err(GroupError::NotNormalizable);
        }
        let sum: f64 = self.values.iter().sum();
        if sum <= 0.0 {
            return Err(GroupError::NotNormalizable);
        }
        Ok(OrientationDistribution {
            values: self.values.iter().map(|v| v / sum).collect(),
            period: self.period,
        })
    }
}

/// Circularly shift the bins of `d` by the rotation `g`: the shift operator
/// `s(g)`, taken mod the distribution's period (so a π-periodic gripper
/// distribution is invariant under rotation by π).
pub fn shift_orientation(
    d: &OrientationDistribution,
    g: &GroupElement,
) -> Result<OrientationDistribution, GroupError> {
    let m = d.bins();
    let angle = g.angle().rem_euclid(d.period);
    let s_real = angle * m as f64 / d.period;
    let s = s_real.round();
    if (s_real - s).abs() > 1e-9 {
        return Err(GroupError::NonCommensurate {
            bins: m,
            nearest: s.rem_euclid(m as f64) * d.period / m as f64,
        });
    }
    let s = (s as i64).rem_euclid(m as i64) as usize;
    // out[j] = in[(j - s) mod m]: a one-hot at bin 0 moves to bin s.
    let values = (0..m).map(|j| d.values[(j + m - s) % m]).collect();
    Ok(OrientationDistribution { values, period: d.period })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(order: u32, index: i64) -> GroupElement {
        GroupElement::cyclic(order, index).unwrap()
    }

    #[test]
    fn compose_full_turn_is_identity() {
        let g = c(4, 1).compose(&c(4, 3)).unwrap();
        assert!(g.is_identity());
    }

    #[test]
    fn compose_adds_indices() {
        assert_eq!(c(6, 2).compose(&c(6, 2)).unwrap(), c(6, 4));
    }

    #[test]
    fn inverse_law() {
        let g = c(8, 5);
        assert!(g.compose(&g.inverse()).unwrap().is_identity());
    }

    #[test]
    fn compose_rejects_mismatched_orders() {
        assert_eq!(
            c(4, 1).compose(&c(6, 1)),
            Err(GroupError::OrderMismatch(4, 6))
        );
        assert!(c(4, 1).compose(&GroupElement::continuous(0.3)).is_err());
    }

    #[test]
    fn cyclic_angle_is_exact_rational() {
        let g = c(36, 9);
        assert_eq!(g.angle(), TAU * 9.0 / 36.0);
        assert!(g.is_right_angle());
        assert_eq!(g.cos_sin(), (0.0, 1.0));
        assert!(!c(36, 5).is_right_angle());
    }

    #[test]
    fn regular_permutes_cyclically() {
        // ρ_reg(Rot_{2π/4}) (x0,x1,x2,x3) = (x3,x0,x1,x2)
        let rep = Representation::regular(4).unwrap();
        let out = rep.action(&c(4, 1)).unwrap().apply(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(out, vec![3.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn standard_matrix_quarter_turn() {
        let rep = Representation::standard(4);
        let m = rep.matrix(&c(4, 1)).unwrap();
        assert_eq!(m, Mat::from_rows(2, vec![0.0, -1.0, 1.0, 0.0]));
    }

    #[test]
    fn quotient_half_turn_is_identity_on_two_channels() {
        // C_4/C_2 acts on R^2; Rot_π has index 2, shift 2 mod 2 = 0.
        let rep = Representation::quotient(4, 2).unwrap();
        let m = rep.matrix(&c(4, 2)).unwrap();
        assert_eq!(m, Mat::identity(2));
    }

    #[test]
    fn quotient_requires_divisor() {
        assert!(Representation::quotient(4, 3).is_err());
        assert!(Representation::quotient(36, 2).is_ok());
    }

    #[test]
    fn quotient_reduces_to_regular_at_k1() {
        let reg = Representation::regular(6).unwrap();
        let quot = Representation::quotient(6, 1).unwrap();
        for g in GroupElement::all(6).unwrap() {
            assert_eq!(reg.matrix(&g).unwrap(), quot.matrix(&g).unwrap());
        }
    }

    #[test]
    fn rep_identity_is_identity_matrix() {
        let reps = [
            Representation::trivial(6),
            Representation::standard(6),
            Representation::regular(6).unwrap(),
            Representation::quotient(6, 2).unwrap(),
            Representation::irrep(6, 2),
        ];
        for rep in reps {
            let m = rep.matrix(&GroupElement::identity(6)).unwrap();
            assert_eq!(m, Mat::identity(rep.dim()));
        }
    }

    #[test]
    fn regular_rejects_continuous() {
        let rep = Representation::regular(4).unwrap();
        assert!(rep.matrix(&GroupElement::continuous(0.5)).is_err());
        assert!(Representation::regular(0).is_err());
    }

    #[test]
    fn irrep_matches_standard_at_scaled_angle() {
        for m_freq in 1..=4u32 {
            for g in GroupElement::all(12).unwrap() {
                let irrep = Representation::irrep(12, m_freq);
                let scaled = GroupElement::continuous(f64::from(m_freq) * g.angle());
                let std_m = Representation::standard(0).matrix(&scaled).unwrap();
                let diff = irrep.matrix(&g).unwrap().max_abs_diff(&std_m);
                assert!(diff <= 1e-12, "freq {m_freq}, diff {diff}");
            }
        }
    }

    #[test]
    fn permutation_structure_exact() {
        for n in [2u32, 4, 6, 8, 12, 36] {
            let reg = Representation::regular(n).unwrap();
            let quot = Representation::quotient(n, 2).ok();
            for g in GroupElement::all(n).unwrap() {
                assert!(reg.matrix(&g).unwrap().is_permutation());
                if let Some(q) = &quot {
                    assert!(q.matrix(&g).unwrap().is_permutation());
                }
            }
        }
    }

    #[test]
    fn shift_two_bins() {
        let d = OrientationDistribution::new(
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            TAU,
        )
        .unwrap();
        let shifted = shift_orientation(&d, &c(4, 1)).unwrap();
        assert_eq!(shifted.values(), &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pi_rotation_invariant_for_pi_periodic_gripper() {
        let vals: Vec<f64> = (0..18).map(|i| i as f64).collect();
        let d = OrientationDistribution::new(vals.clone(), TAU / 2.0).unwrap();
        let g = c(2, 1); // rotation by π
        let shifted = shift_orientation(&d, &g).unwrap();
        assert_eq!(shifted.values(), vals.as_slice());
    }

    #[test]
    fn identity_shift_is_noop() {
        let d = OrientationDistribution::new(vec![0.1, 0.2, 0.3, 0.4], TAU).unwrap();
        let shifted = shift_orientation(&d, &GroupElement::identity(4)).unwrap();
        assert_eq!(shifted, d);
    }

    #[test]
    fn non_commensurate_shift_reports_nearest() {
        let d = OrientationDistribution::new(vec![1.0, 0.0, 0.0, 0.0], TAU).unwrap();
        let err = shift_orientation(&d, &GroupElement::continuous(0.5)).unwrap_err();
        match err {
            GroupError::NonCommensurate { bins, nearest } => {
                assert_eq!(bins, 4);
                // 0.5 rad is closest to zero bins of width π/2.
                assert!((nearest - 0.0).abs() < 1e-12);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn shift_roundtrip_exact() {
        let d = OrientationDistribution::new(
            (0..12).map(|i| (i as f64).sin()).collect(),
            TAU,
        )
        .unwrap();
        for g in GroupElement::all(12).unwrap() {
            let back =
                shift_orientation(&shift_orientation(&d, &g).unwrap(), &g.inverse()).unwrap();
            assert_eq!(back, d);
        }
    }

    #[test]
    fn normalize_distribution() {
        let d = OrientationDistribution::new(vec![1.0, 3.0], TAU).unwrap();
        let n = d.normalized().unwrap();
        assert_eq!(n.values(), &[0.25, 0.75]);
        let neg = OrientationDistribution::new(vec![-1.0, 3.0], TAU).unwrap();
        assert!(neg.normalized().is_err());
    }
}
