//! Graded nilpotent groups in exponential coordinates.
//!
//! The Heisenberg group `H_n` is `C^n x R` with coordinates
//! `(x_1, .., x_{2n}, t)` where `z_j = x_{2j-1} + i x_{2j}` and
//!
//! ```text
//! (z, t)(w, s) = (z + w, t + s + Im sum_j z_j conj(w_j))
//! ```
//!
//! Euclidean groups `R^k` are the step-1 case. Custom step-2 groups can be
//! described through rational bracket constants; the product then follows the
//! Baker-Campbell-Hausdorff formula truncated at step 2.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

pub type Coords = SmallVec<[f64; 6]>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupError {
    #[error("descriptor mismatch: {0} vs {1}")]
    DescriptorMismatch(GroupTag, GroupTag),
    #[error("expected {expected} coordinates, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("group law for step {0} groups is not implemented")]
    NotImplemented(usize),
    #[error("dilation factor must be positive, got {0}")]
    NonPositiveDilation(f64),
    #[error("iteration budget must be at least 1")]
    ZeroBudget,
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
}

/// Exact rational bracket coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rational {
    pub num: i64,
    pub den: i64,
}

impl Rational {
    pub fn new(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        let g = gcd(num.unsigned_abs(), den.unsigned_abs()).max(1) as i64;
        let sign = if den < 0 { -1 } else { 1 };
        Rational {
            num: sign * num / g,
            den: sign * den / g,
        }
    }

    pub fn integer(v: i64) -> Self {
        Rational { num: v, den: 1 }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// `[X_i, X_j] = coeff * X_k`, stored for `i < j` only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bracket {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub coeff: Rational,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GroupKind {
    Heisenberg { n: usize },
    Euclidean { k: usize },
    /// Any other graded group; identified by a hash of its grading and brackets.
    Graded { id: u64 },
}

/// Cheap identity tag carried by every point.
pub type GroupTag = GroupKind;

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKind::Heisenberg { n } => write!(f, "H_{n}"),
            GroupKind::Euclidean { k } => write!(f, "R^{k}"),
            GroupKind::Graded { id } => write!(f, "graded#{id:016x}"),
        }
    }
}

/// Grading, structure constants and mesh ratio of a graded group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDescriptor {
    pub kind: GroupKind,
    pub step: usize,
    pub grading_dims: Vec<usize>,
    pub structure_constants: Vec<Bracket>,
    pub scaling_base: u32,
}

impl GroupDescriptor {
    pub fn heisenberg(n: usize) -> Self {
        assert!(n >= 1, "H_n needs n >= 1");
        let t = 2 * n;
        let structure_constants = (0..n)
            .map(|j| Bracket {
                i: 2 * j,
                j: 2 * j + 1,
                k: t,
                coeff: Rational::integer(-2),
            })
            .collect();
        GroupDescriptor {
            kind: GroupKind::Heisenberg { n },
            step: 2,
            grading_dims: vec![2 * n, 1],
            structure_constants,
            scaling_base: 10,
        }
    }

    pub fn euclidean(k: usize) -> Self {
        assert!(k >= 1, "R^k needs k >= 1");
        GroupDescriptor {
            kind: GroupKind::Euclidean { k },
            step: 1,
            grading_dims: vec![k],
            structure_constants: Vec::new(),
            scaling_base: 10,
        }
    }

    /// A custom graded group. Brackets must map into the layer above the
    /// larger of the two input layers.
    pub fn graded(grading_dims: Vec<usize>, brackets: Vec<Bracket>) -> Result<Self, GroupError> {
        if grading_dims.is_empty() || grading_dims.contains(&0) {
            return Err(GroupError::InvalidDescriptor(
                "grading dimensions must be positive".into(),
            ));
        }
        let desc = GroupDescriptor {
            kind: GroupKind::Graded { id: 0 },
            step: grading_dims.len(),
            grading_dims,
            structure_constants: brackets,
            scaling_base: 10,
        };
        desc.validate()?;
        let id = desc.fingerprint();
        Ok(GroupDescriptor {
            kind: GroupKind::Graded { id },
            ..desc
        })
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over the grading and bracket table.
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |v: i64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for &d in &self.grading_dims {
            eat(d as i64);
        }
        for b in &self.structure_constants {
            eat(b.i as i64);
            eat(b.j as i64);
            eat(b.k as i64);
            eat(b.coeff.num);
            eat(b.coeff.den);
        }
        h
    }

    pub fn validate(&self) -> Result<(), GroupError> {
        let dim = self.dimension();
        if self.step != self.grading_dims.len() {
            return Err(GroupError::InvalidDescriptor(
                "step must equal the number of layers".into(),
            ));
        }
        if self.scaling_base < 2 {
            return Err(GroupError::InvalidDescriptor("scaling base must be >= 2".into()));
        }
        for b in &self.structure_constants {
            if b.i >= b.j {
                return Err(GroupError::InvalidDescriptor(format!(
                    "bracket [{}, {}] must be stored with i < j",
                    b.i, b.j
                )));
            }
            if b.j >= dim || b.k >= dim {
                return Err(GroupError::InvalidDescriptor("bracket index out of range".into()));
            }
            let (li, lj, lk) = (self.layer_of(b.i), self.layer_of(b.j), self.layer_of(b.k));
            if lk != li.max(lj) + 1 && !(li + lj == lk) {
                return Err(GroupError::InvalidDescriptor(format!(
                    "bracket [{}, {}] lands in layer {} which breaks the grading",
                    b.i, b.j, lk
                )));
            }
        }
        if let GroupKind::Heisenberg { n } = self.kind {
            if self.step != 2 || self.grading_dims != vec![2 * n, 1] {
                return Err(GroupError::InvalidDescriptor(
                    "Heisenberg descriptors have grading (2n, 1)".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.grading_dims.iter().sum()
    }

    /// `Q = sum_j j * n_j`.
    pub fn homogeneous_dimension(&self) -> usize {
        self.grading_dims
            .iter()
            .enumerate()
            .map(|(j, n)| (j + 1) * n)
            .sum()
    }

    pub fn horizontal_dim(&self) -> usize {
        self.grading_dims[0]
    }

    /// 1-based layer index of a coordinate.
    pub fn layer_of(&self, coord: usize) -> usize {
        let mut acc = 0;
        for (j, n) in self.grading_dims.iter().enumerate() {
            acc += n;
            if coord < acc {
                return j + 1;
            }
        }
        panic!("coordinate {coord} out of range")
    }

    /// Layer weight of every coordinate, in coordinate order.
    pub fn weights(&self) -> Vec<u32> {
        self.grading_dims
            .iter()
            .enumerate()
            .flat_map(|(j, &n)| std::iter::repeat((j + 1) as u32).take(n))
            .collect()
    }
}

/// Graded coordinates of a group element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPoint {
    pub tag: GroupTag,
    pub coords: Coords,
}

impl GroupPoint {
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// A group ready for computation: descriptor plus cached layer data.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    desc: GroupDescriptor,
    weights: Vec<u32>,
    half_brackets: Vec<(usize, usize, usize, f64)>,
}

impl Serialize for Group {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.desc.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Group {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = GroupRepr::deserialize(d)?;
        repr.build().map_err(serde::de::Error::custom)
    }
}

/// Compact JSON form `{kind, n}` / `{kind, k}` or a full custom descriptor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum GroupRepr {
    Named(GroupKindRepr),
    Full(GroupDescriptor),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum GroupKindRepr {
    Heisenberg { n: usize },
    Euclidean { k: usize },
}

impl GroupRepr {
    fn build(self) -> Result<Group, GroupError> {
        match self {
            GroupRepr::Named(GroupKindRepr::Heisenberg { n }) if n >= 1 => Ok(Group::heisenberg(n)),
            GroupRepr::Named(GroupKindRepr::Euclidean { k }) if k >= 1 => Ok(Group::euclidean(k)),
            GroupRepr::Named(_) => Err(GroupError::InvalidDescriptor("dimension must be >= 1".into())),
            GroupRepr::Full(desc) => Group::new(desc),
        }
    }
}

impl Group {
    pub fn new(desc: GroupDescriptor) -> Result<Self, GroupError> {
        desc.validate()?;
        let weights = desc.weights();
        let half_brackets = desc
            .structure_constants
            .iter()
            .map(|b| (b.i, b.j, b.k, 0.5 * b.coeff.to_f64()))
            .collect();
        Ok(Group {
            desc,
            weights,
            half_brackets,
        })
    }

    pub fn heisenberg(n: usize) -> Self {
        Group::new(GroupDescriptor::heisenberg(n)).expect("valid Heisenberg descriptor")
    }

    pub fn euclidean(k: usize) -> Self {
        Group::new(GroupDescriptor::euclidean(k)).expect("valid Euclidean descriptor")
    }

    /// Parse the compact JSON descriptor form.
    pub fn from_json(s: &str) -> Result<Self, GroupError> {
        let repr: GroupRepr =
            serde_json::from_str(s).map_err(|e| GroupError::InvalidDescriptor(e.to_string()))?;
        repr.build()
    }

    pub fn to_json(&self) -> String {
        match self.desc.kind {
            GroupKind::Heisenberg { n } => format!(r#"{{"kind":"heisenberg","n":{n}}}"#),
            GroupKind::Euclidean { k } => format!(r#"{{"kind":"euclidean","k":{k}}}"#),
            GroupKind::Graded { .. } => serde_json::to_string(&self.desc).expect("serializable"),
        }
    }

    pub fn descriptor(&self) -> &GroupDescriptor {
        &self.desc
    }

    pub fn kind(&self) -> GroupKind {
        self.desc.kind
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn horizontal_dim(&self) -> usize {
        self.desc.horizontal_dim()
    }

    pub fn homogeneous_dimension(&self) -> usize {
        self.desc.homogeneous_dimension()
    }

    pub fn weights(&self) -> &[u32] {
        &self.weights
    }

    pub fn is_abelian(&self) -> bool {
        self.half_brackets.is_empty()
    }

    pub fn scaling_base(&self) -> u32 {
        self.desc.scaling_base
    }

    pub fn point(&self, coords: &[f64]) -> Result<GroupPoint, GroupError> {
        if coords.len() != self.dim() {
            return Err(GroupError::DimensionMismatch {
                expected: self.dim(),
                found: coords.len(),
            });
        }
        Ok(self.point_unchecked(coords))
    }

    pub(crate) fn point_unchecked(&self, coords: &[f64]) -> GroupPoint {
        GroupPoint {
            tag: self.desc.kind,
            coords: Coords::from_slice(coords),
        }
    }

    pub fn identity(&self) -> GroupPoint {
        GroupPoint {
            tag: self.desc.kind,
            coords: smallvec::smallvec![0.0; self.dim()],
        }
    }

    fn check(&self, p: &GroupPoint) -> Result<(), GroupError> {
        if p.tag != self.desc.kind {
            return Err(GroupError::DescriptorMismatch(self.desc.kind, p.tag));
        }
        if p.coords.len() != self.dim() {
            return Err(GroupError::DimensionMismatch {
                expected: self.dim(),
                found: p.coords.len(),
            });
        }
        Ok(())
    }

    fn check_law(&self) -> Result<(), GroupError> {
        if self.desc.step > 2 {
            return Err(GroupError::NotImplemented(self.desc.step));
        }
        Ok(())
    }

    pub fn multiply(&self, p: &GroupPoint, q: &GroupPoint) -> Result<GroupPoint, GroupError> {
        self.check(p)?;
        self.check(q)?;
        self.check_law()?;
        Ok(self.mul(p, q))
    }

    /// Product without tag or step checks; callers guarantee both.
    pub(crate) fn mul(&self, p: &GroupPoint, q: &GroupPoint) -> GroupPoint {
        let mut out = p.coords.clone();
        self.mul_coords(&p.coords, &q.coords, &mut out);
        GroupPoint {
            tag: p.tag,
            coords: out,
        }
    }

    /// `out = p * q` on raw coordinate slices.
    pub(crate) fn mul_coords(&self, p: &[f64], q: &[f64], out: &mut [f64]) {
        for i in 0..out.len() {
            out[i] = p[i] + q[i];
        }
        for &(i, j, k, c) in &self.half_brackets {
            out[k] += c * (p[i] * q[j] - p[j] * q[i]);
        }
    }

    pub fn inverse(&self, p: &GroupPoint) -> Result<GroupPoint, GroupError> {
        self.check(p)?;
        self.check_law()?;
        Ok(self.inv(p))
    }

    pub(crate) fn inv(&self, p: &GroupPoint) -> GroupPoint {
        // In exponential coordinates of a step <= 2 group the inverse is negation.
        GroupPoint {
            tag: p.tag,
            coords: p.coords.iter().map(|v| -v).collect(),
        }
    }

    pub fn dilate(&self, lambda: f64, p: &GroupPoint) -> Result<GroupPoint, GroupError> {
        if !(lambda > 0.0) {
            return Err(GroupError::NonPositiveDilation(lambda));
        }
        self.check(p)?;
        Ok(self.dil(lambda, p))
    }

    pub(crate) fn dil(&self, lambda: f64, p: &GroupPoint) -> GroupPoint {
        let l2 = lambda * lambda;
        let coords = p
            .coords
            .iter()
            .zip(&self.weights)
            .map(|(v, &w)| match w {
                1 => v * lambda,
                2 => v * l2,
                w => v * lambda.powi(w as i32),
            })
            .collect();
        GroupPoint { tag: p.tag, coords }
    }

    /// `delta_{1/s}(p)`, computed by division so `delta_{1/s} delta_s` is exact
    /// on more inputs than multiplication by `1/s` would be.
    pub(crate) fn dil_inv(&self, s: f64, p: &GroupPoint) -> GroupPoint {
        let coords = p
            .coords
            .iter()
            .zip(&self.weights)
            .map(|(v, &w)| v / s.powi(w as i32))
            .collect();
        GroupPoint { tag: p.tag, coords }
    }

    /// Bound on `|p_i - q_i|` for each coordinate implied by `d(p, q) <= r`,
    /// given horizontal coordinates of size at most `h`.
    pub(crate) fn coordinate_reach(&self, r: f64, h: f64) -> Coords {
        let mut out: Coords = self
            .weights
            .iter()
            .map(|&w| if w == 1 { r } else { r.powi(w as i32) })
            .collect();
        for &(_, _, k, c) in &self.half_brackets {
            out[k] += 2.0 * c.abs() * h * r;
        }
        out
    }

    /// Per-layer sup norms `||g_j||` in coordinate blocks.
    fn layer_norms(&self, g: &[f64]) -> SmallVec<[f64; 4]> {
        let mut norms: SmallVec<[f64; 4]> = smallvec::smallvec![0.0; self.desc.step];
        for (v, &w) in g.iter().zip(&self.weights) {
            let slot = &mut norms[(w - 1) as usize];
            *slot = slot.max(v.abs());
        }
        norms
    }

    /// `max_j ||g_j||^(1/j)`, the homogeneous quasinorm of `g`.
    pub fn quasi_norm_coords(&self, g: &[f64]) -> f64 {
        self.layer_norms(g)
            .iter()
            .enumerate()
            .map(|(j, n)| match j {
                0 => *n,
                1 => n.sqrt(),
                j => n.powf(1.0 / (j + 1) as f64),
            })
            .fold(0.0, f64::max)
    }

    pub fn quasi_norm(&self, g: &GroupPoint) -> f64 {
        self.quasi_norm_coords(&g.coords)
    }

    /// `d(p, q) = |q^{-1} p|`.
    pub fn quasidistance(&self, p: &GroupPoint, q: &GroupPoint) -> Result<f64, GroupError> {
        self.check(p)?;
        self.check(q)?;
        self.check_law()?;
        Ok(self.dist(p, q))
    }

    pub(crate) fn dist(&self, p: &GroupPoint, q: &GroupPoint) -> f64 {
        self.dist_coords(&p.coords, &q.coords)
    }

    pub(crate) fn dist_coords(&self, p: &[f64], q: &[f64]) -> f64 {
        if p.len() > 8 || self.desc.step > 2 {
            let mut rel: SmallVec<[f64; 6]> = smallvec::smallvec![0.0; p.len()];
            let neg_q: SmallVec<[f64; 6]> = q.iter().map(|v| -v).collect();
            self.mul_coords(&neg_q, p, &mut rel);
            return self.quasi_norm_coords(&rel);
        }
        let mut rel = [0.0f64; 8];
        for i in 0..p.len() {
            rel[i] = p[i] - q[i];
        }
        for &(i, j, k, c) in &self.half_brackets {
            rel[k] += c * (q[j] * p[i] - q[i] * p[j]);
        }
        let (mut h, mut v) = (0.0f64, 0.0f64);
        for (x, &w) in rel.iter().zip(&self.weights) {
            if w == 1 {
                h = h.max(x.abs());
            } else {
                v = v.max(x.abs());
            }
        }
        h.max(v.sqrt())
    }

    /// `q^{-1} p` on raw coordinates.
    pub(crate) fn relative_coords(&self, p: &[f64], q: &[f64]) -> Coords {
        let mut rel: Coords = smallvec::smallvec![0.0; p.len()];
        let neg_q: SmallVec<[f64; 6]> = q.iter().map(|v| -v).collect();
        self.mul_coords(&neg_q, p, &mut rel);
        rel
    }

    /// Bracket enclosing the Carnot-Caratheodory distance.
    ///
    /// The upper end comes from an optimized piecewise-horizontal polyline
    /// joining `p` to `q`; the lower end combines the horizontal projection
    /// bound with the isoperimetric bound `d >= sqrt(pi |t| / 2)` on the
    /// vertical part of `p^{-1} q`.
    pub fn cc_distance_estimate(
        &self,
        p: &GroupPoint,
        q: &GroupPoint,
        budget: usize,
    ) -> Result<CcInterval, GroupError> {
        self.check(p)?;
        self.check(q)?;
        if budget == 0 {
            return Err(GroupError::ZeroBudget);
        }
        match self.desc.kind {
            GroupKind::Euclidean { .. } => {
                let d = p
                    .coords
                    .iter()
                    .zip(&q.coords)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                Ok(CcInterval {
                    lower: d,
                    upper: d,
                    iterations: 0,
                })
            }
            GroupKind::Heisenberg { n } => {
                let rel = self.relative_coords(&q.coords, &p.coords);
                Ok(heisenberg_cc(n, &rel, budget))
            }
            GroupKind::Graded { .. } => Err(GroupError::NotImplemented(self.desc.step)),
        }
    }
}

/// Lower and upper bounds for a sub-Riemannian distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcInterval {
    pub lower: f64,
    pub upper: f64,
    pub iterations: usize,
}

impl CcInterval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

const CC_NODES: usize = 64;

/// Lift of a horizontal polyline: `sum_i omega(w_{i-1}, w_i)` with
/// `omega(a, b) = sum_j a_y b_x - a_x b_y`.
fn polyline_lift(n: usize, nodes: &[Vec<f64>]) -> f64 {
    nodes
        .windows(2)
        .map(|w| {
            (0..n)
                .map(|j| w[0][2 * j + 1] * w[1][2 * j] - w[0][2 * j] * w[1][2 * j + 1])
                .sum::<f64>()
        })
        .sum()
}

fn polyline_length(nodes: &[Vec<f64>]) -> f64 {
    nodes
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum()
}

/// Gradient of the lift with respect to the interior nodes.
fn lift_gradient(n: usize, nodes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = nodes.len();
    let mut grad = vec![vec![0.0; 2 * n]; m];
    for i in 1..m - 1 {
        let (a, b) = (&nodes[i - 1], &nodes[i + 1]);
        for j in 0..n {
            let (x, y) = (2 * j, 2 * j + 1);
            // d/dw_i of omega(a, w_i) + omega(w_i, b)
            grad[i][x] = a[y] - b[y];
            grad[i][y] = -a[x] + b[x];
        }
    }
    grad
}

fn length_gradient(nodes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = nodes.len();
    let dim = nodes[0].len();
    let mut grad = vec![vec![0.0; dim]; m];
    for i in 1..m - 1 {
        for side in [i - 1, i + 1] {
            let d: Vec<f64> = nodes[i].iter().zip(&nodes[side]).map(|(a, b)| a - b).collect();
            let len = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if len > 1e-300 {
                for k in 0..dim {
                    grad[i][k] += d[k] / len;
                }
            }
        }
    }
    grad
}

fn dot(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>())
        .sum()
}

/// Move nodes along the lift gradient until the lift equals `target`.
fn restore_lift(n: usize, nodes: &mut [Vec<f64>], target: f64) -> bool {
    for _ in 0..30 {
        let err = target - polyline_lift(n, nodes);
        if err.abs() <= 1e-13 * (1.0 + target.abs()) {
            return true;
        }
        let g = lift_gradient(n, nodes);
        let gg = dot(&g, &g);
        if gg < 1e-300 {
            return false;
        }
        let step = err / gg;
        for (node, gi) in nodes.iter_mut().zip(&g) {
            for (v, d) in node.iter_mut().zip(gi) {
                *v += step * d;
            }
        }
    }
    let err = target - polyline_lift(n, nodes);
    err.abs() <= 1e-10 * (1.0 + target.abs())
}

/// Circular-arc polyline in the first complex plane from 0 to `end` whose lift is `tau`.
fn initial_arc(n: usize, end: &[f64], tau: f64) -> Vec<Vec<f64>> {
    let dim = 2 * n;
    let chord = end.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut nodes = vec![vec![0.0; dim]; CC_NODES + 1];
    if tau.abs() < 1e-300 || chord > 0.0 && tau.abs() < 1e-15 * chord * chord {
        for (i, node) in nodes.iter_mut().enumerate() {
            let s = i as f64 / CC_NODES as f64;
            for k in 0..dim {
                node[k] = s * end[k];
            }
        }
        return nodes;
    }
    // Lift of a closed counterclockwise loop is -2 * area, so the sign of tau
    // fixes the orientation.
    let orient = if tau > 0.0 { -1.0 } else { 1.0 };
    let area = tau.abs() / 2.0;
    if chord < 1e-300 {
        let r = (area / PI).sqrt();
        for (i, node) in nodes.iter_mut().enumerate() {
            let th = 2.0 * PI * i as f64 / CC_NODES as f64;
            // Circle through the origin centred at (r, 0).
            node[0] = r - r * th.cos();
            node[1] = -orient * r * th.sin();
        }
        if let Some(last) = nodes.last_mut() {
            last.iter_mut().for_each(|v| *v = 0.0);
        }
        return nodes;
    }
    // Segment area between chord and arc: R^2/2 (phi - sin phi), R = D / (2 sin(phi/2)).
    let seg_area = |phi: f64| {
        let r = chord / (2.0 * (phi / 2.0).sin());
        0.5 * r * r * (phi - phi.sin())
    };
    let (mut lo, mut hi) = (1e-9, 2.0 * PI - 1e-9);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if seg_area(mid) < area {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let phi = 0.5 * (lo + hi);
    let r = chord / (2.0 * (phi / 2.0).sin());
    // Work in the plane spanned by the chord and its perpendicular; put the
    // horizontal displacement along e_x of the first plane then rotate back.
    let ux: Vec<f64> = end.iter().map(|v| v / chord).collect();
    // Perpendicular in the symplectic sense: J u, which keeps the lift planar.
    let mut uy = vec![0.0; dim];
    for j in 0..n {
        uy[2 * j] = -ux[2 * j + 1];
        uy[2 * j + 1] = ux[2 * j];
    }
    let centre_offset = r * (phi / 2.0).cos();
    for (i, node) in nodes.iter_mut().enumerate() {
        let s = i as f64 / CC_NODES as f64;
        let th = -phi / 2.0 + s * phi;
        // Arc from angle -phi/2 to phi/2 around centre below the chord.
        let a = chord / 2.0 + r * th.sin();
        let b = r * th.cos() - centre_offset;
        for k in 0..dim {
            node[k] = a * ux[k] + orient * b * uy[k];
        }
    }
    // Pin the end exactly.
    nodes[CC_NODES].copy_from_slice(end);
    nodes
}

fn heisenberg_cc(n: usize, rel: &[f64], budget: usize) -> CcInterval {
    let horiz = &rel[..2 * n];
    let tau = rel[2 * n];
    let h_norm = horiz.iter().map(|v| v * v).sum::<f64>().sqrt();
    let lower = h_norm.max((PI * tau.abs() / 2.0).sqrt());

    let mut nodes = initial_arc(n, horiz, tau);
    let mut feasible = restore_lift(n, &mut nodes, tau);
    if !feasible {
        // Degenerate start; bend the straight path off the chord and retry.
        for (i, node) in nodes.iter_mut().enumerate().skip(1).take(CC_NODES - 1) {
            node[1] += 1e-3 * ((i as f64) * 0.37).sin();
        }
        feasible = restore_lift(n, &mut nodes, tau);
    }
    let mut best = if feasible {
        polyline_length(&nodes)
    } else {
        f64::INFINITY
    };
    let mut step = 0.05 * best.max(1e-12).min(1.0);
    let mut iterations = 0;
    for _ in 0..budget {
        iterations += 1;
        let gl = length_gradient(&nodes);
        let gt = lift_gradient(n, &nodes);
        let gtgt = dot(&gt, &gt);
        let proj = if gtgt > 1e-300 { dot(&gl, &gt) / gtgt } else { 0.0 };
        let mut trial = nodes.clone();
        for i in 1..CC_NODES {
            for k in 0..2 * n {
                trial[i][k] -= step * (gl[i][k] - proj * gt[i][k]);
            }
        }
        if restore_lift(n, &mut trial, tau) {
            let len = polyline_length(&trial);
            if len < best {
                best = len;
                nodes = trial;
                step *= 1.2;
                continue;
            }
        }
        step *= 0.5;
        if step < 1e-14 {
            break;
        }
    }
    CcInterval {
        lower,
        upper: best.max(lower),
        iterations,
    }
}

/// Worst relative defects of the group laws on random samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub group: String,
    pub samples: usize,
    pub associativity: f64,
    pub identity: f64,
    pub inverse: f64,
    pub dilation: f64,
    pub left_invariance: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn relative_defect(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

impl Group {
    /// Associativity, two-sided identity and inverse, `delta_l` as a
    /// homomorphism and left invariance of the quasidistance, each as the
    /// largest relative defect over `samples` random draws. Dilation factors
    /// range over `[10^-2, 10^2]`.
    pub fn property_audit(&self, samples: usize, seed: u64, tolerance: f64) -> PropertyReport {
        use rand::Rng as _;
        let mut rng = crate::rng::stream(seed, 0x9a0);
        let e = self.identity();
        let (mut assoc, mut ident, mut inv, mut dil, mut left) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for _ in 0..samples {
            let a = self.sample_box(&mut rng, 1.0);
            let b = self.sample_box(&mut rng, 1.0);
            let c = self.sample_box(&mut rng, 1.0);
            let lhs = self.mul(&self.mul(&a, &b), &c);
            let rhs = self.mul(&a, &self.mul(&b, &c));
            assoc = assoc.max(relative_defect(&lhs.coords, &rhs.coords));
            ident = ident
                .max(relative_defect(&self.mul(&a, &e).coords, &a.coords))
                .max(relative_defect(&self.mul(&e, &a).coords, &a.coords));
            let ai = self.inv(&a);
            inv = inv
                .max(relative_defect(&self.mul(&a, &ai).coords, &e.coords))
                .max(relative_defect(&self.mul(&ai, &a).coords, &e.coords));
            let l = 10f64.powf(rng.gen_range(-2.0..=2.0));
            let d1 = self.dil(l, &self.mul(&a, &b));
            let d2 = self.mul(&self.dil(l, &a), &self.dil(l, &b));
            dil = dil.max(relative_defect(&d1.coords, &d2.coords));
            let (x, y) = (self.dist(&self.mul(&c, &a), &self.mul(&c, &b)), self.dist(&a, &b));
            left = left.max((x - y).abs() / y.max(1.0));
        }
        PropertyReport {
            group: self.kind().to_string(),
            samples,
            associativity: assoc,
            identity: ident,
            inverse: inv,
            dilation: dil,
            left_invariance: left,
            tolerance,
            pass: [assoc, ident, inv, dil, left].iter().all(|v| *v <= tolerance),
        }
    }
}

/// Empirical constants of the quasidistance on a sample of the unit box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricAudit {
    pub samples: usize,
    pub value: f64,
}

impl Group {
    /// Uniform point of the coordinate box `[-r, r]^dim` scaled by layer weight.
    pub fn sample_box<R: rand::Rng>(&self, rng: &mut R, r: f64) -> GroupPoint {
        let coords = self
            .weights
            .iter()
            .map(|&w| rng.gen_range(-1.0..=1.0) * r.powi(w as i32))
            .collect();
        GroupPoint {
            tag: self.desc.kind,
            coords,
        }
    }

    /// Largest observed `d(p, r) / (d(p, q) + d(q, r))` over random triples.
    ///
    /// Triples are drawn at mixed scales so that configurations with one short
    /// and one long leg are represented.
    pub fn quasi_triangle_constant(&self, samples: usize, seed: u64) -> MetricAudit {
        use rand::Rng as _;
        let mut rng = crate::rng::stream(seed, 0x7121);
        let mut best: f64 = 1.0;
        for _ in 0..samples {
            let p = self.sample_box(&mut rng, 1.0);
            let s: f64 = 10f64.powf(rng.gen_range(-2.0..=0.0));
            let q = self.mul(&p, &self.sample_box(&mut rng, s));
            let r = self.mul(&q, &self.sample_box(&mut rng, 1.0));
            let denom = self.dist(&p, &q) + self.dist(&q, &r);
            if denom > 0.0 {
                best = best.max(self.dist(&p, &r) / denom);
            }
        }
        MetricAudit {
            samples,
            value: best,
        }
    }

    /// Band `(min, max)` of `cc / quasidistance` over random pairs in the unit
    /// quasiball, using the upper end of the CC bracket for the max and the
    /// lower end for the min.
    pub fn comparability_band(
        &self,
        samples: usize,
        budget: usize,
        seed: u64,
    ) -> Result<(f64, f64), GroupError> {
        let mut rng = crate::rng::stream(seed, 0xcc);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        let mut seen = 0;
        while seen < samples {
            let p = self.sample_box(&mut rng, 1.0);
            let q = self.sample_box(&mut rng, 1.0);
            let d = self.dist(&q, &p);
            if d == 0.0 || self.quasi_norm(&p) > 1.0 || self.quasi_norm(&q) > 1.0 {
                continue;
            }
            let iv = self.cc_distance_estimate(&p, &q, budget)?;
            lo = lo.min(iv.lower / d);
            hi = hi.max(iv.upper / d);
            seen += 1;
        }
        Ok((lo, hi))
    }

    /// Monte Carlo volume of `g * [0, 1]^dim`; returns `(estimate, sigma)`.
    pub fn translated_box_volume(&self, g: &GroupPoint, samples: usize, seed: u64) -> (f64, f64) {
        use rand::Rng as _;
        let mut rng = crate::rng::stream(seed, 0xaa);
        let dim = self.dim();
        let unit = self.point_unchecked(&vec![0.5; dim]);
        let centre = self.mul(g, &unit);
        // Image of the unit cube under left translation stays in this box.
        let h: f64 = g.coords[..self.horizontal_dim()]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let extent: Vec<f64> = self
            .weights
            .iter()
            .map(|&w| if w == 1 { 0.5 } else { 0.5 + 2.0 * h * self.dim() as f64 })
            .collect();
        let ginv = self.inv(g);
        let mut hits = 0usize;
        let mut x = vec![0.0; dim];
        for _ in 0..samples {
            for k in 0..dim {
                x[k] = centre.coords[k] + rng.gen_range(-extent[k]..=extent[k]);
            }
            let pre = self.mul(&ginv, &self.point_unchecked(&x));
            if pre.coords.iter().all(|v| (0.0..=1.0).contains(v)) {
                hits += 1;
            }
        }
        let vol: f64 = extent.iter().map(|e| 2.0 * e).product();
        let f = hits as f64 / samples as f64;
        (f * vol, vol * (f * (1.0 - f) / samples as f64).sqrt())
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn groups() -> impl Strategy<Value = Group> {
        prop_oneof![
            Just(Group::heisenberg(1)),
            Just(Group::heisenberg(2)),
            Just(Group::euclidean(3)),
        ]
    }

    fn triple() -> impl Strategy<Value = (Group, Vec<f64>, Vec<f64>, Vec<f64>)> {
        groups().prop_flat_map(|g| {
            let v = prop::collection::vec(-10.0f64..10.0, g.dim());
            (Just(g), v.clone(), v.clone(), v)
        })
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
    }

    proptest! {
        #[test]
        fn associative((g, a, b, c) in triple()) {
            let (p, q, r) = (g.point(&a).unwrap(), g.point(&b).unwrap(), g.point(&c).unwrap());
            let left = g.mul(&g.mul(&p, &q), &r);
            let right = g.mul(&p, &g.mul(&q, &r));
            prop_assert!(close(&left.coords, &right.coords, 1e-12));
        }

        #[test]
        fn inverse_cancels((g, a, _b, _c) in triple()) {
            let p = g.point(&a).unwrap();
            let e = g.mul(&p, &g.inv(&p));
            prop_assert!(e.coords.iter().all(|v| v.abs() <= 1e-12));
            prop_assert_eq!(g.mul(&g.identity(), &p), p);
        }

        #[test]
        fn dilation_is_homomorphism((g, a, b, _c) in triple(), li in 0usize..4) {
            let lambda = [0.1, 0.5, 2.0, 10.0][li];
            let (p, q) = (g.point(&a).unwrap(), g.point(&b).unwrap());
            let lhs = g.dil(lambda, &g.mul(&p, &q));
            let rhs = g.mul(&g.dil(lambda, &p), &g.dil(lambda, &q));
            prop_assert!(close(&lhs.coords, &rhs.coords, 1e-12));
            let comp = g.dil(lambda, &g.dil(0.5, &p));
            prop_assert!(close(&comp.coords, &g.dil(lambda * 0.5, &p).coords, 1e-12));
        }

        #[test]
        fn quasidistance_left_invariant((g, a, b, c) in triple()) {
            // Dyadic rationals keep every product exact.
            let snap = |v: &[f64]| v.iter().map(|x| (x * 64.0).round() / 64.0).collect::<Vec<_>>();
            let (p, q, h) = (
                g.point(&snap(&a)).unwrap(),
                g.point(&snap(&b)).unwrap(),
                g.point(&snap(&c)).unwrap(),
            );
            prop_assert_eq!(g.dist(&g.mul(&h, &p), &g.mul(&h, &q)), g.dist(&p, &q));
        }

        #[test]
        fn quasidistance_homogeneous((g, a, b, _c) in triple(), lambda in 0.01f64..100.0) {
            let (p, q) = (g.point(&a).unwrap(), g.point(&b).unwrap());
            let d = g.dist(&p, &q);
            let dl = g.dist(&g.dil(lambda, &p), &g.dil(lambda, &q));
            prop_assert!((dl - lambda * d).abs() <= 1e-9 * (1.0 + lambda * d));
            prop_assert_eq!(d == 0.0, p == q);
        }

        #[test]
        fn cc_bracket_ordered((g, a, b, _c) in triple()) {
            let (p, q) = (g.point(&a).unwrap(), g.point(&b).unwrap());
            let iv = g.cc_distance_estimate(&p, &q, 3).unwrap();
            prop_assert!(iv.lower <= iv.upper);
            prop_assert!(iv.lower + 1e-9 >= g.dist(&q, &p).min(
                q.coords[..g.horizontal_dim()].iter().zip(&p.coords).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
            ));
        }
    }

    #[test]
    fn quasi_triangle_constant_stabilizes() {
        let g = Group::heisenberg(1);
        let small = g.quasi_triangle_constant(10_000, 3).value;
        let large = g.quasi_triangle_constant(100_000, 3).value;
        assert!(small >= 1.0 && large >= small);
        assert!((large - small) / large < 0.05, "{small} vs {large}");
    }

    #[test]
    fn left_translation_preserves_volume() {
        let g = Group::heisenberg(1);
        let h = g.point(&[0.8, -0.6, 0.3]).unwrap();
        let (vol, sigma) = g.translated_box_volume(&h, 200_000, 11);
        assert!((vol - 1.0).abs() <= 3.0 * sigma, "{vol} +- {sigma}");
    }

    #[test]
    fn comparability_is_bounded() {
        let g = Group::heisenberg(1);
        let (lo, hi) = g.comparability_band(200, 20, 5).unwrap();
        assert!(lo >= 1.0 - 1e-12, "lower band {lo}");
        assert!(hi.is_finite() && hi < 10.0, "upper band {hi}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h1(c: [f64; 3]) -> GroupPoint {
        Group::heisenberg(1).point(&c).unwrap()
    }

    #[test]
    fn property_audit_passes() {
        for g in [Group::heisenberg(1), Group::heisenberg(2), Group::euclidean(3)] {
            let r = g.property_audit(2000, 1, 1e-12);
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn heisenberg_products() {
        let g = Group::heisenberg(1);
        let a = g.multiply(&h1([1.0, 0.0, 0.0]), &h1([0.0, 1.0, 0.0])).unwrap();
        assert_eq!(a.coords.as_slice(), &[1.0, 1.0, -1.0]);
        let b = g.multiply(&h1([0.0, 1.0, 0.0]), &h1([1.0, 0.0, 0.0])).unwrap();
        assert_eq!(b.coords.as_slice(), &[1.0, 1.0, 1.0]);
        let p = h1([0.3, -2.0, 5.0]);
        assert_eq!(g.multiply(&g.identity(), &p).unwrap(), p);
    }

    #[test]
    fn inverses() {
        let g = Group::heisenberg(1);
        let p = h1([0.7, -1.1, 3.0]);
        let inv = g.inverse(&p).unwrap();
        assert_eq!(inv.coords.as_slice(), &[-0.7, 1.1, -3.0]);
        assert_eq!(g.multiply(&p, &inv).unwrap(), g.identity());
        let e = Group::euclidean(2);
        let q = e.point(&[3.0, -4.0]).unwrap();
        assert_eq!(e.inverse(&q).unwrap().coords.as_slice(), &[-3.0, 4.0]);
        assert_eq!(g.inverse(&g.identity()).unwrap(), g.identity());
    }

    #[test]
    fn dilations() {
        let g = Group::heisenberg(1);
        assert_eq!(g.dilate(2.0, &h1([1.0, 1.0, 1.0])).unwrap().coords.as_slice(), &[2.0, 2.0, 4.0]);
        let d = g.dilate(0.1, &h1([10.0, 0.0, 100.0])).unwrap();
        assert!((d.coords[0] - 1.0).abs() < 1e-15 && (d.coords[2] - 1.0).abs() < 1e-12);
        let p = h1([0.2, 0.4, -0.9]);
        assert_eq!(g.dilate(1.0, &p).unwrap(), p);
        assert!(matches!(g.dilate(0.0, &p), Err(GroupError::NonPositiveDilation(_))));
        assert!(matches!(g.dilate(-1.0, &p), Err(GroupError::NonPositiveDilation(_))));
    }

    #[test]
    fn quasidistance_values() {
        let g = Group::heisenberg(1);
        assert_eq!(g.quasidistance(&h1([3.0, 4.0, 9.0]), &g.identity()).unwrap(), 4.0);
        assert_eq!(g.quasidistance(&h1([0.0, 0.0, 4.0]), &g.identity()).unwrap(), 2.0);
        let p = h1([0.5, 0.1, 0.2]);
        assert_eq!(g.quasidistance(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn descriptor_checks() {
        let g = Group::heisenberg(1);
        let e = Group::euclidean(3);
        let p = e.point(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            g.multiply(&p, &p),
            Err(GroupError::DescriptorMismatch(..))
        ));
        assert!(matches!(g.point(&[1.0]), Err(GroupError::DimensionMismatch { .. })));
        assert_eq!(Group::heisenberg(2).homogeneous_dimension(), 6);
        assert_eq!(e.homogeneous_dimension(), 3);
        assert_eq!(g.descriptor().grading_dims, vec![2, 1]);
    }

    #[test]
    fn step_three_rejected() {
        // Engel-type grading (2, 1, 1): descriptor builds, product refuses.
        let desc = GroupDescriptor::graded(
            vec![2, 1, 1],
            vec![
                Bracket { i: 0, j: 1, k: 2, coeff: Rational::integer(1) },
                Bracket { i: 0, j: 2, k: 3, coeff: Rational::integer(1) },
            ],
        )
        .unwrap();
        let g = Group::new(desc).unwrap();
        assert_eq!(g.homogeneous_dimension(), 2 + 2 + 3);
        let p = g.identity();
        assert_eq!(g.multiply(&p, &p), Err(GroupError::NotImplemented(3)));
    }

    #[test]
    fn custom_step_two_matches_heisenberg() {
        let desc = GroupDescriptor::graded(
            vec![2, 1],
            vec![Bracket { i: 0, j: 1, k: 2, coeff: Rational::new(-4, 2) }],
        )
        .unwrap();
        let g = Group::new(desc).unwrap();
        let h = Group::heisenberg(1);
        let a = [0.3, -0.8, 0.25];
        let b = [1.5, 0.2, -0.7];
        let via_custom = g.mul(&g.point(&a).unwrap(), &g.point(&b).unwrap());
        let via_h = h.mul(&h1(a), &h1(b));
        assert_eq!(via_custom.coords, via_h.coords);
    }

    #[test]
    fn descriptor_json() {
        let g = Group::from_json(r#"{"kind":"heisenberg","n":2}"#).unwrap();
        assert_eq!(g, Group::heisenberg(2));
        let e = Group::from_json(&Group::euclidean(4).to_json()).unwrap();
        assert_eq!(e, Group::euclidean(4));
        assert!(Group::from_json(r#"{"kind":"heisenberg","n":0}"#).is_err());
    }

    #[test]
    fn cc_horizontal_segment() {
        let g = Group::heisenberg(1);
        let iv = g.cc_distance_estimate(&g.identity(), &h1([0.7, 0.0, 0.0]), 10).unwrap();
        assert!(iv.contains(0.7));
        assert!((iv.upper - 0.7).abs() < 1e-9);
    }

    #[test]
    fn cc_euclidean_exact() {
        let e = Group::euclidean(2);
        let iv = e
            .cc_distance_estimate(&e.point(&[0.0, 0.0]).unwrap(), &e.point(&[3.0, 4.0]).unwrap(), 1)
            .unwrap();
        assert_eq!((iv.lower, iv.upper), (5.0, 5.0));
    }

    #[test]
    fn cc_vertical_converges_to_isoperimetric_value() {
        // Among loops of lift 1 the circle of area 1/2 is shortest: length sqrt(2 pi).
        let g = Group::heisenberg(1);
        let iv = g.cc_distance_estimate(&g.identity(), &h1([0.0, 0.0, 1.0]), 50).unwrap();
        let exact = (2.0 * PI).sqrt();
        assert!(iv.upper >= exact - 1e-9, "upper {} below the exact value", iv.upper);
        assert!(iv.upper < exact * 1.001, "upper {}", iv.upper);
        assert!(iv.lower > 0.0 && iv.lower <= iv.upper);
        // The four-sided square loop enclosing area 1/2 has length 4 / sqrt(2).
        assert!(iv.upper < 4.0 / 2f64.sqrt());
    }

    #[test]
    fn cc_budget_monotone_and_guarded() {
        let g = Group::heisenberg(2);
        let p = g.point(&[0.1, -0.3, 0.4, 0.2, 0.5]).unwrap();
        let q = g.point(&[-0.2, 0.1, 0.0, 0.3, -0.4]).unwrap();
        let mut prev = f64::INFINITY;
        for budget in [1, 5, 20, 80] {
            let iv = g.cc_distance_estimate(&p, &q, budget).unwrap();
            assert!(iv.lower <= iv.upper);
            assert!(iv.upper <= prev + 1e-15);
            prev = iv.upper;
        }
        assert_eq!(g.cc_distance_estimate(&p, &q, 0), Err(GroupError::ZeroBudget));
    }
}
