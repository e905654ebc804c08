//! A Lipschitz map from a box in the first Heisenberg group onto a set of
//! dimension `4 - eps` in `R^4`, built from two nested families of sixteen
//! boxes.
//!
//! Digits run from 1 to 16. For digit `d` write `i = d - 1`; bit 0 of `i`
//! selects `x = -/+ 1/2`, bit 1 selects `y`, and bits 2-3 select the vertical
//! offset from `(-3/4, -1/4, 1/4, 3/4) lambda` on the source side or bits 2
//! and 3 as the signs of the last two coordinates on the target side.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::{Group, GroupPoint};
use crate::maps::{LipschitzMap, MapError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CantorError {
    #[error("eps must lie in (0, 4), got {0}")]
    Epsilon(f64),
    #[error("beta must lie in [{gamma}, 1/2), got {beta}")]
    Beta { beta: f64, gamma: f64 },
    #[error("digit {0} is not in 1..=16")]
    Digit(u8),
    #[error("point {0:?} lies outside the base box")]
    Outside(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CantorParams {
    pub epsilon: f64,
    pub gamma: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl CantorParams {
    /// `gamma = 16^(1/(eps - 4))`, `beta` defaults to `gamma`, and
    /// `lambda = 20 / (1/4 - beta^2)`.
    pub fn derive(epsilon: f64, beta: Option<f64>) -> Result<Self, CantorError> {
        if !(epsilon > 0.0 && epsilon < 4.0) {
            return Err(CantorError::Epsilon(epsilon));
        }
        let gamma = 16f64.powf(1.0 / (epsilon - 4.0));
        let beta = beta.unwrap_or(gamma);
        if !(beta >= gamma && beta < 0.5) {
            return Err(CantorError::Beta { beta, gamma });
        }
        Ok(CantorParams {
            epsilon,
            gamma,
            beta,
            lambda: 20.0 / (0.25 - beta * beta),
        })
    }

    /// Same parameters with a different vertical scale, unchecked.
    pub fn with_lambda(self, lambda: f64) -> Self {
        CantorParams { lambda, ..self }
    }

    /// `lambda (1/4 - beta^2)`, which the construction needs to equal 20.
    pub fn vertical_margin(&self) -> f64 {
        self.lambda * (0.25 - self.beta * self.beta)
    }

    pub fn is_consistent(&self) -> bool {
        (self.vertical_margin() - 20.0).abs() <= 1e-9 && self.gamma < 0.5 && self.beta >= self.gamma
    }

    /// Dimension of the target Cantor set, `log_{1/gamma} 16`.
    pub fn target_dimension(&self) -> f64 {
        16f64.ln() / (1.0 / self.gamma).ln()
    }

    /// Collar width around each child box, in units of the child's size.
    pub fn collar(&self) -> f64 {
        0.45 * (0.5 - self.beta) / self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxAddress {
    pub digits: Vec<u8>,
    pub side: Side,
}

impl BoxAddress {
    pub fn new(digits: Vec<u8>, side: Side) -> Result<Self, CantorError> {
        if let Some(&d) = digits.iter().find(|d| !(1..=16).contains(*d)) {
            return Err(CantorError::Digit(d));
        }
        Ok(BoxAddress { digits, side })
    }

    pub fn depth(&self) -> usize {
        self.digits.len()
    }
}

pub fn source_offset(digit: u8, lambda: f64) -> [f64; 3] {
    let i = digit - 1;
    let half = |b: u8| if i >> b & 1 == 1 { 0.5 } else { -0.5 };
    let c = [-0.75, -0.25, 0.25, 0.75][(i >> 2) as usize];
    [half(0), half(1), c * lambda]
}

pub fn target_offset(digit: u8) -> [f64; 4] {
    let i = digit - 1;
    let half = |b: u8| if i >> b & 1 == 1 { 0.5 } else { -0.5 };
    [half(0), half(1), half(2), half(3)]
}

/// `centre * delta_{beta^k}(I^0)` with `I^0 = [-1,1]^2 x [-lambda, lambda]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceBox {
    pub centre: GroupPoint,
    pub depth: usize,
    pub half_sides: [f64; 3],
}

/// `centre + gamma^k [-1,1]^4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetBox {
    pub centre: [f64; 4],
    pub depth: usize,
    pub half_side: f64,
}

fn h1() -> Group {
    Group::heisenberg(1)
}

/// `max(|x|, |y|, sqrt(|t| / lambda))`, equal to 1 on the boundary of `I^0`.
fn gauge(u: &[f64], lambda: f64) -> f64 {
    u[0].abs().max(u[1].abs()).max((u[2].abs() / lambda).sqrt())
}

fn child_centre(g: &Group, centre: &GroupPoint, digit: u8, depth: usize, p: &CantorParams) -> GroupPoint {
    let o = g.point_unchecked(&source_offset(digit, p.lambda));
    g.mul(centre, &g.dil(p.beta.powi(depth as i32), &o))
}

impl SourceBox {
    /// `delta_{beta^-k}(centre^{-1} q)`.
    fn normalise(&self, g: &Group, q: &GroupPoint, beta: f64) -> GroupPoint {
        g.dil_inv(beta.powi(self.depth as i32), &g.mul(&g.inv(&self.centre), q))
    }

    pub fn contains(&self, q: &GroupPoint, params: &CantorParams) -> bool {
        let g = h1();
        gauge(&self.normalise(&g, q, params.beta).coords, params.lambda) <= 1.0
    }

    pub fn from_unit(&self, u: &[f64; 3], params: &CantorParams) -> GroupPoint {
        let g = h1();
        let v = g.point_unchecked(&[u[0], u[1], u[2] * params.lambda]);
        g.mul(&self.centre, &g.dil(params.beta.powi(self.depth as i32), &v))
    }
}

pub fn source_box(addr: &BoxAddress, params: &CantorParams) -> Result<SourceBox, CantorError> {
    let addr = BoxAddress::new(addr.digits.clone(), Side::Source)?;
    let g = h1();
    let mut centre = g.identity();
    for (k, &d) in addr.digits.iter().enumerate() {
        centre = child_centre(&g, &centre, d, k, params);
    }
    let k = addr.depth() as i32;
    let s = params.beta.powi(k);
    Ok(SourceBox {
        centre,
        depth: addr.depth(),
        half_sides: [s, s, params.lambda * s * s],
    })
}

pub fn target_box(addr: &BoxAddress, params: &CantorParams) -> Result<TargetBox, CantorError> {
    let addr = BoxAddress::new(addr.digits.clone(), Side::Target)?;
    let mut centre = [0.0; 4];
    for (k, &d) in addr.digits.iter().enumerate() {
        let o = target_offset(d);
        let s = params.gamma.powi(k as i32);
        for i in 0..4 {
            centre[i] += s * o[i];
        }
    }
    Ok(TargetBox {
        centre,
        depth: addr.depth(),
        half_side: params.gamma.powi(addr.depth() as i32),
    })
}

/// Where a point sits in the nested source boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CantorLocation {
    /// Inside a box at every stage up to the requested depth.
    Address { address: BoxAddress },
    /// In the box `prefix` but in none of its children at stage `stage`.
    Escaped { stage: usize, prefix: BoxAddress },
    Outside,
}

pub fn cantor_address(p: &GroupPoint, params: &CantorParams, depth: usize) -> CantorLocation {
    let g = h1();
    if gauge(&p.coords, params.lambda) > 1.0 {
        return CantorLocation::Outside;
    }
    let mut digits = Vec::new();
    let mut centre = g.identity();
    for k in 0..depth {
        let next = (1..=16).find(|&d| {
            let b = SourceBox {
                centre: child_centre(&g, &centre, d, k, params),
                depth: k + 1,
                half_sides: [0.0; 3],
            };
            b.contains(p, params)
        });
        match next {
            Some(d) => {
                centre = child_centre(&g, &centre, d, k, params);
                digits.push(d);
            }
            None => {
                return CantorLocation::Escaped {
                    stage: k + 1,
                    prefix: BoxAddress {
                        digits,
                        side: Side::Source,
                    },
                }
            }
        }
    }
    CantorLocation::Address {
        address: BoxAddress {
            digits,
            side: Side::Source,
        },
    }
}

/// Boundary margins of the first stage, measured on sampled points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub samples: usize,
    pub vertical_margin: f64,
    pub params_consistent: bool,
    /// Smallest horizontal gap between boxes with different horizontal centres.
    pub horizontal_min: f64,
    pub horizontal_threshold: f64,
    /// Smallest `|t(p^{-1} q)|`, `p` in a lowest box, `q` on the bottom face.
    pub bottom_min: f64,
    /// Smallest `|t(a^{-1} b)|` for boxes stacked one above the other.
    pub stacked_min: f64,
    pub violations: Vec<String>,
    pub pass: bool,
}

pub const BOTTOM_THRESHOLD: f64 = 6.0;
pub const STACKED_THRESHOLD: f64 = 14.0;

fn boundary_unit<R: Rng>(rng: &mut R) -> [f64; 3] {
    let mut u = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
    let face = rng.gen_range(0..3);
    u[face] = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    u
}

pub fn separation_audit(params: &CantorParams, samples: usize, seed: u64) -> SeparationReport {
    let g = h1();
    let mut rng = crate::rng::stream(seed, 0xca7);
    let boxes: Vec<SourceBox> = (1..=16)
        .map(|d| {
            source_box(
                &BoxAddress {
                    digits: vec![d],
                    side: Side::Source,
                },
                params,
            )
            .expect("valid digit")
        })
        .collect();
    let mut horizontal_min = f64::INFINITY;
    let mut bottom_min = f64::INFINITY;
    let mut stacked_min = f64::INFINITY;
    for _ in 0..samples {
        let i = rng.gen_range(0..16usize);
        let j = rng.gen_range(0..16usize);
        let p = boxes[i].from_unit(&boundary_unit(&mut rng), params);
        let q = boxes[j].from_unit(&boundary_unit(&mut rng), params);
        let (ci, cj) = (&boxes[i].centre.coords, &boxes[j].centre.coords);
        if ci[0] != cj[0] || ci[1] != cj[1] {
            let gap = (p.coords[0] - q.coords[0]).abs().max((p.coords[1] - q.coords[1]).abs());
            horizontal_min = horizontal_min.min(gap);
        }
        // Stacked neighbours: same horizontal centre, adjacent vertical slots.
        let slot = |k: usize| k >> 2;
        if ci[0] == cj[0] && ci[1] == cj[1] && slot(j) == slot(i) + 1 {
            let t = g.mul(&g.inv(&p), &q).coords[2];
            stacked_min = stacked_min.min(t.abs());
        }
        if slot(i) == 0 {
            let e = g.point_unchecked(&[rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), -params.lambda]);
            let t = g.mul(&g.inv(&p), &e).coords[2];
            bottom_min = bottom_min.min(t.abs());
        }
    }
    let horizontal_threshold = 1.0 - 2.0 * params.beta;
    let mut violations = Vec::new();
    if !params.is_consistent() {
        violations.push(format!("lambda (1/4 - beta^2) = {} instead of 20", params.vertical_margin()));
    }
    if horizontal_min < horizontal_threshold - 1e-12 {
        violations.push(format!("horizontal gap {horizontal_min} below {horizontal_threshold}"));
    }
    if bottom_min < BOTTOM_THRESHOLD {
        violations.push(format!("bottom face margin {bottom_min} below {BOTTOM_THRESHOLD}"));
    }
    if stacked_min < STACKED_THRESHOLD {
        violations.push(format!("stacked margin {stacked_min} below {STACKED_THRESHOLD}"));
    }
    SeparationReport {
        samples,
        vertical_margin: params.vertical_margin(),
        params_consistent: params.is_consistent(),
        horizontal_min,
        horizontal_threshold,
        bottom_min,
        stacked_min,
        pass: violations.is_empty(),
        violations,
    }
}

pub fn derive_params(epsilon: f64, beta: Option<f64>) -> Result<CantorParams, CantorError> {
    CantorParams::derive(epsilon, beta)
}

/// `CantorMap::new(params, depth).apply(p)`.
pub fn eval_map(p: &GroupPoint, params: &CantorParams, depth: usize) -> Result<[f64; 4], CantorError> {
    CantorMap::new(*params, depth).apply(p)
}

/// The map itself, truncated after `depth` stages.
///
/// Inside a box of the last stage the value is that box's anchor. In the
/// shell between a box and its children the value runs along the polygon
/// through the box anchor and the sixteen child anchors, driven by a collar
/// coordinate that is 0 away from the children and `v` on child `v`.
#[derive(Debug, Clone)]
pub struct CantorMap {
    pub params: CantorParams,
    pub depth: usize,
    source: Group,
    target: Group,
}

impl CantorMap {
    pub fn new(params: CantorParams, depth: usize) -> Self {
        CantorMap {
            params,
            depth,
            source: h1(),
            target: Group::euclidean(4),
        }
    }

    pub fn apply(&self, p: &GroupPoint) -> Result<[f64; 4], CantorError> {
        let par = &self.params;
        let g = &self.source;
        if gauge(&p.coords, par.lambda) > 1.0 + 1e-12 {
            return Err(CantorError::Outside(p.coords.to_vec()));
        }
        let w0 = par.collar();
        let mut centre = g.identity();
        let mut anchor = [0.0; 4];
        for n in 0..self.depth {
            let scale = par.beta.powi(n as i32 + 1);
            let mut best = (f64::INFINITY, 0u8, g.identity());
            for d in 1..=16u8 {
                let c = child_centre(g, &centre, d, n, par);
                let u = g.dil_inv(scale, &g.mul(&g.inv(&c), p));
                let v = gauge(&u.coords, par.lambda);
                if v < best.0 {
                    best = (v, d, c);
                }
            }
            let (v, d, c) = best;
            let step = par.gamma.powi(n as i32);
            if v <= 1.0 {
                let o = target_offset(d);
                for i in 0..4 {
                    anchor[i] += step * o[i];
                }
                centre = c;
                continue;
            }
            let w = v - 1.0;
            let s = if w < w0 { d as f64 * (1.0 - w / w0) } else { 0.0 };
            return Ok(polygon(&anchor, step, s));
        }
        Ok(anchor)
    }
}

/// Point at parameter `s` in `[0, 16]` on the polygon through `anchor` and the
/// child anchors `anchor + step * offset(v)`, `v = 1..16`.
fn polygon(anchor: &[f64; 4], step: f64, s: f64) -> [f64; 4] {
    let vertex = |v: usize| -> [f64; 4] {
        if v == 0 {
            *anchor
        } else {
            let o = target_offset(v as u8);
            [0, 1, 2, 3].map(|i| anchor[i] + step * o[i])
        }
    };
    let k = (s.floor() as usize).min(15);
    let f = s - k as f64;
    let (a, b) = (vertex(k), vertex(k + 1));
    [0, 1, 2, 3].map(|i| a[i] + f * (b[i] - a[i]))
}

impl LipschitzMap for CantorMap {
    fn source(&self) -> &Group {
        &self.source
    }
    fn target(&self) -> &Group {
        &self.target
    }
    fn eval(&self, p: &GroupPoint) -> Result<GroupPoint, MapError> {
        let v = self.apply(p).map_err(|e| MapError::Failed(e.to_string()))?;
        Ok(self.target.point_unchecked(&v))
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        None
    }
    fn name(&self) -> String {
        format!("cantor(eps={}, beta={}, depth={})", self.params.epsilon, self.params.beta, self.depth)
    }
}

/// Centres of all `16^depth` target boxes of the given depth, in
/// lexicographic address order.
pub fn image_cloud(params: &CantorParams, depth: usize) -> Vec<[f64; 4]> {
    let mut cloud = vec![[0.0; 4]];
    for k in 0..depth {
        let s = params.gamma.powi(k as i32);
        cloud = cloud
            .par_iter()
            .flat_map_iter(|c| {
                (1..=16u8).map(move |d| {
                    let o = target_offset(d);
                    [0, 1, 2, 3].map(|i| c[i] + s * o[i])
                })
            })
            .collect();
    }
    cloud
}

/// Source point with the given address: the centre of its deepest box.
pub fn source_point(digits: &[u8], params: &CantorParams) -> Result<GroupPoint, CantorError> {
    Ok(source_box(&BoxAddress::new(digits.to_vec(), Side::Source)?, params)?.centre)
}

/// Ratio band of the address-preserving map on random pairs of addresses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioBand {
    pub pairs: usize,
    pub min: f64,
    pub max: f64,
}

pub fn cantor_ratio_band(params: &CantorParams, depth: usize, pairs: usize, seed: u64) -> RatioBand {
    let g = h1();
    let e4 = Group::euclidean(4);
    let mut rng = crate::rng::stream(seed, 0xba4d);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let mut n = 0;
    for _ in 0..pairs {
        let a: Vec<u8> = (0..depth).map(|_| rng.gen_range(1..=16)).collect();
        let b: Vec<u8> = (0..depth).map(|_| rng.gen_range(1..=16)).collect();
        if a == b {
            continue;
        }
        let (pa, pb) = (source_point(&a, params).unwrap(), source_point(&b, params).unwrap());
        let ta = target_box(&BoxAddress { digits: a, side: Side::Target }, params).unwrap().centre;
        let tb = target_box(&BoxAddress { digits: b, side: Side::Target }, params).unwrap().centre;
        let r = e4.dist_coords(&ta, &tb) / g.dist(&pa, &pb);
        lo = lo.min(r);
        hi = hi.max(r);
        n += 1;
    }
    RatioBand { pairs: n, min: lo, max: hi }
}

/// Largest `|F p - F q| / d(p, q)` over pairs `q = p delta_s(u)` at random
/// small scales `s`.
pub fn lipschitz_scan(map: &CantorMap, pairs: usize, seed: u64) -> f64 {
    let g = &map.source;
    let e4 = &map.target;
    let lambda = map.params.lambda;
    let chunks = 64;
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = crate::rng::stream(seed, c as u64);
            let mut best = 0.0f64;
            for _ in 0..pairs.div_ceil(chunks) {
                let p = g.point_unchecked(&[
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-lambda..lambda),
                ]);
                let s = 10f64.powf(rng.gen_range(-4.0..-1.0));
                let u = g.point_unchecked(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
                let q = g.mul(&p, &g.dil(s, &u));
                let (Ok(fp), Ok(fq)) = (map.apply(&p), map.apply(&q)) else {
                    continue;
                };
                let d = g.dist(&p, &q);
                if d > 0.0 {
                    best = best.max(e4.dist_coords(&fp, &fq) / d);
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p2() -> CantorParams {
        CantorParams::derive(2.0, Some(0.25)).unwrap()
    }

    fn addr(d: &[u8]) -> BoxAddress {
        BoxAddress::new(d.to_vec(), Side::Source).unwrap()
    }

    #[test]
    fn parameters() {
        let p = CantorParams::derive(2.0, None).unwrap();
        assert!((p.gamma - 0.25).abs() < 1e-15);
        assert!((p2().lambda - 320.0 / 3.0).abs() < 1e-12);
        for eps in [0.5, 1.0, 2.0, 3.5] {
            let p = CantorParams::derive(eps, None).unwrap();
            assert!(p.gamma < 0.5 && p.is_consistent());
            assert!((p.target_dimension() - (4.0 - eps)).abs() < 1e-12);
        }
        assert!(CantorParams::derive(4.0, None).is_err());
        assert!(CantorParams::derive(0.0, None).is_err());
        assert!(CantorParams::derive(2.0, Some(0.5)).is_err());
        assert!(CantorParams::derive(2.0, Some(0.2)).is_err());
    }

    #[test]
    fn boxes() {
        let p = p2();
        let b0 = source_box(&addr(&[]), &p).unwrap();
        assert_eq!(b0.half_sides, [1.0, 1.0, p.lambda]);
        let b1 = source_box(&addr(&[1]), &p).unwrap();
        assert_eq!(b1.centre.coords.as_slice(), &[-0.5, -0.5, -0.75 * p.lambda]);
        assert_eq!(b1.half_sides, [0.25, 0.25, p.lambda / 16.0]);
        let t0 = target_box(&BoxAddress::new(vec![], Side::Target).unwrap(), &p).unwrap();
        assert_eq!((t0.centre, t0.half_side), ([0.0; 4], 1.0));
        let ts: Vec<TargetBox> = (1..=16)
            .map(|d| target_box(&BoxAddress::new(vec![d], Side::Target).unwrap(), &p).unwrap())
            .collect();
        for i in 0..16 {
            for j in i + 1..16 {
                let gap = (0..4)
                    .map(|k| (ts[i].centre[k] - ts[j].centre[k]).abs() - 2.0 * p.gamma)
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(gap >= 1.0 - 2.0 * p.gamma - 1e-12);
            }
        }
        assert_eq!(BoxAddress::new(vec![17], Side::Source), Err(CantorError::Digit(17)));
    }

    #[test]
    fn first_stage_boxes_are_disjoint() {
        let p = p2();
        let boxes: Vec<SourceBox> = (1..=16).map(|d| source_box(&addr(&[d]), &p).unwrap()).collect();
        let mut rng = crate::rng::stream(8, 0);
        for _ in 0..20_000 {
            let i = rng.gen_range(0..16);
            let u = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
            let q = boxes[i].from_unit(&u, &p);
            assert_eq!((0..16).filter(|&j| boxes[j].contains(&q, &p)).count(), 1);
        }
    }

    #[test]
    fn separation() {
        let r = separation_audit(&p2(), 10_000, 1);
        assert!(r.pass, "{r:?}");
        assert!(r.horizontal_min >= 0.5 - 1e-12);
        let near = CantorParams::derive(2.0, Some(0.499)).unwrap();
        assert!(separation_audit(&near, 2000, 1).horizontal_threshold < 0.01);
        let halved = p2().with_lambda(p2().lambda / 2.0);
        assert!(!separation_audit(&halved, 2000, 1).pass);
        let crushed = p2().with_lambda(p2().lambda / 8.0);
        assert!(separation_audit(&crushed, 10_000, 1).bottom_min < BOTTOM_THRESHOLD);
    }

    #[test]
    fn addresses() {
        let p = p2();
        let g = h1();
        assert!(matches!(
            cantor_address(&g.identity(), &p, 3),
            CantorLocation::Escaped { stage: 1, .. }
        ));
        let c3 = source_box(&addr(&[3]), &p).unwrap().centre;
        match cantor_address(&c3, &p, 1) {
            CantorLocation::Address { address } => assert_eq!(address.digits, vec![3]),
            other => panic!("{other:?}"),
        }
        let deep = source_point(&[5, 12, 1, 9, 16, 2], &p).unwrap();
        let mut prev: Vec<u8> = Vec::new();
        for depth in 1..=6 {
            let CantorLocation::Address { address } = cantor_address(&deep, &p, depth) else {
                panic!()
            };
            assert!(address.digits.starts_with(&prev));
            prev = address.digits;
        }
        assert_eq!(prev, vec![5, 12, 1, 9, 16, 2]);
    }

    #[test]
    fn map_values() {
        let p = p2();
        let f = CantorMap::new(p, 5);
        let g = h1();
        for b in [[1.0, 0.3, 0.0], [-0.2, -1.0, 5.0], [0.1, 0.4, p.lambda]] {
            assert_eq!(f.apply(&g.point_unchecked(&b)).unwrap(), [0.0; 4]);
        }
        assert!(f.apply(&g.point_unchecked(&[1.5, 0.0, 0.0])).is_err());
        let deep = source_point(&[7; 8], &p).unwrap();
        let v = f.apply(&deep).unwrap();
        let limit = target_offset(7).map(|o| o / (1.0 - p.gamma));
        let err = (0..4).map(|i| (v[i] - limit[i]).abs()).fold(0.0, f64::max);
        assert!(err <= p.gamma.powi(5) * 2.0, "{err}");
    }

    #[test]
    fn continuity_across_box_boundaries() {
        let p = p2();
        let f = CantorMap::new(p, 4);
        let g = h1();
        let b = source_box(&addr(&[6, 11]), &p).unwrap();
        for u in [[1.0, 0.2, 0.1], [-0.3, 1.0, -0.9], [0.5, 0.5, 1.0]] {
            let inner = b.from_unit(&[u[0] * (1.0 - 1e-9), u[1] * (1.0 - 1e-9), u[2] * (1.0 - 1e-9)], &p);
            let outer = b.from_unit(&[u[0] * (1.0 + 1e-9), u[1] * (1.0 + 1e-9), u[2] * (1.0 + 1e-9)], &p);
            let (a, c) = (f.apply(&inner).unwrap(), f.apply(&outer).unwrap());
            let gap = (0..4).map(|i| (a[i] - c[i]).abs()).fold(0.0, f64::max);
            assert!(gap < 1e-6, "{gap}");
            assert!(g.dist(&inner, &outer) < 1e-3);
        }
    }

    #[test]
    fn digit_scaling_of_images() {
        let p = p2();
        let mut rng = crate::rng::stream(2, 0);
        for m in 1..=4 {
            let mut ratios = Vec::new();
            for _ in 0..50 {
                let mut a: Vec<u8> = (0..6).map(|_| rng.gen_range(1..=16)).collect();
                let mut b = a.clone();
                b[m - 1] = (a[m - 1] % 16) + 1;
                for k in m..6 {
                    a[k] = rng.gen_range(1..=16);
                    b[k] = rng.gen_range(1..=16);
                }
                let ta = target_box(&BoxAddress::new(a, Side::Target).unwrap(), &p).unwrap().centre;
                let tb = target_box(&BoxAddress::new(b, Side::Target).unwrap(), &p).unwrap().centre;
                let d = (0..4).map(|i| (ta[i] - tb[i]).abs()).fold(0.0, f64::max);
                ratios.push(d / p.gamma.powi(m as i32 - 1));
            }
            assert!(ratios.iter().all(|r| (0.3..=1.5).contains(r)), "{m}: {ratios:?}");
        }
    }

    #[test]
    fn image_cloud_counts() {
        let p = p2();
        let cloud = image_cloud(&p, 3);
        assert_eq!(cloud.len(), 4096);
        assert_eq!(crate::dimension::box_count(&cloud, p.gamma.powi(3)), 4096);
    }
}
