//! The Grushin plane: `R^2` with length element `sqrt(dx^2 + x^-2 dy^2)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::curve::{euclid, SpaceFillingCurve, EVAL_DEPTH};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrushinError {
    #[error("the path search needs a positive budget")]
    Budget,
    #[error("point ({0}, {1}) is outside the neighbourhood")]
    Outside(f64, f64),
    #[error("neighbourhood width must be positive, got {0}")]
    Width(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrushinPoint {
    pub x: f64,
    pub y: f64,
}

impl GrushinPoint {
    pub fn new(x: f64, y: f64) -> Self {
        GrushinPoint { x, y }
    }

    pub fn on_axis(&self) -> bool {
        self.x == 0.0
    }
}

const GAUSS: [(f64, f64); 8] = [
    (-0.9602898564975363, 0.1012285362903763),
    (-0.7966664774136267, 0.2223810344533745),
    (-0.5255324099163290, 0.3137066458778873),
    (-0.1834346424956498, 0.3626837833783620),
    (0.1834346424956498, 0.3626837833783620),
    (0.5255324099163290, 0.3137066458778873),
    (0.7966664774136267, 0.2223810344533745),
    (0.9602898564975363, 0.1012285362903763),
];

/// Length of the straight segment `a -> b`. Segments that leave or cross the
/// axis with a vertical component have infinite length.
pub fn segment_length(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = b[0] - a[0];
    let dy = (b[1] - a[1]).abs();
    if dy == 0.0 {
        return dx.abs();
    }
    if a[0] * b[0] <= 0.0 {
        return f64::INFINITY;
    }
    let (u0, u1) = (a[0].abs(), b[0].abs());
    let da = dx.abs();
    if da < 1e-3 * u0.min(u1) {
        // The closed form cancels here; x is nearly constant, so quadrature is
        // exact to rounding.
        return GAUSS
            .iter()
            .map(|&(t, w)| {
                let x = 0.5 * (u0 + u1) + 0.5 * t * (u1 - u0);
                0.5 * w * (da * da + dy * dy / (x * x)).sqrt()
            })
            .sum();
    }
    let prim = |u: f64| {
        let r = (da * da * u * u + dy * dy).sqrt();
        r - dy * ((dy + r) / u).ln()
    };
    (prim(u1) - prim(u0)).abs() / da
}

pub fn path_length(path: &[[f64; 2]]) -> f64 {
    path.windows(2).map(|w| segment_length(w[0], w[1])).sum()
}

/// `max(|dx|, min_X max(|dy| / X, 2X - |x_p| - |x_q|))`: a path that reaches
/// height `|x| = X` at most spends `|dy| / X` vertically and at least
/// `2X - |x_p| - |x_q|` getting there and back.
pub fn grushin_lower_bound(p: GrushinPoint, q: GrushinPoint) -> f64 {
    let dx = (p.x - q.x).abs();
    let dy = (p.y - q.y).abs();
    if dy == 0.0 {
        return dx;
    }
    let a = p.x.abs() + q.x.abs();
    let m = p.x.abs().max(q.x.abs());
    let x = ((a + (a * a + 8.0 * dy).sqrt()) / 4.0).max(m);
    dx.max(dy / x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceInterval {
    pub lower: f64,
    pub upper: f64,
    pub path: Vec<[f64; 2]>,
}

pub const PATH_NODES: usize = 24;
pub const STARTS: usize = 6;

/// Both endpoints with `x >= 0`. Nodes next to an axis endpoint keep that
/// endpoint's height so the path leaves the axis horizontally.
fn optimise_same_side(p: [f64; 2], q: [f64; 2], budget: usize, seed: u64) -> (f64, Vec<[f64; 2]>) {
    let dy = (q[1] - p[1]).abs();
    let scale = p[0].max(q[0]).max(dy.sqrt()).max((q[0] - p[0]).abs()).max(1e-300);
    let factors = [0.6, 0.8, 1.0, 1.2, 1.5, 2.0];
    let starts: Vec<(f64, Vec<[f64; 2]>)> = (0..STARTS)
        .into_par_iter()
        .map(|k| {
            let mut rng = crate::rng::stream(seed, 0x6a00 + k as u64);
            let w = if dy > 0.0 { dy.sqrt() * factors[k % factors.len()] } else { 0.0 };
            let corners = [p, [p[0].max(w), p[1]], [q[0].max(w), q[1]], q];
            let mut path = polyline_nodes(&corners, PATH_NODES + 2);
            for node in path.iter_mut().take(PATH_NODES + 1).skip(1) {
                node[0] = (node[0] + 0.02 * scale * rng.gen_range(-1.0..1.0)).max(1e-9 * scale);
            }
            pin(&mut path, p, q);
            descend(&mut path, p, q, budget, 0.1 * scale)
        })
        .collect();
    starts
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one start")
}

fn pin(path: &mut [[f64; 2]], p: [f64; 2], q: [f64; 2]) {
    let n = path.len();
    if p[0] == 0.0 {
        path[1][1] = p[1];
    }
    if q[0] == 0.0 {
        path[n - 2][1] = q[1];
    }
}

fn polyline_nodes(corners: &[[f64; 2]], count: usize) -> Vec<[f64; 2]> {
    let lens: Vec<f64> = corners.windows(2).map(|w| euclid(w[0], w[1])).collect();
    let total: f64 = lens.iter().sum();
    if total == 0.0 {
        return vec![corners[0]; count];
    }
    (0..count)
        .map(|i| {
            let mut t = total * i as f64 / (count - 1) as f64;
            for (k, &l) in lens.iter().enumerate() {
                if t <= l || k == lens.len() - 1 {
                    let f = if l > 0.0 { (t / l).min(1.0) } else { 0.0 };
                    let (a, b) = (corners[k], corners[k + 1]);
                    return [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])];
                }
                t -= l;
            }
            *corners.last().unwrap()
        })
        .collect()
}

const DIRECTIONS: [[f64; 2]; 4] = [[1.0, 0.0], [0.0, 1.0], [0.7071067811865476, 0.7071067811865476], [0.7071067811865476, -0.7071067811865476]];

/// Pattern search on interior nodes with one adaptive step per node: a
/// successful move grows it, a sweep without one shrinks it. Each sweep costs
/// one unit of budget.
fn descend(path: &mut Vec<[f64; 2]>, p: [f64; 2], q: [f64; 2], budget: usize, step0: f64) -> (f64, Vec<[f64; 2]>) {
    let n = path.len();
    let mut steps = vec![step0; n];
    for _ in 0..budget {
        for i in 1..n - 1 {
            let pinned = (i == 1 && p[0] == 0.0) || (i == n - 2 && q[0] == 0.0);
            let local = |pth: &[[f64; 2]]| segment_length(pth[i - 1], pth[i]) + segment_length(pth[i], pth[i + 1]);
            let mut moved = false;
            for dir in DIRECTIONS {
                if pinned && dir[1] != 0.0 {
                    continue;
                }
                let step = steps[i];
                let old = path[i];
                let before = local(path);
                for sign in [1.0, -1.0] {
                    path[i] = [old[0] + sign * step * dir[0], old[1] + sign * step * dir[1]];
                    if local(path) < before {
                        moved = true;
                        break;
                    }
                    path[i] = old;
                }
            }
            steps[i] *= if moved { 1.5 } else { 0.5 };
        }
    }
    (path_length(path), path.clone())
}

/// Upper bound from an optimised polyline and the lower bound of
/// [`grushin_lower_bound`]. `budget` is the number of descent sweeps per start.
pub fn grushin_distance_estimate(p: GrushinPoint, q: GrushinPoint, budget: usize, seed: u64) -> Result<DistanceInterval, GrushinError> {
    if budget == 0 {
        return Err(GrushinError::Budget);
    }
    let lower = grushin_lower_bound(p, q);
    if p == q {
        return Ok(DistanceInterval { lower: 0.0, upper: 0.0, path: vec![[p.x, p.y]] });
    }
    let (upper, path) = if p.x * q.x >= 0.0 {
        let s = if p.x < 0.0 || q.x < 0.0 { -1.0 } else { 1.0 };
        let (len, path) = optimise_same_side([s * p.x, p.y], [s * q.x, q.y], budget, seed);
        (len, path.into_iter().map(|v| [s * v[0], v[1]]).collect())
    } else {
        // Opposite sides: cross the axis horizontally at some height.
        let (lo, hi) = (p.y.min(q.y), p.y.max(q.y));
        (0..=4)
            .map(|k| {
                let yc = lo + (hi - lo) * k as f64 / 4.0;
                let (a, pa) = optimise_same_side([p.x.abs(), p.y], [0.0, yc], budget, seed ^ k);
                let (b, pb) = optimise_same_side([0.0, yc], [q.x.abs(), q.y], budget, seed ^ (k + 16));
                let sp = p.x.signum();
                let mut path: Vec<[f64; 2]> = pa.into_iter().map(|v| [sp * v[0], v[1]]).collect();
                path.extend(pb.into_iter().skip(1).map(|v| [-sp * v[0], v[1]]));
                (a + b, path)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("five crossings")
    };
    Ok(DistanceInterval { lower, upper: upper.max(lower), path })
}

/// The curve on the axis segment `{0} x [0, 1]`, extended to
/// `U_eps = (-eps, eps) x (-eps, 1 + eps)`.
///
/// The axis point `(0, s)` is identified with `s`. Off the axis the value
/// blends the depth-`m` and depth-`m+1` curve polygons at height
/// `clamp(y, 0, 1)`, where `m = log2(1 / |x|)`; the polygon at depth `m`
/// moves `2^m` per unit of `y`, which one unit of Grushin length at
/// distance `|x|` from the axis can afford.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionMap {
    pub epsilon: f64,
}

impl ExtensionMap {
    pub fn new(epsilon: f64) -> Result<Self, GrushinError> {
        if !(epsilon > 0.0) {
            return Err(GrushinError::Width(epsilon));
        }
        Ok(ExtensionMap { epsilon })
    }

    pub fn contains(&self, p: GrushinPoint) -> bool {
        p.x.abs() < self.epsilon && p.y > -self.epsilon && p.y < 1.0 + self.epsilon
    }

    pub fn eval(&self, p: GrushinPoint) -> Result<[f64; 2], GrushinError> {
        if !self.contains(p) {
            return Err(GrushinError::Outside(p.x, p.y));
        }
        Ok(self.eval_unchecked(p))
    }

    fn eval_unchecked(&self, p: GrushinPoint) -> [f64; 2] {
        let s = p.y.clamp(0.0, 1.0);
        if p.x == 0.0 {
            return SpaceFillingCurve::new(EVAL_DEPTH).eval_unchecked(s);
        }
        let m = (1.0 / p.x.abs()).log2().clamp(0.0, (EVAL_DEPTH - 1) as f64);
        let k = m.floor() as usize;
        let f = m - k as f64;
        let a = SpaceFillingCurve::new(k).eval_unchecked(s);
        let b = SpaceFillingCurve::new(k + 1).eval_unchecked(s);
        [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]
    }
}

pub fn grushin_extension_map(p: GrushinPoint, epsilon: f64) -> Result<[f64; 2], GrushinError> {
    ExtensionMap::new(epsilon)?.eval(p)
}

/// Largest `|G p - G q| / d_lower(p, q)` over random nearby pairs in
/// `U_eps`. Dividing by the lower bound makes this an overestimate.
pub fn extension_lipschitz_scan(map: &ExtensionMap, pairs: usize, seed: u64) -> f64 {
    let e = map.epsilon;
    let chunks = 32;
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = crate::rng::stream(seed, 0x9e00 + c as u64);
            let mut best = 0.0f64;
            for _ in 0..pairs.div_ceil(chunks) {
                let x = if rng.gen::<f64>() < 0.2 { 0.0 } else { e * 10f64.powf(rng.gen_range(-6.0..0.0)) * if rng.gen::<bool>() { 1.0 } else { -1.0 } };
                let p = GrushinPoint::new(x * 0.999, rng.gen_range(-e..1.0 + e));
                let r = 10f64.powf(rng.gen_range(-6.0..-1.0));
                let q = GrushinPoint::new(p.x + r * rng.gen_range(-1.0..1.0), p.y + r * rng.gen_range(-1.0..1.0));
                if !map.contains(q) {
                    continue;
                }
                let d = grushin_lower_bound(p, q);
                if d > 0.0 {
                    best = best.max(euclid(map.eval_unchecked(p), map.eval_unchecked(q)) / d);
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}
