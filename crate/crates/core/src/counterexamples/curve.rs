//! Quadrant-subdivision space-filling curve on `[0, 1]` with the square root
//! metric.
//!
//! The unit square is split into four quadrants visited in the order
//! lower-left, upper-left, upper-right, lower-right. Each quadrant carries an
//! affine copy of the whole curve, recorded in a [`CurveTable`]. The curve
//! starts at `(0, 0)` and ends at `(1, 0)`. At finite depth the remaining
//! fraction of a cell is laid along the chord from that cell's entry corner
//! to its exit corner, so every truncation is continuous.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dimension::{fit_counts, DimensionFit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("parameter {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("collision search needs depth >= 4, got {0}")]
    DepthTooSmall(usize),
    #[error("no pair with |s - t| >= 1/4 and image distance <= {tolerance} at depth {depth}")]
    NoCollision { depth: usize, tolerance: f64 },
    #[error("bi-Lipschitz constants must be positive, got {0}")]
    BadConstant(f64),
}

/// Depth used when a curve value is needed "exactly".
pub const EVAL_DEPTH: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub m: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl Affine {
    fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.m[0][0] * p[0] + self.m[0][1] * p[1] + self.b[0],
            self.m[1][0] * p[0] + self.m[1][1] * p[1] + self.b[1],
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveTable {
    pub quadrants: [Affine; 4],
}

impl CurveTable {
    pub fn hilbert() -> Self {
        CurveTable {
            quadrants: [
                Affine { m: [[0.0, 0.5], [0.5, 0.0]], b: [0.0, 0.0] },
                Affine { m: [[0.5, 0.0], [0.0, 0.5]], b: [0.0, 0.5] },
                Affine { m: [[0.5, 0.0], [0.0, 0.5]], b: [0.5, 0.5] },
                Affine { m: [[0.0, -0.5], [-0.5, 0.0]], b: [1.0, 0.5] },
            ],
        }
    }

    /// The second quadrant is sent onto the third, so the upper-left quarter
    /// is never visited.
    pub fn broken() -> Self {
        let mut t = Self::hilbert();
        t.quadrants[1] = t.quadrants[2];
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceFillingCurve {
    pub table: CurveTable,
    pub depth: usize,
}

impl SpaceFillingCurve {
    pub fn new(depth: usize) -> Self {
        SpaceFillingCurve { table: CurveTable::hilbert(), depth }
    }

    pub fn with_table(table: CurveTable, depth: usize) -> Self {
        SpaceFillingCurve { table, depth }
    }

    pub fn eval(&self, s: f64) -> Result<[f64; 2], CurveError> {
        if !(0.0..=1.0).contains(&s) {
            return Err(CurveError::OutOfRange(s));
        }
        Ok(self.eval_unchecked(s))
    }

    pub(crate) fn eval_unchecked(&self, s: f64) -> [f64; 2] {
        let mut digits = Vec::with_capacity(self.depth);
        let mut r = s;
        for _ in 0..self.depth {
            let q = ((r * 4.0).floor() as usize).min(3);
            r = r * 4.0 - q as f64;
            digits.push(q);
        }
        let mut p = [r.clamp(0.0, 1.0), 0.0];
        for &q in digits.iter().rev() {
            p = self.table.quadrants[q].apply(p);
        }
        p
    }

    /// Depth-`d` cell `(ix, iy)` whose sub-curve carries `s`, found from the
    /// image of the square's centre under the first `d` quadrant maps.
    pub fn cell(&self, s: f64, d: usize) -> (usize, usize) {
        let mut digits = Vec::with_capacity(d);
        let mut r = s;
        for _ in 0..d {
            let q = ((r * 4.0).floor() as usize).min(3);
            r = r * 4.0 - q as f64;
            digits.push(q);
        }
        let mut p = [0.5, 0.5];
        for &q in digits.iter().rev() {
            p = self.table.quadrants[q].apply(p);
        }
        let n = (1usize << d) as f64;
        (((p[0] * n) as usize).min((1 << d) - 1), ((p[1] * n) as usize).min((1 << d) - 1))
    }
}

pub fn space_filling_curve(s: f64, depth: usize) -> Result<[f64; 2], CurveError> {
    SpaceFillingCurve::new(depth).eval(s)
}

/// Visit count of every depth-`d` cell over the `4^d` interval midpoints,
/// row-major in `(iy, ix)`. The midpoint of interval `i` lands on the centre
/// of its cell, so the count is exact.
pub fn dyadic_visits(table: &CurveTable, d: usize) -> Vec<u32> {
    let curve = SpaceFillingCurve::with_table(table.clone(), d + 1);
    let n = 1usize << d;
    let cells = n * n;
    let mut counts = vec![0u32; cells];
    for i in 0..cells {
        let s = (i as f64 + 0.5) / cells as f64;
        let p = curve.eval_unchecked(s);
        let (ix, iy) = ((p[0] * n as f64) as usize, (p[1] * n as f64) as usize);
        counts[iy.min(n - 1) * n + ix.min(n - 1)] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub depth: usize,
    pub samples: usize,
    pub expected: f64,
    pub sigma: f64,
    /// Largest `|count - expected| / sigma` over cells.
    pub worst_sigma: f64,
    pub cells_outside: usize,
    pub pass: bool,
}

/// Monte Carlo preimage measure of every depth-`d` cell against `4^-d`,
/// with a 3 sigma band.
pub fn measure_preservation_check(table: &CurveTable, depth: usize, samples: usize, seed: u64) -> MeasureReport {
    let curve = SpaceFillingCurve::with_table(table.clone(), depth + 1);
    let n = 1usize << depth;
    let mut counts = vec![0usize; n * n];
    let mut rng = crate::rng::stream(seed, 0x5fc);
    for _ in 0..samples {
        let (ix, iy) = curve.cell(rng.gen_range(0.0..1.0), depth);
        counts[iy * n + ix] += 1;
    }
    let p = 1.0 / (n * n) as f64;
    let expected = samples as f64 * p;
    let sigma = (samples as f64 * p * (1.0 - p)).sqrt();
    let devs: Vec<f64> = counts
        .iter()
        .map(|&c| if sigma > 0.0 { (c as f64 - expected).abs() / sigma } else { (c as f64 - expected).abs() })
        .collect();
    let cells_outside = devs.iter().filter(|&&d| d > 3.0).count();
    MeasureReport {
        depth,
        samples,
        expected,
        sigma,
        worst_sigma: devs.iter().cloned().fold(0.0, f64::max),
        cells_outside,
        pass: cells_outside == 0,
    }
}

/// Largest `|F(s) - F(t)| / |s - t|^(1/2)` over random pairs.
pub fn snowflake_lipschitz(curve: &SpaceFillingCurve, pairs: usize, seed: u64) -> f64 {
    let chunks = 32;
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = crate::rng::stream(seed, 0x1000 + c as u64);
            let mut best = 0.0f64;
            for _ in 0..pairs.div_ceil(chunks) {
                let s: f64 = rng.gen_range(0.0..1.0);
                let t = if rng.gen::<bool>() {
                    rng.gen_range(0.0..1.0)
                } else {
                    (s + 10f64.powf(rng.gen_range(-8.0..-1.0)) * if rng.gen::<bool>() { 1.0 } else { -1.0 }).clamp(0.0, 1.0)
                };
                if s == t {
                    continue;
                }
                let (a, b) = (curve.eval_unchecked(s), curve.eval_unchecked(t));
                best = best.max(euclid(a, b) / (s - t).abs().sqrt());
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

pub(crate) fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Collision {
    pub s: f64,
    pub t: f64,
    pub image_distance: f64,
}

/// Searches the parameters `j / 4^depth` for two that are at least `1/4`
/// apart with images within `2^(1 - depth)`; the closest such pair wins.
pub fn collision_witness_for<F: Fn(f64) -> [f64; 2]>(f: F, depth: usize) -> Result<Collision, CurveError> {
    if depth < 4 {
        return Err(CurveError::DepthTooSmall(depth));
    }
    let tolerance = 2f64.powi(1 - depth as i32);
    let n = 1usize << (2 * depth);
    let pts: Vec<(f64, [f64; 2])> = (0..=n).map(|j| (j as f64 / n as f64, f(j as f64 / n as f64))).collect();
    let key = |p: [f64; 2]| ((p[0] / tolerance).floor() as i64, (p[1] / tolerance).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, (_, p)) in pts.iter().enumerate() {
        grid.entry(key(*p)).or_default().push(i);
    }
    let mut best: Option<Collision> = None;
    for (i, (s, p)) in pts.iter().enumerate() {
        let (kx, ky) = key(*p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(cell) = grid.get(&(kx + dx, ky + dy)) else { continue };
                for &j in cell {
                    let (t, q) = pts[j];
                    if j <= i || t - s < 0.25 {
                        continue;
                    }
                    let d = euclid(*p, q);
                    if d <= tolerance && best.map_or(true, |b| d < b.image_distance) {
                        best = Some(Collision { s: *s, t, image_distance: d });
                    }
                }
            }
        }
    }
    best.ok_or(CurveError::NoCollision { depth, tolerance })
}

pub fn collision_witness(depth: usize) -> Result<Collision, CurveError> {
    let curve = SpaceFillingCurve::new(depth);
    collision_witness_for(|s| curve.eval_unchecked(s), depth)
}

/// `F(1/6) = F(1/2) = (1/2, 1/2)` and the copy of this pair inside every
/// cell of depth at most `max_depth`.
pub fn collision_pairs(max_depth: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for m in 0..=max_depth {
        let w = 4f64.powi(-(m as i32));
        for i in 0..(1usize << (2 * m)) {
            let base = i as f64 * w;
            out.push((base + w / 6.0, base + w / 2.0));
        }
    }
    out
}

/// Box-counting dimension of an evenly spaced net of `[0, 1]` under the square
/// root metric: a ball of radius `r` is an interval of length `r^2`.
pub fn snowflake_dimension(net: usize, scales: &[f64]) -> Result<DimensionFit, crate::dimension::DimensionError> {
    let counts: Vec<(f64, usize)> = scales
        .iter()
        .map(|&r| {
            let len = r * r;
            let mut cells: Vec<i64> = (0..net).map(|i| ((i as f64 / (net - 1).max(1) as f64) / len).floor() as i64).collect();
            cells.dedup();
            (r, cells.len())
        })
        .collect();
    fit_counts(&counts)
}

/// A finite union of closed subintervals of `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntervalSet {
    pub intervals: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn new(mut intervals: Vec<(f64, f64)>) -> Self {
        intervals.retain(|(a, b)| b >= a);
        for iv in intervals.iter_mut() {
            *iv = (iv.0.max(0.0), iv.1.min(1.0));
        }
        intervals.retain(|(a, b)| b >= a);
        intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (a, b) in intervals {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        IntervalSet { intervals: merged }
    }

    pub fn full() -> Self {
        IntervalSet::new(vec![(0.0, 1.0)])
    }

    pub fn measure(&self) -> f64 {
        self.intervals.iter().fold(0.0, |m, (a, b)| m + (b - a))
    }

    pub fn contains(&self, s: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| a <= s && s <= b)
    }

    /// Closest point of the set to `s`.
    pub fn nearest(&self, s: f64) -> Option<f64> {
        self.intervals
            .iter()
            .map(|&(a, b)| s.clamp(a, b))
            .min_by(|x, y| (x - s).abs().total_cmp(&(y - s).abs()))
    }

    /// `self` minus `other`.
    pub fn difference(&self, other: &IntervalSet) -> IntervalSet {
        let mut out = Vec::new();
        for &(a, b) in &self.intervals {
            let mut pieces = vec![(a, b)];
            for &(c, d) in &other.intervals {
                pieces = pieces
                    .into_iter()
                    .flat_map(|(x, y)| {
                        let mut v = Vec::new();
                        if c > x {
                            v.push((x, y.min(c)));
                        }
                        if d < y {
                            v.push((x.max(d), y));
                        }
                        v.into_iter().filter(|(p, q)| q > p)
                    })
                    .collect();
            }
            out.extend(pieces);
        }
        IntervalSet::new(out)
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        let mut v = self.intervals.clone();
        v.extend(other.intervals.iter().cloned());
        IntervalSet::new(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub y: f64,
    pub y_prime: f64,
    /// `|F(y) - F(y')| / |y - y'|^(1/2)`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantScan {
    pub l: f64,
    pub violation: Option<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub measure: f64,
    /// Below one half the density argument does not apply.
    pub sparse: bool,
    pub witnesses: usize,
    /// Witness pairs with no point of the set in the steering radius of one of
    /// the two collision points.
    pub escaped_witnesses: usize,
    pub scans: Vec<ConstantScan>,
    pub all_defeated: bool,
}

/// Looks for `y, y'` in `set` with `|F(y) - F(y')| < |y - y'|^(1/2) / L`.
///
/// Each collision pair is approached by the nearest points of the set; a pair
/// counts as escaped when the set keeps away from one of its two points by
/// more than `radius`.
pub fn bilip_failure_scan(set: &IntervalSet, ls: &[f64], witness_depth: usize, radius: f64) -> Result<ScanReport, CurveError> {
    if let Some(&l) = ls.iter().find(|l| !(**l > 0.0)) {
        return Err(CurveError::BadConstant(l));
    }
    let curve = SpaceFillingCurve::new(EVAL_DEPTH);
    let witnesses = collision_pairs(witness_depth);
    let mut escaped = 0;
    let mut best: Option<Violation> = None;
    for &(s, t) in &witnesses {
        let (Some(y), Some(y2)) = (set.nearest(s), set.nearest(t)) else {
            escaped += 1;
            continue;
        };
        if (y - s).abs() > radius || (y2 - t).abs() > radius || y == y2 {
            escaped += 1;
            continue;
        }
        let ratio = euclid(curve.eval_unchecked(y), curve.eval_unchecked(y2)) / (y - y2).abs().sqrt();
        if best.as_ref().map_or(true, |b| ratio < b.ratio) {
            best = Some(Violation { y, y_prime: y2, ratio });
        }
    }
    let scans: Vec<ConstantScan> = ls
        .iter()
        .map(|&l| ConstantScan {
            l,
            violation: best.clone().filter(|v| v.ratio < 1.0 / l),
        })
        .collect();
    let measure = set.measure();
    Ok(ScanReport {
        measure,
        sparse: measure < 0.5,
        witnesses: witnesses.len(),
        escaped_witnesses: escaped,
        all_defeated: scans.iter().all(|s| s.violation.is_some()),
        scans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_midpoint() {
        let f = SpaceFillingCurve::new(10);
        assert_eq!(f.eval(0.0).unwrap(), [0.0, 0.0]);
        assert_eq!(f.eval(1.0).unwrap(), [1.0, 0.0]);
        let left = f.eval(0.5 - 1e-12).unwrap();
        let right = f.eval(0.5).unwrap();
        assert!(euclid(left, right) <= 2f64.powi(-9));
        assert!(f.eval(1.5).is_err());
        let exact = SpaceFillingCurve::new(EVAL_DEPTH);
        assert!(euclid(exact.eval_unchecked(1.0 / 6.0), [0.5, 0.5]) < 1e-6);
        assert!(euclid(exact.eval_unchecked(0.5), [0.5, 0.5]) < 1e-12);
    }

    #[test]
    fn dyadic_bijectivity() {
        for d in 0..=6 {
            assert!(dyadic_visits(&CurveTable::hilbert(), d).iter().all(|&c| c == 1), "{d}");
        }
        assert!(dyadic_visits(&CurveTable::broken(), 2).iter().any(|&c| c == 0));
    }

    #[test]
    fn measure_audit() {
        let r = measure_preservation_check(&CurveTable::hilbert(), 2, 100_000, 1);
        assert!(r.pass, "{r:?}");
        assert!(measure_preservation_check(&CurveTable::hilbert(), 0, 500, 1).pass);
        assert!(!measure_preservation_check(&CurveTable::broken(), 2, 100_000, 1).pass);
    }

    #[test]
    fn collisions() {
        let c = collision_witness(8).unwrap();
        assert!(c.t - c.s >= 0.25 && c.image_distance <= 2f64.powi(-7), "{c:?}");
        assert!(matches!(collision_witness_for(|s| [s, 0.0], 6), Err(CurveError::NoCollision { .. })));
        assert!(collision_witness(3).is_err());
    }

    #[test]
    fn failure_scan() {
        let r = bilip_failure_scan(&IntervalSet::full(), &[1.0, 10.0, 100.0], 2, 1e-9).unwrap();
        assert!(r.all_defeated && r.escaped_witnesses == 0, "{r:?}");
        let holes = IntervalSet::full().difference(&IntervalSet::new(vec![(1.0 / 6.0 - 0.01, 1.0 / 6.0 + 0.01)]));
        let r = bilip_failure_scan(&holes, &[100.0], 2, 1e-9).unwrap();
        assert!(r.escaped_witnesses >= 1 && r.all_defeated);
        let tiny = IntervalSet::new(vec![(0.3, 0.31)]);
        let r = bilip_failure_scan(&tiny, &[1.0], 2, 1e-9).unwrap();
        assert!(r.sparse && r.escaped_witnesses == r.witnesses && !r.all_defeated);
        assert_eq!(bilip_failure_scan(&IntervalSet::full(), &[0.0], 2, 1e-9), Err(CurveError::BadConstant(0.0)));
    }

    #[test]
    fn snowflake_dimension_is_two() {
        let scales: Vec<f64> = (1..=8).map(|k| 2f64.powi(-k)).collect();
        let fit = snowflake_dimension(1_000_001, &scales).unwrap();
        assert!((fit.dimension - 2.0).abs() < 0.1, "{fit:?}");
    }

    #[test]
    fn interval_algebra() {
        let a = IntervalSet::new(vec![(0.5, 0.7), (0.0, 0.2), (0.1, 0.3)]);
        assert_eq!(a.intervals, vec![(0.0, 0.3), (0.5, 0.7)]);
        let d = IntervalSet::full().difference(&a);
        assert!((d.measure() - 0.5).abs() < 1e-12);
        assert!((d.union(&a).measure() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn snowflake_holder(s in 0.0f64..1.0, t in 0.0f64..1.0) {
            let f = SpaceFillingCurve::new(12);
            prop_assume!(s != t);
            let r = euclid(f.eval_unchecked(s), f.eval_unchecked(t)) / (s - t).abs().sqrt();
            prop_assert!(r <= 4.0);
        }
    }
}
