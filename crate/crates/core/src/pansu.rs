//! Numerical Pansu differentials.
//!
//! For a map `F` the difference quotient at `g` in direction `g'` is
//!
//! ```text
//! q_s = delta_{1/s}( F(g)^{-1} F(g delta_s g') )
//! ```
//!
//! and the Pansu differential is its limit as `s -> 0`. The horizontal block of
//! that homomorphism is the matrix `MF(g)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::{Group, GroupKind, GroupPoint};
use crate::maps::{AffineMap, Homomorphism, LipschitzMap, MapError};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
/// Deviation allowed before two differentials or map values count as different.
pub const AGREEMENT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PansuError {
    #[error("direction must be a nonzero point of the source group")]
    ZeroDirection,
    #[error("step schedule must contain positive steps in decreasing order")]
    BadSchedule,
    #[error("horizontal map does not extend: bracket condition fails on basis pair ({i}, {j})")]
    NotExtendable { i: usize, j: usize },
    #[error("matrix shape {rows}x{cols} does not fit the groups")]
    Shape { rows: usize, cols: usize },
    #[error("extension between these groups is not supported")]
    Unsupported,
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Default schedule `s = 10^-1, .., 10^-6`.
pub fn default_steps() -> Vec<f64> {
    (1..=6).map(|k| 10f64.powi(-k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Converged,
    Diverged,
    Oscillating,
}

impl Verdict {
    fn worst(self, other: Verdict) -> Verdict {
        use Verdict::*;
        match (self, other) {
            (Diverged, _) | (_, Diverged) => Diverged,
            (Oscillating, _) | (_, Oscillating) => Oscillating,
            _ => Converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PansuLimit {
    pub estimate: Vec<f64>,
    pub quotients: Vec<Vec<f64>>,
    /// `(s, |q_s - q_prev|)` in the horizontal sup norm, relative to `max(1, |q_s|)`.
    pub residuals: Vec<(f64, f64)>,
    pub verdict: Verdict,
}

fn hsup(v: &[f64], nh: usize) -> f64 {
    v[..nh].iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn check_steps(steps: &[f64]) -> Result<(), PansuError> {
    if steps.is_empty() || steps.iter().any(|s| !(*s > 0.0)) || steps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(PansuError::BadSchedule);
    }
    Ok(())
}

pub fn pansu_limit(
    f: &dyn LipschitzMap,
    g: &GroupPoint,
    dir: &GroupPoint,
    steps: &[f64],
) -> Result<PansuLimit, PansuError> {
    pansu_limit_tol(f, g, dir, steps, DEFAULT_TOLERANCE)
}

pub fn pansu_limit_tol(
    f: &dyn LipschitzMap,
    g: &GroupPoint,
    dir: &GroupPoint,
    steps: &[f64],
    tol: f64,
) -> Result<PansuLimit, PansuError> {
    check_steps(steps)?;
    let src = f.source();
    let tgt = f.target();
    if dir.coords.iter().all(|v| *v == 0.0) {
        return Err(PansuError::ZeroDirection);
    }
    let fg = f.eval(g)?;
    let fg_inv = tgt.inv(&fg);
    let mut quotients = Vec::with_capacity(steps.len());
    for &s in steps {
        let moved = src.mul(g, &src.dil(s, dir));
        let diff = tgt.mul(&fg_inv, &f.eval(&moved)?);
        quotients.push(tgt.dil_inv(s, &diff).coords.to_vec());
    }
    let nh = tgt.horizontal_dim();
    let mut residuals = vec![(steps[0], f64::NAN)];
    for i in 1..quotients.len() {
        let d: Vec<f64> = quotients[i].iter().zip(&quotients[i - 1]).map(|(a, b)| a - b).collect();
        let scale = hsup(&quotients[i], nh).max(1.0);
        residuals.push((steps[i], hsup(&d, nh) / scale));
    }
    let k = quotients.len();
    let last = residuals.last().map(|r| r.1).unwrap_or(f64::NAN);
    let mut estimate = quotients[k - 1].clone();
    let verdict = if k < 2 || last <= tol {
        if k >= 3 && last > 0.0 {
            estimate = richardson(&quotients[k - 3..], &steps[k - 3..]);
        }
        Verdict::Converged
    } else {
        // Extrapolations from two overlapping windows must agree while the raw
        // differences keep shrinking.
        let extrapolated = (k >= 4 && residuals[k - 1].1 < residuals[k - 2].1).then(|| {
            let e1 = richardson(&quotients[k - 4..k - 1], &steps[k - 4..k - 1]);
            let e2 = richardson(&quotients[k - 3..], &steps[k - 3..]);
            let d: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| a - b).collect();
            (hsup(&d, nh) / hsup(&e2, nh).max(1.0), e2)
        });
        let norms: Vec<f64> = quotients.iter().map(|q| hsup(q, nh)).collect();
        match extrapolated {
            Some((gap, e2)) if gap <= tol => {
                estimate = e2;
                Verdict::Converged
            }
            _ => {
                let growing =
                    k >= 3 && norms[k - 1] > 2.0 * norms[k - 2] && norms[k - 2] > 2.0 * norms[k - 3];
                if growing || !norms[k - 1].is_finite() {
                    Verdict::Diverged
                } else {
                    Verdict::Oscillating
                }
            }
        }
    };
    Ok(PansuLimit {
        estimate,
        quotients,
        residuals,
        verdict,
    })
}

/// Two rounds of Richardson extrapolation on three quotients, assuming an
/// error expansion in powers of `s`.
fn richardson(q: &[Vec<f64>], s: &[f64]) -> Vec<f64> {
    let t1 = s[0] / s[1];
    let t2 = s[1] / s[2];
    let a1: Vec<f64> = q[1].iter().zip(&q[0]).map(|(b, a)| (t1 * b - a) / (t1 - 1.0)).collect();
    let a2: Vec<f64> = q[2].iter().zip(&q[1]).map(|(b, a)| (t2 * b - a) / (t2 - 1.0)).collect();
    let t = s[0] / s[2];
    a2.iter().zip(&a1).map(|(b, a)| (t * b - a) / (t - 1.0)).collect()
}

/// Horizontal matrix with convergence diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialEstimate {
    pub point: Vec<f64>,
    /// One row per target horizontal coordinate.
    pub matrix: Vec<Vec<f64>>,
    /// Worst column residual per step.
    pub residuals: Vec<(f64, f64)>,
    pub verdict: Verdict,
}

impl DifferentialEstimate {
    pub fn max_entry(&self) -> f64 {
        self.matrix.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("serializable")
    }
}

pub fn horizontal_matrix(
    f: &dyn LipschitzMap,
    g: &GroupPoint,
    steps: &[f64],
) -> Result<DifferentialEstimate, PansuError> {
    let src = f.source();
    let ns = src.horizontal_dim();
    let nt = f.target().horizontal_dim();
    let mut matrix = vec![vec![0.0; ns]; nt];
    let mut residuals: Vec<(f64, f64)> = steps.iter().map(|s| (*s, 0.0)).collect();
    let mut verdict = Verdict::Converged;
    for j in 0..ns {
        let mut e = vec![0.0; src.dim()];
        e[j] = 1.0;
        let lim = pansu_limit(f, g, &src.point_unchecked(&e), steps)?;
        for i in 0..nt {
            matrix[i][j] = lim.estimate[i];
        }
        for (slot, r) in residuals.iter_mut().zip(&lim.residuals) {
            slot.1 = if r.1.is_nan() { f64::NAN } else { slot.1.max(r.1) };
        }
        verdict = verdict.worst(lim.verdict);
    }
    Ok(DifferentialEstimate {
        point: g.coords.to_vec(),
        matrix,
        residuals,
        verdict,
    })
}

/// Symplectic form `omega(a, b) = sum_j a_y b_x - a_x b_y` on `R^{2n}`.
fn omega(a: &[f64], b: &[f64]) -> f64 {
    (0..a.len() / 2)
        .map(|j| a[2 * j + 1] * b[2 * j] - a[2 * j] * b[2 * j + 1])
        .sum()
}

fn column(m: &[Vec<f64>], j: usize) -> Vec<f64> {
    m.iter().map(|r| r[j]).collect()
}

/// The unique homomorphism with horizontal part `psi`, if one exists.
///
/// Between Heisenberg groups `psi` must satisfy `omega(psi u, psi v) =
/// lambda omega(u, v)`; the vertical layer is then scaled by `lambda` (the
/// determinant when both sides are `H_1`). Into a Euclidean group every `psi`
/// extends by killing the vertical layer. From a Euclidean group into `H_n`
/// the image must be isotropic.
pub fn extend_horizontal(
    psi: &[Vec<f64>],
    source: &Group,
    target: &Group,
) -> Result<Homomorphism, PansuError> {
    let (ns, nt) = (source.horizontal_dim(), target.horizontal_dim());
    if psi.len() != nt || psi.iter().any(|r| r.len() != ns) {
        return Err(PansuError::Shape {
            rows: psi.len(),
            cols: psi.first().map_or(0, |r| r.len()),
        });
    }
    let heis = |g: &Group| matches!(g.kind(), GroupKind::Heisenberg { .. });
    let eucl = |g: &Group| matches!(g.kind(), GroupKind::Euclidean { .. });
    let scale = psi.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let tol = 1e-12 * scale * scale;
    let vertical = match (heis(source), heis(target)) {
        (_, false) if eucl(target) => 0.0,
        (true, true) => {
            let cols: Vec<Vec<f64>> = (0..ns).map(|j| column(psi, j)).collect();
            let lambda = omega(&cols[1], &cols[0]);
            for i in 0..ns {
                for j in i + 1..ns {
                    let want = lambda * (if j == i + 1 && i % 2 == 0 { 1.0 } else { 0.0 });
                    if (omega(&cols[j], &cols[i]) - want).abs() > tol {
                        return Err(PansuError::NotExtendable { i, j });
                    }
                }
            }
            lambda
        }
        (false, true) if eucl(source) => {
            let cols: Vec<Vec<f64>> = (0..ns).map(|j| column(psi, j)).collect();
            for i in 0..ns {
                for j in i + 1..ns {
                    if omega(&cols[i], &cols[j]).abs() > tol {
                        return Err(PansuError::NotExtendable { i, j });
                    }
                }
            }
            0.0
        }
        _ => return Err(PansuError::Unsupported),
    };
    Ok(Homomorphism {
        source: source.clone(),
        target: target.clone(),
        psi: psi.to_vec(),
        vertical,
    })
}

/// Largest `|MF entry| / L` over the given points; the homogeneous quasinorm
/// bound gives at most 1 wherever the differential exists.
pub fn lipschitz_entry_constant(
    f: &dyn LipschitzMap,
    points: &[GroupPoint],
    steps: &[f64],
) -> Result<f64, PansuError> {
    let l = f.lipschitz_bound().unwrap_or(f64::INFINITY);
    let mut c: f64 = 0.0;
    for p in points {
        let d = horizontal_matrix(f, p, steps)?;
        if l > 0.0 {
            c = c.max(d.max_entry() / l);
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidityReport {
    pub mf_points: usize,
    pub max_mf_difference: f64,
    pub shared_value_difference: f64,
    pub value_points: usize,
    pub max_value_difference: f64,
    pub hypotheses_hold: bool,
    pub maps_agree: bool,
}

/// Compare two maps that are left translates of homomorphisms: if their
/// horizontal matrices agree on `mf_points` samples and they share a value at
/// `anchor`, they must agree everywhere; the report checks that on
/// `value_points` further samples.
pub fn rigidity_check(
    f1: &AffineMap,
    f2: &AffineMap,
    anchor: &GroupPoint,
    mf_points: usize,
    value_points: usize,
    seed: u64,
) -> Result<RigidityReport, PansuError> {
    let src = f1.source();
    let tgt = f1.target();
    let mut rng = crate::rng::stream(seed, 0xf210);
    let steps = default_steps();
    let mut max_mf: f64 = 0.0;
    for _ in 0..mf_points {
        let p = src.sample_box(&mut rng, 2.0);
        let a = horizontal_matrix(f1, &p, &steps)?;
        let b = horizontal_matrix(f2, &p, &steps)?;
        for (ra, rb) in a.matrix.iter().zip(&b.matrix) {
            for (x, y) in ra.iter().zip(rb) {
                max_mf = max_mf.max((x - y).abs());
            }
        }
    }
    let shared = tgt.dist(&f1.eval(anchor)?, &f2.eval(anchor)?);
    let mut max_val: f64 = 0.0;
    for _ in 0..value_points {
        let p = src.sample_box(&mut rng, 2.0);
        let (a, b) = (f1.eval(&p)?, f2.eval(&p)?);
        for (x, y) in a.coords.iter().zip(&b.coords) {
            max_val = max_val.max((x - y).abs());
        }
    }
    let hypotheses_hold = max_mf <= AGREEMENT_TOLERANCE && shared <= AGREEMENT_TOLERANCE;
    Ok(RigidityReport {
        mf_points,
        max_mf_difference: max_mf,
        shared_value_difference: shared,
        value_points,
        max_value_difference: max_val,
        hypotheses_hold,
        maps_agree: max_val <= AGREEMENT_TOLERANCE,
    })
}
