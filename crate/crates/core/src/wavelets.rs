//! Haar pairs on sibling cubes and their inner products.
//!
//! `f_{Q,Q'}` is `+1` on `Q`, `-1` on the sibling `Q'` and `0` elsewhere. The
//! pairs of one scale span the detail space `C_b`; translated families span
//! the twisted copies `C'_b`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dyadic::{CubeAddress, Ints, LatticePoint, Mesh, MeshError};
use crate::group::{Coords, GroupPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveletError {
    #[error("cubes of a Haar pair must be distinct siblings")]
    NotSiblings,
    #[error("Haar pairs live at scale >= 1")]
    ScaleZero,
    #[error("field returned a non-finite value at {0:?}")]
    NonFinite(Vec<f64>),
    #[error("sample count must be positive")]
    NoSamples,
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Real-valued function on the group, evaluated pointwise.
pub trait ScalarField: Sync {
    fn value(&self, p: &GroupPoint) -> f64;
}

impl<F: Fn(&GroupPoint) -> f64 + Sync> ScalarField for F {
    fn value(&self, p: &GroupPoint) -> f64 {
        self(p)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HaarPair {
    pub plus: CubeAddress,
    pub minus: CubeAddress,
}

impl HaarPair {
    pub fn new(mesh: &Mesh, plus: CubeAddress, minus: CubeAddress) -> Result<Self, WaveletError> {
        if plus.scale == 0 || minus.scale == 0 {
            return Err(WaveletError::ScaleZero);
        }
        if plus == minus || plus.scale != minus.scale || mesh.parent(&plus)? != mesh.parent(&minus)? {
            return Err(WaveletError::NotSiblings);
        }
        Ok(HaarPair { plus, minus })
    }

    pub fn scale(&self) -> u32 {
        self.plus.scale
    }

    pub fn eval(&self, mesh: &Mesh, p: &GroupPoint) -> f64 {
        eval_haar(mesh, self, p)
    }

    /// `<f, f> = |Q| + |Q'|`.
    pub fn norm_squared(&self, mesh: &Mesh) -> f64 {
        2.0 * mesh.cube_volume(self.scale())
    }
}

pub fn eval_haar(mesh: &Mesh, h: &HaarPair, p: &GroupPoint) -> f64 {
    match mesh.address_of(p, h.scale(), Some(&h.plus.translate)) {
        Ok(c) if c.base == h.plus.base => 1.0,
        Ok(c) if c.base == h.minus.base => -1.0,
        _ => 0.0,
    }
}

/// Monte Carlo value with one-sigma error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

impl Estimate {
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.sigma
    }
}

/// Sample mean and variance of `f * g` over `region` with a per-chunk seed.
fn sampled_moments<F: ScalarField + ?Sized, G: ScalarField + ?Sized>(
    mesh: &Mesh,
    f: &F,
    g: &G,
    region: &CubeAddress,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64), WaveletError> {
    if samples == 0 {
        return Err(WaveletError::NoSamples);
    }
    const CHUNK: usize = 4096;
    let chunks: Vec<usize> = (0..samples.div_ceil(CHUNK)).collect();
    let parts: Vec<Result<(f64, f64), WaveletError>> = chunks
        .par_iter()
        .map(|&k| {
            let mut rng = crate::rng::stream(seed, crate::rng::mix(&[0x1a, k as u64]));
            let n = CHUNK.min(samples - k * CHUNK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let p = mesh.sample_in_cube(region, &mut rng);
                let v = f.value(&p) * g.value(&p);
                if !v.is_finite() {
                    return Err(WaveletError::NonFinite(p.coords.to_vec()));
                }
                s += v;
                s2 += v * v;
            }
            Ok((s, s2))
        })
        .collect();
    let (mut s, mut s2) = (0.0, 0.0);
    for part in parts {
        let (a, b) = part?;
        s += a;
        s2 += b;
    }
    let n = samples as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0);
    Ok((mean, var))
}

/// `int_region f g` against Haar measure, normalised so `|Q(0, 0)| = 1`.
pub fn inner_product<F: ScalarField + ?Sized, G: ScalarField + ?Sized>(
    mesh: &Mesh,
    f: &F,
    g: &G,
    region: &CubeAddress,
    samples: usize,
    seed: u64,
) -> Result<Estimate, WaveletError> {
    let (mean, var) = sampled_moments(mesh, f, g, region, samples, seed)?;
    let vol = mesh.cube_volume(region.scale);
    Ok(Estimate {
        value: vol * mean,
        sigma: vol * (var / samples as f64).sqrt(),
    })
}

/// `|<field, f_{Q,Q'}>| / <f_{Q,Q'}, f_{Q,Q'}>`, with the two cubes sampled
/// separately and the exact denominator.
pub fn coefficient_ratio<F: ScalarField + ?Sized>(
    mesh: &Mesh,
    field: &F,
    h: &HaarPair,
    samples: usize,
    seed: u64,
) -> Result<Estimate, WaveletError> {
    let one = |_: &GroupPoint| 1.0;
    let half = samples.div_ceil(2);
    let (mp, vp) = sampled_moments(mesh, field, &one, &h.plus, half, crate::rng::mix(&[seed, 1]))?;
    let (mm, vm) = sampled_moments(mesh, field, &one, &h.minus, half, crate::rng::mix(&[seed, 2]))?;
    let vol = mesh.cube_volume(h.scale());
    let num = vol * (mp - mm);
    let den = h.norm_squared(mesh);
    let sigma = vol * ((vp + vm) / half as f64).sqrt() / den;
    Ok(Estimate {
        value: num.abs() / den,
        sigma,
    })
}

/// Normalised coordinates `delta_{E^b}(t)` of a family translate, computed from
/// its integers so equal normalised translates agree bit for bit across scales.
fn normalised_translate(mesh: &Mesh, t: &LatticePoint, scale: u32) -> Coords {
    let s = t.scale.max(scale);
    let t = mesh.rescale(t, s);
    let h = (mesh.ratio() as f64).powi((s - scale) as i32);
    let nh = mesh.group().horizontal_dim();
    t.ints
        .iter()
        .enumerate()
        .map(|(i, &v)| if i < nh { v as f64 / h } else { v as f64 / (h * h) })
        .collect()
}

/// Translate at scale `b` whose normalised integers (units of `E^-(b+2)`) are `ints`.
pub fn family_translate(mesh: &Mesh, scale: u32, ints: &[i64]) -> LatticePoint {
    mesh.canonical(LatticePoint {
        scale: scale + 2,
        ints: Ints::from_slice(ints),
    })
}

/// Positive-measure overlap of the unit window and its left translate by `r`.
pub fn windows_overlap(mesh: &Mesh, r: &[f64]) -> bool {
    let nh = mesh.group().horizontal_dim();
    if r[..nh].iter().any(|v| v.abs() >= 1.0) {
        return false;
    }
    if nh == r.len() {
        return true;
    }
    // Horizontal overlap box R = W_h cap (W_h + r_h); the vertical residual
    // r_t + omega(r, u) must fall in (-1, 1) for some u in R.
    let lo: Vec<f64> = r[..nh].iter().map(|v| (-0.5f64).max(v - 0.5)).collect();
    let hi: Vec<f64> = r[..nh].iter().map(|v| 0.5f64.min(v + 0.5)).collect();
    let (mut wmin, mut wmax) = (0.0, 0.0);
    for j in 0..nh / 2 {
        let (x, y) = (2 * j, 2 * j + 1);
        // omega(r, u) = sum r_y u_x - r_x u_y, linear in u.
        for (coef, k) in [(r[y], x), (-r[x], y)] {
            let (a, b) = (coef * lo[k], coef * hi[k]);
            wmin += a.min(b);
            wmax += a.max(b);
        }
    }
    let rt = r[nh];
    wmax > -1.0 - rt && wmin < 1.0 - rt
}

/// Support-overlap profile of the Haar spanning sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityProfile {
    pub scale: u32,
    pub families: usize,
    pub children_per_parent: u64,
    /// Overlap count inside a single family, `2m - 3`.
    pub same_family: u64,
    /// `max_f` of the count of `g` with `<f, g> != 0`, over all families.
    pub k: u64,
}

fn pairs_touching(m: u64, u: u64) -> u64 {
    let c2 = |v: u64| v * v.saturating_sub(1) / 2;
    c2(m) - c2(m - u)
}

/// Cubes of family `tau` (normalised frame) overlapping the untranslated-frame
/// cube with normalised base `q`, whose own family translate is `sigma`.
fn overlapping_cubes(
    mesh: &Mesh,
    sigma: &[f64],
    q: &[i64],
    tau: &[f64],
) -> Vec<Ints> {
    let g = mesh.group();
    let dim = g.dim();
    let nh = g.horizontal_dim();
    let qf: Vec<f64> = q.iter().map(|&v| v as f64).collect();
    let mut sq = vec![0.0; dim];
    g.mul_coords(sigma, &qf, &mut sq);
    let neg_tau: Vec<f64> = tau.iter().map(|v| -v).collect();
    let mut rel = vec![0.0; dim];
    g.mul_coords(&neg_tau, &sq, &mut rel);
    // Nearest lattice point of the tau family, then scan a box around it.
    let centre: Ints = rel
        .iter()
        .map(|v| v.round() as i64)
        .collect();
    let (hr, vr) = (2i64, if nh < dim { 6i64 } else { 0 });
    let mut out = Vec::new();
    let mut idx = vec![-hr; nh];
    let mut tmp = vec![0.0; dim];
    let mut r = vec![0.0; dim];
    let neg_sq: Vec<f64> = sq.iter().map(|v| -v).collect();
    loop {
        // The vertical residual is y_t plus a term depending on the
        // horizontal offset, so the vertical scan is recentred per offset.
        let mut t0 = 0;
        if nh < dim {
            let mut y: Vec<f64> = (0..nh).map(|i| (centre[i] + idx[i]) as f64).collect();
            y.push(0.0);
            g.mul_coords(tau, &y, &mut tmp);
            g.mul_coords(&neg_sq, &tmp, &mut r);
            t0 = -(r[nh].round() as i64);
        }
        for t in -vr..=vr {
            let mut y: Ints = (0..nh).map(|i| centre[i] + idx[i]).collect();
            if nh < dim {
                y.push(t0 + t);
            }
            let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
            g.mul_coords(tau, &yf, &mut tmp);
            g.mul_coords(&neg_sq, &tmp, &mut r);
            if windows_overlap(mesh, &r) {
                let edge = idx.iter().any(|v| v.abs() == hr) || (vr > 0 && t.abs() == vr);
                debug_assert!(!edge, "overlap scan reached its boundary at {r:?}");
                out.push(y);
            }
        }
        let mut k = 0;
        loop {
            if k == nh {
                return out;
            }
            idx[k] += 1;
            if idx[k] <= hr {
                break;
            }
            idx[k] = -hr;
            k += 1;
        }
    }
}

/// Normalised parent integers of a scale-`b` base, without the leaf check.
fn parent_ints(mesh: &Mesh, scale: u32, y: &Ints) -> Ints {
    let c = mesh.cube(LatticePoint {
        scale: scale.max(1),
        ints: y.clone(),
    });
    mesh.parent(&c).expect("scale >= 1").base.ints
}

/// Maximum number of Haar pairs, across the given families, whose support
/// meets that of a fixed pair inside the origin parent of each family.
///
/// Overlap between cubes of different families is decided on their windows.
/// Families are given as translates; the profile depends only on their
/// normalised integers, so equal normalised families give equal `K` at every
/// scale.
pub fn orthogonality_profile(
    mesh: &Mesh,
    scale: u32,
    families: &[LatticePoint],
) -> Result<OrthogonalityProfile, WaveletError> {
    if scale == 0 {
        return Err(WaveletError::ScaleZero);
    }
    let m = mesh.children_per_cube();
    let same = 2 * m - 3;
    let mut fams: Vec<Coords> = families
        .iter()
        .map(|t| normalised_translate(mesh, t, scale))
        .collect();
    if fams.is_empty() || fams.iter().all(|f| f.iter().any(|v| *v != 0.0)) {
        fams.insert(0, smallvec::smallvec![0.0; mesh.dim()]);
    }
    fams.dedup();
    // Children of the origin parent in the normalised frame of `scale`.
    let parent = mesh.cube(LatticePoint::zero(mesh.dim()));
    let parent = mesh.cube(mesh.rescale(&parent.base, scale - 1));
    let kids: Vec<Ints> = mesh.children(&parent).into_iter().map(|c| c.base.ints).collect();

    let mut k_max = 0u64;
    for (fi, sigma) in fams.iter().enumerate() {
        // For every child Q and other family tau: overlapping tau-cubes grouped by parent.
        let per_child: Vec<Vec<BTreeMap<Ints, BTreeSet<Ints>>>> = kids
            .par_iter()
            .map(|q| {
                fams.iter()
                    .enumerate()
                    .filter(|(ti, _)| *ti != fi)
                    .map(|(_, tau)| {
                        let mut by_parent: BTreeMap<Ints, BTreeSet<Ints>> = BTreeMap::new();
                        for y in overlapping_cubes(mesh, sigma, q, tau) {
                            by_parent.entry(parent_ints(mesh, scale, &y)).or_default().insert(y);
                        }
                        by_parent
                    })
                    .collect()
            })
            .collect();
        let single: Vec<u64> = per_child
            .iter()
            .map(|fams| {
                fams.iter()
                    .flat_map(|bp| bp.values().map(|s| pairs_touching(m, s.len() as u64)))
                    .sum()
            })
            .collect();
        let mut order: Vec<usize> = (0..kids.len()).collect();
        order.sort_by(|&a, &b| single[b].cmp(&single[a]).then(a.cmp(&b)));
        let mut best = 0u64;
        'outer: for (ii, &a) in order.iter().enumerate() {
            if ii + 1 < order.len() && single[a] + single[order[ii + 1]] <= best {
                break;
            }
            for &b in &order[ii + 1..] {
                if single[a] + single[b] <= best {
                    continue 'outer;
                }
                let mut total = 0u64;
                for (fa, fb) in per_child[a].iter().zip(&per_child[b]) {
                    let keys: BTreeSet<&Ints> = fa.keys().chain(fb.keys()).collect();
                    for key in keys {
                        let mut u: BTreeSet<&Ints> = BTreeSet::new();
                        if let Some(s) = fa.get(key) {
                            u.extend(s.iter());
                        }
                        if let Some(s) = fb.get(key) {
                            u.extend(s.iter());
                        }
                        total += pairs_touching(m, u.len() as u64);
                    }
                }
                best = best.max(total);
            }
        }
        k_max = k_max.max(same + best);
    }
    Ok(OrthogonalityProfile {
        scale,
        families: fams.len(),
        children_per_parent: m,
        same_family: same,
        k: k_max,
    })
}

/// One row of a coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub beta: u32,
    pub family: usize,
    pub plus: String,
    pub minus: String,
    pub i: usize,
    pub j: usize,
    pub ratio: f64,
    pub sigma: f64,
}

pub fn format_base(c: &CubeAddress) -> String {
    c.base
        .ints
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_coefficient_csv<W: Write>(rows: &[CoefficientRow], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
