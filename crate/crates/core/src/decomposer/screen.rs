//! Haar-coefficient screen of the horizontal differential over a scale window.

use serde::{Deserialize, Serialize};

use super::DecomposeError;
use crate::dyadic::{CubeAddress, Mesh};
use crate::group::GroupPoint;
use crate::maps::LipschitzMap;
use crate::pansu::{horizontal_matrix, Verdict};
use crate::wavelets::HaarPair;

/// Matrix-valued field on the source group. `None` marks a point where the
/// field could not be sampled.
pub trait MatrixField: Sync {
    fn matrix(&self, p: &GroupPoint) -> Option<Vec<Vec<f64>>>;
}

impl<F: Fn(&GroupPoint) -> Option<Vec<Vec<f64>>> + Sync> MatrixField for F {
    fn matrix(&self, p: &GroupPoint) -> Option<Vec<Vec<f64>>> {
        self(p)
    }
}

/// Horizontal matrix of the Pansu differential, sampled by difference quotients.
pub struct PansuField<'a> {
    pub map: &'a dyn LipschitzMap,
    pub steps: Vec<f64>,
}

impl MatrixField for PansuField<'_> {
    fn matrix(&self, p: &GroupPoint) -> Option<Vec<Vec<f64>>> {
        match horizontal_matrix(self.map, p, &self.steps) {
            Ok(d) if d.verdict == Verdict::Converged => Some(d.matrix),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreenConfig {
    pub c_cal: f64,
    /// Upper end of the scale window is `scale + window_n`.
    pub window_n: i32,
    pub translates: usize,
    /// Samples drawn in each cube of a Haar pair.
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub beta: u32,
    pub family: usize,
    pub pair: HaarPair,
    pub i: usize,
    pub j: usize,
    pub ratio: f64,
    /// One standard error of `ratio`.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenOutcome {
    pub pass: bool,
    pub threshold: f64,
    pub best: Option<Witness>,
    pub haar_pairs: usize,
    pub failures: usize,
    pub evaluations: usize,
}

/// Scale window `[max(1, a - 4), min(leaf, a + n)]`.
pub fn scale_window(mesh: &Mesh, scale: u32, n: i32) -> Result<(u32, u32), DecomposeError> {
    let lo = (scale as i64 - 4).max(1);
    let hi = (scale as i64 + n as i64).min(mesh.leaf() as i64);
    if lo > hi {
        return Err(DecomposeError::EmptyWindow { scale, n });
    }
    Ok((lo as u32, hi as u32))
}

/// Haar pairs near the two cube centres: the cubes containing each centre
/// paired with each other when siblings, and with the siblings one step away
/// along every coordinate.
fn candidate_pairs(mesh: &Mesh, centres: &[GroupPoint], beta: u32, family: &crate::dyadic::LatticePoint) -> Vec<HaarPair> {
    let g = mesh.group();
    let h = (mesh.ratio() as f64).powi(-(beta as i32));
    let mut out: Vec<HaarPair> = Vec::new();
    let mut push = |a: &CubeAddress, b: &CubeAddress| {
        if let Ok(p) = HaarPair::new(mesh, a.clone(), b.clone()) {
            if !out.contains(&p) {
                out.push(p);
            }
        }
    };
    let homes: Vec<CubeAddress> = centres
        .iter()
        .filter_map(|c| mesh.address_of(c, beta, Some(family)).ok())
        .collect();
    if homes.len() == 2 {
        push(&homes[0], &homes[1]);
    }
    for (c, home) in centres.iter().zip(&homes) {
        for i in 0..g.dim() {
            for sign in [1.0, -1.0] {
                let mut u = vec![0.0; g.dim()];
                u[i] = sign;
                let step = g.dil(h, &g.point_unchecked(&u));
                if let Ok(other) = mesh.address_of(&g.mul(c, &step), beta, Some(family)) {
                    push(home, &other);
                }
            }
        }
    }
    out
}

/// Does some Haar pair in the families of the scale window see a coefficient
/// of the field at least `c_cal |Q|^{1/2}`?
pub fn wavelet_screen<M: MatrixField + ?Sized>(
    mesh: &Mesh,
    field: &M,
    a: &CubeAddress,
    b: &CubeAddress,
    cfg: &ScreenConfig,
) -> Result<ScreenOutcome, DecomposeError> {
    let (lo, hi) = scale_window(mesh, a.scale, cfg.window_n)?;
    if cfg.samples == 0 {
        return Err(DecomposeError::EmptySample);
    }
    let threshold = cfg.c_cal * mesh.cube_volume(a.scale).sqrt();
    let centres = [mesh.centre(a), mesh.centre(b)];
    let mut best: Option<Witness> = None;
    let (mut haar_pairs, mut failures, mut evaluations) = (0, 0, 0);
    for beta in lo..=hi {
        let families = mesh.translate_family(beta, cfg.translates.max(1), cfg.seed);
        for (fi, fam) in families.iter().enumerate() {
            for pair in candidate_pairs(mesh, &centres, beta, fam) {
                haar_pairs += 1;
                let seed = crate::rng::mix(&[cfg.seed, beta as u64, fi as u64, haar_pairs as u64]);
                let mut rng = crate::rng::stream(seed, 0);
                // Per cube: entrywise mean and variance of the sampled field.
                let mut moments: Vec<Option<(Vec<Vec<f64>>, Vec<Vec<f64>>, usize)>> = Vec::with_capacity(2);
                for cube in [&pair.plus, &pair.minus] {
                    let mut acc: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = None;
                    let mut ok = 0usize;
                    for _ in 0..cfg.samples {
                        let p = mesh.sample_in_cube(cube, &mut rng);
                        evaluations += 1;
                        match field.matrix(&p) {
                            Some(m) if m.iter().flatten().all(|v| v.is_finite()) => {
                                ok += 1;
                                match &mut acc {
                                    None => {
                                        let sq = m.iter().map(|r| r.iter().map(|v| v * v).collect()).collect();
                                        acc = Some((m, sq));
                                    }
                                    Some((s, sq)) => {
                                        for ((rs, rq), rm) in s.iter_mut().zip(sq.iter_mut()).zip(&m) {
                                            for ((x, q), y) in rs.iter_mut().zip(rq.iter_mut()).zip(rm) {
                                                *x += y;
                                                *q += y * y;
                                            }
                                        }
                                    }
                                }
                            }
                            _ => failures += 1,
                        }
                    }
                    moments.push(acc.map(|(mut s, mut sq)| {
                        let n = ok as f64;
                        for (rs, rq) in s.iter_mut().zip(sq.iter_mut()) {
                            for (x, q) in rs.iter_mut().zip(rq.iter_mut()) {
                                *x /= n;
                                *q = (*q / n - *x * *x).max(0.0);
                            }
                        }
                        (s, sq, ok)
                    }));
                }
                let (Some((mp, vp, np)), Some((mm, vm, nm))) = (&moments[0], &moments[1]) else {
                    continue;
                };
                // |Q| (mean_+ - mean_-) / (2 |Q|).
                for i in 0..mp.len() {
                    for j in 0..mp[i].len() {
                        let ratio = (mp[i][j] - mm[i][j]).abs() / 2.0;
                        if best.as_ref().map_or(true, |w| ratio > w.ratio) {
                            let sigma = (vp[i][j] / *np as f64 + vm[i][j] / *nm as f64).sqrt() / 2.0;
                            best = Some(Witness {
                                beta,
                                family: fi,
                                pair: pair.clone(),
                                i,
                                j,
                                ratio,
                                sigma,
                            });
                        }
                    }
                }
            }
        }
    }
    if evaluations > 0 && failures as f64 > 0.1 * evaluations as f64 {
        return Err(DecomposeError::ScreenFailures {
            failures,
            evaluations,
        });
    }
    Ok(ScreenOutcome {
        pass: best.as_ref().map_or(false, |w| w.ratio >= threshold),
        threshold,
        best,
        haar_pairs,
        failures,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{Homomorphism, LipschitzMap};
    use crate::group::Group;
    use crate::wavelets::eval_haar;

    fn cfg() -> ScreenConfig {
        ScreenConfig {
            c_cal: 1e-3,
            window_n: 2,
            translates: 3,
            samples: 32,
            seed: 4,
        }
    }

    fn pair(mesh: &Mesh) -> (CubeAddress, CubeAddress) {
        let g = mesh.group();
        let a = mesh.address_of(&g.point(&[0.001, 0.002, 0.0]).unwrap(), 2, None).unwrap();
        let b = mesh.address_of(&g.point(&[-0.3, 0.25, 0.01]).unwrap(), 2, None).unwrap();
        (a, b)
    }

    #[test]
    fn constant_differential_never_passes() {
        let mesh = Mesh::heisenberg(1);
        let g = Group::heisenberg(1);
        let f = Homomorphism {
            source: g.clone(),
            target: g.clone(),
            psi: vec![vec![2.0, 0.0], vec![0.0, 0.5]],
            vertical: 1.0,
        };
        assert!(f.lipschitz_bound().is_some());
        let field = PansuField {
            map: &f,
            steps: crate::pansu::default_steps(),
        };
        let (a, b) = pair(&mesh);
        let out = wavelet_screen(&mesh, &field, &a, &b, &cfg()).unwrap();
        assert!(!out.pass);
        assert!(out.best.unwrap().ratio < 1e-9);
        assert_eq!(out.failures, 0);
    }

    #[test]
    fn haar_field_is_found() {
        let mesh = Mesh::heisenberg(1);
        let (a, b) = pair(&mesh);
        let parent = mesh.parent(&a).unwrap();
        let g = mesh.group();
        let h = 0.1;
        let step = g.dil(h, &g.point(&[1.0, 0.0, 0.0]).unwrap());
        let next = mesh.address_of(&g.mul(&mesh.centre(&parent), &step), 1, None).unwrap();
        let haar = HaarPair::new(&mesh, parent, next).unwrap();
        let field = |p: &GroupPoint| Some(vec![vec![eval_haar(&mesh, &haar, p), 0.0], vec![0.0, 0.0]]);
        let out = wavelet_screen(&mesh, &field, &a, &b, &cfg()).unwrap();
        assert!(out.pass);
        let w = out.best.unwrap();
        assert_eq!((w.beta, w.family, w.i, w.j), (1, 0, 0, 0));
        assert_eq!(w.pair, haar);
        assert!((w.ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_window_and_failures() {
        let mesh = Mesh::heisenberg(1);
        let (a, b) = pair(&mesh);
        let field = |_: &GroupPoint| Some(vec![vec![0.0; 2]; 2]);
        let bad = ScreenConfig { window_n: -5, ..cfg() };
        assert!(matches!(
            wavelet_screen(&mesh, &field, &a, &b, &bad),
            Err(DecomposeError::EmptyWindow { .. })
        ));
        let broken = |p: &GroupPoint| (p.coords[0] > 0.0).then(|| vec![vec![0.0; 2]; 2]);
        assert!(matches!(
            wavelet_screen(&mesh, &broken, &a, &b, &cfg()),
            Err(DecomposeError::ScreenFailures { .. })
        ));
    }
}
