//! Hausdorff content of sampled sets via greedy quasiball covers.

use smallvec::SmallVec;

use super::DecomposeError;
use crate::dyadic::Mesh;
use crate::group::{Coords, Group};

/// Cover radii relative to the diameter of the cube being estimated.
pub const RELATIVE_RADII: [f64; 6] = [0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625];
/// A radius only counts once its cover averages this many samples per ball.
pub const MIN_SAMPLES_PER_BALL: f64 = 4.0;

/// Number of balls a greedy pass needs to cover `points` with radius `r`.
pub fn greedy_cover_count(group: &Group, points: &[Coords], r: f64) -> usize {
    cover_count_capped(group, points, r, usize::MAX)
}

/// Greedy cover count, abandoned once it exceeds `cap`.
fn cover_count_capped(group: &Group, points: &[Coords], r: f64, cap: usize) -> usize {
    if points.is_empty() {
        return 0;
    }
    // Left translation is an isometry; moving the cloud next to the origin
    // keeps the twist term in the vertical reach small.
    let shift = group.inv(&group.point_unchecked(&points[0]));
    let pts: Vec<Coords> = points
        .iter()
        .map(|p| {
            let mut out = p.clone();
            group.mul_coords(&shift.coords, p, &mut out);
            out
        })
        .collect();
    let dim = group.dim();
    let nh = group.horizontal_dim();
    let h = pts
        .iter()
        .flat_map(|p| p[..nh].iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    // Points within r differ by at most one cell in every coordinate.
    let mut cell = group.coordinate_reach(r, h);
    let (mut lo, mut hi) = (vec![0i64; dim], vec![0i64; dim]);
    loop {
        for d in 0..dim {
            let ks = pts.iter().map(|p| (p[d] / cell[d]).floor() as i64);
            lo[d] = ks.clone().min().unwrap();
            hi[d] = ks.max().unwrap();
        }
        let total: f64 = (0..dim).map(|d| (hi[d] - lo[d] + 1) as f64).product();
        if total <= MAX_CELLS {
            break;
        }
        cell.iter_mut().for_each(|c| *c *= 2.0);
    }
    let size: Vec<usize> = (0..dim).map(|d| (hi[d] - lo[d] + 1) as usize).collect();
    let key = |p: &Coords| -> SmallVec<[usize; 6]> {
        (0..dim).map(|d| ((p[d] / cell[d]).floor() as i64 - lo[d]) as usize).collect()
    };
    let flat = |k: &[usize]| k.iter().zip(&size).fold(0usize, |acc, (v, s)| acc * s + v);
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); size.iter().product()];
    let keys: Vec<SmallVec<[usize; 6]>> = pts.iter().map(key).collect();
    for (i, k) in keys.iter().enumerate() {
        grid[flat(k)].push(i);
    }
    let mut covered = vec![false; pts.len()];
    let mut count = 0;
    let mut probe: SmallVec<[usize; 6]> = SmallVec::from_elem(0, dim);
    for i in 0..pts.len() {
        if covered[i] {
            continue;
        }
        count += 1;
        if count > cap {
            return count;
        }
        let c = &pts[i];
        let k = &keys[i];
        'offsets: for m in 0..3usize.pow(dim as u32) {
            let mut m = m;
            for d in 0..dim {
                let v = k[d] as i64 + (m % 3) as i64 - 1;
                m /= 3;
                if v < 0 || v >= size[d] as i64 {
                    continue 'offsets;
                }
                probe[d] = v as usize;
            }
            grid[flat(&probe)].retain(|&j| {
                if group.dist_coords(&pts[j], c) <= r {
                    covered[j] = true;
                    false
                } else {
                    true
                }
            });
        }
    }
    count
}

const MAX_CELLS: f64 = (1u64 << 20) as f64;

/// `min_r  n(r) r^k` over the given radii, `n(r)` the greedy cover count.
pub fn content_estimate(group: &Group, points: &[Coords], k: usize, radii: &[f64]) -> Result<f64, DecomposeError> {
    if points.is_empty() {
        return Err(DecomposeError::EmptySample);
    }
    if k == 0 || radii.is_empty() || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(DecomposeError::BadConfig("content needs k > 0 and positive radii".into()));
    }
    Ok(radii
        .iter()
        .map(|&r| greedy_cover_count(group, points, r) as f64 * r.powi(k as i32))
        .fold(f64::INFINITY, f64::min))
}

/// Content estimator normalised so the base cube of the source mesh has
/// content 1, skipping radii too fine for the sample density.
#[derive(Debug, Clone)]
pub struct ContentEstimator {
    pub k: usize,
    pub norm: f64,
}

impl ContentEstimator {
    pub fn calibrated(mesh: &Mesh, samples: usize, seed: u64) -> Result<Self, DecomposeError> {
        let mut rng = crate::rng::stream(seed, 0xca1);
        let origin = mesh.origin();
        let pts: Vec<Coords> = (0..samples)
            .map(|_| mesh.sample_in_cube(&origin, &mut rng).coords)
            .collect();
        let k = mesh.group().homogeneous_dimension();
        let raw = ContentEstimator { k, norm: 1.0 }.raw(mesh.group(), &pts, mesh.base_diameter())?;
        Ok(ContentEstimator { k, norm: 1.0 / raw })
    }

    fn raw(&self, target: &Group, points: &[Coords], diameter: f64) -> Result<f64, DecomposeError> {
        if points.is_empty() {
            return Err(DecomposeError::EmptySample);
        }
        let n = points.len() as f64;
        let mut best = f64::INFINITY;
        for (idx, rel) in RELATIVE_RADII.iter().enumerate() {
            let r = rel * diameter;
            let cap = if idx == 0 { usize::MAX } else { (n / MIN_SAMPLES_PER_BALL) as usize };
            let count = cover_count_capped(target, points, r, cap.max(1));
            if count > cap.max(1) {
                break;
            }
            best = best.min(count as f64 * r.powi(self.k as i32));
        }
        Ok(best)
    }

    /// Normalised content of the sampled image of a cube of the given diameter.
    pub fn estimate(&self, target: &Group, points: &[Coords], diameter: f64) -> Result<f64, DecomposeError> {
        Ok(self.norm * self.raw(target, points, diameter)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{HorizontalProjection, LipschitzMap};

    #[test]
    fn identity_image_has_unit_content() {
        let mesh = Mesh::heisenberg(1);
        let est = ContentEstimator::calibrated(&mesh, 1024, 1).unwrap();
        let mut rng = crate::rng::stream(99, 0);
        let probe = mesh.group().point(&[0.3, -0.2, 0.1]).unwrap();
        for c in [mesh.origin(), mesh.address_of(&probe, 2, None).unwrap()] {
            let pts: Vec<Coords> = (0..1024).map(|_| mesh.sample_in_cube(&c, &mut rng).coords).collect();
            let v = est.estimate(mesh.group(), &pts, mesh.diameter(c.scale)).unwrap() / mesh.cube_volume(c.scale);
            assert!((0.5..=2.0).contains(&v), "scale {}: {v}", c.scale);
        }
    }

    #[test]
    fn single_point_vanishes_as_radii_refine() {
        let g = Group::heisenberg(1);
        let p: Vec<Coords> = vec![Coords::from_slice(&[0.1, 0.2, 0.3])];
        let mut prev = f64::INFINITY;
        for m in 1..6 {
            let radii: Vec<f64> = (0..m).map(|i| 0.5f64.powi(i)).collect();
            let v = content_estimate(&g, &p, 4, &radii).unwrap();
            assert!(v <= prev);
            prev = v;
        }
        assert!(prev < 1e-4);
        assert_eq!(content_estimate(&g, &[], 4, &[1.0]), Err(DecomposeError::EmptySample));
    }

    #[test]
    fn projected_cube_loses_content() {
        let mesh = Mesh::heisenberg(1);
        let est = ContentEstimator::calibrated(&mesh, 1024, 1).unwrap();
        let f = HorizontalProjection::new(mesh.group().clone());
        let mut rng = crate::rng::stream(5, 0);
        let c = mesh.origin();
        let pts: Vec<Coords> = (0..1024)
            .map(|_| f.eval(&mesh.sample_in_cube(&c, &mut rng)).unwrap().coords)
            .collect();
        let v = est.estimate(f.target(), &pts, mesh.diameter(0)).unwrap();
        assert!(v < 0.01, "{v}");
    }

    #[test]
    fn greedy_count_matches_brute_force() {
        let g = Group::heisenberg(1);
        let mut rng = crate::rng::stream(3, 0);
        let pts: Vec<Coords> = (0..300).map(|_| g.sample_box(&mut rng, 1.0).coords).collect();
        let r = 0.3;
        let mut covered = vec![false; pts.len()];
        let mut count = 0;
        for i in 0..pts.len() {
            if !covered[i] {
                count += 1;
                for j in 0..pts.len() {
                    if g.dist_coords(&pts[j], &pts[i]) <= r {
                        covered[j] = true;
                    }
                }
            }
        }
        assert_eq!(greedy_cover_count(&g, &pts, r), count);
    }
}
