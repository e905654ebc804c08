//! Box-counting dimension by least squares on `log N(r)` against `log 1/r`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DimensionError {
    #[error("need at least {0} scales")]
    TooFewScales(usize),
    #[error("scales must be positive and distinct")]
    BadScales,
    #[error("empty point cloud")]
    Empty,
    #[error("all points coincide")]
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionFit {
    pub dimension: f64,
    pub intercept: f64,
    /// Root mean square residual of the fit in `log N`.
    pub residual: f64,
    /// `(r, N(r))` per scale.
    pub counts: Vec<(f64, usize)>,
}

pub const MIN_SCALES: usize = 4;

/// Number of grid cubes of side `r` meeting the cloud.
pub fn box_count<P: AsRef<[f64]> + Sync>(points: &[P], r: f64) -> usize {
    if let Some(n) = packed_count(points, r) {
        return n;
    }
    let cells: HashSet<Vec<i64>> = points
        .iter()
        .map(|p| p.as_ref().iter().map(|v| (v / r).floor() as i64).collect())
        .collect();
    cells.len()
}

/// Sort-and-dedup count for clouds of dimension at most 4 whose cell indices
/// fit in 32 bits.
fn packed_count<P: AsRef<[f64]> + Sync>(points: &[P], r: f64) -> Option<usize> {
    use rayon::prelude::*;
    let dim = points.first()?.as_ref().len();
    if dim > 4 || points.iter().any(|p| p.as_ref().len() != dim) {
        return None;
    }
    let keys: Option<Vec<u128>> = points
        .par_iter()
        .map(|p| {
            let mut key = 0u128;
            for v in p.as_ref() {
                let c = (v / r).floor();
                if !(c >= i32::MIN as f64 && c <= i32::MAX as f64) {
                    return None;
                }
                key = key << 32 | (c as i32 as u32) as u128;
            }
            Some(key)
        })
        .collect();
    let mut keys = keys?;
    keys.par_sort_unstable();
    keys.dedup();
    Some(keys.len())
}

/// Least-squares slope of `log N` against `log 1/r`.
pub fn fit_counts(counts: &[(f64, usize)]) -> Result<DimensionFit, DimensionError> {
    if counts.len() < MIN_SCALES {
        return Err(DimensionError::TooFewScales(MIN_SCALES));
    }
    let xs: Vec<f64> = counts.iter().map(|(r, _)| -r.ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|(_, n)| (*n as f64).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(DimensionError::BadScales);
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(DimensionFit {
        dimension: slope,
        intercept,
        residual,
        counts: counts.to_vec(),
    })
}

/// A single point has dimension 0; a larger cloud of identical points is
/// rejected.
pub fn box_dimension_estimate<P: AsRef<[f64]> + Sync>(points: &[P], scales: &[f64]) -> Result<DimensionFit, DimensionError> {
    if points.is_empty() {
        return Err(DimensionError::Empty);
    }
    if scales.iter().any(|r| !(*r > 0.0)) {
        return Err(DimensionError::BadScales);
    }
    if points.len() > 1 && points.iter().all(|p| p.as_ref() == points[0].as_ref()) {
        return Err(DimensionError::Degenerate);
    }
    let counts: Vec<(f64, usize)> = scales.iter().map(|&r| (r, box_count(points, r))).collect();
    fit_counts(&counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scales() -> Vec<f64> {
        (1..=5).map(|m| 4f64.powi(-m)).collect()
    }

    #[test]
    fn plane_grid_in_four_space() {
        let n = 512;
        let pts: Vec<[f64; 4]> = (0..n * n)
            .map(|i| [(i % n) as f64 / n as f64 + 1e-9, (i / n) as f64 / n as f64 + 1e-9, 0.0, 0.0])
            .collect();
        let scales: Vec<f64> = (2..=8).map(|m| 2f64.powi(-m)).collect();
        let fit = box_dimension_estimate(&pts, &scales).unwrap();
        assert!((fit.dimension - 2.0).abs() < 0.1, "{fit:?}");
    }

    #[test]
    fn single_point_and_degenerate() {
        let one = [[0.3, 0.1]];
        assert_eq!(box_dimension_estimate(&one, &scales()).unwrap().dimension, 0.0);
        let same = vec![[0.3, 0.1]; 10];
        assert_eq!(box_dimension_estimate(&same, &scales()), Err(DimensionError::Degenerate));
        assert_eq!(box_dimension_estimate(&one, &scales()[..3]), Err(DimensionError::TooFewScales(4)));
    }
}
