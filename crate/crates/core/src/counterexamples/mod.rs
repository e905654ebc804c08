//! Maps that defeat bi-Lipschitz decomposition outside the Carnot setting: a
//! measure-preserving square-filling curve on the snowflaked interval, and its
//! extension to a neighbourhood of an axis segment in the Grushin plane.

pub mod curve;
pub mod grushin;

use serde::{Deserialize, Serialize};

pub use curve::{
    bilip_failure_scan, collision_pairs, collision_witness, collision_witness_for, dyadic_visits,
    measure_preservation_check, snowflake_dimension, snowflake_lipschitz, space_filling_curve, Collision,
    CurveError, CurveTable, IntervalSet, MeasureReport, ScanReport, SpaceFillingCurve, EVAL_DEPTH,
};
pub use grushin::{
    extension_lipschitz_scan, grushin_distance_estimate, grushin_extension_map, grushin_lower_bound,
    DistanceInterval, ExtensionMap, GrushinError, GrushinPoint,
};

/// A proposed bi-Lipschitz piece: a union of rectangles `[x0, x1] x [y0, y1]`
/// in the Grushin plane with a claimed constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePiece {
    pub rects: Vec<[f64; 4]>,
    pub claimed_constant: f64,
}

impl CandidatePiece {
    /// The piece restricted to the axis segment, as a set of parameters.
    pub fn axis_trace(&self) -> IntervalSet {
        IntervalSet::new(
            self.rects
                .iter()
                .filter(|r| r[0] <= 0.0 && 0.0 <= r[1])
                .map(|r| (r[2], r[3]))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceAudit {
    pub axis_measure: f64,
    pub scan: ScanReport,
    /// A pair in the piece beats its claimed constant.
    pub fails: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub depth: usize,
    pub pieces: Vec<PieceAudit>,
    /// Part of the axis segment not inside a piece that survived the scan.
    pub remainder: IntervalSet,
    pub remainder_measure: f64,
    /// Occupied cells of side `2^-depth` by the image of the remainder.
    pub remainder_boxes: usize,
    pub full_boxes: usize,
    pub box_fraction: f64,
    /// The remainder still fills at least 90% of the square's cells.
    pub consistent: bool,
}

/// Scale of the steering neighbourhood around collision points.
pub const STEERING_RADIUS: f64 = 1e-9;

/// Every piece is scanned on its axis trace against its own constant; what
/// is left of the axis after removing the pieces that pass must be carried by
/// the garbage set, and its image is box-counted against the full square.
pub fn nondecomposability_audit(pieces: &[CandidatePiece], depth: usize) -> Result<AuditReport, CurveError> {
    let mut audits = Vec::new();
    let mut survivors = IntervalSet::default();
    for piece in pieces {
        let trace = piece.axis_trace();
        let scan = bilip_failure_scan(&trace, &[piece.claimed_constant], depth, STEERING_RADIUS)?;
        let fails = scan.all_defeated;
        if !fails {
            survivors = survivors.union(&trace);
        }
        audits.push(PieceAudit { axis_measure: trace.measure(), scan, fails });
    }
    let remainder = IntervalSet::full().difference(&survivors);
    let curve = SpaceFillingCurve::new(depth + 2);
    let n = 1usize << depth;
    let samples = 1usize << (2 * depth + 4);
    let mut hit = vec![false; n * n];
    for i in 0..samples {
        let s = (i as f64 + 0.5) / samples as f64;
        if remainder.contains(s) {
            let (ix, iy) = curve.cell(s, depth);
            hit[iy * n + ix] = true;
        }
    }
    let remainder_boxes = hit.iter().filter(|&&h| h).count();
    let full_boxes = n * n;
    let box_fraction = remainder_boxes as f64 / full_boxes as f64;
    Ok(AuditReport {
        depth,
        pieces: audits,
        remainder_measure: remainder.measure(),
        remainder,
        remainder_boxes,
        full_boxes,
        box_fraction,
        consistent: box_fraction >= 0.9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audits() {
        let whole = CandidatePiece { rects: vec![[-0.1, 0.1, -0.1, 1.1]], claimed_constant: 100.0 };
        let r = nondecomposability_audit(&[whole], 4).unwrap();
        assert!(r.pieces[0].fails && r.consistent && (r.remainder_measure - 1.0).abs() < 1e-12);

        let away = CandidatePiece { rects: vec![[0.02, 0.1, 0.0, 1.0], [-0.1, -0.05, 0.2, 0.9]], claimed_constant: 2.0 };
        let r = nondecomposability_audit(&[away], 4).unwrap();
        assert!(!r.pieces[0].fails && r.pieces[0].axis_measure == 0.0);
        assert_eq!(r.remainder_boxes, r.full_boxes);

        let r = nondecomposability_audit(&[], 3).unwrap();
        assert_eq!((r.remainder_measure, r.box_fraction), (1.0, 1.0));

        // A sliver below the finest witness scale survives but cannot dent
        // the image.
        let sliver = CandidatePiece { rects: vec![[-0.01, 0.01, 0.5001, 0.5002]], claimed_constant: 1.0 };
        let r = nondecomposability_audit(&[sliver], 3).unwrap();
        assert!(!r.pieces[0].fails && r.consistent);
    }
}
