//! Distances in the Grushin plane and a Lipschitz map from a cusp region onto
//! the square that no bi-Lipschitz pieces can exhaust.

use carnot_lab::counterexamples::{
    extension_lipschitz_scan, grushin_distance_estimate, grushin_lower_bound, nondecomposability_audit,
    CandidatePiece, ExtensionMap, GrushinPoint,
};

fn main() {
    let o = GrushinPoint::new(0.0, 0.0);
    for h in [0.01, 0.04, 0.16, 0.64] {
        let d = grushin_distance_estimate(o, GrushinPoint::new(0.0, h), 200, 1).unwrap();
        println!(
            "d(0, (0, {h})) in [{:.4}, {:.4}], upper / sqrt(h) = {:.4} (geodesic {:.4})",
            d.lower,
            d.upper,
            d.upper / h.sqrt(),
            (2.0 * std::f64::consts::PI).sqrt()
        );
    }
    let (p, q) = (GrushinPoint::new(0.3, 0.0), GrushinPoint::new(0.3, 0.2));
    let d = grushin_distance_estimate(p, q, 200, 1).unwrap();
    println!("off the axis: lower {:.4} (bound {:.4}), upper {:.4}", d.lower, grushin_lower_bound(p, q), d.upper);

    let map = ExtensionMap::new(0.1).unwrap();
    for (x, y) in [(0.09, 0.0), (0.05, 0.5), (0.001, 0.25), (0.0, 0.7)] {
        let g = GrushinPoint::new(x, y);
        println!("E({x}, {y}) = {:?}", map.eval(g).unwrap());
    }
    println!("extension Lipschitz ratio: {:.3}", extension_lipschitz_scan(&map, 100_000, 1));

    let pieces = vec![
        CandidatePiece { rects: vec![[-0.1, 0.1, -0.1, 1.1]], claimed_constant: 100.0 },
        CandidatePiece { rects: vec![[0.01, 0.1, -0.1, 1.1]], claimed_constant: 10.0 },
    ];
    let audit = nondecomposability_audit(&pieces, 5).unwrap();
    for (piece, a) in pieces.iter().zip(&audit.pieces) {
        println!(
            "piece {:?} claiming L = {}: axis measure {:.3}, shown to fail {}",
            piece.rects, piece.claimed_constant, a.axis_measure, a.fails
        );
    }
    println!(
        "remainder measure {:.4}; its image meets {:.1}% of the depth-5 boxes",
        audit.remainder_measure,
        100.0 * audit.box_fraction
    );
}
