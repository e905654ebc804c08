//! A measure-preserving square-filling curve on [0, 1], and why no piece of
//! positive measure is bi-Lipschitz from the snowflaked interval.

use carnot_lab::counterexamples::{
    bilip_failure_scan, collision_witness, dyadic_visits, measure_preservation_check, snowflake_dimension,
    snowflake_lipschitz, CurveTable, IntervalSet, SpaceFillingCurve, STEERING_RADIUS,
};

fn main() {
    let curve = SpaceFillingCurve::new(12);
    for s in [0.0, 0.25, 1.0 / 6.0, 0.5, 0.75, 1.0] {
        println!("F({s:.4}) = {:?}", curve.eval(s).unwrap());
    }

    let table = CurveTable::hilbert();
    for d in [2, 4, 8] {
        let v = dyadic_visits(&table, d);
        println!("depth {d}: {} cells, every one visited once: {}", v.len(), v.iter().all(|&c| c == 1));
    }
    let broken = dyadic_visits(&CurveTable::broken(), 2);
    println!("broken table at depth 2: visit counts {:?}", &broken[..8]);
    let m = measure_preservation_check(&table, 2, 100_000, 1);
    println!("preimage measure: worst cell {:.2} sigma off, pass {}", m.worst_sigma, m.pass);

    let c = collision_witness(8).unwrap();
    println!("collision: F({:.6}) and F({:.6}) are {:.1e} apart", c.s, c.t, c.image_distance);
    println!("square-root Holder constant: {:.3}", snowflake_lipschitz(&curve, 100_000, 1));
    let scales: Vec<f64> = (1..=8).map(|k| 2f64.powi(-k)).collect();
    println!("snowflake box dimension: {:.3}", snowflake_dimension(1_000_001, &scales).unwrap().dimension);

    let set = IntervalSet::new(vec![(0.1, 0.3), (0.45, 0.9)]);
    let scan = bilip_failure_scan(&set, &[1.0, 10.0, 100.0], 2, STEERING_RADIUS).unwrap();
    for s in &scan.scans {
        match &s.violation {
            Some(v) => println!("L = {}: ratio {:.2e} at ({:.6}, {:.6})", s.l, v.ratio, v.y, v.y_prime),
            None => println!("L = {}: no violation found", s.l),
        }
    }
}
