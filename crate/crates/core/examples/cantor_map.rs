//! The box construction behind a Lipschitz map from H_1 onto a Cantor set of
//! dimension 4 - eps in R^4.

use carnot_lab::cantor::{self, BoxAddress, CantorLocation, CantorMap, CantorParams, Side};
use carnot_lab::dimension::{box_count, box_dimension_estimate};
use carnot_lab::maps::LipschitzMap;

fn main() {
    let params = CantorParams::derive(2.0, None).unwrap();
    println!(
        "gamma {}, beta {}, lambda {:.4}, target dimension {}",
        params.gamma,
        params.beta,
        params.lambda,
        params.target_dimension()
    );

    let addr = BoxAddress::new(vec![3, 16], Side::Source).unwrap();
    let b = cantor::source_box(&addr, &params).unwrap();
    println!("source box [3, 16]: centre {:?}, half-sides {:?}", b.centre.coords(), b.half_sides);

    let sep = cantor::separation_audit(&params, 10_000, 1);
    println!(
        "separation: horizontal {:.3} (need {}), bottom {:.2}, stacked {:.2} -> {}",
        sep.horizontal_min, sep.horizontal_threshold, sep.bottom_min, sep.stacked_min, sep.pass
    );
    let squashed = cantor::separation_audit(&params.with_lambda(params.lambda / 2.0), 10_000, 1);
    println!("with lambda halved: {} {:?}", squashed.pass, squashed.violations);

    let map = CantorMap::new(params, 6);
    let x = cantor::source_point(&[5, 9, 2], &params).unwrap();
    match cantor::cantor_address(&x, &params, 3) {
        CantorLocation::Address { address } => println!("digits {:?} -> {:?}", address, map.eval(&x).unwrap().coords()),
        other => println!("{other:?}"),
    }

    for d in 1..=4 {
        let n = box_count(&cantor::image_cloud(&params, d), params.gamma.powi(d as i32));
        println!("depth {d}: {n} occupied boxes of side gamma^{d}");
    }
    let cloud = cantor::image_cloud(&params, 6);
    let scales: Vec<f64> = (1..6).map(|k| params.gamma.powi(k)).collect();
    let fit = box_dimension_estimate(&cloud, &scales).unwrap();
    println!("box dimension of {} image points: {:.3}", cloud.len(), fit.dimension);
    println!("Lipschitz ratio over 10^5 pairs: {:.3}", cantor::lipschitz_scan(&map, 100_000, 1));
    let band = cantor::cantor_ratio_band(&params, 4, 2000, 1);
    println!("distance ratios on the Cantor set lie in [{:.3}, {:.3}]", band.min, band.max);
}
