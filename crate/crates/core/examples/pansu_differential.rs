//! Horizontal matrices of a few maps, and the rigidity of affine maps.

use carnot_lab::group::Group;
use carnot_lab::maps::{AffineMap, Conjugation, Dilation, HorizontalProjection, Identity, LipschitzMap};
use carnot_lab::pansu::{default_steps, extend_horizontal, horizontal_matrix, rigidity_check};

fn main() {
    let g = Group::heisenberg(1);
    let p = g.point(&[0.3, -0.7, 1.1]).unwrap();
    let steps = default_steps();
    let maps: Vec<Box<dyn LipschitzMap>> = vec![
        Box::new(Identity(g.clone())),
        Box::new(Dilation { group: g.clone(), lambda: 2.5 }),
        Box::new(Conjugation(g.clone())),
        Box::new(HorizontalProjection::new(g.clone())),
    ];
    for f in &maps {
        let d = horizontal_matrix(f.as_ref(), &p, &steps).unwrap();
        let rows: Vec<String> = d.matrix.iter().map(|r| format!("{:.6?}", r)).collect();
        println!("{:<24} {}  ({:?})", f.name(), rows.join(" "), d.verdict);
    }

    // A shear of the horizontal plane extends to an automorphism of H_1
    // (vertical factor = determinant) and to a homomorphism into the plane.
    let shear = vec![vec![1.0, 1.0], vec![0.0, 1.0]];
    let phi = extend_horizontal(&shear, &g, &g).unwrap();
    println!("shear extends with vertical factor {}", phi.vertical);
    let flat = extend_horizontal(&shear, &g, &Group::euclidean(2)).unwrap();
    println!("into R^2: (0, 0, 7) -> {:?}", flat.apply(&g.point(&[0.0, 0.0, 7.0]).unwrap()).coords());
    let rotation = vec![vec![0.6, -0.8], vec![0.8, 0.6]];
    println!("rotation extends: {}", extend_horizontal(&rotation, &g, &g).is_ok());
    // On H_2 both symplectic planes must be scaled alike.
    let h2 = Group::heisenberg(2);
    let id4: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let mut uneven = id4.clone();
    uneven[2][2] = 2.0;
    println!("diag(1, 1, 2, 1) on H_2 extends: {}", extend_horizontal(&uneven, &h2, &h2).is_ok());
    println!("identity on H_2 extends: {}", extend_horizontal(&id4, &h2, &h2).is_ok());

    let g0 = g.point(&[0.2, -0.1, 0.3]).unwrap();
    let f1 = AffineMap { h0: g.point(&[1.0, 2.0, 3.0]).unwrap(), phi: phi.clone(), g0 };
    let g1 = g.point(&[-0.4, 0.9, 0.05]).unwrap();
    let f2 = AffineMap { h0: f1.eval(&g1).unwrap(), phi, g0: g1.clone() };
    let r = rigidity_check(&f1, &f2, &g1, 20, 10_000, 5).unwrap();
    println!(
        "rigidity: differentials differ by {:.1e}, values by {:.1e} over {} points",
        r.max_mf_difference, r.max_value_difference, r.value_points
    );
}
