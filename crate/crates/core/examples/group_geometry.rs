//! Group law, dilations and distances on the first Heisenberg group.

use carnot_lab::group::Group;

fn main() {
    let g = Group::heisenberg(1);
    let p = g.point(&[1.0, 0.0, 0.0]).unwrap();
    let q = g.point(&[0.0, 1.0, 0.0]).unwrap();
    let pq = g.multiply(&p, &q).unwrap();
    let qp = g.multiply(&q, &p).unwrap();
    println!("p q = {:?}, q p = {:?}", pq.coords(), qp.coords());
    println!("p^-1 = {:?}", g.inverse(&p).unwrap().coords());
    println!("delta_2 (p q) = {:?}", g.dilate(2.0, &pq).unwrap().coords());

    let a = g.point(&[3.0, 4.0, 9.0]).unwrap();
    println!("d((3,4,9), 0) = {}", g.quasidistance(&a, &g.identity()).unwrap());

    for (x, t) in [(1.0, 0.0), (0.0, 1.0), (0.5, 0.5)] {
        let b = g.point(&[x, 0.0, t]).unwrap();
        let cc = g.cc_distance_estimate(&g.identity(), &b, 200).unwrap();
        println!(
            "({x}, 0, {t}): quasidistance {:.4}, sub-Riemannian distance in [{:.4}, {:.4}]",
            g.quasidistance(&b, &g.identity()).unwrap(),
            cc.lower,
            cc.upper
        );
    }

    for group in [Group::heisenberg(1), Group::heisenberg(2), Group::euclidean(3)] {
        let r = group.property_audit(10_000, 1, 1e-12);
        let c = group.quasi_triangle_constant(100_000, 1);
        println!(
            "{}: laws {} (worst associativity defect {:.1e}), quasi-triangle constant {:.4}",
            group.kind(),
            if r.pass { "hold" } else { "FAIL" },
            r.associativity,
            c.value
        );
    }
}
