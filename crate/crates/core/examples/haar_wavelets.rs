//! Haar pairs on sibling H_1 cubes: inner products, coefficient ratios and the
//! overlap profile across translated families.

use carnot_lab::dyadic::{LatticePoint, Mesh};
use carnot_lab::group::GroupPoint;
use carnot_lab::wavelets::{self, HaarPair};

fn main() {
    let mesh = Mesh::heisenberg(1);
    let kids = mesh.children(&mesh.origin());
    let h = HaarPair::new(&mesh, kids[17].clone(), kids[4242].clone()).unwrap();
    let parent = mesh.parent(&h.plus).unwrap();

    let f = |p: &GroupPoint| h.eval(&mesh, p);
    let hh = wavelets::inner_product(&mesh, &f, &f, &parent, 100_000, 1).unwrap();
    println!(
        "<h, h> = {:.3e} +- {:.1e} (closed form {:.1e})",
        hh.value,
        hh.sigma,
        h.norm_squared(&mesh)
    );

    let field = |p: &GroupPoint| p.coords[0] + 0.5 * p.coords[2];
    let r = wavelets::coefficient_ratio(&mesh, &field, &h, 20_000, 2).unwrap();
    println!("coefficient ratio of x + t/2: {:.4e} +- {:.1e}", r.value, r.sigma);

    for beta in 1..=2 {
        let fams: Vec<LatticePoint> = [[0, 0, 0], [37, -12, 900], [-50, 50, -5000]]
            .iter()
            .map(|ints| wavelets::family_translate(&mesh, beta, ints))
            .collect();
        let t0 = std::time::Instant::now();
        let prof = wavelets::orthogonality_profile(&mesh, beta, &fams).unwrap();
        println!(
            "beta {beta}: K = {} over {} families (single family {}), {:.2?}",
            prof.k,
            prof.families,
            prof.same_family,
            t0.elapsed()
        );
    }
}
