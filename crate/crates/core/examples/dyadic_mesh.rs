//! Build the H_1 cube mesh, look up a point's cubes and audit tiling and
//! neighbour counts.

use carnot_lab::dyadic::Mesh;
use carnot_lab::group::Group;

fn main() {
    let mesh = Mesh::new(Group::heisenberg(1)).unwrap();
    let g = mesh.group();
    let p = g.point(&[0.04, -0.03, 0.007]).unwrap();

    for scale in 0..=3 {
        let c = mesh.address_of(&p, scale, None).unwrap();
        println!("scale {scale}: base {:?}", mesh.lattice_coords(&c.base).as_slice());
    }
    println!("children per cube: {}", mesh.children_per_cube());
    println!("diameter(0) = {:.6}, diameter(1) = {:.6}", mesh.diameter(0), mesh.diameter(1));

    for scale in 1..=3 {
        println!("neighbours at scale {scale}: {}", mesh.neighbor_count_audit(scale).unwrap());
    }

    let t0 = std::time::Instant::now();
    for scale in 1..=2 {
        let r = mesh.tiling_audit(scale, 100_000, 7, None).unwrap();
        println!(
            "tiling at scale {scale}: coverage {} (sigma {:.2e}), window agreement {:.3}",
            r.coverage, r.sigma, r.window_agreement
        );
    }
    println!("audit time {:.2?}", t0.elapsed());
}
