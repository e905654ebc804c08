//! Decompose a few maps on the first Heisenberg group and the plane and print
//! the piece tables.

use std::time::Instant;

use carnot_lab::decomposer::{decompose, DecomposeConfig, ScreenPolicy};
use carnot_lab::dyadic::Mesh;
use carnot_lab::group::Group;
use carnot_lab::maps::{Glue, Homomorphism, HorizontalProjection, Identity, LipschitzMap};

fn show(name: &str, f: &dyn LipschitzMap, mesh: &Mesh, cfg: &DecomposeConfig) {
    let t = Instant::now();
    let r = decompose(f, mesh, cfg).expect("decompose");
    println!(
        "{name}: {} pieces, garbage {:.4}, screened pairs {}, K = {:.3}  ({:.1}s)",
        r.pieces.len(),
        r.garbage_measure,
        r.screened.len(),
        r.content_normalisation,
        t.elapsed().as_secs_f64()
    );
    for s in &r.stages {
        println!(
            "  stage {} scale {}: {} cubes, {} garbage, {} bad, {} screened, longest label {}",
            s.stage, s.scale, s.cubes, s.garbage_cubes, s.bad_pairs, s.screened_pairs, s.max_label_len
        );
    }
    for p in r.pieces.iter().take(8) {
        println!(
            "  piece {:>8}: measure {:.3}, ratios [{:.3}, {:.3}], constant {:.3}",
            p.label.to_string(),
            p.measure,
            p.ratio_min,
            p.ratio_max,
            p.bilipschitz
        );
    }
    let tails: Vec<String> = r.overlap.tails.iter().map(|t| format!("N={} {:.4}", t.n, t.mass)).collect();
    println!("  overlap mean {:.3}, tails {}", r.overlap.mean, tails.join(", "));
}

fn main() {
    let h1 = Mesh::heisenberg(1);
    let g = h1.group().clone();
    let cfg = DecomposeConfig::default();
    show("identity", &Identity(g.clone()), &h1, &cfg);
    let psi = Homomorphism {
        source: g.clone(),
        target: g.clone(),
        psi: vec![vec![2.0, 0.0], vec![0.0, 0.5]],
        vertical: 1.0,
    };
    show("diag(2, 1/2)", &psi, &h1, &cfg);
    show("projection", &HorizontalProjection::new(g.clone()), &h1, &cfg);

    let plane = Mesh::euclidean(2);
    let fold = Glue::new(Group::euclidean(2));
    let cfg = DecomposeConfig {
        depth: 2,
        samples: 20_000,
        cube_samples: 256,
        screen: ScreenPolicy::PassAll,
        ..Default::default()
    };
    show("plane fold", &fold, &plane, &cfg);
}
