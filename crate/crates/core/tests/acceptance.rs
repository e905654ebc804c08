//! End-to-end acceptance run. Prints one line per criterion and exits
//! non-zero if any fails.

use std::time::Instant;

use clap::Parser;
use serde_json::Value;

use carnot_lab::cantor::{self, CantorMap, CantorParams};
use carnot_lab::cli::{self, Cli, Envelope};
use carnot_lab::decomposer::{self, DecomposeConfig, ScreenPolicy};
use carnot_lab::dyadic::Mesh;
use carnot_lab::group::Group;
use carnot_lab::maps::{AffineMap, Conjugation, Constant, Dilation, Glue, HorizontalProjection, Identity, LipschitzMap};
use carnot_lab::pansu;

type Outcome = (bool, Vec<String>);

struct Notes {
    ok: bool,
    lines: Vec<String>,
}

impl Notes {
    fn new() -> Self {
        Notes { ok: true, lines: Vec::new() }
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.ok &= pass;
        self.lines.push(format!("{} {name}: {detail}", if pass { "ok  " } else { "FAIL" }));
    }

    fn done(self) -> Outcome {
        (self.ok, self.lines)
    }
}

fn run_cli(args: &[&str]) -> Envelope {
    let cli = Cli::try_parse_from(std::iter::once("carnot").chain(args.iter().copied())).expect("arguments parse");
    cli::execute(&cli).expect("command runs")
}

/// Copies every check of an envelope into the notes.
fn absorb(n: &mut Notes, env: &Envelope) {
    for c in &env.checks {
        n.check(&format!("{}: {}", env.command, c.name), c.pass, compact(&c.detail));
    }
}

fn compact(v: &Value) -> String {
    let s = v.to_string();
    if s.len() > 160 {
        format!("{}...", &s[..160])
    } else {
        s
    }
}

fn group_laws() -> Outcome {
    let mut n = Notes::new();
    for g in [Group::heisenberg(1), Group::heisenberg(2), Group::euclidean(3)] {
        let t = Instant::now();
        let r = g.property_audit(10_000, 1, 1e-12);
        let secs = t.elapsed().as_secs_f64();
        n.check(
            &format!("{} laws", g.kind()),
            r.pass && secs < 10.0,
            format!(
                "assoc {:.1e} id {:.1e} inv {:.1e} dil {:.1e} in {secs:.2}s",
                r.associativity, r.identity, r.inverse, r.dilation
            ),
        );
    }
    n.done()
}

fn quasidistance() -> Outcome {
    let mut n = Notes::new();
    let g = Group::heisenberg(1);
    let r = g.property_audit(10_000, 2, 1e-12);
    n.check("left invariance", r.left_invariance <= 1e-12, format!("{:.1e}", r.left_invariance));
    let d = g.quasidistance(&g.point(&[3.0, 4.0, 9.0]).unwrap(), &g.identity()).unwrap();
    n.check("d((3,4,9), 0)", d == 4.0, format!("{d}"));
    let small = g.quasi_triangle_constant(10_000, 3).value;
    let large = g.quasi_triangle_constant(100_000, 3).value;
    let drift = (small - large).abs() / large;
    n.check("quasi-triangle drift", drift < 0.05, format!("{small:.4} vs {large:.4}, drift {drift:.4}"));
    n.done()
}

fn cubes() -> Outcome {
    let mut n = Notes::new();
    absorb(&mut n, &run_cli(&["cubes", "audit", "--scales", "1,2", "--samples", "100000"]));
    let mesh = Mesh::heisenberg(1);
    let kids = mesh.children(&mesh.origin()).len();
    n.check("10^4 children", kids == 10_000, format!("{kids}"));
    n.done()
}

fn wavelets() -> Outcome {
    let mut n = Notes::new();
    absorb(&mut n, &run_cli(&["wavelets", "profile", "--betas", "1,2", "--samples", "100000"]));
    n.done()
}

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn differentials() -> Outcome {
    let mut n = Notes::new();
    let g = Group::heisenberg(1);
    let steps = pansu::default_steps();
    let p = g.point(&[0.3, -0.7, 1.1]).unwrap();
    let cases: Vec<(&str, Box<dyn LipschitzMap>, Vec<Vec<f64>>)> = vec![
        ("identity", Box::new(Identity(g.clone())), vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
        ("dilation 2.5", Box::new(Dilation { group: g.clone(), lambda: 2.5 }), vec![vec![2.5, 0.0], vec![0.0, 2.5]]),
        ("conjugation", Box::new(Conjugation(g.clone())), vec![vec![1.0, 0.0], vec![0.0, -1.0]]),
    ];
    for (name, f, want) in cases {
        let d = pansu::horizontal_matrix(f.as_ref(), &p, &steps).unwrap();
        let err = max_diff(&d.matrix, &want);
        n.check(name, err <= 1e-9 && d.verdict == pansu::Verdict::Converged, format!("error {err:.1e}, {:?}", d.verdict));
    }

    let phi = pansu::extend_horizontal(&[vec![1.0, 1.0], vec![0.0, 1.0]], &g, &g).unwrap();
    let g0 = g.point(&[0.2, -0.1, 0.3]).unwrap();
    let f1 = AffineMap { h0: g.point(&[1.0, 2.0, 3.0]).unwrap(), phi: phi.clone(), g0 };
    let g1 = g.point(&[-0.4, 0.9, 0.05]).unwrap();
    let f2 = AffineMap { h0: f1.eval(&g1).unwrap(), phi, g0: g1.clone() };
    let r = pansu::rigidity_check(&f1, &f2, &g1, 50, 10_000, 5).unwrap();
    n.check(
        "rigidity",
        r.hypotheses_hold && r.maps_agree && r.max_value_difference <= 1e-9,
        format!("MF gap {:.1e}, value gap {:.1e} over {}", r.max_mf_difference, r.max_value_difference, r.value_points),
    );

    let e2 = Group::euclidean(2);
    let h = pansu::extend_horizontal(&[vec![2.0, -1.0], vec![0.5, 3.0]], &g, &e2).unwrap();
    let img = h.apply(&g.point(&[0.0, 0.0, 7.0]).unwrap());
    n.check("vertical killed in R^2", h.vertical == 0.0 && img.coords() == [0.0, 0.0], format!("{:?}", img.coords()));
    n.done()
}

fn decomposition() -> Outcome {
    let mut n = Notes::new();
    let t = Instant::now();
    let h1 = Mesh::heisenberg(1);
    let g = h1.group().clone();
    let cfg = DecomposeConfig { seed: 7, ..Default::default() };

    let (id, labels) = decomposer::decompose_with_labels(&Identity(g.clone()), &h1, &cfg).unwrap();
    let pts = decomposer::sample_points(&h1, &cfg);
    let measure: f64 = id.pieces.iter().map(|p| p.measure).sum();
    let bilip = id.pieces.iter().map(|p| p.bilipschitz).fold(0.0, f64::max);
    n.check(
        "identity",
        id.pieces.len() == 1 && measure >= 0.99 && bilip <= 1.05,
        format!("{} pieces, measure {measure:.4}, constant {bilip:.4}", id.pieces.len()),
    );
    let v = id.separation_violations(&h1, &pts, &labels);
    n.check("identity separation", v == 0, format!("{v} violations"));
    let cap = 1usize << cfg.n_cap;
    n.check("piece cap", id.pieces.len() <= cap, format!("{} <= {cap}", id.pieces.len()));

    let c = decomposer::decompose(&Constant::origin(g.clone(), g.clone()), &h1, &cfg).unwrap();
    let s0 = &c.stages[0];
    n.check(
        "constant",
        s0.garbage_points == cfg.samples && c.pieces.is_empty(),
        format!("{} of {} points garbage at the first stage", s0.garbage_points, cfg.samples),
    );

    let p = decomposer::decompose(&HorizontalProjection::new(g.clone()), &h1, &cfg).unwrap();
    n.check("projection", p.garbage_measure >= 0.99, format!("garbage {:.4}", p.garbage_measure));

    let plane = Mesh::euclidean(2);
    let fold = Glue::new(Group::euclidean(2));
    let fcfg = DecomposeConfig {
        depth: 2,
        samples: 20_000,
        cube_samples: 256,
        screen: ScreenPolicy::PassAll,
        seed: 7,
        ..Default::default()
    };
    let (fr, flabels) = decomposer::decompose_with_labels(&fold, &plane, &fcfg).unwrap();
    let fpts = decomposer::sample_points(&plane, &fcfg);
    let v = fr.separation_violations(&plane, &fpts, &flabels);
    let screened = fr.screened.len();
    n.check("fold separation", v == 0 && screened > 0, format!("{screened} screened pairs, {v} violations"));
    n.check("fold piece cap", fr.pieces.len() <= 1 << fcfg.n_cap, format!("{} pieces", fr.pieces.len()));
    let again = decomposer::decompose(&fold, &plane, &fcfg).unwrap();
    n.check("rerun identical", again.to_json() == fr.to_json(), "compared full reports".into());

    let secs = t.elapsed().as_secs_f64();
    n.check("runtime", secs < 300.0, format!("{secs:.1}s"));
    n.done()
}

fn cantor_set() -> Outcome {
    let mut n = Notes::new();
    let p = CantorParams::derive(2.0, None).unwrap();
    let gamma = 16f64.powf(1.0 / (2.0 - 4.0));
    let ok = (p.gamma - gamma).abs() <= 1e-12
        && (p.lambda * (0.25 - p.beta * p.beta) - 20.0).abs() <= 1e-12
        && (p.target_dimension() - 2.0).abs() <= 1e-12;
    n.check("parameters", ok, format!("gamma {} beta {} lambda {}", p.gamma, p.beta, p.lambda));
    let sep = cantor::separation_audit(&p, 10_000, 1);
    n.check("separation", sep.pass, compact(&serde_json::to_value(&sep).unwrap()));
    let bad = cantor::separation_audit(&p.with_lambda(p.lambda / 2.0), 10_000, 1);
    n.check("halved lambda rejected", !bad.pass, "audit fails".into());
    absorb(&mut n, &run_cli(&["cantor", "dim", "--epsilon", "2", "--depth", "6"]));
    let l4 = cantor::lipschitz_scan(&CantorMap::new(p, 4), 100_000, 2);
    let l6 = cantor::lipschitz_scan(&CantorMap::new(p, 6), 100_000, 2);
    let drift = (l4 - l6).abs() / l6;
    n.check("Lipschitz drift", drift < 0.1, format!("{l4:.3} vs {l6:.3}"));
    for d in 1..=4 {
        let cloud = cantor::image_cloud(&p, d);
        let boxes = carnot_lab::dimension::box_count(&cloud, p.gamma.powi(d as i32));
        n.check(&format!("depth {d} boxes"), boxes == 16usize.pow(d as u32), format!("{boxes}"));
    }
    n.done()
}

fn counterexamples() -> Outcome {
    let mut n = Notes::new();
    absorb(&mut n, &run_cli(&["counterex", "curve", "--depth", "8"]));
    absorb(&mut n, &run_cli(&["counterex", "grushin"]));
    n.done()
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("group laws", group_laws),
        ("quasidistance", quasidistance),
        ("dyadic cubes", cubes),
        ("Haar wavelets", wavelets),
        ("Pansu differentials", differentials),
        ("decomposition", decomposition),
        ("Cantor map", cantor_set),
        ("counterexamples", counterexamples),
    ];
    let verbose = std::env::var_os("ACCEPTANCE_VERBOSE").is_some();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (ok, lines) = f();
        println!("criterion {} {name}: {} ({:.1}s)", i + 1, if ok { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
        for l in lines.iter().filter(|l| verbose || !ok || l.starts_with("FAIL")) {
            println!("    {l}");
        }
        failed += usize::from(!ok);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
