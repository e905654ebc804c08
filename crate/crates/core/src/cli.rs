//! The `carnot` command line: one subcommand per experiment, each printing a
//! JSON envelope and optionally writing it, plus CSV tables, to `--out`.
//!
//! Exit status is 0 when every check in the envelope passes, 1 when one
//! fails and 2 for bad usage or input.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::cantor::{self, CantorMap, CantorParams};
use crate::counterexamples::{self as cx, CandidatePiece, GrushinPoint, IntervalSet};
use crate::decomposer::{self, DecomposeConfig, ScreenPolicy};
use crate::dimension;
use crate::dyadic::{LatticePoint, Mesh};
use crate::group::{Group, GroupPoint};
use crate::maps::{self, MapHandle};
use crate::pansu;
use crate::wavelets::{self, HaarPair};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "carnot", version, about = "Experiments on Carnot groups, Lipschitz maps and their decompositions")]
pub struct Cli {
    /// Worker threads for sampling-heavy commands; results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Directory for the JSON report and CSV tables.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Group law and quasidistance checks.
    #[command(subcommand)]
    Group(GroupCmd),
    /// Dyadic mesh audits.
    #[command(subcommand)]
    Cubes(CubesCmd),
    /// Haar pair norms and support overlap profiles.
    #[command(subcommand)]
    Wavelets(WaveletsCmd),
    /// Horizontal matrix of a built-in map at a point.
    #[command(subcommand)]
    Pansu(PansuCmd),
    /// Bi-Lipschitz decomposition of a built-in map.
    #[command(subcommand)]
    Decompose(DecomposeCmd),
    /// The Cantor-set map onto a set of dimension `4 - eps`.
    #[command(subcommand)]
    Cantor(CantorCmd),
    /// Space-filling curve and Grushin plane counterexamples.
    #[command(subcommand)]
    Counterex(CounterexCmd),
}

#[derive(Debug, Subcommand)]
pub enum GroupCmd {
    Check(GroupCheck),
}

#[derive(Debug, Subcommand)]
pub enum CubesCmd {
    Audit(CubesAudit),
}

#[derive(Debug, Subcommand)]
pub enum WaveletsCmd {
    Profile(WaveletsProfile),
}

#[derive(Debug, Subcommand)]
pub enum PansuCmd {
    Probe(PansuProbe),
}

#[derive(Debug, Subcommand)]
pub enum DecomposeCmd {
    Run(DecomposeRun),
}

#[derive(Debug, Subcommand)]
pub enum CantorCmd {
    Build(CantorBuild),
    Dim(CantorDim),
}

#[derive(Debug, Subcommand)]
pub enum CounterexCmd {
    Curve(CurveArgs),
    Grushin(GrushinArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GroupCheck {
    /// `h<n>` for the Heisenberg group `H_n`, `e<k>` for `R^k`.
    #[arg(long, default_value = "h1")]
    pub group: String,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct CubesAudit {
    #[arg(long, default_value = "h1")]
    pub group: String,
    #[arg(long, value_delimiter = ',', default_values_t = [1u32, 2])]
    pub scales: Vec<u32>,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct WaveletsProfile {
    #[arg(long, default_value = "h1")]
    pub group: String,
    #[arg(long, value_delimiter = ',', default_values_t = [1u32, 2])]
    pub betas: Vec<u32>,
    #[arg(long, default_value_t = 3)]
    pub families: usize,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct PansuProbe {
    #[arg(long, default_value = "identity")]
    pub map: String,
    #[arg(long, default_value = "h1")]
    pub group: String,
    /// Comma-separated coordinates.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [0.1, 0.2, 0.3])]
    pub point: Vec<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct DecomposeRun {
    /// identity, constant, dilation:<l>, conjugation, projection, glue or
    /// cantor:<eps>.
    #[arg(long, default_value = "identity")]
    pub map: String,
    #[arg(long, default_value = "h1")]
    pub group: String,
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    #[arg(long, default_value_t = 3)]
    pub depth: u32,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 8)]
    pub n_cap: usize,
    /// wavelet or pass-all.
    #[arg(long, default_value = "wavelet")]
    pub screen: String,
    #[arg(long, default_value_t = 1024)]
    pub cube_samples: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct CantorBuild {
    #[arg(long, default_value_t = 2.0)]
    pub epsilon: f64,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long, default_value_t = 10_000)]
    pub boundary_samples: usize,
    #[arg(long, default_value_t = 100_000)]
    pub pairs: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct CantorDim {
    #[arg(long, default_value_t = 2.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct CurveArgs {
    #[arg(long, default_value_t = 8)]
    pub depth: usize,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 100_000)]
    pub pairs: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct GrushinArgs {
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 200)]
    pub budget: usize,
    /// JSON file holding a list of candidate pieces.
    #[arg(long)]
    pub pieces: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub audit_depth: usize,
    #[arg(long, default_value_t = 100_000)]
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: Value,
}

fn check(name: &str, pass: bool, detail: Value) -> Check {
    Check { name: name.to_string(), pass, detail }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub started: String,
    pub elapsed_ms: u128,
}

/// Everything a subcommand reports. All fields except `timing` depend only on
/// the command line.
#[derive(Debug, Clone, Serialize)]
pub struct Envelope {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: Value,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub report: Value,
    pub artifacts: Vec<String>,
    pub timing: Timing,
}

impl Envelope {
    /// The envelope without `timing`, for rerun comparisons.
    pub fn payload(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("serializable");
        v.as_object_mut().expect("object").remove("timing");
        v
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

struct Output {
    command: String,
    config: Value,
    checks: Vec<Check>,
    report: Value,
    tables: Vec<(String, Vec<String>, Vec<Vec<String>>)>,
}

impl Output {
    fn new<C: Serialize>(command: &str, config: &C) -> Self {
        Output {
            command: command.to_string(),
            config: serde_json::to_value(config).expect("serializable"),
            checks: Vec::new(),
            report: Value::Null,
            tables: Vec::new(),
        }
    }

    fn table(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) {
        self.tables.push((name.to_string(), header.iter().map(|s| s.to_string()).collect(), rows));
    }
}

pub fn parse_group(name: &str) -> Result<Group, CliError> {
    let bad = || CliError::Input(format!("unknown group {name:?}; use h<n> or e<k>"));
    let (kind, n) = name.split_at(1.min(name.len()));
    let n: usize = n.parse().map_err(|_| bad())?;
    match kind {
        "h" if (1..=3).contains(&n) => Ok(Group::heisenberg(n)),
        "e" if (1..=8).contains(&n) => Ok(Group::euclidean(n)),
        _ => Err(bad()),
    }
}

/// Built-in maps by name. Besides the names of [`maps::builtin`] this accepts
/// `conj-automorphism`, `horizontal-projection`, `dilation(<l>)` and
/// `cantor:<eps>` (on `H_1` only).
pub fn named_map(name: &str, group: &Group) -> Result<MapHandle, CliError> {
    let n = name.trim();
    let normal = match n {
        "conj-automorphism" => "conjugation".to_string(),
        "horizontal-projection" => "projection".to_string(),
        _ if n.starts_with("dilation(") && n.ends_with(')') => format!("dilation:{}", &n[9..n.len() - 1]),
        _ => n.to_string(),
    };
    let eps = normal
        .strip_prefix("cantor:")
        .or_else(|| normal.strip_prefix("cantor(").and_then(|s| s.strip_suffix(')')));
    if let Some(eps) = eps {
        if group.kind() != Group::heisenberg(1).kind() {
            return Err(CliError::Input("the Cantor map is defined on h1".into()));
        }
        let eps: f64 = eps.parse().map_err(input)?;
        let params = CantorParams::derive(eps, None).map_err(input)?;
        return Ok(Arc::new(CantorMap::new(params, 6)));
    }
    maps::builtin(&normal, group).ok_or_else(|| CliError::Input(format!("unknown map {name:?} on {}", group.kind())))
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn group_check(a: &GroupCheck, seed: u64) -> Result<Output, CliError> {
    let g = parse_group(&a.group)?;
    let mut out = Output::new("group check", a);
    let props = g.property_audit(a.samples, seed, 1e-12);
    out.checks.push(check("group laws", props.pass, serde_json::to_value(&props).unwrap()));
    let c1 = g.quasi_triangle_constant(a.samples, seed);
    let c2 = g.quasi_triangle_constant(10 * a.samples, seed);
    let drift = (c1.value - c2.value).abs() / c2.value;
    out.checks.push(check(
        "quasi-triangle constant stable",
        drift < 0.05,
        json!({ "small": c1, "large": c2, "drift": drift }),
    ));
    if g.kind() == Group::heisenberg(1).kind() {
        let d = g.quasidistance(&g.point(&[3.0, 4.0, 9.0]).unwrap(), &g.identity()).map_err(input)?;
        out.checks.push(check("d((3,4,9), 0) = 4", d == 4.0, json!(d)));
    }
    out.report = json!({ "group": g.descriptor(), "properties": props, "quasi_triangle": c2 });
    Ok(out)
}

fn cubes_audit(a: &CubesAudit, seed: u64) -> Result<Output, CliError> {
    let mesh = Mesh::new(parse_group(&a.group)?).map_err(input)?;
    let mut out = Output::new("cubes audit", a);
    let mut rows = Vec::new();
    let mut tilings = Vec::new();
    for &s in &a.scales {
        let r = mesh.tiling_audit(s, a.samples, seed, None).map_err(input)?;
        out.checks.push(check(&format!("tiling at scale {s}"), r.pass, json!({ "coverage": r.coverage, "sigma": r.sigma })));
        rows.push(vec![s.to_string(), f(r.coverage), f(r.sigma), f(r.window_agreement)]);
        tilings.push(json!({ "scale": s, "coverage": r.coverage, "sigma": r.sigma, "window_agreement": r.window_agreement,
            "uncovered": r.uncovered.len(), "multiply_covered": r.multiply_covered.len() }));
    }
    let kids = mesh.children(&mesh.origin()).len() as u64;
    out.checks.push(check(
        "children per cube",
        kids == mesh.children_per_cube(),
        json!({ "counted": kids, "expected": mesh.children_per_cube() }),
    ));
    let neighbours: Vec<usize> = (1..=3).map(|s| mesh.neighbor_count_audit(s)).collect::<Result<_, _>>().map_err(input)?;
    out.checks.push(check("neighbour count constant", neighbours.windows(2).all(|w| w[0] == w[1]), json!(neighbours)));
    let ratio = mesh.diameter(0) / mesh.diameter(1);
    out.checks.push(check(
        "diameter ratio",
        (ratio / mesh.ratio() as f64 - 1.0).abs() <= 0.01,
        json!({ "ratio": ratio, "expected": mesh.ratio() }),
    ));
    out.report = json!({ "tilings": tilings, "children": kids, "neighbours": neighbours,
        "diameters": [mesh.diameter(0), mesh.diameter(1)] });
    out.table("tiling", &["scale", "coverage", "sigma", "window_agreement"], rows);
    Ok(out)
}

/// Fixed family translates, in units of `E^-(b+2)`, drawn once from the seed
/// so that every scale sees the same normalised families.
fn family_ints(mesh: &Mesh, count: usize, seed: u64) -> Vec<Vec<i64>> {
    let mut rng = crate::rng::stream(seed, 0xfa);
    let e2 = mesh.ratio() * mesh.ratio();
    let g = mesh.group();
    let mut out = vec![vec![0; g.dim()]];
    while out.len() < count {
        out.push((0..g.dim()).map(|i| {
            let r = if i < g.horizontal_dim() { e2 } else { e2 * e2 };
            rng.gen_range(-r..=r)
        }).collect());
    }
    out
}

fn wavelets_profile(a: &WaveletsProfile, seed: u64) -> Result<Output, CliError> {
    let mesh = Mesh::new(parse_group(&a.group)?).map_err(input)?;
    let mut out = Output::new("wavelets profile", a);
    let ints = family_ints(&mesh, a.families.max(1), seed);
    let mut rows = Vec::new();
    let mut ks = Vec::new();
    let mut profiles = Vec::new();
    for &beta in &a.betas {
        if beta == 0 {
            return Err(CliError::Input("betas start at 1".into()));
        }
        let fams: Vec<LatticePoint> = ints.iter().map(|v| wavelets::family_translate(&mesh, beta, v)).collect();
        let prof = wavelets::orthogonality_profile(&mesh, beta, &fams).map_err(input)?;
        let mut parent = mesh.origin();
        for _ in 1..beta {
            parent = mesh.children(&parent).swap_remove(0);
        }
        let kids = mesh.children(&parent);
        let h = HaarPair::new(&mesh, kids[0].clone(), kids[kids.len() - 1].clone()).map_err(input)?;
        let field = |p: &GroupPoint| h.eval(&mesh, p);
        let hh = wavelets::inner_product(&mesh, &field, &field, &parent, a.samples, crate::rng::mix(&[seed, beta as u64])).map_err(input)?;
        let exact = h.norm_squared(&mesh);
        out.checks.push(check(
            &format!("<f, f> at beta {beta}"),
            hh.within(exact, 3.0),
            json!({ "estimate": hh, "closed_form": exact }),
        ));
        rows.push(vec![beta.to_string(), prof.k.to_string(), f(hh.value), f(hh.sigma), f(exact)]);
        ks.push(prof.k);
        profiles.push(prof);
    }
    out.checks.push(check("K independent of beta", ks.windows(2).all(|w| w[0] == w[1]), json!(ks)));
    out.report = json!({ "profiles": profiles, "families": ints });
    out.table("profile", &["beta", "k", "norm", "sigma", "closed_form"], rows);
    Ok(out)
}

fn expected_matrix(name: &str) -> Option<Vec<Vec<f64>>> {
    match name {
        "identity" | "projection" | "horizontal-projection" => Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
        "conjugation" | "conj-automorphism" => Some(vec![vec![1.0, 0.0], vec![0.0, -1.0]]),
        "constant" => Some(vec![vec![0.0, 0.0], vec![0.0, 0.0]]),
        _ => {
            let l: f64 = name.strip_prefix("dilation:")?.parse().ok()?;
            Some(vec![vec![l, 0.0], vec![0.0, l]])
        }
    }
}

fn pansu_probe(a: &PansuProbe, _seed: u64) -> Result<Output, CliError> {
    let g = parse_group(&a.group)?;
    let map = named_map(&a.map, &g)?;
    let p = g.point(&a.point).map_err(input)?;
    let mut out = Output::new("pansu probe", a);
    let steps = pansu::default_steps();
    let d = pansu::horizontal_matrix(map.as_ref(), &p, &steps).map_err(input)?;
    out.checks.push(check("limit converged", d.verdict == pansu::Verdict::Converged, json!(d.verdict)));
    if g.horizontal_dim() == 2 {
        if let Some(want) = expected_matrix(&a.map) {
            let err = d.matrix.iter().flatten().zip(want.iter().flatten()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            out.checks.push(check("matches the known differential", err <= 1e-9, json!({ "expected": want, "max_error": err })));
        }
    }
    let mut rows = Vec::new();
    for (s, r) in &d.residuals {
        rows.push(vec![f(*s), f(*r)]);
    }
    out.report = d.to_json();
    out.table("residuals", &["step", "residual"], rows);
    Ok(out)
}

fn decompose_run(a: &DecomposeRun, seed: u64) -> Result<Output, CliError> {
    let mesh = Mesh::new(parse_group(&a.group)?).map_err(input)?;
    let map = named_map(&a.map, mesh.group())?;
    let screen = match a.screen.as_str() {
        "wavelet" => ScreenPolicy::Wavelet,
        "pass-all" => ScreenPolicy::PassAll,
        s => return Err(CliError::Input(format!("unknown screen {s:?}"))),
    };
    let cfg = DecomposeConfig {
        delta: a.delta,
        depth: a.depth,
        samples: a.samples,
        n_cap: a.n_cap,
        seed,
        screen,
        cube_samples: a.cube_samples,
        ..Default::default()
    };
    cfg.validate(&mesh).map_err(input)?;
    let mut out = Output::new("decompose run", &cfg);
    out.config["map"] = json!(a.map);
    out.config["group"] = json!(a.group);
    let (res, labels) = decomposer::decompose_with_labels(map.as_ref(), &mesh, &cfg).map_err(input)?;
    let points = decomposer::sample_points(&mesh, &cfg);
    let violations = res.separation_violations(&mesh, &points, &labels);
    out.checks.push(check("screened pairs separated", violations == 0, json!(violations)));
    let cap = 2f64.powi(cfg.n_cap as i32);
    out.checks.push(check(
        "piece count within 2^N_cap",
        (res.pieces.len() as f64) <= cap,
        json!({ "pieces": res.pieces.len(), "cap": cap }),
    ));
    out.checks.push(check("overlap histogram consistent", res.overlap.consistent, json!(res.overlap.mean)));
    let rows = res
        .pieces
        .iter()
        .map(|p| vec![p.label.to_string(), p.points.to_string(), f(p.measure), f(p.ratio_min), f(p.ratio_max), f(p.bilipschitz)])
        .collect();
    out.table("pieces", &["label", "points", "measure", "ratio_min", "ratio_max", "bilipschitz"], rows);
    let ratio_rows = res.ratios.iter().map(|r| vec![r.piece.clone(), r.i.to_string(), r.j.to_string(), f(r.ratio)]).collect();
    out.table("ratios", &["piece", "i", "j", "ratio"], ratio_rows);
    let coords = |c: &crate::dyadic::CubeAddress| {
        mesh.lattice_coords(&c.base).iter().map(|v| f(*v)).collect::<Vec<_>>().join(" ")
    };
    let coef_rows = res
        .screened
        .iter()
        .filter_map(|s| s.witness.as_ref())
        .map(|w| {
            vec![w.beta.to_string(), w.family.to_string(), coords(&w.pair.plus), coords(&w.pair.minus),
                w.i.to_string(), w.j.to_string(), f(w.ratio), f(w.sigma)]
        })
        .collect();
    out.table("coefficients", &["beta", "family", "plus", "minus", "i", "j", "ratio", "sigma"], coef_rows);
    out.report = res.to_json();
    Ok(out)
}

fn cantor_build(a: &CantorBuild, seed: u64) -> Result<Output, CliError> {
    let params = CantorParams::derive(a.epsilon, a.beta).map_err(input)?;
    let mut out = Output::new("cantor build", a);
    out.checks.push(check(
        "parameter identities",
        params.is_consistent() && (params.target_dimension() - (4.0 - a.epsilon)).abs() <= 1e-12,
        serde_json::to_value(params).unwrap(),
    ));
    let sep = cantor::separation_audit(&params, a.boundary_samples, seed);
    out.checks.push(check("first-stage separation", sep.pass, serde_json::to_value(&sep).unwrap()));
    let mut counts = Vec::new();
    for d in 1..=a.depth.min(5) {
        let cloud = cantor::image_cloud(&params, d);
        let n = dimension::box_count(&cloud, params.gamma.powi(d as i32));
        counts.push(json!({ "depth": d, "boxes": n, "expected": 16usize.pow(d as u32) }));
        out.checks.push(check(&format!("16^{d} occupied boxes"), n == 16usize.pow(d as u32), json!(n)));
    }
    let lip = cantor::lipschitz_scan(&CantorMap::new(params, a.depth), a.pairs, seed);
    out.checks.push(check("Lipschitz ratio finite", lip.is_finite(), json!(lip)));
    let band = cantor::cantor_ratio_band(&params, a.depth.max(1), 2000, seed);
    if a.depth <= 4 {
        let rows = cantor::image_cloud(&params, a.depth)
            .into_iter()
            .map(|c| c.iter().map(|v| f(*v)).collect())
            .collect();
        out.table("image", &["z1", "z2", "z3", "z4"], rows);
    }
    out.report = json!({ "params": params, "separation": sep, "counts": counts, "lipschitz": lip, "cantor_ratio_band": band });
    Ok(out)
}

fn cantor_dim(a: &CantorDim, _seed: u64) -> Result<Output, CliError> {
    let params = CantorParams::derive(a.epsilon, None).map_err(input)?;
    if a.depth < 5 || a.depth > 6 {
        return Err(CliError::Input("depth must be 5 or 6".into()));
    }
    let mut out = Output::new("cantor dim", a);
    let cloud = cantor::image_cloud(&params, a.depth);
    let scales: Vec<f64> = (1..a.depth).map(|k| params.gamma.powi(k as i32)).collect();
    let fit = dimension::box_dimension_estimate(&cloud, &scales).map_err(input)?;
    let want = 4.0 - a.epsilon;
    out.checks.push(check(
        "box dimension",
        (fit.dimension - want).abs() <= 0.15,
        json!({ "slope": fit.dimension, "expected": want }),
    ));
    let rows = fit.counts.iter().map(|(r, n)| vec![f(*r), n.to_string()]).collect();
    out.table("counts", &["r", "boxes"], rows);
    out.report = json!({ "params": params, "points": cloud.len(), "fit": fit });
    Ok(out)
}

fn counterex_curve(a: &CurveArgs, seed: u64) -> Result<Output, CliError> {
    if a.depth < 4 || a.depth > 10 {
        return Err(CliError::Input("depth must lie in 4..=10".into()));
    }
    let mut out = Output::new("counterex curve", a);
    let table = cx::CurveTable::hilbert();
    let exact: Vec<usize> = (0..=a.depth).filter(|&d| !cx::dyadic_visits(&table, d).iter().all(|&c| c == 1)).collect();
    out.checks.push(check("dyadic cells visited once", exact.is_empty(), json!({ "failing_depths": exact })));
    let mp = cx::measure_preservation_check(&table, 2, a.samples, seed);
    out.checks.push(check("preimage measure of depth-2 cells", mp.pass, serde_json::to_value(&mp).unwrap()));
    let col = cx::collision_witness(a.depth).map_err(input)?;
    let col_ok = col.t - col.s >= 0.25 && col.image_distance <= 2f64.powi(1 - a.depth as i32);
    out.checks.push(check("collision witness", col_ok, serde_json::to_value(col).unwrap()));
    let scan = cx::bilip_failure_scan(&IntervalSet::full(), &[1.0, 10.0, 100.0], 2, cx::STEERING_RADIUS).map_err(input)?;
    out.checks.push(check("no bi-Lipschitz constant survives", scan.all_defeated, serde_json::to_value(&scan).unwrap()));
    let scales: Vec<f64> = (1..=8).map(|k| 2f64.powi(-k)).collect();
    let dim = cx::snowflake_dimension(1_000_001, &scales).map_err(input)?;
    out.checks.push(check("snowflake dimension", (dim.dimension - 2.0).abs() <= 0.1, json!(dim.dimension)));
    let curve = cx::SpaceFillingCurve::new(a.depth);
    let lip = cx::snowflake_lipschitz(&curve, a.pairs, seed);
    out.checks.push(check("square-root Holder constant finite", lip.is_finite(), json!(lip)));
    let n = 1usize << (2 * a.depth.min(6));
    let rows = (0..=n)
        .map(|i| {
            let s = i as f64 / n as f64;
            let p = curve.eval(s).expect("in range");
            vec![f(s), f(p[0]), f(p[1])]
        })
        .collect();
    out.table("trace", &["s", "x", "y"], rows);
    out.report = json!({ "measure": mp, "collision": col, "scan": scan, "dimension": dim, "holder_constant": lip });
    Ok(out)
}

fn default_pieces() -> Vec<CandidatePiece> {
    vec![
        CandidatePiece { rects: vec![[-0.1, 0.1, -0.1, 1.1]], claimed_constant: 100.0 },
        CandidatePiece { rects: vec![[0.01, 0.1, -0.1, 1.1]], claimed_constant: 10.0 },
    ]
}

fn counterex_grushin(a: &GrushinArgs, seed: u64) -> Result<Output, CliError> {
    let map = cx::ExtensionMap::new(a.epsilon).map_err(input)?;
    let mut out = Output::new("counterex grushin", a);
    let origin = GrushinPoint::new(0.0, 0.0);
    let mut ratios = Vec::new();
    let mut rows = Vec::new();
    for h in [0.01, 0.04, 0.16] {
        let d = cx::grushin_distance_estimate(origin, GrushinPoint::new(0.0, h), a.budget, seed).map_err(input)?;
        for (k, node) in d.path.iter().enumerate() {
            rows.push(vec![f(h), k.to_string(), f(node[0]), f(node[1])]);
        }
        ratios.push(json!({ "h": h, "lower": d.lower, "upper": d.upper, "ratio": d.upper / h.sqrt() }));
    }
    let rs: Vec<f64> = ratios.iter().map(|r| r["ratio"].as_f64().unwrap()).collect();
    let spread = rs.iter().cloned().fold(0.0, f64::max) / rs.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    out.checks.push(check("axis distance scales like sqrt(h)", spread <= 0.2, json!({ "spread": spread })));
    let (p, q) = (GrushinPoint::new(0.03, 0.2), GrushinPoint::new(0.05, 0.5));
    let dpq = cx::grushin_distance_estimate(p, q, a.budget, seed).map_err(input)?.upper;
    let dqp = cx::grushin_distance_estimate(q, p, a.budget, seed).map_err(input)?.upper;
    out.checks.push(check("distance symmetric", (dpq - dqp).abs() <= 0.02 * dpq, json!([dpq, dqp])));
    let lip = cx::extension_lipschitz_scan(&map, a.pairs, seed);
    out.checks.push(check("extension Lipschitz constant finite", lip.is_finite(), json!(lip)));
    let pieces = match &a.pieces {
        Some(path) => serde_json::from_str::<Vec<CandidatePiece>>(&fs::read_to_string(path)?).map_err(input)?,
        None => default_pieces(),
    };
    let audit = cx::nondecomposability_audit(&pieces, a.audit_depth).map_err(input)?;
    out.checks.push(check(
        "remainder image fills the square",
        audit.consistent,
        json!({ "fraction": audit.box_fraction }),
    ));
    out.table("paths", &["h", "node", "x", "y"], rows);
    out.report = json!({ "axis": ratios, "symmetry": [dpq, dqp], "extension_lipschitz": lip, "audit": audit });
    Ok(out)
}

fn slug(command: &str) -> String {
    command.replace(' ', "-")
}

fn write_artifacts(dir: &Path, out: &Output, header: &Value) -> Result<Vec<String>, CliError> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for (name, cols, rows) in &out.tables {
        let file = format!("{}-{name}.csv", slug(&out.command));
        let mut w = fs::File::create(dir.join(&file))?;
        writeln!(w, "# {}", header)?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(cols).map_err(input)?;
        for r in rows {
            csv.write_record(r).map_err(input)?;
        }
        csv.flush()?;
        names.push(file);
    }
    Ok(names)
}

/// Runs a parsed command line and returns its envelope.
pub fn execute(cli: &Cli) -> Result<Envelope, CliError> {
    let started = chrono::Utc::now().to_rfc3339();
    let t0 = Instant::now();
    let seed = cli.seed;
    let run = || match &cli.command {
        Command::Group(GroupCmd::Check(a)) => group_check(a, seed),
        Command::Cubes(CubesCmd::Audit(a)) => cubes_audit(a, seed),
        Command::Wavelets(WaveletsCmd::Profile(a)) => wavelets_profile(a, seed),
        Command::Pansu(PansuCmd::Probe(a)) => pansu_probe(a, seed),
        Command::Decompose(DecomposeCmd::Run(a)) => decompose_run(a, seed),
        Command::Cantor(CantorCmd::Build(a)) => cantor_build(a, seed),
        Command::Cantor(CantorCmd::Dim(a)) => cantor_dim(a, seed),
        Command::Counterex(CounterexCmd::Curve(a)) => counterex_curve(a, seed),
        Command::Counterex(CounterexCmd::Grushin(a)) => counterex_grushin(a, seed),
    };
    let out = match cli.workers {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().map_err(input)?.install(run)?,
        None => run()?,
    };
    let header = json!({ "command": out.command, "seed": seed, "version": VERSION, "config": out.config });
    let artifacts = match &cli.out {
        Some(dir) => write_artifacts(dir, &out, &header)?,
        None => Vec::new(),
    };
    let pass = out.checks.iter().all(|c| c.pass);
    let env = Envelope {
        command: out.command.clone(),
        version: VERSION.to_string(),
        seed,
        config: out.config,
        checks: out.checks,
        pass,
        report: out.report,
        artifacts,
        timing: Timing { started, elapsed_ms: t0.elapsed().as_millis() },
    };
    if let Some(dir) = &cli.out {
        let path = dir.join(format!("{}.json", slug(&env.command)));
        fs::write(path, serde_json::to_string_pretty(&env).expect("serializable"))?;
    }
    Ok(env)
}

/// Parses `args` (program name first), runs, prints the envelope and returns
/// the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match execute(&cli) {
        Ok(env) => {
            println!("{}", serde_json::to_string_pretty(&env).expect("serializable"));
            if env.pass {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
