//! Splitting a Lipschitz map into finitely many pieces on which it is
//! biLipschitz, up to a garbage set where the image has small content.
//!
//! Everything runs on a fixed cloud of sample points in the base cube. Only
//! cubes that contain a sample point are ever materialised.

pub mod content;
pub mod labels;
pub mod screen;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dyadic::{CubeAddress, LatticePoint, Mesh, MeshError};
use crate::group::{Coords, Group, GroupPoint};
use crate::maps::{LipschitzMap, MapError};
use crate::rng::{mix, stream};

pub use content::{content_estimate, greedy_cover_count, ContentEstimator};
pub use labels::{apply_case, update_labels, Label, LabelCase};
pub use screen::{scale_window, wavelet_screen, MatrixField, PansuField, ScreenConfig, ScreenOutcome, Witness};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecomposeError {
    #[error("empty sample")]
    EmptySample,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("scale window for scale {scale} with n = {n} is empty")]
    EmptyWindow { scale: u32, n: i32 },
    #[error("differential sampling failed at {failures} of {evaluations} points")]
    ScreenFailures { failures: usize, evaluations: usize },
    #[error("cube carries no label")]
    LabelMissing,
    #[error("label is not constant on the cube")]
    LabelNotConstant,
    #[error("stage {stage}: {message}")]
    Evaluation { stage: u32, message: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

fn at_stage(stage: u32) -> impl Fn(MapError) -> DecomposeError {
    move |e| DecomposeError::Evaluation {
        stage,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScreenPolicy {
    /// Keep a bad pair only if the differential has a large Haar coefficient.
    #[default]
    Wavelet,
    /// Keep every bad pair.
    PassAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecomposeConfig {
    pub delta: f64,
    /// Defaults to `delta / 100`.
    pub epsilon: Option<f64>,
    pub depth: u32,
    #[serde(rename = "N_cap")]
    pub n_cap: usize,
    /// Defaults to `epsilon / 10`.
    #[serde(rename = "C_cal")]
    pub c_cal: Option<f64>,
    pub seed: u64,
    pub translates: usize,
    /// Sample points spread over the base cube.
    pub samples: usize,
    /// Samples per cube for image content and distances.
    pub cube_samples: usize,
    /// Stage `a` works with cubes of scale `a + scale_offset`.
    pub scale_offset: u32,
    pub window_n: i32,
    pub screen: ScreenPolicy,
    pub screen_samples: usize,
    /// Sample pairs per piece for the biLipschitz scan.
    pub ratio_pairs: usize,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        DecomposeConfig {
            delta: 0.01,
            epsilon: None,
            depth: 3,
            n_cap: 8,
            c_cal: None,
            seed: 0,
            translates: 4,
            samples: 2000,
            cube_samples: 1024,
            scale_offset: 0,
            window_n: 2,
            screen: ScreenPolicy::Wavelet,
            screen_samples: 32,
            ratio_pairs: 10_000,
        }
    }
}

impl DecomposeConfig {
    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(0.01 * self.delta)
    }

    pub fn c_cal(&self) -> f64 {
        self.c_cal.unwrap_or(0.1 * self.epsilon())
    }

    pub fn validate(&self, mesh: &Mesh) -> Result<(), DecomposeError> {
        let bad = |m: &str| Err(DecomposeError::BadConfig(m.into()));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if !(self.epsilon() > 0.0) || !(self.c_cal() >= 0.0) {
            return bad("epsilon must be positive and C_cal nonnegative");
        }
        if self.depth + self.scale_offset > mesh.leaf() {
            return bad("depth plus scale offset exceeds the mesh leaf scale");
        }
        if self.n_cap == 0 || self.samples == 0 || self.cube_samples == 0 {
            return bad("N_cap, samples and cube_samples must be positive");
        }
        Ok(())
    }
}

/// Sampled image of one cube.
#[derive(Debug, Clone)]
pub struct CubeImage {
    pub cube: CubeAddress,
    pub cloud: Vec<Coords>,
    pub content: f64,
    lo: Coords,
    hi: Coords,
}

/// Shared sampling state: the map, its calibrated content estimator and the
/// covering radius of a cube's sample cloud.
pub struct StageContext<'a> {
    pub mesh: &'a Mesh,
    pub map: &'a dyn LipschitzMap,
    pub estimator: ContentEstimator,
    pub cube_samples: usize,
    pub seed: u64,
    /// Covering radius of `cube_samples` points in the base cube.
    pub rho0: f64,
    pub lipschitz: f64,
}

impl<'a> StageContext<'a> {
    pub fn new(mesh: &'a Mesh, map: &'a dyn LipschitzMap, cube_samples: usize, seed: u64) -> Result<Self, DecomposeError> {
        if map.source().descriptor() != mesh.group().descriptor() {
            return Err(DecomposeError::BadConfig("map source differs from the mesh group".into()));
        }
        if cube_samples == 0 {
            return Err(DecomposeError::EmptySample);
        }
        let estimator = ContentEstimator::calibrated(mesh, cube_samples, seed)?;
        let origin = mesh.origin();
        let mut rng = stream(seed, 0x7a0);
        let cloud: Vec<Coords> = (0..cube_samples)
            .map(|_| mesh.sample_in_cube(&origin, &mut rng).coords)
            .collect();
        let rho0 = (0..128)
            .map(|_| {
                let p = mesh.sample_in_cube(&origin, &mut rng).coords;
                min_cloud_distance(mesh.group(), std::slice::from_ref(&p), &cloud)
            })
            .fold(0.0, f64::max);
        Ok(StageContext {
            mesh,
            map,
            estimator,
            cube_samples,
            seed,
            rho0,
            lipschitz: map.lipschitz_bound().unwrap_or(1.0),
        })
    }

    pub fn image(&self, c: &CubeAddress) -> Result<CubeImage, MapError> {
        let mut key = vec![self.seed, 0x1a6e, c.scale as u64];
        key.extend(c.base.ints.iter().map(|&v| v as u64));
        key.extend(c.translate.ints.iter().map(|&v| v as u64));
        let mut rng = stream(mix(&key), 0);
        let cloud = (0..self.cube_samples)
            .map(|_| self.map.eval(&self.mesh.sample_in_cube(c, &mut rng)).map(|q| q.coords))
            .collect::<Result<Vec<_>, _>>()?;
        let target = self.map.target();
        let content = self
            .estimator
            .estimate(target, &cloud, self.mesh.diameter(c.scale))
            .map_err(|e| MapError::Failed(e.to_string()))?;
        let mut lo: Coords = cloud[0].clone();
        let mut hi = lo.clone();
        for p in &cloud {
            for i in 0..lo.len() {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        Ok(CubeImage {
            cube: c.clone(),
            cloud,
            content,
            lo,
            hi,
        })
    }

    /// Allowance for the gap between the sampled and the true distance of
    /// two image clouds at scale `a`.
    pub fn slack(&self, scale: u32) -> f64 {
        2.0 * self.lipschitz * self.rho0 * (self.mesh.ratio() as f64).powi(-(scale as i32))
    }

    fn images(&self, cubes: &[CubeAddress], stage: u32) -> Result<Vec<CubeImage>, DecomposeError> {
        cubes
            .par_iter()
            .map(|c| self.image(c).map_err(at_stage(stage)))
            .collect()
    }

    /// Indices `(i, j)`, `i < j`, of semi-adjacent cubes satisfying
    /// `h(F Q_i), h(F Q_j) >= eps K |Q|` and image distance at most
    /// `eps K E^-a` (after subtracting the sampling slack).
    fn bad_among(&self, images: &[CubeImage], live: &[usize], eps: f64, k_norm: f64) -> Result<Vec<(usize, usize)>, DecomposeError> {
        let Some(&first) = live.first() else {
            return Ok(Vec::new());
        };
        let scale = images[first].cube.scale;
        let content_floor = eps * k_norm * self.mesh.cube_volume(scale);
        let dist_cap = eps * k_norm * (self.mesh.ratio() as f64).powi(-(scale as i32));
        let slack = self.slack(scale);
        let target = self.map.target();
        let nh = target.horizontal_dim();
        let h = live
            .iter()
            .flat_map(|&i| images[i].lo[..nh].iter().chain(&images[i].hi[..nh]))
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let reach = target.coordinate_reach(dist_cap + slack, h);
        let candidates = proximity_candidates(images, live, &reach, nh);
        let checked: Vec<Result<Option<(usize, usize)>, DecomposeError>> = candidates
            .par_iter()
            .map(|&(i, j)| {
                let (a, b) = (&images[i], &images[j]);
                if a.content < content_floor || b.content < content_floor {
                    return Ok(None);
                }
                if !self.mesh.is_semi_adjacent(&a.cube, &b.cube)? {
                    return Ok(None);
                }
                let d = min_cloud_distance(target, &a.cloud, &b.cloud);
                Ok((d - slack <= dist_cap).then_some((i, j)))
            })
            .collect();
        let mut out = Vec::new();
        for c in checked {
            out.extend(c?);
        }
        out.sort();
        Ok(out)
    }
}

/// Cubes of scale `a + W` among `cubes` whose image content is at most
/// `delta |Q|`.
pub fn garbage_stage(ctx: &StageContext, cubes: &[CubeAddress], delta: f64) -> Result<Vec<CubeAddress>, DecomposeError> {
    let images = ctx.images(cubes, cubes.first().map_or(0, |c| c.scale))?;
    Ok(images
        .into_iter()
        .filter(|im| im.content <= delta * ctx.mesh.cube_volume(im.cube.scale))
        .map(|im| im.cube)
        .collect())
}

/// Bad pairs among `cubes`, each unordered pair once in address order.
pub fn bad_pairs(
    ctx: &StageContext,
    cubes: &[CubeAddress],
    eps: f64,
    k_norm: f64,
) -> Result<Vec<(CubeAddress, CubeAddress)>, DecomposeError> {
    let mut cubes = cubes.to_vec();
    cubes.sort();
    cubes.dedup();
    if let Some(c) = cubes.iter().find(|c| c.scale < 2) {
        return Err(MeshError::ScaleTooSmall(c.scale).into());
    }
    let images = ctx.images(&cubes, cubes.first().map_or(0, |c| c.scale))?;
    let live: Vec<usize> = (0..cubes.len()).collect();
    Ok(ctx
        .bad_among(&images, &live, eps, k_norm)?
        .into_iter()
        .map(|(i, j)| (cubes[i].clone(), cubes[j].clone()))
        .collect())
}

/// Pairs whose image boxes come within `reach[i]` in every coordinate,
/// bucketed by a uniform grid on the first `nh` coordinates.
fn proximity_candidates(images: &[CubeImage], live: &[usize], reach: &[f64], nh: usize) -> Vec<(usize, usize)> {
    let mut extents: Vec<f64> = live
        .iter()
        .map(|&i| {
            let im = &images[i];
            (0..nh).map(|d| im.hi[d] - im.lo[d]).fold(0.0, f64::max)
        })
        .collect();
    extents.sort_by(f64::total_cmp);
    let r = reach[..nh].iter().fold(0.0f64, |m, v| m.max(*v));
    let h = extents[extents.len() / 2].max(r).max(1e-12);
    let mut grid: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
    let mut wide = Vec::new();
    for &i in live {
        let im = &images[i];
        let ranges: Vec<(i64, i64)> = (0..nh)
            .map(|d| (((im.lo[d] - reach[d]) / h).floor() as i64, ((im.hi[d] + reach[d]) / h).floor() as i64))
            .collect();
        let cells: i64 = ranges.iter().map(|(a, b)| b - a + 1).product();
        if cells > 64 {
            wide.push(i);
            continue;
        }
        let mut key: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        'cells: loop {
            grid.entry(key.clone()).or_default().push(i);
            for d in 0..key.len() {
                if key[d] < ranges[d].1 {
                    key[d] += 1;
                    continue 'cells;
                }
                key[d] = ranges[d].0;
            }
            break;
        }
    }
    let mut pairs = Vec::new();
    for members in grid.values() {
        for (x, &i) in members.iter().enumerate() {
            for &j in &members[x + 1..] {
                pairs.push((i.min(j), i.max(j)));
            }
        }
    }
    for &w in &wide {
        for &i in live {
            if i != w {
                pairs.push((i.min(w), i.max(w)));
            }
        }
    }
    pairs.sort();
    pairs.dedup();
    pairs.retain(|&(i, j)| {
        let (a, b) = (&images[i], &images[j]);
        (0..a.lo.len()).all(|d| (b.lo[d] - a.hi[d]).max(a.lo[d] - b.hi[d]) <= reach[d])
    });
    pairs
}

/// Smallest quasidistance between points of `a` and `b`, pruned by the gap
/// in the first coordinate.
pub fn min_cloud_distance(g: &Group, a: &[Coords], b: &[Coords]) -> f64 {
    let mut sorted: Vec<&Coords> = b.iter().collect();
    sorted.sort_by(|p, q| p[0].total_cmp(&q[0]));
    let mut best = f64::INFINITY;
    for p in a {
        let start = sorted.partition_point(|q| q[0] < p[0]);
        for q in &sorted[start..] {
            if q[0] - p[0] >= best {
                break;
            }
            best = best.min(g.dist_coords(p, q));
        }
        for q in sorted[..start].iter().rev() {
            if p[0] - q[0] >= best {
                break;
            }
            best = best.min(g.dist_coords(p, q));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: u32,
    pub scale: u32,
    pub cubes: usize,
    pub garbage_cubes: usize,
    pub garbage_points: usize,
    pub capped_points: usize,
    pub bad_pairs: usize,
    pub screened_pairs: usize,
    pub max_label_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenedPair {
    pub stage: u32,
    pub a: CubeAddress,
    pub b: CubeAddress,
    pub case: LabelCase,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub label: Label,
    pub cubes: Vec<CubeAddress>,
    pub points: usize,
    pub measure: f64,
    pub pairs: usize,
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// `max(ratio_max, 1 / ratio_min)` over the sampled pairs.
    pub bilipschitz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSample {
    pub piece: String,
    pub i: usize,
    pub j: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailMass {
    pub n: usize,
    pub mass: f64,
    pub scaled: f64,
}

/// Distribution of the number of screened pairs containing a sample point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapHistogram {
    pub samples: usize,
    /// `(phi, number of samples)` for every value that occurs.
    pub counts: Vec<(usize, usize)>,
    pub mean: f64,
    pub tails: Vec<TailMass>,
    /// Largest `N |{phi >= N}|` over the reported tails.
    pub bound: f64,
    /// The Markov bound `N |{phi >= N}| <= mean` holds at every reported `N`.
    pub consistent: bool,
}

pub fn overlap_histogram(phi: &[usize]) -> OverlapHistogram {
    let n = phi.len().max(1) as f64;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in phi {
        *counts.entry(v).or_default() += 1;
    }
    let mean = phi.iter().sum::<usize>() as f64 / n;
    let tails: Vec<TailMass> = [2, 4, 8]
        .into_iter()
        .map(|t| {
            let mass = phi.iter().filter(|&&v| v >= t).count() as f64 / n;
            TailMass {
                n: t,
                mass,
                scaled: t as f64 * mass,
            }
        })
        .collect();
    let bound = tails.iter().map(|t| t.scaled).fold(0.0, f64::max);
    OverlapHistogram {
        samples: phi.len(),
        counts: counts.into_iter().collect(),
        mean,
        consistent: tails.iter().all(|t| t.scaled <= mean + 1e-12),
        tails,
        bound,
    }
}

/// `phi(x)` for each point: the number of pairs with `x` in either cube.
pub fn overlap_counts(mesh: &Mesh, points: &[GroupPoint], pairs: &[(CubeAddress, CubeAddress)]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            pairs
                .iter()
                .filter(|(a, b)| mesh.contains(a, p) || mesh.contains(b, p))
                .count()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub config: DecomposeConfig,
    pub map: String,
    pub k: usize,
    /// `min(1, h(F Q(0, 0)))`.
    pub content_normalisation: f64,
    pub garbage: Vec<CubeAddress>,
    pub garbage_measure: f64,
    pub pieces: Vec<Piece>,
    pub screened: Vec<ScreenedPair>,
    pub overlap: OverlapHistogram,
    pub stages: Vec<StageLog>,
    #[serde(skip)]
    pub ratios: Vec<RatioSample>,
}

impl DecompositionResult {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("serializable")
    }

    pub fn piece(&self, label: &str) -> Option<&Piece> {
        self.pieces.iter().find(|p| p.label.to_string() == label)
    }

    pub fn write_ratio_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.ratios {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Does some piece meet both cubes of a screened pair? Checked on the
    /// sample points that end in pieces.
    pub fn separation_violations(&self, mesh: &Mesh, points: &[GroupPoint], labels: &[Option<Label>]) -> usize {
        // Labels of the labelled points in each screened cube, one location
        // pass over the points per cube family.
        let mut families: Vec<(u32, LatticePoint)> = Vec::new();
        for s in &self.screened {
            for c in [&s.a, &s.b] {
                let key = (c.scale, c.translate.clone());
                if !families.contains(&key) {
                    families.push(key);
                }
            }
        }
        let mut inside: HashMap<CubeAddress, Vec<&Label>> = HashMap::new();
        for (scale, translate) in &families {
            let found: Vec<Option<CubeAddress>> = points
                .par_iter()
                .zip(labels)
                .map(|(p, l)| l.as_ref().and_then(|_| mesh.address_of(p, *scale, Some(translate)).ok()))
                .collect();
            for (c, l) in found.into_iter().zip(labels) {
                if let (Some(c), Some(l)) = (c, l) {
                    let v = inside.entry(c).or_default();
                    if !v.contains(&l) {
                        v.push(l);
                    }
                }
            }
        }
        let none = Vec::new();
        self.screened
            .iter()
            .filter(|s| {
                let la = inside.get(&s.a).unwrap_or(&none);
                inside.get(&s.b).unwrap_or(&none).iter().any(|l| la.contains(l))
            })
            .count()
    }
}

/// Seeded sample points of the base cube used by a run.
pub fn sample_points(mesh: &Mesh, cfg: &DecomposeConfig) -> Vec<GroupPoint> {
    let mut rng = stream(cfg.seed, 0x5a);
    let origin = mesh.origin();
    (0..cfg.samples).map(|_| mesh.sample_in_cube(&origin, &mut rng)).collect()
}

/// Full stage loop. Also returns the final label of each sample point
/// (`None` for garbage).
pub fn decompose_with_labels(
    map: &dyn LipschitzMap,
    mesh: &Mesh,
    cfg: &DecomposeConfig,
) -> Result<(DecompositionResult, Vec<Option<Label>>), DecomposeError> {
    cfg.validate(mesh)?;
    let ctx = StageContext::new(mesh, map, cfg.cube_samples, cfg.seed)?;
    let eps = cfg.epsilon();
    let k = mesh.group().homogeneous_dimension();
    let k_norm = ctx.image(&mesh.origin()).map_err(at_stage(0))?.content.min(1.0);
    let points = sample_points(mesh, cfg);
    let n = points.len();
    let images: Vec<Coords> = points
        .par_iter()
        .map(|p| map.eval(p).map(|q| q.coords).map_err(at_stage(0)))
        .collect::<Result<_, _>>()?;
    let screen_cfg = ScreenConfig {
        c_cal: cfg.c_cal(),
        window_n: cfg.window_n,
        translates: cfg.translates,
        samples: cfg.screen_samples,
        seed: cfg.seed,
    };
    let field = PansuField {
        map,
        steps: crate::pansu::default_steps(),
    };

    let mut labels: Vec<Option<Label>> = vec![Some(Label::root()); n];
    let mut phi = vec![0usize; n];
    let mut garbage: Vec<CubeAddress> = Vec::new();
    let mut screened = Vec::new();
    let mut stages = Vec::new();
    for stage in 0..=cfg.depth {
        let scale = stage + cfg.scale_offset;
        let mut members: BTreeMap<CubeAddress, Vec<usize>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            if labels[i].is_some() {
                members.entry(mesh.address_of(p, scale, None)?).or_default().push(i);
            }
        }
        let (cubes, groups): (Vec<CubeAddress>, Vec<Vec<usize>>) = members.into_iter().unzip();
        let cube_images = ctx.images(&cubes, stage)?;
        let floor = cfg.delta * mesh.cube_volume(scale);
        let mut log = StageLog {
            stage,
            scale,
            cubes: cubes.len(),
            garbage_cubes: 0,
            garbage_points: 0,
            capped_points: 0,
            bad_pairs: 0,
            screened_pairs: 0,
            max_label_len: 0,
        };
        let mut live = Vec::new();
        for (idx, im) in cube_images.iter().enumerate() {
            if im.content <= floor {
                garbage.push(im.cube.clone());
                log.garbage_cubes += 1;
                log.garbage_points += groups[idx].len();
                for &i in &groups[idx] {
                    labels[i] = None;
                }
            } else {
                live.push(idx);
            }
        }
        if scale >= 2 {
            let bad = ctx.bad_among(&cube_images, &live, eps, k_norm)?;
            log.bad_pairs = bad.len();
            let outcomes: Vec<Option<ScreenOutcome>> = match cfg.screen {
                ScreenPolicy::PassAll => vec![None; bad.len()],
                ScreenPolicy::Wavelet => bad
                    .par_iter()
                    .map(|&(i, j)| wavelet_screen(mesh, &field, &cubes[i], &cubes[j], &screen_cfg).map(Some))
                    .collect::<Result<_, _>>()?,
            };
            for (&(i, j), outcome) in bad.iter().zip(outcomes) {
                if outcome.as_ref().is_some_and(|o| !o.pass) {
                    continue;
                }
                let case = update_labels(&mut labels, &groups[i], &groups[j])?;
                for &x in groups[i].iter().chain(&groups[j]) {
                    phi[x] += 1;
                }
                log.screened_pairs += 1;
                screened.push(ScreenedPair {
                    stage,
                    a: cubes[i].clone(),
                    b: cubes[j].clone(),
                    case,
                    witness: outcome.and_then(|o| o.best),
                });
            }
        }
        for &idx in &live {
            let len = labels[groups[idx][0]].as_ref().map_or(0, Label::len);
            log.max_label_len = log.max_label_len.max(len);
            if len >= cfg.n_cap {
                garbage.push(cubes[idx].clone());
                log.capped_points += groups[idx].len();
                for &i in &groups[idx] {
                    labels[i] = None;
                }
            }
        }
        stages.push(log);
    }

    let final_scale = cfg.depth + cfg.scale_offset;
    let mut by_label: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            by_label.entry(l.clone()).or_default().push(i);
        }
    }
    let src = map.source();
    let tgt = map.target();
    let mut pieces = Vec::new();
    let mut ratios = Vec::new();
    for (pi, (label, idx)) in by_label.into_iter().enumerate() {
        let mut cubes: Vec<CubeAddress> = idx
            .iter()
            .map(|&i| mesh.address_of(&points[i], final_scale, None))
            .collect::<Result<_, _>>()?;
        cubes.sort();
        cubes.dedup();
        let mut rng = stream(cfg.seed, mix(&[0x9a1, pi as u64]));
        let (mut lo, mut hi, mut pairs) = (f64::INFINITY, 0.0f64, 0);
        if idx.len() >= 2 {
            for _ in 0..cfg.ratio_pairs {
                use rand::Rng;
                let a = idx[rng.gen_range(0..idx.len())];
                let b = idx[rng.gen_range(0..idx.len())];
                let d = src.dist(&points[a], &points[b]);
                if d == 0.0 {
                    continue;
                }
                let r = tgt.dist_coords(&images[a], &images[b]) / d;
                lo = lo.min(r);
                hi = hi.max(r);
                pairs += 1;
                ratios.push(RatioSample {
                    piece: label.to_string(),
                    i: a,
                    j: b,
                    ratio: r,
                });
            }
        }
        let (ratio_min, ratio_max) = if pairs == 0 { (1.0, 1.0) } else { (lo, hi) };
        pieces.push(Piece {
            label,
            cubes,
            points: idx.len(),
            measure: idx.len() as f64 / n as f64,
            pairs,
            ratio_min,
            ratio_max,
            bilipschitz: ratio_max.max(1.0 / ratio_min),
        });
    }
    let alive = labels.iter().filter(|l| l.is_some()).count();
    garbage.sort();
    garbage.dedup();
    let result = DecompositionResult {
        config: cfg.clone(),
        map: map.name(),
        k,
        content_normalisation: k_norm,
        garbage,
        garbage_measure: 1.0 - alive as f64 / n as f64,
        pieces,
        screened,
        overlap: overlap_histogram(&phi),
        stages,
        ratios,
    };
    Ok((result, labels))
}

pub fn decompose(map: &dyn LipschitzMap, mesh: &Mesh, cfg: &DecomposeConfig) -> Result<DecompositionResult, DecomposeError> {
    decompose_with_labels(map, mesh, cfg).map(|r| r.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{Constant, FnMap, Glue, HorizontalProjection, Identity};

    fn quick() -> DecomposeConfig {
        DecomposeConfig {
            depth: 2,
            samples: 300,
            cube_samples: 512,
            ratio_pairs: 2000,
            ..Default::default()
        }
    }

    #[test]
    fn identity_is_one_piece() {
        let mesh = Mesh::heisenberg(1);
        let f = Identity(mesh.group().clone());
        let r = decompose(&f, &mesh, &quick()).unwrap();
        assert_eq!(r.pieces.len(), 1);
        assert_eq!(r.garbage_measure, 0.0);
        assert!(r.screened.is_empty());
        assert!((r.pieces[0].bilipschitz - 1.0).abs() < 1e-9);
        assert_eq!(r.overlap.mean, 0.0);
    }

    #[test]
    fn diagonal_homomorphism_stays_within_its_singular_values() {
        let mesh = Mesh::heisenberg(1);
        let g = mesh.group().clone();
        let f = crate::maps::Homomorphism {
            source: g.clone(),
            target: g,
            psi: vec![vec![2.0, 0.0], vec![0.0, 0.5]],
            vertical: 1.0,
        };
        let r = decompose(&f, &mesh, &quick()).unwrap();
        assert_eq!(r.pieces.len(), 1);
        let p = &r.pieces[0];
        assert!(p.ratio_min >= 0.5 - 1e-9 && p.ratio_max <= 2.0 + 1e-9, "{p:?}");
        assert!(p.ratio_max / p.ratio_min > 2.0, "{p:?}");
    }

    #[test]
    fn constant_is_garbage_at_stage_zero() {
        let mesh = Mesh::heisenberg(1);
        let g = mesh.group().clone();
        let f = Constant::origin(g.clone(), g);
        let r = decompose(&f, &mesh, &quick()).unwrap();
        assert!(r.pieces.is_empty());
        assert_eq!(r.stages[0].garbage_points, 300);
        assert_eq!(r.garbage, vec![mesh.origin()]);
    }

    #[test]
    fn projection_content_drops() {
        let mesh = Mesh::heisenberg(1);
        let f = HorizontalProjection::new(mesh.group().clone());
        let r = decompose(&f, &mesh, &quick()).unwrap();
        assert!(r.garbage_measure >= 0.99, "{}", r.garbage_measure);
    }

    #[test]
    fn fold_pairs_are_found_and_separated() {
        let mesh = Mesh::euclidean(2);
        let f = Glue::new(mesh.group().clone());
        let cfg = DecomposeConfig {
            depth: 2,
            samples: 4000,
            cube_samples: 256,
            screen: ScreenPolicy::PassAll,
            ratio_pairs: 1000,
            ..Default::default()
        };
        let (r, labels) = decompose_with_labels(&f, &mesh, &cfg).unwrap();
        assert!(!r.screened.is_empty());
        assert!(r.pieces.len() >= 2 && r.pieces.len() <= 1 << cfg.n_cap);
        let pts = sample_points(&mesh, &cfg);
        assert_eq!(r.separation_violations(&mesh, &pts, &labels), 0);
        assert!(r.overlap.consistent);
    }

    #[test]
    fn bad_pairs_of_a_fold() {
        let mesh = Mesh::euclidean(2);
        let g = mesh.group().clone();
        // Folds the cube at x in (0.3, 0.4] onto the one at (-0.2, -0.1].
        let f = FnMap::new(g.clone(), g.clone(), Some(1.0), "fold", move |p: &GroupPoint| {
            let mut c = p.coords.clone();
            if c[0] > 0.3 {
                c[0] -= 0.5;
            }
            Ok(g.point(&c).unwrap())
        });
        let ctx = StageContext::new(&mesh, &f, 256, 1).unwrap();
        let at = |x: f64, y: f64| mesh.address_of(&mesh.group().point(&[x, y]).unwrap(), 2, None).unwrap();
        let a = at(-0.145, 0.005);
        let b = at(0.355, 0.005);
        let near = at(-0.135, 0.005);
        let cubes = vec![a.clone(), b.clone(), near.clone()];
        let bad = bad_pairs(&ctx, &cubes, 1e-4, 1.0).unwrap();
        assert!(bad.contains(&(a.clone().min(b.clone()), a.clone().max(b.clone()))));
        assert!(bad.iter().all(|(x, y)| !mesh.is_adjacent(x, y).unwrap()));
        assert!(!bad.iter().any(|(x, y)| (x == &a && y == &near) || (x == &near && y == &a)));
        assert!(matches!(bad_pairs(&ctx, &[mesh.origin()], 1e-4, 1.0), Err(DecomposeError::Mesh(_))));
    }

    #[test]
    fn histogram_counts() {
        let h = overlap_histogram(&[0, 0, 0, 0]);
        assert_eq!(h.mean, 0.0);
        assert!(h.tails.iter().all(|t| t.mass == 0.0));
        let mesh = Mesh::euclidean(2);
        let c = mesh.address_of(&mesh.group().point(&[0.1, 0.1]).unwrap(), 1, None).unwrap();
        let other = mesh.address_of(&mesh.group().point(&[-0.3, 0.3]).unwrap(), 1, None).unwrap();
        let pairs = vec![(c.clone(), other.clone()); 5];
        let mut rng = stream(1, 1);
        let pts: Vec<GroupPoint> = (0..20).map(|_| mesh.sample_in_cube(&c, &mut rng)).collect();
        assert!(overlap_counts(&mesh, &pts, &pairs).iter().all(|&v| v == 5));
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = DecomposeConfig {
            delta: 0.05,
            n_cap: 5,
            ..Default::default()
        };
        let v = serde_json::to_value(&cfg).unwrap();
        assert_eq!(v["N_cap"], 5);
        let back: DecomposeConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, cfg);
        let sparse: DecomposeConfig = serde_json::from_str(r#"{"delta": 0.02, "seed": 3}"#).unwrap();
        assert_eq!(sparse.depth, 3);
        assert!((sparse.epsilon() - 2e-4).abs() < 1e-15);
    }
}
