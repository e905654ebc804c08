//! Dyadic cube mesh with ratio `E = 10`.
//!
//! `B_a` is the lattice with horizontal coordinates in `10^-a Z` and vertical
//! coordinate in `10^-2a Z`; it is closed under the group law. The window
//! `W_a` is the half-open box `(-1/2 10^-a, 1/2 10^-a]` horizontally and
//! `(-1/2 10^-2a, 1/2 10^-2a]` vertically, and `x` is the parent of `y` when
//! `x^{-1} y` lies in `W_a`.
//!
//! Windows of one scale tile the group but windows of consecutive scales do
//! not nest. Cubes are therefore built from a fixed leaf scale `L`: every point
//! sits in exactly one leaf window, and `Q(x, a)` is the union of the leaf
//! windows whose scale-`a` ancestor is `x`. Tiling, nesting, the child count
//! `E^Q` and the volume `E^{-Q a}` then hold exactly.
//!
//! All lattice arithmetic is on integers in the normalised frame of the point's
//! own scale, so adjacency and neighbour statistics are exactly scale free.

use std::cmp::Ordering;
use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::group::{Coords, Group, GroupKind, GroupPoint};

pub type Ints = SmallVec<[i64; 6]>;

pub const DEFAULT_LEAF: u32 = 6;
const HULL_BOUNDARY_SAMPLES: usize = 32;
const HULL_SEED: u64 = 0x5eed_0d1a;
/// Largest normalised coordinate magnitude accepted by address computations.
const MAX_NORMALISED: f64 = 4.0e15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh supports Heisenberg and Euclidean groups only, got {0}")]
    Unsupported(GroupKind),
    #[error("scale {scale} exceeds the leaf scale {leaf}")]
    ScaleBeyondLeaf { scale: u32, leaf: u32 },
    #[error("leaf scale {0} is outside the supported range 1..=12")]
    BadLeaf(u32),
    #[error("point lies outside the representable region: {0:?}")]
    OutOfRange(Vec<f64>),
    #[error("scale-0 cubes have no parent")]
    NoParent,
    #[error("cubes at scales {0} and {1} cannot be compared")]
    ScaleMismatch(u32, u32),
    #[error("semi-adjacency needs scale >= 2, got {0}")]
    ScaleTooSmall(u32),
    #[error("translate at scale {0} lies outside the admissible box")]
    BadTranslate(u32),
    #[error("point does not match the mesh group")]
    WrongGroup,
    #[error("enumeration box too small: adjacent cube found at offset {0:?}")]
    EnumerationTruncated(Vec<i64>),
}

/// A point of the lattice `B_scale`, stored as integers in units of
/// `E^-scale` (horizontal) and `E^-2 scale` (vertical).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint {
    pub scale: u32,
    pub ints: Ints,
}

impl LatticePoint {
    pub fn zero(dim: usize) -> Self {
        LatticePoint {
            scale: 0,
            ints: smallvec::smallvec![0; dim],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.ints.iter().all(|&v| v == 0)
    }
}

/// Name of the cube `Q(x, scale)`, optionally left-translated by `translate`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CubeAddress {
    pub base: LatticePoint,
    pub scale: u32,
    pub translate: LatticePoint,
}

impl CubeAddress {
    pub fn is_translated(&self) -> bool {
        !self.translate.is_zero()
    }
}

impl Ord for CubeAddress {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.scale, &self.translate, &self.base.ints).cmp(&(
            other.scale,
            &other.translate,
            &other.base.ints,
        ))
    }
}

impl PartialOrd for CubeAddress {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn ceil_div(n: i128, d: i128) -> i128 {
    -((-n).div_euclid(d))
}

/// Result of a Monte Carlo tiling audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilingReport {
    pub scale: u32,
    pub samples: usize,
    pub exactly_one: usize,
    pub coverage: f64,
    pub sigma: f64,
    pub uncovered: Vec<Vec<f64>>,
    pub multiply_covered: Vec<Vec<f64>>,
    /// Fraction of samples whose cube base equals their window address.
    pub window_agreement: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    group: Group,
    e: i64,
    leaf: u32,
    nh: usize,
    twist: bool,
    hull: Vec<Coords>,
    diam0: f64,
}

impl Mesh {
    pub fn new(group: Group) -> Result<Self, MeshError> {
        Self::with_leaf(group, DEFAULT_LEAF)
    }

    pub fn with_leaf(group: Group, leaf: u32) -> Result<Self, MeshError> {
        let (nh, twist) = match group.kind() {
            GroupKind::Heisenberg { n } => (2 * n, true),
            GroupKind::Euclidean { k } => (k, false),
            other => return Err(MeshError::Unsupported(other)),
        };
        if leaf == 0 || leaf > 12 || (twist && leaf > 7) {
            return Err(MeshError::BadLeaf(leaf));
        }
        let mut mesh = Mesh {
            e: group.scaling_base() as i64,
            group,
            leaf,
            nh,
            twist,
            hull: Vec::new(),
            diam0: 0.0,
        };
        mesh.hull = mesh.build_hull();
        mesh.diam0 = mesh.estimate_base_diameter();
        Ok(mesh)
    }

    pub fn heisenberg(n: usize) -> Self {
        Mesh::new(Group::heisenberg(n)).expect("Heisenberg mesh")
    }

    pub fn euclidean(k: usize) -> Self {
        Mesh::new(Group::euclidean(k)).expect("Euclidean mesh")
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn leaf(&self) -> u32 {
        self.leaf
    }

    pub fn ratio(&self) -> i64 {
        self.e
    }

    pub fn dim(&self) -> usize {
        self.group.dim()
    }

    /// `E^Q`, the number of children of every cube.
    pub fn children_per_cube(&self) -> u64 {
        (self.e as u64).pow(self.group.homogeneous_dimension() as u32)
    }

    /// Exact Haar volume of any scale-`a` cube.
    pub fn cube_volume(&self, scale: u32) -> f64 {
        (self.e as f64).powi(-((self.group.homogeneous_dimension() as u32 * scale) as i32))
    }

    pub fn origin(&self) -> CubeAddress {
        self.cube(LatticePoint::zero(self.dim()))
    }

    /// Untranslated cube based at `base`.
    pub fn cube(&self, base: LatticePoint) -> CubeAddress {
        CubeAddress {
            scale: base.scale,
            base,
            translate: LatticePoint::zero(self.dim()),
        }
    }

    /// Left translate of the cube `c` by the lattice point `t`.
    pub fn translated(&self, c: &CubeAddress, t: LatticePoint) -> Result<CubeAddress, MeshError> {
        self.check_translate(c.scale, &t)?;
        Ok(CubeAddress {
            translate: self.canonical(t),
            ..c.clone()
        })
    }

    fn check_translate(&self, scale: u32, t: &LatticePoint) -> Result<(), MeshError> {
        if t.is_zero() {
            return Ok(());
        }
        let tp = self.lattice_coords(t);
        let h = (self.e as f64).powi(-(scale as i32));
        let ok = tp
            .iter()
            .enumerate()
            .all(|(i, v)| v.abs() <= if i < self.nh { h } else { h * h } * (1.0 + 1e-12));
        if ok {
            Ok(())
        } else {
            Err(MeshError::BadTranslate(scale))
        }
    }

    /// Reduce a lattice point to the coarsest scale representing it exactly.
    pub fn canonical(&self, mut p: LatticePoint) -> LatticePoint {
        if p.is_zero() {
            return LatticePoint::zero(self.dim());
        }
        while p.scale > 0 {
            let e = self.e;
            let divisible = p.ints.iter().enumerate().all(|(i, v)| {
                let d = if i < self.nh { e } else { e * e };
                v % d == 0
            });
            if !divisible {
                break;
            }
            for (i, v) in p.ints.iter_mut().enumerate() {
                *v /= if i < self.nh { e } else { e * e };
            }
            p.scale -= 1;
        }
        p
    }

    /// Express `p` at a finer scale.
    pub fn rescale(&self, p: &LatticePoint, scale: u32) -> LatticePoint {
        assert!(scale >= p.scale, "rescale only refines");
        let k = (self.e as i64).pow(scale - p.scale);
        LatticePoint {
            scale,
            ints: p
                .ints
                .iter()
                .enumerate()
                .map(|(i, v)| if i < self.nh { v * k } else { v * k * k })
                .collect(),
        }
    }

    /// Real coordinates of a lattice point.
    pub fn lattice_coords(&self, p: &LatticePoint) -> Coords {
        let h = (self.e as f64).powi(p.scale as i32);
        p.ints
            .iter()
            .enumerate()
            .map(|(i, &v)| if i < self.nh { v as f64 / h } else { v as f64 / (h * h) })
            .collect()
    }

    pub fn lattice_point_to_group(&self, p: &LatticePoint) -> GroupPoint {
        self.group.point_unchecked(&self.lattice_coords(p))
    }

    /// Lattice point at `scale` with the given real coordinates, if it exists.
    pub fn lattice_point(&self, coords: &[f64], scale: u32) -> Option<LatticePoint> {
        if coords.len() != self.dim() {
            return None;
        }
        let h = (self.e as f64).powi(scale as i32);
        let mut ints = Ints::new();
        for (i, v) in coords.iter().enumerate() {
            let s = if i < self.nh { v * h } else { v * h * h };
            let r = s.round();
            if (s - r).abs() > 1e-6 || r.abs() > MAX_NORMALISED {
                return None;
            }
            ints.push(r as i64);
        }
        Some(LatticePoint { scale, ints })
    }

    /// `sum_j a_y b_x - a_x b_y`, the vertical twist of `a * b`.
    fn omega_int(&self, a: &[i64], b: &[i64]) -> i128 {
        if !self.twist {
            return 0;
        }
        (0..self.nh / 2)
            .map(|j| {
                let (x, y) = (2 * j, 2 * j + 1);
                a[y] as i128 * b[x] as i128 - a[x] as i128 * b[y] as i128
            })
            .sum()
    }

    /// Integer group law on one scale.
    pub fn lattice_mul(&self, a: &LatticePoint, b: &LatticePoint) -> LatticePoint {
        let s = a.scale.max(b.scale);
        let (a, b) = (self.rescale(a, s), self.rescale(b, s));
        let mut ints: Ints = a.ints.iter().zip(&b.ints).map(|(x, y)| x + y).collect();
        if self.twist {
            ints[self.nh] += self.omega_int(&a.ints, &b.ints) as i64;
        }
        LatticePoint { scale: s, ints }
    }

    pub fn lattice_inv(&self, a: &LatticePoint) -> LatticePoint {
        LatticePoint {
            scale: a.scale,
            ints: a.ints.iter().map(|v| -v).collect(),
        }
    }

    /// Window address from normalised coordinates `u = delta_{E^a} p`.
    fn window_ints(&self, u: &[f64]) -> Result<Ints, MeshError> {
        if u.iter().any(|v| !v.is_finite() || v.abs() > MAX_NORMALISED) {
            return Err(MeshError::OutOfRange(u.to_vec()));
        }
        let mut ints: Ints = u[..self.nh].iter().map(|v| (v - 0.5).ceil() as i64).collect();
        if self.twist {
            let mut tw = 0.0;
            for j in 0..self.nh / 2 {
                let (x, y) = (2 * j, 2 * j + 1);
                tw += ints[y] as f64 * u[x] - ints[x] as f64 * u[y];
            }
            let val = u[self.nh] - tw - 0.5;
            if !val.is_finite() || val.abs() > MAX_NORMALISED {
                return Err(MeshError::OutOfRange(u.to_vec()));
            }
            ints.push(val.ceil() as i64);
        }
        Ok(ints)
    }

    fn normalise(&self, p: &[f64], scale: u32) -> Coords {
        let h = (self.e as f64).powi(scale as i32);
        p.iter()
            .enumerate()
            .map(|(i, v)| if i < self.nh { v * h } else { v * h * h })
            .collect()
    }

    fn check_point(&self, p: &GroupPoint) -> Result<(), MeshError> {
        if p.tag != self.group.kind() || p.dim() != self.dim() {
            return Err(MeshError::WrongGroup);
        }
        Ok(())
    }

    /// The lattice point `x` of `B_a` with `x^{-1} p` in the window `W_a`.
    pub fn window_address(&self, p: &GroupPoint, scale: u32) -> Result<LatticePoint, MeshError> {
        self.check_point(p)?;
        Ok(LatticePoint {
            scale,
            ints: self.window_ints(&self.normalise(&p.coords, scale))?,
        })
    }

    fn parent_point(&self, x: &LatticePoint) -> LatticePoint {
        let e = self.e as i128;
        let mut m: Ints = x.ints[..self.nh]
            .iter()
            .map(|&a| ceil_div(2 * a as i128 - e, 2 * e) as i64)
            .collect();
        if self.twist {
            let a = &x.ints[..self.nh];
            let mut tw: i128 = 0;
            for j in 0..self.nh / 2 {
                let (xi, yi) = (2 * j, 2 * j + 1);
                tw += m[yi] as i128 * a[xi] as i128 - m[xi] as i128 * a[yi] as i128;
            }
            let b = x.ints[self.nh] as i128;
            m.push(ceil_div(b - e * tw - e * e / 2, e * e) as i64);
        }
        LatticePoint {
            scale: x.scale - 1,
            ints: m,
        }
    }

    fn ancestor_point(&self, x: &LatticePoint, scale: u32) -> LatticePoint {
        let mut cur = x.clone();
        while cur.scale > scale {
            cur = self.parent_point(&cur);
        }
        cur
    }

    fn check_scale(&self, scale: u32) -> Result<(), MeshError> {
        if scale > self.leaf {
            return Err(MeshError::ScaleBeyondLeaf {
                scale,
                leaf: self.leaf,
            });
        }
        Ok(())
    }

    /// Untranslated cube base of a point, from raw coordinates.
    fn base_of(&self, p: &[f64], scale: u32) -> Result<LatticePoint, MeshError> {
        let leaf = LatticePoint {
            scale: self.leaf,
            ints: self.window_ints(&self.normalise(p, self.leaf))?,
        };
        Ok(self.ancestor_point(&leaf, scale))
    }

    /// The cube of scale `a` in the family translated by `translate` that
    /// contains `p`.
    pub fn address_of(
        &self,
        p: &GroupPoint,
        scale: u32,
        translate: Option<&LatticePoint>,
    ) -> Result<CubeAddress, MeshError> {
        self.check_point(p)?;
        self.check_scale(scale)?;
        let translate = match translate {
            Some(t) => {
                self.check_translate(scale, t)?;
                self.canonical(t.clone())
            }
            None => LatticePoint::zero(self.dim()),
        };
        let base = if translate.is_zero() {
            self.base_of(&p.coords, scale)?
        } else {
            let tinv = self.group.inv(&self.lattice_point_to_group(&translate));
            let q = self.group.mul(&tinv, p);
            self.base_of(&q.coords, scale)?
        };
        Ok(CubeAddress {
            base,
            scale,
            translate,
        })
    }

    pub fn contains(&self, c: &CubeAddress, p: &GroupPoint) -> bool {
        match self.address_of(p, c.scale, Some(&c.translate)) {
            Ok(a) => a.base == c.base,
            Err(_) => false,
        }
    }

    pub fn parent(&self, c: &CubeAddress) -> Result<CubeAddress, MeshError> {
        if c.scale == 0 {
            return Err(MeshError::NoParent);
        }
        Ok(CubeAddress {
            base: self.parent_point(&c.base),
            scale: c.scale - 1,
            translate: c.translate.clone(),
        })
    }

    /// Ancestor of `c` at a coarser scale.
    pub fn ancestor(&self, c: &CubeAddress, scale: u32) -> CubeAddress {
        assert!(scale <= c.scale, "ancestor must be coarser");
        CubeAddress {
            base: self.ancestor_point(&c.base, scale),
            scale,
            translate: c.translate.clone(),
        }
    }

    /// All cubes of scale `a + 1` whose parent is `c`, in address order.
    pub fn children(&self, c: &CubeAddress) -> Vec<CubeAddress> {
        let e = self.e;
        let m = &c.base.ints;
        let span: Vec<i64> = (-(e / 2) + 1..=e / 2).collect();
        let mut out = Vec::with_capacity(self.children_per_cube() as usize);
        let mut idx = vec![0usize; self.nh];
        loop {
            let a: Ints = (0..self.nh).map(|i| e * m[i] + span[idx[i]]).collect();
            if self.twist {
                let mut tw: i128 = 0;
                for j in 0..self.nh / 2 {
                    let (xi, yi) = (2 * j, 2 * j + 1);
                    tw += m[yi] as i128 * a[xi] as i128 - m[xi] as i128 * a[yi] as i128;
                }
                let centre = (e * e) as i128 * m[self.nh] as i128 + e as i128 * tw;
                for off in -(e * e / 2) + 1..=e * e / 2 {
                    let mut ints = a.clone();
                    ints.push((centre + off as i128) as i64);
                    out.push(self.child_address(c, ints));
                }
            } else {
                out.push(self.child_address(c, a));
            }
            let mut k = 0;
            loop {
                if k == self.nh {
                    out.sort();
                    return out;
                }
                idx[k] += 1;
                if idx[k] < span.len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    fn child_address(&self, c: &CubeAddress, ints: Ints) -> CubeAddress {
        CubeAddress {
            base: LatticePoint {
                scale: c.scale + 1,
                ints,
            },
            scale: c.scale + 1,
            translate: c.translate.clone(),
        }
    }

    /// Group element `translate * base`.
    pub fn centre(&self, c: &CubeAddress) -> GroupPoint {
        let b = self.lattice_point_to_group(&c.base);
        if c.translate.is_zero() {
            b
        } else {
            self.group.mul(&self.lattice_point_to_group(&c.translate), &b)
        }
    }

    /// Map a point of the normalised unit frame into cube `c`.
    pub fn from_unit_frame(&self, c: &CubeAddress, u: &[f64]) -> GroupPoint {
        let h = (self.e as f64).powi(-(c.scale as i32));
        let v = self.group.dil(h, &self.group.point_unchecked(u));
        self.group.mul(&self.centre(c), &v)
    }

    /// `delta_{E^a}((centre a)^{-1} centre b)`, exact when both cubes share a
    /// translate family.
    pub fn relative_offset(&self, a: &CubeAddress, b: &CubeAddress) -> Coords {
        if a.translate == b.translate {
            let rel = self.lattice_mul(&self.lattice_inv(&a.base), &b.base);
            rel.ints.iter().map(|&v| v as f64).collect()
        } else {
            let rel = self.group.relative_coords(&self.centre(b).coords, &self.centre(a).coords);
            self.normalise(&rel, a.scale)
        }
    }

    fn build_hull(&self) -> Vec<Coords> {
        let dim = self.dim();
        let mut hull = Vec::new();
        for mask in 0..(1u32 << dim) {
            hull.push(
                (0..dim)
                    .map(|i| if mask >> i & 1 == 1 { 0.5 } else { -0.5 })
                    .collect(),
            );
        }
        let mut rng = crate::rng::stream(HULL_SEED, dim as u64);
        for _ in 0..HULL_BOUNDARY_SAMPLES {
            let face = rng.gen_range(0..dim);
            let side = if rng.gen::<bool>() { 0.5 } else { -0.5 };
            hull.push(
                (0..dim)
                    .map(|i| if i == face { side } else { rng.gen_range(-0.5..=0.5) })
                    .collect(),
            );
        }
        hull
    }

    fn estimate_base_diameter(&self) -> f64 {
        let mut rng = crate::rng::stream(HULL_SEED, 0xd1a);
        let origin = self.origin();
        let samples: Vec<Coords> = (0..256)
            .map(|_| self.sample_in_cube(&origin, &mut rng).coords)
            .collect();
        // Hull and cube samples are compared among themselves only: the hull
        // is the window's, and the cube is a slight translate of the window.
        let mut best: f64 = 0.0;
        for pts in [&self.hull, &samples] {
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    best = best.max(self.group.dist_coords(&pts[i], &pts[j]));
                }
            }
        }
        best
    }

    /// Normalised hull points of the base cube.
    pub fn hull(&self) -> &[Coords] {
        &self.hull
    }

    pub fn base_diameter(&self) -> f64 {
        self.diam0
    }

    pub fn diameter(&self, scale: u32) -> f64 {
        self.diam0 * (self.e as f64).powi(-(scale as i32))
    }

    /// Adjacency of normalised cubes `[0]` and `[r]`.
    pub fn adjacent_offset(&self, r: &[f64]) -> bool {
        let horiz = r[..self.nh].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if horiz >= 1.0 + self.diam0 {
            return false;
        }
        if r.iter().all(|v| *v == 0.0) {
            return true;
        }
        let shifted: Vec<Coords> = self
            .hull
            .iter()
            .map(|h| {
                let mut out = h.clone();
                self.group.mul_coords(r, h, &mut out);
                out
            })
            .collect();
        self.hull
            .iter()
            .any(|a| shifted.iter().any(|b| self.group.dist_coords(a, b) < self.diam0))
    }

    pub fn is_adjacent(&self, a: &CubeAddress, b: &CubeAddress) -> Result<bool, MeshError> {
        if a.scale != b.scale {
            return Err(MeshError::ScaleMismatch(a.scale, b.scale));
        }
        if a == b {
            return Ok(true);
        }
        Ok(self.adjacent_offset(&self.relative_offset(a, b)))
    }

    pub fn is_semi_adjacent(&self, a: &CubeAddress, b: &CubeAddress) -> Result<bool, MeshError> {
        if a.scale != b.scale {
            return Err(MeshError::ScaleMismatch(a.scale, b.scale));
        }
        if a.scale < 2 {
            return Err(MeshError::ScaleTooSmall(a.scale));
        }
        if self.is_adjacent(a, b)? {
            return Ok(false);
        }
        let (pa, pb) = (self.parent(a)?, self.parent(b)?);
        if self.is_adjacent(&pa, &pb)? {
            return Ok(false);
        }
        self.is_adjacent(&self.parent(&pa)?, &self.parent(&pb)?)
    }

    /// Uniform sample of `c`: descend through uniformly chosen children to the
    /// leaf scale, then pick a uniform point of the leaf window. Children have
    /// equal volume so the result is exactly uniform on the cube.
    pub fn sample_in_cube<R: rand::Rng>(&self, c: &CubeAddress, rng: &mut R) -> GroupPoint {
        let e = self.e;
        let mut x = c.base.clone();
        while x.scale < self.leaf {
            let m = &x.ints;
            let a: Ints = (0..self.nh)
                .map(|i| e * m[i] + rng.gen_range(-(e / 2) + 1..=e / 2))
                .collect();
            let mut ints = a.clone();
            if self.twist {
                let tw = self.omega_int(m, &a);
                let centre = (e * e) as i128 * m[self.nh] as i128 + e as i128 * tw;
                ints.push((centre + rng.gen_range(-(e * e / 2) + 1..=e * e / 2) as i128) as i64);
            }
            x = LatticePoint {
                scale: x.scale + 1,
                ints,
            };
        }
        let u: Coords = (0..self.dim()).map(|_| 0.5 - rng.gen::<f64>()).collect();
        let leaf = CubeAddress {
            scale: x.scale,
            base: x,
            translate: c.translate.clone(),
        };
        self.from_unit_frame(&leaf, &u)
    }

    /// Uniform sample of `c` by rejection from an enlarged window, accepted
    /// through `address_of`; used to cross-check the descent sampler.
    pub fn sample_in_cube_rejection<R: rand::Rng>(&self, c: &CubeAddress, rng: &mut R) -> GroupPoint {
        let dim = self.dim();
        let mut u = vec![0.0; dim];
        loop {
            for (i, v) in u.iter_mut().enumerate() {
                let half = if i < self.nh { 0.625 } else { 0.75 };
                *v = rng.gen_range(-half..half);
            }
            let p = self.from_unit_frame(c, &u);
            if self.contains(c, &p) {
                return p;
            }
        }
    }

    /// All lattice offsets `r` (normalised units) adjacent to the origin cube.
    fn adjacent_offsets(&self, hrange: i64, vrange: i64) -> Result<Vec<Ints>, MeshError> {
        let vr = if self.twist { vrange } else { 0 };
        let mut found = Vec::new();
        let mut idx = vec![-hrange; self.nh];
        loop {
            for t in -vr..=vr {
                let mut r: Ints = idx.iter().copied().collect();
                if self.twist {
                    r.push(t);
                }
                let rf: Vec<f64> = r.iter().map(|&v| v as f64).collect();
                if self.adjacent_offset(&rf) {
                    let edge = idx.iter().any(|v| v.abs() == hrange) || (self.twist && t.abs() == vr);
                    if edge {
                        return Err(MeshError::EnumerationTruncated(r.to_vec()));
                    }
                    found.push(r);
                }
            }
            let mut k = 0;
            loop {
                if k == self.nh {
                    return Ok(found);
                }
                idx[k] += 1;
                if idx[k] <= hrange {
                    break;
                }
                idx[k] = -hrange;
                k += 1;
            }
        }
    }

    /// Number of scale-`a` cubes adjacent to a fixed cube, self included.
    pub fn neighbor_count_audit(&self, scale: u32) -> Result<usize, MeshError> {
        self.check_scale(scale)?;
        // Anchor at a non-origin cube so the twist of the base point is exercised.
        let anchor = self.cube(LatticePoint {
            scale,
            ints: (0..self.dim()).map(|i| i as i64 + 1).collect(),
        });
        let offsets = self.adjacent_offsets(3, 16)?;
        let mut count = 0;
        for r in offsets {
            let nb = self.cube(self.lattice_mul(&anchor.base, &LatticePoint { scale, ints: r }));
            if self.is_adjacent(&anchor, &nb)? {
                count += 1;
            }
        }
        Ok(count)
    }

    /// Monte Carlo check that scale-`a` cubes tile `Q(0, 0)` of a family.
    ///
    /// Membership of each sample in each nearby candidate cube is decided
    /// independently by translating the sample back to the origin cube.
    pub fn tiling_audit(
        &self,
        scale: u32,
        samples: usize,
        seed: u64,
        translate: Option<&LatticePoint>,
    ) -> Result<TilingReport, MeshError> {
        self.check_scale(scale)?;
        let mut root = self.origin();
        if let Some(t) = translate {
            self.check_translate(0, t)?;
            root = self.translated(&root, t.clone())?;
        }
        let tau = self.lattice_point_to_group(&root.translate);
        let tau_inv = self.group.inv(&tau);
        let mut rng = crate::rng::stream(seed, 0x711e);
        let (mut exactly_one, mut agree) = (0usize, 0usize);
        let (mut uncovered, mut multiply_covered) = (Vec::new(), Vec::new());
        let hr: i64 = 1;
        let vr: i64 = if self.twist { 3 } else { 0 };
        for _ in 0..samples {
            let p = self.sample_in_cube(&root, &mut rng);
            let q = self.group.mul(&tau_inv, &p);
            let w = self.window_address(&q, scale)?;
            let base = self.base_of(&q.coords, scale)?;
            if base == w {
                agree += 1;
            }
            let mut hits = 0;
            let mut idx = vec![-hr; self.nh];
            loop {
                for t in -vr..=vr {
                    let mut r: Ints = idx.iter().copied().collect();
                    if self.twist {
                        r.push(t);
                    }
                    let x = self.lattice_mul(&w, &LatticePoint { scale, ints: r });
                    let xinv = self.group.inv(&self.lattice_point_to_group(&x));
                    let rel = self.group.mul(&xinv, &q);
                    let a = self.base_of(&rel.coords, scale)?;
                    if a.is_zero() && self.ancestor_point(&x, 0).is_zero() {
                        hits += 1;
                    }
                }
                let mut k = 0;
                let mut done = false;
                loop {
                    if k == self.nh {
                        done = true;
                        break;
                    }
                    idx[k] += 1;
                    if idx[k] <= hr {
                        break;
                    }
                    idx[k] = -hr;
                    k += 1;
                }
                if done {
                    break;
                }
            }
            match hits {
                1 => exactly_one += 1,
                0 => uncovered.push(p.coords.to_vec()),
                _ => multiply_covered.push(p.coords.to_vec()),
            }
        }
        let n = samples.max(1) as f64;
        let f = exactly_one as f64 / n;
        let sigma = (f * (1.0 - f) / n).sqrt();
        Ok(TilingReport {
            scale,
            samples,
            exactly_one,
            coverage: f,
            sigma,
            uncovered,
            multiply_covered,
            window_agreement: agree as f64 / n,
            pass: (1.0 - f).abs() <= 3.0 * sigma,
        })
    }

    /// Seeded subsample of the admissible translates at scale `a`, each a
    /// point of `B_{a+2}`; the identity is always first.
    pub fn translate_family(&self, scale: u32, count: usize, seed: u64) -> Vec<LatticePoint> {
        let mut rng = crate::rng::stream(seed, 0x7a + scale as u64);
        let e2 = self.e * self.e;
        let mut out = vec![LatticePoint::zero(self.dim())];
        let mut seen = std::collections::BTreeSet::new();
        seen.insert(out[0].clone());
        let mut attempts = 0;
        while out.len() < count && attempts < 100 * count {
            attempts += 1;
            let ints: Ints = (0..self.dim())
                .map(|i| {
                    let r = if i < self.nh { e2 } else { e2 * e2 };
                    rng.gen_range(-r..=r)
                })
                .collect();
            let t = self.canonical(LatticePoint {
                scale: scale + 2,
                ints,
            });
            if seen.insert(t.clone()) {
                out.push(t);
            }
        }
        out
    }

    /// Write one JSON record per cube.
    pub fn write_jsonl<W: Write>(&self, cubes: &[CubeAddress], mut w: W) -> std::io::Result<()> {
        for c in cubes {
            let rec = serde_json::json!({
                "base": self.lattice_coords(&c.base).to_vec(),
                "scale": c.scale,
                "translate": self.lattice_coords(&c.translate).to_vec(),
            });
            writeln!(w, "{rec}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h1() -> Mesh {
        Mesh::heisenberg(1)
    }

    fn pt(m: &Mesh, c: &[f64]) -> GroupPoint {
        m.group().point(c).unwrap()
    }

    fn lp(scale: u32, ints: &[i64]) -> LatticePoint {
        LatticePoint {
            scale,
            ints: Ints::from_slice(ints),
        }
    }

    #[test]
    fn window_addresses() {
        let m = h1();
        let w = m.window_address(&pt(&m, &[0.04, -0.03, 0.007]), 1).unwrap();
        assert_eq!(m.lattice_coords(&w).as_slice(), &[0.0, 0.0, 0.01]);
        let w = m.window_address(&pt(&m, &[0.55, 0.0, 0.0]), 0).unwrap();
        assert_eq!(w.ints.as_slice(), &[1, 0, 0]);
        for a in 0..4 {
            assert!(m.window_address(&m.group().identity(), a).unwrap().is_zero());
        }
    }

    #[test]
    fn cube_addresses() {
        let m = h1();
        let c = m.address_of(&pt(&m, &[0.04, -0.03, 0.007]), 1, None).unwrap();
        assert_eq!(c.base.ints.as_slice(), &[0, 0, 1]);
        for a in 0..=m.leaf() {
            assert!(m.address_of(&m.group().identity(), a, None).unwrap().base.is_zero());
        }
        // Nested cubes reach past the window edge on the positive side.
        let c = m.address_of(&pt(&m, &[0.55, 0.0, 0.0]), 0, None).unwrap();
        assert!(c.base.is_zero());
        let c = m.address_of(&pt(&m, &[0.56, 0.0, 0.0]), 0, None).unwrap();
        assert_eq!(c.base.ints.as_slice(), &[1, 0, 0]);
        assert!(matches!(
            m.address_of(&pt(&m, &[0.0, 0.0, 0.0]), 7, None),
            Err(MeshError::ScaleBeyondLeaf { .. })
        ));
        assert!(m.address_of(&pt(&m, &[f64::NAN, 0.0, 0.0]), 1, None).is_err());
    }

    #[test]
    fn parents() {
        let m = h1();
        let c = m.cube(lp(1, &[0, 0, 1]));
        assert!(m.parent(&c).unwrap().base.is_zero());
        let o3 = m.cube(lp(3, &[0, 0, 0]));
        assert_eq!(m.parent(&o3).unwrap().base, lp(2, &[0, 0, 0]));
        assert_eq!(m.parent(&m.origin()), Err(MeshError::NoParent));
    }

    #[test]
    fn children_partition() {
        let m = h1();
        let c = m.cube(lp(1, &[3, -2, 17]));
        let kids = m.children(&c);
        assert_eq!(kids.len(), 10_000);
        let set: std::collections::BTreeSet<_> = kids.iter().collect();
        assert_eq!(set.len(), 10_000);
        assert!(kids.iter().all(|k| m.parent(k).unwrap() == c));
        let e = Mesh::euclidean(2);
        assert_eq!(e.children(&e.origin()).len(), 100);
        assert_eq!(Mesh::heisenberg(2).children_per_cube(), 1_000_000);
    }

    #[test]
    fn address_parent_consistency() {
        let m = h1();
        let mut rng = crate::rng::stream(1, 0);
        for _ in 0..2000 {
            let p = m.group().sample_box(&mut rng, 1.5);
            for a in 1..=4 {
                let c = m.address_of(&p, a, None).unwrap();
                assert_eq!(m.parent(&c).unwrap(), m.address_of(&p, a - 1, None).unwrap());
                assert!(m.contains(&c, &p));
            }
        }
    }

    #[test]
    fn lattice_law_matches_group() {
        let m = h1();
        let a = lp(2, &[13, -7, 201]);
        let b = lp(1, &[-4, 9, 33]);
        let prod = m.lattice_mul(&a, &b);
        let real = m.group().mul(&m.lattice_point_to_group(&a), &m.lattice_point_to_group(&b));
        for (x, y) in m.lattice_coords(&prod).iter().zip(&real.coords) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(m.canonical(lp(3, &[100, -200, 50000])), lp(1, &[1, -2, 5]));
    }

    #[test]
    fn diameters() {
        let m = h1();
        let d0 = m.diameter(0);
        assert!((m.diameter(0) / m.diameter(1) - 10.0).abs() < 1e-12);
        assert!(m.diameter(2) < m.diameter(1));
        assert_eq!(d0, Mesh::heisenberg(1).diameter(0));
        assert_eq!(Mesh::euclidean(3).base_diameter(), 1.0);
    }

    #[test]
    fn adjacency() {
        let m = h1();
        let c = m.cube(lp(2, &[4, 1, -3]));
        assert!(m.is_adjacent(&c, &c).unwrap());
        let nb = m.cube(m.lattice_mul(&c.base, &lp(2, &[1, 0, 0])));
        assert!(m.is_adjacent(&c, &nb).unwrap());
        let far = m.cube(m.lattice_mul(&c.base, &lp(2, &[4, 0, 0])));
        assert!(m.group().dist(&m.centre(&c), &m.centre(&far)) >= 3.0 * m.diameter(2));
        assert!(!m.is_adjacent(&c, &far).unwrap());
        let other = m.cube(lp(1, &[0, 0, 0]));
        assert!(matches!(m.is_adjacent(&c, &other), Err(MeshError::ScaleMismatch(2, 1))));
    }

    #[test]
    fn semi_adjacency() {
        let m = h1();
        let c = m.cube(lp(2, &[0, 0, 0]));
        assert!(!m.is_semi_adjacent(&c, &c).unwrap());
        let far = m.cube(lp(2, &[0, 300, 0]));
        assert!(!m.is_semi_adjacent(&c, &far).unwrap());
        assert!(matches!(
            m.is_semi_adjacent(&m.parent(&c).unwrap(), &m.parent(&c).unwrap()),
            Err(MeshError::ScaleTooSmall(1))
        ));
        // Walk away from the origin along x at scale 2 until parents separate.
        let mut witness = None;
        for k in 1..300 {
            let b = m.cube(lp(2, &[k, 0, 0]));
            if m.is_semi_adjacent(&c, &b).unwrap() {
                witness = Some(b);
                break;
            }
        }
        let b = witness.expect("semi-adjacent pair along the x axis");
        let (ga, gb) = (m.ancestor(&c, 0), m.ancestor(&b, 0));
        assert!(m.is_adjacent(&ga, &gb).unwrap());
        assert!(!m.is_adjacent(&m.parent(&c).unwrap(), &m.parent(&b).unwrap()).unwrap());
    }

    #[test]
    fn neighbour_counts() {
        let m = h1();
        let counts: Vec<_> = (1..=3).map(|a| m.neighbor_count_audit(a).unwrap()).collect();
        assert!(counts[0] >= 1 && counts.iter().all(|&c| c == counts[0]));
        assert_eq!(Mesh::euclidean(2).neighbor_count_audit(2).unwrap(), 9);
        assert_eq!(Mesh::euclidean(3).neighbor_count_audit(1).unwrap(), 27);
    }

    #[test]
    fn tiling() {
        let m = h1();
        let r = m.tiling_audit(1, 3000, 2, None).unwrap();
        assert!(r.pass && r.coverage == 1.0, "{r:?}");
        assert!(r.window_agreement > 0.5 && r.window_agreement < 1.0);
        let e = Mesh::euclidean(2);
        let r = e.tiling_audit(2, 2000, 2, None).unwrap();
        assert_eq!(r.exactly_one, 2000);
        let t = m.translate_family(0, 4, 9)[2].clone();
        let r = m.tiling_audit(1, 2000, 3, Some(&t)).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn translates() {
        let m = h1();
        let fam = m.translate_family(1, 20, 5);
        assert_eq!(fam.len(), 20);
        assert!(fam[0].is_zero());
        let p = pt(&m, &[0.013, 0.2, -0.04]);
        for t in &fam {
            let c = m.address_of(&p, 1, Some(t)).unwrap();
            // Translation of the family is exact on the untranslated address.
            let q = m.group().mul(&m.group().inv(&m.lattice_point_to_group(t)), &p);
            assert_eq!(c.base, m.address_of(&q, 1, None).unwrap().base);
            assert_eq!(m.parent(&c).unwrap().translate, c.translate);
        }
        let bad = lp(1, &[20, 0, 0]);
        assert!(matches!(m.address_of(&p, 1, Some(&bad)), Err(MeshError::BadTranslate(1))));
    }

    #[test]
    fn sampled_volume() {
        let m = h1();
        let c = m.cube(lp(1, &[0, 0, 0]));
        // Fraction of the parent's samples landing in one child is 1e-4; use the
        // enlarged-window rejection rate instead: cube volume / box volume.
        let mut rng = crate::rng::stream(4, 0);
        let n = 40_000;
        let mut hits = 0;
        for _ in 0..n {
            let u = [rng.gen_range(-0.625..0.625), rng.gen_range(-0.625..0.625), rng.gen_range(-0.75..0.75)];
            if m.contains(&c, &m.from_unit_frame(&c, &u)) {
                hits += 1;
            }
        }
        let f = hits as f64 / n as f64;
        let box_vol = 1.25 * 1.25 * 1.5;
        let sigma = (f * (1.0 - f) / n as f64).sqrt();
        assert!((f * box_vol - 1.0).abs() <= 3.0 * sigma * box_vol, "{}", f * box_vol);
        assert_eq!(m.cube_volume(1), 1e-4);
    }

    #[test]
    fn descent_sampler_matches_rejection() {
        let m = h1();
        let c = m.cube(lp(1, &[2, -3, 40]));
        let mut rng = crate::rng::stream(6, 0);
        let n = 4000;
        let mut mean_d = [0.0; 3];
        let mut mean_r = [0.0; 3];
        for _ in 0..n {
            let p = m.sample_in_cube(&c, &mut rng);
            assert!(m.contains(&c, &p));
            let q = m.sample_in_cube_rejection(&c, &mut rng);
            for k in 0..3 {
                mean_d[k] += p.coords[k] / n as f64;
                mean_r[k] += q.coords[k] / n as f64;
            }
        }
        // Means agree to a few percent of the cube width.
        assert!((mean_d[0] - mean_r[0]).abs() < 3e-3 && (mean_d[1] - mean_r[1]).abs() < 3e-3);
        assert!((mean_d[2] - mean_r[2]).abs() < 3e-4);
    }

    #[test]
    fn jsonl_dump() {
        let m = h1();
        let mut buf = Vec::new();
        m.write_jsonl(&[m.cube(lp(1, &[1, 0, 3]))], &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["scale"], 1);
        assert_eq!(v["base"][2], 0.03);
    }
}
