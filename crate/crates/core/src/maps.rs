//! Evaluatable maps between groups with a declared Lipschitz bound.

use std::sync::Arc;

use thiserror::Error;

use crate::group::{Group, GroupError, GroupKind, GroupPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("point {0:?} lies outside the map's domain")]
    OutsideDomain(Vec<f64>),
    #[error("map evaluation failed: {0}")]
    Failed(String),
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// A map `F : source -> target`. Evaluation must be stateless so a handle can
/// be shared between worker threads.
pub trait LipschitzMap: Send + Sync {
    fn source(&self) -> &Group;
    fn target(&self) -> &Group;
    fn eval(&self, p: &GroupPoint) -> Result<GroupPoint, MapError>;
    /// Declared Lipschitz constant for the quasidistances, `None` if unknown
    /// or infinite.
    fn lipschitz_bound(&self) -> Option<f64>;
    fn name(&self) -> String;
}

pub type MapHandle = Arc<dyn LipschitzMap>;

fn check_source(g: &Group, p: &GroupPoint) -> Result<(), MapError> {
    if p.tag != g.kind() || p.dim() != g.dim() {
        return Err(GroupError::DescriptorMismatch(g.kind(), p.tag).into());
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Identity(pub Group);

impl LipschitzMap for Identity {
    fn source(&self) -> &Group {
        &self.0
    }
    fn target(&self) -> &Group {
        &self.0
    }
    fn eval(&self, p: &GroupPoint) -> Result<GroupPoint, MapError> {
        check_source(&self.0, p)?;
        Ok(p.clone())
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(1.0)
    }
    fn name(&self) -> String {
        "identity".into()
    }
}

#[derive(Debug, Clone)]
pub struct Constant {
    pub source: Group,
    pub target: Group,
    pub value: GroupPoint,
}

impl Constant {
    pub fn origin(source: Group, target: Group) -> Self {
        let value = target.identity();
        Constant { source, target, value }
    }
}

impl LipschitzMap for Constant {
    fn source(&self) -> &Group {
        &self.source
    }
    fn target(&self) -> &Group {
        &self.target
    }
    fn eval(&self, p: &GroupPoint) -> Result<GroupPoint, MapError> {
        check_source(&self.source, p)?;
        Ok(self.value.clone())
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(0.0)
    }
    fn name(&self) -> String {
        "constant".into()
    }
}

#[derive(Debug, Clone)]
pub struct Dilation {
    pub group: Group,
    pub lambda: f64,
}

impl LipschitzMap for Dilation {
    fn source(&self) -> &Group {
        &self.group
    }
    fn target(&self) -> &Group {
        &self.group
    }
    fn eval(&self, p: &GroupPoint) -> Result<GroupPoint, MapError> {
        Ok(self.group.dilate(self.lambda, p)?)
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(self.lambda)
    }
    fn name(&self) -> String {
        format!("dilation({})", self.lambda)
    }
}

/// `(z, t) -> (conj z, -t)`, an automorphism of `H_n`.
#[derive(Debug, Clone)]
pub struct Conjugation(pub Group);

impl LipschitzMap for Conjugation {
    fn source(&self) -> &Group {
        &self.0
    }
    fn target(&self) -> &Group {
        &self.0
    }
    fn eval(&self, p: &GroupPoint) -> Result<GroupPoint, MapError> {
        check_source(&self.0, p)?;
        let mut q = p.clone();
        let nh = self.0.horizontal_dim();
        for (i, v) in q.coords.iter_mut().enumerate() {
            if i >= nh || i % 2 == 1 {
                *v = -*v;
            }
        }
        Ok(q)
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(1.0)
    }
    fn name(&self) -> String {
        "conjugation".into()
    }
}

/// `H_n -> R^{2n}`, forgetting the vertical coordinate.
#[derive(Debug, Clone)]
pub struct HorizontalProjection {
    pub source: Group,
    pub target: Group,
}

impl HorizontalProjection {
    pub fn new(source: Group) -> Self {
        let target = Group::euclidean(source.horizontal_dim());
        HorizontalProjection { source, target }
    }
}

impl LipschitzMap for HorizontalProjection {
    fn source(&self) -> &Group {
        &self.source
    }
    fn target(&self) -> &Group {
        &self.target
    }
    fn eval(&self, p: &GroupPoint) -> Result<GroupPoint, MapError> {
        check_source(&self.source, p)?;
        Ok(self.target.point(&p.coords[..self.target.dim()])?)
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(1.0)
    }
    fn name(&self) -> String {
        "horizontal-projection".into()
    }
}

/// Identity on `x < 0`, left translation by `shift` on `x >= 0`: the right half
/// of the base cube folds onto the left half, with a jump along `x = 0`.
#[derive(Debug, Clone)]
pub struct Glue {
    pub group: Group,
    pub shift: GroupPoint,
}

impl Glue {
    pub fn new(group: Group) -> Self {
        let mut c = vec![0.0; group.dim()];
        c[0] = -0.5;
        let shift = group.point(&c).expect("shift");
        Glue { group, shift }
    }
}

impl LipschitzMap for Glue {
    fn source(&self) -> &Group {
        &self.group
    }
    fn target(&self) -> &Group {
        &self.group
    }
    fn eval(&self, p: &GroupPoint) -> Result<GroupPoint, MapError> {
        check_source(&self.group, p)?;
        if p.coords[0] < 0.0 {
            Ok(p.clone())
        } else {
            Ok(self.group.mul(&self.shift, p))
        }
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        None
    }
    fn name(&self) -> String {
        "glue".into()
    }
}

/// Group homomorphism determined by a horizontal matrix.
///
/// `psi` has one row per target horizontal coordinate. Between Heisenberg
/// groups the vertical coordinate is scaled by `vertical`.
#[derive(Debug, Clone, PartialEq)]
pub struct Homomorphism {
    pub source: Group,
    pub target: Group,
    pub psi: Vec<Vec<f64>>,
    pub vertical: f64,
}

impl Homomorphism {
    pub fn apply(&self, p: &GroupPoint) -> GroupPoint {
        let ns = self.source.horizontal_dim();
        let mut out = vec![0.0; self.target.dim()];
        for (i, row) in self.psi.iter().enumerate() {
            out[i] = row.iter().zip(&p.coords[..ns]).map(|(a, b)| a * b).sum();
        }
        if self.target.dim() > self.target.horizontal_dim() && self.source.dim() > ns {
            out[self.target.horizontal_dim()] = self.vertical * p.coords[ns];
        }
        self.target.point_unchecked(&out)
    }

    /// `max(||psi||_inf, sqrt|vertical|)`.
    pub fn operator_bound(&self) -> f64 {
        let rows = self
            .psi
            .iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        rows.max(self.vertical.abs().sqrt())
    }
}

impl LipschitzMap for Homomorphism {
    fn source(&self) -> &Group {
        &self.source
    }
    fn target(&self) -> &Group {
        &self.target
    }
    fn eval(&self, p: &GroupPoint) -> Result<GroupPoint, MapError> {
        check_source(&self.source, p)?;
        Ok(self.apply(p))
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(self.operator_bound())
    }
    fn name(&self) -> String {
        "homomorphism".into()
    }
}

/// `g -> h0 * phi(g0^{-1} g)`.
#[derive(Clone)]
pub struct AffineMap {
    pub h0: GroupPoint,
    pub phi: Homomorphism,
    pub g0: GroupPoint,
}

impl LipschitzMap for AffineMap {
    fn source(&self) -> &Group {
        &self.phi.source
    }
    fn target(&self) -> &Group {
        &self.phi.target
    }
    fn eval(&self, p: &GroupPoint) -> Result<GroupPoint, MapError> {
        check_source(&self.phi.source, p)?;
        let s = &self.phi.source;
        let rel = s.mul(&s.inv(&self.g0), p);
        Ok(self.phi.target.mul(&self.h0, &self.phi.apply(&rel)))
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(self.phi.operator_bound())
    }
    fn name(&self) -> String {
        "affine-homomorphism".into()
    }
}

type EvalFn = dyn Fn(&GroupPoint) -> Result<GroupPoint, MapError> + Send + Sync;

/// Map backed by a closure.
#[derive(Clone)]
pub struct FnMap {
    source: Group,
    target: Group,
    bound: Option<f64>,
    name: String,
    f: Arc<EvalFn>,
}

impl FnMap {
    pub fn new<F>(source: Group, target: Group, bound: Option<f64>, name: &str, f: F) -> Self
    where
        F: Fn(&GroupPoint) -> Result<GroupPoint, MapError> + Send + Sync + 'static,
    {
        FnMap {
            source,
            target,
            bound,
            name: name.into(),
            f: Arc::new(f),
        }
    }
}

impl LipschitzMap for FnMap {
    fn source(&self) -> &Group {
        &self.source
    }
    fn target(&self) -> &Group {
        &self.target
    }
    fn eval(&self, p: &GroupPoint) -> Result<GroupPoint, MapError> {
        check_source(&self.source, p)?;
        (self.f)(p)
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        self.bound
    }
    fn name(&self) -> String {
        self.name.clone()
    }
}

/// Built-in map by name: `identity`, `constant`, `dilation:<l>`,
/// `conjugation`, `projection`, `glue`.
pub fn builtin(name: &str, group: &Group) -> Option<MapHandle> {
    let g = group.clone();
    let heis = matches!(g.kind(), GroupKind::Heisenberg { .. });
    Some(match name {
        "identity" => Arc::new(Identity(g)),
        "constant" => Arc::new(Constant::origin(g.clone(), g)),
        "conjugation" if heis => Arc::new(Conjugation(g)),
        "projection" if heis => Arc::new(HorizontalProjection::new(g)),
        "glue" => Arc::new(Glue::new(g)),
        other => {
            let lambda: f64 = other.strip_prefix("dilation:")?.parse().ok()?;
            if !(lambda > 0.0) {
                return None;
            }
            Arc::new(Dilation { group: g, lambda })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_evaluate() {
        let g = Group::heisenberg(1);
        let p = g.point(&[0.3, 0.4, 0.5]).unwrap();
        let conj = builtin("conjugation", &g).unwrap();
        assert_eq!(conj.eval(&p).unwrap().coords.as_slice(), &[0.3, -0.4, -0.5]);
        let d = builtin("dilation:2", &g).unwrap();
        assert_eq!(d.eval(&p).unwrap().coords.as_slice(), &[0.6, 0.8, 2.0]);
        let pr = builtin("projection", &g).unwrap();
        assert_eq!(pr.eval(&p).unwrap().coords.as_slice(), &[0.3, 0.4]);
        assert_eq!(pr.target().kind(), GroupKind::Euclidean { k: 2 });
        assert!(builtin("dilation:-1", &g).is_none());
        assert!(builtin("nope", &g).is_none());
        let wrong = Group::euclidean(3).point(&[0.0; 3]).unwrap();
        assert!(conj.eval(&wrong).is_err());
    }

    #[test]
    fn conjugation_is_automorphism() {
        let g = Group::heisenberg(2);
        let c = Conjugation(g.clone());
        let mut rng = crate::rng::stream(2, 2);
        for _ in 0..200 {
            let (p, q) = (g.sample_box(&mut rng, 2.0), g.sample_box(&mut rng, 2.0));
            let lhs = c.eval(&g.mul(&p, &q)).unwrap();
            let rhs = g.mul(&c.eval(&p).unwrap(), &c.eval(&q).unwrap());
            for (a, b) in lhs.coords.iter().zip(&rhs.coords) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn glue_jumps_at_wall() {
        let g = Group::heisenberg(1);
        let m = Glue::new(g.clone());
        let a = m.eval(&g.point(&[-1e-9, 0.0, 0.0]).unwrap()).unwrap();
        let b = m.eval(&g.point(&[1e-9, 0.0, 0.0]).unwrap()).unwrap();
        assert!(g.dist(&a, &b) > 0.49);
        assert!(m.lipschitz_bound().is_none());
    }
}
