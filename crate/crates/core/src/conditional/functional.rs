use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::IndexVec;
use crate::models::{FieldModel, Node, Support};
use crate::scalar::{Scalar, TableValues};

/// Default bound on enumerated branches.
pub const DEFAULT_CUTOFF: u128 = 1 << 20;

/// Coordinate value standing for `+infinity` in a quadrant anchor.
pub const UNBOUNDED: i64 = i64::MAX;

/// An innovation coordinate: channel and lattice point.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site {
    pub channel: usize,
    pub at: IndexVec,
}

impl Site {
    pub fn new(channel: usize, at: impl Into<IndexVec>) -> Self {
        Site {
            channel,
            at: at.into(),
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.channel == 0 {
            write!(f, "xi{}", self.at)
        } else {
            write!(f, "xi[{}]{}", self.channel, self.at)
        }
    }
}

/// `F_u`, generated by the innovations at sites `w <= u`. A coordinate equal
/// to [`UNBOUNDED`] puts no constraint on that axis.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuadrantSigma {
    pub anchor: IndexVec,
}

impl QuadrantSigma {
    pub fn new(anchor: impl Into<IndexVec>) -> Self {
        QuadrantSigma {
            anchor: anchor.into(),
        }
    }

    /// `F_{..., value, ...}` with every other axis unbounded.
    pub fn half_space(dim: usize, axis: usize, value: i64) -> Self {
        let mut a = IndexVec::splat(dim, UNBOUNDED);
        a.set(axis, value);
        QuadrantSigma { anchor: a }
    }

    /// The trivial sigma-field: nothing is measurable.
    pub fn trivial(dim: usize) -> Self {
        QuadrantSigma {
            anchor: IndexVec::splat(dim, i64::MIN),
        }
    }

    pub fn dim(&self) -> usize {
        self.anchor.dim()
    }

    pub fn measures(&self, site: &Site) -> bool {
        site.at.le_all(&self.anchor)
    }

    pub fn is_coarser_than(&self, other: &QuadrantSigma) -> bool {
        self.anchor.le_all(&other.anchor)
    }

    pub fn meet(&self, other: &QuadrantSigma) -> QuadrantSigma {
        QuadrantSigma {
            anchor: self.anchor.meet(&other.anchor),
        }
    }

    /// The anchor lowered by one on `axis`; unbounded axes stay unbounded.
    pub fn lowered(&self, axis: usize) -> QuadrantSigma {
        let mut a = self.anchor.clone();
        let v = a.get(axis);
        if v != UNBOUNDED && v != i64::MIN {
            a.set(axis, v - 1);
        }
        QuadrantSigma { anchor: a }
    }

    /// Anchor coordinates with `None` for unbounded axes.
    pub fn anchor_repr(&self) -> Vec<Option<i64>> {
        self.anchor
            .coords()
            .iter()
            .map(|&c| (c != UNBOUNDED).then_some(c))
            .collect()
    }
}

impl fmt::Display for QuadrantSigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F(")?;
        for (i, c) in self.anchor.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            match *c {
                UNBOUNDED => write!(f, "inf")?,
                i64::MIN => write!(f, "-inf")?,
                c => write!(f, "{c}")?,
            }
        }
        write!(f, ")")
    }
}

type Closure = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Evaluator {
    Node(Arc<Node>),
    Table(Arc<TableValues>),
    Closure(Closure),
}

/// A real function of finitely many innovations with finite laws.
#[derive(Clone)]
pub struct FootprintFunctional {
    sites: Vec<Site>,
    supports: Vec<Support>,
    eval: Evaluator,
}

impl fmt::Debug for FootprintFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.eval {
            Evaluator::Node(_) => "node",
            Evaluator::Table(_) => "table",
            Evaluator::Closure(_) => "closure",
        };
        f.debug_struct("FootprintFunctional")
            .field("sites", &self.sites)
            .field("evaluator", &kind)
            .finish()
    }
}

fn check_sites(sites: &[Site], supports: &[Support]) -> Result<()> {
    if sites.len() != supports.len() {
        return Err(Error::Structural(format!(
            "{} sites but {} supports",
            sites.len(),
            supports.len()
        )));
    }
    if let Some(d) = sites.first().map(|s| s.at.dim()) {
        if sites.iter().any(|s| s.at.dim() != d) {
            return Err(Error::Structural("sites of mixed dimension".into()));
        }
    }
    let mut sorted: Vec<&Site> = sites.iter().collect();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Structural("a site is listed twice".into()));
    }
    for s in supports {
        if s.is_empty() {
            return Err(Error::Parameter("empty innovation support".into()));
        }
    }
    Ok(())
}

impl FootprintFunctional {
    /// `X_k` of `model` as a function of the innovations it reads.
    pub fn from_model(model: &FieldModel, k: &IndexVec) -> Result<Self> {
        if k.dim() != model.dim {
            return Err(Error::Structural(format!(
                "cell {k} does not have dimension {}",
                model.dim
            )));
        }
        let compiled = model.compile()?;
        let specs = model.channel_specs()?;
        let laws: Vec<Support> = specs
            .iter()
            .map(|s| {
                s.support().map_err(|_| {
                    Error::Parameter(format!("innovation law {s:?} has no finite support"))
                })
            })
            .collect::<Result<_>>()?;
        let sites = compiled
            .sites
            .iter()
            .map(|s| Site {
                channel: s.channel,
                at: k.sub(&s.offset),
            })
            .collect();
        let supports = compiled.sites.iter().map(|s| laws[s.channel].clone()).collect();
        Ok(FootprintFunctional {
            sites,
            supports,
            eval: Evaluator::Node(Arc::new(compiled.node)),
        })
    }

    pub fn from_fn(
        sites: Vec<Site>,
        supports: Vec<Support>,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        check_sites(&sites, &supports)?;
        Ok(FootprintFunctional {
            sites,
            supports,
            eval: Evaluator::Closure(Arc::new(f)),
        })
    }

    /// Values listed over the product of supports, last site fastest.
    pub fn from_table(sites: Vec<Site>, supports: Vec<Support>, values: TableValues) -> Result<Self> {
        check_sites(&sites, &supports)?;
        let n: usize = supports.iter().map(|s| s.len()).product();
        if values.len() != n {
            return Err(Error::Structural(format!(
                "{} table values for {n} assignments",
                values.len()
            )));
        }
        Ok(FootprintFunctional {
            sites,
            supports,
            eval: Evaluator::Table(Arc::new(values)),
        })
    }

    /// The constant `c` on the given sites.
    pub fn constant(sites: Vec<Site>, supports: Vec<Support>, c: f64) -> Result<Self> {
        Self::from_fn(sites, supports, move |_| c)
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn supports(&self) -> &[Support] {
        &self.supports
    }

    pub fn dim(&self) -> Option<usize> {
        self.sites.first().map(|s| s.at.dim())
    }

    /// Number of joint assignments of the footprint.
    pub fn branches(&self) -> u128 {
        self.supports.iter().map(|s| s.len() as u128).product()
    }

    pub fn is_tabulated(&self) -> bool {
        matches!(self.eval, Evaluator::Table(_))
    }

    /// Whether every coordinate is a fair sign.
    pub fn is_rademacher(&self) -> bool {
        self.supports.iter().all(|s| s.is_rademacher())
    }

    /// Value at the assignment given by atom indices.
    pub fn eval_indices<T: Scalar>(&self, idx: &[usize]) -> T {
        match &self.eval {
            Evaluator::Node(node) => {
                node.eval::<T>(&|s| T::from_f64(self.supports[s as usize].values[idx[s as usize]]))
            }
            Evaluator::Table(t) => t.get::<T>(self.linear_index(idx)),
            Evaluator::Closure(f) => {
                let vals: Vec<f64> = idx
                    .iter()
                    .zip(&self.supports)
                    .map(|(&i, s)| s.values[i])
                    .collect();
                T::from_f64(f(&vals))
            }
        }
    }

    /// Value at an assignment of reals, one per site.
    pub fn eval(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.sites.len() {
            return Err(Error::Argument(format!(
                "{} values for {} sites",
                values.len(),
                self.sites.len()
            )));
        }
        match &self.eval {
            Evaluator::Node(node) => Ok(node.eval_f64(&|s| values[s as usize])),
            Evaluator::Closure(f) => Ok(f(values)),
            Evaluator::Table(t) => {
                let idx = self.atom_indices(values)?;
                Ok(t.get_f64(self.linear_index(&idx)))
            }
        }
    }

    pub(crate) fn atom_index(&self, site: usize, value: f64) -> Result<usize> {
        self.supports[site]
            .values
            .iter()
            .position(|&v| v == value)
            .ok_or_else(|| {
                Error::Argument(format!(
                    "value {value} is not an atom of the law at {}",
                    self.sites[site]
                ))
            })
    }

    fn atom_indices(&self, values: &[f64]) -> Result<Vec<usize>> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.atom_index(i, v))
            .collect()
    }

    fn linear_index(&self, idx: &[usize]) -> usize {
        let mut lin = 0;
        for (i, s) in idx.iter().zip(&self.supports) {
            lin = lin * s.len() + i;
        }
        lin
    }

    pub(crate) fn needs_atoms(&self) -> bool {
        self.is_tabulated()
    }

    /// Pointwise product over the union of both footprints.
    pub fn product(&self, other: &FootprintFunctional) -> Result<FootprintFunctional> {
        let mut sites = self.sites.clone();
        let mut supports = self.supports.clone();
        let mut map_b = Vec::with_capacity(other.sites.len());
        for (s, sup) in other.sites.iter().zip(&other.supports) {
            match sites.iter().position(|t| t == s) {
                Some(i) => {
                    if supports[i] != *sup {
                        return Err(Error::Structural(format!("site {s} has two different laws")));
                    }
                    map_b.push(i);
                }
                None => {
                    map_b.push(sites.len());
                    sites.push(s.clone());
                    supports.push(sup.clone());
                }
            }
        }
        let na = self.sites.len();
        let a = self.clone();
        let b = other.clone();
        Self::from_fn(sites, supports, move |v| {
            let vb: Vec<f64> = map_b.iter().map(|&i| v[i]).collect();
            a.eval(&v[..na]).unwrap_or(f64::NAN) * b.eval(&vb).unwrap_or(f64::NAN)
        })
    }

    /// The same function read through the sites shifted by `by`.
    pub fn shifted(&self, by: &IndexVec) -> FootprintFunctional {
        FootprintFunctional {
            sites: self
                .sites
                .iter()
                .map(|s| Site {
                    channel: s.channel,
                    at: s.at.add(by),
                })
                .collect(),
            supports: self.supports.clone(),
            eval: self.eval.clone(),
        }
    }
}

/// A functional stored as its values on every assignment, in a chosen
/// arithmetic. Axis `i` enumerates the atoms of site `i`; the last axis is
/// fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tabulated<T> {
    pub sites: Vec<Site>,
    pub supports: Vec<Support>,
    strides: Vec<usize>,
    pub values: Vec<T>,
}

fn strides_for(supports: &[Support]) -> Vec<usize> {
    let mut strides = vec![1usize; supports.len()];
    for i in (0..supports.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * supports[i + 1].len();
    }
    strides
}

pub(crate) fn check_capacity(branches: u128, cutoff: u128) -> Result<()> {
    if branches > cutoff {
        Err(Error::Capacity { branches, cutoff })
    } else {
        Ok(())
    }
}

impl<T: Scalar> Tabulated<T> {
    pub fn tabulate(f: &FootprintFunctional, cutoff: u128) -> Result<Self> {
        check_capacity(f.branches(), cutoff)?;
        let n = f.branches() as usize;
        let mut values = Vec::with_capacity(n);
        let mut idx = vec![0usize; f.sites.len()];
        for _ in 0..n {
            values.push(f.eval_indices::<T>(&idx));
            for a in (0..idx.len()).rev() {
                idx[a] += 1;
                if idx[a] < f.supports[a].len() {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(Tabulated {
            strides: strides_for(&f.supports),
            sites: f.sites.clone(),
            supports: f.supports.clone(),
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Atom indices of the assignment stored at `lin`.
    pub fn decode(&self, lin: usize) -> Vec<usize> {
        self.strides
            .iter()
            .zip(&self.supports)
            .map(|(st, s)| (lin / st) % s.len())
            .collect()
    }

    pub fn assignment(&self, lin: usize) -> Vec<(Site, f64)> {
        self.decode(lin)
            .into_iter()
            .enumerate()
            .map(|(i, a)| (self.sites[i].clone(), self.supports[i].values[a]))
            .collect()
    }

    /// Replace values by their average over the atoms of site `axis`.
    pub fn average_axis(&mut self, axis: usize) {
        let n = self.supports[axis].len();
        if n == 1 {
            return;
        }
        let stride = self.strides[axis];
        let block = stride * n;
        let weights: Vec<T> = self.supports[axis].probs.iter().map(|&p| T::from_f64(p)).collect();
        for start in (0..self.values.len()).step_by(block) {
            for off in 0..stride {
                let base = start + off;
                let mut acc = T::zero();
                for (a, w) in weights.iter().enumerate() {
                    acc = acc + w.clone() * self.values[base + a * stride].clone();
                }
                for a in 0..n {
                    self.values[base + a * stride] = acc.clone();
                }
            }
        }
    }

    /// `E(f | sigma)`, still indexed by every site.
    pub fn conditional(&self, sigma: &QuadrantSigma) -> Self {
        let mut out = self.clone();
        for (i, s) in self.sites.iter().enumerate() {
            if !sigma.measures(s) {
                out.average_axis(i);
            }
        }
        out
    }

    /// Keep the axes in `keep`, reading the other axes at atom 0.
    pub fn restrict(&self, keep: &[usize]) -> Self {
        let sites: Vec<Site> = keep.iter().map(|&i| self.sites[i].clone()).collect();
        let supports: Vec<Support> = keep.iter().map(|&i| self.supports[i].clone()).collect();
        let strides = strides_for(&supports);
        let n: usize = supports.iter().map(|s| s.len()).product();
        let mut values = Vec::with_capacity(n);
        for lin in 0..n {
            let mut src = 0;
            for (j, &i) in keep.iter().enumerate() {
                let a = (lin / strides[j]) % supports[j].len();
                src += a * self.strides[i];
            }
            values.push(self.values[src].clone());
        }
        Tabulated {
            sites,
            supports,
            strides,
            values,
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(&T, &T) -> T) -> Result<Self> {
        if self.sites != other.sites {
            return Err(Error::Structural("tables over different sites".into()));
        }
        Ok(Tabulated {
            sites: self.sites.clone(),
            supports: self.supports.clone(),
            strides: self.strides.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(a, b)).collect(),
        })
    }

    pub fn map(&self, f: impl Fn(&T) -> T) -> Self {
        Tabulated {
            sites: self.sites.clone(),
            supports: self.supports.clone(),
            strides: self.strides.clone(),
            values: self.values.iter().map(f).collect(),
        }
    }

    /// Largest `|value|` and the first position where it occurs.
    pub fn max_abs(&self) -> (T, usize) {
        let mut best = T::zero();
        let mut at = 0;
        for (i, v) in self.values.iter().enumerate() {
            let a = v.abs();
            if a > best {
                best = a;
                at = i;
            }
        }
        (best, at)
    }

    /// Expectation under the product law.
    pub fn mean(&self) -> T {
        let mut t = self.clone();
        for i in 0..t.sites.len() {
            t.average_axis(i);
        }
        t.values.first().cloned().unwrap_or_else(T::zero)
    }

    pub fn into_functional(self) -> FootprintFunctional {
        FootprintFunctional {
            sites: self.sites,
            supports: self.supports,
            eval: Evaluator::Table(Arc::new(T::pack(self.values))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Exact;

    fn rad() -> Support {
        Support {
            values: vec![-1.0, 1.0],
            probs: vec![0.5, 0.5],
        }
    }

    #[test]
    fn half_space_measures_one_axis() {
        let s = QuadrantSigma::half_space(2, 0, 0);
        assert!(s.measures(&Site::new(0, [0, 100])));
        assert!(!s.measures(&Site::new(0, [1, -100])));
        assert_eq!(s.to_string(), "F(0,inf)");
    }

    #[test]
    fn table_roundtrip_and_restrict() {
        let f = FootprintFunctional::from_fn(
            vec![Site::new(0, [0, 0]), Site::new(0, [1, 0])],
            vec![rad(), rad()],
            |v| v[0] + 10.0 * v[1],
        )
        .unwrap();
        let t = Tabulated::<f64>::tabulate(&f, DEFAULT_CUTOFF).unwrap();
        assert_eq!(t.values, vec![-11.0, 9.0, -9.0, 11.0]);
        let g = t.clone().into_functional();
        assert_eq!(g.eval(&[1.0, -1.0]).unwrap(), -9.0);
        assert!(g.eval(&[0.5, -1.0]).is_err());
        let r = t.restrict(&[1]);
        assert_eq!(r.values, vec![-11.0, 9.0]);
    }

    #[test]
    fn exact_average_of_signs_is_zero() {
        let f = FootprintFunctional::from_fn(vec![Site::new(0, [0])], vec![rad()], |v| v[0] * 0.1)
            .unwrap();
        let t = Tabulated::<Exact>::tabulate(&f, DEFAULT_CUTOFF).unwrap();
        assert!(t.mean().is_zero());
    }

    #[test]
    fn capacity_is_enforced() {
        let sites: Vec<Site> = (0..5).map(|i| Site::new(0, [i])).collect();
        let f = FootprintFunctional::constant(sites, vec![rad(); 5], 1.0).unwrap();
        assert!(matches!(
            Tabulated::<f64>::tabulate(&f, 16),
            Err(Error::Capacity { branches: 32, cutoff: 16 })
        ));
    }

    #[test]
    fn duplicate_sites_are_rejected() {
        let s = vec![Site::new(0, [0]), Site::new(0, [0])];
        assert!(FootprintFunctional::constant(s, vec![rad(), rad()], 0.0).is_err());
    }
}
