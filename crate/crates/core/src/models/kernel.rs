use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{IndexVec, Rect};

/// Finite causal kernel `j -> a_j` with `j >= 0` coordinatewise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub struct Kernel {
    dim: usize,
    coeffs: BTreeMap<IndexVec, f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelTerm {
    pub offset: Vec<i64>,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelRepr {
    pub dim: usize,
    #[serde(default)]
    pub terms: Vec<KernelTerm>,
}

impl TryFrom<KernelRepr> for Kernel {
    type Error = Error;
    fn try_from(r: KernelRepr) -> Result<Self> {
        Kernel::new(r.dim, r.terms.into_iter().map(|t| (IndexVec::new(t.offset), t.value)))
    }
}

impl From<Kernel> for KernelRepr {
    fn from(k: Kernel) -> Self {
        KernelRepr {
            dim: k.dim,
            terms: k
                .coeffs
                .into_iter()
                .map(|(o, v)| KernelTerm {
                    offset: o.coords().to_vec(),
                    value: v,
                })
                .collect(),
        }
    }
}

fn check_offset(dim: usize, o: &IndexVec) -> Result<()> {
    if o.dim() != dim {
        return Err(Error::Structural(format!(
            "offset {o} has dimension {}, expected {dim}",
            o.dim()
        )));
    }
    if !o.is_nonnegative() {
        return Err(Error::Structural(format!(
            "offset {o} is not >= 0 coordinatewise; the field would read the future"
        )));
    }
    Ok(())
}

impl Kernel {
    pub fn new(dim: usize, terms: impl IntoIterator<Item = (IndexVec, f64)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Structural("kernel dimension must be at least 1".into()));
        }
        let mut coeffs = BTreeMap::new();
        for (o, v) in terms {
            check_offset(dim, &o)?;
            if !v.is_finite() {
                return Err(Error::Parameter(format!("coefficient at {o} is not finite")));
            }
            if coeffs.insert(o.clone(), v).is_some() {
                return Err(Error::Structural(format!("offset {o} listed twice")));
            }
        }
        Ok(Kernel { dim, coeffs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> &BTreeMap<IndexVec, f64> {
        &self.coeffs
    }

    pub fn sum(&self) -> f64 {
        self.coeffs.values().sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.coeffs.values().map(|a| a * a).sum()
    }

    /// Largest coordinate among the offsets (0 for an empty kernel).
    pub fn diameter(&self) -> i64 {
        self.coeffs
            .keys()
            .flat_map(|o| o.coords().iter().copied())
            .max()
            .unwrap_or(0)
    }
}

/// `b_{n,i} = sum_{0 <= k <= n-1} a_{k+i}` for every `i >= 0` where it is
/// nonzero.
pub fn lin_b_coeffs(kernel: &Kernel, n: &IndexVec) -> Result<BTreeMap<IndexVec, f64>> {
    if n.dim() != kernel.dim() || n.coords().iter().any(|&c| c < 1) {
        return Err(Error::Parameter(format!("n = {n} must be >= 1 in every coordinate")));
    }
    let mut out: BTreeMap<IndexVec, f64> = BTreeMap::new();
    for (j, &a) in kernel.coeffs() {
        // k ranges over 0 <= k <= min(n - 1, j)
        let hi: Vec<i64> = j
            .coords()
            .iter()
            .zip(n.coords())
            .map(|(&jj, &nn)| jj.min(nn - 1) + 1)
            .collect();
        let ks = Rect::new(IndexVec::zeros(kernel.dim()), hi)?;
        for k in ks.points() {
            *out.entry(j.sub(&k)).or_insert(0.0) += a;
        }
    }
    out.retain(|_, v| *v != 0.0);
    Ok(out)
}

/// Result of scanning a condition over the box `[1, N_max]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionScan {
    pub n_max: i64,
    pub sup: f64,
    pub argmax: IndexVec,
    /// Value at `(N_max, ..., N_max)`.
    pub stabilized_value: f64,
    /// Smallest `m` such that every index in `[m, N_max]^d` has the
    /// stabilized value; `None` if only the corner does.
    pub stabilized_at: Option<i64>,
}

fn scan(dim: usize, n_max: i64, value: impl Fn(&IndexVec) -> Result<f64>) -> Result<ConditionScan> {
    if n_max < 1 {
        return Err(Error::Parameter(format!("N_max = {n_max} must be at least 1")));
    }
    let grid = Rect::new(IndexVec::splat(dim, 1), IndexVec::splat(dim, n_max + 1))?;
    let mut vals = Vec::with_capacity(grid.volume());
    let mut sup = f64::NEG_INFINITY;
    let mut argmax = IndexVec::splat(dim, 1);
    for n in grid.points() {
        let v = value(&n)?;
        if v > sup {
            sup = v;
            argmax = n.clone();
        }
        vals.push((n, v));
    }
    let corner = vals.last().map(|(_, v)| *v).unwrap_or(0.0);
    let tol = 1e-12 * corner.abs().max(1.0);
    let mut stabilized_at = None;
    for m in (1..n_max).rev() {
        let ok = vals
            .iter()
            .filter(|(n, _)| n.coords().iter().all(|&c| c >= m))
            .all(|(_, v)| (v - corner).abs() <= tol);
        if ok {
            stabilized_at = Some(m);
        } else {
            break;
        }
    }
    Ok(ConditionScan {
        n_max,
        sup,
        argmax,
        stabilized_value: corner,
        stabilized_at,
    })
}

/// Scan `sum_i b_{n,i}^2` over `n` in `[1, N_max]^d`.
pub fn check_lin(kernel: &Kernel, n_max: i64) -> Result<ConditionScan> {
    scan(kernel.dim(), n_max, |n| {
        Ok(lin_b_coeffs(kernel, n)?.values().map(|b| b * b).sum())
    })
}

/// Finite second-order Volterra coefficients `(u, v) -> a_{u,v}` with a
/// vanishing diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VolterraRepr", into = "VolterraRepr")]
pub struct VolterraCoeffs {
    dim: usize,
    coeffs: BTreeMap<(IndexVec, IndexVec), f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolterraTerm {
    pub u: Vec<i64>,
    pub v: Vec<i64>,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolterraRepr {
    pub dim: usize,
    #[serde(default)]
    pub terms: Vec<VolterraTerm>,
}

impl TryFrom<VolterraRepr> for VolterraCoeffs {
    type Error = Error;
    fn try_from(r: VolterraRepr) -> Result<Self> {
        VolterraCoeffs::new(
            r.dim,
            r.terms
                .into_iter()
                .map(|t| (IndexVec::new(t.u), IndexVec::new(t.v), t.value)),
        )
    }
}

impl From<VolterraCoeffs> for VolterraRepr {
    fn from(c: VolterraCoeffs) -> Self {
        VolterraRepr {
            dim: c.dim,
            terms: c
                .coeffs
                .into_iter()
                .map(|((u, v), value)| VolterraTerm {
                    u: u.coords().to_vec(),
                    v: v.coords().to_vec(),
                    value,
                })
                .collect(),
        }
    }
}

impl VolterraCoeffs {
    pub fn new(
        dim: usize,
        terms: impl IntoIterator<Item = (IndexVec, IndexVec, f64)>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Structural("coefficient dimension must be at least 1".into()));
        }
        let mut coeffs = BTreeMap::new();
        for (u, v, a) in terms {
            check_offset(dim, &u)?;
            check_offset(dim, &v)?;
            if u == v && a != 0.0 {
                return Err(Error::Structural(format!(
                    "diagonal coefficient a_({u},{u}) = {a} must vanish"
                )));
            }
            if !a.is_finite() {
                return Err(Error::Parameter(format!("coefficient at ({u},{v}) is not finite")));
            }
            if coeffs.insert((u.clone(), v.clone()), a).is_some() {
                return Err(Error::Structural(format!("pair ({u},{v}) listed twice")));
            }
        }
        Ok(VolterraCoeffs { dim, coeffs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> &BTreeMap<(IndexVec, IndexVec), f64> {
        &self.coeffs
    }
}

/// `c_{u,v}(j) = sum_{0 <= k <= j-1} a_{k+u,k+v}` for every pair with a
/// nonzero value.
pub fn volterra_c_coeffs(
    coeffs: &VolterraCoeffs,
    j: &IndexVec,
) -> Result<BTreeMap<(IndexVec, IndexVec), f64>> {
    if j.dim() != coeffs.dim() || j.coords().iter().any(|&c| c < 1) {
        return Err(Error::Parameter(format!("j = {j} must be >= 1 in every coordinate")));
    }
    let mut out: BTreeMap<(IndexVec, IndexVec), f64> = BTreeMap::new();
    for ((p, q), &a) in coeffs.coeffs() {
        let hi: Vec<i64> = (0..coeffs.dim())
            .map(|ax| p.get(ax).min(q.get(ax)).min(j.get(ax) - 1) + 1)
            .collect();
        let ks = Rect::new(IndexVec::zeros(coeffs.dim()), hi)?;
        for k in ks.points() {
            *out.entry((p.sub(&k), q.sub(&k))).or_insert(0.0) += a;
        }
    }
    out.retain(|_, v| *v != 0.0);
    Ok(out)
}

/// Scan `sum_{u != v} c_{u,v}(j)^2` over `j` in `[1, N_max]^d`.
pub fn check_volt(coeffs: &VolterraCoeffs, n_max: i64) -> Result<ConditionScan> {
    scan(coeffs.dim(), n_max, |j| {
        Ok(volterra_c_coeffs(coeffs, j)?
            .iter()
            .filter(|((u, v), _)| u != v)
            .map(|(_, c)| c * c)
            .sum())
    })
}
