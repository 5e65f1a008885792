use serde::{Deserialize, Serialize};

use super::functional::{check_capacity, FootprintFunctional, QuadrantSigma, Site, Tabulated};
use crate::error::{Error, Result};
use crate::lattice::IndexVec;
use crate::rng::SeqRng;
use crate::scalar::{Exact, Scalar};

/// Number type used by enumeration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arithmetic {
    /// Exact when every coordinate is a fair sign, floating otherwise.
    #[default]
    Auto,
    Exact,
    Float,
}

impl Arithmetic {
    pub fn resolve(self, f: &FootprintFunctional) -> Arithmetic {
        match self {
            Arithmetic::Auto if f.is_rademacher() => Arithmetic::Exact,
            Arithmetic::Auto => Arithmetic::Float,
            other => other,
        }
    }
}

enum Choice {
    Fixed(usize, f64),
    Free,
}

fn plan(
    f: &FootprintFunctional,
    sigma: &QuadrantSigma,
    fixed: &[(Site, f64)],
    cutoff: u128,
) -> Result<(Vec<Choice>, Vec<usize>)> {
    if let Some(d) = f.dim() {
        if d != sigma.dim() {
            return Err(Error::Structural(format!(
                "sigma-field of dimension {} for a functional of dimension {d}",
                sigma.dim()
            )));
        }
    }
    let mut choices = Vec::with_capacity(f.sites().len());
    let mut free = Vec::new();
    let mut branches: u128 = 1;
    for (i, site) in f.sites().iter().enumerate() {
        if sigma.measures(site) {
            let v = fixed
                .iter()
                .find(|(s, _)| s == site)
                .map(|(_, v)| *v)
                .ok_or_else(|| {
                    Error::Argument(format!("no fixed value for the measurable site {site}"))
                })?;
            let a = if f.needs_atoms() { f.atom_index(i, v)? } else { 0 };
            choices.push(Choice::Fixed(a, v));
        } else {
            branches = branches.saturating_mul(f.supports()[i].len() as u128);
            choices.push(Choice::Free);
            free.push(i);
        }
    }
    check_capacity(branches, cutoff)?;
    Ok((choices, free))
}

/// `E(f | sigma)` at the assignment `fixed` of the measurable sites, by
/// enumeration of the free sites.
pub fn cond_exp(f: &FootprintFunctional, sigma: &QuadrantSigma, fixed: &[(Site, f64)]) -> Result<f64> {
    cond_exp_with::<f64>(f, sigma, fixed, super::DEFAULT_CUTOFF)
}

pub fn cond_exp_exact(
    f: &FootprintFunctional,
    sigma: &QuadrantSigma,
    fixed: &[(Site, f64)],
) -> Result<Exact> {
    cond_exp_with::<Exact>(f, sigma, fixed, super::DEFAULT_CUTOFF)
}

pub fn cond_exp_with<T: Scalar>(
    f: &FootprintFunctional,
    sigma: &QuadrantSigma,
    fixed: &[(Site, f64)],
    cutoff: u128,
) -> Result<T> {
    let (choices, free) = plan(f, sigma, fixed, cutoff)?;
    let supports = f.supports();
    let mut idx: Vec<usize> = choices
        .iter()
        .map(|c| match c {
            Choice::Fixed(a, _) => *a,
            Choice::Free => 0,
        })
        .collect();
    let fixed_values: Vec<Option<f64>> = choices
        .iter()
        .map(|c| match c {
            Choice::Fixed(_, v) => Some(*v),
            Choice::Free => None,
        })
        .collect();
    let direct_values = !f.needs_atoms();
    let mut acc = T::zero();
    loop {
        let mut w = T::one();
        for &i in &free {
            w = w * T::from_f64(supports[i].probs[idx[i]]);
        }
        let v = if direct_values && fixed_values.iter().any(|x| x.is_some()) {
            let vals: Vec<f64> = (0..idx.len())
                .map(|i| fixed_values[i].unwrap_or(supports[i].values[idx[i]]))
                .collect();
            T::from_f64(f.eval(&vals)?)
        } else {
            f.eval_indices::<T>(&idx)
        };
        acc = acc + w * v;
        let mut advanced = false;
        for &i in free.iter().rev() {
            idx[i] += 1;
            if idx[i] < supports[i].len() {
                advanced = true;
                break;
            }
            idx[i] = 0;
        }
        if !advanced {
            break;
        }
    }
    Ok(acc)
}

/// Monte Carlo estimate of `E(f | sigma)` at `fixed`: the sample mean over
/// `reps` independent draws of the free sites and its standard error.
pub fn cond_exp_mc(
    f: &FootprintFunctional,
    sigma: &QuadrantSigma,
    fixed: &[(Site, f64)],
    reps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if reps < 2 {
        return Err(Error::Parameter(format!("reps = {reps} must be at least 2")));
    }
    let (choices, _) = plan(f, sigma, fixed, u128::MAX)?;
    let supports = f.supports();
    let cum: Vec<Vec<f64>> = supports
        .iter()
        .map(|s| {
            s.probs
                .iter()
                .scan(0.0, |acc, p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect()
        })
        .collect();
    let mut rng = SeqRng::new(seed);
    let mut vals = vec![0.0; choices.len()];
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for r in 0..reps {
        for (i, c) in choices.iter().enumerate() {
            vals[i] = match c {
                Choice::Fixed(_, v) => *v,
                Choice::Free => {
                    let u = rng.uniform();
                    let a = cum[i].partition_point(|&c| c <= u).min(supports[i].len() - 1);
                    supports[i].values[a]
                }
            };
        }
        let x = f.eval(&vals)?;
        let delta = x - mean;
        mean += delta / (r + 1) as f64;
        m2 += delta * (x - mean);
    }
    let var = m2 / (reps - 1) as f64;
    Ok((mean, (var / reps as f64).sqrt()))
}

fn check_anchor(f: &FootprintFunctional, u: &IndexVec) -> Result<()> {
    match f.dim() {
        Some(d) if d != u.dim() => Err(Error::Structural(format!(
            "anchor {u} for a functional of dimension {d}"
        ))),
        _ => Ok(()),
    }
}

/// `P_u(f)` tabulated in `T`, applying the one-axis differences
/// `E_u - E_{u - e_j}` for `j` in `order`.
pub fn projection_table<T: Scalar>(
    f: &FootprintFunctional,
    u: &IndexVec,
    order: &[usize],
    cutoff: u128,
) -> Result<Tabulated<T>> {
    check_anchor(f, u)?;
    let t = Tabulated::<T>::tabulate(f, cutoff)?;
    project_tabulated(t, u, order)
}

pub(crate) fn project_tabulated<T: Scalar>(
    mut t: Tabulated<T>,
    u: &IndexVec,
    order: &[usize],
) -> Result<Tabulated<T>> {
    let sigma = QuadrantSigma::new(u.clone());
    for &axis in order {
        if axis >= u.dim() {
            return Err(Error::Argument(format!("axis {axis} out of range")));
        }
        let hi = t.conditional(&sigma);
        let lo = t.conditional(&sigma.lowered(axis));
        t = hi.zip_with(&lo, |a, b| a.clone() - b.clone())?;
    }
    Ok(t)
}

/// `P_u(f)` as a tabulated functional, axes composed in ascending order.
pub fn projection(f: &FootprintFunctional, u: &IndexVec) -> Result<FootprintFunctional> {
    projection_in(f, u, Arithmetic::Auto)
}

pub fn projection_in(
    f: &FootprintFunctional,
    u: &IndexVec,
    arithmetic: Arithmetic,
) -> Result<FootprintFunctional> {
    let order: Vec<usize> = (0..u.dim()).collect();
    Ok(match arithmetic.resolve(f) {
        Arithmetic::Exact => {
            projection_table::<Exact>(f, u, &order, super::DEFAULT_CUTOFF)?.into_functional()
        }
        _ => projection_table::<f64>(f, u, &order, super::DEFAULT_CUTOFF)?.into_functional(),
    })
}

/// `(P_u(f 1{|f| <= a}), P_u(f 1{|f| > a}))` tabulated in `T`.
pub fn truncation_split_table<T: Scalar>(
    f: &FootprintFunctional,
    u: &IndexVec,
    a: f64,
    cutoff: u128,
) -> Result<(Tabulated<T>, Tabulated<T>)> {
    if !(a > 0.0) {
        return Err(Error::Parameter(format!("truncation level {a} must be positive")));
    }
    check_anchor(f, u)?;
    let t = Tabulated::<T>::tabulate(f, cutoff)?;
    let level = T::from_f64(a);
    let small = t.map(|v| if v.abs() <= level { v.clone() } else { T::zero() });
    let large = t.map(|v| if v.abs() > level { v.clone() } else { T::zero() });
    let order: Vec<usize> = (0..u.dim()).collect();
    Ok((
        project_tabulated(small, u, &order)?,
        project_tabulated(large, u, &order)?,
    ))
}

/// Truncation split at the origin.
pub fn truncation_split(f: &FootprintFunctional, a: f64) -> Result<(FootprintFunctional, FootprintFunctional)> {
    let d = f.dim().unwrap_or(1);
    let u = IndexVec::zeros(d);
    Ok(match Arithmetic::Auto.resolve(f) {
        Arithmetic::Exact => {
            let (s, l) = truncation_split_table::<Exact>(f, &u, a, super::DEFAULT_CUTOFF)?;
            (s.into_functional(), l.into_functional())
        }
        _ => {
            let (s, l) = truncation_split_table::<f64>(f, &u, a, super::DEFAULT_CUTOFF)?;
            (s.into_functional(), l.into_functional())
        }
    })
}
