use serde::{Deserialize, Serialize};

use super::sampler::{run_parallel, FieldSampler};
use crate::conditional::{FootprintFunctional, Tabulated, DEFAULT_CUTOFF};
use crate::error::{Error, Result};
use crate::lattice::{IndexVec, Rect};
use crate::models::{level_series, FieldKind, FieldModel, ScaleField};
use crate::rng::{derive_seed, SeedRole};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMethod {
    Exact,
    Mc,
}

/// A variance with the way it was obtained; `error` is zero for exact
/// values and one standard error otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub value: f64,
    pub method: EstimateMethod,
    pub error: f64,
}

impl VarianceEstimate {
    fn exact(value: f64) -> Self {
        VarianceEstimate {
            value,
            method: EstimateMethod::Exact,
            error: 0.0,
        }
    }
}

/// Replicates used when `E X^2` has to be estimated by simulation.
pub const SIGMA2_MC_REPLICATES: usize = 200_000;

/// `sigma^2 = E X_0^2`.
pub fn estimate_sigma2(model: &FieldModel) -> Result<VarianceEstimate> {
    estimate_sigma2_with(model, 0, SIGMA2_MC_REPLICATES, 1)
}

pub fn estimate_sigma2_with(
    model: &FieldModel,
    seed: u64,
    reps: usize,
    threads: usize,
) -> Result<VarianceEstimate> {
    model.validate()?;
    if let Some(v) = enumerate_second_moment(model)? {
        return Ok(VarianceEstimate::exact(v));
    }
    if let Some(v) = closed_form_second_moment(model) {
        return Ok(VarianceEstimate::exact(v));
    }
    mc_second_moment(model, seed, reps, threads)
}

fn enumerate_second_moment(model: &FieldModel) -> Result<Option<f64>> {
    let f = match FootprintFunctional::from_model(model, &IndexVec::zeros(model.dim)) {
        Ok(f) => f,
        Err(Error::Parameter(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    if f.branches() > DEFAULT_CUTOFF {
        return Ok(None);
    }
    let t = Tabulated::<f64>::tabulate(&f, DEFAULT_CUTOFF)?;
    Ok(Some(t.map(|x| x * x).mean()))
}

fn closed_form_second_moment(model: &FieldModel) -> Option<f64> {
    let s2 = model.innovation.second_moment();
    match &model.field {
        FieldKind::Zero => Some(0.0),
        FieldKind::Iid if model.innovation.is_centered() => Some(s2),
        FieldKind::Linear { kernel } if model.innovation.is_centered() => Some(s2 * kernel.sum_sq()),
        FieldKind::ProductOmd { scale } if model.innovation.is_centered() => match scale {
            ScaleField::Constant { value } => Some(s2 * value),
            ScaleField::Levels { n_max, .. } => level_series(*n_max, &[*n_max], |x| x)
                .ok()
                .map(|v| s2 * v[0]),
            ScaleField::TwoLevel { .. } => None,
        },
        FieldKind::UField { n_max, .. } => {
            Some(crate::models::InnovationSpec::ULevels { n_max: *n_max }.second_moment())
        }
        _ => None,
    }
}

fn mc_second_moment(model: &FieldModel, seed: u64, reps: usize, threads: usize) -> Result<VarianceEstimate> {
    if reps < 2 {
        return Err(Error::Parameter(format!("reps = {reps} must be at least 2")));
    }
    let sampler = FieldSampler::new(model, Rect::origin_box(&vec![1; model.dim]))?;
    let base = derive_seed(seed, SeedRole::Estimate, 1);
    let xs = run_parallel(threads, reps, || sampler.workspace(), |ws, r| {
        Ok(sampler.sample(ws, base, r as u64, None)?[0])
    })?;
    let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
    let n = sq.len() as f64;
    let mean = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(VarianceEstimate {
        value: mean,
        method: EstimateMethod::Mc,
        error: (var / n).sqrt(),
    })
}

/// `c^2 = sum_h Cov(X_0, X_h)`, summed over every lag at which the
/// footprints of `X_0` and `X_h` can interact.
pub fn long_run_variance(model: &FieldModel) -> Result<VarianceEstimate> {
    model.validate()?;
    if model.is_structural_omd() {
        return estimate_sigma2(model);
    }
    let d = model.dim;
    let compiled = model.compile()?;
    let ext = compiled.offset_extent();
    let span: Vec<i64> = ext.iter().map(|e| e.1 - e.0).collect();
    let lags = Rect::new(
        IndexVec::new(span.iter().map(|s| -s).collect::<Vec<_>>()),
        IndexVec::new(span.iter().map(|s| s + 1).collect::<Vec<_>>()),
    )?;
    if let FieldKind::Linear { kernel } = &model.field {
        if model.innovation.support().is_err() {
            let s2 = model.innovation.second_moment();
            let mut total = 0.0;
            for h in lags.points() {
                for (j, a) in kernel.coeffs() {
                    if let Some(b) = kernel.coeffs().get(&j.add(&h)) {
                        total += a * b;
                    }
                }
            }
            return Ok(VarianceEstimate::exact(s2 * total));
        }
    }
    let x0 = FootprintFunctional::from_model(model, &IndexVec::zeros(d))?;
    let mean = Tabulated::<f64>::tabulate(&x0, DEFAULT_CUTOFF)?.mean();
    let mut total = 0.0;
    for h in lags.points() {
        let xh = FootprintFunctional::from_model(model, &h)?;
        let joint = x0.product(&xh)?;
        let t = Tabulated::<f64>::tabulate(&joint, DEFAULT_CUTOFF)?;
        total += t.mean() - mean * mean;
    }
    Ok(VarianceEstimate::exact(total))
}

/// Limit variance of the annealed law: `c^2`, or `sigma^2` for a structural
/// orthomartingale difference whose covariances cannot be enumerated.
pub fn annealed_variance(model: &FieldModel) -> Result<VarianceEstimate> {
    match long_run_variance(model) {
        Ok(v) => Ok(v),
        Err(Error::Capacity { .. }) | Err(Error::Parameter(_)) if model.is_structural_omd() => {
            estimate_sigma2(model)
        }
        Err(e) => Err(e),
    }
}
