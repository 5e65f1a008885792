use serde::{Deserialize, Serialize};

use super::clt::omd_certified;
use super::output::{csv_num, CsvTable};
use super::sampler::{frozen_past, replicate_base, resolve_threads, run_parallel, FieldSampler};
use super::variance::{estimate_sigma2, VarianceEstimate};
use crate::error::{Error, Result};
use crate::models::FieldModel;

/// Row-sum martingale array conditions for `D_{n,i} = F_{i,v} / sqrt(n)`
/// with `F_{i,v} = v^{-1/2} sum_{j < v} X_{i,j}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GhSpec {
    pub model: FieldModel,
    /// Sizes `(n, v)`, smallest first.
    pub sizes: Vec<Vec<usize>>,
    pub replicates: usize,
    /// Frozen past; `None` runs under the stationary law.
    #[serde(default)]
    pub frozen_past: Option<u64>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_qs")]
    pub qs: Vec<f64>,
}

fn default_qs() -> Vec<f64> {
    vec![0.25, 0.5, 1.0]
}

impl GhSpec {
    pub fn new(model: FieldModel, sizes: Vec<Vec<usize>>, replicates: usize) -> Self {
        GhSpec {
            model,
            sizes,
            replicates,
            frozen_past: None,
            base_seed: 0,
            threads: 0,
            qs: default_qs(),
        }
    }
}

/// `(1/n) E|sum_{i <= [(n-1) q]} (F_{i,v}^2 - sigma^2)|` at one `q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitStat {
    pub q: f64,
    pub value: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GhSizeReport {
    pub n: usize,
    pub v: usize,
    pub limit: Vec<LimitStat>,
    /// `(1/n) E max_i F_{i,v}^2`.
    pub max_stat: f64,
    pub max_se: f64,
    /// `(1/n) E sum_i F_{i,v}^2`, which dominates `max_stat`.
    pub sum_stat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GhReport {
    pub sigma2: VarianceEstimate,
    /// `C^2` for a field with `|X| <= C`.
    pub bound: Option<f64>,
    pub sizes: Vec<GhSizeReport>,
    /// Per `q`, whether the limit statistic decreases along the sizes.
    pub decreasing: Vec<(f64, bool)>,
    pub max_within_bound: bool,
}

pub const GH_CSV_HEADER: [&str; 7] = ["n", "v", "statistic", "q", "value", "se", "bound"];

impl GhReport {
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&GH_CSV_HEADER);
        let bound = self.bound.map_or_else(String::new, csv_num);
        for s in &self.sizes {
            for l in &s.limit {
                t.push(vec![
                    s.n.to_string(),
                    s.v.to_string(),
                    "limit".into(),
                    csv_num(l.q),
                    csv_num(l.value),
                    csv_num(l.se),
                    String::new(),
                ]);
            }
            t.push(vec![
                s.n.to_string(),
                s.v.to_string(),
                "max".into(),
                String::new(),
                csv_num(s.max_stat),
                csv_num(s.max_se),
                bound.clone(),
            ]);
        }
        t.render()
    }

    pub fn passed(&self) -> bool {
        self.max_within_bound && self.decreasing.iter().all(|d| d.1)
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Monte Carlo estimates of both array conditions along a size ladder.
pub fn gh_check(spec: &GhSpec) -> Result<GhReport> {
    let model = &spec.model;
    model.validate()?;
    if model.dim != 2 {
        return Err(Error::Structural(format!(
            "the row-sum array is defined for d = 2, got {}",
            model.dim
        )));
    }
    if !omd_certified(model) {
        return Err(Error::Contract(
            "the row sums form a martingale array only for orthomartingale differences".into(),
        ));
    }
    if spec.replicates < 2 {
        return Err(Error::Parameter("at least 2 replicates are needed".into()));
    }
    if spec.sizes.is_empty() || spec.sizes.iter().any(|s| s.len() != 2 || s.contains(&0)) {
        return Err(Error::Parameter("sizes must be positive pairs (n, v)".into()));
    }
    if spec.qs.iter().any(|q| !(0.0..=1.0).contains(q)) {
        return Err(Error::Parameter("q must lie in [0, 1]".into()));
    }
    let sigma2 = estimate_sigma2(model)?;
    let threads = resolve_threads(Some(spec.threads));
    let frozen = spec.frozen_past.map(|p| frozen_past(2, spec.base_seed, p));
    let base = replicate_base(spec.base_seed, frozen.as_ref());
    let mut sizes = Vec::new();
    for size in &spec.sizes {
        let (n, v) = (size[0], size[1]);
        let cuts: Vec<usize> = spec
            .qs
            .iter()
            .map(|q| ((n - 1) as f64 * q).floor() as usize)
            .collect();
        let sampler = FieldSampler::origin(model, &[n, v])?;
        let reps = run_parallel(threads, spec.replicates, || sampler.workspace(), |ws, r| {
            let x = sampler.sample(ws, base, r as u64, frozen.as_ref())?;
            let mut partial = 0.0;
            let mut max_f2: f64 = 0.0;
            let mut at_cut = vec![0.0; cuts.len()];
            for i in 0..n {
                let f: f64 = x[i * v..(i + 1) * v].iter().sum::<f64>() / (v as f64).sqrt();
                let f2 = f * f;
                max_f2 = max_f2.max(f2);
                partial += f2 - sigma2.value;
                for (c, &k) in at_cut.iter_mut().zip(&cuts) {
                    if i == k {
                        *c = partial.abs() / n as f64;
                    }
                }
            }
            let sum = partial + n as f64 * sigma2.value;
            Ok((at_cut, max_f2 / n as f64, sum / n as f64))
        })?;
        let limit = spec
            .qs
            .iter()
            .enumerate()
            .map(|(k, &q)| {
                let xs: Vec<f64> = reps.iter().map(|r| r.0[k]).collect();
                let (value, se) = mean_se(&xs);
                LimitStat { q, value, se }
            })
            .collect();
        let (max_stat, max_se) = mean_se(&reps.iter().map(|r| r.1).collect::<Vec<_>>());
        let sum_stat = mean_se(&reps.iter().map(|r| r.2).collect::<Vec<_>>()).0;
        sizes.push(GhSizeReport {
            n,
            v,
            limit,
            max_stat,
            max_se,
            sum_stat,
        });
    }
    let decreasing = spec
        .qs
        .iter()
        .enumerate()
        .map(|(k, &q)| {
            let ok = sizes
                .windows(2)
                .all(|w| w[1].limit[k].value < w[0].limit[k].value);
            (q, ok)
        })
        .collect();
    let bound = model.bound().map(|c| c * c);
    let max_within_bound = match bound {
        Some(c2) => sizes.iter().all(|s| s.max_stat <= c2),
        None => true,
    };
    Ok(GhReport {
        sigma2,
        bound,
        sizes,
        decreasing,
        max_within_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::IndexVec;
    use crate::models::{InnovationSpec, Kernel};

    #[test]
    fn iid_limit_statistic_matches_independent_rows() {
        let m = FieldModel::iid(2, InnovationSpec::Rademacher);
        let mut spec = GhSpec::new(m, vec![vec![64, 64]], 4000);
        spec.qs = vec![1.0];
        spec.threads = 1;
        let r = gh_check(&spec).unwrap();
        let s = &r.sizes[0];
        let (n, v) = (64.0, 64.0);
        let var_f2 = 2.0 - 2.0 / v;
        let oracle = (2.0 * n * var_f2 / std::f64::consts::PI).sqrt() / n;
        let l = &s.limit[0];
        assert!((l.value - oracle).abs() < 4.0 * l.se + 0.01 * oracle, "{l:?} vs {oracle}");
        assert!(s.max_stat <= s.sum_stat);
        assert!(r.max_within_bound);
    }

    #[test]
    fn non_martingale_rows_are_rejected() {
        let k = Kernel::new(2, [(IndexVec::from([0, 0]), 1.0), (IndexVec::from([0, 1]), 1.0)]).unwrap();
        let m = FieldModel::linear(InnovationSpec::Rademacher, k);
        let spec = GhSpec::new(m, vec![vec![8, 8]], 10);
        assert!(matches!(gh_check(&spec), Err(Error::Contract(_))));
    }
}
