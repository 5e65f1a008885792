use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::counterexample::{moment_evidence, MomentEvidence};
use super::gof::{degenerate_report, gof_stats, EmpiricalDistribution, GofReport, Verdict};
use super::output::{csv_num, CsvTable};
use super::sampler::{frozen_past, replicate_base, resolve_threads, run_parallel, FieldSampler};
use super::variance::{annealed_variance, estimate_sigma2, VarianceEstimate};
use crate::conditional::{verify_ortho, VerifyOptions};
use crate::error::{Error, Result};
use crate::models::FieldModel;

/// Growth regime of the summation boxes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Cubes, `n = v`.
    Diagonal,
    /// Rectangles with `min(n, v)` growing.
    Rectangular,
}

/// A Monte Carlo experiment on one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model: FieldModel,
    pub regime: Regime,
    pub sizes: Vec<Vec<usize>>,
    pub replicates: usize,
    #[serde(default)]
    pub frozen_pasts: Vec<u64>,
    #[serde(default)]
    pub base_seed: u64,
    /// Worker threads; 0 picks the default.
    #[serde(default)]
    pub threads: usize,
    /// Run a quenched experiment without an orthomartingale certificate.
    #[serde(default)]
    pub omd_override: bool,
    #[serde(default)]
    pub ks_threshold: Option<f64>,
    #[serde(default)]
    pub keep_samples: bool,
}

/// Smallest replicate count for which a goodness-of-fit verdict is issued.
pub const MIN_GOF_REPLICATES: usize = 100;

impl ExperimentSpec {
    pub fn new(model: FieldModel, regime: Regime, sizes: Vec<Vec<usize>>, replicates: usize) -> Self {
        ExperimentSpec {
            model,
            regime,
            sizes,
            replicates,
            frozen_pasts: vec![0],
            base_seed: 0,
            threads: 0,
            omd_override: false,
            ks_threshold: None,
            keep_samples: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.replicates < MIN_GOF_REPLICATES {
            return Err(Error::Parameter(format!(
                "{} replicates; at least {MIN_GOF_REPLICATES} are needed for a verdict",
                self.replicates
            )));
        }
        if self.sizes.is_empty() {
            return Err(Error::Parameter("no sizes given".into()));
        }
        let mut last = 0usize;
        for s in &self.sizes {
            if s.len() != self.model.dim {
                return Err(Error::Structural(format!(
                    "size {s:?} does not have dimension {}",
                    self.model.dim
                )));
            }
            if s.iter().any(|&n| n == 0) {
                return Err(Error::Parameter(format!("size {s:?} has a zero side")));
            }
            if self.regime == Regime::Diagonal && s.iter().any(|&n| n != s[0]) {
                return Err(Error::Parameter(format!("size {s:?} is not a cube")));
            }
            let vol: usize = s.iter().product();
            if vol < last {
                return Err(Error::Parameter(format!(
                    "size {s:?} is smaller than its predecessor"
                )));
            }
            last = vol;
        }
        if let Some(t) = self.ks_threshold {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Parameter(format!("KS threshold {t} outside (0, 1]")));
            }
        }
        Ok(())
    }

    fn bounding_box(&self) -> Vec<usize> {
        let mut b = vec![0; self.model.dim];
        for s in &self.sizes {
            for (a, &n) in b.iter_mut().zip(s) {
                *a = (*a).max(n);
            }
        }
        b
    }
}

/// One goodness-of-fit row: a frozen past (or the annealed law) and a size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltRow {
    pub frozen_past_id: Option<u64>,
    pub size: Vec<usize>,
    pub replicate_count: usize,
    pub sigma2: f64,
    pub gof: GofReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltResult {
    pub quenched: bool,
    pub regime: Regime,
    pub sigma2: VarianceEstimate,
    pub rows: Vec<CltRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moment_evidence: Option<MomentEvidence>,
    pub verdict: Verdict,
    /// Wall-clock time; left out of serialized results so reruns compare equal.
    #[serde(skip)]
    pub runtime_secs: f64,
}

/// Column order of the CLT table.
pub const CLT_CSV_HEADER: [&str; 8] = [
    "frozen_past_id",
    "n",
    "v",
    "replicate_count",
    "sigma2",
    "ks",
    "dkw",
    "verdict",
];

impl CltResult {
    /// Rows as CSV. `n` and `v` are the first two sides (`v = 1` when
    /// `d = 1`); annealed rows carry the id `annealed`.
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&CLT_CSV_HEADER);
        for r in &self.rows {
            t.push(vec![
                r.frozen_past_id.map_or_else(|| "annealed".to_string(), |p| p.to_string()),
                r.size[0].to_string(),
                r.size.get(1).copied().unwrap_or(1).to_string(),
                r.replicate_count.to_string(),
                csv_num(r.sigma2),
                csv_num(r.gof.ks),
                csv_num(r.gof.dkw),
                r.gof.verdict.as_str().to_string(),
            ]);
        }
        t.render()
    }

    /// Samples of one row as a one-column CSV.
    pub fn samples_csv(row: &CltRow) -> Option<String> {
        row.samples.as_ref().map(|s| {
            let mut out = String::from("value\n");
            for x in s {
                out.push_str(&csv_num(*x));
                out.push('\n');
            }
            out
        })
    }
}

pub(crate) fn omd_certified(model: &FieldModel) -> bool {
    if model.is_structural_omd() {
        return true;
    }
    verify_ortho(model, None, &VerifyOptions::default())
        .map(|r| r.pass)
        .unwrap_or(false)
}

/// Quenched CLT: for each frozen past, the law of `S_n / sqrt(|n|)` with
/// the quadrant `{w <= 0}` held fixed, against `N(0, sigma^2)`.
pub fn run_quenched_clt(spec: &ExperimentSpec) -> Result<CltResult> {
    spec.validate()?;
    if spec.frozen_pasts.is_empty() {
        return Err(Error::Parameter("a quenched run needs at least one frozen past".into()));
    }
    if !spec.omd_override && !omd_certified(&spec.model) {
        return Err(Error::Contract(
            "the model is not certified as an orthomartingale difference field; \
             set omd_override to run anyway"
                .into(),
        ));
    }
    let sigma2 = estimate_sigma2(&spec.model)?;
    let pasts: Vec<Option<u64>> = spec.frozen_pasts.iter().map(|&p| Some(p)).collect();
    run_clt(spec, &pasts, sigma2, true)
}

/// Annealed CLT against `N(0, c^2)` with the long-run variance `c^2`.
pub fn run_annealed_clt(spec: &ExperimentSpec) -> Result<CltResult> {
    spec.validate()?;
    let target = annealed_variance(&spec.model)?;
    run_clt(spec, &[None], target, false)
}

fn run_clt(
    spec: &ExperimentSpec,
    pasts: &[Option<u64>],
    sigma2: VarianceEstimate,
    quenched: bool,
) -> Result<CltResult> {
    let start = Instant::now();
    let d = spec.model.dim;
    let sampler = FieldSampler::origin(&spec.model, &spec.bounding_box())?;
    let threads = resolve_threads(Some(spec.threads));
    let scales: Vec<f64> = spec
        .sizes
        .iter()
        .map(|s| (s.iter().map(|&n| n as f64).product::<f64>()).sqrt())
        .collect();
    let mut rows = Vec::new();
    for past_id in pasts {
        let frozen = past_id.map(|p| frozen_past(d, spec.base_seed, p));
        let base = replicate_base(spec.base_seed, frozen.as_ref());
        let per_rep = run_parallel(threads, spec.replicates, || sampler.workspace(), |ws, r| {
            let table = sampler.prefix(ws, base, r as u64, frozen.as_ref())?;
            spec.sizes
                .iter()
                .zip(&scales)
                .map(|(s, sc)| Ok(table.origin_sum(s)? / sc))
                .collect::<Result<Vec<f64>>>()
        })?;
        for (i, size) in spec.sizes.iter().enumerate() {
            let sample: Vec<f64> = per_rep.iter().map(|v| v[i]).collect();
            let emp = EmpiricalDistribution::new(sample.clone())?;
            let gof = if sigma2.value > 0.0 {
                gof_stats(&emp, sigma2.value, spec.ks_threshold)?
            } else {
                degenerate_report(&emp)
            };
            rows.push(CltRow {
                frozen_past_id: *past_id,
                size: size.clone(),
                replicate_count: spec.replicates,
                sigma2: sigma2.value,
                gof,
                samples: spec.keep_samples.then_some(sample),
            });
        }
    }
    let moment_evidence = moment_evidence(&spec.model)?;
    let moment_ok = match (&moment_evidence, spec.regime) {
        (Some(e), Regime::Rectangular) => !e.diverges,
        _ => true,
    };
    let verdict = Verdict::from_bool(moment_ok && rows.iter().all(|r| r.gof.verdict.passed()));
    Ok(CltResult {
        quenched,
        regime: spec.regime,
        sigma2,
        rows,
        moment_evidence,
        verdict,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{InnovationSpec, Kernel};
    use crate::lattice::IndexVec;

    #[test]
    fn spec_validation() {
        let m = FieldModel::iid(2, InnovationSpec::Rademacher);
        let mut s = ExperimentSpec::new(m, Regime::Diagonal, vec![vec![8, 8]], 50);
        assert!(s.validate().is_err());
        s.replicates = 200;
        assert!(s.validate().is_ok());
        s.sizes = vec![vec![8, 4]];
        assert!(s.validate().is_err());
        s.regime = Regime::Rectangular;
        s.sizes = vec![vec![8, 8], vec![4, 4]];
        assert!(s.validate().is_err());
    }

    #[test]
    fn quenched_requires_certificate() {
        let k = Kernel::new(2, [(IndexVec::from([0, 0]), 1.0), (IndexVec::from([1, 0]), 1.0)]).unwrap();
        let m = FieldModel::linear(InnovationSpec::Rademacher, k);
        let s = ExperimentSpec::new(m, Regime::Diagonal, vec![vec![4, 4]], 100);
        assert!(matches!(run_quenched_clt(&s), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_field_short_circuits() {
        let m = FieldModel::new(2, InnovationSpec::Rademacher, crate::models::FieldKind::Zero).unwrap();
        let s = ExperimentSpec::new(m, Regime::Diagonal, vec![vec![4, 4]], 100);
        let r = run_quenched_clt(&s).unwrap();
        assert_eq!(r.sigma2.value, 0.0);
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(r.rows[0].gof.note.is_some());
    }

    #[test]
    fn small_iid_run_is_deterministic() {
        let m = FieldModel::iid(2, InnovationSpec::Rademacher);
        let mut s = ExperimentSpec::new(m, Regime::Diagonal, vec![vec![8, 8], vec![16, 16]], 400);
        s.frozen_pasts = vec![0, 1];
        s.threads = 1;
        let a = run_quenched_clt(&s).unwrap();
        s.threads = 3;
        let b = run_quenched_clt(&s).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rows.len(), 4);
        assert!(a.to_csv().starts_with("frozen_past_id,n,v,replicate_count,sigma2,ks,dkw,verdict\n"));
    }
}
