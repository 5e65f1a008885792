use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::output::{csv_num, CsvTable};
use super::sampler::{frozen_past, replicate_base, resolve_threads, run_parallel};
use crate::error::{Error, Result};
use crate::models::{
    level_series, level_value, FieldKind, FieldModel, MomentFunctional, PastSource, ScaleField,
    ULevelSampler,
};
use crate::rng::{derive_seed, CellStream, SeedRole};

/// Partial sums of the Orlicz moment series of a level-driven model at
/// `N^{1/4}`, `N^{1/2}` and `N`. For a series growing like `ln ln N` the
/// two increments are equal; a convergent series has a vanishing late
/// increment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEvidence {
    pub n_max: u64,
    pub functional: String,
    pub checkpoints: Vec<u64>,
    pub partial_sums: Vec<f64>,
    pub early_increment: f64,
    pub late_increment: f64,
    pub ratio: f64,
    pub diverges: bool,
}

/// Late-to-early increment ratio above which the series is reported as
/// divergent.
pub const DIVERGENCE_RATIO: f64 = 0.9;

/// Evidence on `E phi_d(|X|)` for models driven by the level field, where
/// `phi_d(x) = x^2 ln^{d-1}(1 + x)`. For `X = xi U^{1/2}` with `|xi| = 1`
/// this is `E phi_d(U^{1/2})`; for `X = U` it is `E phi_d(U)`.
pub fn moment_evidence(model: &FieldModel) -> Result<Option<MomentEvidence>> {
    let phi = MomentFunctional::Phi { d: model.dim as u32 };
    let (n_max, root) = match &model.field {
        FieldKind::ProductOmd {
            scale: ScaleField::Levels { n_max, .. },
        } => (*n_max, true),
        FieldKind::UField { n_max, .. } => (*n_max, false),
        _ => return Ok(None),
    };
    if n_max < 16 {
        return Ok(None);
    }
    let c1 = (n_max as f64).powf(0.25).floor() as u64;
    let c2 = (n_max as f64).sqrt().floor() as u64;
    let checkpoints = vec![c1.max(2), c2.max(3), n_max];
    let partial_sums = level_series(n_max, &checkpoints, |x| {
        if root {
            phi.eval(x.sqrt())
        } else {
            phi.eval(x)
        }
    })?;
    let early = partial_sums[1] - partial_sums[0];
    let late = partial_sums[2] - partial_sums[1];
    let ratio = if early > 0.0 { late / early } else { 0.0 };
    Ok(Some(MomentEvidence {
        n_max,
        functional: if root {
            format!("{} of U^(1/2)", phi.label())
        } else {
            phi.label()
        },
        checkpoints,
        partial_sums,
        early_increment: early,
        late_increment: late,
        ratio,
        diverges: ratio >= DIVERGENCE_RATIO,
    }))
}

/// Exceedance probe on the level field `U` of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub model: FieldModel,
    /// Window sizes `N`; each window is `[ceil(ln N), N)^2`.
    pub windows: Vec<u64>,
    pub thresholds: Vec<f64>,
    pub frozen_pasts: Vec<u64>,
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub threads: usize,
    /// The control field takes the values `0` and `control_bound`.
    #[serde(default = "default_control_bound")]
    pub control_bound: f64,
    /// Draws for the single-cell check.
    #[serde(default = "default_cell_draws")]
    pub cell_draws: usize,
    /// Windows simulated by Monte Carlo; defaults to `windows`.
    #[serde(default)]
    pub mc_windows: Option<Vec<u64>>,
}

fn default_control_bound() -> f64 {
    4.0
}

fn default_cell_draws() -> usize {
    100_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub window: u64,
    pub frozen_past_id: u64,
    pub threshold: f64,
    /// Fraction of replicates with `max U_{ij} / (ij) >= B`.
    pub mc_prob: f64,
    pub mc_prob_se: f64,
    /// Mean number of exceedance cells per replicate.
    pub mc_count: f64,
    pub mc_count_se: f64,
    /// Exceedance cells summed over the control replicates.
    pub control_count: u64,
}

/// Analytic exceedance for one window and threshold: each cell exceeds
/// when a level of value at least `B i j` fires.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticRow {
    pub window: u64,
    pub threshold: f64,
    pub expected_count: f64,
    pub prob_any: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellCheck {
    pub cell: (u64, u64),
    pub threshold: f64,
    pub mc: f64,
    pub se: f64,
    pub analytic: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub n_max: u64,
    pub channel: usize,
    pub rows: Vec<ProbeRow>,
    pub analytic: Vec<AnalyticRow>,
    /// `(threshold, N_1, N_2, expected count ratio N_2 / N_1)` for
    /// consecutive windows.
    pub count_ratios: Vec<(f64, u64, u64, f64)>,
    pub cell_checks: Vec<CellCheck>,
    /// Analytic exceedance probabilities never decrease along the ladder.
    pub non_decreasing: bool,
    pub control_zero: bool,
}

pub const PROBE_CSV_HEADER: [&str; 8] = [
    "source",
    "window",
    "threshold",
    "prob",
    "prob_se",
    "count",
    "count_se",
    "control_count",
];

impl ProbeReport {
    /// Simulated rows carry their frozen past id; analytic rows carry
    /// `analytic` and zero standard errors.
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&PROBE_CSV_HEADER);
        for a in &self.analytic {
            t.push(vec![
                "analytic".into(),
                a.window.to_string(),
                csv_num(a.threshold),
                csv_num(a.prob_any),
                "0".into(),
                csv_num(a.expected_count),
                "0".into(),
                String::new(),
            ]);
        }
        for r in &self.rows {
            t.push(vec![
                r.frozen_past_id.to_string(),
                r.window.to_string(),
                csv_num(r.threshold),
                csv_num(r.mc_prob),
                csv_num(r.mc_prob_se),
                csv_num(r.mc_count),
                csv_num(r.mc_count_se),
                r.control_count.to_string(),
            ]);
        }
        t.render()
    }
}

fn level_source(model: &FieldModel) -> Result<(u64, usize)> {
    match &model.field {
        FieldKind::ProductOmd {
            scale: ScaleField::Levels { n_max, channel },
        } => Ok((*n_max, *channel)),
        FieldKind::UField { n_max, channel } => Ok((*n_max, *channel)),
        _ => Err(Error::Parameter(
            "the probe needs a model driven by the level field".into(),
        )),
    }
}

fn window_start(n: u64) -> u64 {
    ((n as f64).ln().ceil() as u64).max(1)
}

/// `sum p_ij` and `1 - prod (1 - p_ij)` over the window, with `p_ij` the
/// probability that a level of value at least `B i j` fires.
pub fn analytic_exceedance(sampler: &ULevelSampler, window: u64, threshold: f64) -> (f64, f64) {
    let lo = window_start(window);
    let mut count = 0.0;
    let mut log_none = 0.0;
    for i in lo..window {
        for j in i..window {
            let p = sampler.prob_level_at_least(threshold * (i * j) as f64);
            if p <= 0.0 {
                break;
            }
            let w = if i == j { 1.0 } else { 2.0 };
            count += w * p;
            log_none += w * (-p).ln_1p();
        }
    }
    (count, -f64::exp_m1(log_none))
}

fn checked_thresholds(t: &[f64]) -> Result<Vec<f64>> {
    if t.is_empty() || t.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::Parameter("thresholds must be positive".into()));
    }
    Ok(t.to_vec())
}

/// Exceedance probabilities of `max U_{ij} / (ij)` over growing windows,
/// by simulation under each frozen past and analytically, with a bounded
/// control field.
pub fn counterexample_probe(spec: &ProbeSpec) -> Result<ProbeReport> {
    spec.model.validate()?;
    let (n_max, channel) = level_source(&spec.model)?;
    let thresholds = checked_thresholds(&spec.thresholds)?;
    if spec.windows.is_empty() || spec.windows.iter().any(|&n| n < 3) {
        return Err(Error::Parameter("windows must be at least 3".into()));
    }
    if spec.windows.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("windows must increase".into()));
    }
    if spec.replicates < 2 || spec.frozen_pasts.is_empty() {
        return Err(Error::Parameter("need at least 2 replicates and one frozen past".into()));
    }
    let largest = *spec.windows.last().expect("non-empty");
    let needed = ((largest - 1) * (largest - 1)) as f64;
    if level_value(n_max) < needed {
        return Err(Error::Parameter(format!(
            "N_max = {n_max} gives a top level {} below the largest cell product {needed}",
            level_value(n_max)
        )));
    }
    let sampler: Arc<ULevelSampler> = ULevelSampler::shared(n_max)?;
    let threads = resolve_threads(Some(spec.threads));
    let bmin = thresholds.iter().cloned().fold(f64::INFINITY, f64::min);

    let mut analytic = Vec::new();
    for &w in &spec.windows {
        for &b in &thresholds {
            let (count, prob) = analytic_exceedance(&sampler, w, b);
            analytic.push(AnalyticRow {
                window: w,
                threshold: b,
                expected_count: count,
                prob_any: prob,
            });
        }
    }

    let mc_windows = spec.mc_windows.clone().unwrap_or_else(|| spec.windows.clone());
    if mc_windows.iter().any(|&n| n < 3 || n > largest) {
        return Err(Error::Parameter(format!(
            "simulated windows must lie in [3, {largest}]"
        )));
    }
    let mut rows = Vec::new();
    for &past_id in &spec.frozen_pasts {
        let past = frozen_past(2, spec.base_seed, past_id);
        let past_key = match past.source {
            PastSource::Seeded(k) => k,
            _ => unreachable!("seeded past"),
        };
        let base = replicate_base(spec.base_seed, Some(&past));
        for &w in &mc_windows {
            let lo = window_start(w);
            let counts = run_parallel(threads, spec.replicates, || (), |_, r| {
                let stream = CellStream::new(derive_seed(base, SeedRole::Replicate, r as u64));
                let past_stream = CellStream::new(past_key);
                let control = CellStream::new(derive_seed(
                    derive_seed(base, SeedRole::Probe, 0),
                    SeedRole::Replicate,
                    r as u64,
                ));
                let mut hits = vec![0u64; thresholds.len()];
                let mut control_hits = 0u64;
                for i in lo..w {
                    for j in lo..w {
                        let coords = [i as i64, j as i64];
                        let s = if past.contains(&coords) { &past_stream } else { &stream };
                        let mut draw = 0u64;
                        let u = sampler.sample(|| {
                            let x = s.uniform(channel, &coords, draw);
                            draw += 1;
                            x
                        });
                        let cell = (i * j) as f64;
                        if u >= bmin * cell {
                            for (h, &b) in hits.iter_mut().zip(&thresholds) {
                                if u >= b * cell {
                                    *h += 1;
                                }
                            }
                        }
                        let c = if control.sign(channel, &coords) > 0.0 {
                            spec.control_bound
                        } else {
                            0.0
                        };
                        if c >= bmin * cell {
                            control_hits += 1;
                        }
                    }
                }
                Ok((hits, control_hits))
            })?;
            for (bi, &b) in thresholds.iter().enumerate() {
                let xs: Vec<f64> = counts.iter().map(|c| c.0[bi] as f64).collect();
                let ind: Vec<f64> = xs.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
                let (pm, ps) = mean_se(&ind);
                let (cm, cs) = mean_se(&xs);
                rows.push(ProbeRow {
                    window: w,
                    frozen_past_id: past_id,
                    threshold: b,
                    mc_prob: pm,
                    mc_prob_se: ps,
                    mc_count: cm,
                    mc_count_se: cs,
                    control_count: counts.iter().map(|c| c.1).sum(),
                });
            }
        }
    }

    let mut count_ratios = Vec::new();
    let mut non_decreasing = true;
    for &b in &thresholds {
        let series: Vec<&AnalyticRow> = analytic.iter().filter(|a| a.threshold == b).collect();
        for pair in series.windows(2) {
            count_ratios.push((
                b,
                pair[0].window,
                pair[1].window,
                pair[1].expected_count / pair[0].expected_count,
            ));
            if pair[1].prob_any < pair[0].prob_any {
                non_decreasing = false;
            }
        }
    }

    let cell_checks = single_cell_checks(&sampler, spec, channel, &thresholds)?;
    let control_zero = rows.iter().all(|r| r.control_count == 0);
    Ok(ProbeReport {
        n_max,
        channel,
        rows,
        analytic,
        count_ratios,
        cell_checks,
        non_decreasing,
        control_zero,
    })
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Simulated `P(U >= B)` at cell `(1, 1)` against the analytic value; at
/// this cell every level exceeds `B = 1`, so both describe the same event.
fn single_cell_checks(
    sampler: &ULevelSampler,
    spec: &ProbeSpec,
    channel: usize,
    thresholds: &[f64],
) -> Result<Vec<CellCheck>> {
    let draws = spec.cell_draws.max(2);
    let key = derive_seed(spec.base_seed, SeedRole::Probe, 1);
    let values: Vec<f64> = (0..draws)
        .map(|r| {
            let s = CellStream::new(derive_seed(key, SeedRole::Replicate, r as u64));
            let mut draw = 0u64;
            sampler.sample(|| {
                let x = s.uniform(channel, &[1, 1], draw);
                draw += 1;
                x
            })
        })
        .collect();
    let mut out = Vec::new();
    for &b in thresholds.iter().filter(|&&b| b <= 1.0) {
        let ind: Vec<f64> = values.iter().map(|&u| if u >= b { 1.0 } else { 0.0 }).collect();
        let (m, se) = mean_se(&ind);
        let analytic = sampler.prob_level_at_least(b);
        out.push(CellCheck {
            cell: (1, 1),
            threshold: b,
            mc: m,
            se,
            analytic,
            z: if se > 0.0 { (m - analytic) / se } else { 0.0 },
        });
    }
    Ok(out)
}
