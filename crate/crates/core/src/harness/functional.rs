use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use super::clt::{omd_certified, MIN_GOF_REPLICATES};
use super::gof::{gof_stats, EmpiricalDistribution, GofReport, Verdict};
use super::output::{csv_num, CsvTable};
use super::sampler::{frozen_past, replicate_base, resolve_threads, run_parallel, FieldSampler};
use super::variance::{annealed_variance, estimate_sigma2, VarianceEstimate};
use crate::error::{Error, Result};
use crate::lattice::{parse_rational, scaled_path, scaled_rect, Rect};
use crate::models::FieldModel;

/// Linear combination `sum a_k Delta(B_k)` over the blocks of a product
/// partition of the unit cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    /// Partition points per axis, from `0` to `1`.
    pub edges: Vec<Vec<String>>,
    /// One coefficient per block, last axis fastest.
    pub coeffs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalSpec {
    pub model: FieldModel,
    pub size: Vec<usize>,
    pub replicates: usize,
    /// Frozen pasts; an empty list runs under the stationary law.
    #[serde(default)]
    pub frozen_pasts: Vec<u64>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub threads: usize,
    /// Points of `[0, 1]^d`; defaults to `{1/4, 1/2, 3/4, 1}^d`.
    #[serde(default)]
    pub grid: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub blocks: Option<BlockSpec>,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

fn default_rel_tol() -> f64 {
    0.05
}

impl FunctionalSpec {
    pub fn new(model: FieldModel, size: Vec<usize>, replicates: usize) -> Self {
        FunctionalSpec {
            model,
            size,
            replicates,
            frozen_pasts: Vec::new(),
            base_seed: 0,
            threads: 0,
            grid: None,
            blocks: None,
            rel_tol: default_rel_tol(),
        }
    }
}

/// `{1/4, 1/2, 3/4, 1}^d`.
pub fn quarter_grid(dim: usize) -> Vec<Vec<Rational64>> {
    let q: Vec<Rational64> = (1..=4).map(|k| Rational64::new(k, 4)).collect();
    let mut out: Vec<Vec<Rational64>> = vec![Vec::new()];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|p| {
                q.iter().map(move |&t| {
                    let mut p = p.clone();
                    p.push(t);
                    p
                })
            })
            .collect();
    }
    out
}

fn parse_point(p: &[String]) -> Result<Vec<Rational64>> {
    p.iter().map(|s| parse_rational(s)).collect()
}

fn point_label(p: &[Rational64]) -> String {
    p.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

fn product_min(p: &[Rational64], q: &[Rational64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| {
            let m = (*a).min(*b);
            *m.numer() as f64 / *m.denom() as f64
        })
        .product()
}

fn to_f64(t: Rational64) -> f64 {
    *t.numer() as f64 / *t.denom() as f64
}

/// Empirical against sheet covariance at one pair of grid points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovEntry {
    pub p: String,
    pub q: String,
    pub empirical: f64,
    pub se: f64,
    pub target: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FddReport {
    /// `sigma^2 sum a_k^2 vol(B_k)`.
    pub gamma: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub rel_error: f64,
    pub gof: GofReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalRun {
    pub frozen_past_id: Option<u64>,
    pub covariances: Vec<CovEntry>,
    pub max_rel_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fdd: Option<FddReport>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub size: Vec<usize>,
    pub replicates: usize,
    pub sigma2: VarianceEstimate,
    pub rel_tol: f64,
    pub runs: Vec<FunctionalRun>,
    pub verdict: Verdict,
}

pub const COVARIANCE_CSV_HEADER: [&str; 8] = [
    "frozen_past_id",
    "p",
    "q",
    "empirical",
    "se",
    "target",
    "rel_error",
    "verdict",
];

impl FunctionalReport {
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&COVARIANCE_CSV_HEADER);
        for run in &self.runs {
            let id = run
                .frozen_past_id
                .map_or_else(|| "annealed".to_string(), |p| p.to_string());
            for c in &run.covariances {
                t.push(vec![
                    id.clone(),
                    c.p.clone(),
                    c.q.clone(),
                    csv_num(c.empirical),
                    csv_num(c.se),
                    csv_num(c.target),
                    csv_num(c.rel_error),
                    Verdict::from_bool(c.rel_error <= self.rel_tol).as_str().into(),
                ]);
            }
        }
        t.render()
    }
}

struct Blocks {
    rects: Vec<Rect>,
    coeffs: Vec<f64>,
    volumes: Vec<f64>,
}

fn parse_blocks(spec: &BlockSpec, size: &[usize]) -> Result<Blocks> {
    let d = size.len();
    if spec.edges.len() != d {
        return Err(Error::Structural(format!(
            "{} edge lists for dimension {d}",
            spec.edges.len()
        )));
    }
    let edges: Vec<Vec<Rational64>> = spec.edges.iter().map(|e| parse_point(e)).collect::<Result<_>>()?;
    for e in &edges {
        if e.len() < 2 || e.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("edges must increase with at least two points".into()));
        }
    }
    let count: usize = edges.iter().map(|e| e.len() - 1).product();
    if spec.coeffs.len() != count {
        return Err(Error::Structural(format!(
            "{} coefficients for {count} blocks",
            spec.coeffs.len()
        )));
    }
    let mut rects = Vec::with_capacity(count);
    let mut volumes = Vec::with_capacity(count);
    for b in 0..count {
        let mut rem = b;
        let mut lo = vec![Rational64::new(0, 1); d];
        let mut hi = lo.clone();
        for axis in (0..d).rev() {
            let k = edges[axis].len() - 1;
            let i = rem % k;
            rem /= k;
            lo[axis] = edges[axis][i];
            hi[axis] = edges[axis][i + 1];
        }
        volumes.push(lo.iter().zip(&hi).map(|(a, b)| to_f64(*b - *a)).product());
        rects.push(scaled_rect(size, &lo, &hi)?);
    }
    Ok(Blocks {
        rects,
        coeffs: spec.coeffs.clone(),
        volumes,
    })
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Covariances of `W_n` on a grid against the Brownian sheet, and the law
/// of a block combination against `N(0, Gamma)`.
pub fn run_functional_fdd(spec: &FunctionalSpec) -> Result<FunctionalReport> {
    let model = &spec.model;
    model.validate()?;
    let d = model.dim;
    if spec.size.len() != d || spec.size.iter().any(|&n| n == 0) {
        return Err(Error::Parameter(format!(
            "size {:?} must have {d} positive sides",
            spec.size
        )));
    }
    if spec.replicates < MIN_GOF_REPLICATES {
        return Err(Error::Parameter(format!(
            "{} replicates; at least {MIN_GOF_REPLICATES} are needed",
            spec.replicates
        )));
    }
    if !(spec.rel_tol > 0.0) {
        return Err(Error::Parameter("rel_tol must be positive".into()));
    }
    let grid = match &spec.grid {
        Some(g) => g.iter().map(|p| parse_point(p)).collect::<Result<Vec<_>>>()?,
        None => quarter_grid(d),
    };
    let blocks = spec
        .blocks
        .as_ref()
        .map(|b| parse_blocks(b, &spec.size))
        .transpose()?;
    let quenched = !spec.frozen_pasts.is_empty();
    let sigma2 = if quenched {
        if !omd_certified(model) {
            return Err(Error::Contract(
                "quenched functional runs need an orthomartingale difference field".into(),
            ));
        }
        estimate_sigma2(model)?
    } else {
        annealed_variance(model)?
    };
    let pasts: Vec<Option<u64>> = if quenched {
        spec.frozen_pasts.iter().map(|&p| Some(p)).collect()
    } else {
        vec![None]
    };
    let sampler = FieldSampler::origin(model, &spec.size)?;
    let threads = resolve_threads(Some(spec.threads));
    let scale = spec.size.iter().map(|&n| n as f64).product::<f64>().sqrt();
    let g = grid.len();

    let mut runs = Vec::new();
    for past_id in pasts {
        let frozen = past_id.map(|p| frozen_past(d, spec.base_seed, p));
        let base = replicate_base(spec.base_seed, frozen.as_ref());
        let reps = run_parallel(threads, spec.replicates, || sampler.workspace(), |ws, r| {
            let table = sampler.prefix(ws, base, r as u64, frozen.as_ref())?;
            let mut out = scaled_path(&table, &spec.size, &grid)?.values;
            if let Some(b) = &blocks {
                let mut z = 0.0;
                for (rect, a) in b.rects.iter().zip(&b.coeffs) {
                    if !rect.is_empty() {
                        z += a * table.rect_sum(rect)?;
                    }
                }
                out.push(z / scale);
            }
            Ok(out)
        })?;

        let cols: Vec<Vec<f64>> = (0..reps[0].len())
            .map(|c| reps.iter().map(|r| r[c]).collect())
            .collect();
        let means: Vec<f64> = cols.iter().map(|c| mean_se(c).0).collect();
        let mut covariances = Vec::new();
        let mut max_rel: f64 = 0.0;
        for i in 0..g {
            for j in i..g {
                let prods: Vec<f64> = cols[i]
                    .iter()
                    .zip(&cols[j])
                    .map(|(a, b)| (a - means[i]) * (b - means[j]))
                    .collect();
                let (m, se) = mean_se(&prods);
                let n = prods.len() as f64;
                let emp = m * n / (n - 1.0);
                let target = sigma2.value * product_min(&grid[i], &grid[j]);
                let rel = if target > 0.0 {
                    (emp - target).abs() / target
                } else {
                    emp.abs()
                };
                max_rel = max_rel.max(rel);
                covariances.push(CovEntry {
                    p: point_label(&grid[i]),
                    q: point_label(&grid[j]),
                    empirical: emp,
                    se,
                    target,
                    rel_error: rel,
                });
            }
        }
        let fdd = match &blocks {
            Some(b) => {
                let gamma = sigma2.value
                    * b.coeffs
                        .iter()
                        .zip(&b.volumes)
                        .map(|(a, v)| a * a * v)
                        .sum::<f64>();
                let emp = EmpiricalDistribution::new(cols[g].clone())?;
                let gof = gof_stats(&emp, gamma, None)?;
                Some(FddReport {
                    gamma,
                    variance: emp.variance,
                    variance_se: emp.variance_se(),
                    rel_error: (emp.variance - gamma).abs() / gamma,
                    gof,
                })
            }
            None => None,
        };
        let ok = max_rel <= spec.rel_tol && fdd.as_ref().map_or(true, |f| f.rel_error <= spec.rel_tol);
        runs.push(FunctionalRun {
            frozen_past_id: past_id,
            covariances,
            max_rel_error: max_rel,
            fdd,
            verdict: Verdict::from_bool(ok),
        });
    }
    let verdict = Verdict::from_bool(runs.iter().all(|r| r.verdict.passed()));
    Ok(FunctionalReport {
        size: spec.size.clone(),
        replicates: spec.replicates,
        sigma2,
        rel_tol: spec.rel_tol,
        runs,
        verdict,
    })
}

/// A rectangle `[lo, hi)` of the unit cube with rational corners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitRect {
    pub lo: Vec<String>,
    pub hi: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectPair {
    pub a: UnitRect,
    pub b: UnitRect,
    #[serde(default)]
    pub level: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TightnessSpec {
    pub model: FieldModel,
    pub size: Vec<usize>,
    pub replicates: usize,
    pub pairs: Vec<RectPair>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub threads: usize,
}

/// `A = [0, 2^-l)^d` and its neighbour shifted by `2^-l` along the first
/// axis, for `l = 0..levels`; at level 0 both are the whole cube.
pub fn dyadic_pairs(dim: usize, levels: u32) -> Vec<RectPair> {
    (0..levels)
        .map(|l| {
            let w = Rational64::new(1, 1 << l);
            let lo = vec!["0".to_string(); dim];
            let hi = vec![w.to_string(); dim];
            let (blo, bhi) = if l == 0 {
                (lo.clone(), hi.clone())
            } else {
                let mut blo = lo.clone();
                let mut bhi = hi.clone();
                blo[0] = w.to_string();
                bhi[0] = (w + w).to_string();
                (blo, bhi)
            };
            RectPair {
                a: UnitRect { lo, hi },
                b: UnitRect { lo: blo, hi: bhi },
                level: l,
            }
        })
        .collect()
}

/// Moment ratios for one pair. `mu` is the lattice measure `|A| / |n|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMoments {
    pub level: u32,
    pub a: String,
    pub b: String,
    pub mu_a: f64,
    pub mu_b: f64,
    /// `E Delta^4(A) / mu(A)^2`, zero when `mu(A) = 0`.
    pub fourth_ratio: f64,
    pub fourth_se: f64,
    /// `E Delta^2(A) Delta^2(B) / (mu(A) mu(B))`.
    pub cross_ratio: f64,
    pub cross_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightnessReport {
    /// `max |X|`.
    pub bound: f64,
    pub pairs: Vec<PairMoments>,
    pub max_fourth_ratio: f64,
    pub max_cross_ratio: f64,
    /// Largest ratio per level, in level order.
    pub level_max: Vec<(u32, f64)>,
    pub non_increasing: bool,
}

fn unit_rect(r: &UnitRect, size: &[usize]) -> Result<Rect> {
    if r.lo.len() != size.len() || r.hi.len() != size.len() {
        return Err(Error::Structural("rectangle dimension does not match the size".into()));
    }
    let lo = parse_point(&r.lo)?;
    let hi = parse_point(&r.hi)?;
    if lo.iter().zip(&hi).any(|(a, b)| a > b) {
        return Err(Error::Parameter("rectangle corners are reversed".into()));
    }
    scaled_rect(size, &lo, &hi)
}

/// Increment moments of `W_n` over pairs of rectangles, for a bounded field.
pub fn tightness_moment_probe(spec: &TightnessSpec) -> Result<TightnessReport> {
    let model = &spec.model;
    model.validate()?;
    let bound = model
        .bound()
        .ok_or_else(|| Error::Contract("the moment probe needs a bounded field".into()))?;
    let d = model.dim;
    if spec.size.len() != d || spec.size.iter().any(|&n| n == 0) {
        return Err(Error::Parameter(format!("size {:?} must have {d} positive sides", spec.size)));
    }
    if spec.replicates < 2 {
        return Err(Error::Parameter("at least 2 replicates are needed".into()));
    }
    let rects: Vec<(Rect, Rect)> = spec
        .pairs
        .iter()
        .map(|p| Ok((unit_rect(&p.a, &spec.size)?, unit_rect(&p.b, &spec.size)?)))
        .collect::<Result<_>>()?;
    let total = spec.size.iter().product::<usize>() as f64;
    let scale = total.sqrt();
    let sampler = FieldSampler::origin(model, &spec.size)?;
    let threads = resolve_threads(Some(spec.threads));
    let base = spec.base_seed;
    let reps = run_parallel(threads, spec.replicates, || sampler.workspace(), |ws, r| {
        let table = sampler.prefix(ws, base, r as u64, None)?;
        let delta = |rect: &Rect| -> Result<f64> {
            if rect.is_empty() {
                Ok(0.0)
            } else {
                Ok(table.rect_sum(rect)? / scale)
            }
        };
        rects
            .iter()
            .map(|(a, b)| Ok((delta(a)?, delta(b)?)))
            .collect::<Result<Vec<(f64, f64)>>>()
    })?;
    let mut pairs = Vec::new();
    for (k, (p, (a, b))) in spec.pairs.iter().zip(&rects).enumerate() {
        let mu_a = if a.is_empty() { 0.0 } else { a.volume() as f64 / total };
        let mu_b = if b.is_empty() { 0.0 } else { b.volume() as f64 / total };
        let fourth: Vec<f64> = reps.iter().map(|r| r[k].0.powi(4)).collect();
        let cross: Vec<f64> = reps.iter().map(|r| r[k].0.powi(2) * r[k].1.powi(2)).collect();
        let (f, fse) = mean_se(&fourth);
        let (c, cse) = mean_se(&cross);
        let (fourth_ratio, fourth_se) = if mu_a > 0.0 {
            (f / (mu_a * mu_a), fse / (mu_a * mu_a))
        } else {
            (0.0, 0.0)
        };
        let (cross_ratio, cross_se) = if mu_a > 0.0 && mu_b > 0.0 {
            (c / (mu_a * mu_b), cse / (mu_a * mu_b))
        } else {
            (0.0, 0.0)
        };
        pairs.push(PairMoments {
            level: p.level,
            a: format!("{}", a),
            b: format!("{}", b),
            mu_a,
            mu_b,
            fourth_ratio,
            fourth_se,
            cross_ratio,
            cross_se,
        });
    }
    let max_fourth_ratio = pairs.iter().map(|p| p.fourth_ratio).fold(0.0, f64::max);
    let max_cross_ratio = pairs.iter().map(|p| p.cross_ratio).fold(0.0, f64::max);
    let mut levels: Vec<u32> = pairs.iter().map(|p| p.level).collect();
    levels.sort_unstable();
    levels.dedup();
    let level_max: Vec<(u32, f64)> = levels
        .iter()
        .map(|&l| {
            let m = pairs
                .iter()
                .filter(|p| p.level == l)
                .map(|p| p.fourth_ratio.max(p.cross_ratio))
                .fold(0.0, f64::max);
            (l, m)
        })
        .collect();
    let non_increasing = level_max.windows(2).all(|w| {
        let slack = pairs
            .iter()
            .filter(|p| p.level == w[1].0)
            .map(|p| 2.0 * p.fourth_se.max(p.cross_se))
            .fold(0.0, f64::max);
        w[1].1 <= w[0].1 + slack
    });
    Ok(TightnessReport {
        bound,
        pairs,
        max_fourth_ratio,
        max_cross_ratio,
        level_max,
        non_increasing,
    })
}
