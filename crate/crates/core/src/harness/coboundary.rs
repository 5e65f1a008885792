use serde::{Deserialize, Serialize};

use super::output::{csv_num, CsvTable};
use super::sampler::{resolve_threads, run_parallel, FieldSampler};
use crate::error::{Error, Result};
use crate::lattice::Rect;
use crate::models::{CoboundarySpec, FieldKind, FieldModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoboundaryRunSpec {
    /// A two-dimensional model whose field is a coboundary composite.
    pub model: FieldModel,
    /// Sizes `(n, v)`, smallest first.
    pub sizes: Vec<Vec<usize>>,
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub threads: usize,
}

/// Maxima over `1 <= k <= n, 1 <= l <= v` for one replicate, divided by
/// `sqrt(n v)`. `r1`, `r2`, `r3` are the sums of the three coboundary
/// terms; `residual` is `S - M`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualMaxima {
    pub residual: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    /// `4 max |Y| / sqrt(n v)` over the cells read by `r3`.
    pub r3_bound: f64,
    /// `max |S - M - (r1 + r2 + r3)|` before normalization.
    pub telescoping_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub median: f64,
    pub q90: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoboundarySizeReport {
    pub n: usize,
    pub v: usize,
    pub residual: Quantiles,
    pub r1: Quantiles,
    pub r2: Quantiles,
    pub r3: Quantiles,
    /// Replicates with `max |r3| > 4 max |Y| / sqrt(n v)`.
    pub bound_violations: usize,
    pub max_telescoping_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoboundaryReport {
    pub sizes: Vec<CoboundarySizeReport>,
    /// Median residual at one size divided by the median at the next.
    pub decay_ratios: Vec<f64>,
}

pub const COBOUNDARY_CSV_HEADER: [&str; 9] = [
    "n",
    "v",
    "residual_median",
    "residual_q90",
    "residual_max",
    "r1_median",
    "r2_median",
    "r3_median",
    "bound_violations",
];

impl CoboundaryReport {
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&COBOUNDARY_CSV_HEADER);
        for s in &self.sizes {
            t.push(vec![
                s.n.to_string(),
                s.v.to_string(),
                csv_num(s.residual.median),
                csv_num(s.residual.q90),
                csv_num(s.residual.max),
                csv_num(s.r1.median),
                csv_num(s.r2.median),
                csv_num(s.r3.median),
                s.bound_violations.to_string(),
            ]);
        }
        t.render()
    }
}

fn quantiles(mut xs: Vec<f64>) -> Quantiles {
    xs.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let h = p * (xs.len() - 1) as f64;
        let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
        xs[lo] + (h - lo as f64) * (xs[hi] - xs[lo])
    };
    Quantiles {
        median: at(0.5),
        q90: at(0.9),
        max: *xs.last().expect("non-empty"),
    }
}

struct PartSampler {
    sampler: Option<FieldSampler>,
}

impl PartSampler {
    fn new(model: &FieldModel, kind: &FieldKind, window: &Rect) -> Result<Self> {
        if *kind == FieldKind::Zero {
            return Ok(PartSampler { sampler: None });
        }
        let part = FieldModel {
            dim: model.dim,
            innovation: model.innovation.clone(),
            field: kind.clone(),
        };
        Ok(PartSampler {
            sampler: Some(FieldSampler::new(&part, window.clone())?),
        })
    }

    fn values(&self, base: u64, r: u64, len: usize) -> Result<Vec<f64>> {
        match &self.sampler {
            Some(s) => {
                let mut ws = s.workspace();
                Ok(s.sample(&mut ws, base, r, None)?.to_vec())
            }
            None => Ok(vec![0.0; len]),
        }
    }
}

fn coboundary_parts(model: &FieldModel) -> Result<&CoboundarySpec> {
    match &model.field {
        FieldKind::Coboundary(c) if model.dim == 2 => Ok(c),
        _ => Err(Error::Structural(
            "coboundary residuals need a two-dimensional coboundary model".into(),
        )),
    }
}

/// One replicate at size `(n, v)`. The partial sums `S` come from the
/// composite field; `M` and the three terms come from the parts.
fn replicate_maxima(
    composite: &FieldSampler,
    parts: &[PartSampler; 4],
    n: usize,
    v: usize,
    base: u64,
    r: u64,
) -> Result<ResidualMaxima> {
    let w = v + 1;
    let len = (n + 1) * w;
    let mut ws = composite.workspace();
    let x = composite.sample(&mut ws, base, r, None)?;
    let m = parts[0].values(base, r, len)?;
    let mp = parts[1].values(base, r, len)?;
    let ms = parts[2].values(base, r, len)?;
    let y = parts[3].values(base, r, len)?;
    let at = |a: &[f64], i: usize, j: usize| a[i * w + j];

    // Running sums over [0, k) x [0, l) of X - m.
    let mut diff = vec![0.0; len];
    // Running sums over [0, l) of m'_{0, j} - m'_{k, j}, and over [0, k) of
    // m''_{i, 0} - m''_{i, l}.
    let mut r1 = vec![0.0; len];
    let mut r2 = vec![0.0; len];
    for k in 1..=n {
        for l in 1..=v {
            let d = x[(k - 1) * v + (l - 1)] - at(&m, k - 1, l - 1);
            diff[k * w + l] = d + diff[(k - 1) * w + l] + diff[k * w + l - 1] - diff[(k - 1) * w + l - 1];
        }
    }
    for k in 0..=n {
        for l in 1..=v {
            r1[k * w + l] = r1[k * w + l - 1] + at(&mp, 0, l - 1) - at(&mp, k, l - 1);
        }
    }
    for l in 0..=v {
        for k in 1..=n {
            r2[k * w + l] = r2[(k - 1) * w + l] + at(&ms, k - 1, 0) - at(&ms, k - 1, l);
        }
    }
    let scale = ((n * v) as f64).sqrt();
    let y_max = y.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut out = ResidualMaxima {
        residual: 0.0,
        r1: 0.0,
        r2: 0.0,
        r3: 0.0,
        r3_bound: 4.0 * y_max / scale,
        telescoping_gap: 0.0,
    };
    for k in 1..=n {
        for l in 1..=v {
            let s = diff[k * w + l];
            let a = r1[k * w + l];
            let b = r2[k * w + l];
            let c = at(&y, 0, 0) - at(&y, k, 0) - at(&y, 0, l) + at(&y, k, l);
            out.residual = out.residual.max(s.abs());
            out.r1 = out.r1.max(a.abs());
            out.r2 = out.r2.max(b.abs());
            out.r3 = out.r3.max(c.abs());
            out.telescoping_gap = out.telescoping_gap.max((s - (a + b + c)).abs());
        }
    }
    out.residual /= scale;
    out.r1 /= scale;
    out.r2 /= scale;
    out.r3 /= scale;
    Ok(out)
}

/// Distribution of `max |S_{k,l} - M_{k,l}| / sqrt(n v)` along a size
/// ladder, with the three coboundary terms reported separately.
pub fn coboundary_residuals(spec: &CoboundaryRunSpec) -> Result<CoboundaryReport> {
    spec.model.validate()?;
    let c = coboundary_parts(&spec.model)?;
    if spec.replicates == 0 {
        return Err(Error::Parameter("at least 1 replicate is needed".into()));
    }
    if spec.sizes.is_empty() || spec.sizes.iter().any(|s| s.len() != 2 || s.contains(&0)) {
        return Err(Error::Parameter("sizes must be positive pairs (n, v)".into()));
    }
    let threads = resolve_threads(Some(spec.threads));
    let mut sizes = Vec::new();
    for size in &spec.sizes {
        let (n, v) = (size[0], size[1]);
        let composite = FieldSampler::origin(&spec.model, &[n, v])?;
        let window = Rect::origin_box(&[n + 1, v + 1]);
        let parts = [
            PartSampler::new(&spec.model, &c.m, &window)?,
            PartSampler::new(&spec.model, &c.m_prime, &window)?,
            PartSampler::new(&spec.model, &c.m_second, &window)?,
            PartSampler::new(&spec.model, &c.y, &window)?,
        ];
        let reps = run_parallel(threads, spec.replicates, || (), |_, r| {
            replicate_maxima(&composite, &parts, n, v, spec.base_seed, r as u64)
        })?;
        sizes.push(CoboundarySizeReport {
            n,
            v,
            residual: quantiles(reps.iter().map(|r| r.residual).collect()),
            r1: quantiles(reps.iter().map(|r| r.r1).collect()),
            r2: quantiles(reps.iter().map(|r| r.r2).collect()),
            r3: quantiles(reps.iter().map(|r| r.r3).collect()),
            bound_violations: reps.iter().filter(|r| r.r3 > r.r3_bound).count(),
            max_telescoping_gap: reps.iter().map(|r| r.telescoping_gap).fold(0.0, f64::max),
        });
    }
    let decay_ratios = sizes
        .windows(2)
        .map(|w| w[0].residual.median / w[1].residual.median)
        .collect();
    Ok(CoboundaryReport {
        sizes,
        decay_ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::IndexVec;
    use crate::models::{InnovationSpec, Kernel};

    fn model(m: FieldKind, mp: FieldKind, ms: FieldKind, y: FieldKind) -> FieldModel {
        FieldModel::new(
            2,
            InnovationSpec::Rademacher,
            FieldKind::Coboundary(Box::new(CoboundarySpec {
                m,
                m_prime: mp,
                m_second: ms,
                y,
            })),
        )
        .unwrap()
    }

    fn lagged(o: [i64; 2], a: f64) -> FieldKind {
        FieldKind::Linear {
            kernel: Kernel::new(2, [(IndexVec::from(o), a)]).unwrap(),
        }
    }

    #[test]
    fn martingale_part_only_has_no_residual() {
        let m = model(FieldKind::Iid, FieldKind::Zero, FieldKind::Zero, FieldKind::Zero);
        let spec = CoboundaryRunSpec {
            model: m,
            sizes: vec![vec![8, 8]],
            replicates: 20,
            base_seed: 1,
            threads: 1,
        };
        let r = coboundary_residuals(&spec).unwrap();
        assert_eq!(r.sizes[0].residual.max, 0.0);
    }

    #[test]
    fn bounded_y_obeys_the_four_point_bound() {
        let m = model(FieldKind::Zero, FieldKind::Zero, FieldKind::Zero, lagged([1, 0], 2.0));
        let spec = CoboundaryRunSpec {
            model: m,
            sizes: vec![vec![8, 8], vec![16, 16]],
            replicates: 200,
            base_seed: 2,
            threads: 1,
        };
        let r = coboundary_residuals(&spec).unwrap();
        for s in &r.sizes {
            assert_eq!(s.bound_violations, 0);
            assert!(s.residual.max <= 8.0 / (s.n as f64));
        }
    }

    #[test]
    fn telescoped_terms_match_brute_force_sums() {
        let m = model(
            FieldKind::Iid,
            lagged([0, 1], 0.5),
            lagged([1, 1], -0.75),
            lagged([2, 0], 1.5),
        );
        let spec = CoboundaryRunSpec {
            model: m,
            sizes: vec![vec![8, 8]],
            replicates: 50,
            base_seed: 3,
            threads: 1,
        };
        let r = coboundary_residuals(&spec).unwrap();
        assert!(r.sizes[0].max_telescoping_gap < 1e-12);
    }
}
