use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::functional::{check_capacity, FootprintFunctional, QuadrantSigma, Site, Tabulated};
use super::ops::{cond_exp_mc, cond_exp_with};
use crate::error::{Error, Result};
use crate::lattice::{IndexVec, Rect};
use crate::models::{FieldModel, MomentFunctional, Support};
use crate::rng::{derive_seed, SeedRole, SeqRng};

/// How the moments of a condition grid were obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridMethod {
    Enumeration,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub n: IndexVec,
    pub moment: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
}

/// `E f(|E(S_n | F_0)|)` over the box `n in [1, N]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionGrid {
    pub functional: MomentFunctional,
    pub n_max: i64,
    pub method: GridMethod,
    pub cells: Vec<GridCell>,
    /// Entry `m - 1` is the sup over `[1, m]^d`.
    pub running_sup: Vec<f64>,
    pub sup: f64,
    /// Smallest `m` whose running sup already equals the full sup.
    pub stabilized_at: i64,
    pub stabilized: bool,
}

impl ConditionGrid {
    pub fn moment_at(&self, n: &IndexVec) -> Option<f64> {
        self.cells.iter().find(|c| &c.n == n).map(|c| c.moment)
    }
}

#[derive(Clone, Debug)]
pub struct GridOptions {
    pub cutoff: u128,
    pub mc_reps: usize,
    pub seed: u64,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            cutoff: super::DEFAULT_CUTOFF,
            mc_reps: 100_000,
            seed: 0,
        }
    }
}

pub fn check_con1(model: &FieldModel, n_max: i64, f: &MomentFunctional) -> Result<ConditionGrid> {
    check_con1_with(model, n_max, f, &GridOptions::default())
}

struct CellTable {
    table: Tabulated<f64>,
    /// `(position in the union, stride in the table)` per table axis.
    lookup: Vec<(usize, usize)>,
}

impl CellTable {
    fn value(&self, idx: &[usize]) -> f64 {
        let mut lin = 0;
        for &(pos, stride) in &self.lookup {
            lin += idx[pos] * stride;
        }
        self.table.values[lin]
    }
}

/// Moments of `E(S_n | F_0)` with `S_n` summed over `[0, n)`. Cells with
/// `k_j` beyond the largest footprint offset on some axis contribute only
/// their mean, which must vanish. Falls back to Monte Carlo over the
/// quadrant innovations when their joint enumeration exceeds the cutoff.
pub fn check_con1_with(
    model: &FieldModel,
    n_max: i64,
    f: &MomentFunctional,
    opts: &GridOptions,
) -> Result<ConditionGrid> {
    if n_max < 1 {
        return Err(Error::Parameter(format!("N = {n_max} must be at least 1")));
    }
    f.validate()?;
    let d = model.dim;
    let compiled = model.compile()?;
    let ext: Vec<i64> = compiled.offset_extent().iter().map(|e| e.1.max(0)).collect();
    let origin = QuadrantSigma::new(IndexVec::zeros(d));
    let f0 = FootprintFunctional::from_model(model, &IndexVec::zeros(d))?;
    check_centered(&f0, opts)?;

    let shape: Vec<usize> = ext.iter().map(|&e| (e.min(n_max - 1) + 1) as usize).collect();
    let cbox = Rect::origin_box(&shape);
    let cells: Vec<IndexVec> = cbox.points().collect();
    let functionals: Vec<FootprintFunctional> = cells
        .iter()
        .map(|k| FootprintFunctional::from_model(model, k))
        .collect::<Result<_>>()?;

    let mut union: BTreeMap<Site, Support> = BTreeMap::new();
    for g in &functionals {
        for (s, sup) in g.sites().iter().zip(g.supports()) {
            if origin.measures(s) {
                union.entry(s.clone()).or_insert_with(|| sup.clone());
            }
        }
    }
    let sites: Vec<Site> = union.keys().cloned().collect();
    let supports: Vec<Support> = union.values().cloned().collect();
    let branches: u128 = supports.iter().map(|s| s.len() as u128).product();

    let tables: Result<Vec<CellTable>> = functionals
        .iter()
        .map(|g| {
            let t = Tabulated::<f64>::tabulate(g, opts.cutoff)?.conditional(&origin);
            let keep: Vec<usize> = (0..t.sites.len()).filter(|&i| origin.measures(&t.sites[i])).collect();
            let r = t.restrict(&keep);
            let mut stride = 1;
            let mut lookup = vec![(0, 0); r.sites.len()];
            for i in (0..r.sites.len()).rev() {
                let pos = sites.binary_search(&r.sites[i]).expect("site in union");
                lookup[i] = (pos, stride);
                stride *= r.supports[i].len();
            }
            Ok(CellTable { table: r, lookup })
        })
        .collect();

    let nm = shape.iter().product::<usize>();
    let accumulate = |vals: &[f64], out: &mut Vec<f64>| {
        out.clear();
        out.extend_from_slice(vals);
        let strides = cbox.strides();
        for (axis, &st) in strides.iter().enumerate() {
            for i in 0..out.len() {
                if (i / st) % shape[axis] > 0 {
                    out[i] += out[i - st];
                }
            }
        }
    };

    let mut cell_vals = vec![0.0; cells.len()];
    let mut prefix = Vec::with_capacity(nm);
    let (method, moments, ses) = match (tables, check_capacity(branches, opts.cutoff)) {
        (Ok(tables), Ok(())) => {
            let mut moments = vec![0.0; nm];
            let mut idx = vec![0usize; sites.len()];
            for _ in 0..branches {
                let mut w = 1.0;
                for (i, &a) in idx.iter().enumerate() {
                    w *= supports[i].probs[a];
                }
                for (c, t) in cell_vals.iter_mut().zip(&tables) {
                    *c = t.value(&idx);
                }
                accumulate(&cell_vals, &mut prefix);
                for (m, p) in moments.iter_mut().zip(&prefix) {
                    *m += w * f.eval(*p);
                }
                for a in (0..idx.len()).rev() {
                    idx[a] += 1;
                    if idx[a] < supports[a].len() {
                        break;
                    }
                    idx[a] = 0;
                }
            }
            (GridMethod::Enumeration, moments, None)
        }
        (Err(Error::Capacity { .. }), _) | (Ok(_), Err(Error::Capacity { .. })) => {
            let reps = opts.mc_reps.max(2);
            let cum: Vec<Vec<f64>> = supports
                .iter()
                .map(|s| {
                    s.probs
                        .iter()
                        .scan(0.0, |a, p| {
                            *a += p;
                            Some(*a)
                        })
                        .collect()
                })
                .collect();
            let mut rng = SeqRng::new(derive_seed(opts.seed, SeedRole::Estimate, 0));
            let mut mean = vec![0.0; nm];
            let mut m2 = vec![0.0; nm];
            let mut fixed: Vec<(Site, f64)> = sites.iter().map(|s| (s.clone(), 0.0)).collect();
            for r in 0..reps {
                for (i, fx) in fixed.iter_mut().enumerate() {
                    let u = rng.uniform();
                    let a = cum[i].partition_point(|&c| c <= u).min(supports[i].len() - 1);
                    fx.1 = supports[i].values[a];
                }
                for (c, g) in cell_vals.iter_mut().zip(&functionals) {
                    let own: Vec<(Site, f64)> = fixed
                        .iter()
                        .filter(|(s, _)| g.sites().contains(s))
                        .cloned()
                        .collect();
                    *c = cond_exp_with::<f64>(g, &origin, &own, opts.cutoff)?;
                }
                accumulate(&cell_vals, &mut prefix);
                for i in 0..nm {
                    let x = f.eval(prefix[i]);
                    let delta = x - mean[i];
                    mean[i] += delta / (r + 1) as f64;
                    m2[i] += delta * (x - mean[i]);
                }
            }
            let se: Vec<f64> = m2
                .iter()
                .map(|v| (v / (reps - 1) as f64 / reps as f64).sqrt())
                .collect();
            (GridMethod::MonteCarlo, mean, Some(se))
        }
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };

    let grid = Rect::new(IndexVec::splat(d, 1), IndexVec::splat(d, n_max + 1))?;
    let mut out = Vec::with_capacity(grid.volume());
    let mut running = vec![0.0f64; n_max as usize];
    for n in grid.points() {
        let m: Vec<i64> = n
            .coords()
            .iter()
            .zip(&shape)
            .map(|(&c, &s)| c.min(s as i64) - 1)
            .collect();
        let j = cbox.linear_index(&IndexVec::new(m));
        let level = *n.coords().iter().max().expect("dimension >= 1") as usize;
        running[level - 1] = running[level - 1].max(moments[j]);
        out.push(GridCell {
            n,
            moment: moments[j],
            se: ses.as_ref().map(|s| s[j]),
        });
    }
    for i in 1..running.len() {
        running[i] = running[i].max(running[i - 1]);
    }
    let sup = *running.last().expect("N >= 1");
    let stabilized_at = running.iter().position(|&v| v >= sup).unwrap_or(0) as i64 + 1;
    Ok(ConditionGrid {
        functional: f.clone(),
        n_max,
        method,
        cells: out,
        running_sup: running,
        sup,
        stabilized_at,
        stabilized: stabilized_at < n_max,
    })
}

fn check_centered(f0: &FootprintFunctional, opts: &GridOptions) -> Result<()> {
    let trivial = QuadrantSigma::trivial(f0.dim().unwrap_or(1));
    match cond_exp_with::<f64>(f0, &trivial, &[], opts.cutoff) {
        Ok(mu) => {
            if mu.abs() > 1e-12 {
                return Err(Error::Parameter(format!("the field has mean {mu}, not 0")));
            }
        }
        Err(Error::Capacity { .. }) => {
            let (mu, se) = cond_exp_mc(f0, &trivial, &[], opts.mc_reps.max(2), opts.seed)?;
            if mu.abs() > 4.0 * se + 1e-12 {
                return Err(Error::Parameter(format!("the field has mean {mu} +- {se}, not 0")));
            }
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{lin_b_coeffs, InnovationSpec, Kernel, ScaleField};

    #[test]
    fn one_dimensional_difference_kernel() {
        let k = Kernel::new(1, [(IndexVec::from([0]), 1.0), (IndexVec::from([1]), -1.0)]).unwrap();
        let m = FieldModel::linear(InnovationSpec::Rademacher, k);
        let g = check_con1(&m, 8, &MomentFunctional::Plain).unwrap();
        assert_eq!(g.moment_at(&IndexVec::from([1])), Some(2.0));
        for n in 2..=8 {
            assert_eq!(g.moment_at(&IndexVec::from([n])), Some(1.0));
        }
        assert_eq!(g.sup, 2.0);
        assert!(g.stabilized);
    }

    #[test]
    fn two_dimensional_kernel_matches_b_coefficients() {
        let k = Kernel::new(
            2,
            [
                (IndexVec::from([0, 0]), 1.0),
                (IndexVec::from([1, 0]), 0.5),
                (IndexVec::from([0, 1]), -0.25),
                (IndexVec::from([2, 1]), 0.25),
            ],
        )
        .unwrap();
        let m = FieldModel::linear(InnovationSpec::Rademacher, k.clone());
        let g = check_con1(&m, 5, &MomentFunctional::Plain).unwrap();
        for c in &g.cells {
            let b: f64 = lin_b_coeffs(&k, &c.n).unwrap().values().map(|v| v * v).sum();
            assert!((c.moment - b).abs() < 1e-12, "{:?}: {} vs {b}", c.n, c.moment);
        }
    }

    #[test]
    fn product_omd_reduces_to_the_origin_cell() {
        let m = FieldModel::product_omd(
            2,
            InnovationSpec::Rademacher,
            ScaleField::TwoLevel {
                low: 1.0,
                high: 2.0,
                taps: vec![vec![0, 0]],
                channel: 1,
            },
        );
        let g = check_con1(&m, 4, &MomentFunctional::Plain).unwrap();
        for c in &g.cells {
            assert!((c.moment - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn monte_carlo_fallback_agrees() {
        let k = Kernel::new(1, [(IndexVec::from([0]), 1.0), (IndexVec::from([1]), -1.0)]).unwrap();
        let m = FieldModel::linear(InnovationSpec::Rademacher, k);
        let opts = GridOptions {
            cutoff: 3,
            mc_reps: 4000,
            seed: 5,
        };
        let g = check_con1_with(&m, 4, &MomentFunctional::Plain, &opts).unwrap();
        assert_eq!(g.method, GridMethod::MonteCarlo);
        let c = &g.cells[3];
        assert!((c.moment - 1.0).abs() <= 4.0 * c.se.unwrap() + 1e-12);
    }
}
