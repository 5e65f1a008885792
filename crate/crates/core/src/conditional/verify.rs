use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::functional::{FootprintFunctional, QuadrantSigma, Site, Tabulated, UNBOUNDED};
use super::ops::Arithmetic;
use crate::error::{Error, Result};
use crate::lattice::{IndexVec, Rect};
use crate::models::FieldModel;
use crate::scalar::{Exact, Scalar};

/// Where a check attains its largest deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell: Option<IndexVec>,
    /// Anchor of the conditioning sigma-field; `null` marks an unbounded axis.
    pub anchor: Vec<Option<i64>>,
    pub assignment: Vec<(Site, f64)>,
    pub deviation: f64,
}

/// Outcome of a structure check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    pub parameters: BTreeMap<String, Value>,
    pub arithmetic: Arithmetic,
    pub max_deviation: f64,
    /// The deviation as an exact rational when computed exactly.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_deviation_exact: Option<String>,
    pub tol: f64,
    pub violations: usize,
    pub witnesses: Vec<Witness>,
    pub pass: bool,
}

impl VerificationReport {
    /// Whether the deviation is exactly zero in exact arithmetic.
    pub fn is_literal_zero(&self) -> bool {
        self.max_deviation_exact.as_deref() == Some("0")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Options shared by the structure checks.
#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub tol: f64,
    pub arithmetic: Arithmetic,
    pub cutoff: u128,
    pub max_witnesses: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            tol: 1e-12,
            arithmetic: Arithmetic::Auto,
            cutoff: super::DEFAULT_CUTOFF,
            max_witnesses: 16,
        }
    }
}

struct Accumulator {
    max: f64,
    max_exact: Option<Exact>,
    violations: usize,
    witnesses: Vec<Witness>,
    best: Option<Witness>,
    limit: usize,
    tol: f64,
}

impl Accumulator {
    fn new(opts: &VerifyOptions) -> Self {
        Accumulator {
            max: 0.0,
            max_exact: None,
            violations: 0,
            witnesses: Vec::new(),
            best: None,
            limit: opts.max_witnesses,
            tol: opts.tol,
        }
    }

    fn record<T: Scalar>(
        &mut self,
        dev: &Tabulated<T>,
        cell: Option<&IndexVec>,
        sigma: &QuadrantSigma,
        exact: bool,
    ) {
        let (m, at) = dev.max_abs();
        let mf = m.to_f64();
        if exact {
            let me = m.to_exact();
            self.max_exact = match self.max_exact.take() {
                Some(cur) if cur >= me => Some(cur),
                _ => Some(me),
            };
        }
        let witness = Witness {
            cell: cell.cloned(),
            anchor: sigma.anchor_repr(),
            assignment: dev.assignment(at),
            deviation: mf,
        };
        if mf > self.tol {
            self.violations += 1;
            if self.witnesses.len() < self.limit {
                self.witnesses.push(witness.clone());
            }
        }
        if self.best.is_none() || mf > self.max {
            self.max = mf;
            self.best = Some(witness);
        }
    }

    fn finish(
        mut self,
        check: &str,
        parameters: BTreeMap<String, Value>,
        arithmetic: Arithmetic,
    ) -> VerificationReport {
        if self.violations > 0 {
            if let Some(b) = self.best.take() {
                if !self.witnesses.contains(&b) {
                    self.witnesses.insert(0, b);
                    self.witnesses.truncate(self.limit.max(1));
                }
            }
        }
        let pass = match &self.max_exact {
            Some(e) => e.to_f64() <= self.tol,
            None => self.max <= self.tol,
        };
        VerificationReport {
            check: check.into(),
            parameters,
            arithmetic,
            max_deviation: self.max,
            max_deviation_exact: self.max_exact.map(|e| e.to_string()),
            tol: self.tol,
            violations: self.violations,
            witnesses: self.witnesses,
            pass,
        }
    }
}

/// Default test offsets: `o` in `[-2, 1]^d` lagging on some axis, plus
/// the half-space anchors `(k_j - 1)` on one axis and unbounded elsewhere.
pub fn default_ortho_offsets(dim: usize) -> Vec<IndexVec> {
    let mut out: Vec<IndexVec> = Rect::new(IndexVec::splat(dim, -2), IndexVec::splat(dim, 2))
        .expect("offset box")
        .points()
        .filter(|o| o.coords().iter().any(|&c| c < 0))
        .collect();
    for axis in 0..dim {
        let mut o = IndexVec::splat(dim, UNBOUNDED);
        o.set(axis, -1);
        out.push(o);
    }
    out
}

fn anchor_for(k: &IndexVec, o: &IndexVec) -> IndexVec {
    let c: Vec<i64> = k
        .coords()
        .iter()
        .zip(o.coords())
        .map(|(&k, &o)| if o == UNBOUNDED { UNBOUNDED } else { k + o })
        .collect();
    IndexVec::new(c)
}

/// Check `E(X_k | F_{k+o}) = 0` for cells `k` in `[0, 2)^d` and offsets `o`
/// lagging on some axis.
pub fn verify_ortho(
    model: &FieldModel,
    offsets: Option<&[IndexVec]>,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    let d = model.dim;
    let defaults;
    let offsets = match offsets {
        Some(o) => o,
        None => {
            defaults = default_ortho_offsets(d);
            &defaults
        }
    };
    for o in offsets {
        if o.dim() != d {
            return Err(Error::Structural(format!("offset {o} does not have dimension {d}")));
        }
    }
    let f0 = FootprintFunctional::from_model(model, &IndexVec::zeros(d))?;
    let arithmetic = opts.arithmetic.resolve(&f0);
    let cells: Vec<IndexVec> = Rect::new(IndexVec::zeros(d), IndexVec::splat(d, 2))?
        .points()
        .collect();
    let mut acc = Accumulator::new(opts);
    let exact = arithmetic == Arithmetic::Exact;
    for k in &cells {
        let f = FootprintFunctional::from_model(model, k)?;
        match arithmetic {
            Arithmetic::Exact => ortho_cell::<Exact>(&f, k, offsets, opts, &mut acc, exact)?,
            _ => ortho_cell::<f64>(&f, k, offsets, opts, &mut acc, exact)?,
        }
    }
    let mut params = BTreeMap::new();
    params.insert("model".into(), serde_json::to_value(model).unwrap_or(Value::Null));
    params.insert("cells".into(), json!(cells.len()));
    params.insert(
        "offsets".into(),
        json!(offsets
            .iter()
            .map(|o| o
                .coords()
                .iter()
                .map(|&c| (c != UNBOUNDED).then_some(c))
                .collect::<Vec<_>>())
            .collect::<Vec<_>>()),
    );
    Ok(acc.finish("ortho", params, arithmetic))
}

fn ortho_cell<T: Scalar>(
    f: &FootprintFunctional,
    k: &IndexVec,
    offsets: &[IndexVec],
    opts: &VerifyOptions,
    acc: &mut Accumulator,
    exact: bool,
) -> Result<()> {
    let t = Tabulated::<T>::tabulate(f, opts.cutoff)?;
    for o in offsets {
        if !o.coords().iter().any(|&c| c < 0) {
            continue;
        }
        let sigma = QuadrantSigma::new(anchor_for(k, o));
        let c = t.conditional(&sigma);
        acc.record(&c, Some(k), &sigma, exact);
    }
    Ok(())
}

/// Compare `E_u E_a f` with `E_{u ^ a} f` on every assignment.
pub fn verify_commuting(
    f: &FootprintFunctional,
    u: &IndexVec,
    a: &IndexVec,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    if let Some(d) = f.dim() {
        if u.dim() != d || a.dim() != d {
            return Err(Error::Structural("anchors do not match the functional".into()));
        }
    }
    let arithmetic = opts.arithmetic.resolve(f);
    let mut acc = Accumulator::new(opts);
    let su = QuadrantSigma::new(u.clone());
    let sa = QuadrantSigma::new(a.clone());
    let meet = su.meet(&sa);
    let exact = arithmetic == Arithmetic::Exact;
    match arithmetic {
        Arithmetic::Exact => commuting_dev::<Exact>(f, &su, &sa, &meet, opts, &mut acc, exact)?,
        _ => commuting_dev::<f64>(f, &su, &sa, &meet, opts, &mut acc, exact)?,
    }
    let mut params = BTreeMap::new();
    params.insert("u".into(), json!(su.anchor_repr()));
    params.insert("a".into(), json!(sa.anchor_repr()));
    params.insert("sites".into(), json!(f.sites().len()));
    Ok(acc.finish("commuting", params, arithmetic))
}

fn commuting_dev<T: Scalar>(
    f: &FootprintFunctional,
    su: &QuadrantSigma,
    sa: &QuadrantSigma,
    meet: &QuadrantSigma,
    opts: &VerifyOptions,
    acc: &mut Accumulator,
    exact: bool,
) -> Result<()> {
    let t = Tabulated::<T>::tabulate(f, opts.cutoff)?;
    let iterated = t.conditional(sa).conditional(su);
    let direct = t.conditional(meet);
    let dev = iterated.zip_with(&direct, |x, y| x.clone() - y.clone())?;
    acc.record(&dev, None, meet, exact);
    Ok(())
}

/// Check that `g` is an orthomartingale difference at `u`:
/// `E(g | F_{u - e_j}) = 0` for every axis `j`.
pub fn verify_omd_at(
    g: &FootprintFunctional,
    u: &IndexVec,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    let arithmetic = opts.arithmetic.resolve(g);
    let exact = arithmetic == Arithmetic::Exact;
    let mut acc = Accumulator::new(opts);
    let base = QuadrantSigma::new(u.clone());
    let mut anchors: Vec<QuadrantSigma> = (0..u.dim()).map(|j| base.lowered(j)).collect();
    for j in 0..u.dim() {
        anchors.push(QuadrantSigma::half_space(u.dim(), j, u.get(j) - 1));
    }
    match arithmetic {
        Arithmetic::Exact => {
            let t = Tabulated::<Exact>::tabulate(g, opts.cutoff)?;
            for s in &anchors {
                acc.record(&t.conditional(s), Some(u), s, exact);
            }
        }
        _ => {
            let t = Tabulated::<f64>::tabulate(g, opts.cutoff)?;
            for s in &anchors {
                acc.record(&t.conditional(s), Some(u), s, exact);
            }
        }
    }
    let mut params = BTreeMap::new();
    params.insert("u".into(), json!(u.coords()));
    Ok(acc.finish("omd-at", params, arithmetic))
}
