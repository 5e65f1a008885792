use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::innovation::InnovationSpec;
use super::kernel::{Kernel, VolterraCoeffs};
use crate::error::{Error, Result};
use crate::lattice::IndexVec;
use crate::scalar::Scalar;

/// Random scale factor `U` of the product field `xi_k U_{k-1}^{1/2}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScaleField {
    /// `U = value`.
    Constant { value: f64 },
    /// `U = high` when the sum of the tapped innovations is positive, else
    /// `low`. Taps are offsets below the anchor `k - (1, ..., 1)`.
    TwoLevel {
        low: f64,
        high: f64,
        taps: Vec<Vec<i64>>,
        #[serde(default)]
        channel: usize,
    },
    /// `U` is the level field on `channel`.
    Levels {
        n_max: u64,
        #[serde(default = "default_level_channel")]
        channel: usize,
    },
}

fn default_level_channel() -> usize {
    1
}

/// The four parts of a martingale–coboundary decomposition
/// `X = m + (1 - T)m' + (1 - S)m'' + (1 - T)(1 - S)Y`, where `T` and `S`
/// shift the first and second index by one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoboundarySpec {
    pub m: FieldKind,
    pub m_prime: FieldKind,
    pub m_second: FieldKind,
    pub y: FieldKind,
}

/// Field variants. Every variant reads innovations `xi_{k - j}` with
/// `j >= 0`, except that the coboundary composite also reads its parts at
/// `k + e_1`, `k + e_2` and `k + e_1 + e_2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldKind {
    Zero,
    Iid,
    Linear { kernel: Kernel },
    Volterra { coeffs: VolterraCoeffs },
    ProductOmd { scale: ScaleField },
    Coboundary(Box<CoboundarySpec>),
    UField {
        n_max: u64,
        #[serde(default)]
        channel: usize,
    },
}

/// A stationary field `X_k = X_0 o shift_k` over `Z^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldModel {
    pub dim: usize,
    pub innovation: InnovationSpec,
    pub field: FieldKind,
}

/// A lattice site read by a field: innovation `channel` at `k - offset`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SiteOffset {
    pub channel: usize,
    pub offset: IndexVec,
}

/// Square-root scale inside a compiled product term.
#[derive(Clone, Debug, PartialEq)]
pub enum ScaleNode {
    Const(f64),
    TwoLevel { taps: Vec<u32>, low: f64, high: f64 },
    Sqrt(u32),
}

/// Expression over footprint slots.
#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Zero,
    Linear(Vec<(u32, f64)>),
    Quadratic(Vec<(u32, u32, f64)>),
    Product { xi: u32, scale: ScaleNode },
    Sum(Vec<(f64, Node)>),
}

impl Node {
    pub fn eval<T: Scalar>(&self, get: &impl Fn(u32) -> T) -> T {
        match self {
            Node::Zero => T::zero(),
            Node::Linear(terms) => {
                let mut acc = T::zero();
                for (s, a) in terms {
                    acc = acc + T::from_f64(*a) * get(*s);
                }
                acc
            }
            Node::Quadratic(terms) => {
                let mut acc = T::zero();
                for (s, t, a) in terms {
                    acc = acc + T::from_f64(*a) * get(*s) * get(*t);
                }
                acc
            }
            Node::Product { xi, scale } => {
                let sc = match scale {
                    ScaleNode::Const(c) => T::from_f64(*c),
                    ScaleNode::TwoLevel { taps, low, high } => {
                        let mut acc = T::zero();
                        for s in taps {
                            acc = acc + get(*s);
                        }
                        T::from_f64(if acc.is_positive() { *high } else { *low })
                    }
                    ScaleNode::Sqrt(s) => get(*s).sqrt(),
                };
                get(*xi) * sc
            }
            Node::Sum(parts) => {
                let mut acc = T::zero();
                for (c, n) in parts {
                    acc = acc + T::from_f64(*c) * n.eval(get);
                }
                acc
            }
        }
    }

    #[inline]
    pub fn eval_f64(&self, get: &impl Fn(u32) -> f64) -> f64 {
        match self {
            Node::Linear(terms) => terms.iter().map(|&(s, a)| a * get(s)).sum(),
            Node::Product {
                xi,
                scale: ScaleNode::TwoLevel { taps, low, high },
            } => {
                let acc: f64 = taps.iter().map(|&s| get(s)).sum();
                get(*xi) * if acc > 0.0 { *high } else { *low }
            }
            _ => self.eval::<f64>(get),
        }
    }
}

/// A model reduced to a footprint and an expression over it.
#[derive(Clone, Debug)]
pub struct CompiledModel {
    pub dim: usize,
    pub sites: Vec<SiteOffset>,
    pub node: Node,
}

impl CompiledModel {
    /// Per-axis `(min, max)` over footprint offsets.
    pub fn offset_extent(&self) -> Vec<(i64, i64)> {
        let mut ext = vec![(0i64, 0i64); self.dim];
        for s in &self.sites {
            for (a, e) in ext.iter_mut().enumerate() {
                e.0 = e.0.min(s.offset.get(a));
                e.1 = e.1.max(s.offset.get(a));
            }
        }
        ext
    }

    pub fn channels(&self) -> usize {
        self.sites.iter().map(|s| s.channel + 1).max().unwrap_or(1)
    }
}

struct Builder {
    dim: usize,
    sites: Vec<SiteOffset>,
    index: HashMap<SiteOffset, u32>,
}

impl Builder {
    fn slot(&mut self, channel: usize, offset: IndexVec) -> u32 {
        let key = SiteOffset { channel, offset };
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.sites.len() as u32;
        self.sites.push(key.clone());
        self.index.insert(key, i);
        i
    }

    /// Offsets relative to evaluation at `k + shift`.
    fn rel(&self, offset: &IndexVec, shift: &IndexVec) -> IndexVec {
        offset.sub(shift)
    }

    fn compile(&mut self, kind: &FieldKind, shift: &IndexVec) -> Result<Node> {
        let d = self.dim;
        Ok(match kind {
            FieldKind::Zero => Node::Zero,
            FieldKind::Iid => {
                let s = self.slot(0, self.rel(&IndexVec::zeros(d), shift));
                Node::Linear(vec![(s, 1.0)])
            }
            FieldKind::UField { channel, .. } => {
                let s = self.slot(*channel, self.rel(&IndexVec::zeros(d), shift));
                Node::Linear(vec![(s, 1.0)])
            }
            FieldKind::Linear { kernel } => {
                if kernel.dim() != d {
                    return Err(Error::Structural(format!(
                        "kernel of dimension {} in a {d}-dimensional model",
                        kernel.dim()
                    )));
                }
                let mut terms = Vec::new();
                for (o, &a) in kernel.coeffs() {
                    let s = self.slot(0, self.rel(o, shift));
                    terms.push((s, a));
                }
                Node::Linear(terms)
            }
            FieldKind::Volterra { coeffs } => {
                if coeffs.dim() != d {
                    return Err(Error::Structural(format!(
                        "coefficients of dimension {} in a {d}-dimensional model",
                        coeffs.dim()
                    )));
                }
                let mut terms = Vec::new();
                for ((u, v), &a) in coeffs.coeffs() {
                    let su = self.slot(0, self.rel(u, shift));
                    let sv = self.slot(0, self.rel(v, shift));
                    terms.push((su, sv, a));
                }
                Node::Quadratic(terms)
            }
            FieldKind::ProductOmd { scale } => {
                let xi = self.slot(0, self.rel(&IndexVec::zeros(d), shift));
                let anchor = IndexVec::splat(d, 1);
                let scale = match scale {
                    ScaleField::Constant { value } => {
                        if !(*value >= 0.0) {
                            return Err(Error::Parameter(format!("scale {value} is negative")));
                        }
                        ScaleNode::Const(value.sqrt())
                    }
                    ScaleField::TwoLevel {
                        low,
                        high,
                        taps,
                        channel,
                    } => {
                        if !(*low >= 0.0 && *high >= 0.0) {
                            return Err(Error::Parameter("scale levels must be >= 0".into()));
                        }
                        if taps.is_empty() {
                            return Err(Error::Parameter("two-level scale needs taps".into()));
                        }
                        let mut slots = Vec::new();
                        for t in taps {
                            let t = IndexVec::from_slice(t);
                            if t.dim() != d || !t.is_nonnegative() {
                                return Err(Error::Structural(format!(
                                    "tap {t} must be a nonnegative {d}-dimensional offset"
                                )));
                            }
                            slots.push(self.slot(*channel, self.rel(&anchor.add(&t), shift)));
                        }
                        ScaleNode::TwoLevel {
                            taps: slots,
                            low: low.sqrt(),
                            high: high.sqrt(),
                        }
                    }
                    ScaleField::Levels { channel, .. } => {
                        ScaleNode::Sqrt(self.slot(*channel, self.rel(&anchor, shift)))
                    }
                };
                Node::Product { xi, scale }
            }
            FieldKind::Coboundary(spec) => {
                if d != 2 {
                    return Err(Error::Structural(format!(
                        "the coboundary decomposition is defined for d = 2, got {d}"
                    )));
                }
                let e1 = IndexVec::from([1, 0]);
                let e2 = IndexVec::from([0, 1]);
                let e12 = IndexVec::from([1, 1]);
                let at = |s: &IndexVec| shift.add(s);
                let parts = vec![
                    (1.0, self.compile_part(&spec.m, shift)?),
                    (1.0, self.compile_part(&spec.m_prime, shift)?),
                    (-1.0, self.compile_part(&spec.m_prime, &at(&e1))?),
                    (1.0, self.compile_part(&spec.m_second, shift)?),
                    (-1.0, self.compile_part(&spec.m_second, &at(&e2))?),
                    (1.0, self.compile_part(&spec.y, shift)?),
                    (-1.0, self.compile_part(&spec.y, &at(&e1))?),
                    (-1.0, self.compile_part(&spec.y, &at(&e2))?),
                    (1.0, self.compile_part(&spec.y, &at(&e12))?),
                ];
                Node::Sum(parts.into_iter().filter(|(_, n)| *n != Node::Zero).collect())
            }
        })
    }

    fn compile_part(&mut self, kind: &FieldKind, shift: &IndexVec) -> Result<Node> {
        if matches!(kind, FieldKind::Coboundary(_)) {
            return Err(Error::Structural("coboundary parts cannot be coboundaries".into()));
        }
        self.compile(kind, shift)
    }
}

impl FieldKind {
    fn bound(&self, innovation: Option<f64>) -> Option<f64> {
        match self {
            FieldKind::Zero => Some(0.0),
            FieldKind::Iid => innovation,
            FieldKind::UField { .. } => None,
            FieldKind::Linear { kernel } => {
                Some(kernel.coeffs().values().map(|a| a.abs()).sum::<f64>() * innovation?)
            }
            FieldKind::Volterra { coeffs } => {
                let b = innovation?;
                Some(coeffs.coeffs().values().map(|a| a.abs()).sum::<f64>() * b * b)
            }
            FieldKind::ProductOmd { scale } => {
                let u = match scale {
                    ScaleField::Constant { value } => *value,
                    ScaleField::TwoLevel { low, high, .. } => low.max(*high),
                    ScaleField::Levels { .. } => return None,
                };
                Some(innovation? * u.sqrt())
            }
            FieldKind::Coboundary(s) => Some(
                s.m.bound(innovation)?
                    + 2.0 * s.m_prime.bound(innovation)?
                    + 2.0 * s.m_second.bound(innovation)?
                    + 4.0 * s.y.bound(innovation)?,
            ),
        }
    }

    fn channel_needs(&self, out: &mut Vec<(usize, InnovationSpec)>) {
        match self {
            FieldKind::ProductOmd {
                scale: ScaleField::TwoLevel { channel, .. },
            } if *channel != 0 => out.push((*channel, InnovationSpec::Rademacher)),
            FieldKind::ProductOmd {
                scale: ScaleField::Levels { n_max, channel },
            } => out.push((*channel, InnovationSpec::ULevels { n_max: *n_max })),
            FieldKind::UField { n_max, channel } => {
                out.push((*channel, InnovationSpec::ULevels { n_max: *n_max }))
            }
            FieldKind::Coboundary(s) => {
                for p in [&s.m, &s.m_prime, &s.m_second, &s.y] {
                    p.channel_needs(out);
                }
            }
            _ => {}
        }
    }
}

impl FieldModel {
    pub fn new(dim: usize, innovation: InnovationSpec, field: FieldKind) -> Result<Self> {
        let m = FieldModel {
            dim,
            innovation,
            field,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn iid(dim: usize, innovation: InnovationSpec) -> Self {
        FieldModel {
            dim,
            innovation,
            field: FieldKind::Iid,
        }
    }

    pub fn linear(innovation: InnovationSpec, kernel: Kernel) -> Self {
        FieldModel {
            dim: kernel.dim(),
            innovation,
            field: FieldKind::Linear { kernel },
        }
    }

    pub fn volterra(innovation: InnovationSpec, coeffs: VolterraCoeffs) -> Self {
        FieldModel {
            dim: coeffs.dim(),
            innovation,
            field: FieldKind::Volterra { coeffs },
        }
    }

    pub fn product_omd(dim: usize, innovation: InnovationSpec, scale: ScaleField) -> Self {
        FieldModel {
            dim,
            innovation,
            field: FieldKind::ProductOmd { scale },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > 8 {
            return Err(Error::Structural(format!(
                "dimension {} outside 1..=8",
                self.dim
            )));
        }
        self.innovation.validate()?;
        let specs = self.channel_specs()?;
        let c = self.compile()?;
        if !specs[0].is_centered() && !matches!(self.field, FieldKind::UField { channel: 0, .. }) {
            return Err(Error::Parameter(
                "channel 0 carries the centered innovations and cannot hold level values".into(),
            ));
        }
        if !matches!(self.field, FieldKind::Coboundary(_)) {
            if let Some(s) = c.sites.iter().find(|s| !s.offset.is_nonnegative()) {
                return Err(Error::Structural(format!(
                    "footprint reads offset {} which is not >= 0",
                    s.offset
                )));
            }
        }
        Ok(())
    }

    /// Innovation law per channel; channel 0 is `innovation`.
    pub fn channel_specs(&self) -> Result<Vec<InnovationSpec>> {
        let mut specs = vec![self.innovation.clone()];
        let mut needs = Vec::new();
        self.field.channel_needs(&mut needs);
        for (ch, spec) in needs {
            while specs.len() <= ch {
                specs.push(self.innovation.clone());
            }
            if ch == 0 {
                if specs[0] != spec {
                    return Err(Error::Structural(format!(
                        "channel 0 is {:?} but the field needs {:?}",
                        specs[0], spec
                    )));
                }
            } else if specs[ch] != spec && specs[ch] != self.innovation {
                return Err(Error::Structural(format!(
                    "channel {ch} is required with two different laws"
                )));
            } else {
                specs[ch] = spec;
            }
        }
        for s in &specs {
            s.validate()?;
        }
        Ok(specs)
    }

    pub fn compile(&self) -> Result<CompiledModel> {
        let mut b = Builder {
            dim: self.dim,
            sites: Vec::new(),
            index: HashMap::new(),
        };
        let node = b.compile(&self.field, &IndexVec::zeros(self.dim))?;
        Ok(CompiledModel {
            dim: self.dim,
            sites: b.sites,
            node,
        })
    }

    /// `max |X|` when the model is bounded.
    pub fn bound(&self) -> Option<f64> {
        self.field.bound(self.innovation.bound())
    }

    /// Whether the footprint is contained in `{j >= 0}`.
    pub fn is_causal(&self) -> bool {
        self.compile()
            .map(|c| c.sites.iter().all(|s| s.offset.is_nonnegative()))
            .unwrap_or(false)
    }

    /// Whether the field is an orthomartingale difference by construction:
    /// a centered innovation at the cell times a factor built from other
    /// sites, or the innovation itself.
    pub fn is_structural_omd(&self) -> bool {
        if !self.innovation.is_centered() {
            return false;
        }
        match &self.field {
            FieldKind::Iid | FieldKind::Zero => true,
            FieldKind::ProductOmd { .. } => true,
            _ => false,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let m: FieldModel = toml::from_str(text).map_err(|e| Error::Parse {
            location: e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}")
                })
                .unwrap_or_else(|| "model file".into()),
            message: e.message().to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse {
            location: "model".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { location, message } => Error::Parse {
                location: format!("{}: {location}", path.as_ref().display()),
                message,
            },
            other => other,
        })
    }
}

/// The level field as a model: `X_k = U_k` with levels `2..=n_max` on
/// `channel`. Channel 0 then carries the level field itself when
/// `channel == 0`, and fair signs otherwise.
pub fn make_u_field(n_max: u64, channel: usize) -> Result<FieldModel> {
    if n_max < 2 {
        return Err(Error::Parameter(format!("level count N_max = {n_max} must be at least 2")));
    }
    let innovation = if channel == 0 {
        InnovationSpec::ULevels { n_max }
    } else {
        InnovationSpec::Rademacher
    };
    FieldModel::new(2, innovation, FieldKind::UField { n_max, channel })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv<const N: usize>(a: [i64; N]) -> IndexVec {
        IndexVec::from(a)
    }

    #[test]
    fn toml_roundtrip_linear() {
        let k = Kernel::new(2, [(iv([0, 0]), 1.0), (iv([1, 0]), 0.5), (iv([0, 1]), -0.25)]).unwrap();
        let m = FieldModel::linear(InnovationSpec::Rademacher, k);
        let text = m.to_toml_string().unwrap();
        let back = FieldModel::from_toml_str(&text).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn toml_roundtrip_coboundary_and_product() {
        let m = FieldModel::new(
            2,
            InnovationSpec::Rademacher,
            FieldKind::Coboundary(Box::new(CoboundarySpec {
                m: FieldKind::Iid,
                m_prime: FieldKind::Linear {
                    kernel: Kernel::new(2, [(iv([1, 0]), 0.5)]).unwrap(),
                },
                m_second: FieldKind::Zero,
                y: FieldKind::ProductOmd {
                    scale: ScaleField::TwoLevel {
                        low: 1.0,
                        high: 4.0,
                        taps: vec![vec![0, 0], vec![1, 0]],
                        channel: 1,
                    },
                },
            })),
        )
        .unwrap();
        let text = m.to_toml_string().unwrap();
        assert_eq!(FieldModel::from_toml_str(&text).unwrap(), m);
    }

    #[test]
    fn unknown_key_in_model_is_rejected() {
        let text = "dim = 2\nfield = { kind = \"iid\" }\n[innovation]\nkind = \"gaussian\"\nvariance = 1.0\nextra = 1\n";
        assert!(matches!(FieldModel::from_toml_str(text), Err(Error::Parse { .. })));
        let top = "dim = 2\nseed = 3\nfield = { kind = \"iid\" }\ninnovation = { kind = \"rademacher\" }\n";
        assert!(matches!(FieldModel::from_toml_str(top), Err(Error::Parse { .. })));
    }

    #[test]
    fn coboundary_reads_shifted_parts() {
        let m = FieldModel::new(
            2,
            InnovationSpec::Rademacher,
            FieldKind::Coboundary(Box::new(CoboundarySpec {
                m: FieldKind::Zero,
                m_prime: FieldKind::Iid,
                m_second: FieldKind::Zero,
                y: FieldKind::Zero,
            })),
        )
        .unwrap();
        let c = m.compile().unwrap();
        let offs: Vec<_> = c.sites.iter().map(|s| s.offset.clone()).collect();
        assert_eq!(offs, vec![iv([0, 0]), iv([-1, 0])]);
    }

    #[test]
    fn u_field_needs_two_levels() {
        assert!(make_u_field(1, 0).is_err());
        let m = make_u_field(2, 1).unwrap();
        let specs = m.channel_specs().unwrap();
        assert_eq!(specs[1], InnovationSpec::ULevels { n_max: 2 });
    }

    #[test]
    fn bounds() {
        let p = FieldModel::product_omd(
            2,
            InnovationSpec::Rademacher,
            ScaleField::TwoLevel {
                low: 1.0,
                high: 4.0,
                taps: vec![vec![0, 0]],
                channel: 0,
            },
        );
        assert_eq!(p.bound(), Some(2.0));
        assert_eq!(FieldModel::iid(2, InnovationSpec::Gaussian { variance: 1.0 }).bound(), None);
    }
}
