use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convex moment functions used by the moment and Orlicz conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MomentFunctional {
    /// `x ln^{1-eps}(1 + x)`; `eps = 0` gives `x ln(1 + x)`.
    OrliczG { eps: f64 },
    /// `x^2 ln^{d-1}(1 + |x|)`.
    Phi { d: u32 },
    /// `x^2`.
    Plain,
}

impl MomentFunctional {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MomentFunctional::OrliczG { eps } if !(0.0..1.0).contains(&eps) => Err(
                Error::Parameter(format!("eps = {eps} must lie in [0, 1)")),
            ),
            MomentFunctional::Phi { d } if d < 1 => {
                Err(Error::Parameter(format!("phi needs d >= 1, got {d}")))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let a = x.abs();
        match *self {
            MomentFunctional::OrliczG { eps } => {
                let l = a.ln_1p();
                if eps == 0.0 {
                    a * l
                } else {
                    a * l.powf(1.0 - eps)
                }
            }
            MomentFunctional::Phi { d } => a * a * a.ln_1p().powi(d as i32 - 1),
            MomentFunctional::Plain => a * a,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            MomentFunctional::OrliczG { eps } => format!("x*ln^(1-{eps})(1+x)"),
            MomentFunctional::Phi { d } => format!("x^2*ln^{}(1+|x|)", d.saturating_sub(1)),
            MomentFunctional::Plain => "x^2".into(),
        }
    }
}
