use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ulevels::{level_prob, level_series, level_value, ULevelSampler};
use crate::error::{Error, Result};
use crate::rng::CellStream;

/// Law of the i.i.d. innovations on one channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InnovationSpec {
    /// Fair signs.
    Rademacher,
    /// A finite law with the listed atoms.
    FinitePmf { values: Vec<f64>, probs: Vec<f64> },
    /// Centered normal; sampling only.
    Gaussian { variance: f64 },
    /// Heavy level sum with levels `2..=n_max`.
    ULevels { n_max: u64 },
}

/// A finite distribution: atoms and their probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Support {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Support {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_rademacher(&self) -> bool {
        self.values.len() == 2
            && self.probs == [0.5, 0.5]
            && ((self.values == [-1.0, 1.0]) || (self.values == [1.0, -1.0]))
    }
}

impl InnovationSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            InnovationSpec::Rademacher => Ok(()),
            InnovationSpec::FinitePmf { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(Error::Parameter(
                        "finite pmf needs equally many values and probabilities".into(),
                    ));
                }
                if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite())
                    || values.iter().any(|v| !v.is_finite())
                {
                    return Err(Error::Parameter("finite pmf has invalid entries".into()));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::Parameter(format!("pmf sums to {total}, not 1")));
                }
                let mean: f64 = values.iter().zip(probs).map(|(v, p)| v * p).sum();
                let scale: f64 = values.iter().map(|v| v.abs()).fold(1.0, f64::max);
                if mean.abs() > 1e-12 * scale {
                    return Err(Error::Parameter(format!("innovation mean {mean} is not 0")));
                }
                Ok(())
            }
            InnovationSpec::Gaussian { variance } => {
                if *variance > 0.0 && variance.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!("variance {variance} must be positive")))
                }
            }
            InnovationSpec::ULevels { n_max } => {
                if *n_max >= 2 {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!(
                        "level count N_max = {n_max} must be at least 2"
                    )))
                }
            }
        }
    }

    /// Whether the law has mean zero.
    pub fn is_centered(&self) -> bool {
        !matches!(self, InnovationSpec::ULevels { .. })
    }

    /// Second moment `E xi^2` (the variance for centered laws). For the level
    /// field this is finite for every finite `n_max`.
    pub fn second_moment(&self) -> f64 {
        match self {
            InnovationSpec::Rademacher => 1.0,
            InnovationSpec::FinitePmf { values, probs } => {
                values.iter().zip(probs).map(|(v, p)| v * v * p).sum()
            }
            InnovationSpec::Gaussian { variance } => *variance,
            InnovationSpec::ULevels { n_max } => {
                let n = *n_max;
                let mean = level_series(n, &[n], |x| x).map(|v| v[0]).unwrap_or(f64::NAN);
                let sq = level_series(n, &[n], |x| x * x).map(|v| v[0]).unwrap_or(f64::NAN);
                let sq_p2: f64 = (2..=n.min(1 << 16))
                    .map(|k| (level_value(k) * level_prob(k)).powi(2))
                    .sum();
                sq + mean * mean - sq_p2
            }
        }
    }

    /// Largest absolute value, when the law is bounded.
    pub fn bound(&self) -> Option<f64> {
        match self {
            InnovationSpec::Rademacher => Some(1.0),
            InnovationSpec::FinitePmf { values, .. } => {
                Some(values.iter().map(|v| v.abs()).fold(0.0, f64::max))
            }
            InnovationSpec::Gaussian { .. } | InnovationSpec::ULevels { .. } => None,
        }
    }

    /// The finite law, when enumeration is possible.
    pub fn support(&self) -> Result<Support> {
        match self {
            InnovationSpec::Rademacher => Ok(Support {
                values: vec![-1.0, 1.0],
                probs: vec![0.5, 0.5],
            }),
            InnovationSpec::FinitePmf { values, probs } => Ok(Support {
                values: values.clone(),
                probs: probs.clone(),
            }),
            InnovationSpec::Gaussian { .. } => Err(Error::Parameter(
                "gaussian innovations cannot be enumerated exactly".into(),
            )),
            InnovationSpec::ULevels { n_max } => {
                let (values, probs) = ULevelSampler::new(*n_max)?.pmf()?;
                Ok(Support { values, probs })
            }
        }
    }

    pub fn drawer(&self) -> Result<Drawer> {
        self.validate()?;
        Ok(match self {
            InnovationSpec::Rademacher => Drawer::Sign,
            InnovationSpec::FinitePmf { values, probs } => {
                let mut cum = Vec::with_capacity(probs.len());
                let mut acc = 0.0;
                for p in probs {
                    acc += p;
                    cum.push(acc);
                }
                Drawer::Pmf {
                    values: values.clone(),
                    cum,
                }
            }
            InnovationSpec::Gaussian { variance } => Drawer::Gauss { sd: variance.sqrt() },
            InnovationSpec::ULevels { n_max } => Drawer::Levels(ULevelSampler::shared(*n_max)?),
        })
    }
}

/// A prepared sampler for one channel.
#[derive(Clone, Debug)]
pub enum Drawer {
    Sign,
    Pmf { values: Vec<f64>, cum: Vec<f64> },
    Gauss { sd: f64 },
    Levels(Arc<ULevelSampler>),
}

impl Drawer {
    #[inline]
    pub fn draw(&self, stream: &CellStream, channel: usize, coords: &[i64]) -> f64 {
        match self {
            Drawer::Sign => stream.sign(channel, coords),
            Drawer::Pmf { values, cum } => {
                let u = stream.uniform(channel, coords, 0);
                let i = cum.partition_point(|&c| c <= u).min(values.len() - 1);
                values[i]
            }
            Drawer::Gauss { sd } => {
                let u1 = 1.0 - stream.uniform(channel, coords, 0);
                let u2 = stream.uniform(channel, coords, 1);
                sd * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            }
            Drawer::Levels(s) => {
                let mut draw = 0u64;
                s.sample(|| {
                    let u = stream.uniform(channel, coords, draw);
                    draw += 1;
                    u
                })
            }
        }
    }

    /// Values for the cells `prefix x [start, start + out.len())`.
    pub fn fill_row(
        &self,
        stream: &CellStream,
        channel: usize,
        prefix: &[i64],
        start: i64,
        out: &mut [f64],
    ) {
        if let Drawer::Sign = self {
            stream.sign_row(channel, prefix, start, out);
            return;
        }
        let mut coords = [0i64; 8];
        let d = prefix.len() + 1;
        coords[..d - 1].copy_from_slice(prefix);
        for (i, o) in out.iter_mut().enumerate() {
            coords[d - 1] = start + i as i64;
            *o = self.draw(stream, channel, &coords[..d]);
        }
    }
}
