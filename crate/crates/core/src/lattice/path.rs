use num_rational::Rational64;
use num_traits::{One, Signed};
use serde::{Deserialize, Serialize};

use super::{PrefixSumTable, Rect};
use crate::error::{Error, Result};

/// Values of the normalized partial-sum process on a set of grid points.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ScaledPathGrid {
    pub sizes: Vec<usize>,
    pub points: Vec<Vec<Rational64>>,
    pub values: Vec<f64>,
}

impl ScaledPathGrid {
    /// Value at `point`, if it was requested.
    pub fn value_at(&self, point: &[Rational64]) -> Option<f64> {
        self.points
            .iter()
            .position(|p| p.as_slice() == point)
            .map(|i| self.values[i])
    }
}

/// `floor(n * t)` for a rational `t` in `[0, 1]`.
pub fn scaled_floor(n: usize, t: Rational64) -> usize {
    let num = (n as i128) * (*t.numer() as i128);
    num.div_euclid(*t.denom() as i128) as usize
}

fn check_unit(t: &Rational64) -> Result<()> {
    if t.is_negative() || *t > Rational64::one() {
        return Err(Error::Range(format!("grid coordinate {t} is outside [0, 1]")));
    }
    Ok(())
}

/// Evaluate `S_{[n t]} / sqrt(prod n)` at every grid point, where the
/// partial sum runs over the origin box `[0, [n t])`.
pub fn scaled_path(
    table: &PrefixSumTable,
    sizes: &[usize],
    grid: &[Vec<Rational64>],
) -> Result<ScaledPathGrid> {
    let d = table.dim();
    if sizes.len() != d {
        return Err(Error::Structural(format!(
            "{} sizes given for a {d}-dimensional table",
            sizes.len()
        )));
    }
    if sizes.iter().any(|&n| n == 0) {
        return Err(Error::Parameter("sizes must be at least 1".into()));
    }
    let scale = (sizes.iter().map(|&n| n as f64).product::<f64>()).sqrt();
    let mut values = Vec::with_capacity(grid.len());
    for point in grid {
        if point.len() != d {
            return Err(Error::Structural(format!(
                "grid point of dimension {} on a {d}-dimensional table",
                point.len()
            )));
        }
        for t in point {
            check_unit(t)?;
        }
        let corner: Vec<usize> = point
            .iter()
            .zip(sizes)
            .map(|(t, &n)| scaled_floor(n, *t))
            .collect();
        let s = table.rect_sum(&Rect::origin_box(&corner))?;
        values.push(s / scale);
    }
    Ok(ScaledPathGrid {
        sizes: sizes.to_vec(),
        points: grid.to_vec(),
        values,
    })
}

/// `Delta(A)`: the sum over `a` divided by `scale`.
pub fn increment(table: &PrefixSumTable, a: &Rect, scale: f64) -> Result<f64> {
    if !(scale > 0.0) {
        return Err(Error::Parameter(format!("scale must be positive, got {scale}")));
    }
    Ok(table.rect_sum(a)? / scale)
}

/// The lattice rectangle `[[n t1], [n t2)) x ...` covering a grid cell.
pub fn scaled_rect(sizes: &[usize], lo: &[Rational64], hi: &[Rational64]) -> Result<Rect> {
    for t in lo.iter().chain(hi) {
        check_unit(t)?;
    }
    let l: Vec<i64> = lo
        .iter()
        .zip(sizes)
        .map(|(t, &n)| scaled_floor(n, *t) as i64)
        .collect();
    let h: Vec<i64> = hi
        .iter()
        .zip(sizes)
        .map(|(t, &n)| scaled_floor(n, *t) as i64)
        .collect();
    Rect::new(l, h)
}

/// Parse a grid coordinate written either as a fraction (`3/4`) or as a
/// terminating decimal (`0.75`). Both parse to the exact rational.
pub fn parse_rational(text: &str) -> Result<Rational64> {
    let s = text.trim();
    let bad = || Error::Argument(format!("`{text}` is not a rational number"));
    if let Some((a, b)) = s.split_once('/') {
        let n: i64 = a.trim().parse().map_err(|_| bad())?;
        let d: i64 = b.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Rational64::new(n, d));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 15 {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    let numer: i64 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| bad())? };
    let denom = 10i64.pow(frac.len() as u32);
    let r = Rational64::new(numer, denom);
    Ok(if neg { -r } else { r })
}

/// Convert a finite `f64` to a rational when it is one with a small
/// denominator (at most `max_denom`); used to reject irrational-looking grids.
pub fn rational_from_f64(x: f64, max_denom: i64) -> Result<Rational64> {
    if !x.is_finite() {
        return Err(Error::Argument(format!("grid coordinate {x} is not finite")));
    }
    for d in 1..=max_denom {
        let n = (x * d as f64).round();
        if (n / d as f64 - x).abs() <= 1e-15 * x.abs().max(1.0) {
            return Ok(Rational64::new(n as i64, d));
        }
    }
    Err(Error::Argument(format!(
        "grid coordinate {x} is not a rational with denominator at most {max_denom}"
    )))
}
