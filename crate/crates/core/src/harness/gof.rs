use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// `P(N(0, sigma2) <= x)`.
pub fn normal_cdf(x: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::Parameter(format!("variance {sigma2} must be positive")));
    }
    Ok(0.5 * erfc(-x / (2.0 * sigma2).sqrt()))
}

/// 95% Dvoretzky–Kiefer–Wolfowitz half-width for `count` samples.
pub fn dkw_band(count: usize) -> f64 {
    1.3581 / (count as f64).sqrt()
}

/// A sorted sample with its first two moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    pub sorted: Vec<f64>,
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
}

impl EmpiricalDistribution {
    pub fn new(mut sample: Vec<f64>) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::Parameter("empty sample".into()));
        }
        if sample.iter().any(|x| x.is_nan()) {
            return Err(Error::Parameter("sample contains NaN".into()));
        }
        sample.sort_by(f64::total_cmp);
        let n = sample.len();
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (i, &x) in sample.iter().enumerate() {
            let d = x - mean;
            mean += d / (i + 1) as f64;
            m2 += d * (x - mean);
        }
        let variance = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        Ok(EmpiricalDistribution {
            sorted: sample,
            count: n,
            mean,
            variance,
        })
    }

    /// `P(X <= x)` under the empirical law.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.count as f64
    }

    /// Largest atom mass.
    pub fn max_atom(&self) -> f64 {
        let mut best = 0usize;
        let mut i = 0;
        while i < self.count {
            let mut j = i + 1;
            while j < self.count && self.sorted[j] == self.sorted[i] {
                j += 1;
            }
            best = best.max(j - i);
            i = j;
        }
        best as f64 / self.count as f64
    }

    /// Standard error of the sample variance, from the fourth central moment.
    pub fn variance_se(&self) -> f64 {
        let n = self.count as f64;
        let m4 = self.sorted.iter().map(|x| (x - self.mean).powi(4)).sum::<f64>() / n;
        ((m4 - self.variance * self.variance).max(0.0) / n).sqrt()
    }

    /// `sup_x |F_n(x) - F(x)|`, evaluated on both sides of every jump.
    pub fn ks(&self, cdf: impl Fn(f64) -> f64) -> f64 {
        let n = self.count as f64;
        let mut d: f64 = 0.0;
        let mut i = 0;
        while i < self.count {
            let x = self.sorted[i];
            let mut j = i + 1;
            while j < self.count && self.sorted[j] == x {
                j += 1;
            }
            let f = cdf(x);
            d = d.max((f - i as f64 / n).abs()).max((j as f64 / n - f).abs());
            i = j;
        }
        d
    }

    /// KS distance between two empirical laws.
    pub fn ks_two_sample(&self, other: &EmpiricalDistribution) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut d: f64 = 0.0;
        while i < self.count || j < other.count {
            let x = match (self.sorted.get(i), other.sorted.get(j)) {
                (Some(&a), Some(&b)) => a.min(b),
                (Some(&a), None) => a,
                (None, Some(&b)) => b,
                (None, None) => break,
            };
            while i < self.count && self.sorted[i] <= x {
                i += 1;
            }
            while j < other.count && other.sorted[j] <= x {
                j += 1;
            }
            d = d.max((i as f64 / self.count as f64 - j as f64 / other.count as f64).abs());
        }
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

/// Kolmogorov–Smirnov comparison against `N(0, sigma2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub ks: f64,
    pub sigma2: f64,
    pub count: usize,
    pub dkw: f64,
    /// Half the largest atom mass of the sample.
    pub lattice_gap: f64,
    pub threshold: f64,
    pub mean: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Default pass threshold: `max(0.03, 2 * dkw + lattice_gap)`.
pub fn default_threshold(dkw: f64, lattice_gap: f64) -> f64 {
    0.03f64.max(2.0 * dkw + lattice_gap)
}

/// KS distance, DKW band and verdict against `N(0, sigma2)`.
pub fn gof_stats(sample: &EmpiricalDistribution, sigma2: f64, threshold: Option<f64>) -> Result<GofReport> {
    if !(sigma2 > 0.0) {
        return Err(Error::Parameter(format!("variance {sigma2} must be positive")));
    }
    let sd2 = (2.0 * sigma2).sqrt();
    let ks = sample.ks(|x| 0.5 * erfc(-x / sd2));
    let dkw = dkw_band(sample.count);
    let lattice_gap = 0.5 * sample.max_atom();
    let threshold = threshold.unwrap_or_else(|| default_threshold(dkw, lattice_gap));
    Ok(GofReport {
        ks,
        sigma2,
        count: sample.count,
        dkw,
        lattice_gap,
        threshold,
        mean: sample.mean,
        variance: sample.variance,
        variance_se: sample.variance_se(),
        verdict: Verdict::from_bool(ks <= threshold),
        note: None,
    })
}

/// Report for a target variance of zero: no normal law to compare with.
pub fn degenerate_report(sample: &EmpiricalDistribution) -> GofReport {
    GofReport {
        ks: f64::NAN,
        sigma2: 0.0,
        count: sample.count,
        dkw: dkw_band(sample.count),
        lattice_gap: 0.5 * sample.max_atom(),
        threshold: f64::NAN,
        mean: sample.mean,
        variance: sample.variance,
        variance_se: sample.variance_se(),
        verdict: Verdict::Fail,
        note: Some("sigma2 = 0: the limit law is degenerate".into()),
    }
}
