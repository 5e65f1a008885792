//! The heavy-tailed level field: `U = sum_{n=2}^{N} (n / ln^2 n) 1(G_n)` with
//! independent events `G_n` of probability `1 / (2 n^2)` at every site.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::MomentFunctional;
use crate::error::{Error, Result};

/// Largest level index kept in the log-survival table.
const TABLE_CAP: u64 = 1 << 20;

/// Direct summation limit for moment series; the remainder uses the
/// Euler–Maclaurin formula.
const DIRECT_LIMIT: u64 = 1 << 20;

/// Value carried by level `n`.
#[inline]
pub fn level_value(n: u64) -> f64 {
    let l = (n as f64).ln();
    n as f64 / (l * l)
}

/// Probability that level `n` fires.
#[inline]
pub fn level_prob(n: u64) -> f64 {
    0.5 / ((n as f64) * (n as f64))
}

/// Trigamma by its asymptotic expansion; accurate to double precision for
/// `x >= 1e3`.
fn trigamma_large(x: f64) -> f64 {
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    inv + 0.5 * inv2
        + inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0)))
}

fn trigamma_large_inverse(y: f64) -> f64 {
    let mut x = 1.0 / y + 0.5;
    for _ in 0..4 {
        let f = trigamma_large(x) - y;
        let d = -1.0 / (x * x) - 1.0 / (x * x * x) - 0.5 / (x * x * x * x);
        x -= f / d;
    }
    x
}

/// Exact sampler for the level sum at one site.
///
/// `L(m) = sum_{k=2}^{m} ln(1 - 1/(2k^2))` is tabulated up to
/// `min(n_max, 2^20)`; beyond that the sum of `-1/(2k^2)` is taken from
/// trigamma differences. Fired levels are drawn from the top down: the
/// largest fired level below `h` is the smallest `m` with
/// `L(m) <= L(h) - ln u`.
#[derive(Debug)]
pub struct ULevelSampler {
    n_max: u64,
    cap: u64,
    table: Vec<f64>,
    total: f64,
}

impl ULevelSampler {
    pub fn new(n_max: u64) -> Result<Self> {
        if n_max < 2 {
            return Err(Error::Parameter(format!("level count N_max = {n_max} must be at least 2")));
        }
        let cap = n_max.min(TABLE_CAP);
        let mut table = Vec::with_capacity(cap as usize + 1);
        table.push(0.0);
        table.push(0.0);
        let mut acc = 0.0;
        for k in 2..=cap {
            acc += (-level_prob(k)).ln_1p();
            table.push(acc);
        }
        let mut s = ULevelSampler {
            n_max,
            cap,
            table,
            total: 0.0,
        };
        s.total = s.log_survival(n_max);
        Ok(s)
    }

    /// Process-wide cache; tables are immutable once built.
    pub fn shared(n_max: u64) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<u64, Arc<ULevelSampler>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("sampler cache poisoned");
        if let Some(s) = guard.get(&n_max) {
            return Ok(Arc::clone(s));
        }
        let s = Arc::new(ULevelSampler::new(n_max)?);
        guard.insert(n_max, Arc::clone(&s));
        Ok(s)
    }

    pub fn n_max(&self) -> u64 {
        self.n_max
    }

    fn tail_sum_inv_sq(&self, m: u64) -> f64 {
        if m <= self.cap {
            return 0.0;
        }
        trigamma_large(self.cap as f64 + 1.0) - trigamma_large(m as f64 + 1.0)
    }

    /// `L(m)`, the log-probability that no level in `2..=m` fires.
    pub fn log_survival(&self, m: u64) -> f64 {
        let m = m.min(self.n_max);
        if m <= self.cap {
            self.table[m as usize]
        } else {
            self.table[self.cap as usize] - 0.5 * self.tail_sum_inv_sq(m)
        }
    }

    /// Probability that no level fires at all.
    pub fn prob_zero(&self) -> f64 {
        self.total.exp()
    }

    /// Smallest `m` in `1..=hi` with `L(m) <= tau`; requires `tau >= L(hi)`.
    fn first_at_or_below(&self, tau: f64, hi: u64) -> u64 {
        if tau >= 0.0 {
            return 1;
        }
        let cap_val = self.table[self.cap as usize];
        if hi <= self.cap || tau >= cap_val {
            let top = hi.min(self.cap) as usize;
            // table[1..=top] is non-increasing
            let (mut lo, mut up) = (1usize, top);
            while lo < up {
                let mid = (lo + up) / 2;
                if self.table[mid] <= tau {
                    up = mid;
                } else {
                    lo = mid + 1;
                }
            }
            return lo as u64;
        }
        let s = 2.0 * (cap_val - tau);
        let y = trigamma_large(self.cap as f64 + 1.0) - s;
        let mut m = if y <= 0.0 {
            hi
        } else {
            (trigamma_large_inverse(y) - 1.0).ceil().max(self.cap as f64 + 1.0) as u64
        };
        m = m.clamp(self.cap + 1, hi);
        for _ in 0..8 {
            if m > self.cap + 1 && self.tail_sum_inv_sq(m - 1) >= s {
                m -= 1;
            } else {
                break;
            }
        }
        for _ in 0..8 {
            if m < hi && self.tail_sum_inv_sq(m) < s {
                m += 1;
            } else {
                break;
            }
        }
        m
    }

    /// Draw one site value from a stream of uniforms on `[0, 1)`.
    pub fn sample(&self, mut next_uniform: impl FnMut() -> f64) -> f64 {
        let mut hi = self.n_max;
        let mut value = 0.0;
        while hi >= 2 {
            let u = 1.0 - next_uniform();
            let tau = self.log_survival(hi) - u.ln();
            let m = self.first_at_or_below(tau, hi);
            if m < 2 {
                break;
            }
            value += level_value(m);
            hi = m - 1;
        }
        value
    }

    /// Probability that at least one level whose value is `>= t` fires.
    pub fn prob_level_at_least(&self, t: f64) -> f64 {
        let mut log_none = 0.0;
        // Levels 2..=8 are not monotone in n; handle them one by one.
        for n in 2..=8u64.min(self.n_max) {
            if level_value(n) >= t {
                log_none += (-level_prob(n)).ln_1p();
            }
        }
        if self.n_max >= 9 {
            let start = smallest_level_at_least(t, 9);
            if start <= self.n_max {
                log_none += self.total - self.log_survival(start - 1);
            }
        }
        -log_none.exp_m1()
    }

    /// Exact distribution for small `n_max` (at most 16): every subset of
    /// levels with its probability.
    pub fn pmf(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.n_max > 16 {
            return Err(Error::Parameter(format!(
                "exact level distribution needs N_max <= 16, got {}",
                self.n_max
            )));
        }
        let levels: Vec<u64> = (2..=self.n_max).collect();
        let count = 1usize << levels.len();
        let mut values = Vec::with_capacity(count);
        let mut probs = Vec::with_capacity(count);
        for mask in 0..count {
            let mut v = 0.0;
            let mut p = 1.0;
            for (b, &n) in levels.iter().enumerate() {
                if mask & (1 << b) != 0 {
                    v += level_value(n);
                    p *= level_prob(n);
                } else {
                    p *= 1.0 - level_prob(n);
                }
            }
            values.push(v);
            probs.push(p);
        }
        Ok((values, probs))
    }
}

/// Smallest `n >= from` (with `from >= 9`, where levels increase) whose
/// level value is at least `t`.
pub fn smallest_level_at_least(t: f64, from: u64) -> u64 {
    let from = from.max(9);
    if level_value(from) >= t {
        return from;
    }
    // Newton on g(n) = n - t ln^2 n.
    let mut n = {
        let g = t * (t.ln() * t.ln()).max(1.0);
        (t * g.ln() * g.ln()).max(from as f64)
    };
    for _ in 0..60 {
        let l = n.ln();
        let g = n - t * l * l;
        let dg = 1.0 - 2.0 * t * l / n;
        let step = g / dg;
        n -= step;
        if n < from as f64 {
            n = from as f64;
        }
        if step.abs() < 1e-6 * n.max(1.0) {
            break;
        }
    }
    let mut m = (n.ceil() as u64).max(from);
    while m > from && level_value(m - 1) >= t {
        m -= 1;
    }
    while level_value(m) < t {
        m += 1;
    }
    m
}

/// Partial sums of the series `sum_{n=2}^{N} P(G_n) f(n / ln^2 n)` at the
/// requested checkpoints.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MomentSeries {
    pub functional: MomentFunctional,
    pub checkpoints: Vec<u64>,
    pub partial_sums: Vec<f64>,
}

impl MomentSeries {
    pub fn at(&self, n: u64) -> Option<f64> {
        self.checkpoints
            .iter()
            .position(|&c| c == n)
            .map(|i| self.partial_sums[i])
    }

    /// Increment of the partial sums between two checkpoints.
    pub fn growth(&self, from: u64, to: u64) -> Option<f64> {
        Some(self.at(to)? - self.at(from)?)
    }
}

/// Moment series for a functional applied to the level values.
pub fn u_moment_series(
    n_max: u64,
    f: &MomentFunctional,
    checkpoints: &[u64],
) -> Result<MomentSeries> {
    let partial_sums = level_series(n_max, checkpoints, |x| f.eval(x))?;
    Ok(MomentSeries {
        functional: f.clone(),
        checkpoints: checkpoints.to_vec(),
        partial_sums,
    })
}

/// Partial sums of `sum_n P(G_n) h(level_value(n))` at each checkpoint
/// (each must lie in `2..=n_max`). Terms up to `2^20` are added directly
/// with compensation; beyond, the Euler–Maclaurin formula with a
/// Gauss–Legendre integral in `ln n` is used.
pub fn level_series(n_max: u64, checkpoints: &[u64], h: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    if n_max < 2 {
        return Err(Error::Parameter(format!("level count N_max = {n_max} must be at least 2")));
    }
    for &c in checkpoints {
        if c < 2 || c > n_max {
            return Err(Error::Parameter(format!(
                "checkpoint {c} outside 2..={n_max}"
            )));
        }
    }
    let term = |n: f64| {
        let l = n.ln();
        0.5 / (n * n) * h(n / (l * l))
    };
    let direct_top = checkpoints.iter().copied().max().unwrap_or(2).min(DIRECT_LIMIT);
    let mut sorted: Vec<u64> = checkpoints.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut direct_at = HashMap::new();
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut next = sorted.iter().copied().filter(|&c| c <= direct_top).peekable();
    for n in 2..=direct_top {
        let t = term(n as f64);
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
        while next.peek() == Some(&n) {
            direct_at.insert(n, sum + comp);
            next.next();
        }
    }
    let base = sum + comp;
    let mut out = Vec::with_capacity(checkpoints.len());
    for &c in checkpoints {
        if c <= DIRECT_LIMIT {
            out.push(direct_at[&c]);
        } else {
            out.push(base + euler_maclaurin(&term, DIRECT_LIMIT, c));
        }
    }
    Ok(out)
}

/// `sum_{n=a+1}^{b} t(n)` for a smooth, slowly varying term.
fn euler_maclaurin(t: &impl Fn(f64) -> f64, a: u64, b: u64) -> f64 {
    let (a, b) = (a as f64, b as f64);
    let integral = gauss_legendre_log(t, a, b);
    let deriv = |x: f64| {
        let h = 1e-3 * x;
        (t(x + h) - t(x - h)) / (2.0 * h)
    };
    integral + 0.5 * (t(b) - t(a)) + (deriv(b) - deriv(a)) / 12.0
}

fn gauss_legendre_log(t: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const NODES: [f64; 4] = [
        0.183_434_642_495_649_8,
        0.525_532_409_916_329_0,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_3,
    ];
    const WEIGHTS: [f64; 4] = [
        0.362_683_783_378_362_0,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_5,
        0.101_228_536_290_376_3,
    ];
    let (la, lb) = (a.ln(), b.ln());
    let panels = ((lb - la) / 0.125).ceil().max(1.0) as usize;
    let w = (lb - la) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = la + (p as f64 + 0.5) * w;
        let half = 0.5 * w;
        for (x, wt) in NODES.iter().zip(WEIGHTS.iter()) {
            for s in [-1.0, 1.0] {
                let y = mid + s * half * x;
                let n = y.exp();
                total += wt * half * t(n) * n;
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeqRng;

    #[test]
    fn single_level_field() {
        let s = ULevelSampler::new(2).unwrap();
        let (values, probs) = s.pmf().unwrap();
        assert_eq!(values.len(), 2);
        assert_eq!(probs[1], 0.125);
        assert_eq!(values[1], 2.0 / (2f64.ln() * 2f64.ln()));
        let mut rng = SeqRng::new(3);
        let mut hits = 0;
        let n = 200_000;
        for _ in 0..n {
            let v = s.sample(|| rng.uniform());
            assert!(v == 0.0 || v == values[1]);
            if v > 0.0 {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        assert!((p - 0.125).abs() < 4.0 * (0.125f64 * 0.875 / n as f64).sqrt());
    }

    #[test]
    fn tail_log_survival_matches_direct_sum() {
        let s = ULevelSampler::new(1 << 24).unwrap();
        let mut direct = s.log_survival(TABLE_CAP);
        for k in TABLE_CAP + 1..=(1 << 22) {
            direct += (-level_prob(k)).ln_1p();
        }
        assert!((s.log_survival(1 << 22) - direct).abs() < 1e-13);
    }

    #[test]
    fn sampler_matches_small_pmf() {
        let s = ULevelSampler::new(5).unwrap();
        let (values, probs) = s.pmf().unwrap();
        let mean: f64 = values.iter().zip(&probs).map(|(v, p)| v * p).sum();
        let mut rng = SeqRng::new(11);
        let n = 400_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..n {
            let v = s.sample(|| rng.uniform());
            acc += v;
            acc2 += v * v;
        }
        let m = acc / n as f64;
        let sd = ((acc2 / n as f64 - m * m) / n as f64).sqrt();
        assert!((m - mean).abs() < 4.0 * sd, "{m} vs {mean}");
    }

    #[test]
    fn smallest_level_is_minimal() {
        for t in [5.0, 50.0, 1e4, 1e8, 3.3e9] {
            let n = smallest_level_at_least(t, 9);
            assert!(level_value(n) >= t);
            assert!(n == 9 || level_value(n - 1) < t);
        }
    }

    #[test]
    fn euler_maclaurin_agrees_with_direct_summation() {
        let h = |x: f64| x * (1.0 + x).ln().sqrt();
        let top = 1u64 << 23;
        let series = level_series(top, &[top], h).unwrap()[0];
        let mut direct = 0.0;
        for n in 2..=top {
            let l = (n as f64).ln();
            direct += 0.5 / ((n as f64) * (n as f64)) * h(n as f64 / (l * l));
        }
        assert!((series - direct).abs() < 1e-11, "{series} vs {direct}");
    }
}
