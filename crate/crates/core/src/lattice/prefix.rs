use ndarray::ArrayViewD;

use super::{IndexVec, Rect};
use crate::error::{Error, Result};

/// Default upper bound on lattice dimension accepted by table construction.
pub const DEFAULT_MAX_DIM: usize = 3;

const BLOCK: usize = 32;

/// Summed-area table over a d-dimensional window.
///
/// `cumulative` has shape `n_i + 1` per axis; the entry at padded position
/// `p` holds the sum of all window cells whose offset from `window.lo` is
/// strictly below `p` on every axis. Rows along the innermost axis are
/// accumulated blockwise so rounding error grows with the logarithm of the
/// row length rather than linearly.
#[derive(Clone, Debug)]
pub struct PrefixSumTable {
    window: Rect,
    padded_shape: Vec<usize>,
    padded_strides: Vec<usize>,
    cumulative: Vec<f64>,
}

impl PrefixSumTable {
    /// Build from an array whose shape must equal the window shape.
    pub fn build(window: &Rect, values: ArrayViewD<'_, f64>) -> Result<Self> {
        Self::build_with_max_dim(window, values, DEFAULT_MAX_DIM)
    }

    pub fn build_with_max_dim(
        window: &Rect,
        values: ArrayViewD<'_, f64>,
        max_dim: usize,
    ) -> Result<Self> {
        if values.shape() != window.shape().as_slice() {
            return Err(Error::Structural(format!(
                "array shape {:?} does not match window {} of shape {:?}",
                values.shape(),
                window,
                window.shape()
            )));
        }
        match values.as_slice() {
            Some(s) => Self::from_row_major_with_max_dim(window, s, max_dim),
            None => {
                let owned: Vec<f64> = values.iter().copied().collect();
                Self::from_row_major_with_max_dim(window, &owned, max_dim)
            }
        }
    }

    /// Build from row-major values (last axis fastest).
    pub fn from_row_major(window: &Rect, values: &[f64]) -> Result<Self> {
        Self::from_row_major_with_max_dim(window, values, DEFAULT_MAX_DIM)
    }

    pub fn from_row_major_with_max_dim(
        window: &Rect,
        values: &[f64],
        max_dim: usize,
    ) -> Result<Self> {
        let d = window.dim();
        if d == 0 || d > max_dim {
            return Err(Error::Structural(format!(
                "dimension {d} outside the supported range 1..={max_dim}"
            )));
        }
        if window.is_empty() {
            return Err(Error::Parameter(format!("window {window} is empty")));
        }
        if values.len() != window.volume() {
            return Err(Error::Structural(format!(
                "{} values supplied for a window of volume {}",
                values.len(),
                window.volume()
            )));
        }
        let shape = window.shape();
        let padded_shape: Vec<usize> = shape.iter().map(|n| n + 1).collect();
        let mut padded_strides = vec![1usize; d];
        for axis in (0..d - 1).rev() {
            padded_strides[axis] = padded_strides[axis + 1] * padded_shape[axis + 1];
        }
        let total: usize = padded_shape.iter().product();
        let mut cum = vec![0.0f64; total];

        // Scatter each input row into its padded slot and accumulate it.
        let row_len = shape[d - 1];
        let rows = values.len() / row_len;
        let mut outer = vec![0usize; d - 1];
        for r in 0..rows {
            let mut base = 1; // +1 on the innermost axis
            for (axis, &o) in outer.iter().enumerate() {
                base += (o + 1) * padded_strides[axis];
            }
            let dst = &mut cum[base..base + row_len];
            dst.copy_from_slice(&values[r * row_len..(r + 1) * row_len]);
            blocked_prefix(dst);
            // advance the outer multi-index
            for axis in (0..d - 1).rev() {
                outer[axis] += 1;
                if outer[axis] < shape[axis] {
                    break;
                }
                outer[axis] = 0;
            }
        }

        // Running sums along every outer axis.
        for axis in (0..d - 1).rev() {
            let stride = padded_strides[axis];
            let len = padded_shape[axis];
            let outer_count = total / (stride * len);
            for o in 0..outer_count {
                let base = o * stride * len;
                for i in 1..len {
                    let (prev, cur) = cum[base + (i - 1) * stride..base + (i + 1) * stride]
                        .split_at_mut(stride);
                    for (c, p) in cur.iter_mut().zip(prev.iter()) {
                        *c += *p;
                    }
                }
            }
        }

        Ok(PrefixSumTable {
            window: window.clone(),
            padded_shape,
            padded_strides,
            cumulative: cum,
        })
    }

    pub fn window(&self) -> &Rect {
        &self.window
    }

    pub fn dim(&self) -> usize {
        self.window.dim()
    }

    /// Cumulative value at padded position `p` (each `p_i` in `0..=n_i`).
    pub fn cumulative_at(&self, p: &[usize]) -> f64 {
        let idx: usize = p
            .iter()
            .zip(&self.padded_strides)
            .map(|(a, s)| a * s)
            .sum();
        self.cumulative[idx]
    }

    /// Sum of the window cells inside `r` by inclusion–exclusion over the
    /// `2^d` corners.
    pub fn rect_sum(&self, r: &Rect) -> Result<f64> {
        if r.dim() != self.dim() {
            return Err(Error::Structural(format!(
                "rectangle of dimension {} queried on a table of dimension {}",
                r.dim(),
                self.dim()
            )));
        }
        if r.is_empty() {
            return Ok(0.0);
        }
        if !self.window.contains_rect(r) {
            return Err(Error::Range(format!(
                "rectangle {r} is not inside the window {}",
                self.window
            )));
        }
        let d = self.dim();
        let lo: Vec<usize> = (0..d)
            .map(|a| (r.lo().get(a) - self.window.lo().get(a)) as usize)
            .collect();
        let hi: Vec<usize> = (0..d)
            .map(|a| (r.hi().get(a) - self.window.lo().get(a)) as usize)
            .collect();
        let mut total = 0.0;
        for mask in 0..(1usize << d) {
            let mut idx = 0usize;
            for a in 0..d {
                let c = if mask & (1 << a) != 0 { lo[a] } else { hi[a] };
                idx += c * self.padded_strides[a];
            }
            let v = self.cumulative[idx];
            if mask.count_ones() % 2 == 0 {
                total += v;
            } else {
                total -= v;
            }
        }
        Ok(total)
    }

    /// Sum over `[0, sizes)` in absolute lattice coordinates.
    pub fn origin_sum(&self, sizes: &[usize]) -> Result<f64> {
        self.rect_sum(&Rect::origin_box(sizes))
    }

    /// Total over the whole window.
    pub fn total(&self) -> f64 {
        *self.cumulative.last().expect("non-empty table")
    }

    pub fn padded_shape(&self) -> &[usize] {
        &self.padded_shape
    }

    /// Absolute lattice point corresponding to padded position `p`.
    pub fn corner_point(&self, p: &[usize]) -> IndexVec {
        IndexVec::new(
            p.iter()
                .enumerate()
                .map(|(a, &x)| self.window.lo().get(a) + x as i64)
                .collect::<Vec<_>>(),
        )
    }
}

/// In-place inclusive prefix sum, accumulated in blocks of `BLOCK` with the
/// block totals themselves prefixed recursively.
pub(crate) fn blocked_prefix(xs: &mut [f64]) {
    if xs.len() <= BLOCK {
        let mut acc = 0.0;
        for x in xs.iter_mut() {
            acc += *x;
            *x = acc;
        }
        return;
    }
    let mut totals = Vec::with_capacity(xs.len().div_ceil(BLOCK));
    for chunk in xs.chunks_mut(BLOCK) {
        let mut acc = 0.0;
        for x in chunk.iter_mut() {
            acc += *x;
            *x = acc;
        }
        totals.push(acc);
    }
    blocked_prefix(&mut totals);
    for (b, chunk) in xs.chunks_mut(BLOCK).enumerate().skip(1) {
        let offset = totals[b - 1];
        for x in chunk.iter_mut() {
            *x += offset;
        }
    }
}
