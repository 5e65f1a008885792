use std::fmt;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// A point of the integer lattice `Z^d`.
///
/// The derived `Ord` is lexicographic and exists so points can key ordered
/// maps. The coordinatewise partial order used by quadrant sigma-fields is
/// [`IndexVec::le_all`].
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndexVec(SmallVec<[i64; 4]>);

impl IndexVec {
    pub fn new(coords: impl Into<Vec<i64>>) -> Self {
        let v: Vec<i64> = coords.into();
        IndexVec(SmallVec::from_vec(v))
    }

    pub fn from_slice(coords: &[i64]) -> Self {
        IndexVec(SmallVec::from_slice(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Self::splat(dim, 0)
    }

    pub fn splat(dim: usize, value: i64) -> Self {
        IndexVec(SmallVec::from_elem(value, dim))
    }

    /// Unit vector along `axis`.
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[axis] = 1;
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn get(&self, axis: usize) -> i64 {
        self.0[axis]
    }

    pub fn set(&mut self, axis: usize, value: i64) {
        self.0[axis] = value;
    }

    /// Coordinatewise `self <= other`.
    pub fn le_all(&self, other: &IndexVec) -> bool {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(other.0.iter()).all(|(a, b)| a <= b)
    }

    /// True when some coordinate of `self` is strictly below `other`'s.
    pub fn lags_somewhere(&self, other: &IndexVec) -> bool {
        self.0.iter().zip(other.0.iter()).any(|(a, b)| a < b)
    }

    /// Coordinatewise minimum.
    pub fn meet(&self, other: &IndexVec) -> IndexVec {
        IndexVec(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(a, b)| *a.min(b))
                .collect(),
        )
    }

    pub fn add(&self, other: &IndexVec) -> IndexVec {
        IndexVec(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(a, b)| a.saturating_add(*b))
                .collect(),
        )
    }

    pub fn sub(&self, other: &IndexVec) -> IndexVec {
        IndexVec(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(a, b)| a.saturating_sub(*b))
                .collect(),
        )
    }

    pub fn is_nonnegative(&self) -> bool {
        self.0.iter().all(|&c| c >= 0)
    }
}

impl fmt::Debug for IndexVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for IndexVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl From<Vec<i64>> for IndexVec {
    fn from(v: Vec<i64>) -> Self {
        IndexVec::new(v)
    }
}

impl<const N: usize> From<[i64; N]> for IndexVec {
    fn from(v: [i64; N]) -> Self {
        IndexVec::from_slice(&v)
    }
}

/// Half-open box `{k : lo <= k < hi}`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    lo: IndexVec,
    hi: IndexVec,
}

impl Rect {
    pub fn new(lo: impl Into<IndexVec>, hi: impl Into<IndexVec>) -> Result<Self> {
        let lo = lo.into();
        let hi = hi.into();
        if lo.dim() != hi.dim() {
            return Err(Error::Structural(format!(
                "rectangle corners have dimensions {} and {}",
                lo.dim(),
                hi.dim()
            )));
        }
        if lo.dim() == 0 {
            return Err(Error::Structural("rectangle of dimension 0".into()));
        }
        if !lo.le_all(&hi) {
            return Err(Error::Range(format!("rectangle corners {lo} and {hi} are not ordered")));
        }
        Ok(Rect { lo, hi })
    }

    /// `[0, sizes)`.
    pub fn origin_box(sizes: &[usize]) -> Self {
        Rect {
            lo: IndexVec::zeros(sizes.len()),
            hi: IndexVec::new(sizes.iter().map(|&s| s as i64).collect::<Vec<_>>()),
        }
    }

    pub fn lo(&self) -> &IndexVec {
        &self.lo
    }

    pub fn hi(&self) -> &IndexVec {
        &self.hi
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.lo
            .coords()
            .iter()
            .zip(self.hi.coords())
            .map(|(l, h)| (h - l) as usize)
            .collect()
    }

    pub fn volume(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.volume() == 0
    }

    pub fn contains(&self, k: &IndexVec) -> bool {
        k.dim() == self.dim()
            && self.lo.le_all(k)
            && k.coords().iter().zip(self.hi.coords()).all(|(a, b)| a < b)
    }

    /// Whether `other` lies inside `self`. Empty rectangles are contained in
    /// every rectangle of the same dimension.
    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.dim() == self.dim()
            && (other.is_empty() || (self.lo.le_all(&other.lo) && other.hi.le_all(&self.hi)))
    }

    /// Grow the box by `below[i]` cells under `lo` on each axis.
    pub fn extend_below(&self, below: &[i64]) -> Rect {
        let lo = IndexVec::new(
            self.lo
                .coords()
                .iter()
                .zip(below)
                .map(|(l, b)| l - b)
                .collect::<Vec<_>>(),
        );
        Rect {
            lo,
            hi: self.hi.clone(),
        }
    }

    /// Row-major linear offset of `k` (last axis fastest). `k` must be inside.
    pub fn linear_index(&self, k: &IndexVec) -> usize {
        let shape = self.shape();
        let mut idx = 0usize;
        for (axis, &n) in shape.iter().enumerate() {
            idx = idx * n + (k.get(axis) - self.lo.get(axis)) as usize;
        }
        idx
    }

    /// Row-major strides of the box.
    pub fn strides(&self) -> Vec<usize> {
        let shape = self.shape();
        let mut strides = vec![1usize; shape.len()];
        for axis in (0..shape.len().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * shape[axis + 1];
        }
        strides
    }

    /// All points in row-major order.
    pub fn points(&self) -> RectPoints {
        RectPoints {
            rect: self.clone(),
            next: if self.is_empty() {
                None
            } else {
                Some(self.lo.clone())
            },
        }
    }
}

impl fmt::Debug for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.lo, self.hi)
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

pub struct RectPoints {
    rect: Rect,
    next: Option<IndexVec>,
}

impl Iterator for RectPoints {
    type Item = IndexVec;

    fn next(&mut self) -> Option<IndexVec> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let d = succ.dim();
        let mut axis = d;
        loop {
            if axis == 0 {
                self.next = None;
                break;
            }
            axis -= 1;
            let v = succ.get(axis) + 1;
            if v < self.rect.hi.get(axis) {
                succ.set(axis, v);
                self.next = Some(succ);
                break;
            }
            succ.set(axis, self.rect.lo.get(axis));
        }
        Some(current)
    }
}
