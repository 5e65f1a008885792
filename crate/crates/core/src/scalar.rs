//! Number types shared by the exact and floating enumeration paths.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Arithmetic needed to evaluate field functionals and average them.
pub trait Scalar:
    Clone
    + fmt::Debug
    + PartialEq
    + PartialOrd
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    fn zero() -> Self;
    fn one() -> Self;
    /// Exact for [`Exact`]: every finite double is a dyadic rational.
    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn abs(&self) -> Self;
    fn is_zero(&self) -> bool;
    fn is_positive(&self) -> bool;
    /// Square root. [`Exact`] rounds through `f64`.
    fn sqrt(&self) -> Self;
    fn from_exact(x: &Exact) -> Self;
    fn to_exact(&self) -> Exact;
    /// Store a table of values without losing precision.
    fn pack(values: Vec<Self>) -> TableValues;
}

/// Stored values of a tabulated functional.
#[derive(Clone, Debug, PartialEq)]
pub enum TableValues {
    Float(Vec<f64>),
    Exact(Vec<Exact>),
}

impl TableValues {
    pub fn len(&self) -> usize {
        match self {
            TableValues::Float(v) => v.len(),
            TableValues::Exact(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get<T: Scalar>(&self, i: usize) -> T {
        match self {
            TableValues::Float(v) => T::from_f64(v[i]),
            TableValues::Exact(v) => T::from_exact(&v[i]),
        }
    }

    pub fn get_f64(&self, i: usize) -> f64 {
        match self {
            TableValues::Float(v) => v[i],
            TableValues::Exact(v) => v[i].to_f64(),
        }
    }
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn is_positive(&self) -> bool {
        *self > 0.0
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn from_exact(x: &Exact) -> Self {
        x.to_f64()
    }
    fn to_exact(&self) -> Exact {
        Exact::from_f64(*self)
    }
    fn pack(values: Vec<Self>) -> TableValues {
        TableValues::Float(values)
    }
}

/// Arbitrary-precision rational.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Exact(pub BigRational);

impl fmt::Debug for Exact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for Exact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Add for Exact {
    type Output = Exact;
    fn add(self, rhs: Exact) -> Exact {
        Exact(self.0 + rhs.0)
    }
}

impl Sub for Exact {
    type Output = Exact;
    fn sub(self, rhs: Exact) -> Exact {
        Exact(self.0 - rhs.0)
    }
}

impl Mul for Exact {
    type Output = Exact;
    fn mul(self, rhs: Exact) -> Exact {
        Exact(self.0 * rhs.0)
    }
}

impl Neg for Exact {
    type Output = Exact;
    fn neg(self) -> Exact {
        Exact(-self.0)
    }
}

impl Scalar for Exact {
    fn zero() -> Self {
        Exact(BigRational::zero())
    }
    fn one() -> Self {
        Exact(BigRational::one())
    }
    fn from_f64(x: f64) -> Self {
        Exact(BigRational::from_float(x).expect("finite value"))
    }
    fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }
    fn abs(&self) -> Self {
        Exact(self.0.abs())
    }
    fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
    fn is_positive(&self) -> bool {
        self.0.is_positive()
    }
    fn sqrt(&self) -> Self {
        Exact::from_f64(self.to_f64().sqrt())
    }
    fn from_exact(x: &Exact) -> Self {
        x.clone()
    }
    fn to_exact(&self) -> Exact {
        self.clone()
    }
    fn pack(values: Vec<Self>) -> TableValues {
        TableValues::Exact(values)
    }
}

impl Exact {
    pub fn from_ratio(n: i64, d: i64) -> Self {
        Exact(BigRational::new(BigInt::from(n), BigInt::from(d)))
    }
}
