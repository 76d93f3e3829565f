//! Points and distances on the flat torus `[-π, π)²`.

use std::f64::consts::PI;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};

pub const TWO_PI: f64 = 2.0 * PI;

/// Reduce a real coordinate to the canonical interval `[-π, π)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let mut y = (x + PI).rem_euclid(TWO_PI) - PI;
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if y >= PI {
        y -= TWO_PI;
    }
    y
}

/// A point on the 2-torus with both coordinates in `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TorusPoint {
    pub x1: f64,
    pub x2: f64,
}

impl TorusPoint {
    /// Builds a canonical point, wrapping both coordinates.
    pub fn new(x1: f64, x2: f64) -> Self {
        TorusPoint {
            x1: wrap(x1),
            x2: wrap(x2),
        }
    }

    pub const ORIGIN: TorusPoint = TorusPoint { x1: 0.0, x2: 0.0 };

    /// Euclidean length of the canonical representative, i.e. the torus
    /// distance to the origin.
    #[inline]
    pub fn norm(&self) -> f64 {
        self.x1.hypot(self.x2)
    }

    #[inline]
    pub fn norm_sq(&self) -> f64 {
        self.x1 * self.x1 + self.x2 * self.x2
    }

    /// Torus distance `min_k |x - y + 2πk|`; never exceeds `π√2`.
    #[inline]
    pub fn distance(&self, other: &TorusPoint) -> f64 {
        (*self - *other).norm()
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x1, self.x2]
    }

    /// Translate by an arbitrary real displacement and wrap.
    #[inline]
    pub fn shifted(&self, d1: f64, d2: f64) -> TorusPoint {
        TorusPoint::new(self.x1 + d1, self.x2 + d2)
    }
}

impl Sub for TorusPoint {
    type Output = TorusPoint;
    #[inline]
    fn sub(self, rhs: TorusPoint) -> TorusPoint {
        TorusPoint::new(self.x1 - rhs.x1, self.x2 - rhs.x2)
    }
}

impl Add for TorusPoint {
    type Output = TorusPoint;
    #[inline]
    fn add(self, rhs: TorusPoint) -> TorusPoint {
        TorusPoint::new(self.x1 + rhs.x1, self.x2 + rhs.x2)
    }
}

impl Neg for TorusPoint {
    type Output = TorusPoint;
    #[inline]
    fn neg(self) -> TorusPoint {
        TorusPoint::new(-self.x1, -self.x2)
    }
}
