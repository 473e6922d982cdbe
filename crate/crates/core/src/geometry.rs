use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        libm::hypot(self.x - other.x, self.y - other.y)
    }

    pub fn dist_l1(self, other: Point) -> f64 {
        libm::fabs(self.x - other.x) + libm::fabs(self.y - other.y)
    }

    pub fn is_nan(self) -> bool {
        self.x.is_nan() || self.y.is_nan()
    }
}

impl core::ops::Sub for Point {
    type Output = Point;

    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl core::ops::Add for Point {
    type Output = Point;

    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

/// Axis-aligned extent `[min.x, min.x + width) x [min.y, min.y + height)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min: Point,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn new(min: Point, width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::EmptyExtent);
        }
        Ok(Self { min, width, height })
    }

    /// Extent of a token set where every token owns one unit cell, so the
    /// extent of tokens spanning `0..=55` is 56 wide.
    pub fn of_tokens(points: &[Point]) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyInput("positions"))?;
        let (mut lo, mut hi) = (*first, *first);
        for p in points {
            if p.is_nan() {
                return Err(Error::NanCoordinate);
            }
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        Self::new(lo, hi.x - lo.x + 1.0, hi.y - lo.y + 1.0)
    }

    pub fn center(&self) -> Point {
        Point::new(self.min.x + 0.5 * self.width, self.min.y + 0.5 * self.height)
    }
}
