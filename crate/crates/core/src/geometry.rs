//! Axis-aligned boxes in absolute pixel `xyxy` form.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// Axis-aligned box with `x1 < x2`, `y1 < y2` and finite coordinates.
///
/// Fields are private so every instance upholds the invariant; use
/// [`BoundingBox::new`] or one of the converting constructors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundingBox<T> {
    x1: T,
    y1: T,
    x2: T,
    y2: T,
}

fn invalid<T: Scalar>(x1: T, y1: T, x2: T, y2: T, reason: &'static str) -> CoreError {
    CoreError::InvalidBox {
        x1: x1.as_f64(),
        y1: y1.as_f64(),
        x2: x2.as_f64(),
        y2: y2.as_f64(),
        reason,
    }
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Result<Self> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(invalid(x1, y1, x2, y2, "non-finite coordinate"));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(invalid(x1, y1, x2, y2, "zero or negative extent"));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// From COCO `[x, y, w, h]`.
    pub fn from_xywh(x: T, y: T, w: T, h: T) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    /// From normalized center form (`cx, cy, w, h` in `[0, 1]`) as emitted by
    /// DETR-style heads, scaled to an image of `width x height` pixels.
    pub fn from_normalized_cxcywh(cx: T, cy: T, w: T, h: T, width: T, height: T) -> Result<Self> {
        let half = T::lit(0.5);
        Self::new(
            (cx - w * half) * width,
            (cy - h * half) * height,
            (cx + w * half) * width,
            (cy + h * half) * height,
        )
    }

    pub fn x1(&self) -> T {
        self.x1
    }
    pub fn y1(&self) -> T {
        self.y1
    }
    pub fn x2(&self) -> T {
        self.x2
    }
    pub fn y2(&self) -> T {
        self.y2
    }

    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    /// Pixel area, always strictly positive.
    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn to_xyxy(&self) -> [T; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn to_xywh(&self) -> [T; 4] {
        [self.x1, self.y1, self.width(), self.height()]
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= T::zero() || h <= T::zero() {
            T::zero()
        } else {
            w * h
        }
    }

    /// Intersection over union, in `[0, 1]`.
    pub fn iou(&self, other: &Self) -> T {
        let inter = self.intersection_area(other);
        if inter <= T::zero() {
            return T::zero();
        }
        let union = self.area() + other.area() - inter;
        (inter / union).min(T::one())
    }

    pub fn translate(&self, dx: T, dy: T) -> Result<Self> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    /// Grows the box by `pad` pixels on every side.
    pub fn expand(&self, pad: T) -> Result<Self> {
        Self::new(self.x1 - pad, self.y1 - pad, self.x2 + pad, self.y2 + pad)
    }

    /// Clips to `[0, width] x [0, height]`; `None` when nothing is left.
    pub fn clip(&self, width: T, height: T) -> Option<Self> {
        let zero = T::zero();
        Self::new(
            self.x1.max(zero),
            self.y1.max(zero),
            self.x2.min(width),
            self.y2.min(height),
        )
        .ok()
    }

    pub fn cast<U: Scalar>(&self) -> BoundingBox<U> {
        BoundingBox {
            x1: U::lit(self.x1.as_f64()),
            y1: U::lit(self.y1.as_f64()),
            x2: U::lit(self.x2.as_f64()),
            y2: U::lit(self.y2.as_f64()),
        }
    }
}

impl<'de, T: Scalar + Deserialize<'de>> Deserialize<'de> for BoundingBox<T> {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw<T> {
            x1: T,
            y1: T,
            x2: T,
            y2: T,
        }
        let raw = Raw::<T>::deserialize(de)?;
        BoundingBox::new(raw.x1, raw.y1, raw.x2, raw.y2).map_err(serde::de::Error::custom)
    }
}

/// Area of a box, the quantity gating small-object calibration.
pub fn box_area<T: Scalar>(b: &BoundingBox<T>) -> T {
    b.area()
}

pub fn iou<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    a.iou(b)
}
