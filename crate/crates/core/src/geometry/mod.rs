//! Oriented boxes and the geometry the pipeline needs around them.
//!
//! Angle convention: `theta` is in radians, measured from the image x-axis
//! to the box's local x-axis (the `w` edge), and normalized to
//! `[-π/2, π/2)`. Image coordinates have y pointing down; "counterclockwise"
//! below refers to the positive orientation of the shoelace formula in these
//! coordinates.

mod nms;
mod polygon;

use std::f64::consts::{FRAC_PI_2, PI};

pub use nms::{argmax, nms_rotated, DEFAULT_NMS_IOU};
pub use polygon::{clip_convex, polygon_area, rotated_iou, Point};

use crate::error::{Error, Result};

/// Maps any angle onto `[-π/2, π/2)`. A rectangle rotated by π is the same
/// rectangle, so this loses nothing.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta - PI * ((theta + FRAC_PI_2) / PI).floor();
    if t >= FRAC_PI_2 {
        t -= PI;
    }
    if t < -FRAC_PI_2 {
        t += PI;
    }
    t
}

/// Rotated rectangle `{cx, cy, w, h, theta}` in pixels and radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl OrientedBox {
    /// Validates sizes and normalizes the angle.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite() && theta.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite parameters ({cx}, {cy}, {theta})"
            )));
        }
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(Error::InvalidBox(format!("sizes must be positive, got w={w} h={h}")));
        }
        Ok(OrientedBox {
            cx,
            cy,
            w,
            h,
            theta: normalize_angle(theta),
        })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corner points, counterclockwise, starting from the local `(-w/2, -h/2)`
    /// corner.
    pub fn corners(&self) -> [Point; 4] {
        let (s, c) = self.theta.sin_cos();
        let hw = self.w / 2.0;
        let hh = self.h / 2.0;
        let local = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)];
        local.map(|(lx, ly)| Point {
            x: self.cx + lx * c - ly * s,
            y: self.cy + lx * s + ly * c,
        })
    }

    /// Tight axis-aligned box around the rotated rectangle:
    /// `w' = w|cos θ| + h|sin θ|`, `h' = w|sin θ| + h|cos θ|`.
    pub fn to_horizontal(&self) -> HorizontalBox {
        let (s, c) = self.theta.sin_cos();
        let (s, c) = (s.abs(), c.abs());
        HorizontalBox {
            cx: self.cx,
            cy: self.cy,
            w: self.w * c + self.h * s,
            h: self.w * s + self.h * c,
        }
    }

    /// Mirror image under a horizontal flip of an image `width` pixels wide.
    pub fn mirrored(&self, width: f64) -> OrientedBox {
        OrientedBox {
            cx: width - self.cx,
            cy: self.cy,
            w: self.w,
            h: self.h,
            theta: normalize_angle(-self.theta),
        }
    }

    /// True when `p` lies inside or on the rectangle (within `eps`).
    pub fn contains(&self, p: Point, eps: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let dx = p.x - self.cx;
        let dy = p.y - self.cy;
        let lx = dx * c + dy * s;
        let ly = -dx * s + dy * c;
        lx.abs() <= self.w / 2.0 + eps && ly.abs() <= self.h / 2.0 + eps
    }
}

/// Axis-aligned box in centre/size form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizontalBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl HorizontalBox {
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        HorizontalBox {
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn x0(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn y0(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn x1(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn y1(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn contains(&self, p: Point, eps: f64) -> bool {
        p.x >= self.x0() - eps && p.x <= self.x1() + eps && p.y >= self.y0() - eps && p.y <= self.y1() + eps
    }
}

/// Intersection of `b` with `[0, width] × [0, height]`, or `None` when the
/// overlap has zero area.
pub fn clip_to_image(b: &HorizontalBox, width: f64, height: f64) -> Option<HorizontalBox> {
    let x0 = b.x0().max(0.0);
    let y0 = b.y0().max(0.0);
    let x1 = b.x1().min(width);
    let y1 = b.y1().min(height);
    if x1 > x0 && y1 > y0 {
        Some(HorizontalBox::from_corners(x0, y0, x1, y1))
    } else {
        None
    }
}

/// A box with a per-class score vector, as produced by a detector.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: OrientedBox,
    pub scores: Vec<f64>,
}

impl Detection {
    pub fn new(bbox: OrientedBox, scores: Vec<f64>) -> Self {
        Detection { bbox, scores }
    }

    /// `(class, score)` of the top class; ties go to the lowest index.
    pub fn top(&self) -> (usize, f64) {
        let k = argmax(&self.scores);
        (k, self.scores[k])
    }
}
