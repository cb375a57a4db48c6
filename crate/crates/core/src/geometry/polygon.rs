//! Convex polygon clipping (Sutherland–Hodgman) and rotated-box IoU.

use std::cmp::Ordering;

use super::OrientedBox;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[inline]
fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Signed shoelace area; positive for counterclockwise vertex order.
pub fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p.x * q.y - q.x * p.y;
    }
    acc / 2.0
}

/// Clips `subject` against the convex, counterclockwise polygon `clip`.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output: Vec<Point> = subject.to_vec();
    let mut input = Vec::with_capacity(subject.len() + clip.len());
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let edge_start = clip[i];
        let edge_end = clip[(i + 1) % clip.len()];
        std::mem::swap(&mut input, &mut output);
        output.clear();
        let mut prev = *input.last().expect("non-empty");
        let mut prev_side = cross(edge_start, edge_end, prev);
        for &cur in input.iter() {
            let cur_side = cross(edge_start, edge_end, cur);
            if cur_side >= 0.0 {
                if prev_side < 0.0 {
                    output.push(intersect(prev, cur, prev_side, cur_side));
                }
                output.push(cur);
            } else if prev_side >= 0.0 {
                output.push(intersect(prev, cur, prev_side, cur_side));
            }
            prev = cur;
            prev_side = cur_side;
        }
    }
    output
}

#[inline]
fn intersect(p: Point, q: Point, dp: f64, dq: f64) -> Point {
    let t = dp / (dp - dq);
    Point {
        x: p.x + (q.x - p.x) * t,
        y: p.y + (q.y - p.y) * t,
    }
}

fn box_order(a: &OrientedBox, b: &OrientedBox) -> Ordering {
    a.cx.total_cmp(&b.cx)
        .then(a.cy.total_cmp(&b.cy))
        .then(a.w.total_cmp(&b.w))
        .then(a.h.total_cmp(&b.h))
        .then(a.theta.total_cmp(&b.theta))
}

/// Intersection over union of two rotated rectangles by exact polygon
/// clipping. Arguments are put in a canonical order first, so the result is
/// bitwise symmetric.
pub fn rotated_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (a, b) = match box_order(a, b) {
        Ordering::Equal => return 1.0,
        Ordering::Less => (a, b),
        Ordering::Greater => (b, a),
    };
    let area_a = a.area();
    let area_b = b.area();
    // Cheap reject on circumscribed circles.
    let ra = 0.5 * (a.w * a.w + a.h * a.h).sqrt();
    let rb = 0.5 * (b.w * b.w + b.h * b.h).sqrt();
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    if dx * dx + dy * dy > (ra + rb) * (ra + rb) {
        return 0.0;
    }
    let inter_poly = clip_convex(&a.corners(), &b.corners());
    let inter = polygon_area(&inter_poly).max(0.0);
    let union = area_a + area_b - inter;
    if inter <= 1e-12 * union.max(1.0) || union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
