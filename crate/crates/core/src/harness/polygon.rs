//! Simple-polygon area, validity and intersection-over-union.

use crate::geometry::Point2;

/// Signed shoelace area; positive for counter-clockwise in y-up axes.
pub fn signed_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].x * poly[(i + 1) % n].y - poly[(i + 1) % n].x * poly[i].y).sum::<f64>() / 2.0
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn segments_cross(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let (d1, d2) = (cross(a, b, c), cross(a, b, d));
    let (d3, d4) = (cross(c, d, a), cross(c, d, b));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: Point2, q: Point2, r: Point2| {
        cross(p, q, r).abs() <= 1e-12 && r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    on(a, b, c) || on(a, b, d) || on(c, d, a) || on(c, d, b)
}

/// At least three finite vertices, non-zero area, and no two non-adjacent
/// edges touching.
pub fn is_simple(poly: &[Point2]) -> bool {
    let n = poly.len();
    if n < 3 || poly.iter().any(|p| !p.is_finite()) || signed_area(poly).abs() <= 1e-12 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if a == b {
            return false;
        }
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_cross(a, b, poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

fn point_in_triangle(p: Point2, a: Point2, b: Point2, c: Point2) -> bool {
    cross(a, b, p) >= 0.0 && cross(b, c, p) >= 0.0 && cross(c, a, p) >= 0.0
}

/// Ear-clipping triangulation of a simple polygon, returned counter-clockwise.
pub fn triangulate(poly: &[Point2]) -> Option<Vec<[Point2; 3]>> {
    if !is_simple(poly) {
        return None;
    }
    let mut v: Vec<Point2> = poly.to_vec();
    if signed_area(&v) < 0.0 {
        v.reverse();
    }
    let mut tris = Vec::with_capacity(v.len() - 2);
    while v.len() > 3 {
        let n = v.len();
        let mut clipped = false;
        for i in 0..n {
            let (a, b, c) = (v[(i + n - 1) % n], v[i], v[(i + 1) % n]);
            if cross(a, b, c) <= 0.0 {
                continue;
            }
            let blocked = (0..n).any(|j| {
                j != i && j != (i + n - 1) % n && j != (i + 1) % n && point_in_triangle(v[j], a, b, c)
            });
            if !blocked {
                tris.push([a, b, c]);
                v.remove(i);
                clipped = true;
                break;
            }
        }
        if !clipped {
            // collinear remainder; drop a flat vertex
            let n = v.len();
            match (0..n).find(|&i| cross(v[(i + n - 1) % n], v[i], v[(i + 1) % n]).abs() <= 1e-12) {
                Some(i) => {
                    v.remove(i);
                }
                None => return None,
            }
        }
    }
    if cross(v[0], v[1], v[2]) > 0.0 {
        tris.push([v[0], v[1], v[2]]);
    }
    Some(tris)
}

/// Sutherland–Hodgman clip of `subject` by a counter-clockwise convex `clip`.
pub fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut out = subject.to_vec();
    let m = clip.len();
    for e in 0..m {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[e], clip[(e + 1) % m]);
        let input = std::mem::take(&mut out);
        let k = input.len();
        for i in 0..k {
            let (p, q) = (input[i], input[(i + 1) % k]);
            let (fp, fq) = (cross(a, b, p), cross(a, b, q));
            if fp >= 0.0 {
                out.push(p);
            }
            if (fp >= 0.0) != (fq >= 0.0) {
                let t = fp / (fp - fq);
                out.push(p + (q - p) * t);
            }
        }
    }
    out
}

/// Intersection area of two simple polygons via triangle-pair clipping.
pub fn intersection_area(a: &[Point2], b: &[Point2]) -> Option<f64> {
    let (ta, tb) = (triangulate(a)?, triangulate(b)?);
    let mut area = 0.0;
    for x in &ta {
        for y in &tb {
            let c = clip_convex(x, y);
            if c.len() >= 3 {
                area += signed_area(&c).abs();
            }
        }
    }
    Some(area)
}

/// `None` when either polygon is not simple.
pub fn polygon_iou(a: &[Point2], b: &[Point2]) -> Option<f64> {
    let inter = intersection_area(a, b)?;
    let union = signed_area(a).abs() + signed_area(b).abs() - inter;
    Some(if union > 0.0 { (inter / union).clamp(0.0, 1.0) } else { 0.0 })
}

/// Even-odd containment test.
pub fn contains(poly: &[Point2], q: Point2) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a.y > q.y) != (b.y > q.y) && q.x < (b.x - a.x) * (q.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
    }
    inside
}

/// Point halfway along a polyline by arc length.
pub fn polyline_midpoint(line: &[Point2]) -> Option<Point2> {
    let first = *line.first()?;
    let total: f64 = line.windows(2).map(|w| w[0].distance(w[1])).sum();
    if total <= 0.0 {
        return Some(first);
    }
    let mut left = total / 2.0;
    for w in line.windows(2) {
        let d = w[0].distance(w[1]);
        if d >= left && d > 0.0 {
            return Some(w[0].lerp(w[1], left / d));
        }
        left -= d;
    }
    line.last().copied()
}
