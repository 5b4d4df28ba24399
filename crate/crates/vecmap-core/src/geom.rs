//! Polyline kernels: arc-length resampling, rigid transforms, Chamfer
//! distance, and convex hulls.

use thiserror::Error;

use crate::scene::{Polyline, Pose2, Pt};

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("cannot resample a degenerate polyline of length {0}")]
    DegenerateCurve(f64),
    #[error("resample count must be >= 2, got {0}")]
    BadCount(usize),
    #[error("convex hull needs at least 3 non-collinear points")]
    CollinearHull,
    #[error("chamfer inputs must have equal point counts ({0} vs {1})")]
    CountMismatch(usize, usize),
}

/// A curve resampled to equally spaced points along its arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledCurve {
    pub points: Vec<Pt>,
}

impl ResampledCurve {
    pub fn as_open_polyline(&self) -> Polyline {
        Polyline::open(self.points.clone())
    }
}

/// Resample to `n` points equally spaced in arc length. Open curves keep
/// their exact endpoints; closed curves use spacing perimeter/n starting at
/// vertex 0 (the seam point is not repeated).
pub fn resample(poly: &Polyline, n: usize) -> Result<ResampledCurve, GeomError> {
    if n < 2 {
        return Err(GeomError::BadCount(n));
    }
    let total = poly.length();
    if total <= 0.0 {
        return Err(GeomError::DegenerateCurve(total));
    }

    let segs: Vec<(Pt, Pt, f64)> = poly
        .segments()
        .map(|(a, b)| (a, b, a.dist(b)))
        .filter(|&(_, _, l)| l > 0.0)
        .collect();

    let step = if poly.closed {
        total / n as f64
    } else {
        total / (n - 1) as f64
    };
    let mut out = Vec::with_capacity(n);
    let mut seg_idx = 0;
    let mut seg_start = 0.0; // arc length at the start of segs[seg_idx]
    for k in 0..n {
        let target = step * k as f64;
        while seg_idx + 1 < segs.len() && seg_start + segs[seg_idx].2 < target {
            seg_start += segs[seg_idx].2;
            seg_idx += 1;
        }
        let (a, b, len) = segs[seg_idx];
        let t = ((target - seg_start) / len).clamp(0.0, 1.0);
        out.push(a + (b - a) * t);
    }
    if !poly.closed {
        // Guard the far endpoint against accumulated float drift.
        *out.last_mut().unwrap() = *poly.points.last().unwrap();
    }
    Ok(ResampledCurve { points: out })
}

/// Apply a rigid transform to a point list.
pub fn transform(points: &[Pt], pose: &Pose2) -> Vec<Pt> {
    points.iter().map(|&p| pose.apply(p)).collect()
}

pub fn transform_polyline(poly: &Polyline, pose: &Pose2) -> Polyline {
    Polyline {
        points: transform(&poly.points, pose),
        closed: poly.closed,
    }
}

/// Symmetric Chamfer distance between two equally sized point sets:
/// the mean over both directions of nearest-neighbor distances,
/// (1/2n) * [sum_i min_j |a_i - b_j| + sum_j min_i |b_j - a_i|].
pub fn chamfer(a: &ResampledCurve, b: &ResampledCurve) -> Result<f64, GeomError> {
    if a.points.len() != b.points.len() {
        return Err(GeomError::CountMismatch(a.points.len(), b.points.len()));
    }
    let n = a.points.len();
    let dir = |xs: &[Pt], ys: &[Pt]| -> f64 {
        xs.iter()
            .map(|&p| ys.iter().map(|&q| p.dist(q)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
    };
    Ok((dir(&a.points, &b.points) + dir(&b.points, &a.points)) / (2 * n) as f64)
}

/// Convex hull in counter-clockwise order with no duplicate or collinear
/// vertices (Andrew's monotone chain). Errors when all points are collinear.
pub fn convex_hull(points: &[Pt]) -> Result<Polyline, GeomError> {
    let mut pts: Vec<Pt> = points.to_vec();
    pts.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
    pts.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    if pts.len() < 3 {
        return Err(GeomError::CollinearHull);
    }

    let cross = |o: Pt, a: Pt, b: Pt| (a - o).cross(b - o);
    let mut hull: Vec<Pt> = Vec::with_capacity(pts.len() * 2);
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    // Upper chain; must not pop into the lower chain.
    let t = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= t && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop(); // last point repeats the first
    if hull.len() < 3 {
        return Err(GeomError::CollinearHull);
    }
    Ok(Polyline::closed(hull))
}

/// Distance from `p` to the segment `ab`.
pub fn point_segment_distance(p: Pt, a: Pt, b: Pt) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 <= 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

/// Closest-point parameter of `p` on segment `ab`, unclamped. Together with
/// the clamped distance this supports arc-length projection with signed
/// overshoot at the ends.
pub fn segment_param(p: Pt, a: Pt, b: Pt) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 <= 0.0 {
        0.0
    } else {
        (p - a).dot(ab) / len2
    }
}
