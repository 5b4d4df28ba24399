//! Deterministic synthetic scene generation: a world of road elements
//! along a trajectory, projection into per-frame ego windows with oracle
//! track IDs, and a perturber that turns ground truth into predictions.

use thiserror::Error;

use crate::geom::resample;
use crate::rng::DetRng;
use crate::scene::{Element, ElementClass, Frame, Polyline, Pose2, Pt, Sequence, Window};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trajectory {
    Straight,
    Arc { radius: f64 },
    SCurve { radius: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub seed: u64,
    pub trajectory: Trajectory,
    /// Trajectory length in meters.
    pub length: f64,
    /// Ego pose spacing along the trajectory.
    pub frame_spacing: f64,
    pub lane_width: f64,
    pub crossing_spacing: f64,
    pub crossing_len: f64,
    /// Number of dividers between the boundaries; seeded 1..=3 when absent.
    pub dividers: Option<u32>,
}

impl WorldSpec {
    pub fn new(seed: u64, trajectory: Trajectory, length: f64) -> Self {
        WorldSpec {
            seed,
            trajectory,
            length,
            frame_spacing: 2.5,
            lane_width: 3.5,
            crossing_spacing: 20.0,
            crossing_len: 4.0,
            dividers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldElement {
    pub id: u64,
    pub class: ElementClass,
    /// Geometry in the global frame.
    pub geometry: Polyline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub elements: Vec<WorldElement>,
    pub trajectory: Vec<Pose2>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("degenerate world spec: {0}")]
    Degenerate(String),
}

/// Pose of the road centerline at arc length `s`: position plus heading.
fn pose_at(traj: Trajectory, length: f64, s: f64) -> Pose2 {
    match traj {
        Trajectory::Straight => Pose2::new(0.0, s, 0.0),
        Trajectory::Arc { radius } => {
            let phi = s / radius;
            Pose2::new(radius * (phi.cos() - 1.0), radius * phi.sin(), phi)
        }
        Trajectory::SCurve { radius } => {
            let half = length / 2.0;
            if s <= half {
                pose_at(Trajectory::Arc { radius }, length, s)
            } else {
                let m = pose_at(Trajectory::Arc { radius }, length, half);
                let (sin_m, cos_m) = m.yaw.sin_cos();
                let center = Pt::new(m.x + radius * cos_m, m.y + radius * sin_m);
                let phi = (s - half) / radius;
                let v = Pt::new(-radius * cos_m, -radius * sin_m);
                let (sin_p, cos_p) = phi.sin_cos();
                // Clockwise rotation of v by phi.
                let rotated = Pt::new(v.x * cos_p + v.y * sin_p, -v.x * sin_p + v.y * cos_p);
                Pose2::new(center.x + rotated.x, center.y + rotated.y, m.yaw - phi)
            }
        }
    }
}

const VERTEX_STEP: f64 = 1.0;
/// Clipped pieces shorter than this (or polygons with less area) are
/// treated as not yet visible, so tracks never start on slivers.
pub const MIN_VISIBLE_LEN: f64 = 1.0;
pub const MIN_VISIBLE_AREA: f64 = 1.0;

/// Deterministic world: two boundaries flanking the trajectory, 1-3
/// dividers between them, and crossings perpendicular to the road at the
/// configured spacing.
pub fn gen_world(spec: &WorldSpec) -> Result<World, SynthError> {
    if spec.length.is_nan() || spec.length <= 0.0 {
        return Err(SynthError::Degenerate(format!(
            "length {} must be > 0",
            spec.length
        )));
    }
    if spec.frame_spacing.is_nan() || spec.frame_spacing <= 0.0 {
        return Err(SynthError::Degenerate("frame spacing must be > 0".into()));
    }
    if spec.lane_width.is_nan() || spec.lane_width <= 0.0 {
        return Err(SynthError::Degenerate("lane width must be > 0".into()));
    }
    match spec.trajectory {
        Trajectory::Arc { radius } | Trajectory::SCurve { radius }
            if radius.is_nan() || radius <= 0.0 =>
        {
            return Err(SynthError::Degenerate("arc radius must be > 0".into()));
        }
        _ => {}
    }
    if spec.crossing_spacing.is_nan() || spec.crossing_spacing <= spec.crossing_len {
        return Err(SynthError::Degenerate(
            "crossing spacing must exceed crossing length".into(),
        ));
    }

    let mut rng = DetRng::new(spec.seed).fork(&[0x57_52_4C_44]);
    let dividers = spec.dividers.unwrap_or_else(|| 1 + rng.below(3) as u32);
    let road_half = (dividers + 1) as f64 * spec.lane_width / 2.0;

    let line_points = |offset: f64| -> Vec<Pt> {
        let mut pts = Vec::new();
        let steps = (spec.length / VERTEX_STEP).ceil() as usize;
        for k in 0..=steps {
            let s = (k as f64 * VERTEX_STEP).min(spec.length);
            pts.push(pose_at(spec.trajectory, spec.length, s).apply(Pt::new(offset, 0.0)));
        }
        pts.dedup_by(|a, b| a.dist(*b) < 1e-9);
        pts
    };

    let mut elements = Vec::new();
    let mut next_id = 0u64;
    let mut push = |elements: &mut Vec<WorldElement>, class, geometry| {
        elements.push(WorldElement {
            id: next_id,
            class,
            geometry,
        });
        next_id += 1;
    };

    for offset in [-road_half, road_half] {
        push(
            &mut elements,
            ElementClass::Boundary,
            Polyline::open(line_points(offset)),
        );
    }
    for i in 1..=dividers {
        let offset = -road_half + i as f64 * spec.lane_width;
        push(
            &mut elements,
            ElementClass::Divider,
            Polyline::open(line_points(offset)),
        );
    }

    let h = spec.crossing_len / 2.0;
    let phase = spec.crossing_spacing * rng.uniform(0.35, 0.65);
    let mut s0 = phase;
    while s0 + h <= spec.length - 1.0 {
        if s0 - h >= 1.0 {
            let near = pose_at(spec.trajectory, spec.length, s0 - h);
            let far = pose_at(spec.trajectory, spec.length, s0 + h);
            let corners = vec![
                near.apply(Pt::new(road_half, 0.0)),
                far.apply(Pt::new(road_half, 0.0)),
                far.apply(Pt::new(-road_half, 0.0)),
                near.apply(Pt::new(-road_half, 0.0)),
            ];
            push(
                &mut elements,
                ElementClass::Crossing,
                Polyline::closed(corners),
            );
        }
        s0 += spec.crossing_spacing;
    }

    let steps = (spec.length / spec.frame_spacing + 1e-9).floor() as usize;
    let trajectory = (0..=steps)
        .map(|k| pose_at(spec.trajectory, spec.length, k as f64 * spec.frame_spacing))
        .collect();

    Ok(World {
        elements,
        trajectory,
    })
}

fn lb_axis(p: f64, d: f64, lo: f64, hi: f64, t0: &mut f64, t1: &mut f64) -> bool {
    if d == 0.0 {
        return p >= lo && p <= hi;
    }
    let ta = (lo - p) / d;
    let tb = (hi - p) / d;
    let (ta, tb) = if ta <= tb { (ta, tb) } else { (tb, ta) };
    *t0 = t0.max(ta);
    *t1 = t1.min(tb);
    true
}

/// Liang-Barsky clip of segment pq to the centered rectangle.
fn clip_segment(p: Pt, q: Pt, hw: f64, hl: f64) -> Option<(f64, f64)> {
    let d = q - p;
    let mut t0 = 0.0;
    let mut t1 = 1.0;
    if !lb_axis(p.x, d.x, -hw, hw, &mut t0, &mut t1) {
        return None;
    }
    if !lb_axis(p.y, d.y, -hl, hl, &mut t0, &mut t1) {
        return None;
    }
    if t0 <= t1 {
        Some((t0, t1))
    } else {
        None
    }
}

/// Clip an open polyline to the window, returning the visible pieces in
/// order.
fn clip_polyline(points: &[Pt], hw: f64, hl: f64) -> Vec<Vec<Pt>> {
    let mut pieces: Vec<Vec<Pt>> = Vec::new();
    let mut cur: Vec<Pt> = Vec::new();
    for w in points.windows(2) {
        let (p, q) = (w[0], w[1]);
        let d = q - p;
        match clip_segment(p, q, hw, hl) {
            None => {
                if cur.len() >= 2 {
                    pieces.push(std::mem::take(&mut cur));
                } else {
                    cur.clear();
                }
            }
            Some((t0, t1)) => {
                let a = p + d * t0;
                let b = p + d * t1;
                let continues = cur.last().map(|l| l.dist(a) < 1e-9).unwrap_or(false);
                if !continues {
                    if cur.len() >= 2 {
                        pieces.push(std::mem::take(&mut cur));
                    } else {
                        cur.clear();
                    }
                    cur.push(a);
                }
                if cur.last().map(|l| l.dist(b) > 1e-12).unwrap_or(true) {
                    cur.push(b);
                }
                if t1 < 1.0 {
                    if cur.len() >= 2 {
                        pieces.push(std::mem::take(&mut cur));
                    } else {
                        cur.clear();
                    }
                }
            }
        }
    }
    if cur.len() >= 2 {
        pieces.push(cur);
    }
    pieces
}

/// Sutherland-Hodgman clip of a closed polygon to the window; the result
/// is re-closed along the clip boundary.
fn clip_polygon(points: &[Pt], hw: f64, hl: f64) -> Vec<Pt> {
    let mut poly: Vec<Pt> = points.to_vec();
    // (inside predicate, intersection) per rectangle edge.
    type Side = (fn(Pt, f64) -> bool, fn(Pt, Pt, f64) -> Pt);
    let sides: [(Side, f64); 4] = [
        ((|p, hw| p.x >= -hw, |a, b, hw| lerp_x(a, b, -hw)), hw),
        ((|p, hw| p.x <= hw, |a, b, hw| lerp_x(a, b, hw)), hw),
        ((|p, hl| p.y >= -hl, |a, b, hl| lerp_y(a, b, -hl)), hl),
        ((|p, hl| p.y <= hl, |a, b, hl| lerp_y(a, b, hl)), hl),
    ];
    for ((inside, cross), bound) in sides {
        if poly.is_empty() {
            break;
        }
        let mut out = Vec::with_capacity(poly.len() + 4);
        for i in 0..poly.len() {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            let a_in = inside(a, bound);
            let b_in = inside(b, bound);
            if a_in {
                out.push(a);
            }
            if a_in != b_in {
                out.push(cross(a, b, bound));
            }
        }
        poly = out;
    }
    poly.dedup_by(|a, b| a.dist(*b) < 1e-9);
    while poly.len() > 1 && poly[0].dist(*poly.last().unwrap()) < 1e-9 {
        poly.pop();
    }
    poly
}

fn lerp_x(a: Pt, b: Pt, x: f64) -> Pt {
    let t = (x - a.x) / (b.x - a.x);
    Pt::new(x, a.y + (b.y - a.y) * t)
}

fn lerp_y(a: Pt, b: Pt, y: f64) -> Pt {
    let t = (y - a.y) / (b.y - a.y);
    Pt::new(a.x + (b.x - a.x) * t, y)
}

fn polygon_area(points: &[Pt]) -> f64 {
    let n = points.len();
    let mut s = 0.0;
    for i in 0..n {
        s += points[i].cross(points[(i + 1) % n]);
    }
    s.abs() / 2.0
}

/// Project the world into per-frame ego windows. Linear elements are
/// clipped and the longest visible piece kept; crossings are re-closed
/// along the clip boundary. Oracle global IDs are the world element IDs.
pub fn project_gt(world: &World, window: Window) -> Sequence {
    let frames = world
        .trajectory
        .iter()
        .enumerate()
        .map(|(t, pose)| {
            let to_ego = pose.inverse();
            let mut elements = Vec::new();
            for el in &world.elements {
                let local: Vec<Pt> = el
                    .geometry
                    .points
                    .iter()
                    .map(|&p| to_ego.apply(p))
                    .collect();
                match el.class {
                    ElementClass::Crossing => {
                        let clipped = clip_polygon(&local, window.half_width, window.half_length);
                        if clipped.len() >= 3 && polygon_area(&clipped) >= MIN_VISIBLE_AREA {
                            elements.push(
                                Element::new(el.class, Polyline::closed(clipped)).with_id(el.id),
                            );
                        }
                    }
                    _ => {
                        let pieces = clip_polyline(&local, window.half_width, window.half_length);
                        let longest = pieces
                            .into_iter()
                            .map(|p| {
                                let len = Polyline::open(p.clone()).length();
                                (len, p)
                            })
                            .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                        if let Some((len, piece)) = longest {
                            if len >= MIN_VISIBLE_LEN {
                                elements.push(
                                    Element::new(el.class, Polyline::open(piece)).with_id(el.id),
                                );
                            }
                        }
                    }
                }
            }
            Frame {
                index: t,
                ego_pose: *pose,
                elements,
            }
        })
        .collect();
    Sequence::new(frames, window)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreModel {
    /// score = clamp(1 - chamfer_to_truth / 1.5, [0.05, 0.99])
    Calibrated,
    /// score ~ U[0.5, 1)
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IdMode {
    /// Keep the oracle track IDs.
    Oracle,
    /// Every element gets a unique ID in every frame.
    FreshPerFrame,
    /// Shuffle IDs pairwise within each frame.
    SwapPairs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub jitter_sigma: f64,
    pub drop_prob: f64,
    pub score_model: ScoreModel,
    pub id_mode: IdMode,
    /// Expected number of false elements injected per frame.
    pub clutter_rate: f64,
}

impl NoiseSpec {
    pub fn clean() -> Self {
        NoiseSpec {
            jitter_sigma: 0.0,
            drop_prob: 0.0,
            score_model: ScoreModel::Calibrated,
            id_mode: IdMode::Oracle,
            clutter_rate: 0.0,
        }
    }
}

const FRESH_ID_BASE: u64 = 1_000_000_000;

fn clamp_into(p: Pt, window: Window) -> Pt {
    Pt::new(
        p.x.clamp(-window.half_width, window.half_width),
        p.y.clamp(-window.half_length, window.half_length),
    )
}

/// Turn an oracle-labelled ground-truth sequence into predictions:
/// per-point Gaussian jitter, independent drops, scores, ID corruption,
/// and clutter injection. Deterministic given (noise, seed).
pub fn perturb(gt: &Sequence, noise: &NoiseSpec, seed: u64) -> Sequence {
    let base = DetRng::new(seed);
    let frames = gt
        .frames
        .iter()
        .map(|frame| {
            let t = frame.index;
            let mut elements = Vec::new();
            for (j, el) in frame.elements.iter().enumerate() {
                let mut rng = base.fork(&[1, t as u64, j as u64]);
                if rng.chance(noise.drop_prob) {
                    continue;
                }
                let points: Vec<Pt> = el
                    .geometry
                    .points
                    .iter()
                    .map(|&p| {
                        let dx = rng.gaussian() * noise.jitter_sigma;
                        let dy = rng.gaussian() * noise.jitter_sigma;
                        clamp_into(Pt::new(p.x + dx, p.y + dy), gt.window)
                    })
                    .collect();
                let geometry = Polyline {
                    points,
                    closed: el.geometry.closed,
                };
                let score = match noise.score_model {
                    ScoreModel::Calibrated => {
                        let truth = resample(&el.geometry, 20);
                        let pred = resample(&geometry, 20);
                        match (truth, pred) {
                            (Ok(a), Ok(b)) => {
                                let d = crate::geom::chamfer(&a, &b).unwrap_or(f64::INFINITY);
                                (1.0 - d / 1.5).clamp(0.05, 0.99)
                            }
                            _ => 0.05,
                        }
                    }
                    ScoreModel::Uniform => rng.uniform(0.5, 1.0),
                };
                let global_id = match noise.id_mode {
                    IdMode::Oracle | IdMode::SwapPairs => el.global_id,
                    IdMode::FreshPerFrame => Some(FRESH_ID_BASE + t as u64 * 100_000 + j as u64),
                };
                elements.push(Element {
                    class: el.class,
                    geometry,
                    score: Some(score),
                    global_id,
                });
            }

            if noise.id_mode == IdMode::SwapPairs && elements.len() >= 2 {
                let mut rng = base.fork(&[2, t as u64]);
                let mut idx: Vec<usize> = (0..elements.len()).collect();
                for i in (1..idx.len()).rev() {
                    let k = rng.below(i as u64 + 1) as usize;
                    idx.swap(i, k);
                }
                for pair in idx.chunks_exact(2) {
                    let (a, b) = (pair[0], pair[1]);
                    let tmp = elements[a].global_id;
                    elements[a].global_id = elements[b].global_id;
                    elements[b].global_id = tmp;
                }
            }

            let mut rng = base.fork(&[3, t as u64]);
            let mut clutter_count = noise.clutter_rate.floor() as usize;
            if rng.chance(noise.clutter_rate.fract()) {
                clutter_count += 1;
            }
            for _ in 0..clutter_count {
                elements.push(clutter_element(&mut rng, gt.window));
            }

            Frame {
                index: frame.index,
                ego_pose: frame.ego_pose,
                elements,
            }
        })
        .collect();
    Sequence::new(frames, gt.window)
}

fn clutter_element(rng: &mut DetRng, window: Window) -> Element {
    let class = ElementClass::ALL[rng.below(3) as usize];
    let margin = 5.0;
    let cx = rng.uniform(-window.half_width + margin, window.half_width - margin);
    let cy = rng.uniform(-window.half_length + margin, window.half_length - margin);
    let score = rng.uniform(0.05, 0.5);
    let geometry = match class {
        ElementClass::Crossing => {
            let half = rng.uniform(0.75, 1.5);
            Polyline::closed(vec![
                Pt::new(cx - half, cy - half),
                Pt::new(cx + half, cy - half),
                Pt::new(cx + half, cy + half),
                Pt::new(cx - half, cy + half),
            ])
        }
        _ => {
            let half = rng.uniform(1.5, 4.0);
            let angle = rng.uniform(0.0, std::f64::consts::TAU);
            let dir = Pt::new(angle.cos(), angle.sin());
            Polyline::open(vec![
                Pt::new(cx - dir.x * half, cy - dir.y * half),
                Pt::new(cx + dir.x * half, cy + dir.y * half),
            ])
        }
    };
    Element {
        class,
        geometry,
        score: Some(score),
        global_id: None,
    }
}
