//! Domain types shared by all modules: road elements, poses, frames,
//! sequences, track books, and the line-delimited sequence file format.
//!
//! All types are immutable value objects after construction; nothing here
//! carries interior mutability, so everything is `Send + Sync`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point in meters. Element geometry is expressed in the owning frame's
/// ego coordinates (x lateral, y forward); world-frame data uses the same
/// type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pt {
    pub x: f64,
    pub y: f64,
}

impl Pt {
    pub fn new(x: f64, y: f64) -> Self {
        Pt { x, y }
    }

    pub fn dist(self, other: Pt) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Pt) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z component of the cross product, used as an orientation predicate.
    pub fn cross(self, other: Pt) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Pt {
    type Output = Pt;
    fn add(self, rhs: Pt) -> Pt {
        Pt::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Pt {
    type Output = Pt;
    fn sub(self, rhs: Pt) -> Pt {
        Pt::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Pt {
    type Output = Pt;
    fn mul(self, k: f64) -> Pt {
        Pt::new(self.x * k, self.y * k)
    }
}

/// The three road-element classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementClass {
    Crossing,
    Divider,
    Boundary,
}

impl ElementClass {
    pub const ALL: [ElementClass; 3] = [
        ElementClass::Crossing,
        ElementClass::Divider,
        ElementClass::Boundary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ElementClass::Crossing => "crossing",
            ElementClass::Divider => "divider",
            ElementClass::Boundary => "boundary",
        }
    }

    pub fn index(self) -> usize {
        match self {
            ElementClass::Crossing => 0,
            ElementClass::Divider => 1,
            ElementClass::Boundary => 2,
        }
    }
}

impl std::fmt::Display for ElementClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An ordered chain of points. A closed polyline does not duplicate its
/// first vertex; the closing segment is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<Pt>,
    pub closed: bool,
}

impl Polyline {
    pub fn open(points: Vec<Pt>) -> Self {
        Polyline {
            points,
            closed: false,
        }
    }

    pub fn closed(points: Vec<Pt>) -> Self {
        Polyline {
            points,
            closed: true,
        }
    }

    /// Segments including the implicit closing segment for closed chains.
    pub fn segments(&self) -> impl Iterator<Item = (Pt, Pt)> + '_ {
        let n = self.points.len();
        let count = if self.closed { n } else { n.saturating_sub(1) };
        (0..count).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    /// Total arc length, including the closing segment when closed.
    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| a.dist(b)).sum()
    }

    pub fn reversed(&self) -> Polyline {
        let mut points = self.points.clone();
        points.reverse();
        Polyline {
            points,
            closed: self.closed,
        }
    }
}

/// One road-element instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub class: ElementClass,
    pub geometry: Polyline,
    /// Present on predictions, absent on ground truth.
    pub score: Option<f64>,
    /// Present iff the element belongs to a formed track.
    pub global_id: Option<u64>,
}

impl Element {
    pub fn new(class: ElementClass, geometry: Polyline) -> Self {
        Element {
            class,
            geometry,
            score: None,
            global_id: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn with_id(mut self, id: u64) -> Self {
        self.global_id = Some(id);
        self
    }
}

/// Planar rigid motion: the pose of a local frame expressed in a parent
/// frame. `apply` maps local coordinates into the parent frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    /// Normalized to (-pi, pi].
    pub yaw: f64,
}

/// Wrap an angle into (-pi, pi].
pub fn normalize_angle(yaw: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = yaw.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Pose2 {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Pose2 {
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
        }
    }

    /// Map a point from this pose's local frame into the parent frame.
    pub fn apply(&self, p: Pt) -> Pt {
        let (s, c) = self.yaw.sin_cos();
        Pt::new(c * p.x - s * p.y + self.x, s * p.x + c * p.y + self.y)
    }

    /// `self.compose(other)` applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let t = self.apply(Pt::new(other.x, other.y));
        Pose2::new(t.x, t.y, self.yaw + other.yaw)
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2::new(
            -(c * self.x + s * self.y),
            -(-s * self.x + c * self.y),
            -self.yaw,
        )
    }

    pub fn position(&self) -> Pt {
        Pt::new(self.x, self.y)
    }
}

/// The transform mapping coordinates in `from`'s local frame into `to`'s
/// local frame, given both poses in a common parent frame.
pub fn relative_pose(from: &Pose2, to: &Pose2) -> Pose2 {
    to.inverse().compose(from)
}

/// One time step: ego pose in the global frame plus the elements observed
/// in ego coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub ego_pose: Pose2,
    pub elements: Vec<Element>,
}

/// The ego-centered perception window: `half_width` left/right,
/// `half_length` front/back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub half_width: f64,
    pub half_length: f64,
}

impl Window {
    pub const DEFAULT: Window = Window {
        half_width: 15.0,
        half_length: 30.0,
    };

    pub fn contains(&self, p: Pt, tol: f64) -> bool {
        p.x.abs() <= self.half_width + tol && p.y.abs() <= self.half_length + tol
    }
}

/// Ordered frames plus the perception window they were clipped to. Serves
/// for both ground truth and predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub frames: Vec<Frame>,
    pub window: Window,
}

impl Sequence {
    pub fn new(frames: Vec<Frame>, window: Window) -> Self {
        Sequence { frames, window }
    }

    pub fn empty() -> Self {
        Sequence {
            frames: Vec::new(),
            window: Window::DEFAULT,
        }
    }
}

/// Per-frame mapping from local element index to global track ID.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackBook {
    frames: BTreeMap<usize, BTreeMap<usize, u64>>,
    next_id: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum TrackBookError {
    #[error("global id {id} already used in frame {frame}")]
    DuplicateId { frame: usize, id: u64 },
    #[error("element {element} in frame {frame} already has an id")]
    DuplicateElement { frame: usize, element: usize },
}

impl TrackBook {
    pub fn new() -> Self {
        TrackBook::default()
    }

    pub fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Record an assignment. Global IDs must be unique within a frame.
    pub fn insert(&mut self, frame: usize, element: usize, id: u64) -> Result<(), TrackBookError> {
        let m = self.frames.entry(frame).or_default();
        if m.values().any(|&v| v == id) {
            return Err(TrackBookError::DuplicateId { frame, id });
        }
        if m.contains_key(&element) {
            return Err(TrackBookError::DuplicateElement { frame, element });
        }
        m.insert(element, id);
        self.next_id = self.next_id.max(id + 1);
        Ok(())
    }

    pub fn frame(&self, frame: usize) -> Option<&BTreeMap<usize, u64>> {
        self.frames.get(&frame)
    }

    pub fn id_of(&self, frame: usize, element: usize) -> Option<u64> {
        self.frames
            .get(&frame)
            .and_then(|m| m.get(&element))
            .copied()
    }

    pub fn frames(&self) -> impl Iterator<Item = (usize, &BTreeMap<usize, u64>)> {
        self.frames.iter().map(|(&f, m)| (f, m))
    }

    pub fn is_empty(&self) -> bool {
        self.frames.values().all(|m| m.is_empty())
    }

    /// Number of distinct global IDs across all frames.
    pub fn distinct_ids(&self) -> usize {
        let mut ids: Vec<u64> = self
            .frames
            .values()
            .flat_map(|m| m.values().copied())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("frame {frame}, element {element}: {msg}")]
    Validation {
        frame: usize,
        element: usize,
        msg: String,
    },
    #[error("frame {frame}: {msg}")]
    Frame { frame: usize, msg: String },
    #[error("{0}")]
    Header(String),
}

const COORD_TOL: f64 = 1e-4;

/// Check every structural invariant of a sequence. Called by `load_sequence`
/// and available to producers of synthetic data.
pub fn validate_sequence(seq: &Sequence) -> Result<(), SceneError> {
    for (i, frame) in seq.frames.iter().enumerate() {
        if frame.index != i {
            return Err(SceneError::Frame {
                frame: i,
                msg: format!(
                    "frame indices must be consecutive from 0, got {}",
                    frame.index
                ),
            });
        }
        if !(frame.ego_pose.x.is_finite()
            && frame.ego_pose.y.is_finite()
            && frame.ego_pose.yaw.is_finite())
        {
            return Err(SceneError::Frame {
                frame: i,
                msg: "non-finite ego pose".into(),
            });
        }
        for (j, el) in frame.elements.iter().enumerate() {
            validate_element(el, seq.window, i, j)?;
        }
    }
    Ok(())
}

fn validate_element(
    el: &Element,
    window: Window,
    frame: usize,
    element: usize,
) -> Result<(), SceneError> {
    let fail = |msg: String| {
        Err(SceneError::Validation {
            frame,
            element,
            msg,
        })
    };
    let g = &el.geometry;
    if g.points.len() < 2 {
        return fail(format!(
            "polyline needs at least 2 points, got {}",
            g.points.len()
        ));
    }
    if g.points.iter().any(|p| !p.is_finite()) {
        return fail("non-finite coordinate".into());
    }
    if g.length() <= 0.0 {
        return fail("degenerate polyline with zero length".into());
    }
    if g.closed && g.points.first() == g.points.last() && g.points.len() > 2 {
        return fail("closed polyline must not duplicate its first vertex".into());
    }
    let want_closed = el.class == ElementClass::Crossing;
    if g.closed != want_closed {
        return fail(format!(
            "{} must be {}",
            el.class,
            if want_closed { "closed" } else { "open" }
        ));
    }
    if let Some(s) = el.score {
        if !s.is_finite() {
            return fail("non-finite score".into());
        }
    }
    for p in &g.points {
        if !window.contains(*p, COORD_TOL) {
            return fail(format!(
                "point ({:.3}, {:.3}) outside perception window",
                p.x, p.y
            ));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Sequence file format: UTF-8 line-delimited JSON records. Line 1 is a
// header `{"version":1,"window":[hw,hl]}`; each following line is one frame.
// Canonical form writes every number with 6 decimal places.
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct HeaderRec {
    version: u32,
    window: [f64; 2],
}

#[derive(Deserialize)]
struct FrameRec {
    index: usize,
    ego: [f64; 3],
    elements: Vec<ElementRec>,
}

#[derive(Deserialize)]
struct ElementRec {
    class: ElementClass,
    closed: bool,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    global_id: Option<u64>,
    pts: Vec<[f64; 2]>,
}

pub fn load_sequence(bytes: &[u8]) -> Result<Sequence, SceneError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| SceneError::Header(format!("input is not UTF-8: {e}")))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());

    let (hline, header) = lines
        .next()
        .ok_or_else(|| SceneError::Header("empty input, expected header line".into()))?;
    let header: HeaderRec = serde_json::from_str(header).map_err(|e| SceneError::Parse {
        line: hline + 1,
        msg: format!("bad header: {e}"),
    })?;
    if header.version != 1 {
        return Err(SceneError::Header(format!(
            "unsupported version {}",
            header.version
        )));
    }
    let window = Window {
        half_width: header.window[0],
        half_length: header.window[1],
    };

    let mut frames = Vec::new();
    for (lineno, line) in lines {
        let rec: FrameRec = serde_json::from_str(line).map_err(|e| SceneError::Parse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        let mut elements = Vec::with_capacity(rec.elements.len());
        for er in rec.elements {
            let score = er.score.map(|s| {
                if !(0.0..=1.0).contains(&s) && s.is_finite() {
                    log::warn!(
                        "frame {}: clamping out-of-range score {s} into [0,1]",
                        rec.index
                    );
                    s.clamp(0.0, 1.0)
                } else {
                    s
                }
            });
            elements.push(Element {
                class: er.class,
                geometry: Polyline {
                    points: er.pts.iter().map(|p| Pt::new(p[0], p[1])).collect(),
                    closed: er.closed,
                },
                score,
                global_id: er.global_id,
            });
        }
        frames.push(Frame {
            index: rec.index,
            ego_pose: Pose2::new(rec.ego[0], rec.ego[1], rec.ego[2]),
            elements,
        });
    }

    let seq = Sequence { frames, window };
    validate_sequence(&seq)?;
    Ok(seq)
}

fn push_num(out: &mut String, x: f64) {
    // Canonical 6-decimal form; -0.000000 normalized to 0.000000.
    let s = format!("{:.6}", x);
    if s == "-0.000000" {
        out.push_str("0.000000");
    } else {
        out.push_str(&s);
    }
}

pub fn save_sequence(seq: &Sequence) -> Vec<u8> {
    let mut out = String::new();
    out.push_str("{\"version\":1,\"window\":[");
    push_num(&mut out, seq.window.half_width);
    out.push(',');
    push_num(&mut out, seq.window.half_length);
    out.push_str("]}\n");

    for frame in &seq.frames {
        write!(out, "{{\"index\":{},\"ego\":[", frame.index).unwrap();
        push_num(&mut out, frame.ego_pose.x);
        out.push(',');
        push_num(&mut out, frame.ego_pose.y);
        out.push(',');
        push_num(&mut out, frame.ego_pose.yaw);
        out.push_str("],\"elements\":[");
        for (j, el) in frame.elements.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(
                out,
                "{{\"class\":\"{}\",\"closed\":{}",
                el.class, el.geometry.closed
            )
            .unwrap();
            if let Some(s) = el.score {
                out.push_str(",\"score\":");
                push_num(&mut out, s);
            }
            if let Some(id) = el.global_id {
                write!(out, ",\"global_id\":{id}").unwrap();
            }
            out.push_str(",\"pts\":[");
            for (k, p) in el.geometry.points.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push('[');
                push_num(&mut out, p.x);
                out.push(',');
                push_num(&mut out, p.y);
                out.push(']');
            }
            out.push_str("]}");
        }
        out.push_str("]}\n");
    }
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boundary(points: Vec<Pt>) -> Element {
        Element::new(ElementClass::Boundary, Polyline::open(points))
    }

    /// 3x3 homogeneous-matrix oracle for pose composition.
    fn pose_matrix(p: &Pose2) -> [[f64; 3]; 3] {
        let (s, c) = p.yaw.sin_cos();
        [[c, -s, p.x], [s, c, p.y], [0.0, 0.0, 1.0]]
    }

    fn mat_mul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        r
    }

    fn mat_inv_rigid(a: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
        // Inverse of [R t; 0 1] is [R' -R't; 0 1].
        let r = [[a[0][0], a[1][0]], [a[0][1], a[1][1]]];
        let tx = -(r[0][0] * a[0][2] + r[0][1] * a[1][2]);
        let ty = -(r[1][0] * a[0][2] + r[1][1] * a[1][2]);
        [
            [r[0][0], r[0][1], tx],
            [r[1][0], r[1][1], ty],
            [0.0, 0.0, 1.0],
        ]
    }

    #[test]
    fn relative_pose_identity() {
        let p = Pose2::identity();
        let r = relative_pose(&p, &p);
        assert_eq!(r, Pose2::identity());
    }

    #[test]
    fn relative_pose_pure_translation() {
        let r = relative_pose(&Pose2::new(0.0, 0.0, 0.0), &Pose2::new(5.0, 0.0, 0.0));
        assert!((r.x - -5.0).abs() < 1e-12 && r.y.abs() < 1e-12 && r.yaw.abs() < 1e-12);
        let moved = r.apply(Pt::new(5.0, 0.0));
        assert!(moved.dist(Pt::new(0.0, 0.0)) < 1e-12);
    }

    #[test]
    fn relative_pose_matches_matrix_oracle() {
        let from = Pose2::new(0.0, 0.0, 0.0);
        let to = Pose2::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let r = relative_pose(&from, &to);
        assert!((r.yaw - -std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let p = r.apply(Pt::new(1.0, 0.0));
        assert!(p.dist(Pt::new(0.0, -1.0)) < 1e-12);

        // General case against the homogeneous-matrix oracle.
        let from = Pose2::new(3.0, -2.0, 0.7);
        let to = Pose2::new(-1.0, 4.0, -2.1);
        let r = relative_pose(&from, &to);
        let m = mat_mul(mat_inv_rigid(pose_matrix(&to)), pose_matrix(&from));
        let rm = pose_matrix(&r);
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[i][j] - rm[i][j]).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn relative_pose_chains() {
        let a = Pose2::new(1.0, 2.0, 0.3);
        let b = Pose2::new(-4.0, 0.5, 2.9);
        let c = Pose2::new(10.0, -3.0, -1.2);
        let ab = relative_pose(&a, &b);
        let bc = relative_pose(&b, &c);
        let ac = relative_pose(&a, &c);
        let chained = bc.compose(&ab);
        assert!((chained.x - ac.x).abs() < 1e-9);
        assert!((chained.y - ac.y).abs() < 1e-9);
        assert!((normalize_angle(chained.yaw - ac.yaw)).abs() < 1e-9);
    }

    #[test]
    fn pose_inverse_is_identity() {
        let p = Pose2::new(3.3, -7.1, 2.4);
        let id = p.compose(&p.inverse());
        assert!(id.x.abs() < 1e-9 && id.y.abs() < 1e-9 && id.yaw.abs() < 1e-9);
    }

    #[test]
    fn yaw_normalized_on_load() {
        let text = b"{\"version\":1,\"window\":[15.000000,30.000000]}\n{\"index\":0,\"ego\":[0.000000,0.000000,4.000000],\"elements\":[]}\n";
        let seq = load_sequence(text).unwrap();
        let expect = 4.0 - 2.0 * std::f64::consts::PI; // -2.2832
        assert!((seq.frames[0].ego_pose.yaw - expect).abs() < 1e-9);
        assert!((expect - -2.2831853071795862).abs() < 1e-12);
    }

    #[test]
    fn empty_sequence_round_trips() {
        let seq = Sequence::empty();
        let bytes = save_sequence(&seq);
        let back = load_sequence(&bytes).unwrap();
        assert_eq!(back, seq);
        assert_eq!(save_sequence(&back), bytes);
    }

    #[test]
    fn single_frame_round_trips_bit_exact() {
        let seq = Sequence::new(
            vec![Frame {
                index: 0,
                ego_pose: Pose2::new(1.25, -3.5, 0.5),
                elements: vec![boundary(vec![Pt::new(0.0, -10.0), Pt::new(0.0, 10.0)])],
            }],
            Window::DEFAULT,
        );
        let bytes = save_sequence(&seq);
        let back = load_sequence(&bytes).unwrap();
        assert_eq!(save_sequence(&back), bytes);
    }

    #[test]
    fn malformed_record_names_line() {
        let text = b"{\"version\":1,\"window\":[15.0,30.0]}\n{\"index\":0,\"ego\":[0,0,0],\"elements\":}\n";
        match load_sequence(text) {
            Err(SceneError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn open_crossing_rejected_with_location() {
        let text = b"{\"version\":1,\"window\":[15.0,30.0]}\n{\"index\":0,\"ego\":[0,0,0],\"elements\":[{\"class\":\"crossing\",\"closed\":false,\"pts\":[[0,0],[1,0],[1,1]]}]}\n";
        match load_sequence(text) {
            Err(SceneError::Validation {
                frame: 0,
                element: 0,
                ..
            }) => {}
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_score_clamped() {
        let text = b"{\"version\":1,\"window\":[15.0,30.0]}\n{\"index\":0,\"ego\":[0,0,0],\"elements\":[{\"class\":\"divider\",\"closed\":false,\"score\":1.5,\"pts\":[[0,0],[0,5]]}]}\n";
        let seq = load_sequence(text).unwrap();
        assert_eq!(seq.frames[0].elements[0].score, Some(1.0));
    }

    #[test]
    fn trackbook_rejects_duplicate_id_in_frame() {
        let mut book = TrackBook::new();
        book.insert(0, 0, 5).unwrap();
        assert_eq!(
            book.insert(0, 1, 5),
            Err(TrackBookError::DuplicateId { frame: 0, id: 5 })
        );
        book.insert(1, 0, 5).unwrap(); // same id in another frame is fine
        assert_eq!(book.distinct_ids(), 1);
    }
}
