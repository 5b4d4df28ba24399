//! Online merging of per-frame tracked reconstructions into a global
//! vector map: crossings merge by convex hull, linear elements by
//! arc-length-aligned running-mean averaging with extension of
//! non-overlapping ends.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Deserialize;
use thiserror::Error;

use crate::geom::{convex_hull, resample, segment_param, transform_polyline};
use crate::scene::{ElementClass, Frame, Polyline, Pt};

#[derive(Debug, Clone, PartialEq)]
pub struct MapEntry {
    pub class: ElementClass,
    /// Geometry in the global frame.
    pub geometry: Polyline,
    pub observations: u64,
}

/// Accumulated global map keyed by track ID.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalMap {
    entries: BTreeMap<u64, MapEntry>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MergeError {
    #[error("track {id} changes class from {was} to {now}")]
    ClassChanged {
        id: u64,
        was: ElementClass,
        now: ElementClass,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Header(String),
}

impl GlobalMap {
    pub fn new() -> Self {
        GlobalMap::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (u64, &MapEntry)> {
        self.entries.iter().map(|(&id, e)| (id, e))
    }

    pub fn get(&self, id: u64) -> Option<&MapEntry> {
        self.entries.get(&id)
    }

    /// Fold one frame into the map. Elements are transformed into the
    /// global frame through the frame's ego pose; elements without a
    /// global ID are not part of any track and are skipped.
    pub fn merge_frame(&mut self, frame: &Frame) -> Result<(), MergeError> {
        for el in &frame.elements {
            let id = match el.global_id {
                Some(id) => id,
                None => continue,
            };
            let global_geom = transform_polyline(&el.geometry, &frame.ego_pose);
            match self.entries.get_mut(&id) {
                None => {
                    self.entries.insert(
                        id,
                        MapEntry {
                            class: el.class,
                            geometry: global_geom,
                            observations: 1,
                        },
                    );
                }
                Some(entry) => {
                    if entry.class != el.class {
                        return Err(MergeError::ClassChanged {
                            id,
                            was: entry.class,
                            now: el.class,
                        });
                    }
                    entry.geometry = match el.class {
                        ElementClass::Crossing => merge_crossing(&entry.geometry, &global_geom),
                        _ => merge_linear(&entry.geometry, &global_geom, entry.observations as f64),
                    };
                    entry.observations += 1;
                }
            }
        }
        Ok(())
    }
}

/// Convex hull of the union of both vertex sets; falls back to the longer
/// input when the union is degenerate.
pub fn merge_crossing(old: &Polyline, new: &Polyline) -> Polyline {
    let mut points = old.points.clone();
    points.extend_from_slice(&new.points);
    match convex_hull(&points) {
        Ok(hull) => hull,
        Err(_) => {
            if old.length() >= new.length() {
                old.clone()
            } else {
                new.clone()
            }
        }
    }
}

/// Cumulative arc lengths of the vertices of an open polyline.
fn cumulative(points: &[Pt]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(points.len());
    let mut s = 0.0;
    cum.push(0.0);
    for w in points.windows(2) {
        s += w[0].dist(w[1]);
        cum.push(s);
    }
    cum
}

/// Point at arc length `s` (clamped to the curve).
fn point_at(points: &[Pt], cum: &[f64], s: f64) -> Pt {
    let total = *cum.last().unwrap();
    let s = s.clamp(0.0, total);
    let mut i = match cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
        Ok(i) => i,
        Err(i) => i.saturating_sub(1),
    };
    i = i.min(points.len() - 2);
    let len = cum[i + 1] - cum[i];
    if len <= 0.0 {
        return points[i];
    }
    let t = (s - cum[i]) / len;
    points[i] + (points[i + 1] - points[i]) * t
}

/// Arc-length position of the closest point of `p` on the curve, extended
/// with signed overshoot along the end tangents when `p` projects beyond
/// either end.
fn signed_param(points: &[Pt], cum: &[f64], p: Pt) -> f64 {
    let total = *cum.last().unwrap();
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..points.len() - 1 {
        let (a, b) = (points[i], points[i + 1]);
        let t = segment_param(p, a, b).clamp(0.0, 1.0);
        let q = a + (b - a) * t;
        let d = p.dist(q);
        if d < best.0 {
            best = (d, cum[i] + t * (cum[i + 1] - cum[i]));
        }
    }
    let s = best.1;
    if s <= 1e-12 {
        let dir = points[1] - points[0];
        let n = dir.norm();
        if n > 0.0 {
            return ((p - points[0]).dot(dir) / n).min(0.0);
        }
    }
    if s >= total - 1e-12 {
        let last = points.len() - 1;
        let dir = points[last] - points[last - 1];
        let n = dir.norm();
        if n > 0.0 {
            return total + ((p - points[last]).dot(dir) / n).max(0.0);
        }
    }
    s
}

/// Merge two open polylines: orient `new` to match `old`, average the
/// overlap region pointwise with the accumulated observation count as the
/// weight of `old` (running mean), append the non-overlapping extensions,
/// and resample to the larger of the two point counts.
pub fn merge_linear(old: &Polyline, new: &Polyline, old_weight: f64) -> Polyline {
    let new_oriented;
    let new = {
        let of = *old.points.first().unwrap();
        let ol = *old.points.last().unwrap();
        let nf = *new.points.first().unwrap();
        let nl = *new.points.last().unwrap();
        if of.dist(nl) + ol.dist(nf) < of.dist(nf) + ol.dist(nl) {
            new_oriented = new.reversed();
            &new_oriented
        } else {
            new
        }
    };

    let old_cum = cumulative(&old.points);
    let new_cum = cumulative(&new.points);
    let old_len = *old_cum.last().unwrap();
    let new_len = *new_cum.last().unwrap();

    let a = signed_param(&old.points, &old_cum, *new.points.first().unwrap());
    let b = signed_param(&old.points, &old_cum, *new.points.last().unwrap());
    if b - a < 1e-9 {
        // No usable projection (e.g. `new` nearly perpendicular); keep the
        // longer observation.
        return if old_len >= new_len {
            old.clone()
        } else {
            new.clone()
        };
    }
    // Linear correspondence from old-parameter s to new arc length.
    let to_new = |s: f64| (s - a) / (b - a) * new_len;

    let lo = a.max(0.0);
    let hi = b.min(old_len);
    let w = old_weight.max(1.0);

    let mut samples: Vec<(f64, Pt)> = Vec::new();
    if a < 0.0 {
        // `new` starts before `old`: its leading part becomes the head.
        for (i, &s_new) in new_cum.iter().enumerate() {
            if s_new < to_new(lo) {
                samples.push((a + s_new / new_len * (b - a), new.points[i]));
            }
        }
    } else {
        for (i, &s) in old_cum.iter().enumerate() {
            if s < lo {
                samples.push((s, old.points[i]));
            }
        }
    }
    if hi > lo {
        let blend = |s: f64| {
            let po = point_at(&old.points, &old_cum, s);
            let pn = point_at(&new.points, &new_cum, to_new(s));
            (po * w + pn) * (1.0 / (w + 1.0))
        };
        samples.push((lo, blend(lo)));
        for (i, &s) in old_cum.iter().enumerate() {
            let _ = i;
            if s > lo && s < hi {
                samples.push((s, blend(s)));
            }
        }
        samples.push((hi, blend(hi)));
    }
    if b > old_len {
        for (i, &s_new) in new_cum.iter().enumerate() {
            if s_new > to_new(hi) {
                samples.push((a + s_new / new_len * (b - a), new.points[i]));
            }
        }
    } else {
        for (i, &s) in old_cum.iter().enumerate() {
            if s > hi {
                samples.push((s, old.points[i]));
            }
        }
    }

    samples.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut points: Vec<Pt> = Vec::with_capacity(samples.len());
    for (_, p) in samples {
        if points.last().map(|q| q.dist(p) > 1e-9).unwrap_or(true) {
            points.push(p);
        }
    }
    if points.len() < 2 {
        return old.clone();
    }

    let target = old.points.len().max(new.points.len()).max(2);
    let merged = Polyline::open(points);
    if merged.points.len() == target {
        merged
    } else {
        match resample(&merged, target) {
            Ok(r) => Polyline::open(r.points),
            Err(_) => merged,
        }
    }
}

fn fmt3(x: f64) -> String {
    let s = format!("{:.3}", x);
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

/// Deterministic SVG: crossings blue, dividers orange, boundaries green,
/// 5 m of padding around the bounding box. The y axis is flipped so north
/// is up.
pub fn render_svg(map: &GlobalMap) -> Vec<u8> {
    let mut min = Pt::new(f64::INFINITY, f64::INFINITY);
    let mut max = Pt::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (_, e) in map.entries() {
        for p in &e.geometry.points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
    }
    if map.is_empty() {
        min = Pt::new(0.0, 0.0);
        max = Pt::new(0.0, 0.0);
    }
    let pad = 5.0;
    let (x0, y0) = (min.x - pad, -(max.y + pad));
    let (w, h) = (max.x - min.x + 2.0 * pad, max.y - min.y + 2.0 * pad);

    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{} {} {} {}\">",
        fmt3(x0),
        fmt3(y0),
        fmt3(w),
        fmt3(h)
    )
    .unwrap();
    for (id, e) in map.entries() {
        let color = match e.class {
            ElementClass::Crossing => "#1f77b4",
            ElementClass::Divider => "#ff7f0e",
            ElementClass::Boundary => "#2ca02c",
        };
        let mut d = String::new();
        for (i, p) in e.geometry.points.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            write!(d, "{}{} {} ", cmd, fmt3(p.x), fmt3(-p.y)).unwrap();
        }
        if e.geometry.closed {
            d.push('Z');
        }
        writeln!(
            svg,
            "<path id=\"track-{id}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"0.3\" d=\"{}\"/>",
            d.trim_end()
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg.into_bytes()
}

// ---------------------------------------------------------------------------
// Global map file: line-delimited JSON with the element schema of sequence
// files, coordinates in the global frame.
// ---------------------------------------------------------------------------

fn push_num(out: &mut String, x: f64) {
    let s = format!("{:.6}", x);
    if s == "-0.000000" {
        out.push_str("0.000000");
    } else {
        out.push_str(&s);
    }
}

pub fn save_global_map(map: &GlobalMap) -> Vec<u8> {
    let mut out = String::from("{\"version\":1,\"kind\":\"global-map\"}\n");
    for (id, e) in map.entries() {
        write!(
            out,
            "{{\"class\":\"{}\",\"closed\":{},\"global_id\":{},\"count\":{},\"pts\":[",
            e.class, e.geometry.closed, id, e.observations
        )
        .unwrap();
        for (k, p) in e.geometry.points.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            out.push('[');
            push_num(&mut out, p.x);
            out.push(',');
            push_num(&mut out, p.y);
            out.push(']');
        }
        out.push_str("]}\n");
    }
    out.into_bytes()
}

#[derive(Deserialize)]
struct MapHeaderRec {
    version: u32,
    kind: String,
}

#[derive(Deserialize)]
struct MapEntryRec {
    class: ElementClass,
    closed: bool,
    global_id: u64,
    count: u64,
    pts: Vec<[f64; 2]>,
}

pub fn load_global_map(bytes: &[u8]) -> Result<GlobalMap, MergeError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| MergeError::Header(format!("input is not UTF-8: {e}")))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines
        .next()
        .ok_or_else(|| MergeError::Header("empty input, expected header line".into()))?;
    let header: MapHeaderRec = serde_json::from_str(header).map_err(|e| MergeError::Parse {
        line: hline + 1,
        msg: format!("bad header: {e}"),
    })?;
    if header.version != 1 || header.kind != "global-map" {
        return Err(MergeError::Header(format!(
            "unsupported header: version {} kind {:?}",
            header.version, header.kind
        )));
    }
    let mut map = GlobalMap::new();
    for (lineno, line) in lines {
        let rec: MapEntryRec = serde_json::from_str(line).map_err(|e| MergeError::Parse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        map.entries.insert(
            rec.global_id,
            MapEntry {
                class: rec.class,
                geometry: Polyline {
                    points: rec.pts.iter().map(|p| Pt::new(p[0], p[1])).collect(),
                    closed: rec.closed,
                },
                observations: rec.count,
            },
        );
    }
    Ok(map)
}
