//! Chamfer-distance mAP and the consistency-aware mAP (C-mAP) with its
//! upper bound.
//!
//! All three pipelines share one record collector so that equal-score ties
//! resolve identically: per frame, predictions are visited in descending
//! score order (stable on input index), matched one-to-one against ground
//! truth of the same class by minimum total Chamfer cost, and judged
//! per threshold. The consistency variant additionally tracks, per
//! sequence, which prediction track first matched each ground-truth track
//! and converts later matches with a different prediction ID into false
//! positives. Records pool across sequences before the AP computation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::assign::match_by_chamfer;
use crate::geom::GeomError;
use crate::scene::{ElementClass, Sequence};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.5, 1.0, 1.5];
pub const DEFAULT_RESAMPLE_POINTS: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("prediction and ground-truth frame counts differ: {preds} vs {gts}")]
    FrameCountMismatch { preds: usize, gts: usize },
    #[error("ground-truth element {element} in frame {frame} has no global id; form tracks on the ground truth first")]
    MissingGtId { frame: usize, element: usize },
    #[error("predictions carry no global ids; run track extraction on them first")]
    MissingPredIds,
    #[error("prediction {element} in frame {frame} has no score")]
    MissingScore { frame: usize, element: usize },
    #[error("threshold list must not be empty")]
    NoThresholds,
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// One evaluated prediction at one distance threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub score: f64,
    pub is_tp: bool,
    pub class: ElementClass,
    pub sequence: usize,
    pub frame: usize,
}

/// Scores keyed by element class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassScores {
    pub crossing: f64,
    pub divider: f64,
    pub boundary: f64,
}

impl ClassScores {
    pub fn from_fn(mut f: impl FnMut(ElementClass) -> f64) -> Self {
        ClassScores {
            crossing: f(ElementClass::Crossing),
            divider: f(ElementClass::Divider),
            boundary: f(ElementClass::Boundary),
        }
    }

    pub fn get(&self, class: ElementClass) -> f64 {
        match class {
            ElementClass::Crossing => self.crossing,
            ElementClass::Divider => self.divider,
            ElementClass::Boundary => self.boundary,
        }
    }

    pub fn mean(&self) -> f64 {
        (self.crossing + self.divider + self.boundary) / 3.0
    }
}

/// Evaluation report. The standard fields come from `standard_map`, the
/// consistency fields from `consistency_map`; `merged` combines both for a
/// single serialized object.
#[derive(Debug, Clone, Default, Serialize)]
pub struct MetricReport {
    pub thresholds: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap: Option<ClassScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap_by_threshold: Option<Vec<ClassScores>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap: Option<ClassScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cmap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cmap_upper: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap_by_threshold: Option<Vec<ClassScores>>,
}

impl MetricReport {
    pub fn merged(standard: MetricReport, consistency: MetricReport) -> MetricReport {
        MetricReport {
            thresholds: standard.thresholds,
            ap: standard.ap,
            map: standard.map,
            ap_by_threshold: standard.ap_by_threshold,
            cap: consistency.cap,
            cmap: consistency.cmap,
            cmap_upper: consistency.cmap_upper,
            cap_by_threshold: consistency.cap_by_threshold,
        }
    }
}

/// Exact area under the precision envelope. Records are sorted by score
/// descending (stable on input order); precision at each recall point is
/// replaced by the maximum precision at greater-or-equal recall. With no
/// ground truth the AP is 1 for an empty record list and 0 otherwise.
pub fn average_precision(records: &[DetectionRecord], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return if records.is_empty() { 1.0 } else { 0.0 };
    }
    let mut order: Vec<&DetectionRecord> = records.iter().collect();
    order.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let mut precisions = Vec::with_capacity(order.len());
    let mut recalls = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (rank, r) in order.iter().enumerate() {
        if r.is_tp {
            tp += 1;
        }
        precisions.push(tp as f64 / (rank + 1) as f64);
        recalls.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for i in 0..precisions.len() {
        if recalls[i] > prev {
            ap += (recalls[i] - prev) * precisions[i];
            prev = recalls[i];
        }
    }
    ap
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    /// All scored predictions participate; no consistency bookkeeping.
    Standard,
    /// Only ID-bearing predictions participate.
    Positives { consistency: bool },
}

/// One prediction slot after matching: original index, score, global id,
/// and the matched ground truth (global id, Chamfer cost) if any.
struct MatchedPred {
    score: f64,
    global_id: Option<u64>,
    matched: Option<(u64, f64)>,
}

struct FrameMatches {
    per_class: [Vec<MatchedPred>; 3],
}

struct Pooled {
    /// records[class][threshold]
    records: [Vec<Vec<DetectionRecord>>; 3],
    num_gt: [usize; 3],
}

fn validate_pair(preds: &Sequence, gts: &Sequence, mode: Mode) -> Result<(), MetricsError> {
    if preds.frames.len() != gts.frames.len() {
        return Err(MetricsError::FrameCountMismatch {
            preds: preds.frames.len(),
            gts: gts.frames.len(),
        });
    }
    if let Mode::Positives { .. } = mode {
        for frame in &gts.frames {
            for (j, el) in frame.elements.iter().enumerate() {
                if el.global_id.is_none() {
                    return Err(MetricsError::MissingGtId {
                        frame: frame.index,
                        element: j,
                    });
                }
            }
        }
        let any_elements = preds.frames.iter().any(|f| !f.elements.is_empty());
        let any_ids = preds
            .frames
            .iter()
            .any(|f| f.elements.iter().any(|e| e.global_id.is_some()));
        if any_elements && !any_ids {
            return Err(MetricsError::MissingPredIds);
        }
    }
    for frame in &preds.frames {
        for (j, el) in frame.elements.iter().enumerate() {
            let participates = match mode {
                Mode::Standard => true,
                Mode::Positives { .. } => el.global_id.is_some(),
            };
            if participates && el.score.is_none() {
                return Err(MetricsError::MissingScore {
                    frame: frame.index,
                    element: j,
                });
            }
        }
    }
    Ok(())
}

fn match_frames(
    preds: &Sequence,
    gts: &Sequence,
    mode: Mode,
    resample_n: usize,
) -> Result<Vec<FrameMatches>, MetricsError> {
    let idx: Vec<usize> = (0..preds.frames.len()).collect();
    let per_frame: Vec<Result<FrameMatches, MetricsError>> = idx
        .par_iter()
        .map(|&t| {
            let pf = &preds.frames[t];
            let gf = &gts.frames[t];
            let mut per_class: [Vec<MatchedPred>; 3] = Default::default();
            for class in ElementClass::ALL {
                // Participating predictions in descending score order,
                // stable on element index.
                let mut sel: Vec<usize> = pf
                    .elements
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| {
                        e.class == class
                            && match mode {
                                Mode::Standard => true,
                                Mode::Positives { .. } => e.global_id.is_some(),
                            }
                    })
                    .map(|(i, _)| i)
                    .collect();
                sel.sort_by(|&a, &b| {
                    pf.elements[b]
                        .score
                        .partial_cmp(&pf.elements[a].score)
                        .unwrap()
                        .then(a.cmp(&b))
                });
                let gt_sel: Vec<usize> = gf
                    .elements
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.class == class)
                    .map(|(i, _)| i)
                    .collect();

                let pred_els: Vec<_> = sel.iter().map(|&i| pf.elements[i].clone()).collect();
                let gt_els: Vec<_> = gt_sel.iter().map(|&i| gf.elements[i].clone()).collect();
                let (costs, assignment) = match_by_chamfer(&pred_els, &gt_els, resample_n)?;

                let mut rows = Vec::with_capacity(sel.len());
                for (row, &i) in sel.iter().enumerate() {
                    let matched = assignment.col_of(row).map(|col| {
                        (
                            gf.elements[gt_sel[col]].global_id.unwrap_or(0),
                            costs[row][col],
                        )
                    });
                    rows.push(MatchedPred {
                        score: pf.elements[i].score.unwrap(),
                        global_id: pf.elements[i].global_id,
                        matched,
                    });
                }
                per_class[class.index()] = rows;
            }
            Ok(FrameMatches { per_class })
        })
        .collect();
    // Resolve in frame order so an error, if any, is always the earliest.
    per_frame.into_iter().collect()
}

fn collect(
    pairs: &[(&Sequence, &Sequence)],
    thresholds: &[f64],
    resample_n: usize,
    mode: Mode,
) -> Result<Pooled, MetricsError> {
    if thresholds.is_empty() {
        return Err(MetricsError::NoThresholds);
    }
    let mut pooled = Pooled {
        records: [
            vec![Vec::new(); thresholds.len()],
            vec![Vec::new(); thresholds.len()],
            vec![Vec::new(); thresholds.len()],
        ],
        num_gt: [0; 3],
    };
    for (seq_idx, &(preds, gts)) in pairs.iter().enumerate() {
        validate_pair(preds, gts, mode)?;
        for frame in &gts.frames {
            for el in &frame.elements {
                pooled.num_gt[el.class.index()] += 1;
            }
        }
        let frames = match_frames(preds, gts, mode, resample_n)?;

        // Consistency bookkeeping is per sequence and per threshold:
        // gt track id -> the prediction track id that first matched it.
        let mut book: Vec<BTreeMap<u64, u64>> = vec![BTreeMap::new(); thresholds.len()];
        for (t, fm) in frames.iter().enumerate() {
            for class in ElementClass::ALL {
                for pred in &fm.per_class[class.index()] {
                    for (ti, &sigma) in thresholds.iter().enumerate() {
                        let is_tp = match pred.matched {
                            Some((gt_gid, cost)) if cost <= sigma => match mode {
                                Mode::Standard | Mode::Positives { consistency: false } => true,
                                Mode::Positives { consistency: true } => {
                                    let pred_gid = pred.global_id.unwrap_or(0);
                                    match book[ti].get(&gt_gid) {
                                        Some(&first) => first == pred_gid,
                                        None => {
                                            book[ti].insert(gt_gid, pred_gid);
                                            true
                                        }
                                    }
                                }
                            },
                            _ => false,
                        };
                        pooled.records[class.index()][ti].push(DetectionRecord {
                            score: pred.score,
                            is_tp,
                            class,
                            sequence: seq_idx,
                            frame: t,
                        });
                    }
                }
            }
        }
    }
    Ok(pooled)
}

fn ap_tables(pooled: &Pooled, thresholds: &[f64]) -> (Vec<ClassScores>, ClassScores, f64) {
    let by_threshold: Vec<ClassScores> = (0..thresholds.len())
        .map(|ti| {
            ClassScores::from_fn(|c| {
                average_precision(&pooled.records[c.index()][ti], pooled.num_gt[c.index()])
            })
        })
        .collect();
    let per_class = ClassScores::from_fn(|c| {
        by_threshold.iter().map(|t| t.get(c)).sum::<f64>() / thresholds.len() as f64
    });
    let mean = per_class.mean();
    (by_threshold, per_class, mean)
}

/// Standard Chamfer-distance mAP over all scored predictions, pooled over
/// several prediction/ground-truth sequence pairs.
pub fn standard_map_pooled(
    pairs: &[(&Sequence, &Sequence)],
    thresholds: &[f64],
) -> Result<MetricReport, MetricsError> {
    let pooled = collect(pairs, thresholds, DEFAULT_RESAMPLE_POINTS, Mode::Standard)?;
    let (by_threshold, per_class, mean) = ap_tables(&pooled, thresholds);
    Ok(MetricReport {
        thresholds: thresholds.to_vec(),
        ap: Some(per_class),
        map: Some(mean),
        ap_by_threshold: Some(by_threshold),
        ..Default::default()
    })
}

pub fn standard_map(
    preds: &Sequence,
    gts: &Sequence,
    thresholds: &[f64],
) -> Result<MetricReport, MetricsError> {
    standard_map_pooled(&[(preds, gts)], thresholds)
}

/// Consistency-aware mAP over ID-bearing predictions, plus its upper bound
/// (the same pipeline with the consistency check disabled).
pub fn consistency_map_pooled(
    pairs: &[(&Sequence, &Sequence)],
    thresholds: &[f64],
) -> Result<MetricReport, MetricsError> {
    let consistent = collect(
        pairs,
        thresholds,
        DEFAULT_RESAMPLE_POINTS,
        Mode::Positives { consistency: true },
    )?;
    let upper = collect(
        pairs,
        thresholds,
        DEFAULT_RESAMPLE_POINTS,
        Mode::Positives { consistency: false },
    )?;
    let (cap_by_threshold, cap, cmap) = ap_tables(&consistent, thresholds);
    let (_, _, cmap_upper) = ap_tables(&upper, thresholds);
    Ok(MetricReport {
        thresholds: thresholds.to_vec(),
        cap: Some(cap),
        cmap: Some(cmap),
        cmap_upper: Some(cmap_upper),
        cap_by_threshold: Some(cap_by_threshold),
        ..Default::default()
    })
}

pub fn consistency_map(
    preds: &Sequence,
    gts: &Sequence,
    thresholds: &[f64],
) -> Result<MetricReport, MetricsError> {
    consistency_map_pooled(&[(preds, gts)], thresholds)
}

/// C-mAP with every consistency check passing: the ceiling reachable with
/// perfect tracks.
pub fn cmap_upper_bound(
    preds: &Sequence,
    gts: &Sequence,
    thresholds: &[f64],
) -> Result<f64, MetricsError> {
    let upper = collect(
        &[(preds, gts)],
        thresholds,
        DEFAULT_RESAMPLE_POINTS,
        Mode::Positives { consistency: false },
    )?;
    let (_, _, cmap_upper) = ap_tables(&upper, thresholds);
    Ok(cmap_upper)
}
