//! Track formation: chain per-frame elements into tracks by optimal IoU
//! matching against up to N previous frames, assigning stable global IDs.

use thiserror::Error;

use crate::assign::match_by_iou;
use crate::raster::GridSpec;
use crate::scene::{relative_pose, Element, Sequence, TrackBook};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    /// Score threshold; only elements with score strictly above it are tracked.
    pub tau: f64,
    /// Look-back frame count N >= 1.
    pub lookback: usize,
    /// Stroke thickness for the matching masks, meters.
    pub thickness: f64,
    /// Minimum IoU for an accepted correspondence.
    pub min_iou: f64,
    /// Raster grid for matching masks; the doubled window keeps
    /// motion-compensated geometry from older frames inside the canvas.
    pub grid: GridSpec,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            tau: 0.4,
            lookback: 1,
            thickness: 0.5,
            min_iou: 0.05,
            grid: GridSpec::doubled_window(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrackerError {
    #[error("lookback must be >= 1, got {0}")]
    BadLookback(usize),
    #[error("element {element} in frame {frame} has no score; tracking needs scored predictions")]
    MissingScore { frame: usize, element: usize },
    #[error("track book references element {element} in frame {frame}, beyond {len} elements")]
    IndexOutOfRange {
        frame: usize,
        element: usize,
        len: usize,
    },
}

/// Positive elements of one frame: local indices plus borrowed elements.
struct Positives<'a> {
    indices: Vec<usize>,
    elements: Vec<&'a Element>,
}

fn positives(seq: &Sequence, frame: usize, tau: Option<f64>) -> Positives<'_> {
    let mut indices = Vec::new();
    let mut elements = Vec::new();
    for (i, el) in seq.frames[frame].elements.iter().enumerate() {
        let keep = match tau {
            Some(t) => el.score.map(|s| s > t).unwrap_or(false),
            None => true,
        };
        if keep {
            indices.push(i);
            elements.push(el);
        }
    }
    Positives { indices, elements }
}

fn run_tracker(
    seq: &Sequence,
    cfg: &TrackerConfig,
    tau: Option<f64>,
) -> Result<TrackBook, TrackerError> {
    if cfg.lookback < 1 {
        return Err(TrackerError::BadLookback(cfg.lookback));
    }
    let mut book = TrackBook::new();
    let pos: Vec<Positives> = (0..seq.frames.len())
        .map(|t| positives(seq, t, tau))
        .collect();

    for t in 0..seq.frames.len() {
        if t == 0 {
            for &idx in &pos[0].indices {
                let id = book.fresh_id();
                book.insert(0, idx, id).expect("fresh id is unique");
            }
            continue;
        }

        // Optimal matching against each of the N previous frames.
        let mut matchings = Vec::with_capacity(cfg.lookback);
        for k in 1..=cfg.lookback {
            if k > t {
                break; // frames before the sequence start are skipped
            }
            let motion = relative_pose(&seq.frames[t - k].ego_pose, &seq.frames[t].ego_pose);
            let prev: Vec<Element> = pos[t - k].elements.iter().map(|&e| e.clone()).collect();
            let curr: Vec<Element> = pos[t].elements.iter().map(|&e| e.clone()).collect();
            let m = match_by_iou(&prev, &curr, &motion, cfg.thickness, cfg.min_iou, cfg.grid);
            matchings.push((k, m));
        }

        // Sweep k = 1..N in order; an element identified at a smaller k is
        // never overwritten, and an ID already claimed this frame is never
        // assigned twice.
        let mut assigned: Vec<Option<u64>> = vec![None; pos[t].indices.len()];
        let mut used: Vec<u64> = Vec::new();
        for (k, matching) in &matchings {
            for &(pi, cj) in &matching.pairs {
                if assigned[cj].is_some() {
                    continue;
                }
                let prev_local = pos[t - k].indices[pi];
                let id = book
                    .id_of(t - k, prev_local)
                    .expect("positives always carry ids");
                if used.contains(&id) {
                    continue;
                }
                assigned[cj] = Some(id);
                used.push(id);
            }
        }

        for (cj, &idx) in pos[t].indices.iter().enumerate() {
            let id = match assigned[cj] {
                Some(id) => id,
                None => book.fresh_id(),
            };
            book.insert(t, idx, id).expect("collisions filtered above");
        }
    }
    Ok(book)
}

/// Track generation over scored predictions: per frame, keep elements with
/// score > tau, match them against up to `lookback` previous frames by
/// mask IoU, and chain global IDs through the matches.
pub fn extract_tracks(seq: &Sequence, cfg: &TrackerConfig) -> Result<TrackBook, TrackerError> {
    if cfg.lookback < 1 {
        return Err(TrackerError::BadLookback(cfg.lookback));
    }
    for frame in &seq.frames {
        for (j, el) in frame.elements.iter().enumerate() {
            if el.score.is_none() {
                return Err(TrackerError::MissingScore {
                    frame: frame.index,
                    element: j,
                });
            }
        }
    }
    run_tracker(seq, cfg, Some(cfg.tau))
}

/// Ground-truth track formation: every element is treated as positive and
/// the look-back is forced to 1.
pub fn form_gt_tracks(seq: &Sequence, cfg: &TrackerConfig) -> Result<TrackBook, TrackerError> {
    let cfg = TrackerConfig {
        lookback: 1,
        ..*cfg
    };
    run_tracker(seq, &cfg, None)
}

/// Write the book's global IDs onto a copy of the sequence. Elements absent
/// from the book end up without a global ID.
pub fn annotate(seq: &Sequence, book: &TrackBook) -> Result<Sequence, TrackerError> {
    for (frame, m) in book.frames() {
        let len = seq.frames.get(frame).map(|f| f.elements.len()).unwrap_or(0);
        for &element in m.keys() {
            if element >= len {
                return Err(TrackerError::IndexOutOfRange {
                    frame,
                    element,
                    len,
                });
            }
        }
    }
    let mut out = seq.clone();
    for frame in &mut out.frames {
        for (j, el) in frame.elements.iter_mut().enumerate() {
            el.global_id = book.id_of(frame.index, j);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ElementClass, Frame, Polyline, Pose2, Pt, Window};

    fn boundary(points: &[(f64, f64)], score: f64) -> Element {
        Element::new(
            ElementClass::Boundary,
            Polyline::open(points.iter().map(|&(x, y)| Pt::new(x, y)).collect()),
        )
        .with_score(score)
    }

    fn static_scene(scores: &[f64]) -> Sequence {
        let frames = scores
            .iter()
            .enumerate()
            .map(|(t, &s)| Frame {
                index: t,
                ego_pose: Pose2::identity(),
                elements: vec![boundary(&[(-5.0, -10.0), (-5.0, 10.0)], s)],
            })
            .collect();
        Sequence::new(frames, Window::DEFAULT)
    }

    #[test]
    fn static_element_forms_one_track() {
        let seq = static_scene(&[0.9, 0.9, 0.9]);
        let book = extract_tracks(&seq, &TrackerConfig::default()).unwrap();
        let id0 = book.id_of(0, 0).unwrap();
        assert_eq!(book.id_of(1, 0), Some(id0));
        assert_eq!(book.id_of(2, 0), Some(id0));
        assert_eq!(book.distinct_ids(), 1);
    }

    /// A one-frame dropout splits the track at N=1 and is bridged at N=2.
    #[test]
    fn lookback_bridges_single_frame_dropout() {
        let seq = static_scene(&[0.9, 0.1, 0.9]);

        let book1 = extract_tracks(
            &seq,
            &TrackerConfig {
                lookback: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(book1.distinct_ids(), 2);
        assert!(book1.id_of(1, 0).is_none());
        assert_ne!(book1.id_of(0, 0), book1.id_of(2, 0));

        let book2 = extract_tracks(
            &seq,
            &TrackerConfig {
                lookback: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(book2.distinct_ids(), 1);
        assert_eq!(book2.id_of(0, 0), book2.id_of(2, 0));
    }

    #[test]
    fn all_scores_below_tau_gives_empty_book() {
        let seq = static_scene(&[0.2, 0.3, 0.1]);
        let book = extract_tracks(&seq, &TrackerConfig::default()).unwrap();
        assert!(book.is_empty());
    }

    #[test]
    fn score_equal_tau_is_not_positive() {
        let seq = static_scene(&[0.4]);
        let book = extract_tracks(&seq, &TrackerConfig::default()).unwrap();
        assert!(book.is_empty());
    }

    #[test]
    fn bad_lookback_rejected() {
        let seq = static_scene(&[0.9]);
        let r = extract_tracks(
            &seq,
            &TrackerConfig {
                lookback: 0,
                ..Default::default()
            },
        );
        assert_eq!(r, Err(TrackerError::BadLookback(0)));
    }

    #[test]
    fn missing_score_rejected() {
        let mut seq = static_scene(&[0.9, 0.9]);
        seq.frames[1].elements[0].score = None;
        let r = extract_tracks(&seq, &TrackerConfig::default());
        assert_eq!(
            r,
            Err(TrackerError::MissingScore {
                frame: 1,
                element: 0
            })
        );
    }

    #[test]
    fn gt_tracks_ignore_scores_and_force_n1() {
        let mut seq = static_scene(&[0.0, 0.0, 0.0]);
        for f in &mut seq.frames {
            f.elements[0].score = None;
        }
        let cfg = TrackerConfig {
            lookback: 5,
            ..Default::default()
        };
        let book = form_gt_tracks(&seq, &cfg).unwrap();
        assert_eq!(book.distinct_ids(), 1);
    }

    #[test]
    fn moving_ego_keeps_identity() {
        // Ego advances 2 m per frame along +y; the element is static in the
        // world at x = -5, so its ego-frame geometry slides backwards.
        let frames: Vec<Frame> = (0..5)
            .map(|t| {
                let ego_y = 2.0 * t as f64;
                Frame {
                    index: t,
                    ego_pose: Pose2::new(0.0, ego_y, 0.0),
                    elements: vec![boundary(
                        &[(-5.0, -20.0 - ego_y), (-5.0, 20.0 - ego_y)],
                        0.9,
                    )],
                }
            })
            .collect();
        let seq = Sequence::new(
            frames,
            Window {
                half_width: 15.0,
                half_length: 30.0,
            },
        );
        let book = extract_tracks(&seq, &TrackerConfig::default()).unwrap();
        assert_eq!(book.distinct_ids(), 1);
    }

    #[test]
    fn annotate_round_trip() {
        let seq = static_scene(&[0.9, 0.9]);
        let book = extract_tracks(&seq, &TrackerConfig::default()).unwrap();
        let annotated = annotate(&seq, &book).unwrap();
        for frame in &annotated.frames {
            for (j, el) in frame.elements.iter().enumerate() {
                assert_eq!(el.global_id, book.id_of(frame.index, j));
            }
        }
        let empty = annotate(&seq, &TrackBook::new()).unwrap();
        assert_eq!(empty, seq);
    }

    #[test]
    fn annotate_rejects_out_of_range() {
        let seq = static_scene(&[0.9]);
        let mut book = TrackBook::new();
        book.insert(0, 3, 0).unwrap();
        assert!(matches!(
            annotate(&seq, &book),
            Err(TrackerError::IndexOutOfRange {
                frame: 0,
                element: 3,
                len: 1
            })
        ));
    }

    /// An element that leaves the window for a frame and returns gets two
    /// distinct IDs at N = 1: ground-truth formation never re-identifies.
    #[test]
    fn gt_track_splits_when_element_leaves_window() {
        let el = || {
            Element::new(
                ElementClass::Boundary,
                Polyline::open(vec![Pt::new(-5.0, -10.0), Pt::new(-5.0, 10.0)]),
            )
        };
        let frames = vec![
            Frame {
                index: 0,
                ego_pose: Pose2::identity(),
                elements: vec![el()],
            },
            Frame {
                index: 1,
                ego_pose: Pose2::identity(),
                elements: vec![],
            },
            Frame {
                index: 2,
                ego_pose: Pose2::identity(),
                elements: vec![el()],
            },
        ];
        let seq = Sequence::new(frames, Window::DEFAULT);
        let book = form_gt_tracks(&seq, &TrackerConfig::default()).unwrap();
        assert_eq!(book.distinct_ids(), 2);
        assert_ne!(book.id_of(0, 0), book.id_of(2, 0));
    }

    #[test]
    fn more_lookback_never_more_tracks() {
        // Flickering scores force dropouts; higher N can only merge tracks.
        let scores = [0.9, 0.2, 0.9, 0.2, 0.2, 0.9, 0.9];
        let seq = static_scene(&scores);
        let mut prev = usize::MAX;
        for n in [1usize, 2, 3, 5] {
            let book = extract_tracks(
                &seq,
                &TrackerConfig {
                    lookback: n,
                    ..Default::default()
                },
            )
            .unwrap();
            let count = book.distinct_ids();
            assert!(count <= prev, "N={n} produced {count} > {prev}");
            prev = count;
        }
    }
}
