//! Benchmark machinery for consistent vector HD mapping: a scene model
//! with typed road elements, geometry and rasterization kernels, optimal
//! bipartite matching, look-back track formation, Chamfer-distance mAP
//! with a consistency-aware variant, strided memory selection, online map
//! merging, and a deterministic synthetic scene generator.

pub mod assign;
pub mod geom;
pub mod membuf;
pub mod merger;
pub mod metrics;
pub mod raster;
pub mod rng;
pub mod scene;
pub mod synth;
pub mod tracker;

pub use assign::{hungarian_max, match_by_chamfer, match_by_iou, Assignment};
pub use geom::{chamfer, convex_hull, resample, transform, ResampledCurve};
pub use membuf::MemoryBuffer;
pub use merger::{merge_crossing, merge_linear, render_svg, GlobalMap};
pub use metrics::{
    average_precision, cmap_upper_bound, consistency_map, standard_map, MetricReport,
    DEFAULT_THRESHOLDS,
};
pub use raster::{iou, rasterize, rasterize_frame, GridSpec, RasterMask};
pub use rng::DetRng;
pub use scene::{
    load_sequence, relative_pose, save_sequence, Element, ElementClass, Frame, Polyline, Pose2, Pt,
    Sequence, TrackBook, Window,
};
pub use synth::{gen_world, perturb, project_gt, NoiseSpec, Trajectory, World, WorldSpec};
pub use tracker::{annotate, extract_tracks, form_gt_tracks, TrackerConfig};
