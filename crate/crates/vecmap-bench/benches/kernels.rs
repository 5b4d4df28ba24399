use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use vecmap_core::assign::{hungarian_max, match_by_iou};
use vecmap_core::geom::{chamfer, resample};
use vecmap_core::merger::merge_linear;
use vecmap_core::metrics::{standard_map, DEFAULT_THRESHOLDS};
use vecmap_core::raster::{iou, rasterize, GridSpec};
use vecmap_core::scene::{relative_pose, Polyline, Pt, Window};
use vecmap_core::synth::{gen_world, perturb, project_gt, NoiseSpec, Trajectory, WorldSpec};
use vecmap_core::tracker::{extract_tracks, TrackerConfig};
use vecmap_core::DetRng;

fn random_scores(rng: &mut DetRng, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..n).map(|_| rng.uniform(0.0, 1.0)).collect())
        .collect()
}

fn bench_hungarian(c: &mut Criterion) {
    let mut group = c.benchmark_group("hungarian_max");
    for n in [8usize, 16, 32] {
        let mut rng = DetRng::new(n as u64);
        let scores = random_scores(&mut rng, n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &scores, |b, s| {
            b.iter(|| hungarian_max(black_box(s)).unwrap())
        });
    }
    group.finish();
}

fn wiggly_curve(rng: &mut DetRng, len: usize) -> Polyline {
    let mut p = Pt::new(rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0));
    let mut points = vec![p];
    for _ in 1..len {
        p = p + Pt::new(rng.uniform(0.2, 1.5), rng.uniform(-1.0, 1.0));
        points.push(p);
    }
    Polyline::open(points)
}

fn bench_chamfer(c: &mut Criterion) {
    let mut rng = DetRng::new(1);
    let a = resample(&wiggly_curve(&mut rng, 30), 20).unwrap();
    let b = resample(&wiggly_curve(&mut rng, 30), 20).unwrap();
    c.bench_function("chamfer_20pt", |bch| {
        bch.iter(|| chamfer(black_box(&a), black_box(&b)).unwrap())
    });
}

fn bench_raster(c: &mut Criterion) {
    let grid = GridSpec::doubled_window();
    let mut rng = DetRng::new(2);
    let poly = wiggly_curve(&mut rng, 40);
    c.bench_function("rasterize_doubled_window", |bch| {
        bch.iter(|| rasterize(black_box(&poly), 0.5, grid))
    });
    let a = rasterize(&poly, 0.5, grid);
    let b = rasterize(&wiggly_curve(&mut rng, 40), 0.5, grid);
    c.bench_function("mask_iou", |bch| {
        bch.iter(|| iou(black_box(&a), black_box(&b)).unwrap())
    });
}

fn bench_frame_matching(c: &mut Criterion) {
    let world = gen_world(&WorldSpec::new(5, Trajectory::Straight, 100.0)).unwrap();
    let gt = project_gt(&world, Window::DEFAULT);
    let prev = &gt.frames[10].elements;
    let curr = &gt.frames[11].elements;
    let motion = relative_pose(&gt.frames[10].ego_pose, &gt.frames[11].ego_pose);
    c.bench_function("match_by_iou_frame_pair", |bch| {
        bch.iter(|| {
            match_by_iou(
                black_box(prev),
                black_box(curr),
                &motion,
                0.5,
                0.05,
                GridSpec::doubled_window(),
            )
        })
    });
}

fn bench_pipeline(c: &mut Criterion) {
    let world = gen_world(&WorldSpec::new(9, Trajectory::Straight, 60.0)).unwrap();
    let gt = project_gt(&world, Window::DEFAULT);
    let noise = NoiseSpec {
        jitter_sigma: 0.1,
        drop_prob: 0.1,
        ..NoiseSpec::clean()
    };
    let pred = perturb(&gt, &noise, 9);

    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("extract_tracks_n1_25frames", |bch| {
        bch.iter(|| extract_tracks(black_box(&pred), &TrackerConfig::default()).unwrap())
    });
    group.bench_function("standard_map_25frames", |bch| {
        bch.iter(|| standard_map(black_box(&pred), black_box(&gt), &DEFAULT_THRESHOLDS).unwrap())
    });
    group.finish();
}

fn bench_merge_linear(c: &mut Criterion) {
    let mut rng = DetRng::new(3);
    let old = wiggly_curve(&mut rng, 60);
    let new = {
        let mut shifted = old.clone();
        for p in &mut shifted.points {
            *p = *p + Pt::new(5.0, 0.1);
        }
        shifted
    };
    c.bench_function("merge_linear_60pt", |bch| {
        bch.iter(|| merge_linear(black_box(&old), black_box(&new), 4.0))
    });
}

criterion_group!(
    benches,
    bench_hungarian,
    bench_chamfer,
    bench_raster,
    bench_frame_matching,
    bench_pipeline,
    bench_merge_linear
);
criterion_main!(benches);
