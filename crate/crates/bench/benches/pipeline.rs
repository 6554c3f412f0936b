use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use pseudocal::cascade::{
    coarse_grid_estimate, regressor_forward, regressor_input_dim, stage_clouds, CoarseGridConfig, RegressorWeights,
};
use pseudocal::loss::{total_loss, CalibParams, LossWeights};
use pseudocal::pillar::{pillarize, PillarGridConfig};
use pseudocal::pseudo_lidar::{back_project, detect_depth_edges, CannyConfig};
use pseudocal::sample::{generate_scene, make_sample, DecalibrationRange, SceneConfig};
use pseudocal::se3::EulerAngles;
use pseudocal::Vector3;

fn pipeline(c: &mut Criterion) {
    let scene = generate_scene(&SceneConfig::default()).unwrap();
    let data = &scene.data;
    let canny = CannyConfig::default();
    let sample = make_sample(data, &data.t_true, &DecalibrationRange::PSEUDO_PILLARS, 1, Some(&canny)).unwrap();
    let grid = PillarGridConfig {
        z_clip_min: -25.0,
        z_clip_max: 25.0,
        ..PillarGridConfig::default()
    };
    let (pseudo, lidar) = stage_clouds(&sample, &sample.t_init);
    let pseudo_img = pillarize(&pseudo, &grid).unwrap();
    let lidar_img = pillarize(&lidar, &grid).unwrap();

    c.bench_function("back_project", |b| {
        b.iter(|| back_project(black_box(&data.depth), &data.intrinsics).unwrap())
    });
    c.bench_function("canny", |b| {
        b.iter(|| detect_depth_edges(black_box(&data.depth), &canny))
    });
    c.bench_function("pillarize", |b| b.iter(|| pillarize(black_box(&lidar), &grid).unwrap()));

    let mut g = c.benchmark_group("coarse");
    g.sample_size(10);
    g.bench_function("full_turn_3deg", |b| {
        b.iter(|| coarse_grid_estimate(black_box(&pseudo_img), &lidar_img, &CoarseGridConfig::default()).unwrap())
    });
    g.finish();

    let cloud = lidar.subsample(4096);
    let pred = CalibParams::new(EulerAngles::new(0.01, -0.02, 0.03), Vector3::new(0.1, 0.0, -0.05));
    let gt = CalibParams::default();
    c.bench_function("total_loss_4096", |b| {
        b.iter(|| total_loss(black_box(&cloud), &pred, &gt, &LossWeights::default()).unwrap())
    });

    let dim = regressor_input_dim(grid.rows(), grid.cols(), 5);
    let w = RegressorWeights::init(dim, 32, 0);
    c.bench_function("regressor_forward_ds5", |b| {
        b.iter(|| regressor_forward(&w, black_box(&pseudo_img), &lidar_img, 5, &DecalibrationRange::UNICAL_M).unwrap())
    });
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
