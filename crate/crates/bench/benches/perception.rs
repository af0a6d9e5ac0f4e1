//! Benchmarks for the per-frame perception pipeline and arm kinematics.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use pergola_core::arm::{self, ArmGeometry, WorkspaceWindow};
use pergola_core::features::{self, PlaneMetric};
use pergola_core::rownav::{self, RowDetectParams};
use pergola_core::safety;
use pergola_core::scan::{GridSpec, LidarFrame, LidarSpec};
use pergola_core::sim::{self, cast_scan, RobotState, ScanOptions, WorldConfig};

fn cluttered_frame() -> LidarFrame {
    let config = WorldConfig {
        weed_count: 25,
        branch_count: 15,
        ground_slope: (0.05, 0.08),
        seed: 7,
        ..WorldConfig::default()
    };
    let world = sim::build_world(&config).unwrap();
    let robot = RobotState::at(10.0, 2.5, 0.02);
    let (frame, _) = cast_scan(
        &world,
        &robot,
        &LidarSpec::default(),
        &ScanOptions {
            range_noise_sigma: 0.01,
            seed: 7,
            ..ScanOptions::default()
        },
    )
    .unwrap();
    frame
}

fn bench_cast_scan(c: &mut Criterion) {
    let world = sim::build_world(&WorldConfig::default()).unwrap();
    let robot = RobotState::at(10.0, 2.5, 0.0);
    let spec = LidarSpec::coarse();
    let options = ScanOptions::default();
    c.bench_function("cast_scan_coarse", |b| {
        b.iter(|| cast_scan(black_box(&world), &robot, &spec, &options).unwrap())
    });
}

fn bench_detect_row(c: &mut Criterion) {
    let frame = cluttered_frame();
    let params = RowDetectParams::default();
    c.bench_function("detect_row_cluttered", |b| {
        b.iter(|| rownav::detect_row(black_box(&frame), &params).unwrap())
    });
}

fn bench_plane_selection(c: &mut Criterion) {
    let frame = cluttered_frame();
    c.bench_function("select_plane_5_segments", |b| {
        b.iter(|| features::select_plane_segmented(black_box(&frame), 5, PlaneMetric::Mean).unwrap())
    });
}

fn bench_vertical_objects(c: &mut Criterion) {
    let frame = cluttered_frame();
    let grid = GridSpec {
        side_px: 400,
        metres_per_px: 0.1,
    };
    c.bench_function("extract_vertical_objects", |b| {
        b.iter(|| features::extract_vertical_objects(black_box(&frame), 45.0, 0.4, grid).unwrap())
    });
}

fn bench_segment_by_range(c: &mut Criterion) {
    let frame = cluttered_frame();
    c.bench_function("segment_by_range", |b| {
        b.iter(|| safety::segment_by_range(black_box(&frame), 15.0, 0.3, 0.5).unwrap())
    });
}

fn bench_ik(c: &mut Criterion) {
    let geometry = ArmGeometry::default();
    c.bench_function("ik_planar3", |b| {
        b.iter(|| arm::ik_planar3(black_box(&geometry), (0.15, 0.25), 1.2).unwrap())
    });
}

fn bench_workspace(c: &mut Criterion) {
    let geometry = ArmGeometry::default();
    let window = WorkspaceWindow::picking_default();
    c.bench_function("build_workspace", |b| {
        b.iter(|| arm::build_workspace(black_box(&geometry), &window, 1.2).unwrap())
    });
}

criterion_group!(
    benches,
    bench_cast_scan,
    bench_detect_row,
    bench_plane_selection,
    bench_vertical_objects,
    bench_segment_by_range,
    bench_ik,
    bench_workspace
);
criterion_main!(benches);
