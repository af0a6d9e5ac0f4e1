//! Row centreline detection from 3D lidar frames and the steering laws that
//! consume it.
//!
//! The detector runs a nine-step pipeline: per-plane consecutive clustering,
//! contour-length and crowd filters, cross-plane container merging, a height
//! filter, nearest-neighbour pairing with a distance gate, and a mode over
//! the pair angles. Survivor containers are then rotated into the row frame
//! and the linear offset is the two-sided balanced mean of their lateral
//! coordinates.

use crate::error::{Error, Result};
use crate::scan::{BirdsEyeGrid, LidarFrame, Point3};
use serde::{Deserialize, Serialize};

/// Thresholds for the nine-step row detector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowDetectParams {
    /// Step 1: max distance between consecutive points sharing a cluster.
    pub cluster_gap: f64,
    /// Step 2: clusters with contour length above this are discarded
    /// (roughly half the circumference of the thickest post).
    pub max_contour: f64,
    /// Step 3: a cluster with at least `crowd_count` same-plane neighbours
    /// within `crowd_radius` is discarded as clutter.
    pub crowd_radius: f64,
    pub crowd_count: usize,
    /// Step 4: max XY gap merging clusters into a cross-plane container.
    pub container_xy_gap: f64,
    /// Step 5: container vertical extent must lie in [min, max].
    pub min_object_height: f64,
    pub max_object_height: f64,
    /// Step 7: nearest-neighbour pairs farther apart than the row width are
    /// discarded. Also bounds the lateral gate before the offset average.
    pub max_neighbour_gap: f64,
    /// Step 9: angle histogram bin width, degrees.
    pub angle_bin_deg: f64,
    /// Points farther than this (horizontal distance from the sensor) are
    /// ignored. Row guidance only needs the nearby posts; distant structure
    /// such as an end-of-row hedge would otherwise skew the treeline fit.
    pub max_detection_range: f64,
}

impl Default for RowDetectParams {
    fn default() -> Self {
        RowDetectParams {
            cluster_gap: 0.1,
            max_contour: 0.5,
            crowd_radius: 1.0,
            crowd_count: 4,
            container_xy_gap: 0.15,
            min_object_height: 0.4,
            max_object_height: 2.0,
            max_neighbour_gap: 5.0,
            angle_bin_deg: 1.0,
            max_detection_range: 15.0,
        }
    }
}

impl RowDetectParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cluster_gap", self.cluster_gap),
            ("max_contour", self.max_contour),
            ("crowd_radius", self.crowd_radius),
            ("container_xy_gap", self.container_xy_gap),
            ("max_neighbour_gap", self.max_neighbour_gap),
            ("angle_bin_deg", self.angle_bin_deg),
            ("max_detection_range", self.max_detection_range),
        ] {
            if !(v > 0.0) {
                return Err(Error::Invalid {
                    field: "RowDetectParams",
                    reason: format!("{name} must be positive"),
                });
            }
        }
        if !(self.min_object_height < self.max_object_height) {
            return Err(Error::invalid(
                "min_object_height",
                "must be below max_object_height",
            ));
        }
        Ok(())
    }
}

/// Counts surviving each pipeline stage, for tuning and logging.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RowDiagnostics {
    pub clusters_total: usize,
    pub clusters_kept: usize,
    pub containers_total: usize,
    pub containers_kept: usize,
    pub pairs_kept: usize,
}

/// Row pose relative to the lidar: positive `o_l` means the centreline lies
/// to the robot's left, positive `o_a` means it slants left with range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowEstimate {
    pub o_l: f64,
    pub o_a: f64,
    pub n_left: usize,
    pub n_right: usize,
    /// Estimate built from one treeline plus an assumed half row width.
    pub one_sided: bool,
    pub diagnostics: RowDiagnostics,
}

/// Outcome of a detection attempt. `NoRow` keeps the diagnostics so callers
/// can see where the pipeline went empty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum RowDetection {
    Row(RowEstimate),
    NoRow(RowDiagnostics),
}

impl RowDetection {
    pub fn estimate(&self) -> Option<&RowEstimate> {
        match self {
            RowDetection::Row(e) => Some(e),
            RowDetection::NoRow(_) => None,
        }
    }
}

/// A consecutive-point cluster from a single plane.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub points: Vec<Point3>,
    pub centroid: Point3,
    /// Sum of consecutive member distances.
    pub contour_length: f64,
}

/// Group azimuth-ordered points of one plane: consecutive points closer than
/// the threshold share a cluster.
pub fn cluster_plane(points: &[Point3], gap_threshold: f64) -> Vec<Cluster> {
    let mut clusters = Vec::new();
    let mut current: Vec<Point3> = Vec::new();
    let flush = |members: &mut Vec<Point3>, out: &mut Vec<Cluster>| {
        if members.is_empty() {
            return;
        }
        let n = members.len() as f64;
        let centroid = Point3::new(
            members.iter().map(|p| p.x).sum::<f64>() / n,
            members.iter().map(|p| p.y).sum::<f64>() / n,
            members.iter().map(|p| p.z).sum::<f64>() / n,
        );
        let contour_length = members.windows(2).map(|w| w[0].dist(&w[1])).sum();
        out.push(Cluster {
            points: std::mem::take(members),
            centroid,
            contour_length,
        });
    };
    for p in points {
        if let Some(last) = current.last() {
            if last.dist(p) >= gap_threshold {
                flush(&mut current, &mut clusters);
            }
        }
        current.push(*p);
    }
    flush(&mut current, &mut clusters);
    clusters
}

struct Container {
    centroid_x: f64,
    centroid_y: f64,
    z_min: f64,
    z_max: f64,
}

fn fold_half_circle(a: f64) -> f64 {
    let mut a = a;
    while a > std::f64::consts::FRAC_PI_2 {
        a -= std::f64::consts::PI;
    }
    while a <= -std::f64::consts::FRAC_PI_2 {
        a += std::f64::consts::PI;
    }
    a
}

/// Nine-step treeline detection followed by the balanced two-sided offset
/// average.
pub fn detect_row(frame: &LidarFrame, params: &RowDetectParams) -> Result<RowDetection> {
    params.validate()?;
    let mut diag = RowDiagnostics::default();

    // Steps 1-3 per plane: cluster, drop long contours, drop crowded areas.
    let mut kept: Vec<Cluster> = Vec::new();
    for plane in 0..frame.spec.n_planes() {
        let pts: Vec<Point3> = frame
            .plane_points(plane)
            .into_iter()
            .map(|(_, p)| p)
            .filter(|p| p.x.hypot(p.y) <= params.max_detection_range)
            .collect();
        let clusters = cluster_plane(&pts, params.cluster_gap);
        diag.clusters_total += clusters.len();
        let short: Vec<Cluster> = clusters
            .into_iter()
            .filter(|c| c.contour_length <= params.max_contour)
            .collect();
        let centroids: Vec<Point3> = short.iter().map(|c| c.centroid).collect();
        for (i, c) in short.into_iter().enumerate() {
            let crowd = centroids
                .iter()
                .enumerate()
                .filter(|&(j, other)| j != i && other.dist_xy(&c.centroid) < params.crowd_radius)
                .count();
            if crowd < params.crowd_count {
                kept.push(c);
            }
        }
    }
    diag.clusters_kept = kept.len();

    // Step 4: merge clusters across planes into containers by XY proximity.
    let n = kept.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let r = find(parent, parent[i]);
            parent[i] = r;
        }
        parent[i]
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if kept[i].centroid.dist_xy(&kept[j].centroid) < params.container_xy_gap {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let mut groups: std::collections::HashMap<usize, Vec<usize>> = std::collections::HashMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut containers: Vec<Container> = groups
        .values()
        .map(|members| {
            let m = members.len() as f64;
            let cx = members.iter().map(|&i| kept[i].centroid.x).sum::<f64>() / m;
            let cy = members.iter().map(|&i| kept[i].centroid.y).sum::<f64>() / m;
            let z_min = members
                .iter()
                .flat_map(|&i| kept[i].points.iter().map(|p| p.z))
                .fold(f64::INFINITY, f64::min);
            let z_max = members
                .iter()
                .flat_map(|&i| kept[i].points.iter().map(|p| p.z))
                .fold(f64::NEG_INFINITY, f64::max);
            Container {
                centroid_x: cx,
                centroid_y: cy,
                z_min,
                z_max,
            }
        })
        .collect();
    diag.containers_total = containers.len();

    // Step 5: keep containers whose vertical extent looks like a post/trunk.
    containers.retain(|c| {
        let h = c.z_max - c.z_min;
        h >= params.min_object_height && h <= params.max_object_height
    });
    diag.containers_kept = containers.len();

    // Steps 6-8: nearest neighbours within the row width, pair angles.
    let mut pair_angles: Vec<f64> = Vec::new();
    let mut paired: Vec<bool> = vec![false; containers.len()];
    for (i, a) in containers.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, b) in containers.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = ((a.centroid_x - b.centroid_x).powi(2) + (a.centroid_y - b.centroid_y).powi(2))
                .sqrt();
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        if let Some((j, d)) = best {
            if d <= params.max_neighbour_gap {
                let b = &containers[j];
                pair_angles.push(fold_half_circle(
                    (b.centroid_y - a.centroid_y).atan2(b.centroid_x - a.centroid_x),
                ));
                paired[i] = true;
                paired[j] = true;
            }
        }
    }
    diag.pairs_kept = pair_angles.len();
    if pair_angles.is_empty() {
        return Ok(RowDetection::NoRow(diag));
    }

    // Step 9: mode over fixed-width bins; ties prefer the bin nearest zero.
    let bin = params.angle_bin_deg.to_radians();
    let n_bins = (std::f64::consts::PI / bin).ceil() as i64;
    let mut counts: std::collections::HashMap<i64, usize> = std::collections::HashMap::new();
    for &a in &pair_angles {
        let k = ((a + std::f64::consts::FRAC_PI_2) / bin).floor() as i64;
        *counts.entry(k.clamp(0, n_bins - 1)).or_default() += 1;
    }
    let centre_of = |k: i64| (k as f64 + 0.5) * bin - std::f64::consts::FRAC_PI_2;
    let winner = *counts
        .iter()
        .max_by(|(ka, ca), (kb, cb)| {
            ca.cmp(cb)
                .then_with(|| centre_of(**kb).abs().partial_cmp(&centre_of(**ka).abs()).unwrap())
        })
        .unwrap()
        .0;
    let members: Vec<f64> = pair_angles
        .iter()
        .copied()
        .filter(|&a| ((a + std::f64::consts::FRAC_PI_2) / bin).floor() as i64 == winner)
        .collect();
    let o_a = members.iter().sum::<f64>() / members.len() as f64;

    // Rotate paired survivors into the row frame and gate the lateral span.
    let (s, c) = o_a.sin_cos();
    let mut left: Vec<f64> = Vec::new();
    let mut right: Vec<f64> = Vec::new();
    for (i, cont) in containers.iter().enumerate() {
        if !paired[i] {
            continue;
        }
        let y_prime = cont.centroid_y * c - cont.centroid_x * s;
        if y_prime.abs() > params.max_neighbour_gap {
            continue;
        }
        if y_prime >= 0.0 {
            left.push(y_prime);
        } else {
            right.push(y_prime);
        }
    }

    let (n_l, n_r) = (left.len(), right.len());
    if n_l == 0 && n_r == 0 {
        return Ok(RowDetection::NoRow(diag));
    }
    if n_l == 0 || n_r == 0 {
        // One treeline visible: assume the standard half row width.
        let half = params.max_neighbour_gap / 2.0;
        let (side, sign) = if n_l > 0 { (&left, -1.0) } else { (&right, 1.0) };
        let mean = side.iter().sum::<f64>() / side.len() as f64;
        return Ok(RowDetection::Row(RowEstimate {
            o_l: mean + sign * half,
            o_a,
            n_left: n_l,
            n_right: n_r,
            one_sided: true,
            diagnostics: diag,
        }));
    }

    // Balanced two-sided average: weight each side by the other's count so a
    // lopsided survivor split cannot bias the centreline.
    let sum_l: f64 = left.iter().sum();
    let sum_r: f64 = right.iter().sum();
    let o_l = (n_r as f64 * sum_l + n_l as f64 * sum_r) / (2.0 * n_l as f64 * n_r as f64);
    Ok(RowDetection::Row(RowEstimate {
        o_l,
        o_a,
        n_left: n_l,
        n_right: n_r,
        one_sided: false,
        diagnostics: diag,
    }))
}

/// Gains for the steering laws. Positive gains steer toward the centreline.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControllerGains {
    /// rad/s per metre of linear offset.
    pub k_l: f64,
    /// 1/s per radian of angular offset.
    pub k_a: f64,
    /// Mask-based near-point gain, rad/s per pixel.
    pub k_f: f64,
    /// Mask-based far-point gain, rad/s per pixel.
    pub k_e: f64,
    /// Metres-per-radian weight of the tracking objective.
    pub w_a: f64,
    /// Free-space search gain, 1/s per radian.
    pub k_free: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains {
            k_l: 0.4,
            k_a: 1.2,
            k_f: 0.01,
            k_e: 0.01,
            w_a: 1.0,
            k_free: 1.0,
        }
    }
}

/// Proportional steering on both offsets.
pub fn steering_command(o_l: f64, o_a: f64, gains: &ControllerGains) -> f64 {
    gains.k_l * o_l + gains.k_a * o_a
}

/// Pick the candidate heading change with the least-occupied forward
/// corridor in a 2D scan, and the angular velocity command it implies.
///
/// Ties are broken by the median of the longest consecutive run of
/// minimizing angles.
pub fn free_space_angle(
    points: &[(f64, f64)],
    radius_cap: f64,
    corridor_half_width: f64,
    candidate_angles: &[f64],
    gain: f64,
) -> Result<(f64, f64)> {
    if candidate_angles.is_empty() {
        return Err(Error::invalid("candidate_angles", "must not be empty"));
    }
    let capped: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(x, y)| (x * x + y * y).sqrt() <= radius_cap)
        .collect();
    let counts: Vec<usize> = candidate_angles
        .iter()
        .map(|&g| {
            let (s, c) = g.sin_cos();
            capped
                .iter()
                .filter(|(x, y)| {
                    // Rotate by -g: corridor occupancy ahead of the robot.
                    let xr = c * x + s * y;
                    let yr = -s * x + c * y;
                    xr > 0.0 && yr.abs() < corridor_half_width
                })
                .count()
        })
        .collect();
    let min = *counts.iter().min().unwrap();
    // Longest consecutive run of minimizers, median index.
    let mut best_run = (0usize, 0usize); // (start, len)
    let mut run_start = None;
    for i in 0..=counts.len() {
        let is_min = i < counts.len() && counts[i] == min;
        match (is_min, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                if i - s > best_run.1 {
                    best_run = (s, i - s);
                }
                run_start = None;
            }
            _ => {}
        }
    }
    let idx = best_run.0 + best_run.1 / 2;
    let gamma = candidate_angles[idx];
    Ok((gamma, gain * gamma))
}

/// Far and near centreline points of a binary mask, in (col, row) pixels.
///
/// Per row the widest foreground segment is taken; rows whose segment
/// touches the left or right border are discarded; the far point is the
/// per-axis median of the five lowest-row centres and the near point the
/// median of the five highest-row centres.
pub fn centreline_from_mask(mask: &BirdsEyeGrid) -> Result<((f64, f64), (f64, f64))> {
    let side = mask.side_px();
    let mut centres: Vec<(f64, f64)> = Vec::new(); // (col, row)
    for row in 0..side {
        let mut best: Option<(usize, usize)> = None; // (start, end) inclusive
        let mut start: Option<usize> = None;
        for col in 0..=side {
            let on = col < side && mask.get(row, col) > 0.5;
            match (on, start) {
                (true, None) => start = Some(col),
                (false, Some(s)) => {
                    let seg = (s, col - 1);
                    if best.map_or(true, |(bs, be)| (seg.1 - seg.0) > (be - bs)) {
                        best = Some(seg);
                    }
                    start = None;
                }
                _ => {}
            }
        }
        if let Some((s, e)) = best {
            if s > 0 && e < side - 1 {
                centres.push(((s + e) as f64 / 2.0, row as f64));
            }
        }
    }
    if centres.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "centreline needs 10 valid mask rows, found {}",
            centres.len()
        )));
    }
    let median = |mut v: Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    };
    let far_rows = &centres[..5]; // lowest row indices (scanned in order)
    let near_rows = &centres[centres.len() - 5..];
    let pick = |rows: &[(f64, f64)]| {
        (
            median(rows.iter().map(|c| c.0).collect()),
            median(rows.iter().map(|c| c.1).collect()),
        )
    };
    Ok((pick(far_rows), pick(near_rows)))
}

/// Two-stage mask steering: align on the near point until it is close to the
/// image centre, then track the far point from the near point.
pub fn two_stage_steering(
    near_x: f64,
    far_x: f64,
    centre_x: f64,
    threshold: f64,
    gains: &ControllerGains,
    foreground_only: bool,
) -> f64 {
    if foreground_only || (centre_x - near_x).abs() > threshold {
        gains.k_f * (centre_x - near_x)
    } else {
        gains.k_e * (near_x - far_x)
    }
}

/// Offsets of the centreline of two treelines, each given by two points in
/// the lidar frame. The centreline's gradient and intercept are the means of
/// the per-line fits.
pub fn ground_truth_offsets(
    treeline_a: ((f64, f64), (f64, f64)),
    treeline_b: ((f64, f64), (f64, f64)),
) -> Result<(f64, f64)> {
    let fit = |((x1, y1), (x2, y2)): ((f64, f64), (f64, f64))| -> Result<(f64, f64)> {
        if (x2 - x1).abs() < 1e-9 {
            return Err(Error::invalid(
                "treeline",
                "vertical in lidar x; label in a rotated frame instead",
            ));
        }
        let m = (y2 - y1) / (x2 - x1);
        Ok((m, y1 - m * x1))
    };
    let (ma, ca) = fit(treeline_a)?;
    let (mb, cb) = fit(treeline_b)?;
    let m_c = (ma + mb) / 2.0;
    let c_c = (ca + cb) / 2.0;
    let o_a = m_c.atan();
    Ok((o_a, c_c * o_a.cos()))
}

/// Offsets from two points known to lie on the centreline itself.
pub fn offsets_from_centre_points(p1: (f64, f64), p2: (f64, f64)) -> Result<(f64, f64)> {
    ground_truth_offsets((p1, p2), (p1, p2))
}

/// Signed tracking objective over an offset trajectory.
pub fn tracking_cost(trajectory: &[(f64, f64)], w_a: f64) -> f64 {
    trajectory.iter().map(|&(o_l, o_a)| o_l + w_a * o_a).sum()
}

/// Magnitude variant used for evaluation, where signed offsets would cancel.
pub fn tracking_cost_abs(trajectory: &[(f64, f64)], w_a: f64) -> f64 {
    trajectory
        .iter()
        .map(|&(o_l, o_a)| o_l.abs() + w_a * o_a.abs())
        .sum()
}

/// Stateful wrapper that keeps steering on the last estimate for a bounded
/// number of rowless frames, then commands a stop.
#[derive(Debug, Clone)]
pub struct RowFollower {
    pub gains: ControllerGains,
    pub hold_limit: usize,
    held_frames: usize,
    last_omega: Option<f64>,
}

/// Velocity command from the follower: `None` linear scale means stop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FollowCommand {
    Steer(f64),
    Stop,
}

impl RowFollower {
    pub fn new(gains: ControllerGains, hold_limit: usize) -> Self {
        RowFollower {
            gains,
            hold_limit,
            held_frames: 0,
            last_omega: None,
        }
    }

    pub fn update(&mut self, detection: &RowDetection) -> FollowCommand {
        match detection {
            RowDetection::Row(e) => {
                self.held_frames = 0;
                let omega = steering_command(e.o_l, e.o_a, &self.gains);
                self.last_omega = Some(omega);
                FollowCommand::Steer(omega)
            }
            RowDetection::NoRow(_) => {
                self.held_frames += 1;
                match self.last_omega {
                    Some(w) if self.held_frames <= self.hold_limit => FollowCommand::Steer(w),
                    _ => FollowCommand::Stop,
                }
            }
        }
    }
}
