//! Structure-feature extractors over bird's-eye rasters and their pixel-wise
//! evaluation harness.
//!
//! Three extractors are provided: best-plane selection (whole revolution or
//! per-azimuth-segment), range-scaled point density, and vertical-object
//! detection via the inter-plane angle test. Masks are scored against truth
//! rasters with pixel confusion counts.

use crate::error::{Error, Result};
use crate::scan::{BirdsEyeGrid, GridSpec, LidarFrame, Point3, rasterize};
use serde::{Deserialize, Serialize};

/// Statistic used to rank planes by their valid (non-zero) ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlaneMetric {
    Mean,
    Median,
    Maximum,
}

impl PlaneMetric {
    fn eval(self, ranges: &[f64]) -> Option<f64> {
        if ranges.is_empty() {
            return None;
        }
        Some(match self {
            PlaneMetric::Mean => ranges.iter().sum::<f64>() / ranges.len() as f64,
            PlaneMetric::Median => {
                let mut v = ranges.to_vec();
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let n = v.len();
                if n % 2 == 1 {
                    v[n / 2]
                } else {
                    (v[n / 2 - 1] + v[n / 2]) / 2.0
                }
            }
            PlaneMetric::Maximum => ranges.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Plane with the highest metric over its valid ranges; ties go to the lower
/// plane index. Returns the winning plane's points.
pub fn select_plane(frame: &LidarFrame, metric: PlaneMetric) -> Result<(usize, Vec<Point3>)> {
    select_plane_in_arc(frame, metric, 0, frame.spec.n_azimuths)
}

fn select_plane_in_arc(
    frame: &LidarFrame,
    metric: PlaneMetric,
    az_start: usize,
    az_len: usize,
) -> Result<(usize, Vec<Point3>)> {
    let mut best: Option<(usize, f64)> = None;
    for plane in 0..frame.spec.n_planes() {
        let ranges: Vec<f64> = (az_start..az_start + az_len)
            .map(|az| frame.range(plane, az))
            .filter(|&r| r > 0.0)
            .collect();
        if let Some(score) = metric.eval(&ranges) {
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((plane, score));
            }
        }
    }
    let (plane, _) = best.ok_or_else(|| {
        Error::InsufficientData("no plane has a valid return in the arc".to_string())
    })?;
    let points = (az_start..az_start + az_len)
        .filter_map(|az| frame.point(plane, az))
        .collect();
    Ok((plane, points))
}

/// Split the revolution into contiguous arcs and run the plane selection per
/// arc, stitching the winners into one composite 2D scan.
pub fn select_plane_segmented(
    frame: &LidarFrame,
    n_segments: usize,
    metric: PlaneMetric,
) -> Result<Vec<Point3>> {
    let n_az = frame.spec.n_azimuths;
    if n_segments == 0 || n_az % n_segments != 0 {
        return Err(Error::invalid(
            "n_segments",
            format!("must divide the {n_az} azimuth columns"),
        ));
    }
    let arc = n_az / n_segments;
    let mut out = Vec::new();
    for s in 0..n_segments {
        // Empty arcs are skipped rather than failing the whole composite.
        if let Ok((_, mut pts)) = select_plane_in_arc(frame, metric, s * arc, arc) {
            out.append(&mut pts);
        }
    }
    Ok(out)
}

/// Parameters of the range-dependent density scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleModel {
    /// Vertical angular resolution, degrees.
    pub delta_v_deg: f64,
    /// Horizontal angular resolution, degrees.
    pub delta_h_deg: f64,
    /// Reference object height, metres.
    pub d_v: f64,
    /// Reference object width, metres.
    pub d_h: f64,
    /// Cap on the vertical count (the sensor's plane count).
    pub max_planes: usize,
    /// Maximum pixel value the scaled density saturates to.
    pub p_max: f64,
}

impl ScaleModel {
    pub fn for_spec(spec: &crate::scan::LidarSpec) -> Self {
        ScaleModel {
            delta_v_deg: spec.plane_step(),
            delta_h_deg: spec.azimuth_step(),
            d_v: 2.0,
            d_h: 0.1,
            max_planes: spec.n_planes(),
            p_max: 255.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("delta_v_deg", self.delta_v_deg),
            ("delta_h_deg", self.delta_h_deg),
            ("d_v", self.d_v),
            ("d_h", self.d_h),
            ("p_max", self.p_max),
        ] {
            if !(v > 0.0) {
                return Err(Error::Invalid {
                    field: "ScaleModel",
                    reason: format!("{name} must be positive"),
                });
            }
        }
        if self.max_planes == 0 {
            return Err(Error::invalid("max_planes", "must be at least 1"));
        }
        Ok(())
    }

    /// Expected number of planes a `d_v`-tall object at range `r_o` spans,
    /// capped at the sensor's plane count. Continuous-valued.
    pub fn n_vertical(&self, r_o: f64) -> f64 {
        let n = 1.0 + (2.0 / self.delta_v_deg) * (self.d_v / (2.0 * r_o)).atan().to_degrees();
        n.min(self.max_planes as f64)
    }

    /// Expected number of azimuth columns a `d_h`-wide object spans.
    pub fn n_horizontal(&self, r_o: f64) -> f64 {
        1.0 + (2.0 / self.delta_h_deg) * (self.d_h / (2.0 * r_o)).atan().to_degrees()
    }
}

/// Range-dependent density scale: the pixel gain that maps the expected
/// point count of a reference object at range `r_o` to `p_max`.
pub fn density_scale_factor(r_o: f64, model: &ScaleModel) -> Result<f64> {
    model.validate()?;
    if !(r_o > 0.0) {
        return Err(Error::invalid("r_o", "must be positive"));
    }
    Ok(model.p_max / (model.n_vertical(r_o) * model.n_horizontal(r_o)))
}

/// Rasterize a frame's returns, scale each cell by the density factor at the
/// cell-centre range, and binarize at the threshold.
pub fn scaled_density_extract(
    frame: &LidarFrame,
    model: &ScaleModel,
    grid: GridSpec,
    threshold: f64,
) -> Result<BirdsEyeGrid> {
    let points: Vec<Point3> = frame.points().into_iter().map(|(_, _, p)| p).collect();
    let mut counts = rasterize(&points, grid, 1.0)?;
    for row in 0..counts.side_px() {
        for col in 0..counts.side_px() {
            let v = counts.get(row, col);
            if v > 0.0 {
                let r = counts.centre_range(row, col).max(grid.metres_per_px / 2.0);
                let s = density_scale_factor(r, model)?;
                counts.set(row, col, (v * s).min(model.p_max));
            }
        }
    }
    Ok(counts.threshold(threshold))
}

/// Inclination between two lidar returns in the same azimuth column,
/// degrees in [0, 90]. Ranges in metres, plane angles in degrees.
/// Vertically stacked points (zero horizontal separation) read 90.
pub fn vertical_angle(r1: f64, alpha1_deg: f64, r2: f64, alpha2_deg: f64) -> f64 {
    let a1 = alpha1_deg.to_radians();
    let a2 = alpha2_deg.to_radians();
    let num = r2 * a2.sin() - r1 * a1.sin();
    let den = r1 * a1.cos() - r2 * a2.cos();
    if den == 0.0 {
        return 90.0;
    }
    (num / den).atan().to_degrees().abs()
}

/// A connected set of range-image cells forming one vertical object.
#[derive(Debug, Clone)]
pub struct VerticalObject {
    /// Member cells as (plane, azimuth).
    pub cells: Vec<(usize, usize)>,
    pub z_min: f64,
    pub z_max: f64,
}

/// Detect vertical structure by connecting each return to the three
/// candidates below it (down-left, down, down-right in the range image)
/// whenever the inter-point angle exceeds the threshold; objects shorter
/// than the height threshold are discarded and survivors rasterized.
pub fn extract_vertical_objects(
    frame: &LidarFrame,
    angle_threshold_deg: f64,
    height_threshold: f64,
    grid: GridSpec,
) -> Result<(Vec<VerticalObject>, BirdsEyeGrid)> {
    let n_planes = frame.spec.n_planes();
    let n_az = frame.spec.n_azimuths;
    let idx = |plane: usize, az: usize| plane * n_az + az;

    let mut parent: Vec<usize> = (0..n_planes * n_az).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }

    for plane in 0..n_planes.saturating_sub(1) {
        for az in 0..n_az {
            let r1 = frame.range(plane, az);
            if r1 == 0.0 {
                continue;
            }
            let a1 = frame.spec.plane_angles[plane];
            let below = plane + 1;
            let a2 = frame.spec.plane_angles[below];
            for daz in [-1i64, 0, 1] {
                let az2 = (az as i64 + daz).rem_euclid(n_az as i64) as usize;
                let r2 = frame.range(below, az2);
                if r2 == 0.0 {
                    continue;
                }
                if vertical_angle(r1, a1, r2, a2) > angle_threshold_deg {
                    let (ra, rb) = (find(&mut parent, idx(plane, az)), find(&mut parent, idx(below, az2)));
                    if ra != rb {
                        parent[ra] = rb;
                    }
                }
            }
        }
    }

    let mut groups: std::collections::HashMap<usize, VerticalObject> = std::collections::HashMap::new();
    for plane in 0..n_planes {
        for az in 0..n_az {
            if let Some(p) = frame.point(plane, az) {
                let root = find(&mut parent, idx(plane, az));
                let obj = groups.entry(root).or_insert(VerticalObject {
                    cells: Vec::new(),
                    z_min: f64::INFINITY,
                    z_max: f64::NEG_INFINITY,
                });
                obj.cells.push((plane, az));
                obj.z_min = obj.z_min.min(p.z);
                obj.z_max = obj.z_max.max(p.z);
            }
        }
    }

    let objects: Vec<VerticalObject> = groups
        .into_values()
        .filter(|o| o.z_max - o.z_min >= height_threshold)
        .collect();
    let points: Vec<Point3> = objects
        .iter()
        .flat_map(|o| o.cells.iter().filter_map(|&(p, a)| frame.point(p, a)))
        .collect();
    let mask = rasterize(&points, grid, 1.0)?.threshold(0.0);
    Ok((objects, mask))
}

/// Pixel confusion counts and the derived rates of a mask against truth.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExtractionScores {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
}

/// Pixel-wise comparison of a binary output mask against a truth mask.
pub fn evaluate_extraction(output: &BirdsEyeGrid, truth: &BirdsEyeGrid) -> Result<ExtractionScores> {
    if output.side_px() != truth.side_px() {
        return Err(Error::ShapeMismatch(format!(
            "output {}px vs truth {}px",
            output.side_px(),
            truth.side_px()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (o, t) in output.cells().iter().zip(truth.cells()) {
        match (*o > 0.5, *t > 0.5) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| {
        if a + b == 0 {
            f64::NAN
        } else {
            a as f64 / (a + b) as f64
        }
    };
    Ok(ExtractionScores {
        tp,
        fp,
        tn,
        fn_,
        precision: ratio(tp, fp),
        recall: ratio(tp, fn_),
        specificity: ratio(tn, fp),
    })
}
