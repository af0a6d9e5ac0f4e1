//! Planar three-link arm kinematics for canopy-side fruit access: closed-form
//! inverse kinematics, forward kinematics, a discretised reachable-workspace
//! map with branch-consistent solution sheets, waypoint planning through the
//! workspace, rigid hand–eye calibration, and picking-geometry helpers.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Link lengths, base position and joint limits of a planar 3-link arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmGeometry {
    /// Link lengths base-out, metres.
    pub link_lengths: [f64; 3],
    /// Base joint position in the arm plane.
    pub base: (f64, f64),
    /// Absolute joint angle limits (lo, hi) in radians, per joint.
    pub joint_limits: [(f64, f64); 3],
}

impl Default for ArmGeometry {
    fn default() -> Self {
        ArmGeometry {
            link_lengths: [0.18, 0.16, 0.10],
            base: (0.0, 0.0),
            joint_limits: [
                (-std::f64::consts::PI, std::f64::consts::PI),
                (-std::f64::consts::PI, std::f64::consts::PI),
                (-std::f64::consts::PI, std::f64::consts::PI),
            ],
        }
    }
}

impl ArmGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.link_lengths.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::invalid("link_lengths", "must all be positive"));
        }
        for (lo, hi) in self.joint_limits {
            if !(lo < hi) {
                return Err(Error::invalid("joint_limits", "lower bound must be below upper"));
            }
        }
        Ok(())
    }

    fn within_limits(&self, angles: &[f64; 3]) -> bool {
        angles
            .iter()
            .zip(self.joint_limits.iter())
            .all(|(&a, &(lo, hi))| a >= lo - 1e-12 && a <= hi + 1e-12)
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

/// End-effector pose from joint angles: cumulative planar chain.
pub fn fk_planar3(geometry: &ArmGeometry, angles: &[f64; 3]) -> (f64, f64, f64) {
    let [r1, r2, r3] = geometry.link_lengths;
    let (x1, y1) = geometry.base;
    let a1 = angles[0];
    let a12 = angles[0] + angles[1];
    let a123 = angles[0] + angles[1] + angles[2];
    let x = x1 + r1 * a1.cos() + r2 * a12.cos() + r3 * a123.cos();
    let y = y1 + r1 * a1.sin() + r2 * a12.sin() + r3 * a123.sin();
    (x, y, a123)
}

/// Joint angles reaching `target` with absolute approach angle `beta`.
///
/// The wrist position is fixed by the approach angle; the remaining two-link
/// problem is the intersection of two circles, solved as a quadratic in the
/// elbow ordinate. When the wrist sits on the base vertical the linear
/// elimination degenerates, so the roles of the two axes are swapped. At most
/// two joint-limit-respecting solutions are returned; an empty vector means
/// the target is unreachable at this approach angle.
pub fn ik_planar3(geometry: &ArmGeometry, target: (f64, f64), beta: f64) -> Result<Vec<[f64; 3]>> {
    geometry.validate()?;
    let [r1, r2, r3] = geometry.link_lengths;
    let (x1, y1) = geometry.base;
    // Wrist (third joint) position.
    let x3 = target.0 - r3 * beta.cos();
    let y3 = target.1 - r3 * beta.sin();

    // Intersect circle radius r1 about the base with circle radius r2 about
    // the wrist. Subtracting the circle equations gives a line; substituting
    // back yields a quadratic along one axis.
    let solve = |swap: bool| -> Vec<(f64, f64)> {
        // Coordinates with the elimination axis second.
        let (bx, by, wx, wy) = if swap {
            (y1, x1, y3, x3)
        } else {
            (x1, y1, x3, y3)
        };
        let dx = wx - bx;
        let dy = wy - by;
        if dx.abs() < 1e-12 {
            return Vec::new();
        }
        // Elbow: u = d + e*v from the line, then a quadratic in v.
        let k = (r1 * r1 - r2 * r2 + wx * wx - bx * bx + wy * wy - by * by) / (2.0 * dx);
        let e = -dy / dx;
        let a = 1.0 + e * e;
        let b = 2.0 * (e * (k - bx) - by);
        let c = (k - bx) * (k - bx) + by * by - r1 * r1;
        let disc = b * b - 4.0 * a * c;
        if disc < -1e-12 {
            return Vec::new();
        }
        let sq = disc.max(0.0).sqrt();
        let mut roots = vec![(-b + sq) / (2.0 * a)];
        if sq > 1e-12 {
            roots.push((-b - sq) / (2.0 * a));
        }
        roots
            .into_iter()
            .map(|v| {
                let u = k + e * v;
                if swap {
                    (v, u)
                } else {
                    (u, v)
                }
            })
            .collect()
    };

    // Eliminate along the larger base-to-wrist component for conditioning;
    // the swap also covers the wrist-directly-above-base degeneracy.
    let dx = (x3 - x1).abs();
    let dy = (y3 - y1).abs();
    let elbows = if dx >= dy && dx >= 1e-12 {
        solve(false)
    } else if dy >= 1e-12 {
        solve(true)
    } else {
        // Wrist coincides with the base: solvable only if r1 == r2, with a
        // continuum of elbows; report as degenerate input.
        return Err(Error::invalid(
            "target",
            "wrist position coincides with the arm base",
        ));
    };

    let mut out: Vec<[f64; 3]> = Vec::new();
    for (x2, y2) in elbows {
        let a1 = (y2 - y1).atan2(x2 - x1);
        let a2 = wrap_angle((y3 - y2).atan2(x3 - x2) - a1);
        let a3 = wrap_angle(beta - a1 - a2);
        let sol = [a1, a2, a3];
        if !geometry.within_limits(&sol) {
            continue;
        }
        if out.iter().any(|s| {
            s.iter()
                .zip(sol.iter())
                .all(|(a, b)| (a - b).abs() < 1e-9)
        }) {
            continue;
        }
        out.push(sol);
    }
    Ok(out)
}

/// Rectangular workspace window discretised on a regular grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkspaceWindow {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution: f64,
}

impl WorkspaceWindow {
    /// The canopy-side picking window used by the default arm.
    pub fn picking_default() -> Self {
        WorkspaceWindow {
            x_min: -0.09,
            x_max: 0.26,
            y_min: 0.4,
            y_max: 0.75,
            resolution: 0.01,
        }
    }

    pub fn nx(&self) -> usize {
        ((self.x_max - self.x_min) / self.resolution).round() as usize + 1
    }

    pub fn ny(&self) -> usize {
        ((self.y_max - self.y_min) / self.resolution).round() as usize + 1
    }

    pub fn cell_centre(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.x_min + ix as f64 * self.resolution,
            self.y_min + iy as f64 * self.resolution,
        )
    }
}

/// Discretised reachability map: one consolidated joint solution per cell.
#[derive(Debug, Clone)]
pub struct WorkspaceMap {
    pub window: WorkspaceWindow,
    /// Row-major `iy * nx + ix`; `None` where the target is unreachable.
    pub cells: Vec<Option<[f64; 3]>>,
}

impl WorkspaceMap {
    pub fn get(&self, ix: usize, iy: usize) -> Option<[f64; 3]> {
        self.cells[iy * self.window.nx() + ix]
    }

    pub fn n_reachable(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

fn joint_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()).sum()
}

/// Build the reachability map for a fixed approach angle, consolidating the
/// two inverse-kinematics branches into one continuous sheet: cells are
/// visited in row-major scan order and each picks the solution closest (in
/// summed joint-angle distance) to its already-assigned left and lower
/// neighbours.
pub fn build_workspace(
    geometry: &ArmGeometry,
    window: &WorkspaceWindow,
    beta: f64,
) -> Result<WorkspaceMap> {
    if !(window.resolution > 0.0) {
        return Err(Error::invalid("resolution", "must be positive"));
    }
    let nx = window.nx();
    let ny = window.ny();
    let mut cells: Vec<Option<[f64; 3]>> = vec![None; nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            let target = window.cell_centre(ix, iy);
            let sols = match ik_planar3(geometry, target, beta) {
                Ok(s) => s,
                Err(_) => Vec::new(),
            };
            if sols.is_empty() {
                continue;
            }
            let mut refs: Vec<[f64; 3]> = Vec::new();
            if ix > 0 {
                if let Some(s) = cells[iy * nx + ix - 1] {
                    refs.push(s);
                }
            }
            if iy > 0 {
                if let Some(s) = cells[(iy - 1) * nx + ix] {
                    refs.push(s);
                }
            }
            let chosen = if refs.is_empty() {
                sols[0]
            } else {
                *sols
                    .iter()
                    .min_by(|a, b| {
                        let da: f64 = refs.iter().map(|r| joint_distance(a, r)).sum();
                        let db: f64 = refs.iter().map(|r| joint_distance(b, r)).sum();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap()
            };
            cells[iy * nx + ix] = Some(chosen);
        }
    }
    Ok(WorkspaceMap {
        window: window.clone(),
        cells,
    })
}

/// A picking approach through the workspace grid, as cell indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaypointPlan {
    /// (ix, iy) cells from start to target inclusive.
    pub cells: Vec<(usize, usize)>,
}

impl WaypointPlan {
    /// Joint-space waypoints through the workspace map.
    pub fn joint_waypoints(&self, map: &WorkspaceMap) -> Vec<[f64; 3]> {
        self.cells
            .iter()
            .filter_map(|&(ix, iy)| map.get(ix, iy))
            .collect()
    }
}

fn lowest_reachable(map: &WorkspaceMap, ix: usize) -> Option<usize> {
    (0..map.window.ny()).find(|&iy| map.get(ix, iy).is_some())
}

/// Plan an approach that stays low while advancing, then ascends to the
/// target: advance along the lowest reachable cells to the target column,
/// then climb that column. Every cell on the path must be reachable.
pub fn plan_waypoints(
    map: &WorkspaceMap,
    start: (usize, usize),
    target: (usize, usize),
) -> Result<WaypointPlan> {
    let nx = map.window.nx();
    let ny = map.window.ny();
    for &(label, (ix, iy)) in &[("start", start), ("target", target)] {
        if ix >= nx || iy >= ny {
            return Err(Error::invalid("cell", format!("{label} outside the window")));
        }
        if map.get(ix, iy).is_none() {
            return Err(Error::Unreachable(format!(
                "{label} cell ({ix}, {iy}) is not reachable"
            )));
        }
    }
    let mut cells = vec![start];
    let mut cur = start;
    // Drop to the low boundary of the start column.
    let low = lowest_reachable(map, cur.0)
        .ok_or_else(|| Error::Unreachable("start column has no reachable cells".into()))?;
    while cur.1 > low {
        cur = (cur.0, cur.1 - 1);
        cells.push(cur);
    }
    // Advance column by column along the low boundary.
    while cur.0 != target.0 {
        let next_ix = if target.0 > cur.0 { cur.0 + 1 } else { cur.0 - 1 };
        let low = lowest_reachable(map, next_ix).ok_or_else(|| {
            Error::Unreachable(format!("column {next_ix} has no reachable cells"))
        })?;
        // Step vertically within the current column first if the boundary rises.
        while cur.1 < low {
            let up = (cur.0, cur.1 + 1);
            if map.get(up.0, up.1).is_none() {
                return Err(Error::Unreachable(format!(
                    "cell ({}, {}) blocks the low-boundary advance",
                    up.0, up.1
                )));
            }
            cur = up;
            cells.push(cur);
        }
        while cur.1 > low {
            cur = (cur.0, cur.1 - 1);
            cells.push(cur);
        }
        cur = (next_ix, cur.1);
        cells.push(cur);
    }
    // Ascend the target column.
    while cur.1 != target.1 {
        let next_iy = if target.1 > cur.1 { cur.1 + 1 } else { cur.1 - 1 };
        cur = (cur.0, next_iy);
        if map.get(cur.0, cur.1).is_none() {
            return Err(Error::Unreachable(format!(
                "cell ({}, {}) on the target column is not reachable",
                cur.0, cur.1
            )));
        }
        cells.push(cur);
    }
    Ok(WaypointPlan { cells })
}

/// Retract from a picking pose: reverse down the current column to the
/// lowest reachable cell.
pub fn plan_retract(map: &WorkspaceMap, from: (usize, usize)) -> Result<WaypointPlan> {
    if map.get(from.0, from.1).is_none() {
        return Err(Error::Unreachable(format!(
            "cell ({}, {}) is not reachable",
            from.0, from.1
        )));
    }
    let low = lowest_reachable(map, from.0).unwrap();
    let cells = (low..=from.1).rev().map(|iy| (from.0, iy)).collect();
    Ok(WaypointPlan { cells })
}

/// Least-squares rigid transform (rotation + translation) mapping each point
/// of `from` onto the corresponding point of `to`. Needs at least three
/// non-collinear correspondences.
pub fn fit_rigid_transform(
    from: &[Vector3<f64>],
    to: &[Vector3<f64>],
) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    if from.len() != to.len() {
        return Err(Error::ShapeMismatch(format!(
            "point counts {} vs {}",
            from.len(),
            to.len()
        )));
    }
    if from.len() < 3 {
        return Err(Error::InsufficientData(
            "need at least three point correspondences".into(),
        ));
    }
    let n = from.len() as f64;
    let c_from: Vector3<f64> = from.iter().sum::<Vector3<f64>>() / n;
    let c_to: Vector3<f64> = to.iter().sum::<Vector3<f64>>() / n;

    // Collinearity check via the second principal moment of the source cloud.
    let mut cov_self = Matrix3::<f64>::zeros();
    for p in from {
        let d = p - c_from;
        cov_self += d * d.transpose();
    }
    let eig = cov_self.symmetric_eigenvalues();
    let mut ev: Vec<f64> = eig.iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if ev[1] <= 1e-12 * ev[0].max(1e-300) {
        return Err(Error::InsufficientData(
            "calibration points are collinear".into(),
        ));
    }

    let mut h = Matrix3::<f64>::zeros();
    for (p, q) in from.iter().zip(to.iter()) {
        h += (p - c_from) * (q - c_to).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut r = vt.transpose() * u.transpose();
    if r.determinant() < 0.0 {
        // Correct an improper (reflected) solution.
        let mut v = vt.transpose();
        v.column_mut(2).neg_mut();
        r = v * u.transpose();
    }
    let t = c_to - r * c_from;
    Ok((r, t))
}

/// Mean Euclidean residual of a rigid transform over point correspondences.
pub fn transform_error(
    from: &[Vector3<f64>],
    to: &[Vector3<f64>],
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
) -> Result<f64> {
    if from.len() != to.len() {
        return Err(Error::ShapeMismatch(format!(
            "point counts {} vs {}",
            from.len(),
            to.len()
        )));
    }
    if from.is_empty() {
        return Err(Error::InsufficientData("no correspondences".into()));
    }
    let sum: f64 = from
        .iter()
        .zip(to.iter())
        .map(|(p, q)| (rotation * p + translation - q).norm())
        .sum();
    Ok(sum / from.len() as f64)
}

/// Lateral approach angle to a fruit: arcsine of the lateral offset between
/// the fruit centre and the image centre over the camera-to-fruit distance.
pub fn fruit_angle(x_centre: f64, x_image: f64, distance: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::invalid("distance", "must be positive"));
    }
    let s = (x_centre - x_image) / distance;
    if s.abs() > 1.0 {
        return Err(Error::invalid(
            "distance",
            "lateral offset exceeds the camera-to-fruit distance",
        ));
    }
    Ok(s.asin())
}

/// What an approach path is predicted to brush against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollisionClass {
    /// Free space.
    Clear,
    /// Another fruit: displaceable, small penalty.
    Fruit,
    /// A branch, wire or post: avoid.
    Rigid,
}

impl CollisionClass {
    pub fn cost(self) -> u32 {
        match self {
            CollisionClass::Clear => 1,
            CollisionClass::Fruit => 3,
            CollisionClass::Rigid => 9,
        }
    }
}

/// Total traversal cost of an approach path through classified cells; lower
/// is better, used to rank candidate approaches.
pub fn collision_score(path: &[CollisionClass]) -> u32 {
    path.iter().map(|c| c.cost()).sum()
}
