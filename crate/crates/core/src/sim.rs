//! Synthetic pergola-orchard worlds and a ray-cast lidar model.
//!
//! Worlds are built from a small primitive set: vertical cylinders for posts,
//! trunks, weeds, hanging branches and pedestrians; axis-aligned boxes for
//! hedges; a sloped ground plane; and a canopy slab with sinusoidal sag.
//! Casting a scan yields a [`LidarFrame`] plus per-point class labels and the
//! true linear/angular offsets of the robot from the current row centreline.

use crate::error::{Error, Result};
use crate::scan::{BirdsEyeGrid, GridSpec, LidarFrame, LidarSpec, Point3, rasterize};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Class of the world primitive a lidar return came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectClass {
    Post,
    Trunk,
    Hedge,
    Canopy,
    Ground,
    Weed,
    Branch,
    Pedestrian,
    BoundaryObject,
}

impl ObjectClass {
    /// Structure-defining classes: the permanent skeleton of the block.
    pub fn is_structure(self) -> bool {
        matches!(
            self,
            ObjectClass::Post | ObjectClass::Trunk | ObjectClass::Hedge | ObjectClass::BoundaryObject
        )
    }

    pub fn is_post_or_trunk(self) -> bool {
        matches!(self, ObjectClass::Post | ObjectClass::Trunk)
    }

    fn diffuse_intensity(self) -> u8 {
        match self {
            ObjectClass::Post => 70,
            ObjectClass::Trunk => 60,
            ObjectClass::Hedge => 45,
            ObjectClass::Canopy => 50,
            ObjectClass::Ground => 30,
            ObjectClass::Weed => 40,
            ObjectClass::Branch => 45,
            ObjectClass::Pedestrian => 55,
            ObjectClass::BoundaryObject => 50,
        }
    }
}

/// Vertical cylinder primitive in world coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cylinder {
    pub x: f64,
    pub y: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub radius: f64,
    pub class: ObjectClass,
    /// Retro-reflective surface (high-visibility vest strip).
    pub reflective: bool,
}

/// Axis-aligned box primitive (hedges and block-boundary objects).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Box3 {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub class: ObjectClass,
}

/// Pedestrian placement. The body is a cylinder; the optional vest strip is a
/// thin reflective cylinder at chest height.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PedestrianConfig {
    pub x: f64,
    pub y: f64,
    /// Width of the retro-reflective strip in metres; `None` for no vest.
    pub vest_strip_width: Option<f64>,
}

/// Parametric scene description. Rows run along +x; treeline `i` sits at
/// `y = i * row_width`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldConfig {
    pub row_count: usize,
    pub row_width: f64,
    pub row_length: f64,
    pub post_spacing: f64,
    pub post_radius: f64,
    pub trunk_radius: f64,
    pub canopy_height: f64,
    /// Peak-to-trough canopy sag amplitude, metres.
    pub canopy_sag: f64,
    /// Fraction of 0.5 m canopy patches that are open holes a ray passes
    /// through, letting returns form behind thin posts and trunks.
    pub canopy_hole_fraction: f64,
    /// Ground gradient (dz/dx, dz/dy).
    pub ground_slope: (f64, f64),
    /// Hedge across the far end of the rows at this x, `None` for open
    /// headland.
    pub hedge_at_far_end: Option<f64>,
    pub hedge_height: f64,
    pub hedge_thickness: f64,
    pub weed_count: usize,
    pub branch_count: usize,
    pub pedestrians: Vec<PedestrianConfig>,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            row_count: 2,
            row_width: 5.0,
            row_length: 30.0,
            post_spacing: 5.5,
            post_radius: 0.08,
            trunk_radius: 0.05,
            canopy_height: 2.0,
            canopy_sag: 0.3,
            canopy_hole_fraction: 0.0,
            ground_slope: (0.0, 0.0),
            hedge_at_far_end: None,
            hedge_height: 2.5,
            hedge_thickness: 0.5,
            weed_count: 0,
            branch_count: 0,
            pedestrians: Vec::new(),
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.row_count == 0 {
            return Err(Error::invalid("row_count", "must be at least 1"));
        }
        if !(self.row_width > 1.0) {
            return Err(Error::invalid("row_width", "must exceed twice the robot half-width"));
        }
        if !(self.row_length > 0.0) {
            return Err(Error::invalid("row_length", "must be positive"));
        }
        if !(self.post_spacing > 0.0) {
            return Err(Error::invalid("post_spacing", "must be positive"));
        }
        if !(self.post_radius > 0.0) || !(self.trunk_radius > 0.0) {
            return Err(Error::invalid("post_radius", "radii must be positive"));
        }
        if !(self.canopy_height > 0.0) {
            return Err(Error::invalid("canopy_height", "must be positive"));
        }
        if self.canopy_sag < 0.0 {
            return Err(Error::invalid("canopy_sag", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.canopy_hole_fraction) {
            return Err(Error::invalid("canopy_hole_fraction", "must lie in [0, 1]"));
        }
        if !(self.hedge_height > 0.0) {
            return Err(Error::invalid("hedge_height", "must be positive"));
        }
        for p in &self.pedestrians {
            if let Some(w) = p.vest_strip_width {
                if !(w > 0.0) {
                    return Err(Error::invalid("vest_strip_width", "must be positive when present"));
                }
            }
        }
        Ok(())
    }
}

/// Built scene: primitives plus the treeline layout they were generated from.
#[derive(Debug, Clone)]
pub struct OrchardWorld {
    pub config: WorldConfig,
    pub cylinders: Vec<Cylinder>,
    pub boxes: Vec<Box3>,
    /// y positions of the treelines, lowest first.
    pub treelines: Vec<f64>,
    /// Block bounds (x_min, x_max, y_min, y_max) the canopy spans.
    pub bounds: (f64, f64, f64, f64),
}

impl OrchardWorld {
    pub fn ground_z(&self, x: f64, y: f64) -> f64 {
        self.config.ground_slope.0 * x + self.config.ground_slope.1 * y
    }

    /// Canopy underside height. Sag varies along x with the post spacing as
    /// its period.
    pub fn canopy_z(&self, x: f64) -> f64 {
        let period = self.config.post_spacing;
        self.config.canopy_height
            - self.config.canopy_sag * 0.5 * (1.0 - (2.0 * std::f64::consts::PI * x / period).cos())
    }

    pub fn in_bounds(&self, x: f64, y: f64) -> bool {
        let (x0, x1, y0, y1) = self.bounds;
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }

    /// Index of the row the given y coordinate lies in.
    pub fn row_of(&self, y: f64) -> usize {
        let i = (y / self.config.row_width).floor();
        (i.max(0.0) as usize).min(self.config.row_count - 1)
    }

    /// Minimum distance from a point to any post centre.
    pub fn nearest_post_distance(&self, x: f64, y: f64) -> f64 {
        self.cylinders
            .iter()
            .filter(|c| c.class == ObjectClass::Post)
            .map(|c| ((c.x - x).powi(2) + (c.y - y).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Deterministic world construction from a config.
pub fn build_world(config: &WorldConfig) -> Result<OrchardWorld> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cylinders = Vec::new();
    let mut boxes = Vec::new();

    let n_treelines = config.row_count + 1;
    let treelines: Vec<f64> = (0..n_treelines).map(|i| i as f64 * config.row_width).collect();
    let y_min = -1.0;
    let y_max = treelines[n_treelines - 1] + 1.0;
    let bounds = (0.0, config.row_length, y_min, y_max);

    let vertical = |x: f64, y: f64, height_lo: f64, height_hi: f64, radius: f64, class| {
        let g = config.ground_slope.0 * x + config.ground_slope.1 * y;
        Cylinder {
            x,
            y,
            z_min: g + height_lo,
            z_max: g + height_hi,
            radius,
            class,
            reflective: false,
        }
    };

    for &ty in &treelines {
        let n_posts = (config.row_length / config.post_spacing).floor() as usize + 1;
        for k in 0..n_posts {
            let px = k as f64 * config.post_spacing;
            // Posts reach the canopy; trunks sit midway between posts.
            cylinders.push(vertical(px, ty, 0.0, config.canopy_height, config.post_radius, ObjectClass::Post));
            if k + 1 < n_posts {
                let tx = px + config.post_spacing / 2.0;
                cylinders.push(vertical(tx, ty, 0.0, config.canopy_height, config.trunk_radius, ObjectClass::Trunk));
            }
        }
    }

    // Clutter sits near the treelines, off the driving line.
    for _ in 0..config.weed_count {
        let tl = *treelines.choose(&mut rng).unwrap();
        let x = rng.gen_range(0.0..config.row_length);
        let y = tl + rng.gen_range(-0.6..0.6);
        cylinders.push(vertical(x, y, 0.0, 0.3, 0.10, ObjectClass::Weed));
    }
    for _ in 0..config.branch_count {
        let tl = *treelines.choose(&mut rng).unwrap();
        let x = rng.gen_range(0.0..config.row_length);
        let y = tl + rng.gen_range(-0.8..0.8);
        let top = config.canopy_height;
        cylinders.push(vertical(x, y, top - 0.3, top, 0.04, ObjectClass::Branch));
    }

    for p in &config.pedestrians {
        let g = config.ground_slope.0 * p.x + config.ground_slope.1 * p.y;
        cylinders.push(Cylinder {
            x: p.x,
            y: p.y,
            z_min: g,
            z_max: g + 1.7,
            radius: 0.18,
            class: ObjectClass::Pedestrian,
            reflective: false,
        });
        if let Some(w) = p.vest_strip_width {
            // Vest strip faces the sensor from any direction: a thin
            // cylinder of diameter w at chest height, just proud of the body.
            cylinders.push(Cylinder {
                x: p.x,
                y: p.y,
                z_min: g + 0.9,
                z_max: g + 1.5,
                radius: 0.18 + w / 2.0,
                class: ObjectClass::Pedestrian,
                reflective: true,
            });
        }
    }

    if let Some(hx) = config.hedge_at_far_end {
        boxes.push(Box3 {
            min: [hx, y_min, 0.0],
            max: [hx + config.hedge_thickness, y_max, config.hedge_height],
            class: ObjectClass::Hedge,
        });
    }

    Ok(OrchardWorld {
        config: config.clone(),
        cylinders,
        boxes,
        treelines,
        bounds,
    })
}

/// Robot pose and odometry. Heading is normalized to (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    /// Accumulated wheel travel, metres, monotone non-decreasing.
    pub odometer: f64,
    pub v: f64,
    pub omega: f64,
}

impl RobotState {
    pub fn at(x: f64, y: f64, heading: f64) -> Self {
        RobotState {
            x,
            y,
            heading: normalize_angle(heading),
            odometer: 0.0,
            v: 0.0,
            omega: 0.0,
        }
    }
}

pub fn normalize_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a <= -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

/// Exact unicycle integration: straight when omega is zero, a circular arc of
/// radius v/omega otherwise.
pub fn step_robot(state: &RobotState, v: f64, omega: f64, dt: f64) -> Result<RobotState> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let (x, y, h) = if omega.abs() < 1e-12 {
        (
            state.x + v * dt * state.heading.cos(),
            state.y + v * dt * state.heading.sin(),
            state.heading,
        )
    } else {
        let r = v / omega;
        let h2 = state.heading + omega * dt;
        (
            state.x + r * (h2.sin() - state.heading.sin()),
            state.y - r * (h2.cos() - state.heading.cos()),
            h2,
        )
    };
    Ok(RobotState {
        x,
        y,
        heading: normalize_angle(h),
        odometer: state.odometer + (v * dt).abs(),
        v,
        omega,
    })
}

/// Sensor imperfections applied while casting.
#[derive(Debug, Clone, Copy)]
pub struct ScanOptions {
    /// Gaussian range noise sigma, metres. 0 disables noise.
    pub range_noise_sigma: f64,
    /// Probability that a retro-reflector return loses its range value.
    pub vest_dropout_prob: f64,
    /// Probability that a diffuse return is replaced by a spuriously long
    /// range, as happens when a beam slips past a thin object or through
    /// foliage and measures whatever lies behind.
    pub stray_return_prob: f64,
    pub seed: u64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            range_noise_sigma: 0.0,
            vest_dropout_prob: 0.5,
            stray_return_prob: 0.0,
            seed: 0,
        }
    }
}

/// Per-frame ground truth attached to a cast scan.
#[derive(Debug, Clone)]
pub struct GroundTruthLabels {
    /// Class per cell, indexed like the frame matrices. `None` = no return.
    pub classes: Vec<Option<ObjectClass>>,
    /// True linear offset of the current-row centreline, metres.
    pub o_l: f64,
    /// True angular offset of the current-row centreline, radians.
    pub o_a: f64,
    n_azimuths: usize,
}

impl GroundTruthLabels {
    pub fn class(&self, plane: usize, azimuth: usize) -> Option<ObjectClass> {
        self.classes[plane * self.n_azimuths + azimuth]
    }

    /// Bird's-eye {0,1} masks of the labelled returns: all structure, and
    /// posts and trunks only.
    pub fn masks(&self, frame: &LidarFrame, grid: GridSpec) -> Result<(BirdsEyeGrid, BirdsEyeGrid)> {
        let mut structure = Vec::new();
        let mut posts = Vec::new();
        for (plane, az, p) in frame.points() {
            if let Some(class) = self.class(plane, az) {
                if class.is_structure() {
                    structure.push(p);
                }
                if class.is_post_or_trunk() {
                    posts.push(p);
                }
            }
        }
        Ok((
            rasterize(&structure, grid, 1.0)?.threshold(0.0),
            rasterize(&posts, grid, 1.0)?.threshold(0.0),
        ))
    }
}

struct Hit {
    t: f64,
    class: ObjectClass,
    reflective: bool,
}

fn ray_cylinder(ox: f64, oy: f64, oz: f64, dx: f64, dy: f64, dz: f64, c: &Cylinder) -> Option<f64> {
    // Intersect with the infinite cylinder, then clip to the z span.
    let fx = ox - c.x;
    let fy = oy - c.y;
    let a = dx * dx + dy * dy;
    if a < 1e-15 {
        return None; // vertical ray, treat as miss
    }
    let b = 2.0 * (fx * dx + fy * dy);
    let cc = fx * fx + fy * fy - c.radius * c.radius;
    let disc = b * b - 4.0 * a * cc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
        if t > 1e-6 {
            let z = oz + t * dz;
            if z >= c.z_min && z <= c.z_max {
                return Some(t);
            }
        }
    }
    None
}

fn ray_box(ox: f64, oy: f64, oz: f64, dx: f64, dy: f64, dz: f64, b: &Box3) -> Option<f64> {
    let o = [ox, oy, oz];
    let d = [dx, dy, dz];
    let mut t0 = 1e-6_f64;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        if d[i].abs() < 1e-15 {
            if o[i] < b.min[i] || o[i] > b.max[i] {
                return None;
            }
        } else {
            let inv = 1.0 / d[i];
            let (mut ta, mut tb) = ((b.min[i] - o[i]) * inv, (b.max[i] - o[i]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
    }
    Some(t0)
}

struct Caster<'w> {
    world: &'w OrchardWorld,
    origin: Point3,
    heading: f64,
}

impl<'w> Caster<'w> {
    fn new(world: &'w OrchardWorld, robot: &RobotState, mount_height: f64) -> Self {
        let origin = Point3::new(
            robot.x,
            robot.y,
            world.ground_z(robot.x, robot.y) + mount_height,
        );
        Caster {
            world,
            origin,
            heading: robot.heading,
        }
    }

    /// Nearest hit along a world-frame unit direction, up to max_range.
    fn cast(&self, dx: f64, dy: f64, dz: f64, max_range: f64, candidates: &[usize]) -> Option<Hit> {
        let (ox, oy, oz) = (self.origin.x, self.origin.y, self.origin.z);
        let mut best: Option<Hit> = None;
        let mut consider = |t: f64, class: ObjectClass, reflective: bool| {
            if t > 1e-6 && t <= max_range && best.as_ref().map_or(true, |b| t < b.t) {
                best = Some(Hit { t, class, reflective });
            }
        };

        for &i in candidates {
            let c = &self.world.cylinders[i];
            if let Some(t) = ray_cylinder(ox, oy, oz, dx, dy, dz, c) {
                consider(t, c.class, c.reflective);
            }
        }
        for b in &self.world.boxes {
            if let Some(t) = ray_box(ox, oy, oz, dx, dy, dz, b) {
                consider(t, b.class, false);
            }
        }
        // Ground plane z = sx*x + sy*y.
        let (sx, sy) = self.world.config.ground_slope;
        let denom = dz - sx * dx - sy * dy;
        if denom.abs() > 1e-12 {
            let t = (sx * ox + sy * oy - oz) / denom;
            if t > 1e-6 && t <= max_range {
                consider(t, ObjectClass::Ground, false);
            }
        }
        // Canopy underside, only over the block.
        if let Some(t) = self.cast_canopy(dx, dy, dz, max_range) {
            consider(t, ObjectClass::Canopy, false);
        }
        best
    }

    /// True when the 0.5 m canopy patch at this position is an open hole.
    fn canopy_hole_at(&self, x: f64, y: f64) -> bool {
        let frac = self.world.config.canopy_hole_fraction;
        if frac <= 0.0 {
            return false;
        }
        let ix = (x / 0.5).floor() as i64 as u64;
        let iy = (y / 0.5).floor() as i64 as u64;
        // splitmix64 over the patch coordinates and the world seed.
        let mut h = self
            .world
            .config
            .seed
            .wrapping_add(ix.wrapping_mul(0x9E3779B97F4A7C15))
            .wrapping_add(iy.wrapping_mul(0xBF58476D1CE4E5B9));
        h ^= h >> 30;
        h = h.wrapping_mul(0xBF58476D1CE4E5B9);
        h ^= h >> 27;
        h = h.wrapping_mul(0x94D049BB133111EB);
        h ^= h >> 31;
        (h as f64 / u64::MAX as f64) < frac
    }

    fn cast_canopy(&self, dx: f64, dy: f64, dz: f64, max_range: f64) -> Option<f64> {
        let (ox, oy, oz) = (self.origin.x, self.origin.y, self.origin.z);
        let w = self.world;
        let f = |t: f64| oz + t * dz - w.canopy_z(ox + t * dx);
        let accept = |t: f64| -> Option<f64> {
            let (hx, hy) = (ox + t * dx, oy + t * dy);
            if t <= max_range && w.in_bounds(hx, hy) && !self.canopy_hole_at(hx, hy) {
                Some(t)
            } else {
                None
            }
        };
        if w.config.canopy_sag == 0.0 {
            // Flat slab: closed form, a ray crosses it at most once.
            if dz.abs() < 1e-12 {
                return None;
            }
            let t = (w.config.canopy_height - oz) / dz;
            if t > 1e-6 {
                return accept(t);
            }
            return None;
        }
        // March and bisect each upward crossing of the sag surface; a hole
        // lets the ray continue to the next crossing. Crossings can only
        // happen where the ray height lies inside the band the surface
        // occupies and the ray is over the block footprint, so the march is
        // clipped to that parameter window first.
        let z_top = w.config.canopy_height;
        let z_bottom = z_top - w.config.canopy_sag;
        let (mut t_lo, mut t_hi) = if dz.abs() < 1e-12 {
            if oz < z_bottom || oz > z_top {
                return None;
            }
            (1e-6, max_range)
        } else {
            let a = (z_bottom - oz) / dz;
            let b = (z_top - oz) / dz;
            ((a.min(b)).max(1e-6), (a.max(b)).min(max_range))
        };
        let (x0, x1, y0, y1) = w.bounds;
        for (o_c, d_c, lo_c, hi_c) in [(ox, dx, x0, x1), (oy, dy, y0, y1)] {
            if d_c.abs() < 1e-12 {
                if o_c < lo_c || o_c > hi_c {
                    return None;
                }
            } else {
                let a = (lo_c - o_c) / d_c;
                let b = (hi_c - o_c) / d_c;
                t_lo = t_lo.max(a.min(b));
                t_hi = t_hi.min(a.max(b));
            }
        }
        if t_lo >= t_hi {
            return None;
        }
        let step = 0.05;
        let mut t_prev = t_lo;
        let mut f_prev = f(t_prev);
        let mut t = t_lo + step;
        while t <= t_hi + step {
            let t_cur = t.min(t_hi);
            let ft = f(t_cur);
            if f_prev < 0.0 && ft >= 0.0 {
                let (mut lo, mut hi) = (t_prev, t_cur);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let t_hit = 0.5 * (lo + hi);
                if t_hit > max_range {
                    return None;
                }
                let (hx, hy) = (ox + t_hit * dx, oy + t_hit * dy);
                if w.in_bounds(hx, hy) && !self.canopy_hole_at(hx, hy) {
                    return Some(t_hit);
                }
                // Passed through a hole (or beyond the block): keep marching.
            }
            f_prev = ft;
            t_prev = t_cur;
            t += step;
        }
        None
    }

    /// Bucket cylinder indices by azimuth column to avoid testing every
    /// cylinder against every ray.
    fn azimuth_buckets(&self, n_azimuths: usize) -> Vec<Vec<usize>> {
        let mut buckets = vec![Vec::new(); n_azimuths];
        let step = std::f64::consts::TAU / n_azimuths as f64;
        for (i, c) in self.world.cylinders.iter().enumerate() {
            let dx = c.x - self.origin.x;
            let dy = c.y - self.origin.y;
            let dist = (dx * dx + dy * dy).sqrt();
            if dist <= c.radius + 0.05 {
                for b in buckets.iter_mut() {
                    b.push(i);
                }
                continue;
            }
            let centre = normalize_angle(dy.atan2(dx) - self.heading);
            let half = ((c.radius + 0.02) / dist).asin() + step;
            let lo = ((centre - half) / step).floor() as i64;
            let hi = ((centre + half) / step).ceil() as i64;
            for k in lo..=hi {
                let idx = k.rem_euclid(n_azimuths as i64) as usize;
                buckets[idx].push(i);
            }
        }
        buckets
    }
}

/// Cast a full 3D scan and label every return.
pub fn cast_scan(
    world: &OrchardWorld,
    robot: &RobotState,
    spec: &LidarSpec,
    options: &ScanOptions,
) -> Result<(LidarFrame, GroundTruthLabels)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let noise = if options.range_noise_sigma > 0.0 {
        Some(Normal::new(0.0, options.range_noise_sigma).map_err(|e| Error::invalid("range_noise_sigma", e.to_string()))?)
    } else {
        None
    };

    let caster = Caster::new(world, robot, spec.mount_height);
    let buckets = caster.azimuth_buckets(spec.n_azimuths);

    let mut frame = LidarFrame::empty(spec.clone())?;
    let n = spec.n_planes() * spec.n_azimuths;
    let mut classes: Vec<Option<ObjectClass>> = vec![None; n];

    for (plane, &alpha_deg) in spec.plane_angles.iter().enumerate() {
        let alpha = alpha_deg.to_radians();
        let (sa, ca) = (alpha.sin(), alpha.cos());
        for az in 0..spec.n_azimuths {
            let theta = spec.azimuth_deg(az).to_radians() + robot.heading;
            let (dx, dy, dz) = (ca * theta.cos(), ca * theta.sin(), sa);
            if let Some(hit) = caster.cast(dx, dy, dz, spec.max_range, &buckets[az]) {
                let mut range = hit.t;
                if let Some(n) = &noise {
                    range = (range + n.sample(&mut rng)).max(0.01);
                }
                let intensity = if hit.reflective {
                    150 + (rng.gen::<u8>() % 100)
                } else {
                    hit.class.diffuse_intensity()
                };
                let stray = !hit.reflective
                    && options.stray_return_prob > 0.0
                    && rng.gen::<f64>() < options.stray_return_prob;
                if stray {
                    // The beam slipped past the surface; report something
                    // further away instead.
                    let ceiling = (range + 50.0).min(spec.max_range);
                    if ceiling > range {
                        range = rng.gen_range(range..ceiling);
                    }
                }
                let dropped = hit.reflective && rng.gen::<f64>() < options.vest_dropout_prob;
                let stored = if dropped { 0.0 } else { range.min(spec.max_range) };
                frame.set(plane, az, stored, intensity)?;
                classes[plane * spec.n_azimuths + az] = if dropped || stray {
                    None
                } else {
                    Some(hit.class)
                };
            }
        }
    }

    let (o_l, o_a) = true_offsets(world, robot).unwrap_or((0.0, 0.0));
    Ok((
        frame,
        GroundTruthLabels {
            classes,
            o_l,
            o_a,
            n_azimuths: spec.n_azimuths,
        },
    ))
}

/// True (o_l, o_a) of the current-row centreline in the lidar frame, computed
/// from the treeline geometry. `None` when the robot faces across the rows
/// (the centreline is vertical in lidar x).
pub fn true_offsets(world: &OrchardWorld, robot: &RobotState) -> Option<(f64, f64)> {
    let row = world.row_of(robot.y);
    let centre_y = (world.treelines[row] + world.treelines[row + 1]) / 2.0;
    // Transform two centreline points into the lidar frame.
    let to_lidar = |wx: f64, wy: f64| {
        let dx = wx - robot.x;
        let dy = wy - robot.y;
        let (s, c) = robot.heading.sin_cos();
        (c * dx + s * dy, -s * dx + c * dy)
    };
    let (x1, y1) = to_lidar(robot.x - 5.0, centre_y);
    let (x2, y2) = to_lidar(robot.x + 5.0, centre_y);
    if (x2 - x1).abs() < 1e-9 {
        return None;
    }
    let m = (y2 - y1) / (x2 - x1);
    let c = y1 - m * x1;
    let o_a = m.atan();
    let o_l = c * o_a.cos();
    Some((o_l, o_a))
}

/// A labelled point from a 2D vertical scan, in the sensor frame: y lateral
/// (left positive), z up relative to the sensor.
#[derive(Debug, Clone, Copy)]
pub struct VerticalPoint {
    pub y: f64,
    pub z: f64,
    pub class: ObjectClass,
}

/// Cast a 2D scan in the vertical plane through the sensor, transverse to
/// the direction of travel.
pub fn cast_vertical_scan(
    world: &OrchardWorld,
    robot: &RobotState,
    mount_height: f64,
    max_range: f64,
    angle_step_deg: f64,
) -> Vec<VerticalPoint> {
    let caster = Caster::new(world, robot, mount_height);
    let all: Vec<usize> = (0..world.cylinders.len()).collect();
    let (hs, hc) = robot.heading.sin_cos();
    // Lateral unit vector (robot left) in world coordinates.
    let (lx, ly) = (-hs, hc);
    let n = (360.0 / angle_step_deg).round() as usize;
    let mut out = Vec::new();
    for k in 0..n {
        let psi = (k as f64 * angle_step_deg).to_radians();
        let (dy, dz) = (psi.cos(), psi.sin());
        let (dx_w, dy_w) = (lx * dy, ly * dy);
        if let Some(hit) = caster.cast(dx_w, dy_w, dz, max_range, &all) {
            out.push(VerticalPoint {
                y: hit.t * dy,
                z: hit.t * dz,
                class: hit.class,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn build_world_deterministic() {
        let cfg = WorldConfig {
            weed_count: 10,
            branch_count: 5,
            seed: 42,
            ..Default::default()
        };
        let a = build_world(&cfg).unwrap();
        let b = build_world(&cfg).unwrap();
        assert_eq!(a.cylinders.len(), b.cylinders.len());
        for (ca, cb) in a.cylinders.iter().zip(&b.cylinders) {
            assert_eq!((ca.x, ca.y, ca.radius), (cb.x, cb.y, cb.radius));
        }
    }

    #[test]
    fn build_world_minimal() {
        let cfg = WorldConfig::default();
        let w = build_world(&cfg).unwrap();
        assert_eq!(w.treelines.len(), 3); // 2 rows -> 3 treelines
        assert!(w.cylinders.iter().any(|c| c.class == ObjectClass::Post));
    }

    #[test]
    fn post_spacing_measured() {
        let w = build_world(&WorldConfig::default()).unwrap();
        let posts: Vec<&Cylinder> = w
            .cylinders
            .iter()
            .filter(|c| c.class == ObjectClass::Post && c.y == 0.0)
            .collect();
        let mut min_gap = f64::INFINITY;
        for i in 0..posts.len() {
            for j in (i + 1)..posts.len() {
                let d = ((posts[i].x - posts[j].x).powi(2) + (posts[i].y - posts[j].y).powi(2)).sqrt();
                min_gap = min_gap.min(d);
            }
        }
        assert_relative_eq!(min_gap, 5.5, epsilon = 1e-9);
    }

    #[test]
    fn invalid_geometry_names_field() {
        let cfg = WorldConfig {
            row_width: 0.5,
            ..Default::default()
        };
        let err = build_world(&cfg).unwrap_err();
        assert!(err.to_string().contains("row_width"));
    }

    #[test]
    fn step_robot_straight_and_spin() {
        let s = RobotState::at(0.0, 0.0, 0.0);
        let s2 = step_robot(&s, 1.0, 0.0, 1.0).unwrap();
        assert_relative_eq!(s2.x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s2.odometer, 1.0, epsilon = 1e-12);

        let s3 = step_robot(&s, 0.0, 1.0, std::f64::consts::PI).unwrap();
        assert_relative_eq!(s3.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(s3.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(s3.heading.abs(), std::f64::consts::PI, epsilon = 1e-9);
    }

    #[test]
    fn step_robot_arc_chord() {
        let s = RobotState::at(0.0, 0.0, 0.0);
        let s2 = step_robot(&s, 1.0, 1.0, std::f64::consts::FRAC_PI_2).unwrap();
        let chord = (s2.x * s2.x + s2.y * s2.y).sqrt();
        assert_relative_eq!(chord, 2.0 * (std::f64::consts::FRAC_PI_4).sin(), epsilon = 1e-9);
    }

    #[test]
    fn empty_flat_world_only_ground_below() {
        let cfg = WorldConfig {
            row_count: 1,
            row_length: 5.0,
            // push primitives far away so only ground is visible near origin
            ..Default::default()
        };
        let mut w = build_world(&cfg).unwrap();
        w.cylinders.clear();
        w.boxes.clear();
        w.bounds = (1e9, 1e9 + 1.0, 1e9, 1e9 + 1.0); // no canopy anywhere
        let robot = RobotState::at(0.0, 2.5, 0.0);
        let spec = LidarSpec::default();
        let (frame, labels) = cast_scan(&w, &robot, &spec, &ScanOptions::default()).unwrap();
        for plane in 0..spec.n_planes() {
            for az in 0..spec.n_azimuths {
                if frame.range(plane, az) > 0.0 {
                    assert!(spec.plane_angles[plane] < 0.0, "returns only in downward planes");
                    assert_eq!(labels.class(plane, az), Some(ObjectClass::Ground));
                }
            }
        }
    }

    #[test]
    fn scan_ranges_match_true_distance() {
        let w = build_world(&WorldConfig::default()).unwrap();
        let robot = RobotState::at(8.0, 2.5, 0.3);
        let spec = LidarSpec::default();
        let (frame, _) = cast_scan(&w, &robot, &spec, &ScanOptions::default()).unwrap();
        // Spot-check: every return lies on or inside a primitive surface.
        let origin_z = w.ground_z(robot.x, robot.y) + spec.mount_height;
        let mut checked = 0;
        for (plane, az, p) in frame.points() {
            // World position of the return.
            let (s, c) = robot.heading.sin_cos();
            let wx = robot.x + c * p.x - s * p.y;
            let wy = robot.y + s * p.x + c * p.y;
            let wz = origin_z + p.z;
            let near_surface = w
                .cylinders
                .iter()
                .any(|cy| {
                    let d = ((wx - cy.x).powi(2) + (wy - cy.y).powi(2)).sqrt();
                    (d - cy.radius).abs() < 1e-6 && wz >= cy.z_min - 1e-6 && wz <= cy.z_max + 1e-6
                })
                || (wz - w.ground_z(wx, wy)).abs() < 1e-6
                || (wz - w.canopy_z(wx)).abs() < 1e-4
                || w.boxes.iter().any(|b| {
                    wx >= b.min[0] - 1e-6
                        && wx <= b.max[0] + 1e-6
                        && wy >= b.min[1] - 1e-6
                        && wy <= b.max[1] + 1e-6
                        && wz >= b.min[2] - 1e-6
                        && wz <= b.max[2] + 1e-6
                });
            assert!(near_surface, "return off any surface at plane {plane} az {az}");
            checked += 1;
        }
        assert!(checked > 1000);
    }

    #[test]
    fn scan_deterministic() {
        let cfg = WorldConfig {
            weed_count: 5,
            seed: 7,
            ..Default::default()
        };
        let w = build_world(&cfg).unwrap();
        let robot = RobotState::at(5.0, 2.5, 0.05);
        let spec = LidarSpec::default();
        let opts = ScanOptions {
            range_noise_sigma: 0.03,
            seed: 11,
            ..Default::default()
        };
        let (a, _) = cast_scan(&w, &robot, &spec, &opts).unwrap();
        let (b, _) = cast_scan(&w, &robot, &spec, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_post_hit_count_matches_angular_width() {
        // A lone 0.1 m wide post 5 m ahead: the number of azimuth columns
        // hitting it should match 1 + (2/step)*atan(0.05/5) discretized.
        let mut w = build_world(&WorldConfig::default()).unwrap();
        w.cylinders = vec![Cylinder {
            x: 5.0,
            y: 0.0,
            z_min: 0.0,
            z_max: 2.0,
            radius: 0.05,
            class: ObjectClass::Post,
            reflective: false,
        }];
        w.boxes.clear();
        w.bounds = (1e9, 1e9 + 1.0, 1e9, 1e9 + 1.0);
        let robot = RobotState::at(0.0, 0.0, 0.0);
        let spec = LidarSpec::default();
        let (frame, _) = cast_scan(&w, &robot, &spec, &ScanOptions::default()).unwrap();
        // Horizontal plane (index 7 at +1 deg is near-horizontal; use the
        // plane at -1 deg which still crosses the post at 5 m).
        let plane = 7;
        let hits = (0..spec.n_azimuths)
            .filter(|&az| frame.range(plane, az) > 0.0)
            .count();
        let expected = 1.0 + (2.0 / spec.azimuth_step()) * (0.05f64 / 5.0).atan().to_degrees();
        assert!(
            (hits as f64 - expected).abs() <= 1.0,
            "hits {hits} vs expected {expected}"
        );
    }

    #[test]
    fn vest_returns_high_intensity() {
        let mut cfg = WorldConfig::default();
        cfg.pedestrians.push(PedestrianConfig {
            x: 10.0,
            y: 2.5,
            vest_strip_width: Some(0.05),
        });
        let w = build_world(&cfg).unwrap();
        let robot = RobotState::at(8.0, 2.5, 0.0); // 2 m from the vest
        let spec = LidarSpec::coarse();
        let (frame, _) = cast_scan(&w, &robot, &spec, &ScanOptions::default()).unwrap();
        let high = frame
            .intensity_matrix()
            .iter()
            .filter(|&&i| i > crate::scan::RETRO_REFLECTOR_THRESHOLD)
            .count();
        assert!(high >= 1, "expected at least one retro-reflector return");
    }

    #[test]
    fn true_offsets_match_pose() {
        let w = build_world(&WorldConfig::default()).unwrap();
        // Robot displaced 0.3 m left of centre, heading 0.1 rad left.
        let robot = RobotState::at(10.0, 2.5 + 0.3, 0.1);
        let (o_l, o_a) = true_offsets(&w, &robot).unwrap();
        assert_relative_eq!(o_a, -0.1, epsilon = 1e-9);
        // Centreline is 0.3 m to the robot's right: o_l = -0.3 (perpendicular).
        assert_relative_eq!(o_l, -0.3, epsilon = 1e-9);
    }

    #[test]
    fn vertical_scan_sees_canopy() {
        let cfg = WorldConfig {
            canopy_sag: 0.0,
            ..Default::default()
        };
        let w = build_world(&cfg).unwrap();
        let robot = RobotState::at(10.0, 2.5, 0.0);
        let pts = cast_vertical_scan(&w, &robot, 0.8, 30.0, 1.0);
        let canopy: Vec<&VerticalPoint> = pts.iter().filter(|p| p.class == ObjectClass::Canopy).collect();
        assert!(!canopy.is_empty());
        for p in canopy {
            // Canopy at 2.0 m, sensor at 0.8 m.
            assert_relative_eq!(p.z, 1.2, epsilon = 1e-6);
        }
    }

    #[test]
    fn vertical_scan_open_headland_empty_above() {
        let mut w = build_world(&WorldConfig::default()).unwrap();
        w.bounds = (1e9, 1e9 + 1.0, 1e9, 1e9 + 1.0); // no canopy
        w.cylinders.clear();
        let robot = RobotState::at(10.0, 2.5, 0.0);
        let pts = cast_vertical_scan(&w, &robot, 0.8, 30.0, 1.0);
        assert!(pts.iter().all(|p| p.z <= 0.0), "nothing above the sensor");
    }
}
