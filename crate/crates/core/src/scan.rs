//! Lidar frame and raster data model shared by every other module.
//!
//! A [`LidarFrame`] is a planes-by-azimuths range image with an intensity
//! channel, as produced by a multi-plane spinning lidar. Intensity values
//! above 100 are reserved for retro-reflectors. A [`BirdsEyeGrid`] is the
//! top-down raster that point clouds are projected into for density features,
//! masks and ground truth.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Intensity values strictly above this are reserved for retro-reflectors.
pub const RETRO_REFLECTOR_THRESHOLD: u8 = 100;

/// A point in the lidar frame: x forward, y left, z up, metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dist(&self, other: &Point3) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2))
            .sqrt()
    }

    pub fn dist_xy(&self, other: &Point3) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Geometry of a multi-plane lidar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarSpec {
    /// Vertical angles of the planes in degrees, ordered highest plane first.
    pub plane_angles: Vec<f64>,
    /// Azimuth positions per revolution.
    pub n_azimuths: usize,
    /// Sensor height above ground, metres.
    pub mount_height: f64,
    /// Maximum measurable range, metres.
    pub max_range: f64,
}

impl Default for LidarSpec {
    /// 16 planes from +15 to -15 degrees in 2 degree steps, 900 azimuths
    /// (0.4 degrees), mounted at 0.8 m.
    fn default() -> Self {
        LidarSpec {
            plane_angles: (0..16).map(|i| 15.0 - 2.0 * i as f64).collect(),
            n_azimuths: 900,
            mount_height: 0.8,
            max_range: 100.0,
        }
    }
}

impl LidarSpec {
    /// The coarser 0.8 degree horizontal resolution variant (450 azimuths).
    pub fn coarse() -> Self {
        LidarSpec {
            n_azimuths: 450,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.plane_angles.is_empty() {
            return Err(Error::invalid("plane_angles", "must not be empty"));
        }
        if !self.plane_angles.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::invalid("plane_angles", "must be strictly decreasing"));
        }
        if self.n_azimuths == 0 {
            return Err(Error::invalid("n_azimuths", "must be at least 1"));
        }
        if !(self.mount_height > 0.0) {
            return Err(Error::invalid("mount_height", "must be positive"));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::invalid("max_range", "must be positive"));
        }
        Ok(())
    }

    pub fn n_planes(&self) -> usize {
        self.plane_angles.len()
    }

    /// Horizontal angular resolution in degrees.
    pub fn azimuth_step(&self) -> f64 {
        360.0 / self.n_azimuths as f64
    }

    /// Azimuth angle of a column in degrees, measured from x towards y.
    pub fn azimuth_deg(&self, azimuth: usize) -> f64 {
        azimuth as f64 * self.azimuth_step()
    }

    /// Vertical angular resolution in degrees (spacing between planes).
    pub fn plane_step(&self) -> f64 {
        if self.plane_angles.len() < 2 {
            0.0
        } else {
            (self.plane_angles[0] - self.plane_angles[self.plane_angles.len() - 1])
                / (self.plane_angles.len() - 1) as f64
        }
    }
}

/// Spherical to Cartesian projection. Returns `None` for a no-return cell
/// (range 0). Angles in degrees.
pub fn polar_to_cartesian(
    plane_angle_deg: f64,
    azimuth_deg: f64,
    range: f64,
) -> Result<Option<Point3>> {
    if !plane_angle_deg.is_finite() || !azimuth_deg.is_finite() || !range.is_finite() {
        return Err(Error::invalid("polar", "non-finite input"));
    }
    if range < 0.0 {
        return Err(Error::invalid("range", "must be non-negative"));
    }
    if range == 0.0 {
        return Ok(None);
    }
    let a = plane_angle_deg.to_radians();
    let t = azimuth_deg.to_radians();
    Ok(Some(Point3 {
        x: range * a.cos() * t.cos(),
        y: range * a.cos() * t.sin(),
        z: range * a.sin(),
    }))
}

/// Inverse of [`polar_to_cartesian`] for range > 0. Returns
/// `(plane_angle_deg, azimuth_deg, range)` with azimuth in [0, 360).
pub fn cartesian_to_polar(p: Point3) -> (f64, f64, f64) {
    let range = (p.x * p.x + p.y * p.y + p.z * p.z).sqrt();
    let plane = (p.z / range).asin().to_degrees();
    let mut azimuth = p.y.atan2(p.x).to_degrees();
    if azimuth < 0.0 {
        azimuth += 360.0;
    }
    (plane, azimuth, range)
}

/// A range image with an intensity channel. Range 0 means no return.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarFrame {
    pub spec: LidarSpec,
    range: Vec<f64>,
    intensity: Vec<u8>,
}

impl LidarFrame {
    pub fn empty(spec: LidarSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.n_planes() * spec.n_azimuths;
        Ok(LidarFrame {
            spec,
            range: vec![0.0; n],
            intensity: vec![0; n],
        })
    }

    fn idx(&self, plane: usize, azimuth: usize) -> usize {
        debug_assert!(plane < self.spec.n_planes() && azimuth < self.spec.n_azimuths);
        plane * self.spec.n_azimuths + azimuth
    }

    pub fn range(&self, plane: usize, azimuth: usize) -> f64 {
        self.range[self.idx(plane, azimuth)]
    }

    pub fn intensity(&self, plane: usize, azimuth: usize) -> u8 {
        self.intensity[self.idx(plane, azimuth)]
    }

    pub fn set(&mut self, plane: usize, azimuth: usize, range: f64, intensity: u8) -> Result<()> {
        if !range.is_finite() || range < 0.0 || (range > self.spec.max_range && range != 0.0) {
            return Err(Error::invalid("range", format!("{range} out of bounds")));
        }
        let i = self.idx(plane, azimuth);
        self.range[i] = range;
        self.intensity[i] = intensity;
        Ok(())
    }

    pub fn set_range(&mut self, plane: usize, azimuth: usize, range: f64) {
        let i = self.idx(plane, azimuth);
        self.range[i] = range;
    }

    /// Cartesian point for a cell, `None` when there is no return.
    pub fn point(&self, plane: usize, azimuth: usize) -> Option<Point3> {
        let r = self.range(plane, azimuth);
        if r == 0.0 {
            return None;
        }
        polar_to_cartesian(
            self.spec.plane_angles[plane],
            self.spec.azimuth_deg(azimuth),
            r,
        )
        .expect("finite stored range")
    }

    /// All returned points with their cell indices.
    pub fn points(&self) -> Vec<(usize, usize, Point3)> {
        let mut out = Vec::new();
        for plane in 0..self.spec.n_planes() {
            for az in 0..self.spec.n_azimuths {
                if let Some(p) = self.point(plane, az) {
                    out.push((plane, az, p));
                }
            }
        }
        out
    }

    /// Returned points of a single plane in azimuth order.
    pub fn plane_points(&self, plane: usize) -> Vec<(usize, Point3)> {
        (0..self.spec.n_azimuths)
            .filter_map(|az| self.point(plane, az).map(|p| (az, p)))
            .collect()
    }

    pub fn n_returns(&self) -> usize {
        self.range.iter().filter(|r| **r > 0.0).count()
    }

    pub fn range_matrix(&self) -> &[f64] {
        &self.range
    }

    pub fn intensity_matrix(&self) -> &[u8] {
        &self.intensity
    }
}

/// Shape of a top-down raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub side_px: usize,
    pub metres_per_px: f64,
}

impl Default for GridSpec {
    /// 1000 x 1000 pixels at 0.1 m per pixel: 100 m covered width.
    fn default() -> Self {
        GridSpec {
            side_px: 1000,
            metres_per_px: 0.1,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.side_px == 0 {
            return Err(Error::invalid("side_px", "must be at least 1"));
        }
        if !(self.metres_per_px > 0.0) {
            return Err(Error::invalid("metres_per_px", "must be positive"));
        }
        Ok(())
    }
}

/// Top-down raster with the lidar axis at the centre pixel.
///
/// Rows index y, columns index x. A metre coordinate maps to a pixel by
/// flooring the coordinate divided by the pixel size and offsetting from the
/// centre pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct BirdsEyeGrid {
    pub spec: GridSpec,
    cells: Vec<f64>,
}

impl BirdsEyeGrid {
    pub fn zeros(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        Ok(BirdsEyeGrid {
            spec,
            cells: vec![0.0; spec.side_px * spec.side_px],
        })
    }

    pub fn side_px(&self) -> usize {
        self.spec.side_px
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.spec.side_px + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.cells[row * self.spec.side_px + col] = v;
    }

    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        self.cells[row * self.spec.side_px + col] += v;
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    /// Pixel (row, col) for a metre coordinate, `None` when off the grid.
    pub fn pixel_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let half = (self.spec.side_px / 2) as i64;
        let col = half + (x / self.spec.metres_per_px).floor() as i64;
        let row = half + (y / self.spec.metres_per_px).floor() as i64;
        let side = self.spec.side_px as i64;
        if col < 0 || col >= side || row < 0 || row >= side {
            None
        } else {
            Some((row as usize, col as usize))
        }
    }

    /// Metre coordinates of a pixel centre.
    pub fn centre_of(&self, row: usize, col: usize) -> (f64, f64) {
        let half = (self.spec.side_px / 2) as f64;
        let x = (col as f64 - half + 0.5) * self.spec.metres_per_px;
        let y = (row as f64 - half + 0.5) * self.spec.metres_per_px;
        (x, y)
    }

    /// Range from the lidar axis to a pixel centre.
    pub fn centre_range(&self, row: usize, col: usize) -> f64 {
        let (x, y) = self.centre_of(row, col);
        (x * x + y * y).sqrt()
    }

    /// Binarize in place: cells strictly above the threshold become 1, the
    /// rest 0.
    pub fn threshold(&self, threshold: f64) -> BirdsEyeGrid {
        BirdsEyeGrid {
            spec: self.spec,
            cells: self
                .cells
                .iter()
                .map(|&v| if v > threshold { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

/// Project points into a top-down grid, adding `increment` per point.
/// Points outside the grid are dropped.
pub fn rasterize(points: &[Point3], spec: GridSpec, increment: f64) -> Result<BirdsEyeGrid> {
    let mut grid = BirdsEyeGrid::zeros(spec)?;
    for p in points {
        if let Some((row, col)) = grid.pixel_of(p.x, p.y) {
            grid.add(row, col, increment);
        }
    }
    Ok(grid)
}

fn round_half_up(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Rescale the non-zero values of a byte matrix into [bias, 255], keeping
/// zero (background) pixels at zero. Constant non-zero input maps to 255.
/// All-zero input is returned unchanged.
pub fn scale_channel(values: &[u8], bias: u8) -> Vec<u8> {
    let nonzero: Vec<u8> = values.iter().copied().filter(|&v| v != 0).collect();
    if nonzero.is_empty() {
        return values.to_vec();
    }
    let min = *nonzero.iter().min().unwrap() as f64;
    let max = *nonzero.iter().max().unwrap() as f64;
    let p_max = 255.0;
    let b = bias as f64;
    values
        .iter()
        .map(|&v| {
            if v == 0 {
                0
            } else if max == min {
                255
            } else {
                round_half_up(b + (p_max - b) * (v as f64 - min) / (max - min))
            }
        })
        .collect()
}

/// Contrast stretch: p' = p_max (p - k_o) / (p_max - k_o), clamped to
/// [0, p_max]. Rejects offsets at or above the maximum pixel value.
pub fn enhance_contrast(values: &[u8], offset: u8) -> Result<Vec<u8>> {
    let p_max = 255.0;
    let k = offset as f64;
    if k >= p_max {
        return Err(Error::invalid("offset", "must be below the maximum pixel value"));
    }
    Ok(values
        .iter()
        .map(|&p| {
            let v = p_max * (p as f64 - k) / (p_max - k);
            round_half_up(v.clamp(0.0, p_max))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polar_axis_aligned() {
        let p = polar_to_cartesian(0.0, 0.0, 5.0).unwrap().unwrap();
        assert_relative_eq!(p.x, 5.0, epsilon = 1e-12);
        assert_relative_eq!(p.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn polar_straight_up() {
        let p = polar_to_cartesian(90.0, 0.0, 2.0).unwrap().unwrap();
        assert_relative_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.z, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn polar_hand_evaluated() {
        // r cos(2) cos(30), r cos(2) sin(30), r sin(2) for r = 10
        let p = polar_to_cartesian(2.0, 30.0, 10.0).unwrap().unwrap();
        assert_relative_eq!(p.x, 8.655, epsilon = 1e-3);
        assert_relative_eq!(p.y, 4.997, epsilon = 1e-3);
        assert_relative_eq!(p.z, 0.349, epsilon = 1e-3);
    }

    #[test]
    fn polar_no_return_and_errors() {
        assert!(polar_to_cartesian(0.0, 0.0, 0.0).unwrap().is_none());
        assert!(polar_to_cartesian(f64::NAN, 0.0, 1.0).is_err());
        assert!(polar_to_cartesian(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn polar_round_trip() {
        for &(a, t, r) in &[(13.0, 211.5, 7.25), (-15.0, 0.4, 99.0), (1.0, 359.6, 0.2)] {
            let p = polar_to_cartesian(a, t, r).unwrap().unwrap();
            let (a2, t2, r2) = cartesian_to_polar(p);
            assert_relative_eq!(a, a2, epsilon = 1e-9);
            assert_relative_eq!(t, t2, epsilon = 1e-9);
            assert_relative_eq!(r, r2, epsilon = 1e-9);
        }
    }

    #[test]
    fn rasterize_centre_and_additivity() {
        let spec = GridSpec::default();
        let g = rasterize(&[Point3::new(0.0, 0.0, 0.0)], spec, 1.0).unwrap();
        assert_eq!(g.get(500, 500), 1.0);
        assert_eq!(g.cells().iter().sum::<f64>(), 1.0);

        let g = rasterize(
            &[Point3::new(0.02, 0.02, 0.0), Point3::new(0.07, 0.05, 1.0)],
            spec,
            1.0,
        )
        .unwrap();
        assert_eq!(g.get(500, 500), 2.0);
    }

    #[test]
    fn rasterize_edge_pixel() {
        let spec = GridSpec::default();
        let g = rasterize(&[Point3::new(49.96, 0.0, 0.0)], spec, 1.0).unwrap();
        assert_eq!(g.get(500, 999), 1.0);
        // 50.0 m falls off the 100 m grid
        let g = rasterize(&[Point3::new(50.0, 0.0, 0.0)], spec, 1.0).unwrap();
        assert_eq!(g.cells().iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn scale_channel_endpoints() {
        let out = scale_channel(&[10, 110, 60, 0], 8);
        assert_eq!(out[0], 8); // min maps to bias
        assert_eq!(out[1], 255); // max maps to p_max
        assert_eq!(out[2], 132); // 8 + 247*50/100 = 131.5, round half up
        assert_eq!(out[3], 0); // background stays zero
    }

    #[test]
    fn scale_channel_degenerate() {
        assert_eq!(scale_channel(&[0, 0, 0], 8), vec![0, 0, 0]);
        assert_eq!(scale_channel(&[42, 0, 42], 8), vec![255, 0, 255]);
    }

    #[test]
    fn enhance_contrast_examples() {
        let out = enhance_contrast(&[64, 255, 128, 0], 64).unwrap();
        assert_eq!(out[0], 0);
        assert_eq!(out[1], 255);
        assert_eq!(out[2], 85); // 255*64/191 = 85.4
        assert_eq!(out[3], 0); // clamped
        assert!(enhance_contrast(&[0], 255).is_err());
    }

    #[test]
    fn enhance_contrast_monotone() {
        let inputs: Vec<u8> = (0..=255).collect();
        let out = enhance_contrast(&inputs, 37).unwrap();
        assert!(out.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn spec_validation() {
        assert!(LidarSpec::default().validate().is_ok());
        let mut bad = LidarSpec::default();
        bad.plane_angles.reverse();
        assert!(bad.validate().is_err());
        let mut bad = LidarSpec::default();
        bad.mount_height = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn frame_rejects_out_of_bounds_range() {
        let mut f = LidarFrame::empty(LidarSpec::default()).unwrap();
        assert!(f.set(0, 0, 5.0, 80).is_ok());
        assert!(f.set(0, 0, 1000.0, 80).is_err());
        assert!(f.set(0, 0, -1.0, 80).is_err());
    }
}
