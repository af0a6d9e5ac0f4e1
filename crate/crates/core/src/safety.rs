//! Pedestrian-safety detectors: retro-reflective vest detection with zone
//! triggered stops, range-difference segmentation of the range image, and
//! the closed-form coverage analyses for strip width and scan-gap misses.

use crate::error::{Error, Result};
use crate::scan::{LidarFrame, Point3, RETRO_REFLECTOR_THRESHOLD, polar_to_cartesian};
use serde::{Deserialize, Serialize};

/// Axis-aligned box in the lidar frame with an occupancy threshold.
/// Boundary points count as inside (closed box).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeOfInterest {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub count_threshold: usize,
}

impl VolumeOfInterest {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_min < self.x_max && self.y_min < self.y_max && self.z_min < self.z_max) {
            return Err(Error::invalid("VolumeOfInterest", "min must be below max per axis"));
        }
        if self.count_threshold == 0 {
            return Err(Error::invalid("count_threshold", "must be at least 1"));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Point3) -> bool {
        p.x >= self.x_min
            && p.x <= self.x_max
            && p.y >= self.y_min
            && p.y <= self.y_max
            && p.z >= self.z_min
            && p.z <= self.z_max
    }
}

/// True when at least `count_threshold` points lie inside the closed box.
pub fn object_in_volume(points: &[Point3], volume: &VolumeOfInterest) -> Result<bool> {
    volume.validate()?;
    Ok(points.iter().filter(|p| volume.contains(p)).count() >= volume.count_threshold)
}

/// Maximum range at which a retro-reflective strip of width `w_s` metres is
/// guaranteed to be struck by at least one beam at horizontal resolution
/// `alpha_l` degrees.
pub fn guaranteed_detection_range(w_s: f64, alpha_l_deg: f64) -> Result<f64> {
    if w_s < 0.0 {
        return Err(Error::invalid("w_s", "must be non-negative"));
    }
    if !(alpha_l_deg > 0.0 && alpha_l_deg < 180.0) {
        return Err(Error::invalid("alpha_l_deg", "must lie in (0, 180)"));
    }
    Ok(w_s / (2.0 * (0.5 * alpha_l_deg.to_radians()).tan()))
}

/// Width of object that can pass between consecutive vertical scans at
/// travel speed `v_a`, scan period `t_l`, beam footprint `d_l`. Floored at 0.
pub fn missed_object_width(v_a: f64, t_l: f64, d_l: f64) -> Result<f64> {
    if v_a < 0.0 || t_l < 0.0 || d_l < 0.0 {
        return Err(Error::invalid("missed_object_width", "inputs must be non-negative"));
    }
    Ok((v_a * t_l - d_l).max(0.0))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Fill dropped ranges on retro-reflector pixels with the median of the
/// non-zero 3x3 neighbourhood ranges (azimuth wraps, planes clamp).
pub fn fill_reflector_ranges(frame: &LidarFrame) -> LidarFrame {
    let n_planes = frame.spec.n_planes();
    let n_az = frame.spec.n_azimuths;
    let mut out = frame.clone();
    for plane in 0..n_planes {
        for az in 0..n_az {
            if frame.intensity(plane, az) <= RETRO_REFLECTOR_THRESHOLD
                || frame.range(plane, az) != 0.0
            {
                continue;
            }
            let mut neighbours = Vec::new();
            for dp in -1i64..=1 {
                let p2 = plane as i64 + dp;
                if p2 < 0 || p2 >= n_planes as i64 {
                    continue;
                }
                for daz in -1i64..=1 {
                    if dp == 0 && daz == 0 {
                        continue;
                    }
                    let az2 = (az as i64 + daz).rem_euclid(n_az as i64) as usize;
                    let r = frame.range(p2 as usize, az2);
                    if r > 0.0 {
                        neighbours.push(r);
                    }
                }
            }
            if !neighbours.is_empty() {
                out.set_range(plane, az, median(neighbours));
            }
        }
    }
    out
}

/// One detected vest: its reflector pixels, a representative 3D position,
/// and which caution zones that position falls in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VestDetection {
    /// Reflector pixels as (plane, azimuth), all with intensity > 100.
    pub pixels: Vec<(usize, usize)>,
    pub position: Point3,
    pub in_decel_zone: bool,
    pub in_stop_zone: bool,
}

/// Detect retro-reflective vests: threshold the intensity channel, dilate
/// the binary mask (3x3, `dilation_iterations` passes), group into
/// connected components, and locate each from reflector ranges when present
/// or a 25th-75th percentile band of the neighbourhood ranges otherwise.
pub fn detect_vests(
    frame: &LidarFrame,
    decel_zone: &VolumeOfInterest,
    stop_zone: &VolumeOfInterest,
    dilation_iterations: usize,
) -> Result<Vec<VestDetection>> {
    decel_zone.validate()?;
    stop_zone.validate()?;
    let filled = fill_reflector_ranges(frame);
    let n_planes = frame.spec.n_planes();
    let n_az = frame.spec.n_azimuths;
    let idx = |p: usize, a: usize| p * n_az + a;

    let mut mask: Vec<bool> = vec![false; n_planes * n_az];
    for plane in 0..n_planes {
        for az in 0..n_az {
            mask[idx(plane, az)] = frame.intensity(plane, az) > RETRO_REFLECTOR_THRESHOLD;
        }
    }
    let reflector = mask.clone();
    for _ in 0..dilation_iterations {
        let prev = mask.clone();
        for plane in 0..n_planes {
            for az in 0..n_az {
                if prev[idx(plane, az)] {
                    continue;
                }
                'search: for dp in -1i64..=1 {
                    let p2 = plane as i64 + dp;
                    if p2 < 0 || p2 >= n_planes as i64 {
                        continue;
                    }
                    for daz in -1i64..=1 {
                        let az2 = (az as i64 + daz).rem_euclid(n_az as i64) as usize;
                        if prev[idx(p2 as usize, az2)] {
                            mask[idx(plane, az)] = true;
                            break 'search;
                        }
                    }
                }
            }
        }
    }

    // Connected components of the dilated mask (8-connected, azimuth wraps).
    let mut component: Vec<Option<usize>> = vec![None; n_planes * n_az];
    let mut n_components = 0usize;
    for plane in 0..n_planes {
        for az in 0..n_az {
            if !mask[idx(plane, az)] || component[idx(plane, az)].is_some() {
                continue;
            }
            let id = n_components;
            n_components += 1;
            let mut stack = vec![(plane, az)];
            component[idx(plane, az)] = Some(id);
            while let Some((p, a)) = stack.pop() {
                for dp in -1i64..=1 {
                    let p2 = p as i64 + dp;
                    if p2 < 0 || p2 >= n_planes as i64 {
                        continue;
                    }
                    for daz in -1i64..=1 {
                        let a2 = (a as i64 + daz).rem_euclid(n_az as i64) as usize;
                        let j = idx(p2 as usize, a2);
                        if mask[j] && component[j].is_none() {
                            component[j] = Some(id);
                            stack.push((p2 as usize, a2));
                        }
                    }
                }
            }
        }
    }

    let mut detections = Vec::new();
    for id in 0..n_components {
        let mut pixels: Vec<(usize, usize)> = Vec::new();
        let mut neighbourhood_ranges: Vec<f64> = Vec::new();
        for plane in 0..n_planes {
            for az in 0..n_az {
                if component[idx(plane, az)] != Some(id) {
                    continue;
                }
                if reflector[idx(plane, az)] {
                    pixels.push((plane, az));
                }
                let r = filled.range(plane, az);
                if r > 0.0 {
                    neighbourhood_ranges.push(r);
                }
            }
        }
        if pixels.is_empty() {
            continue; // dilation halo without a source pixel cannot happen,
                      // but a component is only a vest if it has one
        }
        // Closest reflector pixel with a usable range locates the vest.
        let position = pixels
            .iter()
            .filter_map(|&(p, a)| {
                let r = filled.range(p, a);
                if r > 0.0 {
                    polar_to_cartesian(frame.spec.plane_angles[p], frame.spec.azimuth_deg(a), r)
                        .ok()
                        .flatten()
                } else {
                    None
                }
            })
            .min_by(|a, b| {
                let ra = a.x * a.x + a.y * a.y + a.z * a.z;
                let rb = b.x * b.x + b.y * b.y + b.z * b.z;
                ra.partial_cmp(&rb).unwrap()
            });
        let position = match position {
            Some(p) => p,
            None => {
                // No reflector range survived: band-pass the neighbourhood
                // ranges to the 25th-75th percentile and take the median.
                if neighbourhood_ranges.is_empty() {
                    continue;
                }
                let mut v = neighbourhood_ranges.clone();
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let lo = nearest_rank(&v, 25.0);
                let hi = nearest_rank(&v, 75.0);
                let band: Vec<f64> = v.into_iter().filter(|&r| r >= lo && r <= hi).collect();
                let r = median(band);
                let &(p, a) = &pixels[0];
                match polar_to_cartesian(frame.spec.plane_angles[p], frame.spec.azimuth_deg(a), r)?
                {
                    Some(pt) => pt,
                    None => continue,
                }
            }
        };
        detections.push(VestDetection {
            in_decel_zone: decel_zone.contains(&position),
            in_stop_zone: stop_zone.contains(&position),
            pixels,
            position,
        });
    }
    Ok(detections)
}

/// Nearest-rank percentile: the value at index ceil(p*n/100) of the sorted
/// sample (1-based).
pub fn nearest_rank(sorted: &[f64], percentile: f64) -> f64 {
    let n = sorted.len();
    let rank = ((percentile / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// A connected component of the range image under the range-difference rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentedObject {
    /// Member cells as (plane, azimuth).
    pub cells: Vec<(usize, usize)>,
    pub z_min: f64,
    pub z_max: f64,
    /// Median member range, metres.
    pub representative_range: f64,
}

impl SegmentedObject {
    pub fn height(&self) -> f64 {
        self.z_max - self.z_min
    }
}

/// Segment the range image into objects: ranges beyond `max_range` are
/// zeroed, pixels connect to the three cells above and three below when the
/// range difference is under `diff_threshold`, zero pixels never join, and
/// objects shorter than `min_height` are discarded.
pub fn segment_by_range(
    frame: &LidarFrame,
    max_range: f64,
    diff_threshold: f64,
    min_height: f64,
) -> Result<Vec<SegmentedObject>> {
    if !(max_range > 0.0) || !(diff_threshold > 0.0) {
        return Err(Error::invalid("segment_by_range", "thresholds must be positive"));
    }
    let n_planes = frame.spec.n_planes();
    let n_az = frame.spec.n_azimuths;
    let idx = |p: usize, a: usize| p * n_az + a;
    let range_of = |p: usize, a: usize| {
        let r = frame.range(p, a);
        if r > max_range {
            0.0
        } else {
            r
        }
    };

    let mut visited: Vec<bool> = vec![false; n_planes * n_az];
    let mut objects = Vec::new();
    for plane in 0..n_planes {
        for az in 0..n_az {
            if visited[idx(plane, az)] || range_of(plane, az) == 0.0 {
                continue;
            }
            let mut cells = Vec::new();
            let mut stack = vec![(plane, az)];
            visited[idx(plane, az)] = true;
            while let Some((p, a)) = stack.pop() {
                let r = range_of(p, a);
                cells.push((p, a));
                for dp in [-1i64, 1] {
                    let p2 = p as i64 + dp;
                    if p2 < 0 || p2 >= n_planes as i64 {
                        continue;
                    }
                    for daz in -1i64..=1 {
                        let a2 = (a as i64 + daz).rem_euclid(n_az as i64) as usize;
                        let j = idx(p2 as usize, a2);
                        if visited[j] {
                            continue;
                        }
                        let r2 = range_of(p2 as usize, a2);
                        if r2 > 0.0 && (r - r2).abs() < diff_threshold {
                            visited[j] = true;
                            stack.push((p2 as usize, a2));
                        }
                    }
                }
            }
            let zs: Vec<f64> = cells
                .iter()
                .map(|&(p, a)| range_of(p, a) * frame.spec.plane_angles[p].to_radians().sin())
                .collect();
            let z_min = zs.iter().copied().fold(f64::INFINITY, f64::min);
            let z_max = zs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if z_max - z_min < min_height {
                continue;
            }
            let ranges: Vec<f64> = cells.iter().map(|&(p, a)| range_of(p, a)).collect();
            objects.push(SegmentedObject {
                cells,
                z_min,
                z_max,
                representative_range: median(ranges),
            });
        }
    }
    Ok(objects)
}

/// Latched stop signal: once raised it stays raised until an explicit
/// operator reset.
#[derive(Debug, Clone, Copy, Default)]
pub struct StopLatch {
    stopped: bool,
}

impl StopLatch {
    pub fn observe(&mut self, stop_requested: bool) {
        if stop_requested {
            self.stopped = true;
        }
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    pub fn operator_reset(&mut self) {
        self.stopped = false;
    }
}
