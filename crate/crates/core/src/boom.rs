//! Spray-boom height control from a vertical lidar: region-of-interest
//! filtering, percentile canopy targets, collation along the direction of
//! travel, and the dual-disparity combination utility.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Keep vertical-scan points the boom will sweep: within the lateral
/// half-width and above the floor.
pub fn boom_roi(points: &[(f64, f64)], lateral_half_width: f64, z_floor: f64) -> Vec<(f64, f64)> {
    points
        .iter()
        .copied()
        .filter(|&(y, z)| y.abs() <= lateral_half_width && z > z_floor)
        .collect()
}

/// Nearest-rank percentile of an unsorted sample.
fn percentile_of(values: &[f64], percentile: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    crate::safety::nearest_rank(&v, percentile)
}

/// Per-scan boom target: a low percentile of the ROI canopy heights minus
/// the canopy clearance offset. `None` signals no canopy overhead.
pub fn scan_target(roi: &[(f64, f64)], percentile: f64, offset: f64) -> Option<f64> {
    if roi.is_empty() {
        return None;
    }
    let zs: Vec<f64> = roi.iter().map(|&(_, z)| z).collect();
    Some(percentile_of(&zs, percentile) - offset)
}

/// How the collated targets reduce to one set-point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoomTargetMode {
    Minimum,
    Median,
}

/// Boom targets collated along the travel direction. Positions are metres
/// ahead of the boom plane; a fresh target enters at the sensor-to-boom
/// distance and is deleted once the boom passes it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoomTargetState {
    /// (position ahead of boom plane, target height), sorted by position.
    pub targets: Vec<(f64, f64)>,
    /// Along-track distance from the boom plane forward to the sensor.
    pub sensor_to_boom: f64,
    pub mode: BoomTargetMode,
    /// Height commanded when no canopy target exists.
    pub minimum_height: f64,
}

impl BoomTargetState {
    pub fn new(sensor_to_boom: f64, mode: BoomTargetMode, minimum_height: f64) -> Self {
        BoomTargetState {
            targets: Vec::new(),
            sensor_to_boom,
            mode,
            minimum_height,
        }
    }

    /// Current set-point from the collation alone.
    pub fn set_point(&self) -> f64 {
        if self.targets.is_empty() {
            return self.minimum_height;
        }
        let heights: Vec<f64> = self.targets.iter().map(|&(_, h)| h).collect();
        match self.mode {
            BoomTargetMode::Minimum => heights.iter().copied().fold(f64::INFINITY, f64::min),
            BoomTargetMode::Median => percentile_of(&heights, 50.0),
        }
    }
}

/// Advance the collation by the odometry increment, drop targets behind the
/// boom plane, append the newest scan target, and return the commanded
/// set-point. An externally supplied solid-branch height forces minimum
/// behaviour against that height.
pub fn collate_and_command(
    state: &mut BoomTargetState,
    advance: f64,
    new_target: Option<f64>,
    solid_branch_height: Option<f64>,
) -> Result<f64> {
    if advance < 0.0 {
        return Err(Error::invalid("advance", "odometry must be monotone"));
    }
    for t in &mut state.targets {
        t.0 -= advance;
    }
    state.targets.retain(|&(pos, _)| pos > 0.0);
    if let Some(h) = new_target {
        state.targets.push((state.sensor_to_boom, h));
    }
    state
        .targets
        .sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let set_point = state.set_point();
    Ok(match solid_branch_height {
        Some(h) => set_point.min(h),
        None => set_point,
    })
}

/// Merge two disparity maps: pixels that disagree beyond the threshold go
/// out-of-range (zero), the rest average.
pub fn combine_disparities(d1: &[f64], d2: &[f64], diff_threshold: f64) -> Result<Vec<f64>> {
    if d1.len() != d2.len() {
        return Err(Error::ShapeMismatch(format!(
            "disparity lengths {} vs {}",
            d1.len(),
            d2.len()
        )));
    }
    Ok(d1
        .iter()
        .zip(d2)
        .map(|(&a, &b)| {
            if (a - b).abs() > diff_threshold {
                0.0
            } else {
                (a + b) / 2.0
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn roi_filters() {
        let pts = [(0.5, 1.0), (2.0, 1.0), (0.5, -0.5), (-0.9, 0.2)];
        let roi = boom_roi(&pts, 1.0, 0.0);
        assert_eq!(roi, vec![(0.5, 1.0), (-0.9, 0.2)]);
        let all = [(0.1, 0.5), (0.2, 0.6)];
        assert_eq!(boom_roi(&all, 1.0, 0.0), all.to_vec());
    }

    #[test]
    fn scan_target_percentiles() {
        let roi: Vec<(f64, f64)> = [2.0, 2.1, 2.2, 2.3, 2.4].iter().map(|&z| (0.0, z)).collect();
        assert_relative_eq!(scan_target(&roi, 10.0, 0.3).unwrap(), 1.7, epsilon = 1e-12);
        assert_relative_eq!(scan_target(&roi, 50.0, 0.3).unwrap(), 1.9, epsilon = 1e-12);
        assert!(scan_target(&[], 10.0, 0.3).is_none());
    }

    #[test]
    fn collation_modes_and_deletion() {
        let mut min_state = BoomTargetState::new(1.5, BoomTargetMode::Minimum, 0.4);
        let mut med_state = BoomTargetState::new(1.5, BoomTargetMode::Median, 0.4);
        for (state, expect) in [(&mut min_state, 1.7), (&mut med_state, 1.9)] {
            collate_and_command(state, 0.0, Some(1.9), None).unwrap();
            collate_and_command(state, 0.5, Some(1.7), None).unwrap();
            let sp = collate_and_command(state, 0.5, Some(2.0), None).unwrap();
            assert_relative_eq!(sp, expect, epsilon = 1e-12, max_relative = 0.0);
        }

        // Single target: both modes agree.
        let mut s = BoomTargetState::new(1.0, BoomTargetMode::Minimum, 0.4);
        assert_relative_eq!(collate_and_command(&mut s, 0.0, Some(1.8), None).unwrap(), 1.8);
        s.mode = BoomTargetMode::Median;
        assert_relative_eq!(s.set_point(), 1.8);

        // Advancing past a target's plane deletes it.
        let mut s = BoomTargetState::new(1.0, BoomTargetMode::Minimum, 0.4);
        collate_and_command(&mut s, 0.0, Some(1.7), None).unwrap();
        let sp = collate_and_command(&mut s, 1.5, None, None).unwrap();
        assert_eq!(s.targets.len(), 0);
        assert_relative_eq!(sp, 0.4); // falls back to the boom minimum
    }

    #[test]
    fn minimum_never_exceeds_median() {
        let heights = [1.9, 1.7, 2.0, 2.3, 1.8, 2.1];
        let mut min_s = BoomTargetState::new(10.0, BoomTargetMode::Minimum, 0.4);
        let mut med_s = BoomTargetState::new(10.0, BoomTargetMode::Median, 0.4);
        for &h in &heights {
            let a = collate_and_command(&mut min_s, 0.1, Some(h), None).unwrap();
            let b = collate_and_command(&mut med_s, 0.1, Some(h), None).unwrap();
            assert!(a <= b, "minimum {a} above median {b}");
        }
    }

    #[test]
    fn solid_branch_forces_lower_set_point() {
        let mut s = BoomTargetState::new(1.0, BoomTargetMode::Median, 0.4);
        collate_and_command(&mut s, 0.0, Some(2.0), None).unwrap();
        let sp = collate_and_command(&mut s, 0.0, None, Some(1.2)).unwrap();
        assert_relative_eq!(sp, 1.2);
    }

    #[test]
    fn rejects_reverse_odometry() {
        let mut s = BoomTargetState::new(1.0, BoomTargetMode::Minimum, 0.4);
        assert!(collate_and_command(&mut s, -0.1, None, None).is_err());
    }

    #[test]
    fn combine_disparity_rules() {
        let d = combine_disparities(&[50.0], &[50.0], 3.0).unwrap();
        assert_eq!(d, vec![50.0]);
        assert_eq!(combine_disparities(&[50.0], &[52.0], 3.0).unwrap(), vec![51.0]);
        assert_eq!(combine_disparities(&[50.0], &[52.0], 1.0).unwrap(), vec![0.0]);
        assert!(combine_disparities(&[1.0], &[1.0, 2.0], 1.0).is_err());
        // Symmetry.
        let a = [10.0, 20.0, 30.0];
        let b = [12.0, 19.0, 5.0];
        assert_eq!(
            combine_disparities(&a, &b, 4.0).unwrap(),
            combine_disparities(&b, &a, 4.0).unwrap()
        );
    }
}
