//! Topological mission execution: row-end detection, fixed-radius headland
//! turns with bumper-field adjustment, and the state-machine path runner
//! that drives the simulated robot through a block.

use crate::error::{Error, Result};
use crate::rownav::{
    ControllerGains, FollowCommand, RowDetectParams, RowDetection, RowFollower, detect_row,
};
use crate::safety::VolumeOfInterest;
use crate::scan::{LidarFrame, LidarSpec};
use crate::sim::{OrchardWorld, RobotState, ScanOptions, cast_scan, step_robot};
use serde::{Deserialize, Serialize};

/// Goal turn radius value meaning "drive straight".
pub const STRAIGHT_RADIUS: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VertexType {
    #[serde(rename = "IN_ROW")]
    InRow,
    #[serde(rename = "ROW_END")]
    RowEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryCondition {
    #[serde(rename = "FIXED_LENGTH")]
    FixedLength,
    #[serde(rename = "NO_CANOPY")]
    NoCanopy,
    #[serde(rename = "HEDGE_OFFSET")]
    HedgeOffset,
    #[serde(rename = "DEFINITE_ROW")]
    DefiniteRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdditionalParameter {
    #[serde(rename = "NONE")]
    None,
    #[serde(rename = "USE_BUMPER")]
    UseBumper,
}

/// One column of a topological path table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathState {
    #[serde(rename = "State ID")]
    pub state_id: u32,
    #[serde(rename = "Vertex Type")]
    pub vertex_type: VertexType,
    /// Parsed and stored for fidelity with recorded paths; unused.
    #[serde(rename = "Offset in Location")]
    pub offset_in_location: f64,
    #[serde(rename = "Target Speed")]
    pub target_speed: f64,
    #[serde(rename = "Goal Turn Radius")]
    pub goal_turn_radius: f64,
    #[serde(rename = "Boundary Condition Criteria")]
    pub boundary_condition: BoundaryCondition,
    #[serde(rename = "Boundary Condition Parameter")]
    pub boundary_parameter: f64,
    #[serde(rename = "Additional Parameter")]
    pub additional_parameter: AdditionalParameter,
    #[serde(rename = "Additional Parameter Value")]
    pub additional_value: f64,
}

pub fn validate_path(path: &[PathState]) -> Result<()> {
    if path.is_empty() {
        return Err(Error::invalid("path", "must contain at least one state"));
    }
    for s in path {
        if s.target_speed < 0.0 {
            return Err(Error::invalid("Target Speed", "must be non-negative"));
        }
        if s.boundary_condition == BoundaryCondition::FixedLength && !(s.boundary_parameter > 0.0) {
            return Err(Error::invalid(
                "Boundary Condition Parameter",
                "FIXED_LENGTH requires a positive length",
            ));
        }
        if !(s.goal_turn_radius > 0.0) {
            return Err(Error::invalid("Goal Turn Radius", "must be positive"));
        }
    }
    Ok(())
}

/// The recorded first-row-to-second-row path excerpt: two in-row states, a
/// four-state headland manoeuvre, and the entry into the next row.
pub fn example_block_path() -> Vec<PathState> {
    let mk = |state_id, vertex_type, target_speed, goal_turn_radius, boundary_condition, boundary_parameter, additional_parameter, additional_value| PathState {
        state_id,
        vertex_type,
        offset_in_location: 0.0,
        target_speed,
        goal_turn_radius,
        boundary_condition,
        boundary_parameter,
        additional_parameter,
        additional_value,
    };
    use AdditionalParameter::{None as N, UseBumper};
    use BoundaryCondition::*;
    use VertexType::*;
    vec![
        mk(10, InRow, 0.3, STRAIGHT_RADIUS, FixedLength, 5.0, N, 0.0),
        mk(11, InRow, 1.0, STRAIGHT_RADIUS, NoCanopy, 5.0, N, 0.0),
        mk(12, RowEnd, 0.3, STRAIGHT_RADIUS, HedgeOffset, 2.3, N, 0.0),
        mk(13, RowEnd, 0.3, 2.0, FixedLength, 2.5, N, 0.0),
        mk(14, RowEnd, 0.3, 1.7, FixedLength, 2.7, UseBumper, 0.05),
        mk(15, RowEnd, 0.3, 1.7, DefiniteRow, 5.0, N, 0.0),
        mk(20, InRow, 0.3, STRAIGHT_RADIUS, FixedLength, 5.0, N, 0.0),
    ]
}

fn points_in_volume(frame: &LidarFrame, volume: &VolumeOfInterest) -> usize {
    frame
        .points()
        .iter()
        .filter(|(_, _, p)| volume.contains(p))
        .count()
}

/// True when enough returns fall inside the forward hedge volume.
pub fn detect_hedge_proximity(frame: &LidarFrame, volume: &VolumeOfInterest) -> Result<bool> {
    volume.validate()?;
    Ok(points_in_volume(frame, volume) >= volume.count_threshold)
}

/// Debounce counter for the canopy-absence signal: a single empty frame
/// never ends a row.
#[derive(Debug, Clone, Copy)]
pub struct CanopyDebounce {
    pub limit: usize,
    counter: usize,
}

impl CanopyDebounce {
    pub fn new(limit: usize) -> Self {
        CanopyDebounce { limit, counter: 0 }
    }

    pub fn counter(&self) -> usize {
        self.counter
    }

    /// Feed one raw absence observation; true once `limit` consecutive
    /// absences have been seen.
    pub fn update(&mut self, raw_absence: bool) -> bool {
        if raw_absence {
            self.counter = (self.counter + 1).min(self.limit);
        } else {
            self.counter = 0;
        }
        self.counter >= self.limit
    }
}

/// Canopy absence: too few returns in either side volume, debounced.
pub fn detect_canopy_absence(
    frame: &LidarFrame,
    left_volume: &VolumeOfInterest,
    right_volume: &VolumeOfInterest,
    debounce: &mut CanopyDebounce,
) -> Result<bool> {
    left_volume.validate()?;
    right_volume.validate()?;
    let raw = points_in_volume(frame, left_volume) < left_volume.count_threshold
        || points_in_volume(frame, right_volume) < right_volume.count_threshold;
    Ok(debounce.update(raw))
}

/// Open-loop motion primitive, executed by odometer distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotionPrimitive {
    Straight { length: f64 },
    Arc { radius: f64, angle: f64 },
}

/// A straight approach followed by a fixed-radius arc of less than a half
/// turn.
pub fn plan_naive_turn(straight_length: f64, radius: f64, arc_angle: f64) -> Result<Vec<MotionPrimitive>> {
    if !(radius > 0.0) {
        return Err(Error::invalid("radius", "must be positive"));
    }
    if !(arc_angle > 0.0 && arc_angle < std::f64::consts::PI) {
        return Err(Error::invalid("arc_angle", "must lie in (0, pi)"));
    }
    if straight_length < 0.0 {
        return Err(Error::invalid("straight_length", "must be non-negative"));
    }
    Ok(vec![
        MotionPrimitive::Straight { length: straight_length },
        MotionPrimitive::Arc { radius, angle: arc_angle },
    ])
}

/// End pose of a primitive list started from the given state, for checking
/// turn geometry. Positive angles turn left.
pub fn primitive_end_pose(start: &RobotState, primitives: &[MotionPrimitive]) -> RobotState {
    let mut s = *start;
    for p in primitives {
        s = match *p {
            MotionPrimitive::Straight { length } => step_robot(&s, length, 0.0, 1.0).unwrap(),
            MotionPrimitive::Arc { radius, angle } => {
                let omega = angle.signum();
                step_robot(&s, radius * omega.abs(), omega, angle.abs()).unwrap()
            }
        };
    }
    s
}

/// Sharpen the current turn when the bumper volume is occupied.
pub fn bumper_adjust(
    frame: &LidarFrame,
    bumper_volume: &VolumeOfInterest,
    current_radius: f64,
    delta: f64,
    min_radius: f64,
) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::invalid("delta", "must be positive"));
    }
    if detect_hedge_proximity(frame, bumper_volume)? {
        Ok((current_radius - delta).max(min_radius))
    } else {
        Ok(current_radius)
    }
}

/// One logged tick of a closed-loop run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub state_id: u32,
    pub v: f64,
    pub omega: f64,
}

/// Everything the path runner needs besides the world and the path itself.
#[derive(Debug, Clone)]
pub struct MissionConfig {
    pub start: RobotState,
    pub dt: f64,
    pub spec: LidarSpec,
    pub scan_options: ScanOptions,
    pub gains: ControllerGains,
    pub detect: RowDetectParams,
    /// Positive turns are to the left; row-end arcs use this sign.
    pub turn_left: bool,
    pub canopy_left: VolumeOfInterest,
    pub canopy_right: VolumeOfInterest,
    pub bumper: VolumeOfInterest,
    pub debounce_limit: usize,
    pub min_turn_radius: f64,
    /// Abort when a state runs this factor past its expected length.
    pub watchdog_factor: f64,
    /// Expected length for states without an intrinsic one, metres.
    pub default_expected_length: f64,
    /// Frames with no row estimate tolerated before stopping in-row.
    pub no_row_hold: usize,
}

impl MissionConfig {
    pub fn new(start: RobotState) -> Self {
        // Floor above the ground plane but low enough to catch posts and
        // trunks, not just canopy.
        let vol = |y_min: f64, y_max: f64| VolumeOfInterest {
            x_min: -1.0,
            x_max: 1.0,
            y_min,
            y_max,
            z_min: -0.4,
            z_max: 1.5,
            count_threshold: 3,
        };
        MissionConfig {
            start,
            dt: 0.1,
            spec: LidarSpec::default(),
            scan_options: ScanOptions::default(),
            gains: ControllerGains::default(),
            detect: RowDetectParams::default(),
            turn_left: true,
            canopy_left: vol(1.0, 3.0),
            canopy_right: vol(-3.0, -1.0),
            // Contact scale: the row-end manoeuvre legitimately sweeps past
            // the headland hedge with under 0.3 m to spare at the apex, so
            // the bumper corner must reach less than that; anything larger
            // keeps ratcheting the turn radius down on a nominal pass.
            bumper: VolumeOfInterest {
                x_min: 0.05,
                x_max: 0.15,
                y_min: -0.12,
                y_max: 0.12,
                z_min: -0.5,
                z_max: 1.5,
                count_threshold: 3,
            },
            debounce_limit: 5,
            min_turn_radius: 0.5,
            watchdog_factor: 3.0,
            default_expected_length: 20.0,
            no_row_hold: 5,
        }
    }

    /// Forward volume whose far face sits at the boundary parameter.
    fn hedge_volume(&self, reach: f64) -> VolumeOfInterest {
        VolumeOfInterest {
            x_min: 0.1,
            x_max: reach,
            y_min: -1.2,
            y_max: 1.2,
            z_min: -0.5,
            z_max: 1.8,
            count_threshold: 3,
        }
    }
}

/// Drive the path to completion in the simulated world, one perception and
/// control tick per `dt`. States advance strictly in order; a state that
/// overruns its watchdog distance aborts the run.
pub fn run_path(
    world: &OrchardWorld,
    path: &[PathState],
    config: &MissionConfig,
) -> Result<Vec<TrajectorySample>> {
    validate_path(path)?;
    let mut robot = config.start;
    let mut log: Vec<TrajectorySample> = Vec::new();
    let mut state_idx = 0usize;
    let mut entry_odometer = robot.odometer;
    let mut debounce = CanopyDebounce::new(config.debounce_limit);
    let mut definite_count = 0usize;
    let mut follower = RowFollower::new(config.gains, config.no_row_hold);
    let mut current_radius = path[0].goal_turn_radius;
    let mut tick = 0u64;
    let mut state_tick = 0u64;
    let turn_sign = if config.turn_left { 1.0 } else { -1.0 };

    loop {
        let state = &path[state_idx];
        let expected = match state.boundary_condition {
            BoundaryCondition::FixedLength => state.boundary_parameter,
            _ => config.default_expected_length,
        };
        // Overrunning the expected distance or stalling (e.g. a persistent
        // row-lost stop) both trip the watchdog.
        let time_budget =
            config.watchdog_factor * (expected / state.target_speed.max(0.05) + 30.0);
        if robot.odometer - entry_odometer > config.watchdog_factor * expected
            || state_tick as f64 * config.dt > time_budget
        {
            return Err(Error::Unreachable(format!(
                "state {} boundary never satisfied within watchdog distance",
                state.state_id
            )));
        }

        let options = ScanOptions {
            seed: config.scan_options.seed.wrapping_add(tick),
            ..config.scan_options
        };
        let (frame, _) = cast_scan(world, &robot, &config.spec, &options)?;
        let detection: Option<RowDetection> = match (state.vertex_type, state.boundary_condition) {
            (VertexType::InRow, _) | (_, BoundaryCondition::DefiniteRow) => {
                Some(detect_row(&frame, &config.detect)?)
            }
            _ => None,
        };

        // Boundary condition of the current state.
        let boundary_met = match state.boundary_condition {
            BoundaryCondition::FixedLength => {
                robot.odometer - entry_odometer >= state.boundary_parameter
            }
            BoundaryCondition::NoCanopy => detect_canopy_absence(
                &frame,
                &config.canopy_left,
                &config.canopy_right,
                &mut debounce,
            )?,
            BoundaryCondition::HedgeOffset => {
                detect_hedge_proximity(&frame, &config.hedge_volume(state.boundary_parameter))?
            }
            BoundaryCondition::DefiniteRow => {
                // A definite row means both treelines seen, the robot
                // roughly aligned with them, and open corridor ahead. The
                // angular offset folds at a half turn, so without the
                // corridor check the condition could fire facing the
                // headland hedge instead of down the next row.
                let aligned = detection
                    .as_ref()
                    .and_then(|d| d.estimate())
                    .map_or(false, |e| !e.one_sided && e.o_a.abs() < 0.35)
                    && !detect_hedge_proximity(&frame, &config.hedge_volume(3.0))?;
                definite_count = if aligned { definite_count + 1 } else { 0 };
                definite_count as f64 >= state.boundary_parameter
            }
        };
        if boundary_met {
            state_idx += 1;
            if state_idx == path.len() {
                break;
            }
            entry_odometer = robot.odometer;
            debounce = CanopyDebounce::new(config.debounce_limit);
            definite_count = 0;
            current_radius = path[state_idx].goal_turn_radius;
            state_tick = 0;
            continue;
        }

        // Command for this tick.
        let (v, omega) = match state.vertex_type {
            VertexType::InRow => match follower.update(detection.as_ref().unwrap()) {
                FollowCommand::Steer(w) => (state.target_speed, w),
                FollowCommand::Stop => (0.0, 0.0),
            },
            VertexType::RowEnd => {
                if state.additional_parameter == AdditionalParameter::UseBumper {
                    current_radius = bumper_adjust(
                        &frame,
                        &config.bumper,
                        current_radius,
                        state.additional_value,
                        config.min_turn_radius,
                    )?;
                }
                let w = if current_radius >= STRAIGHT_RADIUS / 2.0 {
                    0.0
                } else {
                    turn_sign * state.target_speed / current_radius
                };
                (state.target_speed, w)
            }
        };

        robot = step_robot(&robot, v, omega, config.dt)?;
        tick += 1;
        state_tick += 1;
        // Diagnostic trace for tuning closed-loop runs.
        if tick % 25 == 0 && std::env::var_os("PERGOLA_TRACE").is_some() {
            eprintln!(
                "trace: tick {tick} state {} pose ({:.2}, {:.2}, {:.2}) v {:.2} w {:.2} r {:.2}",
                state.state_id, robot.x, robot.y, robot.heading, v, omega, current_radius
            );
        }
        log.push(TrajectorySample {
            t: tick as f64 * config.dt,
            x: robot.x,
            y: robot.y,
            heading: robot.heading,
            state_id: state.state_id,
            v,
            omega,
        });
    }
    Ok(log)
}

/// Serialize a trajectory log as `t,x,y,heading,state_id,v,omega` CSV.
pub fn trajectory_csv(log: &[TrajectorySample]) -> String {
    let mut out = String::from("t,x,y,heading,state_id,v,omega\n");
    for s in log {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.t, s.x, s.y, s.heading, s.state_id, s.v, s.omega
        ));
    }
    out
}

/// Closest approach of any trajectory point to any post, for turn-safety
/// checks.
pub fn min_post_clearance(world: &OrchardWorld, log: &[TrajectorySample]) -> f64 {
    log.iter()
        .map(|s| world.nearest_post_distance(s.x, s.y))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{self, WorldConfig};
    use approx::assert_relative_eq;

    #[test]
    fn path_json_round_trip_with_table_field_names() {
        let path = example_block_path();
        let json = serde_json::to_string_pretty(&path).unwrap();
        for field in [
            "State ID",
            "Vertex Type",
            "Offset in Location",
            "Target Speed",
            "Goal Turn Radius",
            "Boundary Condition Criteria",
            "Boundary Condition Parameter",
            "Additional Parameter",
            "Additional Parameter Value",
            "IN_ROW",
            "ROW_END",
            "FIXED_LENGTH",
            "NO_CANOPY",
            "HEDGE_OFFSET",
            "DEFINITE_ROW",
            "USE_BUMPER",
        ] {
            assert!(json.contains(field), "missing {field}");
        }
        let back: Vec<PathState> = serde_json::from_str(&json).unwrap();
        assert_eq!(back.len(), 7);
        assert_eq!(back[4].state_id, 14);
        assert_eq!(back[4].additional_parameter, AdditionalParameter::UseBumper);
        assert_relative_eq!(back[4].additional_value, 0.05);
        assert_relative_eq!(back[3].goal_turn_radius, 2.0);
        validate_path(&back).unwrap();
    }

    #[test]
    fn validate_path_rejects_bad_states() {
        let mut p = example_block_path();
        p[0].boundary_parameter = 0.0;
        assert!(validate_path(&p).is_err());
        assert!(validate_path(&[]).is_err());
    }

    #[test]
    fn naive_turn_examples() {
        let prims = plan_naive_turn(2.5, 1.7, 2.0).unwrap();
        assert_eq!(prims[0], MotionPrimitive::Straight { length: 2.5 });
        assert!(plan_naive_turn(2.5, 1.7, std::f64::consts::PI).is_err());
        assert!(plan_naive_turn(2.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn naive_turn_end_pose_geometry() {
        let start = RobotState::at(0.0, 0.0, 0.0);
        let theta = 1.2f64;
        let (r, s0) = (1.7, 2.5);
        let prims = plan_naive_turn(s0, r, theta).unwrap();
        let end = primitive_end_pose(&start, &prims);
        assert_relative_eq!(end.y, r * (1.0 - theta.cos()), epsilon = 1e-9);
        assert_relative_eq!(end.x, s0 + r * theta.sin(), epsilon = 1e-9);
        assert_relative_eq!(end.heading, theta, epsilon = 1e-9);
    }

    #[test]
    fn debounce_semantics() {
        let mut d = CanopyDebounce::new(5);
        for i in 1..=4 {
            assert!(!d.update(true), "must not fire at frame {i}");
        }
        assert!(!d.update(false), "presence resets");
        assert_eq!(d.counter(), 0);
        for i in 1..=4 {
            assert!(!d.update(true), "must not fire at frame {i} after reset");
        }
        assert!(d.update(true), "fires on the 5th consecutive absence");
    }

    fn hedge_world() -> sim::OrchardWorld {
        let cfg = WorldConfig {
            hedge_at_far_end: Some(30.0),
            ..Default::default()
        };
        sim::build_world(&cfg).unwrap()
    }

    #[test]
    fn hedge_proximity_by_distance() {
        let w = hedge_world();
        let cfg = MissionConfig::new(RobotState::at(0.0, 2.5, 0.0));
        let vol = cfg.hedge_volume(2.3);
        let near = RobotState::at(28.0, 2.5, 0.0); // hedge 2 m ahead
        let (f, _) = sim::cast_scan(&w, &near, &cfg.spec, &ScanOptions::default()).unwrap();
        assert!(detect_hedge_proximity(&f, &vol).unwrap());
        let far = RobotState::at(25.0, 2.5, 0.0); // hedge 5 m ahead
        let (f, _) = sim::cast_scan(&w, &far, &cfg.spec, &ScanOptions::default()).unwrap();
        assert!(!detect_hedge_proximity(&f, &vol).unwrap());
    }

    #[test]
    fn canopy_absence_mid_row_vs_headland() {
        let w = sim::build_world(&WorldConfig::default()).unwrap();
        let cfg = MissionConfig::new(RobotState::at(0.0, 2.5, 0.0));
        let mut d = CanopyDebounce::new(5);
        let mid = RobotState::at(10.0, 2.5, 0.0);
        let (f, _) = sim::cast_scan(&w, &mid, &cfg.spec, &ScanOptions::default()).unwrap();
        for _ in 0..10 {
            assert!(!detect_canopy_absence(&f, &cfg.canopy_left, &cfg.canopy_right, &mut d).unwrap());
        }
        assert_eq!(d.counter(), 0);
        let open = RobotState::at(35.0, 2.5, 0.0);
        let (f, _) = sim::cast_scan(&w, &open, &cfg.spec, &ScanOptions::default()).unwrap();
        let mut fired_at = None;
        for i in 1..=6 {
            if detect_canopy_absence(&f, &cfg.canopy_left, &cfg.canopy_right, &mut d).unwrap() {
                fired_at = Some(i);
                break;
            }
        }
        assert_eq!(fired_at, Some(5));
    }

    #[test]
    fn bumper_reduces_radius_and_floors() {
        let mut w = sim::build_world(&WorldConfig::default()).unwrap();
        w.cylinders.clear();
        w.boxes.clear();
        w.bounds = (1e9, 1e9 + 1.0, 1e9, 1e9 + 1.0);
        let robot = RobotState::at(0.0, 2.5, 0.0);
        let cfg = MissionConfig::new(robot);
        let (empty_frame, _) = sim::cast_scan(&w, &robot, &cfg.spec, &ScanOptions::default()).unwrap();
        assert_relative_eq!(
            bumper_adjust(&empty_frame, &cfg.bumper, 1.7, 0.05, 0.5).unwrap(),
            1.7
        );
        w.cylinders.push(sim::Cylinder {
            x: 0.2,
            y: 2.5,
            z_min: 0.0,
            z_max: 2.0,
            radius: 0.08,
            class: sim::ObjectClass::Post,
            reflective: false,
        });
        let (f, _) = sim::cast_scan(&w, &robot, &cfg.spec, &ScanOptions::default()).unwrap();
        assert_relative_eq!(bumper_adjust(&f, &cfg.bumper, 1.7, 0.05, 0.5).unwrap(), 1.65);
        let mut r = 1.7;
        for _ in 0..100 {
            r = bumper_adjust(&f, &cfg.bumper, r, 0.05, 0.5).unwrap();
        }
        assert_relative_eq!(r, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn fixed_length_tick_count() {
        let w = sim::build_world(&WorldConfig::default()).unwrap();
        let mut cfg = MissionConfig::new(RobotState::at(5.0, 2.5, 0.0));
        cfg.spec = LidarSpec::coarse();
        let path = vec![PathState {
            state_id: 10,
            vertex_type: VertexType::InRow,
            offset_in_location: 0.0,
            target_speed: 1.0,
            goal_turn_radius: STRAIGHT_RADIUS,
            boundary_condition: BoundaryCondition::FixedLength,
            boundary_parameter: 5.0,
            additional_parameter: AdditionalParameter::None,
            additional_value: 0.0,
        }];
        let log = run_path(&w, &path, &cfg).unwrap();
        assert!((log.len() as i64 - 50).abs() <= 1, "ticks = {}", log.len());
        assert!(log.iter().all(|s| s.state_id == 10));
    }

    #[test]
    fn definite_row_satisfied_quickly() {
        let w = sim::build_world(&WorldConfig::default()).unwrap();
        let mut cfg = MissionConfig::new(RobotState::at(10.0, 2.5, 0.0));
        cfg.spec = LidarSpec::coarse();
        let path = vec![PathState {
            state_id: 15,
            vertex_type: VertexType::RowEnd,
            offset_in_location: 0.0,
            target_speed: 0.3,
            goal_turn_radius: STRAIGHT_RADIUS,
            boundary_condition: BoundaryCondition::DefiniteRow,
            boundary_parameter: 5.0,
            additional_parameter: AdditionalParameter::None,
            additional_value: 0.0,
        }];
        let log = run_path(&w, &path, &cfg).unwrap();
        assert!(log.len() <= 6, "mid-row definite-row took {} ticks", log.len());
    }

    #[test]
    fn watchdog_aborts_unsatisfiable_state() {
        // A hedge boundary in a hedge-free world can never be satisfied.
        let w = sim::build_world(&WorldConfig::default()).unwrap();
        let mut cfg = MissionConfig::new(RobotState::at(5.0, 2.5, 0.0));
        cfg.spec = LidarSpec::coarse();
        cfg.default_expected_length = 2.0;
        let path = vec![PathState {
            state_id: 12,
            vertex_type: VertexType::RowEnd,
            offset_in_location: 0.0,
            target_speed: 0.5,
            goal_turn_radius: STRAIGHT_RADIUS,
            boundary_condition: BoundaryCondition::HedgeOffset,
            boundary_parameter: 2.3,
            additional_parameter: AdditionalParameter::None,
            additional_value: 0.0,
        }];
        let err = run_path(&w, &path, &cfg).unwrap_err();
        assert!(err.to_string().contains("12"), "{err}");
    }

    #[test]
    fn trajectory_csv_header() {
        let csv = trajectory_csv(&[TrajectorySample {
            t: 0.1,
            x: 1.0,
            y: 2.0,
            heading: 0.0,
            state_id: 10,
            v: 0.3,
            omega: 0.0,
        }]);
        assert!(csv.starts_with("t,x,y,heading,state_id,v,omega\n"));
        assert_eq!(csv.lines().count(), 2);
    }
}
