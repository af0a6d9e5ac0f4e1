//! `pergola`: command line front end for the orchard perception and
//! navigation toolkit. Every subcommand is deterministic for a given set of
//! inputs, seed and parameters; diagnostics go to standard error and data to
//! files or standard output.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/processing error.

use clap::{Args, Parser, Subcommand, ValueEnum};
use pergola_core::arm::{self, ArmGeometry, WorkspaceWindow};
use pergola_core::boom::{self, BoomTargetMode, BoomTargetState};
use pergola_core::error::Error as CoreError;
use pergola_core::features::{self, PlaneMetric, ScaleModel};
use pergola_core::io;
use pergola_core::mission::{self, MissionConfig, PathState};
use pergola_core::rownav::{self, RowDetection, RowDetectParams};
use pergola_core::safety::{self, StopLatch, VolumeOfInterest};
use pergola_core::scan::{rasterize, GridSpec, LidarFrame, LidarSpec, Point3};
use pergola_core::sim::{self, cast_scan, RobotState, ScanOptions, WorldConfig};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "pergola",
    version,
    about = "Lidar perception and navigation toolkit for pergola orchards"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cast synthetic lidar frames, or drive a path and record the trajectory
    Simulate(SimulateArgs),
    /// Estimate the row centreline offsets from a frame CSV
    DetectRow(DetectRowArgs),
    /// Produce a bird's-eye structure mask from a frame CSV
    ExtractFeatures(ExtractArgs),
    /// Score a predicted mask against a truth mask
    Evaluate(EvaluateArgs),
    /// Run a topological path closed-loop in a simulated world
    Navigate(NavigateArgs),
    /// Replay frames through the vest detector and zone logic
    SafetyMonitor(SafetyArgs),
    /// Turn a vertical-scan stream into boom height set-points
    BoomNav(BoomNavArgs),
    /// Inverse kinematics for the planar three-link arm
    Ik(IkArgs),
    /// Grid sweep of plane-extraction parameters against synthetic truth
    Sweep(SweepArgs),
}

#[derive(Args)]
struct FrameInput {
    /// Frame CSV (plane,azimuth,range_m,intensity)
    #[arg(long)]
    frame: PathBuf,
    /// Interpret the frame with the 450-azimuth (0.8 degree) spec
    #[arg(long)]
    coarse: bool,
}

impl FrameInput {
    fn load(&self) -> Result<LidarFrame, CoreError> {
        io::read_frame_csv(&self.frame, spec_for(self.coarse))
    }
}

fn spec_for(coarse: bool) -> LidarSpec {
    if coarse {
        LidarSpec::coarse()
    } else {
        LidarSpec::default()
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// World configuration JSON; defaults to the built-in two-row block
    #[arg(long)]
    world: Option<PathBuf>,
    /// Seed for scan noise and any stochastic world content
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if absent)
    #[arg(long)]
    out: PathBuf,
    /// Sensor pose as x,y,heading_rad
    #[arg(long, default_value = "2.0,2.5,0.0")]
    pose: String,
    /// Use the 450-azimuth (0.8 degree) spec
    #[arg(long)]
    coarse: bool,
    /// Gaussian range noise sigma, metres
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Optional topological path JSON: runs the closed loop and records
    /// the trajectory alongside the start-pose frame
    #[arg(long)]
    path: Option<PathBuf>,
}

#[derive(Args)]
struct DetectRowArgs {
    #[command(flatten)]
    frame: FrameInput,
    /// Write stage-by-stage pipeline counts to this JSON file
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    /// Per-segment max-metric plane selection
    Plane,
    /// Range-scaled density threshold
    Density,
    /// Vertical-angle connected components
    Vertical,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Mean,
    Median,
    Maximum,
}

impl From<MetricArg> for PlaneMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Mean => PlaneMetric::Mean,
            MetricArg::Median => PlaneMetric::Median,
            MetricArg::Maximum => PlaneMetric::Maximum,
        }
    }
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    frame: FrameInput,
    #[arg(long, value_enum)]
    method: Method,
    /// Output mask PGM
    #[arg(long)]
    out: PathBuf,
    /// plane: azimuth segments (must divide the azimuth count)
    #[arg(long, default_value_t = 1)]
    segments: usize,
    /// plane: per-segment ranking statistic
    #[arg(long, value_enum, default_value_t = MetricArg::Mean)]
    metric: MetricArg,
    /// density: binarization threshold after scaling
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// vertical: minimum inclination between stacked returns, degrees
    #[arg(long, default_value_t = 45.0)]
    angle_threshold: f64,
    /// vertical: minimum object height, metres
    #[arg(long, default_value_t = 0.4)]
    height_threshold: f64,
    #[arg(long, default_value_t = 400)]
    grid_side: usize,
    #[arg(long, default_value_t = 0.1)]
    grid_res: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted mask PGM
    #[arg(long)]
    pred: PathBuf,
    /// Truth mask PGM
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args)]
struct NavigateArgs {
    #[arg(long)]
    world: Option<PathBuf>,
    /// Topological path JSON (array of path states)
    #[arg(long)]
    path: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Start pose as x,y,heading_rad
    #[arg(long, default_value = "2.0,2.5,0.0")]
    start: String,
    /// Use the 450-azimuth (0.8 degree) spec for the control loop
    #[arg(long)]
    coarse: bool,
    /// Trajectory CSV output
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SafetyArgs {
    /// Zone definition JSON {decel_zone, stop_zone, dilation_iterations};
    /// defaults to 4 m / 2 m forward zones
    #[arg(long)]
    zones: Option<PathBuf>,
    /// Interpret the frames with the 450-azimuth spec
    #[arg(long)]
    coarse: bool,
    /// Frame CSVs, replayed in order through the stop latch
    #[arg(required = true)]
    frames: Vec<PathBuf>,
}

#[derive(Args)]
struct BoomNavArgs {
    /// Vertical-scan stream CSV (scan,odometer_m,y_m,z_m)
    #[arg(long)]
    scans: PathBuf,
    /// Set-point CSV output (odometer_m,set_point_m)
    #[arg(long)]
    out: PathBuf,
    /// Lateral half-width of the boom sweep, metres
    #[arg(long, default_value_t = 1.5)]
    half_width: f64,
    /// Points at or below this sensor-relative height are ignored
    #[arg(long, default_value_t = 0.0)]
    floor: f64,
    /// Canopy-height percentile per scan
    #[arg(long, default_value_t = 10.0)]
    percentile: f64,
    /// Clearance subtracted from the canopy percentile, metres
    #[arg(long, default_value_t = 0.0)]
    offset: f64,
    /// Collation reduction over the look-ahead window
    #[arg(long, value_enum, default_value_t = ModeArg::Minimum)]
    mode: ModeArg,
    /// Along-track distance from the boom plane to the sensor, metres
    #[arg(long, default_value_t = 1.0)]
    sensor_to_boom: f64,
    /// Height commanded when no canopy target exists, metres
    #[arg(long, default_value_t = 0.5)]
    minimum_height: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Minimum,
    Median,
}

#[derive(Args)]
struct IkArgs {
    /// End-effector target as x,y in the arm plane, metres
    #[arg(long)]
    target: Option<String>,
    /// Fixed approach angle of the last link, radians
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
    beta: f64,
    /// Link lengths as a,b,c metres; defaults to the picking arm
    #[arg(long)]
    links: Option<String>,
    /// Export the reachable workspace: <prefix>.ppm (joint angles
    /// byte-scaled per channel) and <prefix>.csv (exact values)
    #[arg(long)]
    workspace: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Synthetic frames evaluated per cell
    #[arg(long, default_value_t = 5)]
    frames: usize,
    /// Comma-separated segment counts
    #[arg(long, default_value = "1,5,30,450")]
    segments: String,
    /// Comma-separated metrics out of mean,median,maximum
    #[arg(long, default_value = "mean,median,maximum")]
    metrics: String,
    /// Results CSV; standard output when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}

fn run(command: Command) -> Result<(), CoreError> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::DetectRow(a) => detect_row(a),
        Command::ExtractFeatures(a) => extract_features(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Navigate(a) => navigate(a),
        Command::SafetyMonitor(a) => safety_monitor(a),
        Command::BoomNav(a) => boom_nav(a),
        Command::Ik(a) => ik(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> CoreError {
    CoreError::Invalid {
        field,
        reason: reason.into(),
    }
}

fn load_world(path: Option<&Path>) -> Result<(WorldConfig, sim::OrchardWorld), CoreError> {
    let config: WorldConfig = match path {
        None => WorldConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| invalid("world", format!("{}: {e}", p.display())))?
        }
    };
    let world = sim::build_world(&config)?;
    Ok((config, world))
}

fn load_path(path: &Path) -> Result<Vec<PathState>, CoreError> {
    let text = std::fs::read_to_string(path)?;
    let states: Vec<PathState> = serde_json::from_str(&text)
        .map_err(|e| invalid("path", format!("{}: {e}", path.display())))?;
    mission::validate_path(&states)?;
    Ok(states)
}

fn parse_triple(s: &str, field: &'static str) -> Result<(f64, f64, f64), CoreError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| invalid(field, format!("expected three numbers, got {s:?}")))?;
    if parts.len() != 3 {
        return Err(invalid(field, format!("expected three numbers, got {s:?}")));
    }
    Ok((parts[0], parts[1], parts[2]))
}

fn parse_pair(s: &str, field: &'static str) -> Result<(f64, f64), CoreError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| invalid(field, format!("expected two numbers, got {s:?}")))?;
    if parts.len() != 2 {
        return Err(invalid(field, format!("expected two numbers, got {s:?}")));
    }
    Ok((parts[0], parts[1]))
}

fn simulate(a: SimulateArgs) -> Result<(), CoreError> {
    let (_, world) = load_world(a.world.as_deref())?;
    std::fs::create_dir_all(&a.out)?;
    let (x, y, h) = parse_triple(&a.pose, "pose")?;
    let robot = RobotState::at(x, y, h);
    let spec = spec_for(a.coarse);
    let options = ScanOptions {
        range_noise_sigma: a.noise,
        seed: a.seed,
        ..ScanOptions::default()
    };
    let (frame, truth) = cast_scan(&world, &robot, &spec, &options)?;
    io::write_frame_csv(&frame, &a.out.join("frame.csv"))?;
    io::write_frame_pcd(&frame, &a.out.join("frame.pcd"))?;
    let grid = GridSpec {
        side_px: 400,
        metres_per_px: 0.1,
    };
    let (structure, posts) = truth.masks(&frame, grid)?;
    io::write_grid_pgm(&structure, &a.out.join("truth_structure.pgm"))?;
    io::write_grid_pgm(&posts, &a.out.join("truth_posts.pgm"))?;
    std::fs::write(
        a.out.join("ground_truth.json"),
        format!(
            "{{\"o_l_m\": {:.6}, \"o_a_rad\": {:.6}}}\n",
            truth.o_l, truth.o_a
        ),
    )?;
    if let Some(path_file) = &a.path {
        let states = load_path(path_file)?;
        let mut config = MissionConfig::new(robot);
        config.spec = spec.clone();
        config.scan_options = options;
        let log = mission::run_path(&world, &states, &config)?;
        std::fs::write(a.out.join("trajectory.csv"), mission::trajectory_csv(&log))?;
        eprintln!(
            "trajectory: {} samples, final pose ({:.3}, {:.3}, {:.3})",
            log.len(),
            log.last().map_or(x, |s| s.x),
            log.last().map_or(y, |s| s.y),
            log.last().map_or(h, |s| s.heading),
        );
    }
    eprintln!(
        "frame: {} returns written to {}",
        frame.n_returns(),
        a.out.display()
    );
    Ok(())
}

fn detect_row(a: DetectRowArgs) -> Result<(), CoreError> {
    let frame = a.frame.load()?;
    let detection = rownav::detect_row(&frame, &RowDetectParams::default())?;
    println!("o_l_m,o_a_rad");
    let diagnostics = match &detection {
        RowDetection::Row(e) => {
            println!("{:.6},{:.6}", e.o_l, e.o_a);
            e.diagnostics
        }
        RowDetection::NoRow(d) => {
            eprintln!("no row detected");
            *d
        }
    };
    if let Some(p) = &a.diagnostics {
        let text = serde_json::to_string_pretty(&diagnostics)
            .map_err(|e| invalid("diagnostics", e.to_string()))?;
        std::fs::write(p, text + "\n")?;
    }
    Ok(())
}

fn extract_features(a: ExtractArgs) -> Result<(), CoreError> {
    let frame = a.frame.load()?;
    let grid = GridSpec {
        side_px: a.grid_side,
        metres_per_px: a.grid_res,
    };
    let mask = match a.method {
        Method::Plane => {
            let points =
                features::select_plane_segmented(&frame, a.segments, a.metric.into())?;
            rasterize(&points, grid, 1.0)?.threshold(0.0)
        }
        Method::Density => {
            let model = ScaleModel::for_spec(&frame.spec);
            features::scaled_density_extract(&frame, &model, grid, a.threshold)?
        }
        Method::Vertical => {
            let (_, mask) = features::extract_vertical_objects(
                &frame,
                a.angle_threshold,
                a.height_threshold,
                grid,
            )?;
            mask
        }
    };
    io::write_grid_pgm(&mask, &a.out)?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<(), CoreError> {
    let pred = io::read_grid_pgm(&a.pred)?;
    let truth = io::read_grid_pgm(&a.truth)?;
    let s = features::evaluate_extraction(&pred, &truth)?;
    println!("tp,fp,fn,tn,precision,recall,specificity");
    println!(
        "{},{},{},{},{:.6},{:.6},{:.6}",
        s.tp, s.fp, s.fn_, s.tn, s.precision, s.recall, s.specificity
    );
    Ok(())
}

fn navigate(a: NavigateArgs) -> Result<(), CoreError> {
    let (_, world) = load_world(a.world.as_deref())?;
    let states = load_path(&a.path)?;
    let (x, y, h) = parse_triple(&a.start, "start")?;
    let mut config = MissionConfig::new(RobotState::at(x, y, h));
    config.spec = spec_for(a.coarse);
    config.scan_options.seed = a.seed;
    let log = mission::run_path(&world, &states, &config)?;
    std::fs::write(&a.out, mission::trajectory_csv(&log))?;
    let end = log.last().expect("non-empty trajectory");
    eprintln!(
        "completed {} states in {:.1} s simulated; final pose ({:.3}, {:.3}, {:.3}); \
         min post clearance {:.3} m",
        states.len(),
        end.t,
        end.x,
        end.y,
        end.heading,
        mission::min_post_clearance(&world, &log)
    );
    Ok(())
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ZoneFile {
    decel_zone: VolumeOfInterest,
    stop_zone: VolumeOfInterest,
    dilation_iterations: usize,
}

impl Default for ZoneFile {
    fn default() -> Self {
        let zone = |x_max: f64| VolumeOfInterest {
            x_min: 0.1,
            x_max,
            y_min: -1.5,
            y_max: 1.5,
            z_min: -0.5,
            z_max: 1.5,
            count_threshold: 1,
        };
        ZoneFile {
            decel_zone: zone(4.0),
            stop_zone: zone(2.0),
            dilation_iterations: 2,
        }
    }
}

fn safety_monitor(a: SafetyArgs) -> Result<(), CoreError> {
    let zones: ZoneFile = match &a.zones {
        None => ZoneFile::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| invalid("zones", format!("{}: {e}", p.display())))?
        }
    };
    let mut latch = StopLatch::default();
    for path in &a.frames {
        let frame = io::read_frame_csv(path, spec_for(a.coarse))?;
        let detections = safety::detect_vests(
            &frame,
            &zones.decel_zone,
            &zones.stop_zone,
            zones.dilation_iterations,
        )?;
        let decel = detections.iter().any(|d| d.in_decel_zone);
        let stop = detections.iter().any(|d| d.in_stop_zone);
        latch.observe(stop);
        println!(
            "{{\"frame\": \"{}\", \"detections\": {}, \"decel\": {}, \"stop\": {}, \"latched\": {}}}",
            path.display(),
            detections.len(),
            decel,
            stop,
            latch.is_stopped()
        );
    }
    Ok(())
}

fn boom_nav(a: BoomNavArgs) -> Result<(), CoreError> {
    let text = std::fs::read_to_string(&a.scans)?;
    let parse_err = |line: usize, reason: &str| CoreError::Parse {
        path: a.scans.display().to_string(),
        line,
        reason: reason.to_string(),
    };
    // Rows grouped by non-decreasing scan index; one odometer value per scan.
    let mut scans: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    let mut last_scan: Option<u64> = None;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "scan,odometer_m,y_m,z_m" => {}
        _ => return Err(parse_err(1, "missing scan,odometer_m,y_m,z_m header")),
    }
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(lineno, "expected 4 fields"));
        }
        let scan: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, "bad scan index"))?;
        let odom: f64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, "bad odometer"))?;
        let y: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, "bad y"))?;
        let z: f64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, "bad z"))?;
        match last_scan {
            Some(prev) if scan < prev => {
                return Err(parse_err(lineno, "scan indices must be non-decreasing"))
            }
            Some(prev) if scan == prev => scans.last_mut().unwrap().1.push((y, z)),
            _ => {
                scans.push((odom, vec![(y, z)]));
                last_scan = Some(scan);
            }
        }
    }
    let mode = match a.mode {
        ModeArg::Minimum => BoomTargetMode::Minimum,
        ModeArg::Median => BoomTargetMode::Median,
    };
    let mut state = BoomTargetState::new(a.sensor_to_boom, mode, a.minimum_height);
    let mut out = String::from("odometer_m,set_point_m\n");
    let mut prev_odom: Option<f64> = None;
    for (odom, points) in &scans {
        let advance = prev_odom.map_or(0.0, |p| *odom - p);
        prev_odom = Some(*odom);
        let roi = boom::boom_roi(points, a.half_width, a.floor);
        let target = boom::scan_target(&roi, a.percentile, a.offset);
        let command = boom::collate_and_command(&mut state, advance, target, None)?;
        writeln!(out, "{odom:.6},{command:.6}").unwrap();
    }
    std::fs::write(&a.out, out)?;
    eprintln!("{} scans -> {}", scans.len(), a.out.display());
    Ok(())
}

fn ik(a: IkArgs) -> Result<(), CoreError> {
    let mut geometry = ArmGeometry::default();
    if let Some(links) = &a.links {
        let parts: Vec<f64> = links
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| invalid("links", format!("expected three lengths, got {links:?}")))?;
        if parts.len() != 3 {
            return Err(invalid("links", "expected three lengths"));
        }
        geometry.link_lengths = [parts[0], parts[1], parts[2]];
    }
    geometry.validate()?;
    if let Some(target) = &a.target {
        let target = parse_pair(target, "target")?;
        let solutions = arm::ik_planar3(&geometry, target, a.beta)?;
        let rows: Vec<String> = solutions
            .iter()
            .map(|s| format!("[{:.9}, {:.9}, {:.9}]", s[0], s[1], s[2]))
            .collect();
        println!("{{\"solutions\": [{}]}}", rows.join(", "));
    }
    if let Some(prefix) = &a.workspace {
        export_workspace(&geometry, a.beta, prefix)?;
    }
    if a.target.is_none() && a.workspace.is_none() {
        return Err(invalid("ik", "provide --target and/or --workspace"));
    }
    Ok(())
}

/// PPM P3 raster of the workspace, one colour channel per joint angle
/// byte-scaled over [-pi, pi] (unreachable cells black), plus an exact CSV.
fn export_workspace(
    geometry: &ArmGeometry,
    beta: f64,
    prefix: &Path,
) -> Result<(), CoreError> {
    let window = WorkspaceWindow::picking_default();
    let map = arm::build_workspace(geometry, &window, beta)?;
    let (nx, ny) = (window.nx(), window.ny());
    let byte = |angle: f64| -> u8 {
        let unit = (angle + std::f64::consts::PI) / (2.0 * std::f64::consts::PI);
        (1.0 + unit.clamp(0.0, 1.0) * 254.0).round() as u8
    };
    let mut ppm = format!("P3\n{nx} {ny}\n255\n");
    let mut csv = String::from("ix,iy,x_m,y_m,joint1_rad,joint2_rad,joint3_rad\n");
    // Image rows top-down: highest iy first.
    for iy in (0..ny).rev() {
        let mut row: Vec<String> = Vec::with_capacity(nx);
        for ix in 0..nx {
            match map.get(ix, iy) {
                None => row.push("0 0 0".to_string()),
                Some(angles) => {
                    row.push(format!(
                        "{} {} {}",
                        byte(angles[0]),
                        byte(angles[1]),
                        byte(angles[2])
                    ));
                    let (x, y) = window.cell_centre(ix, iy);
                    writeln!(
                        csv,
                        "{ix},{iy},{x:.6},{y:.6},{:.9},{:.9},{:.9}",
                        angles[0], angles[1], angles[2]
                    )
                    .unwrap();
                }
            }
        }
        writeln!(ppm, "{}", row.join("  ")).unwrap();
    }
    let ppm_path = prefix.with_extension("ppm");
    let csv_path = prefix.with_extension("csv");
    std::fs::write(&ppm_path, ppm)?;
    std::fs::write(&csv_path, csv)?;
    eprintln!(
        "workspace: {} / {} cells reachable -> {}, {}",
        map.n_reachable(),
        nx * ny,
        ppm_path.display(),
        csv_path.display()
    );
    Ok(())
}

fn parse_list<T: std::str::FromStr>(s: &str, field: &'static str) -> Result<Vec<T>, CoreError> {
    s.split(',')
        .map(|t| t.trim().parse::<T>())
        .collect::<Result<_, _>>()
        .map_err(|_| invalid(field, format!("bad list {s:?}")))
}

fn sweep(a: SweepArgs) -> Result<(), CoreError> {
    // Without an explicit world the sweep uses a cluttered block; a clean
    // one saturates every cell at perfect precision and recall.
    let world = match a.world.as_deref() {
        Some(p) => load_world(Some(p))?.1,
        None => sim::build_world(&WorldConfig {
            weed_count: 25,
            branch_count: 15,
            ground_slope: (0.05, 0.08),
            canopy_hole_fraction: 0.2,
            seed: a.seed,
            ..WorldConfig::default()
        })?,
    };
    let segments: Vec<usize> = parse_list(&a.segments, "segments")?;
    let metrics: Vec<PlaneMetric> = a
        .metrics
        .split(',')
        .map(|m| match m.trim() {
            "mean" => Ok(PlaneMetric::Mean),
            "median" => Ok(PlaneMetric::Median),
            "maximum" => Ok(PlaneMetric::Maximum),
            other => Err(invalid("metrics", format!("unknown metric {other:?}"))),
        })
        .collect::<Result<_, _>>()?;
    if a.frames == 0 {
        return Err(invalid("frames", "must be at least 1"));
    }
    let grid = GridSpec {
        side_px: 400,
        metres_per_px: 0.1,
    };
    // Frames and truth masks are shared across cells.
    let spec = LidarSpec::default();
    let mut suite: Vec<(LidarFrame, pergola_core::scan::BirdsEyeGrid)> = Vec::new();
    for k in 0..a.frames as u64 {
        let robot = RobotState::at(8.0 + 2.0 * k as f64, 2.5, 0.0);
        let options = ScanOptions {
            range_noise_sigma: 0.01,
            stray_return_prob: 0.05,
            seed: a.seed.wrapping_add(k),
            ..ScanOptions::default()
        };
        let (frame, truth) = cast_scan(&world, &robot, &spec, &options)?;
        let (structure, _) = truth.masks(&frame, grid)?;
        suite.push((frame, structure));
    }
    let cells: Vec<(usize, PlaneMetric)> = segments
        .iter()
        .flat_map(|&s| metrics.iter().map(move |&m| (s, m)))
        .collect();
    // One worker per cell; each cell is single-run deterministic.
    let results: Vec<(usize, PlaneMetric, Result<(f64, f64), CoreError>, f64)> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = cells
                .iter()
                .map(|&(n_segments, metric)| {
                    let suite = &suite;
                    scope.spawn(move || {
                        let start = Instant::now();
                        let cell = run_sweep_cell(suite, n_segments, metric, grid);
                        (n_segments, metric, cell, start.elapsed().as_secs_f64())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
    let mut out = String::from("segments,metric,precision,recall,runtime_s\n");
    for (n_segments, metric, cell, runtime) in results {
        let metric_name = match metric {
            PlaneMetric::Mean => "mean",
            PlaneMetric::Median => "median",
            PlaneMetric::Maximum => "maximum",
        };
        match cell {
            Ok((precision, recall)) => writeln!(
                out,
                "{n_segments},{metric_name},{precision:.6},{recall:.6},{runtime:.6}"
            )
            .unwrap(),
            Err(e) => {
                eprintln!("cell ({n_segments}, {metric_name}) failed: {e}");
                writeln!(out, "{n_segments},{metric_name},nan,nan,{runtime:.6}").unwrap();
            }
        }
    }
    match &a.out {
        None => print!("{out}"),
        Some(p) => std::fs::write(p, out)?,
    }
    Ok(())
}

fn run_sweep_cell(
    suite: &[(LidarFrame, pergola_core::scan::BirdsEyeGrid)],
    n_segments: usize,
    metric: PlaneMetric,
    grid: GridSpec,
) -> Result<(f64, f64), CoreError> {
    let mut precision = 0.0;
    let mut recall = 0.0;
    for (frame, truth) in suite {
        let points: Vec<Point3> = features::select_plane_segmented(frame, n_segments, metric)?;
        let mask = rasterize(&points, grid, 1.0)?.threshold(0.0);
        let scores = features::evaluate_extraction(&mask, truth)?;
        precision += scores.precision;
        recall += scores.recall;
    }
    let n = suite.len() as f64;
    Ok((precision / n, recall / n))
}
