//! File formats: frame CSV, PCD export, PGM rasters and lossless grid CSV.
//!
//! Frame CSV has a `plane,azimuth,range_m,intensity` header and one row per
//! cell with a non-zero range; absent cells are no-return. PCD export is
//! ASCII v0.7 with `x y z intensity` fields. Grids export as PGM "P2"
//! (clamped to a 255 maxval) or as a lossless CSV dump.

use crate::error::{Error, Result};
use crate::scan::{BirdsEyeGrid, GridSpec, LidarFrame, LidarSpec};
use std::fmt::Write as _;
use std::path::Path;

pub fn write_frame_csv(frame: &LidarFrame, path: &Path) -> Result<()> {
    let mut out = String::from("plane,azimuth,range_m,intensity\n");
    for plane in 0..frame.spec.n_planes() {
        for az in 0..frame.spec.n_azimuths {
            let r = frame.range(plane, az);
            if r > 0.0 {
                writeln!(out, "{plane},{az},{r},{}", frame.intensity(plane, az)).unwrap();
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_frame_csv(path: &Path, spec: LidarSpec) -> Result<LidarFrame> {
    let text = std::fs::read_to_string(path)?;
    read_frame_csv_str(&text, spec, &path.display().to_string())
}

pub fn read_frame_csv_str(text: &str, spec: LidarSpec, path: &str) -> Result<LidarFrame> {
    let mut frame = LidarFrame::empty(spec)?;
    let parse_err = |line: usize, reason: &str| Error::Parse {
        path: path.to_string(),
        line,
        reason: reason.to_string(),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "plane,azimuth,range_m,intensity" => {}
        _ => return Err(parse_err(1, "missing header")),
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
        let plane: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, "bad plane index"))?;
        let az: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, "bad azimuth index"))?;
        let range: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, "bad range"))?;
        let intensity: u8 = fields[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, "bad intensity"))?;
        if plane >= frame.spec.n_planes() || az >= frame.spec.n_azimuths {
            return Err(parse_err(lineno, "cell index outside frame shape"));
        }
        frame
            .set(plane, az, range, intensity)
            .map_err(|e| parse_err(lineno, &e.to_string()))?;
    }
    Ok(frame)
}

/// ASCII PCD v0.7 with one `x y z intensity` line per returned point.
pub fn write_frame_pcd(frame: &LidarFrame, path: &Path) -> Result<()> {
    let points: Vec<(f64, f64, f64, u8)> = frame
        .points()
        .into_iter()
        .map(|(plane, az, p)| (p.x, p.y, p.z, frame.intensity(plane, az)))
        .collect();
    let n = points.len();
    let mut out = String::new();
    out.push_str("# .PCD v0.7 - Point Cloud Data file format\n");
    out.push_str("VERSION 0.7\n");
    out.push_str("FIELDS x y z intensity\n");
    out.push_str("SIZE 4 4 4 4\n");
    out.push_str("TYPE F F F F\n");
    out.push_str("COUNT 1 1 1 1\n");
    writeln!(out, "WIDTH {n}").unwrap();
    out.push_str("HEIGHT 1\n");
    out.push_str("VIEWPOINT 0 0 0 1 0 0 0\n");
    writeln!(out, "POINTS {n}").unwrap();
    out.push_str("DATA ascii\n");
    for (x, y, z, i) in points {
        writeln!(out, "{x} {y} {z} {i}").unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// PGM "P2", maxval 255. Cell values are rounded and clamped for export.
pub fn write_grid_pgm(grid: &BirdsEyeGrid, path: &Path) -> Result<()> {
    let side = grid.side_px();
    let mut out = String::new();
    writeln!(out, "P2\n{side} {side}\n255").unwrap();
    for row in 0..side {
        let line: Vec<String> = (0..side)
            .map(|col| format!("{}", grid.get(row, col).round().clamp(0.0, 255.0) as u8))
            .collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_grid_pgm(path: &Path) -> Result<BirdsEyeGrid> {
    let text = std::fs::read_to_string(path)?;
    read_grid_pgm_str(&text, &path.display().to_string())
}

pub fn read_grid_pgm_str(text: &str, path: &str) -> Result<BirdsEyeGrid> {
    let parse_err = |line: usize, reason: &str| Error::Parse {
        path: path.to_string(),
        line,
        reason: reason.to_string(),
    };
    // Tokenize, skipping comment lines.
    let mut tokens: Vec<(usize, &str)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim_start().starts_with('#') {
            continue;
        }
        for tok in line.split_whitespace() {
            tokens.push((i + 1, tok));
        }
    }
    if tokens.is_empty() || tokens[0].1 != "P2" {
        return Err(parse_err(1, "expected P2 magic"));
    }
    if tokens.len() < 4 {
        return Err(parse_err(1, "truncated header"));
    }
    let width: usize = tokens[1]
        .1
        .parse()
        .map_err(|_| parse_err(tokens[1].0, "bad width"))?;
    let height: usize = tokens[2]
        .1
        .parse()
        .map_err(|_| parse_err(tokens[2].0, "bad height"))?;
    let _maxval: usize = tokens[3]
        .1
        .parse()
        .map_err(|_| parse_err(tokens[3].0, "bad maxval"))?;
    if width != height {
        return Err(parse_err(tokens[1].0, "grid must be square"));
    }
    let samples = &tokens[4..];
    if samples.len() != width * height {
        return Err(parse_err(
            tokens.last().map(|t| t.0).unwrap_or(1),
            &format!("expected {} samples, found {}", width * height, samples.len()),
        ));
    }
    let mut grid = BirdsEyeGrid::zeros(GridSpec {
        side_px: width,
        metres_per_px: GridSpec::default().metres_per_px,
    })?;
    for (k, (lineno, tok)) in samples.iter().enumerate() {
        let v: u32 = tok.parse().map_err(|_| parse_err(*lineno, "bad sample"))?;
        grid.set(k / width, k % width, v as f64);
    }
    Ok(grid)
}

/// Lossless CSV dump of a grid, one row of cells per line.
pub fn write_grid_csv(grid: &BirdsEyeGrid, path: &Path) -> Result<()> {
    let side = grid.side_px();
    let mut out = String::new();
    for row in 0..side {
        let line: Vec<String> = (0..side).map(|col| format!("{}", grid.get(row, col))).collect();
        writeln!(out, "{}", line.join(",")).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}
