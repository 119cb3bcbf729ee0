//! Frame and mask files.
//!
//! CSV: a header line `radix,direction,kind,window,rows,cols`, its values,
//! then `rows` lines of `cols` comma-separated values, row 0 (south) first.
//! PGM: binary P5, 8-bit, north row first so the image reads like a map;
//! values are clamped to `[0, 1]` and scaled by 255 with halves rounded up.

use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::Direction;
use crate::telemetry::{FeatureFrame, FeatureKind};

const HEADER: &str = "radix,direction,kind,window,rows,cols";

fn write_grid(
    radix: usize,
    dir: Direction,
    kind: &str,
    window: usize,
    rows: usize,
    cols: usize,
    values: &[f64],
) -> String {
    let mut out = format!("{HEADER}\n{radix},{dir},{kind},{window},{rows},{cols}\n");
    for r in 0..rows {
        let line: Vec<String> = values[r * cols..(r + 1) * cols]
            .iter()
            .map(|v| v.to_string())
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

struct Grid {
    radix: usize,
    direction: Direction,
    kind: String,
    window: usize,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

fn parse_grid(text: &str) -> Result<Grid> {
    let bad = |m: String| Error::Parse(format!("frame csv: {m}"));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some(HEADER) {
        return Err(bad("missing header".into()));
    }
    let meta: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("missing metadata".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    if meta.len() != 6 {
        return Err(bad(format!("{} metadata fields, expected 6", meta.len())));
    }
    let int = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| bad(format!("bad integer `{s}`")))
    };
    let g = Grid {
        radix: int(meta[0])?,
        direction: meta[1].parse()?,
        kind: meta[2].to_string(),
        window: int(meta[3])?,
        rows: int(meta[4])?,
        cols: int(meta[5])?,
        values: Vec::new(),
    };
    let mut values = Vec::with_capacity(g.rows * g.cols);
    for (r, line) in lines.enumerate() {
        if r >= g.rows {
            return Err(bad("more rows than declared".into()));
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad number `{s}`")))
            })
            .collect::<Result<_>>()?;
        if row.len() != g.cols {
            return Err(bad(format!(
                "row {r} has {} values, expected {}",
                row.len(),
                g.cols
            )));
        }
        values.extend(row);
    }
    if values.len() != g.rows * g.cols {
        return Err(bad("fewer rows than declared".into()));
    }
    Ok(Grid { values, ..g })
}

pub fn frame_to_csv(frame: &FeatureFrame) -> String {
    write_grid(
        frame.radix,
        frame.direction,
        &frame.kind.to_string(),
        frame.window_index,
        frame.rows,
        frame.cols,
        &frame.values,
    )
}

pub fn frame_from_csv(text: &str) -> Result<FeatureFrame> {
    let g = parse_grid(text)?;
    let kind: FeatureKind = g.kind.parse()?;
    let mut frame = FeatureFrame::zeros(g.direction, kind, g.radix, g.window);
    if (frame.rows, frame.cols) != (g.rows, g.cols) {
        return Err(Error::Shape(format!(
            "{} frame on R={} is {}x{}, file declares {}x{}",
            g.direction, g.radix, frame.rows, frame.cols, g.rows, g.cols
        )));
    }
    frame.values = g.values;
    Ok(frame)
}

/// An `R x R` node-indexed 0/1 mask as CSV with kind `mask`.
pub fn mask_to_csv(mask: &[u8], direction: Direction, radix: usize, window: usize) -> String {
    let values: Vec<f64> = mask.iter().map(|&m| f64::from(m)).collect();
    write_grid(radix, direction, "mask", window, radix, radix, &values)
}

pub fn mask_from_csv(text: &str) -> Result<(Direction, usize, Vec<u8>)> {
    let g = parse_grid(text)?;
    if g.kind != "mask" || g.rows != g.radix || g.cols != g.radix {
        return Err(Error::Parse(format!(
            "not an R x R mask (kind `{}`)",
            g.kind
        )));
    }
    let mask = g
        .values
        .iter()
        .map(|&v| match v {
            0.0 => Ok(0),
            1.0 => Ok(1),
            _ => Err(Error::Parse(format!("mask value {v} is not 0 or 1"))),
        })
        .collect::<Result<_>>()?;
    Ok((g.direction, g.radix, mask))
}

pub fn pgm_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn frame_to_pgm(frame: &FeatureFrame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.cols, frame.rows).into_bytes();
    for r in (0..frame.rows).rev() {
        out.extend(
            frame.values[r * frame.cols..(r + 1) * frame.cols]
                .iter()
                .map(|&v| pgm_byte(v)),
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    Csv,
    Pgm,
}

impl std::str::FromStr for FrameFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(FrameFormat::Csv),
            "pgm" => Ok(FrameFormat::Pgm),
            other => Err(Error::Parse(format!("unknown frame format `{other}`"))),
        }
    }
}

pub fn export_frame(frame: &FeatureFrame, format: FrameFormat, path: &Path) -> Result<()> {
    let bytes = match format {
        FrameFormat::Csv => frame_to_csv(frame).into_bytes(),
        FrameFormat::Pgm => frame_to_pgm(frame),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_frame(path: &Path) -> Result<FeatureFrame> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    frame_from_csv(&text)
}
