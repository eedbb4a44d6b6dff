//! Metric maps as comma-separated grids (one line per latitude row, `NA` at
//! sea and undefined cells) and optional 8-bit grayscale PGM renders.
//!
//! The render maps the finite range `[lo, hi]` linearly onto intensities
//! 1..=255 (`1 + round(254 (v - lo) / (hi - lo))`, 128 for a constant map);
//! intensity 0 marks sea and undefined cells.

use std::fs;
use std::io::Write;
use std::path::Path;

use ssf_core::LandMask;

use crate::error::{Error, Result};

/// Spread land values (`[location]`) onto the full grid.
pub fn to_grid(values: &[Option<f64>], mask: &LandMask) -> Result<Vec<Option<f64>>> {
    if values.len() != mask.n_land() {
        return Err(Error::Shape(format!("{} values for {} land cells", values.len(), mask.n_land())));
    }
    let mut cells = vec![None; mask.grid().n_cells()];
    for (&cell, v) in mask.land_locations().iter().zip(values) {
        cells[cell] = v.filter(|x| x.is_finite());
    }
    Ok(cells)
}

pub fn export_heatmap(values: &[Option<f64>], mask: &LandMask, path: &Path) -> Result<()> {
    let cells = to_grid(values, mask)?;
    let n_lon = mask.grid().n_lon;
    let mut out = String::new();
    for row in cells.chunks(n_lon) {
        let fields: Vec<String> = row.iter().map(|v| v.map_or_else(|| "NA".to_string(), |x| x.to_string())).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Rows of a file written by [`export_heatmap`].
pub fn read_heatmap(path: &Path) -> Result<Vec<Vec<Option<f64>>>> {
    fs::read_to_string(path)?
        .lines()
        .map(|line| {
            line.split(',')
                .map(|f| match f.trim() {
                    "NA" => Ok(None),
                    s => s.parse().map(Some).map_err(|_| Error::Invalid(format!("bad heatmap value '{s}'"))),
                })
                .collect()
        })
        .collect()
}

pub fn intensity(v: Option<f64>, lo: f64, hi: f64) -> u8 {
    match v {
        None => 0,
        Some(_) if hi <= lo => 128,
        Some(x) => 1 + (254.0 * ((x - lo) / (hi - lo)).clamp(0.0, 1.0)).round() as u8,
    }
}

pub fn render_pgm(values: &[Option<f64>], mask: &LandMask, path: &Path) -> Result<()> {
    let cells = to_grid(values, mask)?;
    let finite: Vec<f64> = cells.iter().flatten().copied().collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let g = mask.grid();
    let mut file = fs::File::create(path)?;
    write!(file, "P5\n{} {}\n255\n", g.n_lon, g.n_lat)?;
    let pixels: Vec<u8> = cells.iter().map(|&v| intensity(v, lo, hi)).collect();
    file.write_all(&pixels)?;
    Ok(())
}
