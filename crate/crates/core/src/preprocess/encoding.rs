//! Sinusoidal positional encoding of grid coordinates.

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Width used per coordinate unless configured otherwise.
pub const DEFAULT_PE_DIM: usize = 12;

/// `pe[2i] = sin(c / 10000^(2i/d))`, `pe[2i+1] = cos(c / 10000^(2i/d))`.
pub fn positional_encoding(coord: f64, d: usize) -> Result<Vec<f64>> {
    if d < 2 || d % 2 != 0 {
        return Err(Error::OddDimension(d));
    }
    let mut pe = Vec::with_capacity(d);
    for i in 0..d / 2 {
        let arg = coord / 10000f64.powf(2.0 * i as f64 / d as f64);
        pe.push(arg.sin());
        pe.push(arg.cos());
    }
    Ok(pe)
}

/// Encoding of one grid cell: longitude (in `[0, 360)`) then latitude, `2d` values.
pub fn location_encoding(grid: &GridSpec, cell: usize, d: usize) -> Result<Vec<f64>> {
    let (i, j) = grid.cell_coords(cell)?;
    let mut v = positional_encoding(grid.lon_360(j), d)?;
    v.extend(positional_encoding(grid.lat(i), d)?);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_alternates() {
        let pe = positional_encoding(0.0, 12).unwrap();
        for (i, v) in pe.iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn forty_five_degrees() {
        let pe = positional_encoding(45.0, 2).unwrap();
        // Radian-valued argument: sin(45) = 0.8509035245341184, cos(45) = 0.5253219888177297.
        assert!((pe[0] - 0.850_903_524_534_118_4).abs() < 1e-15);
        assert!((pe[1] - 0.525_321_988_817_729_7).abs() < 1e-15);
        assert!(matches!(positional_encoding(1.0, 3), Err(Error::OddDimension(3))));
    }

    #[test]
    fn twelve_per_coordinate_gives_24() {
        let g = GridSpec::desk_default();
        assert_eq!(location_encoding(&g, 0, 12).unwrap().len(), 24);
    }

    #[test]
    fn distinct_cells_distinct_codes() {
        let g = GridSpec::desk_default();
        let codes: Vec<Vec<f64>> = (0..g.n_cells()).map(|c| location_encoding(&g, c, 12).unwrap()).collect();
        for a in 0..codes.len() {
            for b in a + 1..codes.len() {
                assert!(codes[a].iter().zip(&codes[b]).any(|(x, y)| x != y), "cells {a} and {b}");
            }
        }
        // Each coordinate on its own also separates.
        let lons: Vec<Vec<f64>> = (0..360).map(|c| positional_encoding(c as f64 + 0.5, 12).unwrap()).collect();
        for a in 0..lons.len() {
            for b in a + 1..lons.len() {
                assert_ne!(lons[a], lons[b]);
            }
        }
    }
}
