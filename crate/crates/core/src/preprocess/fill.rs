//! Nearest-neighbour filling of missing grid cells.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, SpatialField};

/// For each cell, the flat id of the cell whose value it takes. Computed once
/// per missing pattern and reused for every field sharing that pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct FillPlan {
    source: Vec<usize>,
}

impl FillPlan {
    pub fn new(grid: &GridSpec, missing: &[bool]) -> Result<Self> {
        let n = grid.n_cells();
        if missing.len() != n {
            return Err(Error::Shape(format!("{} flags for {n} cells", missing.len())));
        }
        let valid: Vec<(usize, i64, i64)> = (0..n)
            .filter(|&id| !missing[id])
            .map(|id| (id, (id / grid.n_lon) as i64, (id % grid.n_lon) as i64))
            .collect();
        if valid.is_empty() {
            return Err(Error::AllMissing);
        }
        let source = (0..n)
            .map(|id| {
                if !missing[id] {
                    return id;
                }
                let (i, j) = ((id / grid.n_lon) as i64, (id % grid.n_lon) as i64);
                // `valid` is in ascending id order, so a strict comparison keeps the smaller id on ties.
                let mut best = (i64::MAX, usize::MAX);
                for &(vid, vi, vj) in &valid {
                    let d2 = (vi - i).pow(2) + (vj - j).pow(2);
                    if d2 < best.0 {
                        best = (d2, vid);
                    }
                }
                best.1
            })
            .collect();
        Ok(Self { source })
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        self.source.iter().map(|&s| values[s]).collect()
    }

    pub fn source(&self) -> &[usize] {
        &self.source
    }
}

/// Replace every missing cell with the value of the nearest non-missing cell.
pub fn nearest_fill(field: &SpatialField, grid: &GridSpec) -> Result<SpatialField> {
    let plan = FillPlan::new(grid, field.missing())?;
    SpatialField::complete(plan.apply(field.values()))
}
