//! Grid geometry, land masks, the monthly time axis and field containers.
//!
//! Every flat cell id in the workspace is row-major: latitude is the outer
//! axis, longitude the inner one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectangular latitude/longitude grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_lat: usize,
    pub n_lon: usize,
    pub lat_origin: f64,
    pub lon_origin: f64,
    /// Degrees per cell along both axes.
    pub step: f64,
}

impl GridSpec {
    pub fn new(n_lat: usize, n_lon: usize, lat_origin: f64, lon_origin: f64, step: f64) -> Result<Self> {
        if n_lat == 0 || n_lon == 0 {
            return Err(Error::InvalidGrid(format!("empty grid {n_lat}x{n_lon}")));
        }
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidGrid(format!("step must be positive, got {step}")));
        }
        if !lat_origin.is_finite() || !lon_origin.is_finite() {
            return Err(Error::InvalidGrid("non-finite origin".into()));
        }
        Ok(Self {
            n_lat,
            n_lon,
            lat_origin,
            lon_origin,
            step,
        })
    }

    /// Desk-scale default: 16 x 32 one-degree cells over the continental US.
    pub fn desk_default() -> Self {
        Self {
            n_lat: 16,
            n_lon: 32,
            lat_origin: 25.0,
            lon_origin: 235.0,
            step: 1.0,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn cell_index(&self, lat_idx: usize, lon_idx: usize) -> Result<usize> {
        if lat_idx >= self.n_lat {
            return Err(Error::OutOfBounds {
                axis: "latitude",
                index: lat_idx,
                size: self.n_lat,
            });
        }
        if lon_idx >= self.n_lon {
            return Err(Error::OutOfBounds {
                axis: "longitude",
                index: lon_idx,
                size: self.n_lon,
            });
        }
        Ok(lat_idx * self.n_lon + lon_idx)
    }

    /// Inverse of [`GridSpec::cell_index`].
    pub fn cell_coords(&self, id: usize) -> Result<(usize, usize)> {
        if id >= self.n_cells() {
            return Err(Error::OutOfBounds {
                axis: "cell",
                index: id,
                size: self.n_cells(),
            });
        }
        Ok((id / self.n_lon, id % self.n_lon))
    }

    pub fn lat(&self, lat_idx: usize) -> f64 {
        self.lat_origin + lat_idx as f64 * self.step
    }

    pub fn lon(&self, lon_idx: usize) -> f64 {
        self.lon_origin + lon_idx as f64 * self.step
    }

    /// Longitude wrapped into `[0, 360)`.
    pub fn lon_360(&self, lon_idx: usize) -> f64 {
        self.lon(lon_idx).rem_euclid(360.0)
    }
}

/// Which cells of a grid are valid forecast locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LandMaskRepr", into = "LandMaskRepr")]
pub struct LandMask {
    grid: GridSpec,
    is_land: Vec<bool>,
    locations: Vec<usize>,
    position: Vec<Option<usize>>,
}

#[derive(Serialize, Deserialize)]
struct LandMaskRepr {
    grid: GridSpec,
    is_land: Vec<bool>,
}

impl TryFrom<LandMaskRepr> for LandMask {
    type Error = Error;
    fn try_from(r: LandMaskRepr) -> Result<Self> {
        LandMask::new(r.grid, r.is_land)
    }
}

impl From<LandMask> for LandMaskRepr {
    fn from(m: LandMask) -> Self {
        LandMaskRepr {
            grid: m.grid,
            is_land: m.is_land,
        }
    }
}

impl LandMask {
    pub fn new(grid: GridSpec, is_land: Vec<bool>) -> Result<Self> {
        if is_land.len() != grid.n_cells() {
            return Err(Error::Shape(format!(
                "mask has {} cells, grid has {}",
                is_land.len(),
                grid.n_cells()
            )));
        }
        let locations: Vec<usize> = (0..is_land.len()).filter(|&i| is_land[i]).collect();
        if locations.is_empty() {
            return Err(Error::NoLand);
        }
        let mut position = vec![None; is_land.len()];
        for (k, &id) in locations.iter().enumerate() {
            position[id] = Some(k);
        }
        Ok(Self {
            grid,
            is_land,
            locations,
            position,
        })
    }

    pub fn all_land(grid: GridSpec) -> Self {
        Self::new(grid, vec![true; grid.n_cells()]).expect("non-empty grid")
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn is_land(&self, id: usize) -> bool {
        self.is_land.get(id).copied().unwrap_or(false)
    }

    pub fn cells(&self) -> &[bool] {
        &self.is_land
    }

    /// Flat ids of land cells in row-major order.
    pub fn land_locations(&self) -> &[usize] {
        &self.locations
    }

    /// Number of land cells, `L`.
    pub fn n_land(&self) -> usize {
        self.locations.len()
    }

    /// Position of a cell within [`LandMask::land_locations`], if it is land.
    pub fn land_position(&self, id: usize) -> Option<usize> {
        self.position.get(id).copied().flatten()
    }

    /// True iff every cell of `other` that is land is also land here.
    pub fn contains(&self, other: &LandMask) -> bool {
        self.grid == other.grid && other.locations.iter().all(|&id| self.is_land[id])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    /// Calendar month, 1..=12.
    pub month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidTime(format!("month {month} not in 1..=12")));
        }
        Ok(Self { year, month })
    }

    pub fn succ(self) -> Self {
        if self.month == 12 {
            Self {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Self {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    pub fn plus_months(self, n: usize) -> Self {
        let total = self.year as i64 * 12 + (self.month as i64 - 1) + n as i64;
        Self {
            year: total.div_euclid(12) as i32,
            month: (total.rem_euclid(12) + 1) as u8,
        }
    }
}

/// Consecutive monthly time axis with stored train/validation/test boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeIndex {
    entries: Vec<YearMonth>,
    train_end: usize,
    val_end: usize,
}

impl TimeIndex {
    pub fn new(entries: Vec<YearMonth>, train_end: usize, val_end: usize) -> Result<Self> {
        for w in entries.windows(2) {
            if w[1] != w[0].succ() {
                return Err(Error::InvalidTime(format!(
                    "entries not consecutive months: {:?} then {:?}",
                    w[0], w[1]
                )));
            }
        }
        if train_end == 0 || train_end >= val_end || val_end > entries.len() {
            return Err(Error::InvalidSplit(format!(
                "need 0 < train_end ({train_end}) < val_end ({val_end}) <= {}",
                entries.len()
            )));
        }
        Ok(Self {
            entries,
            train_end,
            val_end,
        })
    }

    pub fn monthly(start: YearMonth, len: usize, train_end: usize, val_end: usize) -> Result<Self> {
        let entries = (0..len).map(|t| start.plus_months(t)).collect();
        Self::new(entries, train_end, val_end)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[YearMonth] {
        &self.entries
    }

    pub fn train_end(&self) -> usize {
        self.train_end
    }

    pub fn val_end(&self) -> usize {
        self.val_end
    }

    /// Calendar month (1..=12) of time step `t`.
    pub fn month_of(&self, t: usize) -> u8 {
        self.entries[t].month
    }
}

/// One gridded field with an explicit missing flag per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialField {
    values: Vec<f64>,
    missing: Vec<bool>,
}

impl SpatialField {
    /// Field with no missing cells. Every value must be finite.
    pub fn complete(values: Vec<f64>) -> Result<Self> {
        let missing = vec![false; values.len()];
        Self::new(values, missing)
    }

    pub fn new(values: Vec<f64>, missing: Vec<bool>) -> Result<Self> {
        if values.len() != missing.len() {
            return Err(Error::Shape(format!(
                "{} values but {} missing flags",
                values.len(),
                missing.len()
            )));
        }
        if let Some(i) = (0..values.len()).find(|&i| !missing[i] && !values[i].is_finite()) {
            return Err(Error::NonFinite(format!("field cell {i}")));
        }
        Ok(Self { values, missing })
    }

    /// Build from optional values; `None` marks a missing cell.
    pub fn from_options(cells: &[Option<f64>]) -> Result<Self> {
        let values = cells.iter().map(|c| c.unwrap_or(0.0)).collect();
        let missing = cells.iter().map(|c| c.is_none()).collect();
        Self::new(values, missing)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<f64> {
        if self.missing[id] {
            None
        } else {
            Some(self.values[id])
        }
    }

    /// Raw values; entries at missing cells carry no meaning.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing(&self) -> &[bool] {
        &self.missing
    }

    pub fn is_missing(&self, id: usize) -> bool {
        self.missing[id]
    }

    pub fn n_missing(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }
}

/// K ensemble members in initialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleField {
    members: Vec<SpatialField>,
}

impl EnsembleField {
    pub fn new(members: Vec<SpatialField>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::Shape("ensemble needs at least one member".into()));
        };
        if members.iter().any(|m| m.len() != first.len()) {
            return Err(Error::Shape("ensemble members differ in size".into()));
        }
        Ok(Self { members })
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[SpatialField] {
        &self.members
    }

    pub fn member(&self, k: usize) -> &SpatialField {
        &self.members[k]
    }

    /// Member values at one cell, in member order; `None` if any is missing.
    pub fn at(&self, id: usize) -> Option<Vec<f64>> {
        self.members.iter().map(|m| m.get(id)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n_lat: usize, n_lon: usize) -> GridSpec {
        GridSpec::new(n_lat, n_lon, 0.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn cell_index_row_major() {
        let g = grid(2, 3);
        assert_eq!(g.cell_index(0, 0).unwrap(), 0);
        assert_eq!(g.cell_index(1, 2).unwrap(), 5);
        let err = g.cell_index(2, 0).unwrap_err();
        assert!(err.to_string().contains("latitude"), "{err}");
        let err = g.cell_index(0, 3).unwrap_err();
        assert!(err.to_string().contains("longitude"), "{err}");
    }

    #[test]
    fn cell_index_inverse_is_identity() {
        let g = grid(5, 7);
        for id in 0..g.n_cells() {
            let (i, j) = g.cell_coords(id).unwrap();
            assert_eq!(g.cell_index(i, j).unwrap(), id);
        }
        assert!(g.cell_coords(35).is_err());
    }

    #[test]
    fn land_locations_ordering() {
        let g = grid(2, 2);
        assert_eq!(LandMask::all_land(g).land_locations(), &[0, 1, 2, 3]);
        let checker = LandMask::new(g, vec![true, false, false, true]).unwrap();
        assert_eq!(checker.land_locations(), &[0, 3]);
        assert_eq!(checker.land_locations(), checker.clone().land_locations());
        assert_eq!(checker.land_position(3), Some(1));
        assert_eq!(checker.land_position(1), None);
        assert!(matches!(LandMask::new(g, vec![false; 4]), Err(Error::NoLand)));
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(GridSpec::new(0, 3, 0.0, 0.0, 1.0).is_err());
        assert!(GridSpec::new(2, 3, 0.0, 0.0, 0.0).is_err());
        assert!(GridSpec::new(2, 3, 0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn time_index_months() {
        let start = YearMonth::new(1985, 1).unwrap();
        let ti = TimeIndex::monthly(start, 432, 249, 312).unwrap();
        assert_eq!(ti.month_of(0), 1);
        assert_eq!(ti.month_of(11), 12);
        assert_eq!(ti.month_of(12), 1);
        assert_eq!(ti.entries()[431], YearMonth::new(2020, 12).unwrap());
        assert!(TimeIndex::monthly(start, 10, 0, 5).is_err());
        assert!(TimeIndex::monthly(start, 10, 5, 5).is_err());
        assert!(TimeIndex::monthly(start, 10, 5, 11).is_err());
        let gap = vec![start, start.plus_months(2)];
        assert!(TimeIndex::new(gap, 1, 2).is_err());
    }

    #[test]
    fn spatial_field_flags() {
        let f = SpatialField::from_options(&[Some(1.0), None, Some(3.0)]).unwrap();
        assert_eq!(f.get(1), None);
        assert_eq!(f.n_missing(), 1);
        assert!(SpatialField::complete(vec![f64::NAN]).is_err());
        // NaN under a missing flag is allowed.
        assert!(SpatialField::new(vec![f64::NAN], vec![true]).is_ok());
    }

    #[test]
    fn ensemble_preserves_order() {
        let a = SpatialField::complete(vec![1.0, 2.0]).unwrap();
        let b = SpatialField::complete(vec![3.0, 4.0]).unwrap();
        let e = EnsembleField::new(vec![b.clone(), a.clone()]).unwrap();
        assert_eq!(e.at(0).unwrap(), vec![3.0, 1.0]);
        assert!(EnsembleField::new(vec![]).is_err());
        let json = serde_json::to_string(&e).unwrap();
        let back: EnsembleField = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
    }
}
