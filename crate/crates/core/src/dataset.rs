//! The time-indexed dataset and read-guarded split views.

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{EnsembleField, GridSpec, LandMask, SpatialField, TimeIndex};

/// Physical target variable; decides the target normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    /// Monthly mean precipitation (mm); min-max normalized.
    Precipitation,
    /// Monthly mean 2 m temperature (°C); standardized.
    Temperature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub units: String,
    pub fields: Vec<SpatialField>,
}

/// Sea-surface temperatures at ocean points, one row per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SstSeries {
    pub n_points: usize,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: GridSpec,
    pub mask: LandMask,
    pub time: TimeIndex,
    pub target_name: String,
    pub target_units: String,
    pub target_kind: TargetKind,
    pub target: Vec<SpatialField>,
    pub ensemble_name: String,
    pub ensemble: Vec<EnsembleField>,
    pub covariates: Vec<Covariate>,
    pub sst: Option<SstSeries>,
    /// Forecast horizon in days.
    pub lead_days: u32,
    pub seed: Option<u64>,
}

impl Dataset {
    /// Check every structural invariant. Constructors and loaders call this.
    pub fn validate(&self) -> Result<()> {
        let n_t = self.time.len();
        let n_cells = self.grid.n_cells();
        if self.mask.grid() != &self.grid {
            return Err(Error::Shape("mask grid differs from dataset grid".into()));
        }
        if self.target.len() != n_t {
            return Err(Error::Shape(format!("target has {} steps, time has {n_t}", self.target.len())));
        }
        if self.ensemble.len() != n_t {
            return Err(Error::Shape(format!("ensemble has {} steps, time has {n_t}", self.ensemble.len())));
        }
        for (t, f) in self.target.iter().enumerate() {
            if f.len() != n_cells {
                return Err(Error::Shape(format!("target field {t} has {} cells", f.len())));
            }
            if let Some(&id) = self.mask.land_locations().iter().find(|&&id| f.is_missing(id)) {
                return Err(Error::Shape(format!("target missing on land cell {id} at step {t}")));
            }
        }
        let k = self.ensemble.first().map(|e| e.k()).unwrap_or(0);
        for (t, e) in self.ensemble.iter().enumerate() {
            if e.k() != k {
                return Err(Error::Shape(format!("ensemble at step {t} has {} members, expected {k}", e.k())));
            }
            if e.members().iter().any(|m| m.len() != n_cells) {
                return Err(Error::Shape(format!("ensemble member field at step {t} has wrong size")));
            }
        }
        for c in &self.covariates {
            if c.fields.len() != n_t {
                return Err(Error::Shape(format!("covariate {} has {} steps", c.name, c.fields.len())));
            }
            if c.fields.iter().any(|f| f.len() != n_cells) {
                return Err(Error::Shape(format!("covariate {} has wrong field size", c.name)));
            }
        }
        if let Some(sst) = &self.sst {
            if sst.rows.len() != n_t || sst.rows.iter().any(|r| r.len() != sst.n_points) {
                return Err(Error::Shape("sst matrix does not match time axis".into()));
            }
        }
        Ok(())
    }

    /// Ensemble size `K`.
    pub fn k(&self) -> usize {
        self.ensemble.first().map(|e| e.k()).unwrap_or(0)
    }

    pub fn n_times(&self) -> usize {
        self.time.len()
    }

    pub fn n_land(&self) -> usize {
        self.mask.n_land()
    }

    /// Target values at land locations for step `t`, in land order.
    pub fn target_land(&self, t: usize) -> Vec<f64> {
        let f = &self.target[t];
        self.mask.land_locations().iter().map(|&id| f.values()[id]).collect()
    }

    pub fn train_range(&self) -> Range<usize> {
        0..self.time.train_end()
    }

    pub fn val_range(&self) -> Range<usize> {
        self.time.train_end()..self.time.val_end()
    }

    pub fn test_range(&self) -> Range<usize> {
        self.time.val_end()..self.time.len()
    }
}

/// Which partition a view belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

/// A window of time steps over a dataset that refuses reads at or after
/// `limit`. Lagged reads before the window are allowed; reads of the future
/// are not. The highest step ever read is recorded for auditing.
#[derive(Debug, Clone)]
pub struct DataView<'a> {
    ds: &'a Dataset,
    times: Range<usize>,
    limit: usize,
    split: Split,
    max_read: Arc<AtomicUsize>,
}

impl<'a> DataView<'a> {
    pub fn full(ds: &'a Dataset) -> Self {
        Self::new(ds, 0..ds.n_times(), ds.n_times(), Split::All)
    }

    fn new(ds: &'a Dataset, times: Range<usize>, limit: usize, split: Split) -> Self {
        Self {
            ds,
            times,
            limit,
            split,
            max_read: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn of_split(ds: &'a Dataset, split: Split) -> Result<Self> {
        let views = split_dataset(ds)?;
        Ok(match split {
            Split::Train => views.train,
            Split::Val => views.val,
            Split::Test => views.test,
            Split::All => DataView::full(ds),
        })
    }

    /// Sub-window `range` of this view; reads are capped at `range.end`.
    /// The read audit is shared with the parent.
    pub fn window(&self, range: Range<usize>) -> Result<Self> {
        if range.start > range.end || range.end > self.limit {
            return Err(Error::InvalidSplit(format!(
                "window {range:?} exceeds readable limit {}",
                self.limit
            )));
        }
        Ok(Self {
            ds: self.ds,
            limit: range.end,
            times: range,
            split: self.split,
            max_read: Arc::clone(&self.max_read),
        })
    }

    pub fn times(&self) -> Range<usize> {
        self.times.clone()
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Highest time step read through this view (or any view sharing its audit).
    pub fn max_read(&self) -> Option<usize> {
        match self.max_read.load(Ordering::Relaxed) {
            0 => None,
            v => Some(v - 1),
        }
    }

    fn touch(&self, t: usize) -> Result<()> {
        if t >= self.limit {
            return Err(Error::Leak { t, limit: self.limit });
        }
        self.max_read.fetch_max(t + 1, Ordering::Relaxed);
        Ok(())
    }

    pub fn grid(&self) -> &'a GridSpec {
        &self.ds.grid
    }

    pub fn mask(&self) -> &'a LandMask {
        &self.ds.mask
    }

    pub fn time(&self) -> &'a TimeIndex {
        &self.ds.time
    }

    pub fn k(&self) -> usize {
        self.ds.k()
    }

    pub fn n_covariates(&self) -> usize {
        self.ds.covariates.len()
    }

    pub fn covariate_names(&self) -> Vec<&'a str> {
        self.ds.covariates.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn sst_points(&self) -> usize {
        self.ds.sst.as_ref().map(|s| s.n_points).unwrap_or(0)
    }

    pub fn target_kind(&self) -> TargetKind {
        self.ds.target_kind
    }

    pub fn month_of(&self, t: usize) -> u8 {
        self.ds.time.month_of(t)
    }

    pub fn target(&self, t: usize) -> Result<&'a SpatialField> {
        self.touch(t)?;
        Ok(&self.ds.target[t])
    }

    pub fn target_land(&self, t: usize) -> Result<Vec<f64>> {
        self.touch(t)?;
        Ok(self.ds.target_land(t))
    }

    pub fn ensemble(&self, t: usize) -> Result<&'a EnsembleField> {
        self.touch(t)?;
        Ok(&self.ds.ensemble[t])
    }

    pub fn covariate(&self, p: usize, t: usize) -> Result<&'a SpatialField> {
        self.touch(t)?;
        Ok(&self.ds.covariates[p].fields[t])
    }

    pub fn sst_row(&self, t: usize) -> Result<Option<&'a [f64]>> {
        self.touch(t)?;
        Ok(self.ds.sst.as_ref().map(|s| s.rows[t].as_slice()))
    }
}

/// Chronological train / validation / test views.
#[derive(Debug, Clone)]
pub struct SplitViews<'a> {
    pub train: DataView<'a>,
    pub val: DataView<'a>,
    pub test: DataView<'a>,
}

/// Partition the dataset at its stored split boundaries.
pub fn split_dataset(ds: &Dataset) -> Result<SplitViews<'_>> {
    let n = ds.n_times();
    let (a, b) = (ds.time.train_end(), ds.time.val_end());
    if a == 0 || a >= b || b >= n {
        return Err(Error::InvalidSplit(format!(
            "boundaries ({a}, {b}) on {n} steps leave an empty partition"
        )));
    }
    Ok(SplitViews {
        train: DataView::new(ds, 0..a, a, Split::Train),
        val: DataView::new(ds, a..b, b, Split::Val),
        test: DataView::new(ds, b..n, n, Split::Test),
    })
}
