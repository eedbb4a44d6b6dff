//! Feature catalogs and assembly for the three spatial paradigms.
//!
//! * independent: one design matrix per land location, no location features;
//! * conditional: one pooled matrix over all (t, location) pairs;
//! * spatial: one channel stack per time step over the full grid.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{DataView, TargetKind};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, LandMask, SpatialField};
use crate::preprocess::encoding::{location_encoding, DEFAULT_PE_DIM};
use crate::preprocess::fill::FillPlan;
use crate::preprocess::lags::{AVAILABILITY_LAG, LAGS, MAX_LAG};
use crate::preprocess::normalize::{FeatureScaling, NormalizationState, ScalingMode};
use crate::preprocess::pca::PcaModel;

pub const DEFAULT_SST_PCS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Independent,
    Conditional,
    Spatial,
}

impl FromStr for Paradigm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(Paradigm::Independent),
            "conditional" => Ok(Paradigm::Conditional),
            "spatial" => Ok(Paradigm::Spatial),
            other => Err(Error::Config(format!("unknown paradigm '{other}'"))),
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Paradigm::Independent => "independent",
            Paradigm::Conditional => "conditional",
            Paradigm::Spatial => "spatial",
        })
    }
}

/// How ensemble members enter the features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    /// All K members in initialization order.
    Full,
    /// Only the ensemble average.
    Mean,
    /// Members sorted ascending per sample, discarding member identity.
    Sorted,
    None,
}

/// How the location of a sample is described.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocationMode {
    /// Sinusoidal positional encoding of longitude then latitude.
    Pe,
    /// Raw latitude and longitude.
    LatLon,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub ensemble: EnsembleMode,
    pub location: LocationMode,
    /// Encoding width per coordinate.
    pub pe_dim: usize,
    pub lags: bool,
    pub covariates: bool,
    pub sst_pcs: usize,
}

impl FeatureConfig {
    /// Every feature family; location is encoded except under the independent
    /// paradigm, where it would be constant.
    pub fn full(paradigm: Paradigm) -> Self {
        Self {
            ensemble: EnsembleMode::Full,
            location: if paradigm == Paradigm::Independent { LocationMode::None } else { LocationMode::Pe },
            pe_dim: DEFAULT_PE_DIM,
            lags: true,
            covariates: true,
            sst_pcs: DEFAULT_SST_PCS,
        }
    }

    /// Ensemble members only.
    pub fn ensemble_only() -> Self {
        Self {
            ensemble: EnsembleMode::Full,
            location: LocationMode::None,
            pe_dim: DEFAULT_PE_DIM,
            lags: false,
            covariates: false,
            sst_pcs: 0,
        }
    }

    pub fn validate(&self, paradigm: Paradigm) -> Result<()> {
        if paradigm == Paradigm::Independent && self.location != LocationMode::None {
            return Err(Error::Config(
                "location features are constant per model under the independent paradigm".into(),
            ));
        }
        if self.location == LocationMode::Pe && (self.pe_dim < 2 || self.pe_dim % 2 != 0) {
            return Err(Error::OddDimension(self.pe_dim));
        }
        if self.ensemble == EnsembleMode::None && !self.lags && !self.covariates && self.sst_pcs == 0 && self.location == LocationMode::None {
            return Err(Error::Config("feature configuration selects no features".into()));
        }
        Ok(())
    }
}

/// Coarse families used for grouped importance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Ensemble,
    Lags,
    Covariates,
    Sst,
    Location,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureSource {
    Member { index: usize },
    EnsembleMean,
    SortedMember { rank: usize },
    LaggedTarget { lag: usize },
    Covariate { index: usize, name: String },
    SstPc { component: usize },
    PeLongitude { dim: usize },
    PeLatitude { dim: usize },
    Latitude,
    Longitude,
}

impl FeatureSource {
    pub fn group(&self) -> FeatureGroup {
        match self {
            FeatureSource::Member { .. } | FeatureSource::EnsembleMean | FeatureSource::SortedMember { .. } => FeatureGroup::Ensemble,
            FeatureSource::LaggedTarget { .. } => FeatureGroup::Lags,
            FeatureSource::Covariate { .. } => FeatureGroup::Covariates,
            FeatureSource::SstPc { .. } => FeatureGroup::Sst,
            FeatureSource::PeLongitude { .. } | FeatureSource::PeLatitude { .. } | FeatureSource::Latitude | FeatureSource::Longitude => {
                FeatureGroup::Location
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub index: usize,
    pub name: String,
    pub source: FeatureSource,
}

/// Ordered list of feature columns (or channels, for the spatial paradigm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCatalog {
    pub paradigm: Paradigm,
    pub columns: Vec<FeatureColumn>,
}

impl FeatureCatalog {
    pub fn build(config: &FeatureConfig, paradigm: Paradigm, k: usize, covariate_names: &[&str]) -> Result<Self> {
        config.validate(paradigm)?;
        let mut sources = Vec::new();
        let mut names = Vec::new();
        let mut push = |name: String, source: FeatureSource| {
            names.push(name);
            sources.push(source);
        };
        match config.ensemble {
            EnsembleMode::Full => (0..k).for_each(|i| push(format!("member_{i:02}"), FeatureSource::Member { index: i })),
            EnsembleMode::Mean => push("ens_mean".into(), FeatureSource::EnsembleMean),
            EnsembleMode::Sorted => (0..k).for_each(|r| push(format!("sorted_{r:02}"), FeatureSource::SortedMember { rank: r })),
            EnsembleMode::None => {}
        }
        if config.lags {
            for lag in LAGS {
                push(format!("lag_{lag}"), FeatureSource::LaggedTarget { lag });
            }
        }
        if config.covariates {
            for (index, name) in covariate_names.iter().enumerate() {
                push(
                    format!("cov_{name}"),
                    FeatureSource::Covariate {
                        index,
                        name: name.to_string(),
                    },
                );
            }
        }
        for component in 0..config.sst_pcs {
            push(format!("sst_pc_{}", component + 1), FeatureSource::SstPc { component });
        }
        match config.location {
            LocationMode::Pe => {
                (0..config.pe_dim).for_each(|dim| push(format!("pe_lon_{dim}"), FeatureSource::PeLongitude { dim }));
                (0..config.pe_dim).for_each(|dim| push(format!("pe_lat_{dim}"), FeatureSource::PeLatitude { dim }));
            }
            LocationMode::LatLon => {
                push("lat".into(), FeatureSource::Latitude);
                push("lon".into(), FeatureSource::Longitude);
            }
            LocationMode::None => {}
        }
        let columns = names
            .into_iter()
            .zip(sources)
            .enumerate()
            .map(|(index, (name, source))| FeatureColumn { index, name, source })
            .collect();
        Ok(Self { paradigm, columns })
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Column indices of one feature group.
    pub fn group_indices(&self, group: FeatureGroup) -> Vec<usize> {
        self.columns.iter().filter(|c| c.source.group() == group).map(|c| c.index).collect()
    }

    /// SHA-256 of the catalog's canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("catalog serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Identifies one tabular sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub t: usize,
    /// Position in the land-location list.
    pub loc: usize,
}

/// Row-major design matrix with one [`RowKey`] per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub n_cols: usize,
    pub data: Vec<f64>,
    pub keys: Vec<RowKey>,
}

impl FeatureMatrix {
    pub fn empty(n_cols: usize) -> Self {
        Self {
            n_cols,
            data: Vec::new(),
            keys: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n_cols.max(1)).take(self.keys.len())
    }

    pub fn push_row(&mut self, key: RowKey, row: &[f64]) {
        debug_assert_eq!(row.len(), self.n_cols);
        self.data.extend_from_slice(row);
        self.keys.push(key);
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Keep only the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        let mut out = FeatureMatrix {
            n_cols: cols.len(),
            data: Vec::with_capacity(self.n_rows() * cols.len()),
            keys: self.keys.clone(),
        };
        for r in self.rows() {
            out.data.extend(cols.iter().map(|&c| r[c]));
        }
        out
    }
}

/// Channel stack for one time step: `channels × n_lat × n_lon`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub t: usize,
    pub n_channels: usize,
    pub n_lat: usize,
    pub n_lon: usize,
    pub data: Vec<f64>,
}

impl FeatureStack {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.n_lat * self.n_lon;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Scaling for the target variable: min-max for precipitation, standardization
/// for temperature.
pub fn target_scaling_mode(kind: TargetKind) -> ScalingMode {
    match kind {
        TargetKind::Precipitation => ScalingMode::MinMax,
        TargetKind::Temperature => ScalingMode::Standardize,
    }
}

/// Feature pipeline fitted on a training view: the catalog, the SST PCA and
/// optionally an input normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub config: FeatureConfig,
    pub catalog: FeatureCatalog,
    pca: Option<PcaModel>,
    normalization: Option<NormalizationState>,
    /// Location codes per land position, in catalog order.
    #[serde(skip)]
    codes: Vec<Vec<f64>>,
}

impl FeaturePipeline {
    /// Fit on the readable part of `view`. The SST PCA sees only rows the view
    /// may read.
    pub fn fit(view: &DataView, config: FeatureConfig, paradigm: Paradigm) -> Result<Self> {
        let catalog = FeatureCatalog::build(&config, paradigm, view.k(), &view.covariate_names())?;
        let pca = if config.sst_pcs > 0 {
            if view.sst_points() == 0 {
                return Err(Error::Config(format!("{} SST components requested but the dataset has no SSTs", config.sst_pcs)));
            }
            let mut rows = Vec::with_capacity(view.limit());
            for t in 0..view.limit() {
                rows.push(view.sst_row(t)?.expect("sst present").to_vec());
            }
            Some(PcaModel::fit(&rows, config.sst_pcs)?)
        } else {
            None
        };
        let mut pipeline = Self {
            config,
            catalog,
            pca,
            normalization: None,
            codes: Vec::new(),
        };
        pipeline.prepare(view.mask())?;
        Ok(pipeline)
    }

    /// Rebuild derived state after deserialization.
    pub fn prepare(&mut self, mask: &LandMask) -> Result<()> {
        let grid = mask.grid();
        self.codes = mask
            .land_locations()
            .iter()
            .map(|&cell| location_code(&self.catalog, self.config.pe_dim, grid, cell))
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn paradigm(&self) -> Paradigm {
        self.catalog.paradigm
    }

    pub fn n_features(&self) -> usize {
        self.catalog.len()
    }

    pub fn pca(&self) -> Option<&PcaModel> {
        self.pca.as_ref()
    }

    pub fn normalization(&self) -> Option<&NormalizationState> {
        self.normalization.as_ref()
    }

    /// Time steps of `times` that can form samples.
    pub fn eligible_times(&self, times: impl IntoIterator<Item = usize>) -> Vec<usize> {
        times.into_iter().filter(|&t| t >= MAX_LAG).collect()
    }

    fn sst_scores(&self, view: &DataView, t: usize) -> Result<Vec<f64>> {
        match &self.pca {
            Some(pca) => {
                let row = view.sst_row(t - AVAILABILITY_LAG)?.ok_or_else(|| Error::Config("dataset has no SSTs".into()))?;
                pca.transform(row)
            }
            None => Ok(Vec::new()),
        }
    }

    /// Feature rows for every land location at `t`; `None` where an input is missing.
    pub fn rows_at(&self, view: &DataView, t: usize) -> Result<Vec<Option<Vec<f64>>>> {
        if t < MAX_LAG {
            return Err(Error::InsufficientHistory { t, needed: MAX_LAG });
        }
        if self.codes.len() != view.mask().n_land() {
            return Err(Error::Unfitted("feature pipeline location codes"));
        }
        let ens = view.ensemble(t)?;
        let lagged: Vec<&SpatialField> = if self.config.lags {
            LAGS.iter().map(|lag| view.target(t - lag)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let covs: Vec<&SpatialField> = if self.config.covariates {
            (0..view.n_covariates()).map(|p| view.covariate(p, t - AVAILABILITY_LAG)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let scores = self.sst_scores(view, t)?;
        let mut out = Vec::with_capacity(self.codes.len());
        for (l, &cell) in view.mask().land_locations().iter().enumerate() {
            out.push(self.row_for(ens.at(cell), &lagged, &covs, &scores, &self.codes[l], cell));
        }
        Ok(out)
    }

    fn row_for(
        &self,
        members: Option<Vec<f64>>,
        lagged: &[&SpatialField],
        covs: &[&SpatialField],
        scores: &[f64],
        code: &[f64],
        cell: usize,
    ) -> Option<Vec<f64>> {
        let mut row = Vec::with_capacity(self.n_features());
        match self.config.ensemble {
            EnsembleMode::Full => row.extend(members?),
            EnsembleMode::Mean => {
                let m = members?;
                row.push(m.iter().sum::<f64>() / m.len() as f64);
            }
            EnsembleMode::Sorted => {
                let mut m = members?;
                m.sort_by(f64::total_cmp);
                row.extend(m);
            }
            EnsembleMode::None => {}
        }
        for f in lagged {
            row.push(f.get(cell)?);
        }
        for f in covs {
            row.push(f.get(cell)?);
        }
        row.extend_from_slice(scores);
        row.extend_from_slice(code);
        Some(row)
    }

    /// Pooled matrix over the eligible `times` and all land locations,
    /// t-major. Samples with a missing input are skipped.
    pub fn assemble_pooled(&self, view: &DataView, times: &[usize], normalize: bool) -> Result<FeatureMatrix> {
        if normalize && self.normalization.is_none() {
            return Err(Error::Unfitted("normalization"));
        }
        let mut m = FeatureMatrix::empty(self.n_features());
        for t in self.eligible_times(times.iter().copied()) {
            for (loc, row) in self.rows_at(view, t)?.into_iter().enumerate() {
                if let Some(row) = row {
                    m.push_row(RowKey { t, loc }, &row);
                }
            }
        }
        if normalize {
            self.normalization.as_ref().expect("checked").apply(&mut m.data)?;
        }
        Ok(m)
    }

    /// One matrix per land location.
    pub fn assemble_per_location(&self, view: &DataView, times: &[usize], normalize: bool) -> Result<Vec<FeatureMatrix>> {
        let pooled = self.assemble_pooled(view, times, normalize)?;
        let mut out: Vec<FeatureMatrix> = (0..view.mask().n_land()).map(|_| FeatureMatrix::empty(pooled.n_cols)).collect();
        for (i, key) in pooled.keys.iter().enumerate() {
            out[key.loc].push_row(*key, pooled.row(i));
        }
        Ok(out)
    }

    /// Channel stack at `t`; missing cells are filled from their nearest
    /// valid neighbour.
    pub fn stack_at(&self, view: &DataView, t: usize, normalize: bool) -> Result<FeatureStack> {
        if normalize && self.normalization.is_none() {
            return Err(Error::Unfitted("normalization"));
        }
        if t < MAX_LAG {
            return Err(Error::InsufficientHistory { t, needed: MAX_LAG });
        }
        let grid = view.grid();
        let n = grid.n_cells();
        let mut plans = PlanCache::new(grid);
        let ens = view.ensemble(t)?;
        let scores = self.sst_scores(view, t)?;
        let mut sorted: Option<Vec<Vec<f64>>> = None;
        let mut data = Vec::with_capacity(self.n_features() * n);
        for col in &self.catalog.columns {
            match &col.source {
                FeatureSource::Member { index } => data.extend(plans.fill(ens.member(*index))?),
                FeatureSource::EnsembleMean => {
                    let opts: Vec<Option<f64>> = (0..n).map(|c| ens.at(c).map(|m| m.iter().sum::<f64>() / m.len() as f64)).collect();
                    data.extend(plans.fill(&SpatialField::from_options(&opts)?)?);
                }
                FeatureSource::SortedMember { rank } => {
                    let fields = match &sorted {
                        Some(f) => f,
                        None => {
                            let per_cell: Vec<Option<Vec<f64>>> = (0..n)
                                .map(|c| {
                                    ens.at(c).map(|mut m| {
                                        m.sort_by(f64::total_cmp);
                                        m
                                    })
                                })
                                .collect();
                            let mut fields = Vec::with_capacity(ens.k());
                            for r in 0..ens.k() {
                                let opts: Vec<Option<f64>> = per_cell.iter().map(|m| m.as_ref().map(|v| v[r])).collect();
                                fields.push(plans.fill(&SpatialField::from_options(&opts)?)?);
                            }
                            sorted.insert(fields)
                        }
                    };
                    data.extend_from_slice(&fields[*rank]);
                }
                FeatureSource::LaggedTarget { lag } => data.extend(plans.fill(view.target(t - lag)?)?),
                FeatureSource::Covariate { index, .. } => data.extend(plans.fill(view.covariate(*index, t - AVAILABILITY_LAG)?)?),
                FeatureSource::SstPc { component } => data.extend(std::iter::repeat(scores[*component]).take(n)),
                FeatureSource::PeLongitude { .. } | FeatureSource::PeLatitude { .. } | FeatureSource::Latitude | FeatureSource::Longitude => {
                    for cell in 0..n {
                        let code = location_code(&self.catalog, self.config.pe_dim, grid, cell)?;
                        data.push(code[location_offset(&self.catalog, col.index)]);
                    }
                }
            }
        }
        let mut stack = FeatureStack {
            t,
            n_channels: self.n_features(),
            n_lat: grid.n_lat,
            n_lon: grid.n_lon,
            data,
        };
        if normalize {
            let norm = self.normalization.as_ref().expect("checked");
            for c in 0..stack.n_channels {
                let s = norm.scaling(c);
                for v in &mut stack.data[c * n..(c + 1) * n] {
                    *v = s.apply(*v);
                }
            }
        }
        Ok(stack)
    }

    /// Min-max scaling fitted on the training inputs. For the spatial paradigm
    /// each channel is scaled over all cells and time steps; for tabular
    /// paradigms each column over all rows.
    pub fn fit_normalization(&mut self, view: &DataView, times: &[usize]) -> Result<()> {
        let n_f = self.n_features();
        let modes = vec![ScalingMode::MinMax; n_f];
        let state = match self.paradigm() {
            Paradigm::Spatial => {
                let mut per_channel: Vec<Vec<f64>> = vec![Vec::new(); n_f];
                for t in self.eligible_times(times.iter().copied()) {
                    let s = self.stack_at(view, t, false)?;
                    for (c, values) in per_channel.iter_mut().enumerate() {
                        values.extend_from_slice(s.channel(c));
                    }
                }
                let scalings = per_channel
                    .iter()
                    .map(|v| FeatureScaling::fit(v, ScalingMode::MinMax))
                    .collect::<Result<Vec<_>>>()?;
                NormalizationState::from_scalings(scalings)
            }
            _ => {
                let m = self.assemble_pooled(view, times, false)?;
                NormalizationState::fit(&m.data, n_f, &modes)?
            }
        };
        self.normalization = Some(state);
        Ok(())
    }
}

/// Location features of one cell, in catalog order.
fn location_code(catalog: &FeatureCatalog, pe_dim: usize, grid: &GridSpec, cell: usize) -> Result<Vec<f64>> {
    let mut code = Vec::new();
    let mut pe: Option<Vec<f64>> = None;
    let (i, j) = grid.cell_coords(cell)?;
    for col in &catalog.columns {
        match col.source {
            FeatureSource::PeLongitude { dim } => {
                let v = match &pe {
                    Some(v) => v,
                    None => pe.insert(location_encoding(grid, cell, pe_dim)?),
                };
                code.push(v[dim]);
            }
            FeatureSource::PeLatitude { dim } => {
                let v = match &pe {
                    Some(v) => v,
                    None => pe.insert(location_encoding(grid, cell, pe_dim)?),
                };
                code.push(v[pe_dim + dim]);
            }
            FeatureSource::Latitude => code.push(grid.lat(i)),
            FeatureSource::Longitude => code.push(grid.lon_360(j)),
            _ => {}
        }
    }
    Ok(code)
}

/// Position of a location column inside [`location_code`]'s output.
fn location_offset(catalog: &FeatureCatalog, column: usize) -> usize {
    catalog.columns[..column].iter().filter(|c| c.source.group() == FeatureGroup::Location).count()
}

/// Fill plans keyed by missing pattern.
struct PlanCache<'g> {
    grid: &'g GridSpec,
    plans: HashMap<Vec<bool>, FillPlan>,
}

impl<'g> PlanCache<'g> {
    fn new(grid: &'g GridSpec) -> Self {
        Self {
            grid,
            plans: HashMap::new(),
        }
    }

    fn fill(&mut self, field: &SpatialField) -> Result<Vec<f64>> {
        if field.n_missing() == 0 {
            return Ok(field.values().to_vec());
        }
        if !self.plans.contains_key(field.missing()) {
            let plan = FillPlan::new(self.grid, field.missing())?;
            self.plans.insert(field.missing().to_vec(), plan);
        }
        Ok(self.plans[field.missing()].apply(field.values()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{split_dataset, DataView};
    use crate::synth::{synth_generate, SynthConfig};

    fn small() -> crate::Dataset {
        let cfg = SynthConfig {
            n_lat: 6,
            n_lon: 8,
            months: 60,
            train_end: 40,
            val_end: 50,
            sst_points: 16,
            ..SynthConfig::default()
        };
        synth_generate(&cfg).unwrap()
    }

    #[test]
    fn wide_catalog_has_65_features() {
        let names = ["a", "b", "c", "d"];
        let cat = FeatureCatalog::build(&FeatureConfig::full(Paradigm::Conditional), Paradigm::Conditional, 24, &names).unwrap();
        assert_eq!(cat.len(), 65);
        assert_eq!(cat.group_indices(FeatureGroup::Location).len(), 24);
        assert_eq!(cat.group_indices(FeatureGroup::Ensemble), (0..24).collect::<Vec<_>>());
    }

    #[test]
    fn independent_paradigm_has_no_location_features() {
        let cat = FeatureCatalog::build(&FeatureConfig::full(Paradigm::Independent), Paradigm::Independent, 24, &["a", "b", "c", "d"]).unwrap();
        assert_eq!(cat.len(), 41);
        assert!(cat.group_indices(FeatureGroup::Location).is_empty());
        let mut bad = FeatureConfig::full(Paradigm::Conditional);
        assert!(bad.validate(Paradigm::Independent).is_err());
        bad.pe_dim = 5;
        assert!(bad.validate(Paradigm::Conditional).is_err());
    }

    #[test]
    fn catalog_json_round_trip_keeps_hash() {
        let cat = FeatureCatalog::build(&FeatureConfig::full(Paradigm::Spatial), Paradigm::Spatial, 3, &["x"]).unwrap();
        let back = FeatureCatalog::from_json(&cat.to_json()).unwrap();
        assert_eq!(back, cat);
        assert_eq!(back.hash(), cat.hash());
        assert!(cat.to_json().contains("\"index\": 0"));
    }

    #[test]
    fn pooled_rows_are_t_times_l() {
        let ds = small();
        let views = split_dataset(&ds).unwrap();
        let p = FeaturePipeline::fit(&views.train, FeatureConfig::full(Paradigm::Conditional), Paradigm::Conditional).unwrap();
        let times: Vec<usize> = views.train.times().collect();
        let m = p.assemble_pooled(&views.train, &times, false).unwrap();
        assert_eq!(m.n_rows(), (40 - MAX_LAG) * ds.n_land());
        assert_eq!(m.n_cols, 8 + 5 + 4 + 8 + 24);
        assert_eq!(views.train.max_read(), Some(39));
        assert!(matches!(p.assemble_pooled(&views.train, &times, true), Err(Error::Unfitted(_))));

        // Lag and member columns carry the values they name.
        let key = m.keys[7];
        let cell = ds.mask.land_locations()[key.loc];
        assert_eq!(m.row(7)[2], ds.ensemble[key.t].member(2).values()[cell]);
        assert_eq!(m.row(7)[8 + 3], ds.target[key.t - 12].values()[cell]);
        assert_eq!(m.row(7)[8 + 5], ds.covariates[0].fields[key.t - 2].values()[cell]);
    }

    #[test]
    fn sorted_and_mean_variants() {
        let ds = small();
        let view = DataView::full(&ds);
        let mut cfg = FeatureConfig::ensemble_only();
        cfg.ensemble = EnsembleMode::Sorted;
        let p = FeaturePipeline::fit(&view, cfg, Paradigm::Conditional).unwrap();
        let m = p.assemble_pooled(&view, &[30], false).unwrap();
        assert!(m.rows().all(|r| r.windows(2).all(|w| w[0] <= w[1])));
        cfg.ensemble = EnsembleMode::Mean;
        let p = FeaturePipeline::fit(&view, cfg, Paradigm::Conditional).unwrap();
        let m = p.assemble_pooled(&view, &[30], false).unwrap();
        let cell = ds.mask.land_locations()[0];
        let members = ds.ensemble[30].at(cell).unwrap();
        assert!((m.row(0)[0] - members.iter().sum::<f64>() / 8.0).abs() < 1e-12);
    }

    #[test]
    fn early_samples_are_skipped() {
        let ds = small();
        let view = DataView::full(&ds);
        let p = FeaturePipeline::fit(&view, FeatureConfig::full(Paradigm::Independent), Paradigm::Independent).unwrap();
        let mats = p.assemble_per_location(&view, &(0..30).collect::<Vec<_>>(), false).unwrap();
        assert_eq!(mats.len(), ds.n_land());
        assert!(mats.iter().all(|m| m.n_rows() == 30 - MAX_LAG && m.keys.iter().all(|k| k.t >= MAX_LAG)));
    }

    #[test]
    fn stacks_fill_sea_and_normalize_channelwise() {
        let ds = small();
        let views = split_dataset(&ds).unwrap();
        let mut p = FeaturePipeline::fit(&views.train, FeatureConfig::full(Paradigm::Spatial), Paradigm::Spatial).unwrap();
        let train: Vec<usize> = views.train.times().collect();
        assert!(p.stack_at(&views.train, 30, true).is_err());
        p.fit_normalization(&views.train, &train).unwrap();
        let s = p.stack_at(&views.train, 30, true).unwrap();
        assert_eq!(s.n_channels, p.n_features());
        assert!(s.data.iter().all(|v| v.is_finite() && (-1e-12..=1.0 + 1e-12).contains(v)));
        // SST channels are constant in space; PE channels are constant in time.
        let sst = p.catalog.group_indices(FeatureGroup::Sst)[0];
        assert!(s.channel(sst).iter().all(|v| *v == s.channel(sst)[0]));
        let pe = p.catalog.group_indices(FeatureGroup::Location)[3];
        let later = p.stack_at(&views.train, 35, true).unwrap();
        assert_eq!(s.channel(pe), later.channel(pe));
        // Test-period stacks may leave the unit interval.
        assert!(views.test.times().all(|t| p.stack_at(&views.test, t, true).is_ok()));
        assert!(p.stack_at(&views.train, 45, false).is_err());
    }

    #[test]
    fn pca_sees_only_training_rows() {
        let ds = small();
        let views = split_dataset(&ds).unwrap();
        let p = FeaturePipeline::fit(&views.train, FeatureConfig::full(Paradigm::Conditional), Paradigm::Conditional).unwrap();
        let rows: Vec<Vec<f64>> = ds.sst.as_ref().unwrap().rows[..40].to_vec();
        assert_eq!(p.pca().unwrap(), &PcaModel::fit(&rows, 8).unwrap());
    }
}
