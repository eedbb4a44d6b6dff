//! On-disk dataset format.
//!
//! A dataset is a directory holding `manifest.json`, `mask.csv`, one
//! comma-delimited grid file per (variable, time step) and, optionally,
//! `sst.csv` (one row per time step). Grid files hold `n_lat` lines of
//! `n_lon` values in row-major order; missing cells are the literal `NA`.
//! Values are written with 17 significant digits so that a save/load cycle is
//! bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Covariate, Dataset, SstSeries, TargetKind};
use crate::error::{Error, Result};
use crate::grid::{EnsembleField, GridSpec, LandMask, SpatialField, TimeIndex, YearMonth};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const MASK_FILE: &str = "mask.csv";
const SST_FILE: &str = "sst.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariableRole {
    Target,
    EnsembleMember,
    Covariate,
    Sst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableEntry {
    pub name: String,
    pub units: String,
    pub role: VariableRole,
    /// Sub-directory (or file, for SSTs) holding the variable's grids.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: YearMonth,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitBounds {
    pub train_end: usize,
    pub val_end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub grid: GridSpec,
    pub time: TimeRange,
    pub split: SplitBounds,
    pub target_kind: TargetKind,
    pub lead_days: u32,
    /// Ensemble name; members are the `ensemble-member` entries in order.
    pub ensemble_name: String,
    pub variables: Vec<VariableEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Generator parameters when the dataset is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

impl DatasetManifest {
    /// Check catalog invariants: unique names, exactly one target, at most
    /// one SST matrix, at least one ensemble member.
    pub fn validate(&self) -> Result<()> {
        let mut names: Vec<&str> = self.variables.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Catalog(format!("duplicate variable name '{}'", w[0])));
        }
        let count = |role| self.variables.iter().filter(|v| v.role == role).count();
        match count(VariableRole::Target) {
            1 => {}
            n => return Err(Error::Catalog(format!("expected exactly one target, found {n}"))),
        }
        if count(VariableRole::EnsembleMember) == 0 {
            return Err(Error::Catalog("no ensemble members".into()));
        }
        if count(VariableRole::Sst) > 1 {
            return Err(Error::Catalog("more than one sst matrix".into()));
        }
        Ok(())
    }
}

fn fmt_value(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("write to string");
}

fn grid_to_text(field: &SpatialField, n_lon: usize) -> String {
    let mut out = String::with_capacity(field.len() * 24);
    for (id, (&v, &m)) in field.values().iter().zip(field.missing()).enumerate() {
        if m {
            out.push_str("NA");
        } else {
            fmt_value(&mut out, v);
        }
        out.push(if (id + 1) % n_lon == 0 { '\n' } else { ',' });
    }
    out
}

fn parse_grid(path: &Path, text: &str, grid: &GridSpec) -> Result<SpatialField> {
    let mut values = Vec::with_capacity(grid.n_cells());
    let mut missing = Vec::with_capacity(grid.n_cells());
    let mut rows = 0;
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if rows == grid.n_lat {
            return Err(Error::Parse {
                path: path.into(),
                line: line_no + 1,
                detail: format!("more than {} rows", grid.n_lat),
            });
        }
        let mut cols = 0;
        for tok in line.split(',') {
            let tok = tok.trim();
            if tok == "NA" {
                values.push(f64::NAN);
                missing.push(true);
            } else {
                let v: f64 = tok.parse().map_err(|_| Error::Parse {
                    path: path.into(),
                    line: line_no + 1,
                    detail: format!("bad number '{tok}'"),
                })?;
                values.push(v);
                missing.push(false);
            }
            cols += 1;
        }
        if cols < grid.n_lon {
            return Err(Error::Truncated {
                path: path.into(),
                detail: format!("row {} has {cols} of {} values", rows + 1, grid.n_lon),
            });
        }
        if cols > grid.n_lon {
            return Err(Error::Parse {
                path: path.into(),
                line: line_no + 1,
                detail: format!("{cols} values, expected {}", grid.n_lon),
            });
        }
        rows += 1;
    }
    if rows < grid.n_lat {
        return Err(Error::Truncated {
            path: path.into(),
            detail: format!("{rows} of {} rows", grid.n_lat),
        });
    }
    SpatialField::new(values, missing)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Truncated {
                path: path.into(),
                detail: "file missing".into(),
            }
        } else {
            Error::io(path, e)
        }
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn step_file(dir: &Path, var_path: &str, t: usize) -> PathBuf {
    dir.join(var_path).join(format!("{t:05}.csv"))
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Manifest describing `ds` (the catalog a save would write).
pub fn manifest_for(ds: &Dataset, generator: Option<serde_json::Value>) -> DatasetManifest {
    let mut variables = vec![VariableEntry {
        name: ds.target_name.clone(),
        units: ds.target_units.clone(),
        role: VariableRole::Target,
        path: format!("target_{}", sanitize(&ds.target_name)),
    }];
    for k in 0..ds.k() {
        variables.push(VariableEntry {
            name: format!("{}_m{:02}", ds.ensemble_name, k + 1),
            units: ds.target_units.clone(),
            role: VariableRole::EnsembleMember,
            path: format!("member_{:02}", k + 1),
        });
    }
    for c in &ds.covariates {
        variables.push(VariableEntry {
            name: c.name.clone(),
            units: c.units.clone(),
            role: VariableRole::Covariate,
            path: format!("cov_{}", sanitize(&c.name)),
        });
    }
    if ds.sst.is_some() {
        variables.push(VariableEntry {
            name: "sst".into(),
            units: "degC".into(),
            role: VariableRole::Sst,
            path: SST_FILE.into(),
        });
    }
    DatasetManifest {
        format_version: FORMAT_VERSION,
        grid: ds.grid,
        time: TimeRange {
            start: ds.time.entries()[0],
            len: ds.time.len(),
        },
        split: SplitBounds {
            train_end: ds.time.train_end(),
            val_end: ds.time.val_end(),
        },
        target_kind: ds.target_kind,
        lead_days: ds.lead_days,
        ensemble_name: ds.ensemble_name.clone(),
        variables,
        seed: ds.seed,
        generator,
    }
}

/// Write `ds` under `dir` (created if needed).
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    save_dataset_with(ds, dir, None)
}

pub fn save_dataset_with(ds: &Dataset, dir: &Path, generator: Option<serde_json::Value>) -> Result<()> {
    ds.validate()?;
    let manifest = manifest_for(ds, generator);
    manifest.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n_lon = ds.grid.n_lon;

    let mask_text = {
        let mut s = String::new();
        for (id, &land) in ds.mask.cells().iter().enumerate() {
            s.push(if land { '1' } else { '0' });
            s.push(if (id + 1) % n_lon == 0 { '\n' } else { ',' });
        }
        s
    };
    write_text(&dir.join(MASK_FILE), &mask_text)?;

    let mut member = 0;
    let mut cov = 0;
    for var in &manifest.variables {
        let fields: Vec<&SpatialField> = match var.role {
            VariableRole::Target => ds.target.iter().collect(),
            VariableRole::EnsembleMember => {
                member += 1;
                ds.ensemble.iter().map(|e| e.member(member - 1)).collect()
            }
            VariableRole::Covariate => {
                cov += 1;
                ds.covariates[cov - 1].fields.iter().collect()
            }
            VariableRole::Sst => continue,
        };
        let sub = dir.join(&var.path);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for t in 0..ds.n_times() {
            write_text(&step_file(dir, &var.path, t), &grid_to_text(fields[t], n_lon))?;
        }
    }

    if let Some(sst) = &ds.sst {
        let mut s = String::new();
        for row in &sst.rows {
            for (i, &v) in row.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                fmt_value(&mut s, v);
            }
            s.push('\n');
        }
        write_text(&dir.join(SST_FILE), &s)?;
    }

    let json = serde_json::to_string_pretty(&manifest)?;
    write_text(&dir.join(MANIFEST_FILE), &(json + "\n"))
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = read_text(&path)?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let version = raw.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let manifest: DatasetManifest = serde_json::from_value(raw)?;
    manifest.validate()?;
    Ok(manifest)
}

/// Hex SHA-256 of the manifest file bytes.
pub fn manifest_hash(dir: &Path) -> Result<String> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = load_manifest(dir)?;
    let grid = GridSpec::new(
        manifest.grid.n_lat,
        manifest.grid.n_lon,
        manifest.grid.lat_origin,
        manifest.grid.lon_origin,
        manifest.grid.step,
    )?;
    let n_t = manifest.time.len;

    let mask_path = dir.join(MASK_FILE);
    let mask_field = parse_grid(&mask_path, &read_text(&mask_path)?, &grid)?;
    let mut is_land = Vec::with_capacity(grid.n_cells());
    for &v in mask_field.values() {
        is_land.push(match v {
            x if x == 1.0 => true,
            x if x == 0.0 => false,
            other => {
                return Err(Error::Parse {
                    path: mask_path,
                    line: 0,
                    detail: format!("mask value {other} is neither 0 nor 1"),
                })
            }
        });
    }
    let mask = LandMask::new(grid, is_land)?;
    let time = TimeIndex::monthly(manifest.time.start, n_t, manifest.split.train_end, manifest.split.val_end)?;

    let read_series = |var: &VariableEntry| -> Result<Vec<SpatialField>> {
        (0..n_t)
            .map(|t| {
                let p = step_file(dir, &var.path, t);
                parse_grid(&p, &read_text(&p)?, &grid)
            })
            .collect()
    };

    let mut target = None;
    let mut target_meta = (String::new(), String::new());
    let mut members: Vec<Vec<SpatialField>> = Vec::new();
    let mut covariates = Vec::new();
    let mut sst = None;
    for var in &manifest.variables {
        match var.role {
            VariableRole::Target => {
                target = Some(read_series(var)?);
                target_meta = (var.name.clone(), var.units.clone());
            }
            VariableRole::EnsembleMember => members.push(read_series(var)?),
            VariableRole::Covariate => covariates.push(Covariate {
                name: var.name.clone(),
                units: var.units.clone(),
                fields: read_series(var)?,
            }),
            VariableRole::Sst => {
                let p = dir.join(&var.path);
                sst = Some(parse_sst(&p, &read_text(&p)?, n_t)?);
            }
        }
    }
    let target = target.ok_or_else(|| Error::Catalog("no target".into()))?;

    let mut ensemble = Vec::with_capacity(n_t);
    for t in 0..n_t {
        ensemble.push(EnsembleField::new(members.iter().map(|m| m[t].clone()).collect())?);
    }

    let ds = Dataset {
        grid,
        mask,
        time,
        target_name: target_meta.0,
        target_units: target_meta.1,
        target_kind: manifest.target_kind,
        target,
        ensemble_name: manifest.ensemble_name.clone(),
        ensemble,
        covariates,
        sst,
        lead_days: manifest.lead_days,
        seed: manifest.seed,
    };
    ds.validate()?;
    Ok(ds)
}

fn parse_sst(path: &Path, text: &str, n_t: usize) -> Result<SstSeries> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_t);
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| Error::Parse {
                    path: path.into(),
                    line: line_no + 1,
                    detail: format!("bad number '{tok}'"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if row.len() < first.len() {
                return Err(Error::Truncated {
                    path: path.into(),
                    detail: format!("line {} has {} of {} values", line_no + 1, row.len(), first.len()),
                });
            }
            if row.len() > first.len() {
                return Err(Error::Parse {
                    path: path.into(),
                    line: line_no + 1,
                    detail: "ragged sst row".into(),
                });
            }
        }
        rows.push(row);
    }
    if rows.len() < n_t {
        return Err(Error::Truncated {
            path: path.into(),
            detail: format!("{} of {n_t} sst rows", rows.len()),
        });
    }
    if rows.len() > n_t {
        return Err(Error::Parse {
            path: path.into(),
            line: n_t + 1,
            detail: "more sst rows than time steps".into(),
        });
    }
    let n_points = rows[0].len();
    Ok(SstSeries { n_points, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;

    pub(crate) fn tiny_dataset() -> Dataset {
        let grid = GridSpec::new(2, 2, 30.0, 250.0, 1.0).unwrap();
        let mask = LandMask::new(grid, vec![true, true, false, true]).unwrap();
        let time = TimeIndex::monthly(YearMonth::new(2000, 1).unwrap(), 3, 1, 2).unwrap();
        let field = |t: usize, off: f64| {
            SpatialField::from_options(&[
                Some(t as f64 + off + 0.1),
                Some(1.0 / 3.0 + off),
                None,
                Some(-2.5e-7 * (t + 1) as f64),
            ])
            .unwrap()
        };
        let mut target = Vec::new();
        let mut ensemble = Vec::new();
        let mut cov = Vec::new();
        for t in 0..3 {
            target.push(field(t, 0.0));
            ensemble.push(EnsembleField::new(vec![field(t, 1.0), field(t, -1.0), field(t, 0.5)]).unwrap());
            cov.push(SpatialField::complete(vec![t as f64, 1e300, -0.0, std::f64::consts::PI]).unwrap());
        }
        Dataset {
            grid,
            mask,
            time,
            target_name: "precip".into(),
            target_units: "mm".into(),
            target_kind: TargetKind::Precipitation,
            target,
            ensemble_name: "synth".into(),
            ensemble,
            covariates: vec![Covariate {
                name: "rhum".into(),
                units: "%".into(),
                fields: cov,
            }],
            sst: Some(SstSeries {
                n_points: 2,
                rows: vec![vec![0.1, 0.2], vec![0.3, 0.4], vec![f64::MIN_POSITIVE, 7.0]],
            }),
            lead_days: 14,
            seed: None,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        // NaN at missing cells defeats PartialEq; compare bitwise where present.
        assert_eq!(back.k(), ds.k());
        for t in 0..3 {
            for id in 0..4 {
                assert_eq!(back.target[t].get(id).map(f64::to_bits), ds.target[t].get(id).map(f64::to_bits));
                for k in 0..3 {
                    assert_eq!(
                        back.ensemble[t].member(k).get(id).map(f64::to_bits),
                        ds.ensemble[t].member(k).get(id).map(f64::to_bits)
                    );
                }
                assert_eq!(
                    back.covariates[0].fields[t].values()[id].to_bits(),
                    ds.covariates[0].fields[t].values()[id].to_bits()
                );
            }
        }
        assert_eq!(back.sst, ds.sst);
        assert_eq!(back.mask, ds.mask);
        assert_eq!(back.time, ds.time);
        assert_eq!(back.covariates[0].name, "rhum");
    }

    #[test]
    fn two_targets_rejected() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let mut m = load_manifest(dir.path()).unwrap();
        let mut extra = m.variables[0].clone();
        extra.name = "second".into();
        m.variables.push(extra);
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Catalog(_))));
    }

    #[test]
    fn version_mismatch_and_truncation_are_distinct() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();

        let trunc = dir.path().join("member_02").join("00001.csv");
        let text = fs::read_to_string(&trunc).unwrap();
        fs::write(&trunc, text.lines().next().unwrap()).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Truncated { .. })));
        fs::write(&trunc, text).unwrap();
        load_dataset(dir.path()).unwrap();

        let mut m = load_manifest(dir.path()).unwrap();
        m.format_version = 99;
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::VersionMismatch { found: 99, expected: 1 })
        ));
    }

    #[test]
    fn stored_split_survives_round_trip() {
        // 432 monthly steps with 249 train and 63 validation steps.
        let grid = GridSpec::new(1, 1, 0.0, 0.0, 1.0).unwrap();
        let time = TimeIndex::monthly(YearMonth::new(1985, 1).unwrap(), 432, 249, 312).unwrap();
        let one = |v: f64| SpatialField::complete(vec![v]).unwrap();
        let ds = Dataset {
            grid,
            mask: LandMask::all_land(grid),
            time,
            target_name: "tmp2m".into(),
            target_units: "degC".into(),
            target_kind: TargetKind::Temperature,
            target: (0..432).map(|t| one(t as f64)).collect(),
            ensemble_name: "e".into(),
            ensemble: (0..432).map(|t| EnsembleField::new(vec![one(t as f64)]).unwrap()).collect(),
            covariates: vec![],
            sst: None,
            lead_days: 14,
            seed: Some(3),
        };
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.time.val_end() - back.time.train_end(), 63);
        let views = crate::dataset::split_dataset(&back).unwrap();
        assert_eq!(views.train.times().len(), 249);
        assert_eq!(views.val.times().len(), 63);
        assert_eq!(views.test.times().len(), 120);
        assert_eq!(views.test.split(), Split::Test);
    }
}

