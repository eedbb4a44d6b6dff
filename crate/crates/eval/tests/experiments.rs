use ssf_core::preprocess::features::{EnsembleMode, FeatureCatalog, FeatureConfig, FeatureGroup, FeaturePipeline, Paradigm};
use ssf_core::synth::{synth_generate, SynthConfig};
use ssf_core::dataset::Covariate;
use ssf_core::{DataView, Dataset, EnsembleField, SpatialField, Split};
use ssf_eval::experiments::{
    ablation_run, bootstrap_experiment, box_region, cumulative_groups, fit_on_train, grouped_feature_importance, region_metrics, BootstrapConfig, Trainer, Variant,
};
use ssf_eval::heatmap::{export_heatmap, read_heatmap};
use ssf_eval::report::{evaluate, evaluate_model, Detrending, EvalOptions, EvalReport, SE_CAVEAT};
use ssf_models::forecaster::LandSeries;
use ssf_models::{Forecaster, ModelKind, ModelSpec, Task};

fn small(drift: f64) -> Dataset {
    let cfg = SynthConfig {
        n_lat: 8,
        n_lon: 12,
        months: 132,
        train_end: 96,
        val_end: 114,
        sst_points: 16,
        drift,
        ..SynthConfig::default()
    };
    synth_generate(&cfg).unwrap()
}

fn rf_spec() -> ModelSpec {
    let mut spec = ModelSpec::new(ModelKind::Rf, Task::Regression);
    spec.seed = 5;
    spec.hyper.forest.n_trees = 8;
    spec.hyper.forest.min_samples_leaf = 5;
    spec
}

#[test]
fn reports_carry_metrics_provenance_and_caveat() {
    let ds = small(0.0);
    let hist = fit_on_train(&ModelSpec::new(ModelKind::Hist, Task::Regression), &ds).unwrap();
    let opts = EvalOptions {
        seed: Some(1),
        manifest_hash: Some("abc".into()),
        trained_on: Some("train".into()),
        ..EvalOptions::default()
    };
    let report = evaluate_model(&hist, &ds, Split::Test, &opts).unwrap();
    assert_eq!(report.model_id, "hist");
    assert!(report.metrics.contains_key("mse") && report.metrics.contains_key("r2"));
    assert_eq!(report.caveat, SE_CAVEAT);
    assert_eq!(report.manifest_hash.as_deref(), Some("abc"));
    assert!(report.notes.iter().any(|n| n.contains("Test")));
    assert_eq!(report.first_step, 114);
    assert_eq!(report.detrending, Some(Detrending::Observed));

    // Aggregates recompute from the exported grid.
    let back = EvalReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
    let values: Vec<f64> = back.metrics["mse"].values.iter().flatten().copied().collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt();
    let agg = back.metrics["mse"].aggregates.as_ref().unwrap();
    assert!((agg.mean - mean).abs() < 1e-12);
    assert!((agg.se - sd / (values.len() as f64).sqrt()).abs() < 1e-12);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r2.csv");
    export_heatmap(&report.metrics["r2"].values, &ds.mask, &path).unwrap();
    let rows = read_heatmap(&path).unwrap();
    let cell = ds.mask.land_locations()[3];
    assert_eq!(rows[cell / ds.grid.n_lon][cell % ds.grid.n_lon], report.metrics["r2"].values[3]);
}

#[test]
fn ensemble_average_is_detrended_with_its_own_climatology() {
    let ds = small(0.0);
    let ens = fit_on_train(&ModelSpec::new(ModelKind::Ensmean, Task::Regression), &ds).unwrap();
    let auto = evaluate(&ens, &ds, Split::Val, &EvalOptions::default()).unwrap();
    assert_eq!(auto.detrending, Some(Detrending::Model));
    let observed = evaluate(
        &ens,
        &ds,
        Split::Val,
        &EvalOptions {
            detrending: Detrending::Observed,
            ..EvalOptions::default()
        },
    )
    .unwrap();
    // Member biases inflate the error unless the model climatology absorbs them.
    assert!(auto.mean("r2").unwrap() > observed.mean("r2").unwrap());
    assert_eq!(auto.metrics["mse"], observed.metrics["mse"]);
}

#[test]
fn oracle_debiasing_reduces_ensemble_error_under_drift() {
    let ds = small(1.5);
    let ens = fit_on_train(&ModelSpec::new(ModelKind::Ensmean, Task::Regression), &ds).unwrap();
    let raw = evaluate(&ens, &ds, Split::Test, &EvalOptions::default()).unwrap();
    let debiased = evaluate(
        &ens,
        &ds,
        Split::Test,
        &EvalOptions {
            oracle_debias: true,
            ..EvalOptions::default()
        },
    )
    .unwrap();
    assert!(debiased.oracle_debiased);
    assert!(debiased.mean("mse").unwrap() < raw.mean("mse").unwrap());
}

#[test]
fn tercile_and_quantile_reports_use_their_metrics() {
    let ds = small(0.0);
    let hist = fit_on_train(&ModelSpec::new(ModelKind::Hist, Task::Tercile), &ds).unwrap();
    let r = evaluate(&hist, &ds, Split::Val, &EvalOptions::default()).unwrap();
    let acc = r.mean("accuracy").unwrap();
    assert!((0.0..=100.0).contains(&acc));
    let q = fit_on_train(&ModelSpec::new(ModelKind::Ensmean, Task::Quantile { alpha: 0.9 }), &ds).unwrap();
    let r = evaluate(&q, &ds, Split::Val, &EvalOptions::default()).unwrap();
    assert!(r.mean("pinball").unwrap() > 0.0);
    assert!(evaluate(&q, &ds, Split::Val, &EvalOptions { oracle_debias: true, ..EvalOptions::default() }).is_ok());
}

#[test]
fn regions_restrict_the_aggregates() {
    let ds = small(0.0);
    let hist = fit_on_train(&ModelSpec::new(ModelKind::Hist, Task::Regression), &ds).unwrap();
    let report = evaluate(&hist, &ds, Split::Val, &EvalOptions::default()).unwrap();
    let all = region_metrics(&report, ds.mask.land_locations()).unwrap();
    assert_eq!(all["mse"], *report.metrics["mse"].aggregates.as_ref().unwrap());
    let cell = ds.mask.land_locations()[4];
    let single = region_metrics(&report, &[cell]).unwrap();
    assert_eq!(single["mse"].mean, report.metrics["mse"].values[4].unwrap());
    assert!(region_metrics(&report, &[]).is_err());
    let sea = (0..ds.grid.n_cells()).find(|&c| !ds.mask.is_land(c)).unwrap();
    assert!(region_metrics(&report, &[sea]).is_err());
    let corner = box_region(&ds, 0..4, 0..6);
    assert!(corner.iter().all(|&c| ds.mask.is_land(c) && c / 12 < 4 && c % 12 < 6));
}

#[test]
fn drifted_region_hurts_the_ensemble_average_more_than_the_forest() {
    let ds = small(1.5);
    let region = box_region(&ds, 0..8, 0..6);
    let r2 = |model: &ssf_models::AnyForecaster, split| {
        let report = evaluate(model, &ds, split, &EvalOptions::default()).unwrap();
        region_metrics(&report, &region).unwrap()["r2"].mean
    };
    let ens = fit_on_train(&ModelSpec::new(ModelKind::Ensmean, Task::Regression), &ds).unwrap();
    let rf = fit_on_train(&rf_spec(), &ds).unwrap();
    let ens_drop = r2(&ens, Split::Train) - r2(&ens, Split::Test);
    let rf_drop = r2(&rf, Split::Train) - r2(&rf, Split::Test);
    assert!(ens_drop > 0.0, "ensemble drop {ens_drop}");
    assert!(rf_drop < ens_drop, "forest drop {rf_drop} vs ensemble {ens_drop}");
}

#[derive(Clone)]
struct Constant;

impl Forecaster for Constant {
    fn id(&self) -> String {
        "constant".into()
    }
    fn task(&self) -> Task {
        Task::Regression
    }
    fn fit(&mut self, _: &DataView, _: &[usize]) -> ssf_models::Result<()> {
        Ok(())
    }
    fn predict(&self, view: &DataView, times: &[usize]) -> ssf_models::Result<LandSeries> {
        Ok(times.iter().map(|_| vec![1.0; view.mask().n_land()]).collect())
    }
}

struct ConstantTrainer;

impl Trainer for ConstantTrainer {
    fn id(&self) -> String {
        "constant".into()
    }
    fn build(&self, _: u64) -> ssf_models::Result<Box<dyn Forecaster>> {
        Ok(Box::new(Constant))
    }
}

struct Broken;

impl Trainer for Broken {
    fn id(&self) -> String {
        "broken".into()
    }
    fn build(&self, _: u64) -> ssf_models::Result<Box<dyn Forecaster>> {
        Err(ssf_models::Error::Config("no such model".into()))
    }
}

#[test]
fn bootstrap_runs_are_reproducible_and_failures_recorded() {
    let ds = small(0.0);
    let lr = ModelSpec::new(ModelKind::Lr, Task::Regression);
    let config = BootstrapConfig {
        runs: 3,
        sample_size: 40,
        seed: 11,
    };
    let trainers: [&dyn Trainer; 3] = [&lr, &ConstantTrainer, &Broken];
    let result = bootstrap_experiment(&trainers, &ds, &config).unwrap();
    assert_eq!(result.draws.len(), 3);
    assert!(result.draws.iter().all(|d| d.len() == 40 && d.iter().all(|&t| (24..96).contains(&t))));
    assert_eq!(result.models[0].scores.len(), 3);
    assert_eq!(result.models[0].metric, "mse");
    assert!(result.models[0].scores.windows(2).any(|w| w[0] != w[1]));
    let constant: Vec<f64> = result.models[1].scores.iter().map(|s| s.unwrap()).collect();
    assert!(constant.iter().all(|&s| s == constant[0]));
    assert_eq!(result.models[2].failures.len(), 3);
    assert!(result.models[2].scores.iter().all(Option::is_none));

    let single = BootstrapConfig { runs: 1, ..config };
    let a = bootstrap_experiment(&[&lr], &ds, &single).unwrap();
    let b = bootstrap_experiment(&[&lr], &ds, &single).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.models[0].scores[0], result.models[0].scores[0]);
}

#[test]
fn ablation_variants_swap_only_their_columns() {
    let names = ["a", "b", "c", "d"];
    let full = FeatureConfig::full(Paradigm::Conditional);
    let base = FeatureCatalog::build(&full, Paradigm::Conditional, 6, &names).unwrap();
    for v in Variant::ALL {
        let cat = FeatureCatalog::build(&v.apply(full), Paradigm::Conditional, 6, &names).unwrap();
        let changed = match v {
            Variant::FullEnsemble | Variant::Pe => None,
            Variant::EnsembleMeanOnly | Variant::SortedEnsemble => Some(FeatureGroup::Ensemble),
            Variant::Latlon | Variant::NoLocation => Some(FeatureGroup::Location),
        };
        for group in [FeatureGroup::Ensemble, FeatureGroup::Lags, FeatureGroup::Covariates, FeatureGroup::Sst, FeatureGroup::Location] {
            let pick = |c: &FeatureCatalog| -> Vec<String> { c.group_indices(group).iter().map(|&i| c.names()[i].to_string()).collect() };
            if Some(group) == changed {
                assert_ne!(pick(&cat), pick(&base), "{v} {group:?}");
            } else {
                assert_eq!(pick(&cat), pick(&base), "{v} {group:?}");
            }
        }
        assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
    }
    let mut independent = rf_spec();
    independent.paradigm = Paradigm::Independent;
    independent.features = FeatureConfig::full(Paradigm::Independent);
    assert!(Variant::Pe.spec(&independent).is_err());
    assert!(Variant::SortedEnsemble.spec(&independent).is_ok());
}

#[test]
fn sorted_members_forget_their_order() {
    let mut ds = synth_generate(&SynthConfig {
        n_lat: 4,
        n_lon: 4,
        months: 40,
        train_end: 30,
        val_end: 35,
        sst_points: 8,
        ..SynthConfig::default()
    }
    .with_members(2))
    .unwrap();
    let cell = ds.mask.land_locations()[0];
    for (t, pair) in [(30, [3.0, 5.0]), (31, [5.0, 3.0])] {
        let members: Vec<SpatialField> = ds.ensemble[t]
            .members()
            .iter()
            .zip(pair)
            .map(|(m, v)| {
                let mut values = m.values().to_vec();
                values[cell] = v;
                SpatialField::new(values, m.missing().to_vec()).unwrap()
            })
            .collect();
        ds.ensemble[t] = EnsembleField::new(members).unwrap();
    }
    let view = DataView::full(&ds);
    let sorted = Variant::SortedEnsemble.apply(FeatureConfig::ensemble_only());
    let p = FeaturePipeline::fit(&view, sorted, Paradigm::Conditional).unwrap();
    assert_eq!(p.rows_at(&view, 30).unwrap()[0], Some(vec![3.0, 5.0]));
    assert_eq!(p.rows_at(&view, 31).unwrap()[0], Some(vec![3.0, 5.0]));
    let mean = Variant::EnsembleMeanOnly.apply(FeatureConfig::ensemble_only());
    assert_eq!(mean.ensemble, EnsembleMode::Mean);
    let p = FeaturePipeline::fit(&view, mean, Paradigm::Conditional).unwrap();
    assert_eq!(p.rows_at(&view, 31).unwrap()[0], Some(vec![ssf_core::baselines::predict_ensemble_mean(&[5.0, 3.0])]));
}

#[test]
fn ablation_reports_are_tagged() {
    let ds = small(0.0);
    let reports = ablation_run(Variant::SortedEnsemble, &ModelSpec::new(ModelKind::Lr, Task::Regression), &ds, &[Split::Val, Split::Test], &EvalOptions::default()).unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|r| r.variant.as_deref() == Some("sorted-ensemble") && r.catalog_hash.is_some()));
    assert_eq!(reports[1].split, Split::Test);
}

#[test]
fn grouped_importance_reports_each_cumulative_catalog() {
    let ds = small(0.0);
    let lr = ModelSpec::new(ModelKind::Lr, Task::Regression);
    let groups = cumulative_groups(Paradigm::Conditional);
    let reports = grouped_feature_importance(&lr, &groups, &ds).unwrap();
    assert_eq!(reports.len(), 4);
    let hashes: std::collections::HashSet<_> = reports.iter().map(|r| r.catalog_hash.clone().unwrap()).collect();
    assert_eq!(hashes.len(), 4);
    assert!(reports.iter().all(|r| r.split == Split::Val));
    assert_eq!(reports[3].variant.as_deref(), Some("+sst"));
}

#[test]
fn an_all_zero_feature_group_changes_little() {
    let ds = small(0.0);
    let mut padded = ds.clone();
    padded.covariates.push(Covariate {
        name: "zero".into(),
        units: "1".into(),
        fields: ds.target.iter().map(|_| SpatialField::complete(vec![0.0; ds.grid.n_cells()]).unwrap()).collect(),
    });
    let groups = vec![("+covariates".to_string(), FeatureConfig { sst_pcs: 0, ..FeatureConfig::full(Paradigm::Conditional) })];
    let spec = rf_spec();
    let a = grouped_feature_importance(&spec, &groups, &ds).unwrap()[0].mean("mse").unwrap();
    let b = grouped_feature_importance(&spec, &groups, &padded).unwrap()[0].mean("mse").unwrap();
    assert!((a - b).abs() <= 0.02 * a, "{a} vs {b}");
}
