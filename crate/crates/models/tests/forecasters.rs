use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use ssf_core::preprocess::features::{LocationMode, Paradigm};
use ssf_core::synth::{synth_generate, SynthConfig};
use ssf_core::{split_dataset, DataView, Dataset};
use ssf_models::forecaster::{stack_predict, stack_train, truth_land, LandSeries};
use ssf_models::stack::StackerParams;
use ssf_models::{AnyForecaster, Error, Forecaster, ModelKind, ModelSpec, Result, Task};

fn small_dataset(k: usize, seed: u64) -> Dataset {
    let cfg = SynthConfig {
        n_lat: 8,
        n_lon: 12,
        months: 132,
        train_end: 96,
        val_end: 114,
        sst_points: 16,
        seed,
        ..SynthConfig::default()
    }
    .with_members(k);
    synth_generate(&cfg).unwrap()
}

fn quick_spec(model: ModelKind, task: Task) -> ModelSpec {
    let mut spec = ModelSpec::new(model, task);
    spec.seed = 3;
    spec.hyper.forest.n_trees = 8;
    spec.hyper.quantile.max_epochs = 300;
    spec.hyper.logistic.max_iter = 300;
    spec.hyper.convnet.base_channels = 4;
    spec.hyper.convnet.train.epochs = 3;
    spec.hyper.convnet.train.lr = 5e-3;
    spec.hyper.convnet.quantile_epochs = 2;
    spec.hyper.stacker.max_epochs = 20;
    spec.hyper.stacker.hidden = 16;
    spec
}

fn tasks() -> [Task; 3] {
    [Task::Regression, Task::quantile(0.9).unwrap(), Task::Tercile]
}

fn mse(pred: &LandSeries, view: &DataView, times: &[usize]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (row, &t) in pred.iter().zip(times) {
        for (p, y) in row.iter().zip(truth_land(view, t).unwrap()) {
            sum += (p - y).powi(2);
            n += 1;
        }
    }
    sum / n as f64
}

#[test]
fn every_supported_combination_fits_without_reading_ahead() {
    let ds = small_dataset(4, 11);
    let split = split_dataset(&ds).unwrap();
    let train_times: Vec<usize> = split.train.times().collect();
    let test_times: Vec<usize> = split.test.times().collect();
    for task in tasks() {
        for model in ModelKind::ALL.into_iter().filter(|m| m.supports(task)) {
            let mut f = quick_spec(model, task).build().unwrap();
            f.fit(&split.train, &train_times).unwrap_or_else(|e| panic!("{model} {task}: {e}"));
            assert!(split.train.max_read().unwrap() < ds.time.train_end(), "{model} {task} read past training");
            let pred = f.predict(&split.test, &test_times).unwrap();
            assert_eq!(pred.len(), test_times.len());
            for row in &pred {
                assert_eq!(row.len(), ds.n_land());
                assert!(row.iter().all(|v| v.is_finite()), "{model} {task}");
                if task == Task::Tercile {
                    assert!(row.iter().all(|v| [-1.0, 0.0, 1.0].contains(v)));
                }
            }
            if task == Task::Tercile {
                for row in f.predict_proba(&split.test, &test_times).unwrap() {
                    for p in row {
                        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{model}: {p:?}");
                    }
                }
            } else {
                assert!(f.predict_proba(&split.test, &test_times).is_err());
            }
        }
    }
}

#[test]
fn serialized_models_predict_identically() {
    let ds = small_dataset(4, 12);
    let split = split_dataset(&ds).unwrap();
    let train_times: Vec<usize> = split.train.times().collect();
    let val_times: Vec<usize> = split.val.times().collect();
    for (model, task) in [
        (ModelKind::Rf, Task::Regression),
        (ModelKind::Qrf, Task::quantile(0.5).unwrap()),
        (ModelKind::Logistic, Task::Tercile),
        (ModelKind::Convnet, Task::Regression),
        (ModelKind::Stack, Task::Regression),
    ] {
        let mut f = quick_spec(model, task).build().unwrap();
        f.fit(&split.train, &train_times).unwrap();
        let text = f.to_json().unwrap();
        let back = AnyForecaster::from_json(&text, &ds.mask).unwrap();
        assert_eq!(back.predict(&split.val, &val_times).unwrap(), f.predict(&split.val, &val_times).unwrap(), "{model}");
        assert_eq!(back.catalog_hash(), f.catalog_hash());
        back.check_compatible(&split.val).unwrap();
    }
}

#[test]
fn refitting_is_deterministic() {
    let ds = small_dataset(4, 13);
    let split = split_dataset(&ds).unwrap();
    let times: Vec<usize> = split.train.times().collect();
    for model in [ModelKind::Rf, ModelKind::Convnet] {
        let spec = quick_spec(model, Task::Regression);
        let mut a = spec.build().unwrap();
        let mut b = spec.build().unwrap();
        a.fit(&split.train, &times).unwrap();
        b.fit(&split.train, &times).unwrap();
        b.fit(&split.train, &times).unwrap();
        assert_eq!(a, b, "{model}");
    }
}

#[test]
fn catalog_mismatch_is_refused() {
    let ds = small_dataset(4, 14);
    let other = small_dataset(3, 14);
    let split = split_dataset(&ds).unwrap();
    let times: Vec<usize> = split.train.times().collect();
    let mut f = quick_spec(ModelKind::Lr, Task::Regression).build().unwrap();
    f.fit(&split.train, &times).unwrap();
    assert!(f.check_compatible(&DataView::full(&other)).is_err());
    assert!(f.predict(&DataView::full(&other), &[70]).is_err());
    let hist = quick_spec(ModelKind::Hist, Task::Regression).build().unwrap();
    assert_eq!(hist.catalog_hash(), None);
}

#[test]
fn independent_paradigm_fits_one_model_per_location() {
    let ds = small_dataset(4, 15);
    let split = split_dataset(&ds).unwrap();
    let times: Vec<usize> = split.train.times().collect();
    let mut spec = quick_spec(ModelKind::Lr, Task::Regression);
    spec.paradigm = Paradigm::Independent;
    spec.features.location = LocationMode::None;
    let mut f = spec.build().unwrap();
    f.fit(&split.train, &times).unwrap();
    let AnyForecaster::Tabular(t) = &f else { panic!("tabular expected") };
    assert!(t.failures.is_empty());
    let pred = f.predict(&split.val, &split.val.times().collect::<Vec<_>>()).unwrap();
    assert!(pred.iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn ensemble_only_linear_model_beats_raw_ensemble_average() {
    let ds = small_dataset(4, 16);
    let split = split_dataset(&ds).unwrap();
    let times: Vec<usize> = split.train.times().collect();
    let val: Vec<usize> = split.val.times().collect();
    let mut spec = quick_spec(ModelKind::Lr, Task::Regression);
    spec.features = ssf_core::preprocess::features::FeatureConfig::ensemble_only();
    let mut lr = spec.build().unwrap();
    lr.fit(&split.train, &times).unwrap();
    let mut ens = quick_spec(ModelKind::Ensmean, Task::Regression).build().unwrap();
    ens.fit(&split.train, &times).unwrap();
    let lr_mse = mse(&lr.predict(&split.val, &val).unwrap(), &split.val, &val);
    let ens_mse = mse(&ens.predict(&split.val, &val).unwrap(), &split.val, &val);
    assert!(lr_mse < ens_mse, "{lr_mse} vs {ens_mse}");
}

/// Truth plus small seeded noise.
struct Oracle {
    noise: f64,
}

/// Seeded noise unrelated to the target.
struct Noise {
    seed: u64,
}

/// The ensemble average, for stacking identical bases.
struct Average;

fn noise_at(seed: u64, t: usize, loc: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((t as u64) << 20) ^ loc as u64);
    rng.sample(StandardNormal)
}

impl Forecaster for Oracle {
    fn id(&self) -> String {
        "oracle".into()
    }
    fn task(&self) -> Task {
        Task::Regression
    }
    fn fit(&mut self, _: &DataView, _: &[usize]) -> Result<()> {
        Ok(())
    }
    fn predict(&self, view: &DataView, times: &[usize]) -> Result<LandSeries> {
        times
            .iter()
            .map(|&t| Ok(truth_land(view, t)?.iter().enumerate().map(|(l, y)| y + self.noise * noise_at(99, t, l)).collect()))
            .collect()
    }
}

impl Forecaster for Noise {
    fn id(&self) -> String {
        "noise".into()
    }
    fn task(&self) -> Task {
        Task::Regression
    }
    fn fit(&mut self, _: &DataView, _: &[usize]) -> Result<()> {
        Ok(())
    }
    fn predict(&self, view: &DataView, times: &[usize]) -> Result<LandSeries> {
        Ok(times.iter().map(|&t| (0..view.mask().n_land()).map(|l| 3.0 * noise_at(self.seed, t, l)).collect()).collect())
    }
}

impl Forecaster for Average {
    fn id(&self) -> String {
        "average".into()
    }
    fn task(&self) -> Task {
        Task::Regression
    }
    fn fit(&mut self, _: &DataView, _: &[usize]) -> Result<()> {
        Ok(())
    }
    fn predict(&self, view: &DataView, times: &[usize]) -> Result<LandSeries> {
        times
            .iter()
            .map(|&t| {
                let ens = view.ensemble(t)?;
                Ok(view.mask().land_locations().iter().map(|&c| ens.at(c).map(|m| m.iter().sum::<f64>() / m.len() as f64).unwrap_or(f64::NAN)).collect())
            })
            .collect()
    }
}

enum Toy {
    Oracle(Oracle),
    Noise(Noise),
    Average(Average),
}

impl Toy {
    fn inner(&self) -> &dyn Forecaster {
        match self {
            Toy::Oracle(f) => f,
            Toy::Noise(f) => f,
            Toy::Average(f) => f,
        }
    }
}

impl Forecaster for Toy {
    fn id(&self) -> String {
        self.inner().id()
    }
    fn task(&self) -> Task {
        Task::Regression
    }
    fn fit(&mut self, _: &DataView, _: &[usize]) -> Result<()> {
        Ok(())
    }
    fn predict(&self, view: &DataView, times: &[usize]) -> Result<LandSeries> {
        self.inner().predict(view, times)
    }
}

fn stacker_params() -> StackerParams {
    StackerParams::default()
}

#[test]
fn stack_follows_the_oracle_base() {
    let ds = synth_generate(&SynthConfig::default()).unwrap();
    let full = DataView::full(&ds);
    let train: Vec<usize> = (0..ds.time.train_end()).collect();
    let test: Vec<usize> = ds.test_range().collect();
    let mut bases = vec![Toy::Oracle(Oracle { noise: 0.3 }), Toy::Noise(Noise { seed: 5 })];
    let stacker = stack_train(&mut bases, &full, &train, Task::Regression, &stacker_params()).unwrap();
    let stacked = mse(&stack_predict(&bases, &stacker, &full, &test).unwrap(), &full, &test);
    let oracle = mse(&bases[0].predict(&full, &test).unwrap(), &full, &test);
    assert!(stacked <= 1.05 * oracle, "stacked {stacked} oracle {oracle}");
}

#[test]
fn stack_of_identical_bases_reproduces_them() {
    let ds = small_dataset(4, 18);
    let full = DataView::full(&ds);
    let train: Vec<usize> = (0..ds.time.train_end()).collect();
    let test: Vec<usize> = ds.test_range().collect();
    let mut bases = vec![Toy::Average(Average), Toy::Average(Average)];
    let stacker = stack_train(&mut bases, &full, &train, Task::Regression, &stacker_params()).unwrap();
    let stacked = mse(&stack_predict(&bases, &stacker, &full, &test).unwrap(), &full, &test);
    let base = mse(&bases[0].predict(&full, &test).unwrap(), &full, &test);
    assert!(stacked <= 1.05 * base, "stacked {stacked} base {base}");
}

#[test]
fn stacking_preconditions() {
    let ds = small_dataset(4, 19);
    let full = DataView::full(&ds);
    let mut one = vec![Toy::Average(Average)];
    assert!(matches!(stack_train(&mut one, &full, &(0..60).collect::<Vec<_>>(), Task::Regression, &stacker_params()), Err(Error::Config(_))));
    let mut two = vec![Toy::Average(Average), Toy::Noise(Noise { seed: 1 })];
    assert!(stack_train(&mut two, &full, &[24, 25, 26], Task::Regression, &stacker_params()).is_err());
}

#[test]
fn stack_bases_never_see_the_second_half_before_the_stacker() {
    struct Recorder {
        limits: std::sync::Mutex<Vec<(usize, usize)>>,
    }
    impl Forecaster for Recorder {
        fn id(&self) -> String {
            "recorder".into()
        }
        fn task(&self) -> Task {
            Task::Regression
        }
        fn fit(&mut self, view: &DataView, times: &[usize]) -> Result<()> {
            self.limits.lock().unwrap().push((view.limit(), *times.iter().max().unwrap()));
            Ok(())
        }
        fn predict(&self, view: &DataView, times: &[usize]) -> Result<LandSeries> {
            Average.predict(view, times)
        }
    }
    let ds = small_dataset(4, 20);
    let full = DataView::full(&ds);
    let train: Vec<usize> = (0..64).collect();
    let mut bases = vec![
        Recorder { limits: Default::default() },
        Recorder { limits: Default::default() },
    ];
    stack_train(&mut bases, &full, &train, Task::Regression, &stacker_params()).unwrap();
    for b in &bases {
        let limits = b.limits.lock().unwrap().clone();
        assert_eq!(limits.len(), 2);
        // Eligible steps 24..64, cut at 44.
        assert_eq!(limits[0], (44, 43));
        assert_eq!(limits[1].1, 63);
    }
}
