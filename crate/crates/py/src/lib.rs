//! Python bindings: thin wrappers over the core crate, keeping file-based
//! datasets as the exchange format so the Python side never reimplements
//! parsing or validation.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use epikick::data::Dataset;
use epikick::model::{Checkpoint, ModelConfig, ModelParams};
use epikick::numerics::Rng;
use epikick::synth::{write_synthetic_dataset, RestrictionPattern, SynthOpts};
use epikick::train::{evaluate_rmse, train, TrainConfig};

fn err(e: epikick::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Discrete SIR trajectory as (s, i, r) tuples, horizon+1 entries.
#[pyfunction]
fn sir_series(beta: f64, gamma: f64, i0: f64, horizon: usize) -> PyResult<Vec<(f64, f64, f64)>> {
    let params = epikick::sir::SirParams::new(beta, gamma).map_err(err)?;
    let init = epikick::sir::SirState::new(1.0 - i0, i0, 0.0).map_err(err)?;
    let traj = epikick::sir::sir_series(init, params, horizon).map_err(err)?;
    Ok(traj.iter().map(|s| (s.s, s.i, s.r)).collect())
}

/// Write a synthetic dataset (cases/restrictions/demographics CSVs) into `dir`.
#[pyfunction]
#[pyo3(signature = (dir, regions=20, horizon=150, population=1_000_000, beta=(0.2, 0.5),
                    gamma=(0.05, 0.2), i0=1e-3, noise_sd=0.0, restriction="middle", seed=0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    dir: PathBuf,
    regions: usize,
    horizon: usize,
    population: u64,
    beta: (f64, f64),
    gamma: (f64, f64),
    i0: f64,
    noise_sd: f64,
    restriction: &str,
    seed: u64,
) -> PyResult<()> {
    let restriction = match restriction {
        "middle" => RestrictionPattern::Middle,
        "none" => RestrictionPattern::None,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown restriction pattern {other:?} (expected 'middle' or 'none')"
            )))
        }
    };
    std::fs::create_dir_all(&dir)?;
    let opts = SynthOpts {
        regions,
        horizon,
        population,
        beta_range: beta,
        gamma_range: gamma,
        init_infected: i0,
        noise_sd,
        restriction,
        seed,
    };
    write_synthetic_dataset(&dir, &opts).map_err(err)
}

/// A trained forecaster: checkpoint metadata plus live parameters.
#[pyclass]
struct Model {
    ckpt: Checkpoint,
    params: ModelParams,
}

impl Model {
    fn dataset(cases: &PathBuf, restrictions: &PathBuf, demographics: &PathBuf) -> PyResult<Dataset> {
        Dataset::load(cases, restrictions, demographics).map_err(err)
    }

    fn demo_for(&self, dataset: &Dataset, region: &str) -> PyResult<Vec<f64>> {
        let raw = dataset
            .demographics
            .get(region)
            .ok_or_else(|| PyValueError::new_err(format!("region {region} not in the dataset")))?;
        self.ckpt.standardization.apply(raw).map_err(err)
    }
}

type ForecastRows = Vec<(String, f64, f64)>;

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = Checkpoint::load(&path).map_err(err)?;
        let params = ckpt.params().map_err(err)?;
        Ok(Model { ckpt, params })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.ckpt.save(&path).map_err(err)
    }

    /// Train on CSV files; returns (model, history) where history rows are
    /// (epoch, train_rmse, eval_rmse, lr).
    #[staticmethod]
    #[pyo3(signature = (cases, restrictions, demographics, test_regions=vec![],
                        hidden_dim=100, num_layers=3, window_len=5, lr0=1e-4,
                        batch_size=32, max_epochs=500, eval_fraction=0.2, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        cases: PathBuf,
        restrictions: PathBuf,
        demographics: PathBuf,
        test_regions: Vec<String>,
        hidden_dim: usize,
        num_layers: usize,
        window_len: usize,
        lr0: f64,
        batch_size: usize,
        max_epochs: usize,
        eval_fraction: f64,
        seed: u64,
    ) -> PyResult<(Self, Vec<(usize, f64, f64, f64)>)> {
        let dataset = Self::dataset(&cases, &restrictions, &demographics)?;
        let windows = dataset.windows(window_len).map_err(err)?;
        let mut rng = Rng::new(seed).child(0xD5);
        let split = epikick::data::split_dataset(&windows, &test_regions, eval_fraction, &mut rng)
            .map_err(err)?;
        let (demos, stats) = dataset
            .standardized_demographics(&test_regions)
            .map_err(err)?;
        let model_cfg = ModelConfig {
            input_dim: 4,
            hidden_dim,
            num_layers,
            demo_dim: dataset.feature_names.len(),
            window_len,
        };
        let train_cfg = TrainConfig {
            lr0,
            batch_size,
            max_epochs,
            seed,
            ..Default::default()
        };
        let (params, history) = train(&split, &demos, &model_cfg, &train_cfg).map_err(err)?;
        let ckpt = Checkpoint::new(model_cfg, &params, dataset.feature_names.clone(), stats);
        let rows = history
            .epochs
            .iter()
            .map(|e| (e.epoch, e.train_rmse, e.eval_rmse, e.lr))
            .collect();
        Ok((Model { ckpt, params }, rows))
    }

    /// Normalized one-step RMSE over every window of `region`.
    fn evaluate(
        &self,
        cases: PathBuf,
        restrictions: PathBuf,
        demographics: PathBuf,
        region: &str,
    ) -> PyResult<f64> {
        let dataset = Self::dataset(&cases, &restrictions, &demographics)?;
        let series = dataset
            .norm_series
            .get(region)
            .ok_or_else(|| PyValueError::new_err(format!("region {region} not in the dataset")))?;
        let windows = epikick::data::build_windows(
            series,
            &dataset.timelines[region],
            self.ckpt.config.window_len,
        )
        .map_err(err)?;
        let mut demos = std::collections::BTreeMap::new();
        demos.insert(region.to_string(), self.demo_for(&dataset, region)?);
        evaluate_rmse(&self.params, &windows, &demos).map_err(err)
    }

    /// One-step predictions for the last `days` observed days; rows are
    /// (date, dc_pred, cc_implied).
    #[pyo3(signature = (cases, restrictions, demographics, region, days=30))]
    fn forecast_one_step(
        &self,
        cases: PathBuf,
        restrictions: PathBuf,
        demographics: PathBuf,
        region: &str,
        days: usize,
    ) -> PyResult<ForecastRows> {
        let dataset = Self::dataset(&cases, &restrictions, &demographics)?;
        let series = dataset
            .norm_series
            .get(region)
            .ok_or_else(|| PyValueError::new_err(format!("region {region} not in the dataset")))?;
        let demo = self.demo_for(&dataset, region)?;
        let result = epikick::forecast::one_step_series(
            &self.params,
            series,
            &dataset.timelines[region],
            &demo,
            dataset.populations[region],
            days,
            self.ckpt.config.window_len,
        )
        .map_err(err)?;
        Ok(result
            .dates
            .iter()
            .zip(&result.dc_pred)
            .zip(&result.cc_implied)
            .map(|((d, dc), cc)| (d.to_string(), *dc, *cc))
            .collect())
    }

    /// Autoregressive rollout of `horizon` days past `start_day` (default:
    /// the last observed day), persisting the last restriction status.
    #[pyo3(signature = (cases, restrictions, demographics, region, horizon=30, start_day=None))]
    fn forecast_autoregressive(
        &self,
        cases: PathBuf,
        restrictions: PathBuf,
        demographics: PathBuf,
        region: &str,
        horizon: usize,
        start_day: Option<usize>,
    ) -> PyResult<ForecastRows> {
        let dataset = Self::dataset(&cases, &restrictions, &demographics)?;
        let series = dataset
            .norm_series
            .get(region)
            .ok_or_else(|| PyValueError::new_err(format!("region {region} not in the dataset")))?;
        let timeline = &dataset.timelines[region];
        let end_day = start_day.unwrap_or(series.len() - 1);
        let seed_window = epikick::forecast::SeedWindow::from_series(
            series,
            timeline,
            end_day,
            self.ckpt.config.window_len,
        )
        .map_err(err)?;
        let demo = self.demo_for(&dataset, region)?;
        let status = vec![timeline.status[end_day]; horizon];
        let result = epikick::forecast::forecast_autoregressive(
            &self.params,
            &seed_window,
            &demo,
            horizon,
            &status,
            dataset.populations[region],
            region,
        )
        .map_err(err)?;
        Ok(result
            .dates
            .iter()
            .zip(&result.dc_pred)
            .zip(&result.cc_implied)
            .map(|((d, dc), cc)| (d.to_string(), *dc, *cc))
            .collect())
    }

    /// Embedding-norm relevance rows: (feature, group, relevance).
    fn relevance(&self) -> PyResult<Vec<(String, String, f64)>> {
        let report = epikick::analysis::relevance(
            &self.params,
            &self.ckpt.feature_names,
            &self.ckpt.standardization,
            "in-memory",
        )
        .map_err(err)?;
        Ok(report
            .entries
            .into_iter()
            .map(|e| (e.feature, e.group, e.relevance))
            .collect())
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.ckpt.feature_names.clone()
    }

    #[getter]
    fn hidden_dim(&self) -> usize {
        self.ckpt.config.hidden_dim
    }

    #[getter]
    fn num_layers(&self) -> usize {
        self.ckpt.config.num_layers
    }

    #[getter]
    fn window_len(&self) -> usize {
        self.ckpt.config.window_len
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.ckpt.config.param_count()
    }
}

#[pymodule]
fn epikick_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(sir_series, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
