//! One-step prediction, autoregressive rollout, and bootstrap-ensemble
//! confidence intervals.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::data::{DatasetSplit, EpidemicSeries, RestrictionTimeline};
use crate::error::{Error, Result};
use crate::model::{forward_with_demo, ModelConfig, ModelParams};
use crate::numerics::Matrix;
use crate::train::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForecastMode {
    OneStep,
    Autoregressive,
}

impl ForecastMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ForecastMode::OneStep => "onestep",
            ForecastMode::Autoregressive => "autoregressive",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForecastResult {
    pub region: String,
    pub dates: Vec<NaiveDate>,
    /// Predicted new cases in counts, clamped at 0.
    pub dc_pred: Vec<f64>,
    /// Raw (unclamped) predictions, kept for diagnostics.
    pub dc_raw: Vec<f64>,
    pub cc_implied: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub mode: ForecastMode,
}

impl ForecastResult {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::from("region,date,dc_pred,dc_lower,dc_upper,cc_implied,mode\n");
        for (k, date) in self.dates.iter().enumerate() {
            let lower = self
                .lower
                .as_ref()
                .map(|l| l[k].to_string())
                .unwrap_or_default();
            let upper = self
                .upper
                .as_ref()
                .map(|u| u[k].to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.region,
                date,
                self.dc_pred[k],
                lower,
                upper,
                self.cc_implied[k],
                self.mode.as_str()
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BootstrapConfig {
    pub ensemble_size: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            ensemble_size: 30,
            level: 0.95,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(Error::Usage("ensemble size must be >= 2".into()));
        }
        if !(0.0 < self.level && self.level < 1.0) {
            return Err(Error::Usage(format!(
                "confidence level must be in (0,1), got {}",
                self.level
            )));
        }
        Ok(())
    }
}

fn check_demo(params: &ModelParams, demo: &[f64]) -> Result<()> {
    if demo.len() != params.embed_w.cols() {
        return Err(Error::Validation(format!(
            "demographic vector has {} features, checkpoint expects {}",
            demo.len(),
            params.embed_w.cols()
        )));
    }
    Ok(())
}

/// Next-day dc in counts, clamped at 0. The window must already be
/// normalized and double-channel routed.
pub fn predict_one_step(
    params: &ModelParams,
    window: &Matrix,
    demo: &[f64],
    population: f64,
) -> Result<f64> {
    check_demo(params, demo)?;
    let (pred, _) = forward_with_demo(window, demo, params)?;
    Ok((pred * population).max(0.0))
}

/// One-step predictions for the last `days` targets of an observed
/// series, each computed from the true preceding window.
pub fn one_step_series(
    params: &ModelParams,
    series_norm: &EpidemicSeries,
    timeline: &RestrictionTimeline,
    demo: &[f64],
    population: f64,
    days: usize,
    window_len: usize,
) -> Result<ForecastResult> {
    check_demo(params, demo)?;
    let t_total = series_norm.len();
    if t_total < window_len + days {
        return Err(Error::Validation(format!(
            "region {}: series length {t_total} too short for {days} one-step targets with window {window_len}",
            series_norm.region()
        )));
    }
    let windows = crate::data::build_windows(series_norm, timeline, window_len)?;
    let mut dates = Vec::with_capacity(days);
    let mut dc_pred = Vec::with_capacity(days);
    let mut dc_raw = Vec::with_capacity(days);
    let mut cc_implied = Vec::with_capacity(days);
    for sample in windows.iter().skip(windows.len() - days) {
        let (pred, _) = forward_with_demo(&sample.inputs, demo, params)?;
        let raw = pred * population;
        let clamped = raw.max(0.0);
        // implied cc accumulates the prediction onto the true previous day
        let t = (sample.target_date - series_norm.start_date()).num_days() as usize;
        let prev_cc = series_norm.cc()[t - 1] * population;
        dates.push(sample.target_date);
        dc_raw.push(raw);
        dc_pred.push(clamped);
        cc_implied.push(prev_cc + clamped);
    }
    Ok(ForecastResult {
        region: series_norm.region().to_string(),
        dates,
        dc_pred,
        dc_raw,
        cc_implied,
        lower: None,
        upper: None,
        mode: ForecastMode::OneStep,
    })
}

/// The rolling state an autoregressive forecast starts from: the last L
/// observed days in normalized units plus the running cumulative level.
#[derive(Debug, Clone)]
pub struct SeedWindow {
    /// (cc, dc, restricted) per day, oldest first, length = window_len.
    pub rows: Vec<(f64, f64, bool)>,
    pub last_cc: f64,
    pub last_date: NaiveDate,
}

impl SeedWindow {
    /// Window covering the `window_len` days ending at `end_day`
    /// (inclusive, 0-based index into the series).
    pub fn from_series(
        series_norm: &EpidemicSeries,
        timeline: &RestrictionTimeline,
        end_day: usize,
        window_len: usize,
    ) -> Result<Self> {
        if end_day + 1 < window_len || end_day >= series_norm.len() {
            return Err(Error::Validation(format!(
                "region {}: cannot seed a {window_len}-day window ending at day {end_day}",
                series_norm.region()
            )));
        }
        let rows = (end_day + 1 - window_len..=end_day)
            .map(|t| (series_norm.cc()[t], series_norm.dc()[t], timeline.status[t]))
            .collect();
        Ok(SeedWindow {
            rows,
            last_cc: series_norm.cc()[end_day],
            last_date: series_norm.date_at(end_day),
        })
    }

    fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.rows.len(), 4, |i, col| {
            let (cc, dc, restricted) = self.rows[i];
            match (col, restricted) {
                (0, true) => cc,
                (1, true) => dc,
                (2, false) => cc,
                (3, false) => dc,
                _ => 0.0,
            }
        })
    }
}

/// Long-horizon rollout: each prediction is appended to the window and
/// consumed by the next step. `future_status` supplies the restriction
/// flag for every forecast day.
pub fn forecast_autoregressive(
    params: &ModelParams,
    seed: &SeedWindow,
    demo: &[f64],
    horizon: usize,
    future_status: &[bool],
    population: f64,
    region: &str,
) -> Result<ForecastResult> {
    check_demo(params, demo)?;
    if horizon < 1 {
        return Err(Error::Usage("horizon must be >= 1".into()));
    }
    if future_status.len() < horizon {
        return Err(Error::Validation(format!(
            "restriction status supplied for {} days, horizon is {horizon}",
            future_status.len()
        )));
    }
    let mut state = seed.clone();
    let mut dates = Vec::with_capacity(horizon);
    let mut dc_pred = Vec::with_capacity(horizon);
    let mut dc_raw = Vec::with_capacity(horizon);
    let mut cc_implied = Vec::with_capacity(horizon);
    for step in 0..horizon {
        let window = state.to_matrix();
        let (pred, _) = forward_with_demo(&window, demo, params)?;
        let raw = pred * population;
        let clamped_norm = pred.max(0.0);
        state.last_cc += clamped_norm;
        state.rows.remove(0);
        state
            .rows
            .push((state.last_cc, clamped_norm, future_status[step]));
        state.last_date = state.last_date + chrono::Days::new(1);
        dates.push(state.last_date);
        dc_raw.push(raw);
        dc_pred.push(raw.max(0.0));
        cc_implied.push(state.last_cc * population);
    }
    Ok(ForecastResult {
        region: region.to_string(),
        dates,
        dc_pred,
        dc_raw,
        cc_implied,
        lower: None,
        upper: None,
        mode: ForecastMode::Autoregressive,
    })
}

/// Empirical quantile with linear interpolation on sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Outcome of a bootstrap run: the point forecast from the model trained
/// on the full training set, plus per-date bounds from the ensemble.
pub struct BootstrapOutcome {
    pub result: ForecastResult,
    pub dropped_members: usize,
}

/// Bootstrap ensemble: B models trained on with-replacement resamples of
/// the training list, each with a child seed; bounds are empirical
/// quantiles of the member forecasts per date.
pub fn bootstrap_ci<F>(
    split: &DatasetSplit,
    demos: &BTreeMap<String, Vec<f64>>,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    bcfg: &BootstrapConfig,
    run_forecast: F,
) -> Result<BootstrapOutcome>
where
    F: Fn(&ModelParams) -> Result<ForecastResult>,
{
    bcfg.validate()?;
    let (point_params, _) = train(split, demos, model_cfg, train_cfg)?;
    let mut result = run_forecast(&point_params)?;
    let n_dates = result.dates.len();

    let seed_rng = crate::numerics::Rng::new(bcfg.seed);
    let mut member_preds: Vec<Vec<f64>> = Vec::with_capacity(bcfg.ensemble_size);
    let mut dropped = 0usize;
    for b in 0..bcfg.ensemble_size {
        let mut member_rng = seed_rng.child(b as u64 + 1);
        let resampled: Vec<_> = (0..split.train.len())
            .map(|_| split.train[member_rng.below(split.train.len())].clone())
            .collect();
        let member_split = DatasetSplit {
            train: resampled,
            eval: split.eval.clone(),
            test_regions: split.test_regions.clone(),
        };
        let member_cfg = TrainConfig {
            seed: member_rng.next_u64(),
            ..*train_cfg
        };
        match train(&member_split, demos, model_cfg, &member_cfg)
            .and_then(|(p, _)| run_forecast(&p))
        {
            Ok(r) => {
                if r.dc_pred.len() != n_dates {
                    return Err(Error::Usage(
                        "bootstrap forecast length differs between members".into(),
                    ));
                }
                member_preds.push(r.dc_pred);
            }
            Err(Error::Training(_)) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if member_preds.len() < 2 {
        return Err(Error::Training(format!(
            "only {} of {} bootstrap members survived",
            member_preds.len(),
            bcfg.ensemble_size
        )));
    }

    let q_lo = (1.0 - bcfg.level) / 2.0;
    let q_hi = 1.0 - q_lo;
    let mut lower = Vec::with_capacity(n_dates);
    let mut upper = Vec::with_capacity(n_dates);
    for k in 0..n_dates {
        let mut vals: Vec<f64> = member_preds.iter().map(|m| m[k]).collect();
        vals.sort_by(f64::total_cmp);
        lower.push(quantile(&vals, q_lo));
        upper.push(quantile(&vals, q_hi));
    }
    result.lower = Some(lower);
    result.upper = Some(upper);
    Ok(BootstrapOutcome {
        result,
        dropped_members: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::numerics::Rng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            input_dim: 4,
            hidden_dim: 8,
            num_layers: 2,
            demo_dim: 3,
            window_len: 4,
        }
    }

    fn seed_window() -> SeedWindow {
        SeedWindow {
            rows: vec![
                (0.01, 0.002, true),
                (0.012, 0.002, true),
                (0.015, 0.003, false),
                (0.018, 0.003, false),
            ],
            last_cc: 0.018,
            last_date: NaiveDate::from_ymd_opt(2020, 4, 1).unwrap(),
        }
    }

    #[test]
    fn clamp_negative_prediction() {
        let c = cfg();
        let mut params = init_params(&c, &mut Rng::new(1)).unwrap();
        params.out_w = vec![0.0; c.hidden_dim];
        params.out_b = -0.001;
        let window = seed_window().to_matrix();
        let pred = predict_one_step(&params, &window, &[0.0; 3], 1e6).unwrap();
        assert_eq!(pred, 0.0);
    }

    #[test]
    fn demo_schema_mismatch_rejected() {
        let c = cfg();
        let params = init_params(&c, &mut Rng::new(1)).unwrap();
        let window = seed_window().to_matrix();
        assert!(predict_one_step(&params, &window, &[0.0; 5], 1e6).is_err());
    }

    #[test]
    fn horizon_one_matches_one_step() {
        let c = cfg();
        let params = init_params(&c, &mut Rng::new(2)).unwrap();
        let seed = seed_window();
        let demo = [0.5, -0.5, 1.0];
        let one = predict_one_step(&params, &seed.to_matrix(), &demo, 1e6).unwrap();
        let roll =
            forecast_autoregressive(&params, &seed, &demo, 1, &[false], 1e6, "A").unwrap();
        assert_eq!(roll.dc_pred[0], one);
    }

    #[test]
    fn constant_head_gives_constant_rollout() {
        let c = cfg();
        let mut params = init_params(&c, &mut Rng::new(3)).unwrap();
        params.out_w = vec![0.0; c.hidden_dim];
        params.out_b = 0.004;
        let roll = forecast_autoregressive(
            &params,
            &seed_window(),
            &[0.0; 3],
            10,
            &[true; 10],
            1e6,
            "A",
        )
        .unwrap();
        for p in &roll.dc_pred {
            assert!((p - 4000.0).abs() < 1e-9);
        }
    }

    #[test]
    fn implied_cc_non_decreasing() {
        let c = cfg();
        let params = init_params(&c, &mut Rng::new(4)).unwrap();
        let roll = forecast_autoregressive(
            &params,
            &seed_window(),
            &[1.0, 0.0, -1.0],
            20,
            &[false; 20],
            1e6,
            "A",
        )
        .unwrap();
        for w in roll.cc_implied.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn missing_future_status_rejected() {
        let c = cfg();
        let params = init_params(&c, &mut Rng::new(5)).unwrap();
        let err = forecast_autoregressive(
            &params,
            &seed_window(),
            &[0.0; 3],
            10,
            &[true; 5],
            1e6,
            "A",
        )
        .unwrap_err();
        assert!(err.to_string().contains("horizon"));
    }

    #[test]
    fn quantile_min_max_degenerate() {
        let vals = [2.0, 7.0];
        assert_eq!(quantile(&vals, 0.0), 2.0);
        assert_eq!(quantile(&vals, 1.0), 7.0);
        assert_eq!(quantile(&vals, 0.5), 4.5);
    }

    #[test]
    fn quantile_linear_interpolation() {
        let vals = [1.0, 2.0, 3.0, 4.0];
        assert!((quantile(&vals, 0.25) - 1.75).abs() < 1e-12);
        assert!((quantile(&vals, 0.975) - 3.925).abs() < 1e-12);
    }
}
