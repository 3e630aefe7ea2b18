//! Discrete SIR difference equations, used both as a synthetic-data
//! generator and as the ground-truth oracle for learnability tests.
//!
//! The update is
//!   s' = s - beta*s*i
//!   i' = i + beta*s*i - gamma*i
//!   r' = r + gamma*i
//! on population fractions.

use crate::data::EpidemicSeries;
use crate::error::{Error, Result};
use crate::numerics::Rng;
use chrono::NaiveDate;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirState {
    pub s: f64,
    pub i: f64,
    pub r: f64,
}

impl SirState {
    pub fn new(s: f64, i: f64, r: f64) -> Result<Self> {
        let st = SirState { s, i, r };
        st.validate()?;
        Ok(st)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("s", self.s), ("i", self.i), ("r", self.r)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!(
                    "SIR component {name} = {v} outside [0, 1]"
                )));
            }
        }
        if (self.s + self.i + self.r - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!(
                "SIR components sum to {} != 1",
                self.s + self.i + self.r
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SirParams {
    pub beta: f64,
    pub gamma: f64,
}

impl SirParams {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        if beta < 0.0 {
            return Err(Error::Validation(format!("beta = {beta} must be >= 0")));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Validation(format!("gamma = {gamma} must be in [0, 1]")));
        }
        Ok(SirParams { beta, gamma })
    }
}

/// One step of the discrete SIR difference equations.
pub fn sir_step(state: SirState, params: SirParams) -> Result<SirState> {
    let flow = params.beta * state.s * state.i;
    let next = SirState {
        s: state.s - flow,
        i: state.i + flow - params.gamma * state.i,
        r: state.r + params.gamma * state.i,
    };
    if next.s < 0.0 || next.i < 0.0 || next.i > 1.0 {
        return Err(Error::Stability(format!(
            "step left [0,1]: beta*i = {}, next s = {}, next i = {}",
            params.beta * state.i,
            next.s,
            next.i
        )));
    }
    Ok(next)
}

/// Trajectory of length `horizon + 1`, including the initial state.
pub fn sir_series(init: SirState, params: SirParams, horizon: usize) -> Result<Vec<SirState>> {
    if horizon < 1 {
        return Err(Error::Usage("horizon must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(init);
    let mut cur = init;
    for _ in 0..horizon {
        cur = sir_step(cur, params)?;
        out.push(cur);
    }
    Ok(out)
}

/// Maps a fraction trajectory to reported cumulative counts:
/// c_t = round(population * (1 - s_t) * (1 + eps_t)), clamped non-decreasing.
pub fn synth_epidemic(
    params: SirParams,
    init: SirState,
    population: u64,
    horizon: usize,
    noise_sd: f64,
    rng: &mut Rng,
    region: &str,
    start_date: NaiveDate,
) -> Result<EpidemicSeries> {
    if population < 1 {
        return Err(Error::Usage("population must be >= 1".into()));
    }
    if noise_sd < 0.0 {
        return Err(Error::Usage("noise_sd must be >= 0".into()));
    }
    let traj = sir_series(init, params, horizon)?;
    let mut cc = Vec::with_capacity(traj.len());
    let mut prev: f64 = 0.0;
    for st in &traj {
        let noise = if noise_sd > 0.0 {
            rng.normal(0.0, noise_sd)
        } else {
            0.0
        };
        let raw = (population as f64 * (1.0 - st.s) * (1.0 + noise)).round();
        let clamped = raw.max(prev).max(0.0);
        cc.push(clamped);
        prev = clamped;
    }
    EpidemicSeries::from_cumulative(region.to_string(), start_date, cc)
}
