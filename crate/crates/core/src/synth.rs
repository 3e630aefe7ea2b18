//! Writes a complete synthetic dataset (cases, restrictions, demographics
//! CSVs) generated from the discrete SIR model, with per-region parameter
//! jitter from child seeds.

use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::sir::{synth_epidemic, SirParams, SirState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestrictionPattern {
    /// Stay-at-home from day horizon/4 through day horizon/2.
    Middle,
    /// No restriction anywhere.
    None,
}

#[derive(Debug, Clone)]
pub struct SynthOpts {
    pub regions: usize,
    pub horizon: usize,
    pub population: u64,
    pub beta_range: (f64, f64),
    pub gamma_range: (f64, f64),
    pub init_infected: f64,
    pub noise_sd: f64,
    pub restriction: RestrictionPattern,
    pub seed: u64,
}

impl Default for SynthOpts {
    fn default() -> Self {
        SynthOpts {
            regions: 20,
            horizon: 150,
            population: 1_000_000,
            beta_range: (0.2, 0.5),
            gamma_range: (0.05, 0.2),
            init_infected: 1e-3,
            noise_sd: 0.0,
            restriction: RestrictionPattern::Middle,
            seed: 0,
        }
    }
}

pub const SYNTH_START_DATE: &str = "2020-01-21";

/// Emits cases.csv, restrictions.csv, demographics.csv into `dir`.
/// Demographic columns: population, beta, gamma, init_infected plus two
/// pure-noise decoys.
pub fn write_synthetic_dataset(dir: &Path, opts: &SynthOpts) -> Result<()> {
    if opts.regions < 1 || opts.horizon < 1 {
        return Err(Error::Usage("regions and horizon must be >= 1".into()));
    }
    if opts.beta_range.0 > opts.beta_range.1 || opts.gamma_range.0 > opts.gamma_range.1 {
        return Err(Error::Usage("parameter range minimum exceeds maximum".into()));
    }
    let start_date = NaiveDate::parse_from_str(SYNTH_START_DATE, "%Y-%m-%d").unwrap();
    let root = Rng::new(opts.seed);

    let mut cases = String::from("region,date,cumulative_confirmed,cumulative_deaths\n");
    let mut restrictions = String::from("region,restriction_start,restriction_end\n");
    let mut demographics =
        String::from("region,population,beta,gamma,init_infected,decoy_a,decoy_b\n");

    for r in 0..opts.regions {
        let mut rng = root.child(r as u64);
        let region = format!("R{r:02}");
        let beta = rng.uniform(opts.beta_range.0, opts.beta_range.1);
        let gamma = rng.uniform(opts.gamma_range.0, opts.gamma_range.1);
        let params = SirParams::new(beta, gamma)?;
        let init = SirState::new(1.0 - opts.init_infected, opts.init_infected, 0.0)?;
        let series = synth_epidemic(
            params,
            init,
            opts.population,
            opts.horizon,
            opts.noise_sd,
            &mut rng,
            &region,
            start_date,
        )?;
        for (t, c) in series.cc().iter().enumerate() {
            cases.push_str(&format!("{region},{},{c},0\n", series.date_at(t)));
        }
        if opts.restriction == RestrictionPattern::Middle {
            let a = start_date + chrono::Days::new(opts.horizon as u64 / 4);
            let b = start_date + chrono::Days::new(opts.horizon as u64 / 2);
            restrictions.push_str(&format!("{region},{a},{b}\n"));
        }
        let decoy_a = rng.uniform(-1.0, 1.0);
        let decoy_b = rng.uniform(-1.0, 1.0);
        demographics.push_str(&format!(
            "{region},{},{beta},{gamma},{},{decoy_a},{decoy_b}\n",
            opts.population, opts.init_infected
        ));
    }
    std::fs::write(dir.join("cases.csv"), cases)?;
    std::fs::write(dir.join("restrictions.csv"), restrictions)?;
    std::fs::write(dir.join("demographics.csv"), demographics)?;
    Ok(())
}
