//! CSV ingestion, normalization, double-channel sliding windows, and the
//! train/eval/test split.
//!
//! File schemas:
//!   cases:        region,date,cumulative_confirmed,cumulative_deaths
//!                 (deaths column optional and ignored)
//!   restrictions: region,restriction_start,restriction_end
//!                 (empty fields = no restriction; repeated rows allowed)
//!   demographics: region,<feature_1>,...,<feature_D>
//!                 (must include a `population` column, which doubles as
//!                 the per-capita normalizer)

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

pub const POPULATION_FEATURE: &str = "population";

/// Per-region daily cumulative confirmed counts plus derived new cases.
/// Counts are stored as f64 so the same type carries normalized
/// (per-capita) series.
#[derive(Debug, Clone, PartialEq)]
pub struct EpidemicSeries {
    region: String,
    start_date: NaiveDate,
    cc: Vec<f64>,
    dc: Vec<f64>,
}

impl EpidemicSeries {
    /// Build from cumulative counts; dc[0] = cc[0], dc[t] = cc[t] - cc[t-1].
    pub fn from_cumulative(region: String, start_date: NaiveDate, cc: Vec<f64>) -> Result<Self> {
        for (t, w) in cc.windows(2).enumerate() {
            if w[1] < w[0] {
                return Err(Error::Validation(format!(
                    "region {region}: cumulative count decreases at {} ({} -> {})",
                    start_date + chrono::Days::new(t as u64 + 1),
                    w[0],
                    w[1]
                )));
            }
        }
        if cc.first().is_some_and(|&c| c < 0.0) {
            return Err(Error::Validation(format!(
                "region {region}: negative cumulative count"
            )));
        }
        let mut dc = Vec::with_capacity(cc.len());
        for (t, &c) in cc.iter().enumerate() {
            dc.push(if t == 0 { c } else { c - cc[t - 1] });
        }
        Ok(EpidemicSeries {
            region,
            start_date,
            cc,
            dc,
        })
    }

    pub fn region(&self) -> &str {
        &self.region
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    pub fn len(&self) -> usize {
        self.cc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cc.is_empty()
    }

    pub fn cc(&self) -> &[f64] {
        &self.cc
    }

    pub fn dc(&self) -> &[f64] {
        &self.dc
    }

    pub fn date_at(&self, t: usize) -> NaiveDate {
        self.start_date + chrono::Days::new(t as u64)
    }

    /// Per-capita normalization.
    pub fn normalize(&self, population: f64) -> Result<EpidemicSeries> {
        if population < 1.0 {
            return Err(Error::Usage(format!(
                "population must be >= 1, got {population}"
            )));
        }
        Ok(EpidemicSeries {
            region: self.region.clone(),
            start_date: self.start_date,
            cc: self.cc.iter().map(|c| c / population).collect(),
            dc: self.dc.iter().map(|d| d / population).collect(),
        })
    }

    /// Inverse of `normalize`.
    pub fn denormalize(&self, population: f64) -> EpidemicSeries {
        EpidemicSeries {
            region: self.region.clone(),
            start_date: self.start_date,
            cc: self.cc.iter().map(|c| c * population).collect(),
            dc: self.dc.iter().map(|d| d * population).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RestrictionTimeline {
    pub region: String,
    pub status: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemographicVector {
    pub region: String,
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

/// One sequence-to-point pair: an L x 4 double-channel block and the
/// normalized next-day dc target. Column order is
/// (cc_res, dc_res, cc_nores, dc_nores).
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub region: String,
    pub inputs: Matrix,
    pub target: f64,
    pub target_date: NaiveDate,
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<WindowSample>,
    pub eval: Vec<WindowSample>,
    pub test_regions: Vec<String>,
}

/// Mean/sd per demographic feature over the training regions; applied to
/// unseen regions and recorded in checkpoints.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StandardizationStats {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub warnings: Vec<String>,
}

impl StandardizationStats {
    pub fn apply(&self, v: &DemographicVector) -> Result<Vec<f64>> {
        if v.names != self.names {
            return Err(Error::Validation(format!(
                "region {}: demographic schema does not match standardization stats",
                v.region
            )));
        }
        Ok(v.values
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }
}

fn parse_date(s: &str, context: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| Error::Validation(format!("{context}: bad date '{s}': {e}")))
}

pub fn load_cases(path: &Path) -> Result<BTreeMap<String, EpidemicSeries>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let idx = |name: &str| headers.iter().position(|h| h == name);
    let (ri, di, ci) = match (idx("region"), idx("date"), idx("cumulative_confirmed")) {
        (Some(r), Some(d), Some(c)) => (r, d, c),
        _ => {
            return Err(Error::Validation(format!(
                "cases file {}: header must contain region,date,cumulative_confirmed",
                path.display()
            )))
        }
    };

    // region -> (dates, counts), preserving file order within a region
    let mut raw: BTreeMap<String, (Vec<NaiveDate>, Vec<f64>)> = BTreeMap::new();
    for (row_no, rec) in reader.records().enumerate() {
        let rec = rec?;
        let region = rec
            .get(ri)
            .ok_or_else(|| Error::Validation(format!("cases row {}: missing region", row_no + 2)))?
            .to_string();
        let date = parse_date(
            rec.get(di).unwrap_or(""),
            &format!("cases row {}", row_no + 2),
        )?;
        let count: f64 = rec
            .get(ci)
            .unwrap_or("")
            .parse()
            .map_err(|_| {
                Error::Validation(format!(
                    "cases row {}: non-numeric cumulative_confirmed '{}'",
                    row_no + 2,
                    rec.get(ci).unwrap_or("")
                ))
            })?;
        let entry = raw.entry(region).or_default();
        entry.0.push(date);
        entry.1.push(count);
    }

    let mut out = BTreeMap::new();
    for (region, (dates, counts)) in raw {
        for w in dates.windows(2) {
            let expected = w[0] + chrono::Days::new(1);
            if w[1] != expected {
                return Err(Error::Validation(format!(
                    "region {region}: date gap between {} and {}",
                    w[0], w[1]
                )));
            }
        }
        let start = dates[0];
        out.insert(
            region.clone(),
            EpidemicSeries::from_cumulative(region, start, counts)?,
        );
    }
    Ok(out)
}

pub fn load_restrictions(
    path: &Path,
    series: &BTreeMap<String, EpidemicSeries>,
) -> Result<BTreeMap<String, RestrictionTimeline>> {
    let mut intervals: BTreeMap<String, Vec<(NaiveDate, NaiveDate)>> = BTreeMap::new();
    let mut reader = csv::Reader::from_path(path)?;
    for (row_no, rec) in reader.records().enumerate() {
        let rec = rec?;
        let region = rec.get(0).unwrap_or("").to_string();
        if !series.contains_key(&region) {
            return Err(Error::Validation(format!(
                "restrictions row {}: unknown region {region}",
                row_no + 2
            )));
        }
        let start_s = rec.get(1).unwrap_or("");
        let end_s = rec.get(2).unwrap_or("");
        if start_s.is_empty() && end_s.is_empty() {
            intervals.entry(region).or_default();
            continue;
        }
        let context = format!("restrictions row {}", row_no + 2);
        let start = parse_date(start_s, &context)?;
        let end = parse_date(end_s, &context)?;
        if end < start {
            return Err(Error::Validation(format!(
                "{context}: restriction_end {end} before restriction_start {start}"
            )));
        }
        intervals.entry(region).or_default().push((start, end));
    }

    let mut out = BTreeMap::new();
    for (region, s) in series {
        let ivals = intervals.get(region).map(Vec::as_slice).unwrap_or(&[]);
        let status = (0..s.len())
            .map(|t| {
                let d = s.date_at(t);
                ivals.iter().any(|(a, b)| d >= *a && d <= *b)
            })
            .collect();
        out.insert(
            region.clone(),
            RestrictionTimeline {
                region: region.clone(),
                status,
            },
        );
    }
    Ok(out)
}

pub fn load_demographics(path: &Path) -> Result<BTreeMap<String, DemographicVector>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("region") || headers.len() < 2 {
        return Err(Error::Validation(format!(
            "demographics file {}: header must be region,<feature_1>,...",
            path.display()
        )));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut out = BTreeMap::new();
    for (row_no, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Validation(format!(
                "demographics row {}: expected {} cells, got {}",
                row_no + 2,
                headers.len(),
                rec.len()
            )));
        }
        let region = rec.get(0).unwrap().to_string();
        let mut values = Vec::with_capacity(names.len());
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Validation(format!(
                    "demographics row {}: non-numeric cell '{cell}' in column {}",
                    row_no + 2,
                    names[j]
                ))
            })?;
            values.push(v);
        }
        out.insert(
            region.clone(),
            DemographicVector {
                region,
                names: names.clone(),
                values,
            },
        );
    }
    Ok(out)
}

/// Z-score each feature over the given vectors. A zero-variance feature
/// passes through centered with unit scale and a recorded warning.
pub fn standardize_demographics(
    vectors: &[&DemographicVector],
) -> Result<(Vec<Vec<f64>>, StandardizationStats)> {
    if vectors.len() < 2 {
        return Err(Error::Usage(
            "standardization needs at least 2 regions".into(),
        ));
    }
    let names = vectors[0].names.clone();
    for v in vectors {
        if v.names != names {
            return Err(Error::Validation(format!(
                "region {}: demographic schema differs",
                v.region
            )));
        }
    }
    let d = names.len();
    let n = vectors.len() as f64;
    let mut means = vec![0.0; d];
    let mut sds = vec![0.0; d];
    let mut warnings = Vec::new();
    for j in 0..d {
        let mean = vectors.iter().map(|v| v.values[j]).sum::<f64>() / n;
        let var = vectors
            .iter()
            .map(|v| (v.values[j] - mean).powi(2))
            .sum::<f64>()
            / n;
        means[j] = mean;
        if var == 0.0 {
            sds[j] = 1.0;
            warnings.push(format!("feature {} has zero variance", names[j]));
        } else {
            sds[j] = var.sqrt();
        }
    }
    let stats = StandardizationStats {
        names,
        means,
        sds,
        warnings,
    };
    let standardized = vectors
        .iter()
        .map(|v| stats.apply(v))
        .collect::<Result<Vec<_>>>()?;
    Ok((standardized, stats))
}

/// Sliding double-channel windows over a normalized series. Returns
/// T - L samples (empty when T <= L).
pub fn build_windows(
    series: &EpidemicSeries,
    timeline: &RestrictionTimeline,
    window_len: usize,
) -> Result<Vec<WindowSample>> {
    if timeline.status.len() != series.len() {
        return Err(Error::Validation(format!(
            "region {}: timeline length {} != series length {}",
            series.region(),
            timeline.status.len(),
            series.len()
        )));
    }
    let t_total = series.len();
    if t_total <= window_len {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(t_total - window_len);
    for k in 0..t_total - window_len {
        let inputs = Matrix::from_fn(window_len, 4, |row, col| {
            let t = k + row;
            let restricted = timeline.status[t];
            match (col, restricted) {
                (0, true) => series.cc()[t],
                (1, true) => series.dc()[t],
                (2, false) => series.cc()[t],
                (3, false) => series.dc()[t],
                _ => 0.0,
            }
        });
        out.push(WindowSample {
            region: series.region().to_string(),
            inputs,
            target: series.dc()[k + window_len],
            target_date: series.date_at(k + window_len),
        });
    }
    Ok(out)
}

/// Hold out test regions whole; shuffle the rest and split by count
/// (floor for eval).
pub fn split_dataset(
    samples_per_region: &BTreeMap<String, Vec<WindowSample>>,
    test_regions: &[String],
    eval_fraction: f64,
    rng: &mut Rng,
) -> Result<DatasetSplit> {
    if !(0.0..1.0).contains(&eval_fraction) || eval_fraction <= 0.0 {
        return Err(Error::Usage(format!(
            "eval_fraction must be in (0,1), got {eval_fraction}"
        )));
    }
    for r in test_regions {
        if !samples_per_region.contains_key(r) {
            return Err(Error::Validation(format!("unknown test region {r}")));
        }
    }
    let mut pool: Vec<WindowSample> = samples_per_region
        .iter()
        .filter(|(region, _)| !test_regions.contains(region))
        .flat_map(|(_, samples)| samples.iter().cloned())
        .collect();
    rng.shuffle(&mut pool);
    let eval_count = (pool.len() as f64 * eval_fraction).floor() as usize;
    let eval = pool.split_off(pool.len() - eval_count);
    Ok(DatasetSplit {
        train: pool,
        eval,
        test_regions: test_regions.to_vec(),
    })
}

/// Everything loaded and cross-validated from the three CSV files.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub series: BTreeMap<String, EpidemicSeries>,
    pub norm_series: BTreeMap<String, EpidemicSeries>,
    pub timelines: BTreeMap<String, RestrictionTimeline>,
    pub demographics: BTreeMap<String, DemographicVector>,
    pub populations: BTreeMap<String, f64>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn load(cases: &Path, restrictions: &Path, demographics: &Path) -> Result<Self> {
        let series = load_cases(cases)?;
        let timelines = load_restrictions(restrictions, &series)?;
        let demo = load_demographics(demographics)?;
        let feature_names = demo
            .values()
            .next()
            .map(|v| v.names.clone())
            .unwrap_or_default();
        let pop_idx = feature_names
            .iter()
            .position(|n| n == POPULATION_FEATURE)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "demographics file must contain a '{POPULATION_FEATURE}' column"
                ))
            })?;
        let mut populations = BTreeMap::new();
        let mut norm_series = BTreeMap::new();
        for (region, s) in &series {
            let v = demo.get(region).ok_or_else(|| {
                Error::Validation(format!("region {region} has cases but no demographics"))
            })?;
            let pop = v.values[pop_idx];
            if pop < 1.0 {
                return Err(Error::Validation(format!(
                    "region {region}: population {pop} < 1"
                )));
            }
            populations.insert(region.clone(), pop);
            norm_series.insert(region.clone(), s.normalize(pop)?);
        }
        Ok(Dataset {
            series,
            norm_series,
            timelines,
            demographics: demo,
            populations,
            feature_names,
        })
    }

    pub fn windows(&self, window_len: usize) -> Result<BTreeMap<String, Vec<WindowSample>>> {
        let mut out = BTreeMap::new();
        for (region, s) in &self.norm_series {
            out.insert(
                region.clone(),
                build_windows(s, &self.timelines[region], window_len)?,
            );
        }
        Ok(out)
    }

    /// Standardize demographics using only the non-test regions, then
    /// apply the resulting stats to every region.
    pub fn standardized_demographics(
        &self,
        test_regions: &[String],
    ) -> Result<(BTreeMap<String, Vec<f64>>, StandardizationStats)> {
        let train_vecs: Vec<&DemographicVector> = self
            .demographics
            .iter()
            .filter(|(r, _)| !test_regions.contains(r))
            .map(|(_, v)| v)
            .collect();
        let (_, stats) = standardize_demographics(&train_vecs)?;
        let mut out = BTreeMap::new();
        for (region, v) in &self.demographics {
            out.insert(region.clone(), stats.apply(v)?);
        }
        Ok((out, stats))
    }
}
