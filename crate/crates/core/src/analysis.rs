//! Feature relevance: the Frobenius norm of each demographic feature's
//! embedding column, grouped by feature family.
//!
//! Grouping is name-driven: features prefixed `age_` form the age group,
//! `race_` the race group, everything else is a scalar factor.

use serde::{Deserialize, Serialize};

use crate::data::StandardizationStats;
use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceEntry {
    pub feature: String,
    pub group: String,
    pub relevance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceReport {
    pub checkpoint_id: String,
    pub standardization: StandardizationStats,
    pub entries: Vec<RelevanceEntry>,
}

pub fn feature_group(name: &str) -> &'static str {
    if name.starts_with("age_") {
        "age"
    } else if name.starts_with("race_") {
        "race"
    } else {
        "scalar"
    }
}

/// relevance_j = ||embed_W[:, j]||_2, reported grouped and sorted
/// descending within each group.
pub fn relevance(
    params: &ModelParams,
    feature_names: &[String],
    standardization: &StandardizationStats,
    checkpoint_id: &str,
) -> Result<RelevanceReport> {
    if feature_names.len() != params.embed_w.cols() {
        return Err(Error::Validation(format!(
            "{} feature names for an embedding with {} columns",
            feature_names.len(),
            params.embed_w.cols()
        )));
    }
    let mut entries: Vec<RelevanceEntry> = feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let norm = (0..params.embed_w.rows())
                .map(|k| params.embed_w.get(k, j).powi(2))
                .sum::<f64>()
                .sqrt();
            RelevanceEntry {
                feature: name.clone(),
                group: feature_group(name).to_string(),
                relevance: norm,
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        a.group
            .cmp(&b.group)
            .then(b.relevance.total_cmp(&a.relevance))
            .then(a.feature.cmp(&b.feature))
    });
    Ok(RelevanceReport {
        checkpoint_id: checkpoint_id.to_string(),
        standardization: standardization.clone(),
        entries,
    })
}

/// Writes `<path>.csv` (feature,group,relevance) and a JSON twin with
/// the checkpoint metadata at `<path>.json`.
pub fn emit_report(report: &RelevanceReport, path_stem: &std::path::Path) -> Result<()> {
    let csv_path = path_stem.with_extension("csv");
    let mut out = String::from("feature,group,relevance\n");
    for e in &report.entries {
        out.push_str(&format!("{},{},{}\n", e.feature, e.group, e.relevance));
    }
    std::fs::write(csv_path, out)?;
    let json_path = path_stem.with_extension("json");
    std::fs::write(json_path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

/// Parses a report CSV back into entries (round-trip check support).
pub fn parse_report_csv(path: &std::path::Path) -> Result<Vec<RelevanceEntry>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut entries = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        entries.push(RelevanceEntry {
            feature: rec.get(0).unwrap_or("").to_string(),
            group: rec.get(1).unwrap_or("").to_string(),
            relevance: rec
                .get(2)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::Validation("non-numeric relevance".into()))?,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::numerics::Rng;

    fn stats(names: &[String]) -> StandardizationStats {
        StandardizationStats {
            names: names.to_vec(),
            means: vec![0.0; names.len()],
            sds: vec![1.0; names.len()],
            warnings: vec![],
        }
    }

    fn cfg(demo_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim: 4,
            hidden_dim: 6,
            num_layers: 1,
            demo_dim,
            window_len: 2,
        }
    }

    #[test]
    fn zero_column_zero_relevance() {
        let c = cfg(2);
        let params = ModelParams::zeros(&c);
        let names = vec!["a".to_string(), "b".to_string()];
        let rep = relevance(&params, &names, &stats(&names), "test").unwrap();
        assert!(rep.entries.iter().all(|e| e.relevance == 0.0));
    }

    #[test]
    fn pythagorean_column() {
        let c = cfg(2);
        let mut params = ModelParams::zeros(&c);
        params.embed_w.set(0, 1, 3.0);
        params.embed_w.set(1, 1, 4.0);
        let names = vec!["a".to_string(), "b".to_string()];
        let rep = relevance(&params, &names, &stats(&names), "test").unwrap();
        let b = rep.entries.iter().find(|e| e.feature == "b").unwrap();
        assert_eq!(b.relevance, 5.0);
    }

    #[test]
    fn negation_invariance() {
        let c = cfg(3);
        let params = init_params(&c, &mut Rng::new(8)).unwrap();
        let mut negated = params.clone();
        for k in 0..c.hidden_dim {
            negated.embed_w.set(k, 1, -negated.embed_w.get(k, 1));
        }
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let r1 = relevance(&params, &names, &stats(&names), "t").unwrap();
        let r2 = relevance(&negated, &names, &stats(&names), "t").unwrap();
        assert_eq!(r1.entries, r2.entries);
    }

    #[test]
    fn permutation_equivariance() {
        let c = cfg(3);
        let params = init_params(&c, &mut Rng::new(9)).unwrap();
        let names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        // permute columns (0,1,2) -> (2,0,1) together with names
        let perm = [2usize, 0, 1];
        let mut permuted = params.clone();
        for (new_j, &old_j) in perm.iter().enumerate() {
            for k in 0..c.hidden_dim {
                permuted.embed_w.set(k, new_j, params.embed_w.get(k, old_j));
            }
        }
        let perm_names: Vec<String> = perm.iter().map(|&j| names[j].clone()).collect();
        let r1 = relevance(&params, &names, &stats(&names), "t").unwrap();
        let r2 = relevance(&permuted, &perm_names, &stats(&perm_names), "t").unwrap();
        assert_eq!(r1.entries, r2.entries);
    }

    #[test]
    fn sorted_descending_within_group() {
        let c = cfg(3);
        let mut params = ModelParams::zeros(&c);
        params.embed_w.set(0, 0, 1.0);
        params.embed_w.set(0, 1, 3.0);
        params.embed_w.set(0, 2, 2.0);
        let names: Vec<String> = ["age_0_17", "age_18_44", "age_45_64"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rep = relevance(&params, &names, &stats(&names), "t").unwrap();
        let vals: Vec<f64> = rep.entries.iter().map(|e| e.relevance).collect();
        assert_eq!(vals, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn csv_roundtrip() {
        let c = cfg(2);
        let params = init_params(&c, &mut Rng::new(10)).unwrap();
        let names = vec!["age_a".to_string(), "gdp".to_string()];
        let rep = relevance(&params, &names, &stats(&names), "t").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("relevance");
        emit_report(&rep, &stem).unwrap();
        let parsed = parse_report_csv(&stem.with_extension("csv")).unwrap();
        assert_eq!(parsed, rep.entries);
    }
}
