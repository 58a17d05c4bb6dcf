//! CSV inputs: experiment records for SHAP slopes and paired samples for the
//! statistics battery.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tunnelkit_core::gbrt::GbrtParams;
use tunnelkit_core::slope::{shap_slope, ExperimentRecord, SlopeReport, Target};
use tunnelkit_core::stats::{cliffs_delta, wilcoxon_signed_rank, PValueMode};

use crate::error::{Result, TkError};
use crate::io::read_csv;

pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let records: Vec<ExperimentRecord> = read_csv(path)?;
    for (i, r) in records.iter().enumerate() {
        r.validate().map_err(|e| TkError::data(format!("{}: row {}", path.display(), i + 1), e))?;
    }
    Ok(records)
}

pub fn slope_reports(records: &[ExperimentRecord], hp: &GbrtParams) -> Result<Vec<SlopeReport>> {
    Target::ALL
        .iter()
        .map(|&t| shap_slope(records, t, hp).map_err(|e| TkError::data(format!("shap slope ({})", t.as_str()), e)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub target: String,
    pub variable: String,
    pub slope: f64,
    pub raw_slope: f64,
    pub constant: bool,
    pub r_squared: f64,
}

pub fn slope_rows(reports: &[SlopeReport]) -> Vec<SlopeRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.variables.iter().map(move |v| SlopeRow {
                target: r.target.as_str().to_string(),
                variable: v.variable.clone(),
                slope: v.slope,
                raw_slope: v.raw_slope,
                constant: v.constant,
                r_squared: r.r_squared,
            })
        })
        .collect()
}

/// One paired observation: `a` and `b` are the two conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub comparison: String,
    pub metric: String,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub comparison: String,
    pub metric: String,
    pub n_pairs: usize,
    pub effect_size: f64,
    pub magnitude: String,
    pub p_value: f64,
    pub statistic: f64,
    pub p_mode: String,
}

type Paired = (Vec<f64>, Vec<f64>);

/// Wilcoxon signed-rank and Cliff's delta per (comparison, metric) group,
/// groups in lexicographic order.
pub fn run_stats(pairs: &[PairRow]) -> Result<Vec<StatsRow>> {
    let mut groups: BTreeMap<(&str, &str), Paired> = BTreeMap::new();
    for p in pairs {
        let g = groups.entry((&p.comparison, &p.metric)).or_default();
        g.0.push(p.a);
        g.1.push(p.b);
    }
    groups
        .into_iter()
        .map(|((comparison, metric), (a, b))| {
            let ctx = format!("{comparison}/{metric}");
            let w = wilcoxon_signed_rank(&a, &b).map_err(|e| TkError::data(ctx.clone(), e))?;
            let d = cliffs_delta(&a, &b).map_err(|e| TkError::data(ctx, e))?;
            Ok(StatsRow {
                comparison: comparison.to_string(),
                metric: metric.to_string(),
                n_pairs: a.len(),
                effect_size: d.delta,
                magnitude: d.magnitude.as_str().to_string(),
                p_value: w.p_value,
                statistic: w.statistic,
                p_mode: match w.mode {
                    PValueMode::Exact => "exact",
                    PValueMode::Normal => "normal",
                }
                .to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(c: &str, a: f64, b: f64) -> PairRow {
        PairRow { comparison: c.into(), metric: "retained".into(), a, b }
    }

    #[test]
    fn groups_are_tested_separately() {
        let rows = vec![pair("y", 1.0, 2.0), pair("x", 3.0, 1.0), pair("y", 2.0, 1.0), pair("x", 4.0, 1.0)];
        let out = run_stats(&rows).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].comparison, "x");
        assert_eq!(out[0].effect_size, 1.0);
        assert_eq!(out[0].magnitude, "large");
        assert_eq!(out[1].statistic, 1.5);
        assert_eq!(out[1].p_value, 1.0);
        assert_eq!(out[1].p_mode, "exact");
    }
}
