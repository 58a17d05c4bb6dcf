//! Tunnel metrics over probe curves.
//!
//! * retained performance `r = 100 * a_p / a_m`, where `a_m` is the best OOD
//!   probe accuracy (reached first at layer `l_m`) and `a_p` the accuracy at
//!   the penultimate layer;
//! * Pearson correlation between the ID and OOD curves;
//! * ID/OOD alignment `(acc_id - chance_id) * (acc_ood - chance_ood)`.
//!
//! A tunnel starts at `l_m` when `l_m` precedes the penultimate layer and
//! `a_m > a_p`.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::probe::ProbeCurve;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strength {
    Negligible,
    Weak,
    Medium,
    Strong,
}

impl Strength {
    pub fn as_str(self) -> &'static str {
        match self {
            Strength::Negligible => "negligible",
            Strength::Weak => "weak",
            Strength::Medium => "medium",
            Strength::Strong => "strong",
        }
    }
}

impl core::fmt::Display for Strength {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentInputs {
    pub acc_id: f64,
    pub acc_ood: f64,
    pub chance_id: f64,
    pub chance_ood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunnelReport {
    pub backbone_id: String,
    pub id_dataset: String,
    pub ood_dataset: String,
    /// 1-based layer where the tunnel starts, if any.
    pub tunnel_start: Option<usize>,
    pub peak_layer: usize,
    pub peak_accuracy: f64,
    pub penultimate_accuracy: f64,
    /// Percentage in `[0, 100]`.
    pub retained: f64,
    /// `None` when either curve is constant.
    pub pearson: Option<f64>,
    pub alignment: f64,
    pub strength: Strength,
}

fn check_unit_interval(name: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(name, alloc::format!("{name} = {v} outside [0, 1]")))
    }
}

/// Divides every point by the curve maximum.
pub fn normalize_curve(curve: &ProbeCurve) -> Result<ProbeCurve> {
    let max = curve.accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::DegenerateCurve);
    }
    Ok(ProbeCurve {
        accuracies: curve.accuracies.iter().map(|a| a / max).collect(),
        ..curve.clone()
    })
}

/// Earliest layer attaining the curve maximum, with its value.
fn peak(acc: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &a) in acc.iter().enumerate().skip(1) {
        if a > acc[best] {
            best = i;
        }
    }
    (best + 1, acc[best])
}

fn check_curve(curve: &ProbeCurve) -> Result<()> {
    if curve.len() < 2 {
        return Err(invalid("curve", "curve needs at least 2 layers"));
    }
    if curve.accuracies.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(invalid("curve", "accuracies must be finite and non-negative"));
    }
    Ok(())
}

/// Tunnel start `l_m` (1-based) of an OOD curve, if the curve has a tunnel.
pub fn detect_tunnel(ood: &ProbeCurve) -> Result<Option<usize>> {
    check_curve(ood)?;
    let n = ood.len();
    let (l_m, a_m) = peak(&ood.accuracies);
    let a_p = ood.accuracies[n - 1];
    Ok((l_m < n && a_m > a_p).then_some(l_m))
}

/// `100 * a_p / a_m`.
pub fn ood_retained(ood: &ProbeCurve) -> Result<f64> {
    check_curve(ood)?;
    let (_, a_m) = peak(&ood.accuracies);
    if !(a_m > 0.0) {
        return Err(Error::DegenerateCurve);
    }
    Ok(100.0 * (ood.accuracies[ood.len() - 1] / a_m))
}

/// Pearson correlation between the ID and OOD curves over layers `1..=n`.
pub fn pearson_id_ood(id: &ProbeCurve, ood: &ProbeCurve) -> Result<f64> {
    if id.len() != ood.len() {
        return Err(Error::DimMismatch { expected: id.len(), found: ood.len() });
    }
    stats::pearson(&id.accuracies, &ood.accuracies)
}

/// Chance-corrected product of ID and OOD accuracy. Each factor is floored
/// at 0, so a below-chance probe on either side gives 0.
pub fn id_ood_alignment(inp: &AlignmentInputs) -> Result<f64> {
    check_unit_interval("acc_id", inp.acc_id)?;
    check_unit_interval("acc_ood", inp.acc_ood)?;
    check_unit_interval("chance_id", inp.chance_id)?;
    check_unit_interval("chance_ood", inp.chance_ood)?;
    Ok((inp.acc_id - inp.chance_id).max(0.0) * (inp.acc_ood - inp.chance_ood).max(0.0))
}

/// Strength class for an (averaged) retained percentage:
/// negligible `[95, 100]`, weak `[90, 95)`, medium `[80, 90)`, strong `[0, 80)`.
pub fn classify_strength(retained: f64) -> Result<Strength> {
    if !(0.0..=100.0).contains(&retained) {
        return Err(invalid("retained", alloc::format!("retained {retained} outside [0, 100]")));
    }
    Ok(if retained >= 95.0 {
        Strength::Negligible
    } else if retained >= 90.0 {
        Strength::Weak
    } else if retained >= 80.0 {
        Strength::Medium
    } else {
        Strength::Strong
    })
}

/// Unweighted mean of retained percentages across OOD datasets.
pub fn mean_retained(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("retained values"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Alternative onset rule: first layer whose ID accuracy reaches
/// `fraction` of the penultimate ID accuracy. Never used by default.
pub fn id_threshold_onset(id: &ProbeCurve, fraction: f64) -> Result<usize> {
    check_curve(id)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid("fraction", "fraction must be in (0, 1]"));
    }
    let target = fraction * id.accuracies[id.len() - 1];
    Ok(id.accuracies.iter().position(|&a| a >= target).map_or(id.len(), |i| i + 1))
}

/// Full report for one ID curve against one OOD curve.
pub fn tunnel_report(id: &ProbeCurve, ood: &ProbeCurve) -> Result<TunnelReport> {
    check_curve(id)?;
    check_curve(ood)?;
    if id.len() != ood.len() {
        return Err(Error::DimMismatch { expected: id.len(), found: ood.len() });
    }
    let tunnel_start = detect_tunnel(ood)?;
    let retained = ood_retained(ood)?;
    let (peak_layer, peak_accuracy) = peak(&ood.accuracies);
    let penultimate_accuracy = ood.accuracies[ood.len() - 1];
    let pearson = match pearson_id_ood(id, ood) {
        Ok(r) => Some(r),
        Err(Error::ZeroVariance) => None,
        Err(e) => return Err(e),
    };
    let alignment = id_ood_alignment(&AlignmentInputs {
        acc_id: id.accuracies[id.len() - 1],
        acc_ood: penultimate_accuracy,
        chance_id: id.chance,
        chance_ood: ood.chance,
    })?;
    Ok(TunnelReport {
        backbone_id: ood.backbone_id.clone(),
        id_dataset: id.dataset_id.clone(),
        ood_dataset: ood.dataset_id.clone(),
        tunnel_start,
        peak_layer,
        peak_accuracy,
        penultimate_accuracy,
        retained,
        pearson,
        alignment,
        strength: classify_strength(retained)?,
    })
}

/// Mean retained percentage over reports and its strength class.
pub fn aggregate_strength(reports: &[TunnelReport]) -> Result<(f64, Strength)> {
    let values: Vec<f64> = reports.iter().map(|r| r.retained).collect();
    let mean = mean_retained(&values)?;
    Ok((mean, classify_strength(mean)?))
}
