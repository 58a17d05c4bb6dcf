//! SHAP-slope variable importance over experiment records.
//!
//! Records are encoded (ordinal variables to min-max normalized ranks,
//! categorical variables one-hot), a Huber GBRT is fitted to one target,
//! TreeSHAP attributions are computed for every training row, and each
//! variable gets the OLS slope of its attribution against its encoded value.
//! Slopes are L1-normalized across variables.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gbrt::{fit_gbrt, r_squared, GbrtParams};
use crate::shap::tree_shap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ArchFamily {
    #[serde(rename = "CNN")]
    Cnn,
    #[serde(rename = "ViT")]
    Vit,
}

impl ArchFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ArchFamily::Cnn => "CNN",
            ArchFamily::Vit => "ViT",
        }
    }
}

/// One (backbone, OOD dataset) experiment: explanatory variables and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    #[serde(default)]
    pub backbone_id: String,
    #[serde(default)]
    pub ood_dataset: String,
    pub resolution: u32,
    pub augmentation: bool,
    pub id_class_count: u32,
    pub spatial_reduction: f64,
    pub stem: u32,
    pub arch_family: ArchFamily,
    pub overparam: f64,
    pub depth: u32,
    pub retained: f64,
    pub pearson: f64,
    pub alignment: f64,
}

impl ExperimentRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.overparam > 0.0 && self.overparam.is_finite()) {
            return Err(invalid("overparam", "overparam must be positive"));
        }
        if !(self.spatial_reduction > 0.0 && self.spatial_reduction <= 1.0) {
            return Err(invalid("spatial_reduction", "spatial_reduction must be in (0, 1]"));
        }
        if self.resolution == 0 || self.stem == 0 || self.depth == 0 || self.id_class_count == 0 {
            return Err(invalid("record", "resolution, stem, depth and id_class_count must be positive"));
        }
        Ok(())
    }

    pub fn target(&self, t: Target) -> f64 {
        match t {
            Target::Retained => self.retained,
            Target::Pearson => self.pearson,
            Target::Alignment => self.alignment,
        }
    }

    fn ordinal(&self, v: OrdinalVar) -> f64 {
        match v {
            OrdinalVar::Resolution => f64::from(self.resolution),
            OrdinalVar::Augmentation => f64::from(u8::from(self.augmentation)),
            OrdinalVar::IdClassCount => f64::from(self.id_class_count),
            OrdinalVar::SpatialReduction => self.spatial_reduction,
            OrdinalVar::Stem => f64::from(self.stem),
            OrdinalVar::Overparam => self.overparam,
            OrdinalVar::Depth => f64::from(self.depth),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Retained,
    Pearson,
    Alignment,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Retained, Target::Pearson, Target::Alignment];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Retained => "retained",
            Target::Pearson => "pearson",
            Target::Alignment => "alignment",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OrdinalVar {
    Resolution,
    Augmentation,
    IdClassCount,
    SpatialReduction,
    Stem,
    Overparam,
    Depth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variable {
    Ordinal(OrdinalVar),
    ArchFamily,
}

/// Variables in declaration order.
const VARIABLES: [(&str, Variable); 8] = [
    ("resolution", Variable::Ordinal(OrdinalVar::Resolution)),
    ("augmentation", Variable::Ordinal(OrdinalVar::Augmentation)),
    ("id_class_count", Variable::Ordinal(OrdinalVar::IdClassCount)),
    ("spatial_reduction", Variable::Ordinal(OrdinalVar::SpatialReduction)),
    ("stem", Variable::Ordinal(OrdinalVar::Stem)),
    ("arch_family", Variable::ArchFamily),
    ("overparam", Variable::Ordinal(OrdinalVar::Overparam)),
    ("depth", Variable::Ordinal(OrdinalVar::Depth)),
];

/// Names of the explanatory variables in encoding order.
pub fn variable_names() -> Vec<&'static str> {
    VARIABLES.iter().map(|(n, _)| *n).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnMap {
    /// Distinct raw values in ascending order; value `i` encodes to `i / (k - 1)`.
    Ordinal(Vec<f64>),
    /// Categories present, sorted; one indicator column each.
    OneHot(Vec<ArchFamily>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableEncoding {
    pub name: String,
    /// Design-matrix columns belonging to this variable.
    pub columns: Vec<usize>,
    pub map: ColumnMap,
    /// Fewer than two distinct values were seen.
    pub constant: bool,
}

/// Encoding learned from a batch of records; reusable on later batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub variables: Vec<VariableEncoding>,
    pub column_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDesign {
    pub rows: Vec<Vec<f64>>,
    pub column_names: Vec<String>,
    pub encoder: FeatureEncoder,
}

impl FeatureEncoder {
    pub fn fit(records: &[ExperimentRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("experiment records"));
        }
        for r in records {
            r.validate()?;
        }
        let mut variables = Vec::new();
        let mut column_names = Vec::new();
        for (name, var) in VARIABLES {
            let (map, width, labels): (ColumnMap, usize, Vec<String>) = match var {
                Variable::Ordinal(o) => {
                    let mut vals: Vec<f64> = records.iter().map(|r| r.ordinal(o)).collect();
                    vals.sort_by(f64::total_cmp);
                    vals.dedup();
                    (ColumnMap::Ordinal(vals), 1, vec![name.to_string()])
                }
                Variable::ArchFamily => {
                    let mut cats: Vec<ArchFamily> = records.iter().map(|r| r.arch_family).collect();
                    cats.sort_by_key(|c| c.as_str());
                    cats.dedup();
                    let labels = cats.iter().map(|c| format!("{name}={}", c.as_str())).collect();
                    let w = cats.len();
                    (ColumnMap::OneHot(cats), w, labels)
                }
            };
            let constant = match &map {
                ColumnMap::Ordinal(v) => v.len() < 2,
                ColumnMap::OneHot(c) => c.len() < 2,
            };
            let start = column_names.len();
            column_names.extend(labels);
            variables.push(VariableEncoding { name: name.to_string(), columns: (start..start + width).collect(), map, constant });
        }
        Ok(Self { variables, column_names })
    }

    pub fn transform(&self, records: &[ExperimentRecord]) -> Result<Vec<Vec<f64>>> {
        let mut rows = Vec::with_capacity(records.len());
        for r in records {
            r.validate()?;
            let mut row = vec![0.0; self.column_names.len()];
            for (enc, (_, var)) in self.variables.iter().zip(VARIABLES) {
                match (&enc.map, var) {
                    (ColumnMap::Ordinal(vals), Variable::Ordinal(o)) => {
                        let v = r.ordinal(o);
                        let pos = vals.iter().position(|x| *x == v).ok_or_else(|| Error::UnseenCategory {
                            column: enc.name.clone(),
                            value: format!("{v}"),
                        })?;
                        row[enc.columns[0]] = if vals.len() < 2 { 0.0 } else { pos as f64 / (vals.len() - 1) as f64 };
                    }
                    (ColumnMap::OneHot(cats), Variable::ArchFamily) => {
                        let pos = cats.iter().position(|c| *c == r.arch_family).ok_or_else(|| Error::UnseenCategory {
                            column: enc.name.clone(),
                            value: r.arch_family.as_str().to_string(),
                        })?;
                        row[enc.columns[pos]] = 1.0;
                    }
                    _ => unreachable!("encoder maps follow the variable table"),
                }
            }
            rows.push(row);
        }
        Ok(rows)
    }
}

pub fn encode_features(records: &[ExperimentRecord]) -> Result<EncodedDesign> {
    let encoder = FeatureEncoder::fit(records)?;
    let rows = encoder.transform(records)?;
    Ok(EncodedDesign { rows, column_names: encoder.column_names.clone(), encoder })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSlope {
    pub variable: String,
    pub raw_slope: f64,
    /// `raw_slope / sum |raw_slope|`.
    pub slope: f64,
    pub constant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSlope {
    pub column: String,
    pub raw_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub target: Target,
    pub n_records: usize,
    pub r_squared: f64,
    pub variables: Vec<VariableSlope>,
    /// Per one-hot column slopes; the variable-level slope of a categorical
    /// group regresses the summed group attribution on its last indicator.
    pub indicators: Vec<IndicatorSlope>,
    pub params: GbrtParams,
}

impl SlopeReport {
    pub fn slope(&self, variable: &str) -> Option<f64> {
        self.variables.iter().find(|v| v.variable == variable).map(|v| v.slope)
    }

    /// Variables ordered by decreasing `|slope|`, ties kept in declaration order.
    pub fn ranked(&self) -> Vec<&VariableSlope> {
        let mut v: Vec<&VariableSlope> = self.variables.iter().collect();
        v.sort_by(|a, b| libm::fabs(b.slope).total_cmp(&libm::fabs(a.slope)));
        v
    }
}

/// OLS slope of `y` on `x`; 0 when `x` is constant.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

pub fn shap_slope(records: &[ExperimentRecord], target: Target, hp: &GbrtParams) -> Result<SlopeReport> {
    let design = encode_features(records)?;
    let y: Vec<f64> = records.iter().map(|r| r.target(target)).collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(invalid("target", format!("{} contains non-finite values", target.as_str())));
    }
    if y.iter().all(|v| *v == y[0]) {
        return Err(Error::ZeroVariance);
    }
    let ensemble = fit_gbrt(&design.rows, &y, hp)?;
    let r2 = r_squared(&ensemble, &design.rows, &y)?;
    let phi: Vec<Vec<f64>> = design.rows.iter().map(|row| tree_shap(&ensemble, row)).collect::<Result<_>>()?;
    let col = |m: &[Vec<f64>], c: usize| -> Vec<f64> { m.iter().map(|r| r[c]).collect() };

    let mut variables = Vec::new();
    let mut indicators = Vec::new();
    for enc in &design.encoder.variables {
        let raw = match enc.map {
            ColumnMap::Ordinal(_) => ols_slope(&col(&design.rows, enc.columns[0]), &col(&phi, enc.columns[0])),
            ColumnMap::OneHot(_) => {
                for &c in &enc.columns {
                    indicators.push(IndicatorSlope {
                        column: design.column_names[c].clone(),
                        raw_slope: ols_slope(&col(&design.rows, c), &col(&phi, c)),
                    });
                }
                let last = *enc.columns.last().expect("one-hot group has a column");
                let summed: Vec<f64> = phi.iter().map(|r| enc.columns.iter().map(|&c| r[c]).sum()).collect();
                ols_slope(&col(&design.rows, last), &summed)
            }
        };
        variables.push(VariableSlope { variable: enc.name.clone(), raw_slope: raw, slope: 0.0, constant: enc.constant });
    }
    let l1: f64 = variables.iter().map(|v| libm::fabs(v.raw_slope)).sum();
    if l1 > 0.0 {
        for v in &mut variables {
            v.slope = v.raw_slope / l1;
        }
    }
    Ok(SlopeReport { target, n_records: records.len(), r_squared: r2, variables, indicators, params: *hp })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::seq::IndexedRandom;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn record(resolution: u32, arch: ArchFamily) -> ExperimentRecord {
        ExperimentRecord {
            backbone_id: String::new(),
            ood_dataset: String::new(),
            resolution,
            augmentation: false,
            id_class_count: 100,
            spatial_reduction: 0.5,
            stem: 3,
            arch_family: arch,
            overparam: 10.0,
            depth: 11,
            retained: f64::from(resolution),
            pearson: 0.5,
            alignment: 0.5,
        }
    }

    fn random_records(seed: u64, n: usize, target: impl Fn(&ExperimentRecord, f64) -> f64) -> Vec<ExperimentRecord> {
        let mut r = rng::stream(seed, &[]);
        let noise = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| {
                let mut rec = ExperimentRecord {
                    backbone_id: String::new(),
                    ood_dataset: String::new(),
                    resolution: *[32u32, 64, 128, 224].choose(&mut r).unwrap(),
                    augmentation: r.random_bool(0.5),
                    id_class_count: *[10u32, 50, 100, 200, 1000].choose(&mut r).unwrap(),
                    spatial_reduction: *[0.125, 0.25, 0.5, 1.0].choose(&mut r).unwrap(),
                    stem: *[3u32, 7, 8, 16].choose(&mut r).unwrap(),
                    arch_family: if r.random_bool(0.5) { ArchFamily::Cnn } else { ArchFamily::Vit },
                    overparam: *[10.0, 40.0, 80.0, 160.0].choose(&mut r).unwrap(),
                    depth: *[11u32, 17, 18, 34].choose(&mut r).unwrap(),
                    retained: 0.0,
                    pearson: 0.0,
                    alignment: 0.0,
                };
                let e = noise.sample(&mut r);
                rec.retained = target(&rec, e);
                rec
            })
            .collect()
    }

    #[test]
    fn ordinal_and_one_hot_encoding() {
        let recs: Vec<_> = [32, 64, 128, 224]
            .iter()
            .zip([ArchFamily::Vit, ArchFamily::Cnn, ArchFamily::Cnn, ArchFamily::Vit])
            .map(|(&res, a)| record(res, a))
            .collect();
        let d = encode_features(&recs).unwrap();
        assert_eq!(
            d.column_names,
            ["resolution", "augmentation", "id_class_count", "spatial_reduction", "stem", "arch_family=CNN", "arch_family=ViT", "overparam", "depth"]
        );
        let res: Vec<f64> = d.rows.iter().map(|r| r[0]).collect();
        assert_eq!(res, vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        assert_eq!((d.rows[0][5], d.rows[0][6]), (0.0, 1.0));
        assert_eq!((d.rows[1][5], d.rows[1][6]), (1.0, 0.0));
        // Constant columns encode to zero and are flagged.
        assert!(d.rows.iter().all(|r| r[2] == 0.0));
        assert!(d.encoder.variables[2].constant);
        assert!(!d.encoder.variables[0].constant);
    }

    #[test]
    fn unseen_values_are_rejected() {
        let enc = FeatureEncoder::fit(&[record(32, ArchFamily::Cnn), record(64, ArchFamily::Cnn)]).unwrap();
        assert!(matches!(enc.transform(&[record(32, ArchFamily::Vit)]), Err(Error::UnseenCategory { .. })));
        assert!(matches!(enc.transform(&[record(128, ArchFamily::Cnn)]), Err(Error::UnseenCategory { .. })));
        assert!(enc.transform(&[record(64, ArchFamily::Cnn)]).is_ok());
    }

    #[test]
    fn slopes_are_l1_normalized() {
        let recs = random_records(3, 128, |r, e| f64::from(r.depth) + 0.5 * e);
        let rep = shap_slope(&recs, Target::Retained, &GbrtParams { n_trees: 60, ..GbrtParams::default() }).unwrap();
        let l1: f64 = rep.variables.iter().map(|v| v.slope.abs()).sum();
        assert!((l1 - 1.0).abs() < 1e-12);
        assert_eq!(rep.ranked()[0].variable, "depth");
        assert!(rep.slope("depth").unwrap() > 0.0);
        assert_eq!(rep.indicators.len(), 2);
    }

    #[test]
    fn constant_target_is_an_error() {
        let recs = vec![record(32, ArchFamily::Cnn), record(64, ArchFamily::Vit)];
        assert_eq!(shap_slope(&recs, Target::Pearson, &GbrtParams::default()), Err(Error::ZeroVariance));
    }

    #[test]
    fn negating_a_planted_signal_flips_its_sign() {
        let hp = GbrtParams { n_trees: 100, ..GbrtParams::default() };
        let up = random_records(5, 256, |r, e| libm::log(f64::from(r.id_class_count)) + 0.3 * e);
        let down = random_records(5, 256, |r, e| -libm::log(f64::from(r.id_class_count)) + 0.3 * e);
        let a = shap_slope(&up, Target::Retained, &hp).unwrap();
        let b = shap_slope(&down, Target::Retained, &hp).unwrap();
        assert!(a.slope("id_class_count").unwrap() > 0.0);
        assert!(b.slope("id_class_count").unwrap() < 0.0);
    }

    #[test]
    fn categorical_group_slope_tracks_vit_indicator() {
        let hp = GbrtParams { n_trees: 100, ..GbrtParams::default() };
        let recs = random_records(9, 200, |r, e| if r.arch_family == ArchFamily::Vit { 5.0 } else { 0.0 } + 0.2 * e);
        let rep = shap_slope(&recs, Target::Retained, &hp).unwrap();
        assert_eq!(rep.ranked()[0].variable, "arch_family");
        assert!(rep.slope("arch_family").unwrap() > 0.0);
        let vit = rep.indicators.iter().find(|i| i.column == "arch_family=ViT").unwrap();
        let cnn = rep.indicators.iter().find(|i| i.column == "arch_family=CNN").unwrap();
        assert!(vit.raw_slope >= 0.0 && cnn.raw_slope <= 0.0);
    }
}
