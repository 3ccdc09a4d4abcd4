//! Reference models and tables for the sulfathiazole series, with an
//! arithmetic audit of the tables.
//!
//! The three fixture models carry the printed coefficients verbatim. Their
//! component counts come from the DF row of the statistics table
//! (DF = 18 - p - 1 with p = 3 for PLS and PCR).

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{format_full, pic50_from_ic50, Membership};
use crate::error::{QsarError, Result};
use crate::regress::{LinearModel, Method};
use crate::validate::{absolute_percent_sum, f_statistic};

/// Version of the embedded reference data; bump when any value changes.
pub const REFERENCE_DATA_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixtureLabel {
    PlsEq5,
    MlrEq6,
    PcrEq7,
}

impl FixtureLabel {
    pub const ALL: [FixtureLabel; 3] = [FixtureLabel::PlsEq5, FixtureLabel::MlrEq6, FixtureLabel::PcrEq7];

    pub fn as_str(self) -> &'static str {
        match self {
            FixtureLabel::PlsEq5 => "PLS-Eq5",
            FixtureLabel::MlrEq6 => "MLR-Eq6",
            FixtureLabel::PcrEq7 => "PCR-Eq7",
        }
    }

    fn json(self) -> &'static str {
        match self {
            FixtureLabel::PlsEq5 => include_str!("../fixtures/pls_eq5.json"),
            FixtureLabel::MlrEq6 => include_str!("../fixtures/mlr_eq6.json"),
            FixtureLabel::PcrEq7 => include_str!("../fixtures/pcr_eq7.json"),
        }
    }

    pub fn method(self) -> Method {
        match self {
            FixtureLabel::PlsEq5 => Method::Pls,
            FixtureLabel::MlrEq6 => Method::Mlr,
            FixtureLabel::PcrEq7 => Method::Pcr,
        }
    }
}

impl FromStr for FixtureLabel {
    type Err = QsarError;

    fn from_str(s: &str) -> Result<Self> {
        FixtureLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| QsarError::Lookup(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureModel {
    pub label: FixtureLabel,
    pub model: LinearModel,
}

pub fn load_fixture(label: &str) -> Result<FixtureModel> {
    let label: FixtureLabel = label.parse()?;
    Ok(FixtureModel {
        label,
        model: LinearModel::from_json(label.json())?,
    })
}

/// One row of the experimental/predicted activity table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityRow {
    pub id: u32,
    pub ic50: f64,
    pub expt: f64,
    pub pred: f64,
    pub residual: f64,
    /// The source marks test compounds only in typeset form, which did not
    /// survive extraction, so membership is unknown for every row.
    pub membership: Option<Membership>,
}

const fn row(id: u32, ic50: f64, expt: f64, pred: f64, residual: f64) -> ActivityRow {
    ActivityRow {
        id,
        ic50,
        expt,
        pred,
        residual,
        membership: None,
    }
}

/// IC50 (micromolar), Expt pIC50, Pred pIC50 (PLS model), Residual.
pub const ACTIVITY_TABLE: [ActivityRow; 28] = [
    row(1, 82.3, 4.09, 7.1474, -3.0574),
    row(2, 1.47, 5.84, 5.5317, 0.3083),
    row(3, 15.08, 4.83, 5.3109, -0.4809),
    row(4, 91.16, 4.05, 3.9509, 0.0991),
    row(5, 14.89, 4.83, 4.7150, 0.115),
    row(6, 54.5, 4.27, 4.4413, -0.1713),
    row(7, 0.91, 5.50, 5.4827, 0.0173),
    row(8, 76.56, 4.12, 4.0849, 0.0351),
    row(9, 4.8, 5.32, 5.4276, -0.1076),
    row(10, 29.21, 5.32, 4.4763, 0.8437),
    row(11, 11.17, 4.54, 4.2910, 0.249),
    row(12, 9.04, 4.96, 5.2175, -0.2575),
    row(13, 2.61, 5.59, 5.8590, -0.269),
    row(14, 3.12, 5.51, 3.7152, 1.7948),
    row(15, 97.05, 4.02, 4.2570, -0.237),
    row(16, 1.47, 5.84, 6.9261, -1.0861),
    row(17, 2.58, 5.59, 5.4794, 0.1106),
    row(18, 1.78, 5.75, 5.5579, 0.1921),
    row(19, 86.26, 4.07, 4.2298, -0.1598),
    row(20, 80.57, 4.10, 4.0209, 0.0791),
    row(21, 6.62, 5.18, 5.6805, -0.5005),
    row(22, 81.03, 4.10, 4.0422, 0.0578),
    row(23, 0.79, 6.11, 5.8378, 0.2722),
    row(24, 11.73, 4.94, 4.9564, -0.0164),
    row(25, 75.13, 4.13, 3.9966, 0.1334),
    row(26, 3.06, 5.52, 3.7152, 1.8048),
    row(27, 51.93, 4.29, 4.3847, -0.0947),
    row(28, 3.95, 4.08, 2.6570, 1.423),
];

/// Reported statistics for one method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStats {
    pub method: Method,
    pub n: usize,
    pub n_train: usize,
    /// Components (PLS/PCR) or descriptors (MLR) implied by DF.
    pub effective_parameters: usize,
    pub df: i64,
    pub r2: f64,
    pub q2: f64,
    pub f: f64,
    pub best_ran_r2: f64,
    pub best_ran_q2: f64,
    pub z_r2: f64,
    pub z_q2: f64,
    pub alpha_r2: f64,
    pub alpha_q2: f64,
    pub r2_se: f64,
    pub q2_se: f64,
    pub pred_r2: f64,
    pub pred_r2_se: f64,
}

impl ReferenceStats {
    /// The 15 labeled statistics in table order.
    pub fn rows(&self) -> [(&'static str, f64); 15] {
        [
            ("n", self.n as f64),
            ("DF", self.df as f64),
            ("r²", self.r2),
            ("q²", self.q2),
            ("F-test", self.f),
            ("best_ran_r²", self.best_ran_r2),
            ("best_ran_q²", self.best_ran_q2),
            ("Zscore_ran_r²", self.z_r2),
            ("Zscore_ran_q²", self.z_q2),
            ("α_ran_r²", self.alpha_r2),
            ("α_ran_q²", self.alpha_q2),
            ("r²_se", self.r2_se),
            ("q²_se", self.q2_se),
            ("pred_r²", self.pred_r2),
            ("pred_r²se", self.pred_r2_se),
        ]
    }
}

pub const STATISTICS_TABLE: [ReferenceStats; 3] = [
    ReferenceStats {
        method: Method::Pls,
        n: 28,
        n_train: 18,
        effective_parameters: 3,
        df: 14,
        r2: 0.9199,
        q2: 0.8300,
        f: 53.5783,
        best_ran_r2: 0.48024,
        best_ran_q2: 0.07412,
        z_r2: 5.55165,
        z_q2: 5.41451,
        alpha_r2: 0.00000,
        alpha_q2: 0.00000,
        r2_se: 0.2321,
        q2_se: 0.3381,
        pred_r2: -3.6132,
        pred_r2_se: 1.4859,
    },
    ReferenceStats {
        method: Method::Mlr,
        n: 28,
        n_train: 18,
        effective_parameters: 4,
        df: 13,
        r2: 0.8647,
        q2: 0.7692,
        f: 20.7628,
        best_ran_r2: 0.44613,
        best_ran_q2: -0.02584,
        z_r2: 4.96006,
        z_q2: 4.98651,
        alpha_r2: 0.00001,
        alpha_q2: 0.00001,
        r2_se: 0.3130,
        q2_se: 0.4088,
        pred_r2: -2.3101,
        pred_r2_se: 1.2587,
    },
    ReferenceStats {
        method: Method::Pcr,
        n: 28,
        n_train: 18,
        effective_parameters: 3,
        df: 14,
        r2: 0.8088,
        q2: 0.6715,
        f: 19.7379,
        best_ran_r2: 0.25466,
        best_ran_q2: 0.13938,
        z_r2: 9.21353,
        z_q2: 7.70877,
        alpha_r2: 0.00000,
        alpha_q2: 0.00005,
        r2_se: 0.3586,
        q2_se: 0.4699,
        pred_r2: -1.8381,
        pred_r2_se: 1.1655,
    },
];

/// Reported descriptor contribution percentages for one model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceContributions {
    pub label: FixtureLabel,
    pub percents: &'static [(&'static str, f64)],
}

pub const REFERENCE_CONTRIBUTIONS: [ReferenceContributions; 3] = [
    ReferenceContributions {
        label: FixtureLabel::PlsEq5,
        percents: &[
            ("PolarSurfaceAreaExcludingPandS", -27.92),
            ("MomInertiaX", -28.62),
            ("slogp", -23.99),
            ("SaaScout", -10.97),
            ("SsOHE-index", -8.49),
        ],
    },
    ReferenceContributions {
        label: FixtureLabel::MlrEq6,
        percents: &[
            ("AveragePotential", 17.0),
            ("PolarSurfaceAreaExcludingPandS", -24.59),
            ("MomInertiaX", -33.57),
            ("chiV2", -24.83),
        ],
    },
    ReferenceContributions {
        label: FixtureLabel::PcrEq7,
        percents: &[
            ("AveragePotential", 27.96),
            ("PolarSurfaceAreaIncludingPandS", -19.08),
            ("Quadrupole3", -21.88),
            ("OxygensCount", -16.51),
            ("HydrogensCount", -14.57),
        ],
    },
];

pub const PIC50_TOLERANCE: f64 = 0.01;
pub const RESIDUAL_TOLERANCE: f64 = 0.001;
pub const F_TOLERANCE: f64 = 0.1;
pub const CONTRIBUTION_SUM_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditCategory {
    Pic50,
    Residual,
    FTest,
    DegreesOfFreedom,
    ContributionSum,
    ContributionSign,
}

impl AuditCategory {
    fn as_str(self) -> &'static str {
        match self {
            AuditCategory::Pic50 => "pic50",
            AuditCategory::Residual => "residual",
            AuditCategory::FTest => "f_test",
            AuditCategory::DegreesOfFreedom => "degrees_of_freedom",
            AuditCategory::ContributionSum => "contribution_sum",
            AuditCategory::ContributionSign => "contribution_sign",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub category: AuditCategory,
    pub item: String,
    pub reported: f64,
    pub recomputed: f64,
    pub delta: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn category(&self, category: AuditCategory) -> impl Iterator<Item = &AuditCheck> {
        self.checks.iter().filter(move |c| c.category == category)
    }

    pub fn failures(&self, category: AuditCategory) -> Vec<&AuditCheck> {
        self.category(category).filter(|c| !c.pass).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("category,item,reported,recomputed,delta,tolerance,pass\n");
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                c.category.as_str(),
                c.item,
                format_full(c.reported),
                format_full(c.recomputed),
                format_full(c.delta),
                format_full(c.tolerance),
                c.pass
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("reference data version {REFERENCE_DATA_VERSION}\n");
        let cats = [
            AuditCategory::Pic50,
            AuditCategory::Residual,
            AuditCategory::FTest,
            AuditCategory::DegreesOfFreedom,
            AuditCategory::ContributionSum,
            AuditCategory::ContributionSign,
        ];
        for cat in cats {
            let total = self.category(cat).count();
            let failed = self.failures(cat);
            let _ = writeln!(s, "{:<20} {:>2}/{:<2} pass", cat.as_str(), total - failed.len(), total);
            for c in failed {
                let _ = writeln!(
                    s,
                    "  FLAG {}: reported {:.4}, recomputed {:.4} (delta {:+.4})",
                    c.item, c.reported, c.recomputed, c.delta
                );
            }
        }
        s
    }
}

fn check(category: AuditCategory, item: String, reported: f64, recomputed: f64, tolerance: f64) -> AuditCheck {
    let delta = recomputed - reported;
    AuditCheck {
        category,
        item,
        reported,
        recomputed,
        delta,
        tolerance,
        pass: delta.abs() <= tolerance,
    }
}

/// Recompute every checkable number in the reference tables. Discrepancies
/// are flagged, never corrected.
pub fn audit_reference_tables() -> AuditReport {
    let mut checks = Vec::new();
    for r in &ACTIVITY_TABLE {
        let computed = pic50_from_ic50(r.ic50).expect("embedded IC50 values are positive");
        checks.push(check(
            AuditCategory::Pic50,
            format!("row {}", r.id),
            r.expt,
            computed,
            PIC50_TOLERANCE,
        ));
    }
    for r in &ACTIVITY_TABLE {
        checks.push(check(
            AuditCategory::Residual,
            format!("row {}", r.id),
            r.residual,
            r.expt - r.pred,
            RESIDUAL_TOLERANCE,
        ));
    }
    for s in &STATISTICS_TABLE {
        let f = f_statistic(s.r2, s.effective_parameters, s.n_train).unwrap_or(f64::NAN);
        checks.push(check(AuditCategory::FTest, s.method.to_string(), s.f, f, F_TOLERANCE));
        let df = s.n_train as f64 - s.effective_parameters as f64 - 1.0;
        checks.push(check(
            AuditCategory::DegreesOfFreedom,
            s.method.to_string(),
            s.df as f64,
            df,
            0.0,
        ));
    }
    for reference in &REFERENCE_CONTRIBUTIONS {
        let sum = absolute_percent_sum(reference.percents.iter().map(|(_, p)| *p));
        checks.push(check(
            AuditCategory::ContributionSum,
            reference.label.as_str().to_string(),
            100.0,
            sum,
            CONTRIBUTION_SUM_TOLERANCE,
        ));
        let model = load_fixture(reference.label.as_str()).expect("embedded fixture").model;
        for (name, pct) in reference.percents {
            // Percentages and coefficients use the same descriptor names.
            let coef = model
                .descriptor_names
                .iter()
                .position(|n| n == name)
                .map(|j| model.coefficients[j])
                .unwrap_or(f64::NAN);
            let agree = coef.signum() == pct.signum();
            checks.push(AuditCheck {
                category: AuditCategory::ContributionSign,
                item: format!("{} {}", reference.label.as_str(), name),
                reported: pct.signum(),
                recomputed: coef.signum(),
                delta: if agree { 0.0 } else { 2.0 },
                tolerance: 0.0,
                pass: agree,
            });
        }
    }
    AuditReport { checks }
}
