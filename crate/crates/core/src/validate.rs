//! Model statistics: internal (LOO), external (test set) and Y-randomization
//! validation, plus descriptor contribution percentages.

use std::fmt::{self, Write as _};

use log::warn;
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{format_full, Dataset, DescriptorTable};
use crate::error::{QsarError, Result};
use crate::regress::{Fitter, LinearModel};

/// q² above which a model counts as internally stable.
pub const Q2_ACCEPTANCE: f64 = 0.5;
/// Joint criteria for a predictive model.
pub const PREDICTIVE_R2: f64 = 0.6;
pub const PREDICTIVE_Q2: f64 = 0.6;
pub const PREDICTIVE_PRED_R2: f64 = 0.5;
pub const DEFAULT_PERMUTATIONS: usize = 100;

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(QsarError::Validation(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn sum_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sum_sq_about(a: &[f64], center: f64) -> f64 {
    a.iter().map(|v| (v - center) * (v - center)).sum()
}

/// Coefficient of determination. Constant observations give 0 (with a warning).
pub fn r_squared(y_obs: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_len(y_obs, y_pred)?;
    if y_obs.len() < 2 {
        return Err(QsarError::Size("r² needs at least 2 observations".into()));
    }
    let mean = y_obs.iter().sum::<f64>() / y_obs.len() as f64;
    let ss_tot = sum_sq_about(y_obs, mean);
    if ss_tot == 0.0 {
        warn!("r² undefined for constant observations; reporting 0");
        return Ok(0.0);
    }
    Ok(1.0 - sum_sq_diff(y_obs, y_pred) / ss_tot)
}

/// External predictive r² relative to the training-set mean.
pub fn pred_r2(y_test_obs: &[f64], y_test_pred: &[f64], y_train_mean: f64) -> Result<f64> {
    check_len(y_test_obs, y_test_pred)?;
    if y_test_obs.is_empty() {
        return Err(QsarError::Size("pred_r² needs a non-empty test set".into()));
    }
    let ss = sum_sq_about(y_test_obs, y_train_mean);
    if ss == 0.0 {
        return Err(QsarError::DegenerateTestSet);
    }
    Ok(1.0 - sum_sq_diff(y_test_obs, y_test_pred) / ss)
}

/// Fisher F for a fit with `p` effective parameters on `n` observations.
/// r² = 1 gives `f64::INFINITY`.
pub fn f_statistic(r2: f64, p: usize, n: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&r2) {
        return Err(QsarError::Domain(format!("F-test needs 0 <= r² <= 1, got {r2}")));
    }
    if p == 0 || n < p + 2 {
        return Err(QsarError::Domain(format!(
            "F-test needs p >= 1 and n - p - 1 >= 1 (p = {p}, n = {n})"
        )));
    }
    if r2 == 1.0 {
        warn!("r² = 1: F-test is infinite");
        return Ok(f64::INFINITY);
    }
    let df = (n - p - 1) as f64;
    Ok((r2 / p as f64) / ((1.0 - r2) / df))
}

/// sqrt(RSS / DF).
pub fn standard_error(y_obs: &[f64], y_pred: &[f64], df: usize) -> Result<f64> {
    check_len(y_obs, y_pred)?;
    if df < 1 {
        return Err(QsarError::Domain("standard error needs DF >= 1".into()));
    }
    Ok((sum_sq_diff(y_obs, y_pred) / df as f64).sqrt())
}

pub fn z_score(h: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(QsarError::DegenerateDistribution);
    }
    Ok((h - mu) / sigma)
}

/// Significance bound read from the one-tailed normal critical values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlphaBound {
    Below0001,
    Below001,
    Below005,
    Below010,
    NotSignificant,
}

impl AlphaBound {
    const TABLE: [(f64, AlphaBound); 4] = [
        (3.10, AlphaBound::Below0001),
        (2.33, AlphaBound::Below001),
        (1.65, AlphaBound::Below005),
        (1.28, AlphaBound::Below010),
    ];

    pub fn from_z(z: f64) -> Self {
        Self::TABLE
            .iter()
            .find(|(crit, _)| z > *crit)
            .map(|(_, b)| *b)
            .unwrap_or(AlphaBound::NotSignificant)
    }
}

impl fmt::Display for AlphaBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlphaBound::Below0001 => "< 0.001",
            AlphaBound::Below001 => "< 0.01",
            AlphaBound::Below005 => "< 0.05",
            AlphaBound::Below010 => "< 0.10",
            AlphaBound::NotSignificant => ">= 0.10",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alpha {
    /// One-tailed standard-normal tail probability P(Z > z).
    pub tail: f64,
    pub bound: AlphaBound,
}

pub fn alpha_from_z(z: f64) -> Alpha {
    Alpha {
        tail: 0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2),
        bound: AlphaBound::from_z(z),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooOutcome {
    pub q2: f64,
    /// Prediction for each molecule from the model fitted without it.
    pub predictions: Vec<f64>,
    pub press: f64,
}

impl LooOutcome {
    pub fn acceptable(&self) -> bool {
        self.q2 > Q2_ACCEPTANCE
    }
}

/// Leave-one-out cross-validated q² using the full-set mean in the denominator.
pub fn loo_q2(ds: &Dataset, fitter: &dyn Fitter) -> Result<LooOutcome> {
    let n = ds.n();
    if n < 3 {
        return Err(QsarError::Size(format!("LOO needs at least 3 molecules, got {n}")));
    }
    let predictions = (0..n)
        .into_par_iter()
        .map(|left_out| {
            let rows: Vec<usize> = (0..n).filter(|&i| i != left_out).collect();
            let fold = ds.select_rows(&rows);
            let wrap = |e| QsarError::Fold {
                molecule: ds.ids()[left_out].clone(),
                source: Box::new(e),
            };
            let model = fitter.fit(&fold).map_err(wrap)?;
            let row = ds.x().rows(left_out, 1).into_owned();
            Ok(model.predict_matrix(&row).map_err(wrap)?[0])
        })
        .collect::<Result<Vec<f64>>>()?;
    let y = ds.y().as_slice();
    let press = sum_sq_diff(y, &predictions);
    let ss = sum_sq_about(y, ds.y_mean());
    let q2 = if ss == 0.0 {
        warn!("q² undefined for constant activities; reporting 0");
        0.0
    } else {
        1.0 - press / ss
    };
    Ok(LooOutcome { q2, predictions, press })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationReport {
    pub n_permutations: usize,
    pub n_failed: usize,
    pub seed: u64,
    pub true_r2: f64,
    pub true_q2: f64,
    pub best_ran_r2: f64,
    pub best_ran_q2: f64,
    pub mean_r2: f64,
    pub std_r2: f64,
    pub mean_q2: f64,
    pub std_q2: f64,
    pub z_r2: f64,
    pub z_q2: f64,
    pub alpha_r2: Alpha,
    pub alpha_q2: Alpha,
    pub permuted_r2: Vec<f64>,
    pub permuted_q2: Vec<f64>,
}

impl RandomizationReport {
    /// Less than a 1% chance that the q² model arose by chance.
    pub fn significant_at_1pct(&self) -> bool {
        self.alpha_q2.tail < 0.01
    }
}

fn sample_mean_std(v: &[f64]) -> (f64, f64) {
    crate::preprocess::mean_std(&DVector::from_column_slice(v))
}

/// Y-scrambling: refit the same descriptors against permuted activities.
///
/// Permutations are drawn sequentially from `seed` before any fitting, so the
/// report does not depend on how folds are scheduled across threads.
pub fn randomization_test(
    ds: &Dataset,
    fitter: &dyn Fitter,
    n_permutations: usize,
    seed: u64,
) -> Result<RandomizationReport> {
    if n_permutations < 10 {
        return Err(QsarError::Config(format!(
            "randomization needs at least 10 permutations, got {n_permutations}"
        )));
    }
    let y = ds.y().as_slice();
    let true_model = fitter.fit(ds)?;
    let true_pred = true_model.predict_matrix(ds.x())?;
    let true_r2 = r_squared(y, true_pred.as_slice())?;
    let true_q2 = loo_q2(ds, fitter)?.q2;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let permutations: Vec<Vec<f64>> = (0..n_permutations)
        .map(|_| {
            let mut perm = y.to_vec();
            perm.shuffle(&mut rng);
            perm
        })
        .collect();

    let outcomes: Vec<Option<(f64, f64)>> = permutations
        .into_par_iter()
        .map(|perm| {
            let shuffled = ds.with_activities(DVector::from_vec(perm.clone())).ok()?;
            let model = fitter.fit(&shuffled).ok()?;
            let pred = model.predict_matrix(shuffled.x()).ok()?;
            let r2 = r_squared(&perm, pred.as_slice()).ok()?;
            let q2 = loo_q2(&shuffled, fitter).ok()?.q2;
            Some((r2, q2))
        })
        .collect();
    let n_failed = outcomes.iter().filter(|o| o.is_none()).count();
    if n_failed > 0 {
        warn!("{n_failed} of {n_permutations} permuted fits failed and were excluded");
    }
    let (permuted_r2, permuted_q2): (Vec<f64>, Vec<f64>) = outcomes.into_iter().flatten().unzip();
    if permuted_r2.len() < 2 {
        return Err(QsarError::DegenerateDistribution);
    }
    let (mean_r2, std_r2) = sample_mean_std(&permuted_r2);
    let (mean_q2, std_q2) = sample_mean_std(&permuted_q2);
    let z_r2 = z_score(true_r2, mean_r2, std_r2)?;
    let z_q2 = z_score(true_q2, mean_q2, std_q2)?;
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RandomizationReport {
        n_permutations,
        n_failed,
        seed,
        true_r2,
        true_q2,
        best_ran_r2: max(&permuted_r2),
        best_ran_q2: max(&permuted_q2),
        mean_r2,
        std_r2,
        mean_q2,
        std_q2,
        z_r2,
        z_q2,
        alpha_r2: alpha_from_z(z_r2),
        alpha_q2: alpha_from_z(z_q2),
        permuted_r2,
        permuted_q2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub descriptor: String,
    /// Signed percentage; absolute values over a model sum to 100.
    pub percent: f64,
}

/// Share of each descriptor in the model: 100 * b_j s_j / sum_i |b_i s_i|,
/// with s_j the training-set standard deviation of descriptor j.
pub fn contributions(model: &LinearModel, x_train: &DescriptorTable) -> Result<Vec<Contribution>> {
    let x = x_train.columns_by_name(&model.descriptor_names)?;
    if x.nrows() < 2 {
        return Err(QsarError::Size("contributions need at least 2 training rows".into()));
    }
    let scaled: Vec<f64> = x
        .column_iter()
        .zip(&model.coefficients)
        .map(|(col, b)| b * crate::preprocess::mean_std(&col.into_owned()).1)
        .collect();
    let total: f64 = scaled.iter().map(|v| v.abs()).sum();
    if !(total > 0.0) {
        return Err(QsarError::UndefinedContribution);
    }
    Ok(model
        .descriptor_names
        .iter()
        .zip(&scaled)
        .map(|(name, v)| Contribution {
            descriptor: name.clone(),
            percent: 100.0 * v / total,
        })
        .collect())
}

pub fn absolute_percent_sum(percents: impl IntoIterator<Item = f64>) -> f64 {
    percents.into_iter().map(f64::abs).sum()
}

/// Every statistic reported for a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n: usize,
    pub n_test: usize,
    pub k_descriptors: usize,
    pub n_components: usize,
    pub df: i64,
    pub r2: f64,
    pub r2_se: Option<f64>,
    pub q2: f64,
    pub q2_se: Option<f64>,
    pub f: Option<f64>,
    pub pred_r2: Option<f64>,
    pub pred_r2_se: Option<f64>,
    pub randomization: Option<RandomizationReport>,
}

impl ValidationReport {
    pub fn q2_acceptable(&self) -> bool {
        self.q2 > Q2_ACCEPTANCE
    }

    /// r² > 0.6, q² > 0.6 and pred_r² > 0.5.
    pub fn predictive(&self) -> bool {
        self.r2 > PREDICTIVE_R2 && self.q2 > PREDICTIVE_Q2 && self.pred_r2.is_some_and(|p| p > PREDICTIVE_PRED_R2)
    }

    /// (label, value) rows in reference-table order.
    pub fn rows(&self) -> Vec<(&'static str, Option<f64>)> {
        let rnd = self.randomization.as_ref();
        vec![
            ("n", Some(self.n as f64)),
            ("DF", Some(self.df as f64)),
            ("r²", Some(self.r2)),
            ("q²", Some(self.q2)),
            ("F-test", self.f),
            ("best_ran_r²", rnd.map(|r| r.best_ran_r2)),
            ("best_ran_q²", rnd.map(|r| r.best_ran_q2)),
            ("Zscore_ran_r²", rnd.map(|r| r.z_r2)),
            ("Zscore_ran_q²", rnd.map(|r| r.z_q2)),
            ("α_ran_r²", rnd.map(|r| r.alpha_r2.tail)),
            ("α_ran_q²", rnd.map(|r| r.alpha_q2.tail)),
            ("r²_se", self.r2_se),
            ("q²_se", self.q2_se),
            ("pred_r²", self.pred_r2),
            ("pred_r²se", self.pred_r2_se),
        ]
    }

    /// Fixed-width table at 4 decimals (5 for randomization statistics).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (label, value) in self.rows() {
            let prec = if label.contains("ran") { 5 } else { 4 };
            let cell = match value {
                None => "NA".to_string(),
                Some(v) if label == "n" || label == "DF" => format!("{v:.0}"),
                Some(v) => format!("{v:.prec$}"),
            };
            let _ = writeln!(s, "{label:<16}{cell:>12}");
        }
        if let Some(r) = &self.randomization {
            let _ = writeln!(s, "α bound (r²)    {:>12}", r.alpha_r2.bound.to_string());
            let _ = writeln!(s, "α bound (q²)    {:>12}", r.alpha_q2.bound.to_string());
        }
        let _ = writeln!(
            s,
            "q² > {Q2_ACCEPTANCE} acceptable: {}",
            if self.q2_acceptable() { "yes" } else { "no" }
        );
        let _ = writeln!(
            s,
            "predictive (r² > 0.6, q² > 0.6, pred_r² > 0.5): {}",
            if self.predictive() { "yes" } else { "no" }
        );
        s
    }

    /// `statistic,value` CSV at full precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("statistic,value\n");
        for (label, value) in self.rows() {
            let cell = value.map(format_full).unwrap_or_else(|| "NA".into());
            let _ = writeln!(s, "{label},{cell}");
        }
        s
    }
}

/// Fit on `train`, then compute internal, external and (optionally)
/// randomization statistics.
pub fn validate_model(
    train: &Dataset,
    test: Option<&Dataset>,
    fitter: &dyn Fitter,
    randomization: Option<(usize, u64)>,
) -> Result<(LinearModel, ValidationReport)> {
    let model = fitter.fit(train)?;
    let y = train.y().as_slice();
    let pred = model.predict_matrix(train.x())?;
    let r2 = r_squared(y, pred.as_slice())?;
    let n = train.n();
    let p = model.effective_parameters();
    let df = n as i64 - p as i64 - 1;
    let loo = loo_q2(train, fitter)?;
    let (r2_se, q2_se, f) = if df >= 1 {
        (
            Some(standard_error(y, pred.as_slice(), df as usize)?),
            Some(standard_error(y, &loo.predictions, df as usize)?),
            f_statistic(r2.clamp(0.0, 1.0), p, n).ok(),
        )
    } else {
        (None, None, None)
    };
    let (pred_r2_val, pred_r2_se, n_test) = match test {
        Some(t) if t.n() > 0 => {
            let x_test = t.table().columns_by_name(&model.descriptor_names)?;
            let test_pred = model.predict_matrix(&x_test)?;
            let obs = t.y().as_slice();
            (
                Some(pred_r2(obs, test_pred.as_slice(), train.y_mean())?),
                Some(standard_error(obs, test_pred.as_slice(), t.n())?),
                t.n(),
            )
        }
        _ => (None, None, 0),
    };
    let randomization = match randomization {
        Some((perms, seed)) => Some(randomization_test(train, fitter, perms, seed)?),
        None => None,
    };
    let report = ValidationReport {
        n,
        n_test,
        k_descriptors: model.descriptor_names.len(),
        n_components: model.n_components,
        df,
        r2,
        r2_se,
        q2: loo.q2,
        q2_se,
        f,
        pred_r2: pred_r2_val,
        pred_r2_se,
        randomization,
    };
    Ok((model, report))
}
