//! MLR, PCR and PLS regression engines.
//!
//! All three fit in autoscaled descriptor space against a centered response
//! and report coefficients back-transformed to the original descriptor units,
//! so a fitted model is always `y = c + sum_j b_j x_j`.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DescriptorTable};
use crate::error::{QsarError, Result};
use crate::preprocess::{autoscale, ScalingParams};
use crate::validate::{f_statistic, loo_q2, r_squared, standard_error};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;
const NIPALS_TOLERANCE: f64 = 1e-12;
const NIPALS_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mlr,
    Pcr,
    Pls,
}

impl Method {
    pub fn uses_components(self) -> bool {
        !matches!(self, Method::Mlr)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Mlr => "MLR",
            Method::Pcr => "PCR",
            Method::Pls => "PLS",
        })
    }
}

impl FromStr for Method {
    type Err = QsarError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlr" => Ok(Method::Mlr),
            "pcr" => Ok(Method::Pcr),
            "pls" => Ok(Method::Pls),
            other => Err(QsarError::Config(format!(
                "unknown method '{other}' (expected mlr, pcr or pls)"
            ))),
        }
    }
}

/// Resubstitution statistics on the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainFit {
    pub r2: f64,
    /// `None` when DF < 1.
    pub se: Option<f64>,
    pub f: Option<f64>,
    pub df: i64,
}

/// Latent-space form of a PCR/PLS model: scores are `t = z R` for autoscaled
/// descriptors `z`, and `y = y_mean + t . q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentModel {
    /// One rotation vector (length m) per component.
    pub rotations: Vec<Vec<f64>>,
    pub y_loadings: Vec<f64>,
    pub y_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub method: Method,
    pub descriptor_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// 0 for MLR.
    pub n_components: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<LatentModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fit: Option<TrainFit>,
}

impl LinearModel {
    /// p in DF = n - p - 1: descriptors for MLR, components for PCR/PLS.
    pub fn effective_parameters(&self) -> usize {
        match self.method {
            Method::Mlr => self.descriptor_names.len(),
            Method::Pcr | Method::Pls => self.n_components,
        }
    }

    /// Predict from a matrix whose columns are already in `descriptor_names` order.
    pub fn predict_matrix(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.coefficients.len() {
            return Err(QsarError::Schema(format!(
                "model expects {} descriptors, matrix has {} columns",
                self.coefficients.len(),
                x.ncols()
            )));
        }
        let b = DVector::from_column_slice(&self.coefficients);
        Ok((x * b).add_scalar(self.intercept))
    }

    /// Predict through the latent representation instead of the coefficients.
    pub fn predict_latent(&self, x: &DMatrix<f64>) -> Option<DVector<f64>> {
        let latent = self.latent.as_ref()?;
        let scaling = self.scaling.as_ref()?;
        let z = scaling.apply(x);
        let mut y = DVector::from_element(x.nrows(), latent.y_mean);
        for (r, q) in latent.rotations.iter().zip(&latent.y_loadings) {
            let t = &z * DVector::from_column_slice(r);
            y.axpy(*q, &t, 1.0);
        }
        Some(y)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: LinearModel = serde_json::from_str(s)?;
        if model.coefficients.len() != model.descriptor_names.len() {
            return Err(QsarError::Validation(format!(
                "model has {} coefficients for {} descriptors",
                model.coefficients.len(),
                model.descriptor_names.len()
            )));
        }
        Ok(model)
    }
}

/// Predict activities for a descriptor table; columns are matched by name.
pub fn predict(model: &LinearModel, table: &DescriptorTable) -> Result<Vec<f64>> {
    let x = table.columns_by_name(&model.descriptor_names)?;
    Ok(model.predict_matrix(&x)?.iter().copied().collect())
}

/// Anything that can fit a model to a dataset: LOO, Y-randomization and
/// subset selection are all written against this.
pub trait Fitter: Sync {
    fn fit(&self, ds: &Dataset) -> Result<LinearModel>;
}

impl<F> Fitter for F
where
    F: Fn(&Dataset) -> Result<LinearModel> + Sync,
{
    fn fit(&self, ds: &Dataset) -> Result<LinearModel> {
        self(ds)
    }
}

/// A method plus its component count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitSpec {
    pub method: Method,
    pub n_components: usize,
}

impl FitSpec {
    pub fn mlr() -> Self {
        Self {
            method: Method::Mlr,
            n_components: 0,
        }
    }

    pub fn pcr(k: usize) -> Self {
        Self {
            method: Method::Pcr,
            n_components: k,
        }
    }

    pub fn pls(k: usize) -> Self {
        Self {
            method: Method::Pls,
            n_components: k,
        }
    }
}

impl Fitter for FitSpec {
    fn fit(&self, ds: &Dataset) -> Result<LinearModel> {
        let names = ds.descriptor_names();
        match self.method {
            Method::Mlr => fit_mlr(ds.x(), ds.y(), names),
            Method::Pcr => fit_pcr(ds.x(), ds.y(), names, self.n_components),
            Method::Pls => fit_pls(ds.x(), ds.y(), names, self.n_components),
        }
    }
}

fn check_shapes(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(QsarError::Validation(format!(
            "{} rows but {} activities",
            x.nrows(),
            y.len()
        )));
    }
    if x.ncols() != names.len() {
        return Err(QsarError::Validation(format!(
            "{} columns but {} descriptor names",
            x.ncols(),
            names.len()
        )));
    }
    if x.nrows() < 2 || x.ncols() == 0 {
        return Err(QsarError::Size(format!(
            "need at least 2 rows and 1 column, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(())
}

/// Singular values sorted descending with matching right singular vectors
/// (columns of the returned matrix), each sign-normalized.
fn sorted_svd(z: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let svd = z.clone().svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = DMatrix::zeros(z.ncols(), order.len());
    for (col, &i) in order.iter().enumerate() {
        let mut vec: DVector<f64> = v_t.row(i).transpose();
        normalize_sign(&mut vec);
        v.set_column(col, &vec);
    }
    (s, v)
}

/// Make the first non-negligible coordinate positive.
fn normalize_sign(v: &mut DVector<f64>) {
    let max = v.amax();
    if let Some(first) = v.iter().find(|c| c.abs() > 1e-12 * max) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
}

fn numerical_rank(s: &[f64]) -> usize {
    let max = s.first().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > RANK_TOLERANCE * max).count()
}

/// Map scaled-space coefficients back to original units.
fn back_transform(b_scaled: &DVector<f64>, scaling: &ScalingParams, y_mean: f64) -> (Vec<f64>, f64) {
    let coefs: Vec<f64> = b_scaled.iter().zip(&scaling.stds).map(|(b, s)| b / s).collect();
    let intercept = y_mean - coefs.iter().zip(&scaling.means).map(|(b, m)| b * m).sum::<f64>();
    (coefs, intercept)
}

fn train_fit(model: &LinearModel, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<TrainFit> {
    let pred = model.predict_matrix(x)?;
    let (obs, pred) = (y.as_slice(), pred.as_slice());
    let r2 = r_squared(obs, pred)?;
    let n = y.len();
    let p = model.effective_parameters();
    let df = n as i64 - p as i64 - 1;
    let (se, f) = if df >= 1 {
        let se = standard_error(obs, pred, df as usize)?;
        let f = f_statistic(r2.clamp(0.0, 1.0), p, n).ok();
        (Some(se), f)
    } else {
        (None, None)
    };
    Ok(TrainFit { r2, se, f, df })
}

/// Ordinary least squares via a Householder QR of the autoscaled design.
pub fn fit_mlr(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<LinearModel> {
    check_shapes(x, y, names)?;
    let (n, m) = x.shape();
    if n <= m + 1 {
        return Err(QsarError::Underdetermined { rows: n, columns: m });
    }
    let (z, scaling) = match autoscale(x) {
        Ok(scaled) => scaled,
        // a constant column is collinear with the intercept
        Err(QsarError::Validation(_)) => {
            return Err(QsarError::Singular {
                rank: m - 1,
                columns: m,
            })
        }
        Err(e) => return Err(e),
    };
    let (s, _) = sorted_svd(&z);
    let rank = numerical_rank(&s);
    if rank < m {
        return Err(QsarError::Singular { rank, columns: m });
    }
    let y_mean = y.mean();
    let yc = y.add_scalar(-y_mean);
    let qr = z.qr();
    let rhs = qr.q().transpose() * &yc;
    let b_scaled = qr
        .r()
        .solve_upper_triangular(&rhs)
        .ok_or(QsarError::Singular { rank, columns: m })?;
    let (coefficients, intercept) = back_transform(&b_scaled, &scaling, y_mean);
    let mut model = LinearModel {
        method: Method::Mlr,
        descriptor_names: names.to_vec(),
        coefficients,
        intercept,
        n_components: 0,
        scaling: Some(scaling),
        latent: None,
        train_fit: None,
    };
    model.train_fit = Some(train_fit(&model, x, y)?);
    Ok(model)
}

/// Principal component regression on the leading `n_components` components
/// of the autoscaled descriptors.
pub fn fit_pcr(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String], n_components: usize) -> Result<LinearModel> {
    check_shapes(x, y, names)?;
    let (z, scaling) = autoscale(x)?;
    let (s, v) = sorted_svd(&z);
    let rank = numerical_rank(&s);
    if n_components == 0 || n_components > rank {
        return Err(QsarError::Config(format!(
            "PCR needs 1..={rank} components for this matrix, got {n_components}"
        )));
    }
    let y_mean = y.mean();
    let yc = y.add_scalar(-y_mean);
    let mut rotations = Vec::with_capacity(n_components);
    let mut y_loadings = Vec::with_capacity(n_components);
    let mut b_scaled = DVector::zeros(z.ncols());
    for a in 0..n_components {
        let va = v.column(a).into_owned();
        let t = &z * &va;
        let gamma = t.dot(&yc) / t.norm_squared();
        b_scaled.axpy(gamma, &va, 1.0);
        rotations.push(va.as_slice().to_vec());
        y_loadings.push(gamma);
    }
    let (coefficients, intercept) = back_transform(&b_scaled, &scaling, y_mean);
    let mut model = LinearModel {
        method: Method::Pcr,
        descriptor_names: names.to_vec(),
        coefficients,
        intercept,
        n_components,
        scaling: Some(scaling),
        latent: Some(LatentModel {
            rotations,
            y_loadings,
            y_mean,
        }),
        train_fit: None,
    };
    model.train_fit = Some(train_fit(&model, x, y)?);
    Ok(model)
}

/// Weights, scores, X-loadings and y-loadings from single-response NIPALS.
#[derive(Debug, Clone)]
pub struct NipalsComponents {
    pub weights: DMatrix<f64>,
    pub scores: DMatrix<f64>,
    pub x_loadings: DMatrix<f64>,
    pub y_loadings: DVector<f64>,
}

/// Extract `k` PLS components from autoscaled `z` and centered `yc`.
pub fn nipals(z: &DMatrix<f64>, yc: &DVector<f64>, k: usize) -> Result<NipalsComponents> {
    let (n, m) = z.shape();
    let mut e = z.clone();
    let mut f = yc.clone();
    let mut weights = DMatrix::zeros(m, k);
    let mut scores = DMatrix::zeros(n, k);
    let mut x_loadings = DMatrix::zeros(m, k);
    let mut y_loadings = DVector::zeros(k);
    let initial = (z.transpose() * yc).norm();
    for a in 0..k {
        let component = a + 1;
        let mut u = f.clone();
        let mut w_prev: Option<DVector<f64>> = None;
        let mut w = DVector::zeros(m);
        for _ in 0..NIPALS_MAX_ITER {
            w = e.transpose() * &u;
            let norm = w.norm();
            if !(norm > NIPALS_TOLERANCE * initial.max(1.0)) || !norm.is_finite() {
                return Err(QsarError::Extraction { component });
            }
            w /= norm;
            let t = &e * &w;
            let tt = t.norm_squared();
            if !(tt > 0.0) {
                return Err(QsarError::Extraction { component });
            }
            let q = f.dot(&t) / tt;
            if q == 0.0 {
                return Err(QsarError::Extraction { component });
            }
            u = &f / q;
            if let Some(prev) = &w_prev {
                if (&w - prev).norm() < NIPALS_TOLERANCE {
                    break;
                }
            }
            w_prev = Some(w.clone());
        }
        normalize_sign(&mut w);
        let t = &e * &w;
        let tt = t.norm_squared();
        let p = e.transpose() * &t / tt;
        let q = f.dot(&t) / tt;
        e -= &t * p.transpose();
        f.axpy(-q, &t, 1.0);
        weights.set_column(a, &w);
        scores.set_column(a, &t);
        x_loadings.set_column(a, &p);
        y_loadings[a] = q;
    }
    Ok(NipalsComponents {
        weights,
        scores,
        x_loadings,
        y_loadings,
    })
}

/// Partial least squares (single response) by NIPALS.
pub fn fit_pls(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String], n_components: usize) -> Result<LinearModel> {
    check_shapes(x, y, names)?;
    let (n, m) = x.shape();
    let limit = m.min(n - 1);
    if n_components == 0 || n_components > limit {
        return Err(QsarError::Config(format!(
            "PLS needs 1..={limit} components for a {n}x{m} matrix, got {n_components}"
        )));
    }
    let (z, scaling) = autoscale(x)?;
    let y_mean = y.mean();
    let yc = y.add_scalar(-y_mean);
    let comps = nipals(&z, &yc, n_components)?;
    // R = W (P'W)^-1 maps autoscaled descriptors straight to scores.
    let ptw = comps.x_loadings.transpose() * &comps.weights;
    let ptw_inv = ptw.try_inverse().ok_or(QsarError::Extraction {
        component: n_components,
    })?;
    let rot = &comps.weights * ptw_inv;
    let b_scaled = &rot * &comps.y_loadings;
    let (coefficients, intercept) = back_transform(&b_scaled, &scaling, y_mean);
    let mut model = LinearModel {
        method: Method::Pls,
        descriptor_names: names.to_vec(),
        coefficients,
        intercept,
        n_components,
        scaling: Some(scaling),
        latent: Some(LatentModel {
            rotations: rot.column_iter().map(|c| c.iter().copied().collect()).collect(),
            y_loadings: comps.y_loadings.iter().copied().collect(),
            y_mean,
        }),
        train_fit: None,
    };
    model.train_fit = Some(train_fit(&model, x, y)?);
    Ok(model)
}

/// Component count in `1..=max_components` with the highest LOO q²; ties go
/// to fewer components.
pub fn select_components(ds: &Dataset, method: Method, max_components: usize) -> Result<usize> {
    if max_components == 0 {
        return Err(QsarError::Config("max_components must be at least 1".into()));
    }
    if method == Method::Mlr {
        return Err(QsarError::Config(
            "component selection applies to PCR and PLS only".into(),
        ));
    }
    // Each LOO fold has n - 1 rows, whose centered rank is at most n - 2.
    let upper = max_components.min(ds.m()).min(ds.n().saturating_sub(2));
    if upper == 0 {
        return Err(QsarError::Size(format!(
            "cannot select components for {} molecules x {} descriptors",
            ds.n(),
            ds.m()
        )));
    }
    let mut best = (1, f64::NEG_INFINITY);
    for k in 1..=upper {
        let spec = FitSpec {
            method,
            n_components: k,
        };
        let q2 = loo_q2(ds, &spec)?.q2;
        if q2 > best.1 {
            best = (k, q2);
        }
    }
    if best.1 == f64::NEG_INFINITY {
        warn!("no component count produced a finite q2; defaulting to 1");
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(m: usize) -> Vec<String> {
        (1..=m).map(|j| format!("d{j}")).collect()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn mlr_exact_line() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![2.0, 4.0, 6.0]);
        let model = fit_mlr(&x, &y, &names(1)).unwrap();
        assert_abs_diff_eq!(model.coefficients[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(model.intercept, 0.0, epsilon = 1e-12);
        let fit = model.train_fit.unwrap();
        assert_abs_diff_eq!(fit.r2, 1.0, epsilon = 1e-12);
        assert_eq!(fit.df, 1);
    }

    #[test]
    fn mlr_constant_response() {
        let x = DMatrix::from_column_slice(4, 2, &[1.0, 2.0, 3.0, 5.0, 0.5, 0.1, 0.9, 0.2]);
        let y = DVector::from_element(4, 4.2);
        let model = fit_mlr(&x, &y, &names(2)).unwrap();
        for b in &model.coefficients {
            assert_abs_diff_eq!(*b, 0.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(model.intercept, 4.2, epsilon = 1e-12);
        assert_eq!(model.train_fit.unwrap().r2, 0.0);
    }

    #[test]
    fn mlr_recovers_planted_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_matrix(&mut rng, 10, 3);
        let b = DVector::from_vec(vec![1.5, -0.25, 3.0]);
        let y = (&x * &b).add_scalar(0.75);
        let model = fit_mlr(&x, &y, &names(3)).unwrap();
        for (got, want) in model.coefficients.iter().zip(b.iter()) {
            assert_abs_diff_eq!(*got, *want, epsilon = 1e-8);
        }
        assert_abs_diff_eq!(model.intercept, 0.75, epsilon = 1e-8);
    }

    #[test]
    fn mlr_rank_deficient_and_underdetermined() {
        let x = DMatrix::from_fn(6, 3, |i, j| match j {
            0 => i as f64,
            1 => (i * i) as f64,
            _ => i as f64 + (i * i) as f64,
        });
        let y = DVector::from_fn(6, |i, _| i as f64);
        assert!(matches!(
            fit_mlr(&x, &y, &names(3)),
            Err(QsarError::Singular { rank: 2, columns: 3 })
        ));
        let x = DMatrix::from_fn(3, 2, |i, j| (i + j * j) as f64 * 0.7 + (i * j) as f64);
        let y = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        assert!(matches!(
            fit_mlr(&x, &y, &names(2)),
            Err(QsarError::Underdetermined { .. })
        ));
        let msg = QsarError::Singular { rank: 2, columns: 3 }.to_string();
        assert!(msg.contains("PCR or PLS"));
    }

    #[test]
    fn mlr_residuals_orthogonal_to_descriptors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_matrix(&mut rng, 15, 4);
        let y = DVector::from_fn(15, |_, _| rng.random_range(0.0..5.0));
        let model = fit_mlr(&x, &y, &names(4)).unwrap();
        let resid = y - model.predict_matrix(&x).unwrap();
        assert_abs_diff_eq!(resid.sum(), 0.0, epsilon = 1e-8);
        for col in x.column_iter() {
            assert_abs_diff_eq!(col.dot(&resid), 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn pcr_full_components_equals_mlr() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 12, 4);
        let y = DVector::from_fn(12, |_, _| rng.random_range(0.0..5.0));
        let mlr = fit_mlr(&x, &y, &names(4)).unwrap();
        let pcr = fit_pcr(&x, &y, &names(4), 4).unwrap();
        for (a, b) in mlr.coefficients.iter().zip(&pcr.coefficients) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
        assert_abs_diff_eq!(mlr.intercept, pcr.intercept, epsilon = 1e-8);
    }

    #[test]
    fn pcr_survives_collinearity_where_mlr_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = random_matrix(&mut rng, 10, 2);
        let x = DMatrix::from_fn(10, 3, |i, j| match j {
            2 => base[(i, 0)] + base[(i, 1)],
            _ => base[(i, j)],
        });
        let y = DVector::from_fn(10, |i, _| base[(i, 0)] * 2.0 + 1.0);
        assert!(matches!(fit_mlr(&x, &y, &names(3)), Err(QsarError::Singular { .. })));
        let pcr = fit_pcr(&x, &y, &names(3), 1).unwrap();
        assert!(pcr.coefficients.iter().all(|b| b.is_finite()));
        assert!(matches!(fit_pcr(&x, &y, &names(3), 3), Err(QsarError::Config(_))));
    }

    #[test]
    fn pcr_scores_uncorrelated_with_decreasing_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_matrix(&mut rng, 20, 5);
        let y = DVector::from_fn(20, |_, _| rng.random::<f64>());
        let model = fit_pcr(&x, &y, &names(5), 5).unwrap();
        let z = model.scaling.as_ref().unwrap().apply(&x);
        let latent = model.latent.as_ref().unwrap();
        let t: Vec<DVector<f64>> = latent
            .rotations
            .iter()
            .map(|r| &z * DVector::from_column_slice(r))
            .collect();
        for a in 0..5 {
            for b in (a + 1)..5 {
                assert_abs_diff_eq!(t[a].dot(&t[b]), 0.0, epsilon = 1e-8);
            }
            if a > 0 {
                assert!(t[a].norm_squared() <= t[a - 1].norm_squared() + 1e-10);
            }
        }
    }

    #[test]
    fn pls_univariate_equals_mlr() {
        let x = DMatrix::from_column_slice(5, 1, &[0.3, 1.7, 2.2, 4.0, 5.1]);
        let y = DVector::from_vec(vec![1.0, 2.5, 2.9, 5.2, 5.8]);
        let mlr = fit_mlr(&x, &y, &names(1)).unwrap();
        let pls = fit_pls(&x, &y, &names(1), 1).unwrap();
        assert_abs_diff_eq!(mlr.coefficients[0], pls.coefficients[0], epsilon = 1e-10);
        assert_abs_diff_eq!(mlr.intercept, pls.intercept, epsilon = 1e-10);
    }

    #[test]
    fn pls_full_rank_equals_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_matrix(&mut rng, 14, 5);
        let y = DVector::from_fn(14, |_, _| rng.random_range(3.0..7.0));
        let mlr = fit_mlr(&x, &y, &names(5)).unwrap();
        let pls = fit_pls(&x, &y, &names(5), 5).unwrap();
        for (a, b) in mlr.coefficients.iter().zip(&pls.coefficients) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn pls_collapse_names_component() {
        let x = DMatrix::from_column_slice(4, 2, &[1.0, 2.0, 3.0, 4.0, 2.0, 1.0, 4.0, 3.0]);
        let y = DVector::from_element(4, 5.0);
        assert!(matches!(
            fit_pls(&x, &y, &names(2), 1),
            Err(QsarError::Extraction { component: 1 })
        ));
        // y exactly on the first PLS direction leaves nothing for a second one
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let x = DMatrix::from_column_slice(4, 2, &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.5]);
        match fit_pls(&x, &y, &names(2), 2) {
            Ok(_) | Err(QsarError::Extraction { component: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pls_nesting_and_orthogonal_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = random_matrix(&mut rng, 16, 6);
        let y = DVector::from_fn(16, |i, _| x[(i, 0)] - 0.5 * x[(i, 3)] + rng.random_range(-0.1..0.1));
        let (z, _) = autoscale(&x).unwrap();
        let yc = y.add_scalar(-y.mean());
        let three = nipals(&z, &yc, 3).unwrap();
        let two = nipals(&z, &yc, 2).unwrap();
        assert_abs_diff_eq!(three.weights.columns(0, 2).into_owned(), two.weights, epsilon = 1e-12);
        assert_abs_diff_eq!(three.scores.columns(0, 2).into_owned(), two.scores, epsilon = 1e-12);
        let tt = three.scores.transpose() * &three.scores;
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    assert_abs_diff_eq!(tt[(a, b)], 0.0, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn latent_and_coefficient_predictions_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x = random_matrix(&mut rng, 12, 4).map(|v| 10.0 * v + 3.0);
        let y = DVector::from_fn(12, |_, _| rng.random_range(3.0..7.0));
        let x_new = random_matrix(&mut rng, 5, 4);
        for model in [
            fit_pcr(&x, &y, &names(4), 2).unwrap(),
            fit_pls(&x, &y, &names(4), 3).unwrap(),
        ] {
            let a = model.predict_matrix(&x_new).unwrap();
            let b = model.predict_latent(&x_new).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            let fit = model.train_fit.unwrap();
            assert_eq!(fit.df, 12 - model.n_components as i64 - 1);
        }
    }

    #[test]
    fn predict_matches_by_name() {
        let model = LinearModel {
            method: Method::Mlr,
            descriptor_names: vec!["a".into(), "b".into()],
            coefficients: vec![2.0, -1.0],
            intercept: 0.5,
            n_components: 0,
            scaling: None,
            latent: None,
            train_fit: None,
        };
        let table = DescriptorTable::new(
            vec!["m1".into()],
            vec!["b".into(), "junk".into(), "a".into()],
            DMatrix::from_row_slice(1, 3, &[4.0, 99.0, 3.0]),
        )
        .unwrap();
        assert_eq!(predict(&model, &table).unwrap(), vec![0.5 + 6.0 - 4.0]);
        let missing =
            DescriptorTable::new(vec!["m1".into()], vec!["a".into()], DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!(matches!(predict(&model, &missing), Err(QsarError::Schema(_))));
    }

    #[test]
    fn constant_model_predicts_intercept() {
        let model = LinearModel {
            method: Method::Mlr,
            descriptor_names: names(3),
            coefficients: vec![0.0; 3],
            intercept: 5.0,
            n_components: 0,
            scaling: None,
            latent: None,
            train_fit: None,
        };
        let x = DMatrix::from_fn(4, 3, |i, j| (i * 7 + j) as f64);
        assert!(model.predict_matrix(&x).unwrap().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn model_json_round_trip() {
        let x = DMatrix::from_fn(8, 3, |i, j| ((i * 3 + j * 5) % 7) as f64 + 0.1 * i as f64);
        let y = DVector::from_fn(8, |i, _| i as f64 * 0.37);
        let model = fit_pls(&x, &y, &names(3), 2).unwrap();
        let back = LinearModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn select_components_single_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let latent: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loadings = [1.0, 0.8, -0.6, 0.4];
        let x = DMatrix::from_fn(20, 4, |i, j| {
            latent[i] * loadings[j] + 0.01 * rng.random_range(-1.0..1.0)
        });
        let y = DVector::from_fn(20, |i, _| 2.0 * latent[i] + 5.0 + 0.3 * rng.random_range(-1.0..1.0));
        let ds = Dataset::from_matrix(x, y).unwrap();
        for method in [Method::Pcr, Method::Pls] {
            let k = select_components(&ds, method, 4).unwrap();
            // exhaustive scan
            let scores: Vec<f64> = (1..=4)
                .map(|k| {
                    loo_q2(
                        &ds,
                        &FitSpec {
                            method,
                            n_components: k,
                        },
                    )
                    .unwrap()
                    .q2
                })
                .collect();
            let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(scores[k - 1], best);
            assert_eq!(k, 1, "{method}: {scores:?}");
            assert_eq!(select_components(&ds, method, 1).unwrap(), 1);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn r2_non_decreasing_in_components(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_matrix(&mut rng, 15, 5);
            let y = DVector::from_fn(15, |_, _| rng.random_range(0.0..3.0));
            let mut prev = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for k in 1..=5 {
                let pcr = fit_pcr(&x, &y, &names(5), k).unwrap().train_fit.unwrap().r2;
                let pls = fit_pls(&x, &y, &names(5), k).unwrap().train_fit.unwrap().r2;
                prop_assert!(pcr >= prev.0 - 1e-10 && pls >= prev.1 - 1e-10);
                prev = (pcr, pls);
            }
            let mut prev = f64::NEG_INFINITY;
            for m in 1..=5 {
                let xm = x.columns(0, m).into_owned();
                let r2 = fit_mlr(&xm, &y, &names(m)).unwrap().train_fit.unwrap().r2;
                prop_assert!(r2 >= prev - 1e-10);
                prev = r2;
            }
        }

        #[test]
        fn prediction_invariant_to_column_permutation(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_matrix(&mut rng, 10, 3);
            let y = DVector::from_fn(10, |_, _| rng.random_range(0.0..3.0));
            let model = fit_pls(&x, &y, &names(3), 2).unwrap();
            let t1 = DescriptorTable::new(names(10).iter().map(|s| s.replace('d', "m")).collect(), names(3), x.clone()).unwrap();
            let perm = [2usize, 0, 1];
            let t2 = DescriptorTable::new(
                t1.ids().to_vec(),
                perm.iter().map(|&j| names(3)[j].clone()).collect(),
                x.select_columns(&perm),
            ).unwrap();
            let a = predict(&model, &t1).unwrap();
            let b = predict(&model, &t2).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
