//! Descriptor-matrix cleanup and column scaling.
//!
//! Cleanup runs in a fixed order: constant columns first, then
//! cross-correlated columns. Columns are scanned left to right and a column is
//! dropped when it correlates (|r| >= threshold) with an earlier column that
//! was kept, so the result depends only on the input column order.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{QsarError, Result};

pub const DEFAULT_CONSTANT_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_CORRELATION_THRESHOLD: f64 = 0.99;

/// Per-column means and sample standard deviations (divisor n - 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl ScalingParams {
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (mu, sd) = (self.means[j], self.stds[j]);
            col.apply(|v| *v = (*v - mu) / sd);
        }
        out
    }
}

fn column_mean_std(col: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = col.clone().sum::<f64>() / n as f64;
    let ss: f64 = col.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n as f64 - 1.0)).sqrt())
}

/// Center each column and divide by its sample standard deviation.
pub fn autoscale(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, ScalingParams)> {
    let n = x.nrows();
    if n < 2 {
        return Err(QsarError::Size(format!("autoscaling needs at least 2 rows, got {n}")));
    }
    let mut means = Vec::with_capacity(x.ncols());
    let mut stds = Vec::with_capacity(x.ncols());
    for (j, col) in x.column_iter().enumerate() {
        let (mean, sd) = column_mean_std(col.iter().copied(), n);
        if !(sd > 0.0) {
            return Err(QsarError::Validation(format!(
                "column {j} has zero variance; run remove_constant_columns before scaling"
            )));
        }
        means.push(mean);
        stds.push(sd);
    }
    let params = ScalingParams { means, stds };
    Ok((params.apply(x), params))
}

/// Pearson correlation of two equal-length slices. Zero when either is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson: length mismatch");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedPair {
    pub kept: String,
    pub removed: String,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub removed_constant: Vec<String>,
    pub removed_correlated: Vec<CorrelatedPair>,
    pub kept: Vec<String>,
}

impl PreprocessReport {
    /// Human-readable report; correlations at 4 decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "removed_constant ({}):", self.removed_constant.len());
        for name in &self.removed_constant {
            let _ = writeln!(s, "  {name}");
        }
        let _ = writeln!(s, "removed_correlated ({}):", self.removed_correlated.len());
        for p in &self.removed_correlated {
            let _ = writeln!(s, "  {} (kept {}, r = {:.4})", p.removed, p.kept, p.r);
        }
        let _ = writeln!(s, "kept ({}):", self.kept.len());
        for name in &self.kept {
            let _ = writeln!(s, "  {name}");
        }
        s
    }
}

/// Drop every column whose range (max - min) is at most `tolerance`.
pub fn remove_constant_columns(ds: &Dataset, tolerance: f64) -> Result<(Dataset, Vec<String>)> {
    if ds.n() == 0 || ds.m() == 0 {
        return Err(QsarError::EmptyMatrix("descriptor matrix is empty".into()));
    }
    let mut keep = Vec::new();
    let mut removed = Vec::new();
    for (j, col) in ds.x().column_iter().enumerate() {
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        if hi - lo > tolerance {
            keep.push(j);
        } else {
            removed.push(ds.descriptor_names()[j].clone());
        }
    }
    if keep.is_empty() {
        return Err(QsarError::EmptyMatrix("every descriptor column is constant".into()));
    }
    Ok((ds.select_columns(&keep), removed))
}

/// Drop later columns of any pair with |r| >= `threshold`.
pub fn remove_cross_correlated(ds: &Dataset, threshold: f64) -> Result<(Dataset, Vec<CorrelatedPair>)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(QsarError::Config(format!(
            "correlation threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let (z, _) = autoscale(ds.x())?;
    let denom = (ds.n() - 1) as f64;
    let names = ds.descriptor_names();
    let mut kept: Vec<usize> = Vec::new();
    let mut removed = Vec::new();
    for j in 0..ds.m() {
        let zj = z.column(j);
        let hit = kept.iter().find_map(|&i| {
            let r = (z.column(i).dot(&zj) / denom).clamp(-1.0, 1.0);
            (r.abs() >= threshold).then_some((i, r))
        });
        match hit {
            Some((i, r)) => removed.push(CorrelatedPair {
                kept: names[i].clone(),
                removed: names[j].clone(),
                r,
            }),
            None => kept.push(j),
        }
    }
    Ok((ds.select_columns(&kept), removed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub constant_tolerance: f64,
    pub correlation_threshold: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            constant_tolerance: DEFAULT_CONSTANT_TOLERANCE,
            correlation_threshold: DEFAULT_CORRELATION_THRESHOLD,
        }
    }
}

/// Constant-column removal followed by cross-correlation removal.
pub fn preprocess(ds: &Dataset, config: &PreprocessConfig) -> Result<(Dataset, PreprocessReport)> {
    let (ds1, removed_constant) = remove_constant_columns(ds, config.constant_tolerance)?;
    let (ds2, removed_correlated) = remove_cross_correlated(&ds1, config.correlation_threshold)?;
    let report = PreprocessReport {
        removed_constant,
        removed_correlated,
        kept: ds2.descriptor_names().to_vec(),
    };
    Ok((ds2, report))
}

/// Sample mean and standard deviation of a vector.
pub(crate) fn mean_std(v: &DVector<f64>) -> (f64, f64) {
    column_mean_std(v.iter().copied(), v.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ds_from_columns(cols: &[Vec<f64>]) -> Dataset {
        let n = cols[0].len();
        let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
        Dataset::from_matrix(x, DVector::from_fn(n, |i, _| i as f64)).unwrap()
    }

    #[test]
    fn constant_columns_removed() {
        let ds = ds_from_columns(&[vec![3.0, 3.0, 3.0], vec![1.0, 2.0, 4.0], vec![1.0, 1.0 + 1e-15, 1.0]]);
        let (out, removed) = remove_constant_columns(&ds, 1e-12).unwrap();
        assert_eq!(removed, ["d1", "d3"]);
        assert_eq!(out.descriptor_names(), ["d2"]);
    }

    #[test]
    fn no_constant_columns_is_identity() {
        let ds = ds_from_columns(&[vec![1.0, 2.0, 3.0], vec![0.0, 5.0, 1.0]]);
        let (out, removed) = remove_constant_columns(&ds, 1e-12).unwrap();
        assert!(removed.is_empty());
        assert_eq!(out, ds);
    }

    #[test]
    fn all_constant_is_error() {
        let ds = ds_from_columns(&[vec![1.0, 1.0], vec![2.0, 2.0]]);
        assert!(matches!(
            remove_constant_columns(&ds, 1e-12),
            Err(QsarError::EmptyMatrix(_))
        ));
    }

    #[test]
    fn duplicate_and_affine_columns_removed() {
        let a = vec![1.0, 4.0, 2.0, 8.0, 5.0];
        let affine: Vec<f64> = a.iter().map(|v| 2.0 * v + 5.0).collect();
        let ds = ds_from_columns(&[a.clone(), a.clone(), affine]);
        let (out, pairs) = remove_cross_correlated(&ds, 0.99).unwrap();
        assert_eq!(out.descriptor_names(), ["d1"]);
        assert_eq!(pairs.len(), 2);
        for p in &pairs {
            assert_eq!(p.kept, "d1");
            assert_abs_diff_eq!(p.r, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn anticorrelated_column_removed() {
        let a = vec![1.0, 4.0, 2.0, 8.0];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let (out, pairs) = remove_cross_correlated(&ds_from_columns(&[a, neg]), 0.99).unwrap();
        assert_eq!(out.m(), 1);
        assert_abs_diff_eq!(pairs[0].r, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn near_correlated_pair_kept() {
        // r = 6.5 / sqrt(5 * 8.75), worked by hand.
        let expected = 6.5 / (5.0f64 * 8.75).sqrt();
        assert_abs_diff_eq!(expected, 0.9827, epsilon = 1e-4);
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![1.0, 2.0, 3.0, 5.0];
        assert_abs_diff_eq!(pearson(&a, &b), expected, epsilon = 1e-14);
        let (out, pairs) = remove_cross_correlated(&ds_from_columns(&[a, b]), 0.99).unwrap();
        assert_eq!(out.m(), 2);
        assert!(pairs.is_empty());
    }

    #[test]
    fn threshold_out_of_range() {
        let ds = ds_from_columns(&[vec![1.0, 2.0, 3.0]]);
        for t in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(remove_cross_correlated(&ds, t), Err(QsarError::Config(_))));
        }
    }

    #[test]
    fn autoscale_examples() {
        let x = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 10.0, 20.0, 40.0]);
        let (z, p) = autoscale(&x).unwrap();
        assert_abs_diff_eq!(z.column(0).as_slice(), [-1.0, 0.0, 1.0].as_slice(), epsilon = 1e-12);
        assert_abs_diff_eq!(p.means[1], 23.3333, epsilon = 1e-4);
        assert_abs_diff_eq!(p.stds[1], 15.2753, epsilon = 1e-4);
        assert_abs_diff_eq!(
            z.column(1).as_slice(),
            [-0.8729, -0.2182, 1.0911].as_slice(),
            epsilon = 1e-4
        );
        let (zz, _) = autoscale(&z).unwrap();
        assert_abs_diff_eq!(zz, z, epsilon = 1e-10);
    }

    #[test]
    fn autoscale_rejects_zero_variance() {
        let x = DMatrix::from_column_slice(3, 1, &[2.0, 2.0, 2.0]);
        let err = autoscale(&x).unwrap_err();
        assert!(err.to_string().contains("remove_constant_columns"));
    }

    #[test]
    fn report_partitions_names() {
        let a = vec![1.0, 4.0, 2.0, 8.0];
        let ds = ds_from_columns(&[vec![1.0; 4], a.clone(), a, vec![0.0, 1.0, 0.0, 1.0]]);
        let (_, report) = preprocess(&ds, &PreprocessConfig::default()).unwrap();
        assert_eq!(report.removed_constant, ["d1"]);
        assert_eq!(report.removed_correlated[0].removed, "d3");
        assert_eq!(report.kept, ["d2", "d4"]);
        assert!(report.to_text().contains("r = 1.0000"));
    }

    fn matrix_strategy() -> impl Strategy<Value = DMatrix<f64>> {
        (3usize..8, 1usize..6).prop_flat_map(|(n, m)| {
            proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0), -5.0f64..5.0], n * m)
                .prop_map(move |v| DMatrix::from_vec(n, m, v))
        })
    }

    proptest! {
        #[test]
        fn pipeline_is_idempotent_and_partitions(x in matrix_strategy(), dup in 0usize..3) {
            // Optionally append an affine copy of the first column.
            let x = if dup > 0 {
                let extra = x.column(0).map(|v| 3.0 * v - 1.0);
                let m = x.ncols();
                let mut wider = x.insert_column(m, 0.0);
                wider.set_column(m, &extra);
                wider
            } else { x };
            let ds = Dataset::from_matrix(x.clone(), DVector::zeros(x.nrows())).unwrap();
            let cfg = PreprocessConfig::default();
            if let Ok((once, report)) = preprocess(&ds, &cfg) {
                let (twice, report2) = preprocess(&once, &cfg).unwrap();
                prop_assert_eq!(&twice, &once);
                prop_assert!(report2.removed_constant.is_empty() && report2.removed_correlated.is_empty());
                let mut all: Vec<String> = report.kept.clone();
                all.extend(report.removed_constant.iter().cloned());
                all.extend(report.removed_correlated.iter().map(|p| p.removed.clone()));
                all.sort();
                let mut orig = ds.descriptor_names().to_vec();
                orig.sort();
                prop_assert_eq!(all, orig);
                for p in &report.removed_correlated {
                    prop_assert!(p.r.abs() >= cfg.correlation_threshold);
                }
            }
        }

        #[test]
        fn pearson_symmetric_bounded(a in proptest::collection::vec(-10f64..10.0, 4), b in proptest::collection::vec(-10f64..10.0, 4)) {
            let r = pearson(&a, &b);
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((r - pearson(&b, &a)).abs() < 1e-15);
            if a.iter().any(|&v| v != a[0]) {
                prop_assert!((pearson(&a, &a) - 1.0).abs() < 1e-12);
            }
        }
    }
}
