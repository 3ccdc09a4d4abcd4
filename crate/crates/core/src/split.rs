//! Sphere-exclusion division into training and test sets.
//!
//! Descriptors are autoscaled and a sphere of radius `d * sqrt(m)` is grown
//! around each training center in turn; unassigned molecules inside it go to
//! the test set. Centers are taken from the unassigned pool in seed-rule order
//! until every molecule is assigned.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Membership};
use crate::error::{QsarError, Result};
use crate::preprocess::autoscale;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedRule {
    /// Highest remaining activity; ties go to the lower index.
    #[default]
    MaxActivity,
    /// Lowest remaining index.
    First,
}

impl FromStr for SeedRule {
    type Err = QsarError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "max_activity" => Ok(SeedRule::MaxActivity),
            "first" => Ok(SeedRule::First),
            other => Err(QsarError::Config(format!("unknown seed rule '{other}'"))),
        }
    }
}

impl fmt::Display for SeedRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeedRule::MaxActivity => "max_activity",
            SeedRule::First => "first",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub dissimilarity: f64,
    pub radius_used: f64,
}

/// Activity range of one side of a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityRange {
    pub min: f64,
    pub max: f64,
}

impl SplitResult {
    pub fn membership(&self, n: usize) -> Vec<Membership> {
        let mut out = vec![Membership::Train; n];
        for &i in &self.test_indices {
            out[i] = Membership::Test;
        }
        out
    }

    pub fn activity_ranges(&self, ds: &Dataset) -> (Option<ActivityRange>, Option<ActivityRange>) {
        let range = |idx: &[usize]| {
            (!idx.is_empty()).then(|| {
                idx.iter().fold(
                    ActivityRange {
                        min: f64::INFINITY,
                        max: f64::NEG_INFINITY,
                    },
                    |r, &i| ActivityRange {
                        min: r.min.min(ds.y()[i]),
                        max: r.max.max(ds.y()[i]),
                    },
                )
            })
        };
        (range(&self.train_indices), range(&self.test_indices))
    }

    /// Two-column CSV: molecule_id, membership.
    pub fn write_csv<W: Write>(&self, ds: &Dataset, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["molecule_id", "membership"])?;
        for (id, m) in ds.ids().iter().zip(self.membership(ds.n())) {
            w.write_record([id.as_str(), &m.to_string()])?;
        }
        w.flush().map_err(|e| QsarError::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Read a split file back against a dataset's molecule ids.
pub fn read_split_csv<R: std::io::Read>(reader: R, ds: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default();
        let idx = ds
            .ids()
            .iter()
            .position(|x| x == id)
            .ok_or_else(|| QsarError::Validation(format!("split lists unknown molecule '{id}'")))?;
        match rec.get(1).map(str::trim) {
            Some("train") => train.push(idx),
            Some("test") => test.push(idx),
            other => {
                return Err(QsarError::Validation(format!(
                    "bad membership {other:?} for molecule '{id}'"
                )))
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

fn sq_dist(z: &nalgebra::DMatrix<f64>, a: usize, b: usize) -> f64 {
    z.row(a)
        .iter()
        .zip(z.row(b).iter())
        .map(|(p, q)| (p - q) * (p - q))
        .sum()
}

/// Autoscaled squared-distance matrix; shared by repeated splits of one dataset.
struct Geometry<'a> {
    ds: &'a Dataset,
    dist2: Vec<f64>,
    sqrt_m: f64,
}

impl<'a> Geometry<'a> {
    fn new(ds: &'a Dataset) -> Result<Self> {
        let n = ds.n();
        if n < 2 {
            return Err(QsarError::Size(format!(
                "sphere exclusion needs at least 2 molecules, got {n}"
            )));
        }
        let (z, _) = autoscale(ds.x())?;
        let mut dist2 = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = sq_dist(&z, i, j);
                dist2[i * n + j] = d;
                dist2[j * n + i] = d;
            }
        }
        Ok(Self {
            ds,
            dist2,
            sqrt_m: (ds.m() as f64).sqrt(),
        })
    }

    fn max_distance(&self) -> f64 {
        self.dist2.iter().copied().fold(0.0, f64::max).sqrt()
    }

    fn order(&self, rule: SeedRule) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.ds.n()).collect();
        if rule == SeedRule::MaxActivity {
            let y = self.ds.y();
            idx.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));
        }
        idx
    }

    fn split(&self, dissimilarity: f64, rule: SeedRule) -> Result<SplitResult> {
        if !(dissimilarity > 0.0) || !dissimilarity.is_finite() {
            return Err(QsarError::Config(format!(
                "dissimilarity must be positive, got {dissimilarity}"
            )));
        }
        let n = self.ds.n();
        let radius = dissimilarity * self.sqrt_m;
        let r2 = radius * radius;
        let mut assigned: Vec<Option<Membership>> = vec![None; n];
        // Visiting candidates in seed order and skipping assigned ones picks
        // exactly the next seed among the unassigned molecules.
        for seed in self.order(rule) {
            if assigned[seed].is_some() {
                continue;
            }
            assigned[seed] = Some(Membership::Train);
            let row = &self.dist2[seed * n..(seed + 1) * n];
            for (slot, d2) in assigned.iter_mut().zip(row) {
                if slot.is_none() && *d2 <= r2 {
                    *slot = Some(Membership::Test);
                }
            }
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, m) in assigned.into_iter().enumerate() {
            match m {
                Some(Membership::Train) => train.push(i),
                _ => test.push(i),
            }
        }
        Ok(SplitResult {
            train_indices: train,
            test_indices: test,
            dissimilarity,
            radius_used: radius,
        })
    }
}

pub fn sphere_exclusion_split(ds: &Dataset, dissimilarity: f64, seed_rule: SeedRule) -> Result<SplitResult> {
    if !(dissimilarity > 0.0) || !dissimilarity.is_finite() {
        return Err(QsarError::Config(format!(
            "dissimilarity must be positive, got {dissimilarity}"
        )));
    }
    Geometry::new(ds)?.split(dissimilarity, seed_rule)
}

/// Smallest dissimilarity searched by [`calibrate_dissimilarity`].
pub const GRID_MIN: f64 = 1e-6;
/// Geometric step between grid points.
pub const GRID_RATIO: f64 = 1.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub dissimilarity: f64,
    pub split: SplitResult,
    pub target_test_size: usize,
}

impl Calibration {
    pub fn achieved(&self) -> (usize, usize) {
        (self.split.train_indices.len(), self.split.test_indices.len())
    }
}

/// Scan a geometric grid from [`GRID_MIN`] up to the dissimilarity at which
/// one sphere covers every molecule, returning the first grid point whose
/// test set has at least `target_test_size` molecules.
pub fn calibrate_dissimilarity(ds: &Dataset, target_test_size: usize, seed_rule: SeedRule) -> Result<Calibration> {
    let n = ds.n();
    if target_test_size >= n {
        return Err(QsarError::Config(format!(
            "target test size {target_test_size} must be below the molecule count {n}"
        )));
    }
    let geo = Geometry::new(ds)?;
    let d_max = (geo.max_distance() / geo.sqrt_m).max(GRID_MIN) * GRID_RATIO;
    let mut d = GRID_MIN;
    let mut nearest: Option<(usize, f64)> = None;
    while d <= d_max * GRID_RATIO {
        let split = geo.split(d, seed_rule)?;
        let got = split.test_indices.len();
        if got >= target_test_size {
            return Ok(Calibration {
                dissimilarity: d,
                split,
                target_test_size,
            });
        }
        if nearest.is_none_or(|(best, _)| got > best) {
            nearest = Some((got, d));
        }
        d *= GRID_RATIO;
    }
    let (got, at) = nearest.unwrap_or((0, GRID_MIN));
    Err(QsarError::Calibration(format!(
        "no grid dissimilarity reached a test set of {target_test_size}; nearest was {} train / {got} test at d = {at:.6}",
        n - got
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn three_points() -> Dataset {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.1, 0.0, 10.0, 10.0]);
        Dataset::from_matrix(x, DVector::from_vec(vec![3.0, 2.0, 1.0])).unwrap()
    }

    fn random_ds(seed: u64, n: usize, m: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(3.0..7.0));
        Dataset::from_matrix(x, y).unwrap()
    }

    #[test]
    fn hand_traced_exclusion() {
        let ds = three_points();
        // Autoscaled, p1 and p2 end up about 0.017 apart and p3 is far away.
        // Radius 0.1 * sqrt(2) covers p2 from p1 but not p3.
        let s = sphere_exclusion_split(&ds, 0.1, SeedRule::MaxActivity).unwrap();
        assert_eq!(s.train_indices, vec![0, 2]);
        assert_eq!(s.test_indices, vec![1]);
        assert!((s.radius_used - 0.1 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn tiny_dissimilarity_keeps_everything_in_train() {
        let ds = random_ds(1, 12, 4);
        let s = sphere_exclusion_split(&ds, 1e-9, SeedRule::MaxActivity).unwrap();
        assert_eq!(s.train_indices.len(), 12);
        assert!(s.test_indices.is_empty());
    }

    #[test]
    fn config_and_size_errors() {
        let ds = three_points();
        assert!(matches!(
            sphere_exclusion_split(&ds, 0.0, SeedRule::First),
            Err(QsarError::Config(_))
        ));
        assert!(matches!(
            sphere_exclusion_split(&ds, -1.0, SeedRule::First),
            Err(QsarError::Config(_))
        ));
        let one = ds.select_rows(&[0]);
        assert!(matches!(
            sphere_exclusion_split(&one, 0.5, SeedRule::First),
            Err(QsarError::Size(_))
        ));
    }

    #[test]
    fn most_active_always_trains() {
        let ds = random_ds(4, 20, 3);
        let top = (0..20).max_by(|&a, &b| ds.y()[a].total_cmp(&ds.y()[b])).unwrap();
        for d in [0.01, 0.2, 0.5, 1.0, 5.0] {
            let s = sphere_exclusion_split(&ds, d, SeedRule::MaxActivity).unwrap();
            assert!(s.train_indices.contains(&top));
        }
    }

    #[test]
    fn first_rule_seeds_by_index() {
        let ds = three_points();
        let s = sphere_exclusion_split(&ds, 100.0, SeedRule::First).unwrap();
        assert_eq!(s.train_indices, vec![0]);
    }

    #[test]
    fn calibration_examples() {
        let ds = random_ds(8, 28, 6);
        let c0 = calibrate_dissimilarity(&ds, 0, SeedRule::MaxActivity).unwrap();
        assert_eq!(c0.dissimilarity, GRID_MIN);
        assert!(c0.split.test_indices.is_empty());
        let c5 = calibrate_dissimilarity(&ds, 5, SeedRule::MaxActivity).unwrap();
        let c10 = calibrate_dissimilarity(&ds, 10, SeedRule::MaxActivity).unwrap();
        assert!(c5.achieved().1 >= 5 && c10.achieved().1 >= 10);
        assert!(c5.dissimilarity <= c10.dissimilarity);
        // brute-force: no earlier grid point reaches the target
        let mut d = GRID_MIN;
        while d < c10.dissimilarity * (1.0 - 1e-12) {
            assert!(
                sphere_exclusion_split(&ds, d, SeedRule::MaxActivity)
                    .unwrap()
                    .test_indices
                    .len()
                    < 10
            );
            d *= GRID_RATIO;
        }
        assert!(matches!(
            calibrate_dissimilarity(&ds, 28, SeedRule::MaxActivity),
            Err(QsarError::Config(_))
        ));
    }

    #[test]
    fn split_csv_round_trip() {
        let ds = random_ds(3, 9, 3);
        let s = sphere_exclusion_split(&ds, 0.4, SeedRule::MaxActivity).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&ds, &mut buf).unwrap();
        let (train, test) = read_split_csv(buf.as_slice(), &ds).unwrap();
        assert_eq!((train, test), (s.train_indices.clone(), s.test_indices.clone()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn splits_are_partitions(seed in 0u64..10_000, n in 2usize..25, m in 1usize..6, d in 0.001f64..3.0) {
            let ds = random_ds(seed, n, m);
            let s = sphere_exclusion_split(&ds, d, SeedRule::MaxActivity).unwrap();
            let mut all: Vec<usize> = s.train_indices.iter().chain(&s.test_indices).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!(!s.train_indices.is_empty());
            prop_assert_eq!(s, sphere_exclusion_split(&ds, d, SeedRule::MaxActivity).unwrap());
        }
    }
}
