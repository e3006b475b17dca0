//! Region-stratified error metrics and the error-vs-density correlation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::binning::{BinCounts, BinSpec, Region, RegionPartition};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor applied to `|error|` before taking logs in [`gmean`].
pub const GMEAN_EPS: f64 = 1e-10;

fn check_pair<T>(preds: &[T], labels: &[T]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::Empty("metric input"));
    }
    Ok(())
}

pub fn mae<T: Scalar>(preds: &[T], labels: &[T]) -> Result<T> {
    check_pair(preds, labels)?;
    let sum: T = preds.iter().zip(labels).map(|(&p, &y)| (y - p).abs()).sum();
    Ok(sum / T::from_usize_lossy(preds.len()))
}

pub fn rmse<T: Scalar>(preds: &[T], labels: &[T]) -> Result<T> {
    check_pair(preds, labels)?;
    let sum: T = preds.iter().zip(labels).map(|(&p, &y)| (y - p) * (y - p)).sum();
    Ok((sum / T::from_usize_lossy(preds.len())).sqrt())
}

/// Geometric mean of `max(|error|, eps)`.
pub fn gmean<T: Scalar>(preds: &[T], labels: &[T], eps: T) -> Result<T> {
    check_pair(preds, labels)?;
    if !(eps > T::zero()) {
        return Err(Error::invalid("eps", format!("{eps} must be positive")));
    }
    let log_sum: T = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| (y - p).abs().max(eps).ln())
        .sum();
    Ok((log_sum / T::from_usize_lossy(preds.len())).exp())
}

/// Sample Pearson correlation; `None` when either side has zero variance.
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<Option<T>> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::invalid("x", format!("need at least 2 points, got {}", x.len())));
    }
    let n = T::from_usize_lossy(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy = sxy + da * db;
        sxx = sxx + da * da;
        syy = syy + db * db;
    }
    if sxx <= T::zero() || syy <= T::zero() {
        return Ok(None);
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(Some(r.max(-T::one()).min(T::one())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportRegion {
    All,
    Many,
    Medium,
    Few,
}

impl ReportRegion {
    pub const ALL: [ReportRegion; 4] = [
        ReportRegion::All,
        ReportRegion::Many,
        ReportRegion::Medium,
        ReportRegion::Few,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ReportRegion::All => "All",
            ReportRegion::Many => "Many",
            ReportRegion::Medium => "Med.",
            ReportRegion::Few => "Few",
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            ReportRegion::All => "all",
            ReportRegion::Many => "many",
            ReportRegion::Medium => "medium",
            ReportRegion::Few => "few",
        }
    }
}

impl From<Region> for ReportRegion {
    fn from(r: Region) -> Self {
        match r {
            Region::Many => ReportRegion::Many,
            Region::Medium => ReportRegion::Medium,
            Region::Few => ReportRegion::Few,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ErrorMetrics<T> {
    pub mae: T,
    pub rmse: T,
    pub gmean: T,
}

impl<T: Scalar> ErrorMetrics<T> {
    pub fn compute(preds: &[T], labels: &[T]) -> Result<Self> {
        Ok(ErrorMetrics {
            mae: mae(preds, labels)?,
            rmse: rmse(preds, labels)?,
            gmean: gmean(preds, labels, T::lit(GMEAN_EPS))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RegionMetrics<T> {
    pub region: ReportRegion,
    pub count: usize,
    /// `None` when the region holds no test samples.
    pub metrics: Option<ErrorMetrics<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BinError<T> {
    pub bin: usize,
    pub count: usize,
    pub mean_error: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RegionReport<T> {
    /// All, Many, Medium, Few in that order.
    pub regions: Vec<RegionMetrics<T>>,
    /// Correlation of training count with test mean L1 error over bins
    /// occupied in both splits; `None` when undefined.
    pub pearson_r: Option<T>,
    pub per_bin_errors: Vec<BinError<T>>,
}

impl<T: Scalar> RegionReport<T> {
    pub fn region(&self, r: ReportRegion) -> &RegionMetrics<T> {
        self.regions
            .iter()
            .find(|m| m.region == r)
            .expect("every report carries all four regions")
    }

    pub fn metrics(&self, r: ReportRegion) -> Option<&ErrorMetrics<T>> {
        self.region(r).metrics.as_ref()
    }

    /// Aligned text table: one row per region.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8}{:>8}{:>10}{:>10}{:>10}", "Region", "N", "MAE", "RMSE", "G-Mean");
        for m in &self.regions {
            match &m.metrics {
                Some(e) => {
                    let _ = writeln!(
                        out,
                        "{:<8}{:>8}{:>10.3}{:>10.3}{:>10.3}",
                        m.region.label(),
                        m.count,
                        e.mae.to_f64_lossy(),
                        e.rmse.to_f64_lossy(),
                        e.gmean.to_f64_lossy()
                    );
                }
                None => {
                    let _ = writeln!(out, "{:<8}{:>8}{:>10}{:>10}{:>10}", m.region.label(), m.count, "-", "-", "-");
                }
            }
        }
        let r = self
            .pearson_r
            .map_or_else(|| "undefined".to_string(), |r| format!("{:.4}", r.to_f64_lossy()));
        let _ = writeln!(out, "pearson_r(train count, test MAE per bin) = {r}");
        out
    }
}

/// Evaluates test predictions per region of a training-derived partition.
pub fn region_report<T: Scalar>(
    preds: &[T],
    labels: &[T],
    partition: &RegionPartition,
    spec: &BinSpec<T>,
    train_counts: &BinCounts,
) -> Result<RegionReport<T>> {
    check_pair(preds, labels)?;
    let n_bins = spec.n_bins();
    for len in [partition.n_bins(), train_counts.n_bins()] {
        if len != n_bins {
            return Err(Error::DimensionMismatch { expected: n_bins, got: len });
        }
    }
    let bins = labels
        .iter()
        .map(|&y| spec.bin_index(y))
        .collect::<Result<Vec<_>>>()?;

    let mut regions = Vec::with_capacity(4);
    for region in ReportRegion::ALL {
        let (p, y): (Vec<T>, Vec<T>) = preds
            .iter()
            .zip(labels)
            .zip(&bins)
            .filter(|(_, &b)| region == ReportRegion::All || ReportRegion::from(partition.region_of_bin(b)) == region)
            .map(|((&p, &y), _)| (p, y))
            .unzip();
        let metrics = if p.is_empty() {
            None
        } else {
            Some(ErrorMetrics::compute(&p, &y)?)
        };
        regions.push(RegionMetrics {
            region,
            count: p.len(),
            metrics,
        });
    }

    let mut sums = vec![T::zero(); n_bins];
    let mut counts = vec![0usize; n_bins];
    for ((&p, &y), &b) in preds.iter().zip(labels).zip(&bins) {
        sums[b] = sums[b] + (y - p).abs();
        counts[b] += 1;
    }
    let per_bin_errors: Vec<BinError<T>> = (0..n_bins)
        .filter(|&b| counts[b] > 0)
        .map(|b| BinError {
            bin: b,
            count: counts[b],
            mean_error: sums[b] / T::from_usize_lossy(counts[b]),
        })
        .collect();

    let (xs, ys): (Vec<T>, Vec<T>) = per_bin_errors
        .iter()
        .filter(|e| train_counts.counts()[e.bin] > 0)
        .map(|e| (T::from_usize_lossy(train_counts.counts()[e.bin]), e.mean_error))
        .unzip();
    let pearson_r = if xs.len() >= 2 { pearson(&xs, &ys)? } else { None };

    Ok(RegionReport {
        regions,
        pearson_r,
        per_bin_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::{count_bins, partition_regions, RegionThresholds};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn mae_rmse_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[10.0, 20.0], &[12.0, 16.0]).unwrap(), 3.0);
        assert_relative_eq!(rmse(&[10.0, 20.0], &[12.0, 16.0]).unwrap(), 10.0_f64.sqrt());
        assert_eq!(mae(&[3.0], &[-1.5]).unwrap(), 4.5);
        assert_eq!(rmse(&[3.0], &[-1.5]).unwrap(), 4.5);
        assert!(mae::<f64>(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn gmean_examples() {
        assert_relative_eq!(gmean(&[0.0, 0.0], &[1.0, 4.0], GMEAN_EPS).unwrap(), 2.0, max_relative = 1e-15);
        assert_relative_eq!(gmean(&[0.0; 3], &[2.5; 3], GMEAN_EPS).unwrap(), 2.5, max_relative = 1e-15);
        let with_zero = gmean(&[0.0, 0.0, 0.0], &[0.0, 10.0, 20.0], GMEAN_EPS).unwrap();
        let floored = gmean(&[0.0, 0.0, 0.0], &[GMEAN_EPS, 10.0, 20.0], GMEAN_EPS).unwrap();
        assert!(with_zero <= floored);
        assert!(with_zero < mae(&[0.0, 0.0, 0.0], &[0.0, 10.0, 20.0]).unwrap());
        assert!(gmean(&[1.0], &[2.0], 0.0).is_err());
        assert!(gmean::<f64>(&[], &[], 1e-10).is_err());
    }

    #[test]
    fn pearson_examples() {
        assert_relative_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap().unwrap(), 1.0);
        assert_relative_eq!(pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap().unwrap(), -1.0);
        assert_relative_eq!(pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap().unwrap(), 0.8, max_relative = 1e-14);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), None);
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    fn bins() -> BinSpec<f64> {
        BinSpec::new(0.0, 100.0, 10.0).unwrap()
    }

    #[test]
    fn all_test_samples_in_many_bins() {
        let train: Vec<f64> = (0..100).map(|i| (i % 3) as f64 * 10.0 + 1.0).collect();
        let counts = count_bins(&train, &bins()).unwrap();
        let part = partition_regions(&counts, &RegionThresholds::AZ);
        let labels = [1.0, 12.0, 25.0];
        let preds = [2.0, 10.0, 25.5];
        let r = region_report(&preds, &labels, &part, &bins(), &counts).unwrap();
        assert_eq!(r.region(ReportRegion::Many).count, 3);
        assert!(r.metrics(ReportRegion::Medium).is_none());
        assert!(r.metrics(ReportRegion::Few).is_none());
        assert_eq!(r.metrics(ReportRegion::All), r.metrics(ReportRegion::Many));
    }

    #[test]
    fn perfect_predictions() {
        let train: Vec<f64> = (0..60).map(|i| i as f64 * 1.5).collect();
        let counts = count_bins(&train, &bins()).unwrap();
        let part = partition_regions(&counts, &RegionThresholds::new(5, 6).unwrap());
        let labels: Vec<f64> = (0..30).map(|i| i as f64 * 3.1).collect();
        let r = region_report(&labels, &labels, &part, &bins(), &counts).unwrap();
        for m in &r.regions {
            if let Some(e) = &m.metrics {
                assert_eq!(e.mae, 0.0);
                assert_eq!(e.rmse, 0.0);
                assert!(e.gmean <= GMEAN_EPS * 1.0000001);
            }
        }
        assert_eq!(r.pearson_r, None);
    }

    #[test]
    fn report_rejects_mismatched_partition() {
        let counts = BinCounts::new(vec![1; 5]);
        let part = partition_regions(&counts, &RegionThresholds::AZ);
        assert!(region_report(&[1.0], &[1.0], &part, &bins(), &counts).is_err());
    }

    #[test]
    fn table_layout() {
        let counts = BinCounts::new(vec![10; 10]);
        let part = partition_regions(&counts, &RegionThresholds::AZ);
        let r = region_report(&[1.0, 50.0], &[2.0, 55.0], &part, &bins(), &counts).unwrap();
        let t = r.to_table();
        assert!(t.contains("All") && t.contains("Few") && t.contains("G-Mean"));
        assert!(t.contains("undefined"));
    }

    // Naive oracles: plain loops, f64 accumulation, textbook formulas.
    fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..x.len() {
            sx += x[i];
            sy += y[i];
        }
        let (mx, my) = (sx / n, sy / n);
        for i in 0..x.len() {
            sxx += (x[i] - mx).powi(2);
            syy += (y[i] - my).powi(2);
            sxy += (x[i] - mx) * (y[i] - my);
        }
        sxy / (sxx * syy).sqrt()
    }

    proptest! {
        #[test]
        fn power_mean_ordering(pairs in proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..200)) {
            let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let g = gmean(&p, &y, GMEAN_EPS).unwrap();
            let a = mae(&p, &y).unwrap();
            let r = rmse(&p, &y).unwrap();
            prop_assert!(g <= a * (1.0 + 1e-12) + 1e-12);
            prop_assert!(a <= r * (1.0 + 1e-12));
        }

        #[test]
        fn pearson_affine_invariant_and_symmetric(
            pts in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..60),
            a in 0.1f64..10.0, b in -50.0f64..50.0,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let Some(r) = pearson(&x, &y).unwrap() else { return Ok(()); };
            let r2 = pearson(&y, &x).unwrap().unwrap();
            prop_assert!((r - r2).abs() < 1e-12);
            let xt: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r3 = pearson(&xt, &y).unwrap().unwrap();
            prop_assert!((r - r3).abs() < 1e-9);
            prop_assert!((r - naive_pearson(&x, &y)).abs() < 1e-9);
        }

        #[test]
        fn all_region_is_count_weighted_mean(
            train in proptest::collection::vec(0.0f64..=100.0, 50..300),
            test in proptest::collection::vec((0.0f64..=100.0, -20.0f64..20.0), 1..200),
        ) {
            let spec = BinSpec::yield_default();
            let counts = count_bins(&train, &spec).unwrap();
            let part = partition_regions(&counts, &RegionThresholds::AZ);
            let labels: Vec<f64> = test.iter().map(|t| t.0).collect();
            let preds: Vec<f64> = test.iter().map(|t| t.0 + t.1).collect();
            let r = region_report(&preds, &labels, &part, &spec, &counts).unwrap();
            let all = r.region(ReportRegion::All);
            let parts: Vec<_> = r.regions.iter().filter(|m| m.region != ReportRegion::All).collect();
            prop_assert_eq!(all.count, parts.iter().map(|m| m.count).sum::<usize>());
            let weighted: f64 = parts.iter().filter_map(|m| m.metrics.map(|e| e.mae * m.count as f64)).sum();
            let all_mae = all.metrics.unwrap().mae;
            prop_assert!((weighted / all.count as f64 - all_mae).abs() <= 1e-9 * all_mae.max(1.0));
            if let Some(r) = r.pearson_r {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
