//! Equal-width label binning, per-bin counts and many/medium/few-shot regions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Equal-width partition of `[lo, hi]` into `B` bins.
///
/// Bins are `[b_{k-1}, b_k)` except the last, which is closed so that
/// `hi` itself is representable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BinSpecRepr<T>", into = "BinSpecRepr<T>")]
#[serde(bound = "T: Scalar")]
pub struct BinSpec<T> {
    lo: T,
    hi: T,
    width: T,
    n_bins: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct BinSpecRepr<T> {
    lo: T,
    hi: T,
    width: T,
}

impl<T: Scalar> TryFrom<BinSpecRepr<T>> for BinSpec<T> {
    type Error = Error;
    fn try_from(r: BinSpecRepr<T>) -> Result<Self> {
        BinSpec::new(r.lo, r.hi, r.width)
    }
}

impl<T: Scalar> From<BinSpec<T>> for BinSpecRepr<T> {
    fn from(s: BinSpec<T>) -> Self {
        BinSpecRepr {
            lo: s.lo,
            hi: s.hi,
            width: s.width,
        }
    }
}

impl<T: Scalar> BinSpec<T> {
    pub fn new(lo: T, hi: T, width: T) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && width.is_finite()) {
            return Err(Error::NonFinite("bin spec"));
        }
        if width <= T::zero() {
            return Err(Error::invalid("width", format!("{width} must be positive")));
        }
        if hi <= lo {
            return Err(Error::invalid("hi", format!("{hi} must exceed lo={lo}")));
        }
        let ratio = ((hi - lo) / width).to_f64_lossy();
        let n_bins = ratio.round();
        if n_bins < 1.0 || (ratio - n_bins).abs() > 1e-6 * n_bins.max(1.0) {
            return Err(Error::invalid(
                "width",
                format!("(hi - lo) / width = {ratio} is not a positive integer"),
            ));
        }
        Ok(BinSpec {
            lo,
            hi,
            width,
            n_bins: n_bins as usize,
        })
    }

    /// Unit-width bins over the yield range `[0, 100]`.
    pub fn yield_default() -> Self {
        Self::new(T::zero(), T::lit(100.0), T::one()).expect("valid default")
    }

    pub fn lo(&self) -> T {
        self.lo
    }

    pub fn hi(&self) -> T {
        self.hi
    }

    pub fn width(&self) -> T {
        self.width
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// `[left, right)` edges of bin `k`.
    pub fn edges(&self, k: usize) -> (T, T) {
        let left = self.lo + self.width * T::from_usize_lossy(k);
        (left, left + self.width)
    }

    pub fn bin_index(&self, label: T) -> Result<usize> {
        if !(label >= self.lo && label <= self.hi) {
            return Err(Error::LabelOutOfRange {
                label: label.to_f64_lossy(),
                lo: self.lo.to_f64_lossy(),
                hi: self.hi.to_f64_lossy(),
            });
        }
        let k = ((label - self.lo) / self.width).floor();
        Ok(k.to_usize().unwrap_or(0).min(self.n_bins - 1))
    }
}

impl<T: Scalar> Default for BinSpec<T> {
    fn default() -> Self {
        Self::yield_default()
    }
}

/// Per-bin sample counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinCounts(Vec<usize>);

impl BinCounts {
    pub fn new(counts: Vec<usize>) -> Self {
        BinCounts(counts)
    }

    pub fn counts(&self) -> &[usize] {
        &self.0
    }

    pub fn n_bins(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// `max_k |C_k| / min_k |C_k|`; `+inf` when any bin is empty.
    pub fn imbalance_ratio(&self) -> Result<f64> {
        let max = self.0.iter().copied().max().unwrap_or(0);
        if max == 0 {
            return Err(Error::Empty("all bin counts are zero"));
        }
        let min = self.0.iter().copied().min().unwrap_or(0);
        if min == 0 {
            return Ok(f64::INFINITY);
        }
        Ok(max as f64 / min as f64)
    }
}

pub fn count_bins<T: Scalar>(labels: &[T], spec: &BinSpec<T>) -> Result<BinCounts> {
    let mut counts = vec![0; spec.n_bins()];
    for &y in labels {
        counts[spec.bin_index(y)?] += 1;
    }
    Ok(BinCounts(counts))
}

/// Count thresholds `#lower` and `#upper` that separate the three regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionThresholds {
    pub lower: usize,
    pub upper: usize,
}

impl RegionThresholds {
    pub fn new(lower: usize, upper: usize) -> Result<Self> {
        if lower == 0 {
            return Err(Error::invalid("lower", "must be positive"));
        }
        if lower > upper {
            return Err(Error::invalid("lower", format!("{lower} exceeds upper={upper}")));
        }
        Ok(RegionThresholds { lower, upper })
    }

    /// Buchwald-Hartwig HTE set.
    pub const BH: RegionThresholds = RegionThresholds { lower: 25, upper: 50 };
    /// Suzuki-Miyaura HTE set.
    pub const SM: RegionThresholds = RegionThresholds { lower: 20, upper: 65 };
    /// AstraZeneca ELN set.
    pub const AZ: RegionThresholds = RegionThresholds { lower: 3, upper: 5 };

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "bh" => Ok(Self::BH),
            "sm" => Ok(Self::SM),
            "az" => Ok(Self::AZ),
            other => Err(Error::invalid(
                "preset",
                format!("unknown region preset {other:?} (expected bh, sm or az)"),
            )),
        }
    }

    pub fn classify(&self, count: usize) -> Region {
        if count > self.upper {
            Region::Many
        } else if count >= self.lower {
            Region::Medium
        } else {
            Region::Few
        }
    }
}

impl FromStr for RegionThresholds {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::preset(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Many,
    Medium,
    Few,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Many, Region::Medium, Region::Few];
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Many => "Many",
            Region::Medium => "Medium",
            Region::Few => "Few",
        })
    }
}

/// Region assignment for every bin, derived from training counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionPartition {
    regions: Vec<Region>,
}

impl RegionPartition {
    pub fn region_of_bin(&self, k: usize) -> Region {
        self.regions[k]
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn n_bins(&self) -> usize {
        self.regions.len()
    }

    pub fn bins_in(&self, region: Region) -> usize {
        self.regions.iter().filter(|&&r| r == region).count()
    }
}

pub fn partition_regions(counts: &BinCounts, th: &RegionThresholds) -> RegionPartition {
    RegionPartition {
        regions: counts.counts().iter().map(|&c| th.classify(c)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> BinSpec<f64> {
        BinSpec::yield_default()
    }

    #[test]
    fn bin_index_boundaries() {
        let s = unit();
        assert_eq!(s.n_bins(), 100);
        assert_eq!(s.bin_index(0.0).unwrap(), 0);
        assert_eq!(s.bin_index(100.0).unwrap(), 99);
        assert_eq!(s.bin_index(33.7).unwrap(), 33);
        assert_eq!(s.bin_index(99.999).unwrap(), 99);
        assert_eq!(s.bin_index(1.0).unwrap(), 1);
        assert!(s.bin_index(-0.01).is_err());
        assert!(s.bin_index(100.01).is_err());
        assert!(s.bin_index(f64::NAN).is_err());
    }

    #[test]
    fn bin_index_matches_floor_oracle() {
        let s = unit();
        for i in 0..10_000 {
            let y = i as f64 * 0.01;
            assert_eq!(s.bin_index(y).unwrap(), (y.floor() as usize).min(99), "y={y}");
        }
    }

    #[test]
    fn bin_spec_validation() {
        assert_eq!(BinSpec::new(0.0, 100.0, 2.5).unwrap().n_bins(), 40);
        assert!(BinSpec::new(0.0, 100.0, 3.0).is_err());
        assert!(BinSpec::new(0.0, 100.0, 0.0).is_err());
        assert!(BinSpec::new(10.0, 0.0, 1.0).is_err());
        assert_eq!(BinSpec::new(0.0_f32, 100.0, 0.1).unwrap().n_bins(), 1000);
    }

    #[test]
    fn bin_spec_serde_validates() {
        let s: BinSpec<f64> = serde_json::from_str(r#"{"lo":0,"hi":100,"width":5}"#).unwrap();
        assert_eq!(s.n_bins(), 20);
        assert!(serde_json::from_str::<BinSpec<f64>>(r#"{"lo":0,"hi":100,"width":3}"#).is_err());
    }

    #[test]
    fn count_small() {
        let c = count_bins(&[0.5, 0.7, 99.9], &unit()).unwrap();
        assert_eq!(c.counts()[0], 2);
        assert_eq!(c.counts()[99], 1);
        assert_eq!(c.total(), 3);
        assert!(c.counts()[1..99].iter().all(|&v| v == 0));
        assert!(count_bins(&[101.0], &unit()).is_err());
    }

    #[test]
    fn imbalance_ratio_cases() {
        assert_eq!(BinCounts::new(vec![10, 10, 10]).imbalance_ratio().unwrap(), 1.0);
        let mut bh = vec![100; 98];
        bh.insert(0, 412);
        bh.push(1);
        assert_eq!(BinCounts::new(bh).imbalance_ratio().unwrap(), 412.0);
        assert!(BinCounts::new(vec![5, 0, 5]).imbalance_ratio().unwrap().is_infinite());
        assert!(BinCounts::new(vec![0, 0]).imbalance_ratio().is_err());
    }

    #[test]
    fn region_boundaries_for_presets() {
        let bh = RegionThresholds::preset("bh").unwrap();
        assert_eq!(bh.classify(51), Region::Many);
        assert_eq!(bh.classify(50), Region::Medium);
        assert_eq!(bh.classify(25), Region::Medium);
        assert_eq!(bh.classify(24), Region::Few);
        let sm = RegionThresholds::preset("SM").unwrap();
        assert_eq!((sm.lower, sm.upper), (20, 65));
        assert_eq!(sm.classify(66), Region::Many);
        assert_eq!(sm.classify(20), Region::Medium);
        let az: RegionThresholds = "az".parse().unwrap();
        assert_eq!(az.classify(0), Region::Few);
        assert_eq!(az.classify(3), Region::Medium);
        assert_eq!(az.classify(6), Region::Many);
        assert!(RegionThresholds::preset("xx").is_err());
        assert!(RegionThresholds::new(5, 3).is_err());
        assert!(RegionThresholds::new(0, 3).is_err());
    }

    proptest! {
        #[test]
        fn count_conserves_n(labels in proptest::collection::vec(0.0f64..=100.0, 0..500)) {
            let c = count_bins(&labels, &unit()).unwrap();
            prop_assert_eq!(c.total(), labels.len());
        }

        #[test]
        fn bin_index_monotone(a in 0.0f64..=100.0, b in 0.0f64..=100.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(unit().bin_index(lo).unwrap() <= unit().bin_index(hi).unwrap());
        }

        #[test]
        fn region_monotone_in_count(lower in 1usize..100, extra in 0usize..100, c in 0usize..300, d in 0usize..50) {
            let th = RegionThresholds::new(lower, lower + extra).unwrap();
            prop_assert!(th.classify(c + d) <= th.classify(c));
        }

        #[test]
        fn partition_is_total(counts in proptest::collection::vec(0usize..200, 1..120)) {
            let p = partition_regions(&BinCounts::new(counts.clone()), &RegionThresholds::BH);
            prop_assert_eq!(p.n_bins(), counts.len());
            let total: usize = Region::ALL.iter().map(|&r| p.bins_in(r)).sum();
            prop_assert_eq!(total, counts.len());
        }
    }
}
