//! Per-sample training weights.
//!
//! Two re-weighting schemes are provided:
//!
//! * **LDS** (label distribution smoothing): static, density-based. Bin counts
//!   are smoothed with a windowed Gaussian kernel and each sample is weighted
//!   by the inverse of the smoothed count of its bin.
//! * **Focal**: dynamic, difficulty-based. `w = sigmoid(alpha * loss)^gamma`,
//!   recomputed from the current residuals at every optimization step.
//!
//! The combined scheme multiplies the two.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::binning::{count_bins, BinCounts, BinSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FocalConfig<T> {
    pub alpha: T,
    pub gamma: T,
}

impl<T: Scalar> FocalConfig<T> {
    pub fn new(alpha: T, gamma: T) -> Result<Self> {
        let cfg = FocalConfig { alpha, gamma };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > T::zero()) {
            return Err(Error::invalid("alpha", format!("{} must be positive", self.alpha)));
        }
        if !(self.gamma.is_finite() && self.gamma >= T::zero()) {
            return Err(Error::invalid("gamma", format!("{} must be nonnegative", self.gamma)));
        }
        Ok(())
    }
}

impl<T: Scalar> Default for FocalConfig<T> {
    fn default() -> Self {
        FocalConfig {
            alpha: T::lit(0.2),
            gamma: T::one(),
        }
    }
}

/// How the kernel window is treated where it runs past the label-space edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMode {
    /// Drop out-of-range offsets and divide by the kernel mass that remains.
    /// A flat histogram stays exactly flat, including at the edges.
    #[default]
    Renormalize,
    /// Drop out-of-range offsets, no correction. Edge bins see less mass.
    Truncate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct KernelConfig<T> {
    /// Window size in bins; odd.
    pub ell: usize,
    /// Kernel standard deviation in bins.
    pub sigma: T,
    #[serde(default)]
    pub edge: EdgeMode,
}

impl<T: Scalar> KernelConfig<T> {
    pub fn new(ell: usize, sigma: T, edge: EdgeMode) -> Result<Self> {
        let cfg = KernelConfig { ell, sigma, edge };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ell == 0 || self.ell.is_multiple_of(2) {
            return Err(Error::invalid("ell", format!("{} must be an odd positive integer", self.ell)));
        }
        if !(self.sigma.is_finite() && self.sigma > T::zero()) {
            return Err(Error::invalid("sigma", format!("{} must be positive", self.sigma)));
        }
        Ok(())
    }

    pub fn half_width(&self) -> usize {
        (self.ell - 1) / 2
    }
}

impl<T: Scalar> Default for KernelConfig<T> {
    fn default() -> Self {
        KernelConfig {
            ell: 5,
            sigma: T::lit(2.0),
            edge: EdgeMode::default(),
        }
    }
}

/// Strictly positive, finite per-sample weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector<T>(Vec<T>);

impl<T: Scalar> WeightVector<T> {
    pub fn new(weights: Vec<T>) -> Result<Self> {
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::invalid("weights", format!("weight {i} is not finite")));
        }
        if let Some(i) = weights.iter().position(|&w| w <= T::zero()) {
            return Err(Error::invalid("weights", format!("weight {i} is not positive")));
        }
        Ok(WeightVector(weights))
    }

    pub fn uniform(n: usize) -> Self {
        WeightVector(vec![T::one(); n])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> T {
        mean_anchored(&self.0)
    }
}

/// Mean computed relative to the first element, so a constant vector yields
/// exactly that constant.
fn mean_anchored<T: Scalar>(xs: &[T]) -> T {
    let Some(&anchor) = xs.first() else {
        return T::nan();
    };
    let shift: T = xs.iter().map(|&x| x - anchor).sum();
    anchor + shift / T::from_usize_lossy(xs.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "focal")]
    Focal,
    #[serde(rename = "lds")]
    Lds,
    #[serde(rename = "focal+lds")]
    FocalLds,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Vanilla, Scheme::Focal, Scheme::Lds, Scheme::FocalLds];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Vanilla => "vanilla",
            Scheme::Focal => "focal",
            Scheme::Lds => "lds",
            Scheme::FocalLds => "focal+lds",
        }
    }

    pub fn uses_focal(&self) -> bool {
        matches!(self, Scheme::Focal | Scheme::FocalLds)
    }

    pub fn uses_lds(&self) -> bool {
        matches!(self, Scheme::Lds | Scheme::FocalLds)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sch| sch.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                Error::invalid(
                    "scheme",
                    format!("unknown scheme {s:?} (expected vanilla, focal, lds or focal+lds)"),
                )
            })
    }
}

/// A scheme together with the hyperparameters of both weightings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Reweighting<T> {
    pub scheme: Scheme,
    #[serde(default)]
    pub focal: FocalConfig<T>,
    #[serde(default)]
    pub kernel: KernelConfig<T>,
}

impl<T: Scalar> Reweighting<T> {
    pub fn new(scheme: Scheme) -> Self {
        Reweighting {
            scheme,
            focal: FocalConfig::default(),
            kernel: KernelConfig::default(),
        }
    }

    pub fn vanilla() -> Self {
        Self::new(Scheme::Vanilla)
    }

    pub fn validate(&self) -> Result<()> {
        self.focal.validate()?;
        self.kernel.validate()
    }
}

/// `exp(-dy^2 / (2 sigma^2))`.
#[inline]
pub fn gaussian_kernel<T: Scalar>(dy: T, sigma: T) -> T {
    (-(dy * dy) / (T::lit(2.0) * sigma * sigma)).exp()
}

/// Gaussian-smoothed bin counts; distances are measured in bin units.
pub fn smoothed_counts<T: Scalar>(counts: &BinCounts, k: &KernelConfig<T>) -> Vec<T> {
    let c = counts.counts();
    let b = c.len();
    let half = k.half_width();
    // Kernel taps for offsets 0..=half.
    let taps: Vec<T> = (0..=half)
        .map(|d| gaussian_kernel(T::from_usize_lossy(d), k.sigma))
        .collect();
    (0..b)
        .map(|bin| {
            let first = bin.saturating_sub(half);
            let last = (bin + half).min(b - 1);
            let own = T::from_usize_lossy(c[bin]);
            match k.edge {
                EdgeMode::Truncate => (first..=last)
                    .map(|j| taps[bin.abs_diff(j)] * T::from_usize_lossy(c[j]))
                    .sum(),
                EdgeMode::Renormalize => {
                    // Kernel-weighted mean of the window, written as an offset
                    // from the bin's own count so flat regions are exact.
                    let mass: T = (first..=last).map(|j| taps[bin.abs_diff(j)]).sum();
                    let spread: T = (first..=last)
                        .map(|j| taps[bin.abs_diff(j)] * (T::from_usize_lossy(c[j]) - own))
                        .sum();
                    own + spread / mass
                }
            }
        })
        .collect()
}

/// Inverse smoothed label density, mean-normalized to 1 over the samples.
pub fn lds_weights<T: Scalar>(labels: &[T], spec: &BinSpec<T>, k: &KernelConfig<T>) -> Result<WeightVector<T>> {
    k.validate()?;
    if labels.is_empty() {
        return Err(Error::Empty("lds labels"));
    }
    let counts = count_bins(labels, spec)?;
    let smooth = smoothed_counts(&counts, k);
    let bins = labels
        .iter()
        .map(|&y| spec.bin_index(y))
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<T> = bins.iter().map(|&bin| T::one() / smooth[bin]).collect();
    let mean = mean_anchored(&raw);
    let weights: Vec<T> = raw.iter().map(|&r| r / mean).collect();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("lds weights"));
    }
    WeightVector::new(weights)
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `sigmoid(alpha * loss)^gamma` per sample; in `(0, 1]`, not normalized.
pub fn focal_weights<T: Scalar>(losses: &[T], cfg: &FocalConfig<T>) -> Result<WeightVector<T>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(losses.len());
    for &l in losses {
        if !l.is_finite() {
            return Err(Error::NonFinite("focal losses"));
        }
        if l < T::zero() {
            return Err(Error::invalid("losses", format!("loss {l} is negative")));
        }
        out.push(focal_weight(l, cfg));
    }
    Ok(WeightVector(out))
}

#[inline]
pub(crate) fn focal_weight<T: Scalar>(loss: T, cfg: &FocalConfig<T>) -> T {
    sigmoid(cfg.alpha * loss).powf(cfg.gamma)
}

pub fn combine_weights<T: Scalar>(a: &WeightVector<T>, b: &WeightVector<T>) -> Result<WeightVector<T>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    WeightVector::new(a.0.iter().zip(&b.0).map(|(&x, &y)| x * y).collect())
}

/// `(1/N) sum_i w_i |y_i - yhat_i|`.
pub fn weighted_l1_loss<T: Scalar>(preds: &[T], labels: &[T], weights: &[T]) -> Result<T> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: labels.len(),
        });
    }
    if preds.len() != weights.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: weights.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::Empty("weighted loss"));
    }
    let total: T = preds
        .iter()
        .zip(labels)
        .zip(weights)
        .map(|((&p, &y), &w)| w * (y - p).abs())
        .sum();
    if !total.is_finite() {
        return Err(Error::NonFinite("weighted loss inputs"));
    }
    Ok(total / T::from_usize_lossy(preds.len()))
}
