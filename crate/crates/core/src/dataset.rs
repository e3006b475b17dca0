//! Samples, datasets, seeded train/test splits, CSV ingestion and a synthetic
//! skewed-label generator.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower bound of the label space (yield percentage).
pub const LABEL_MIN: f64 = 0.0;
/// Upper bound of the label space (yield percentage).
pub const LABEL_MAX: f64 = 100.0;

/// One reaction: a precomputed feature vector and its yield in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample<T> {
    pub features: Vec<T>,
    pub label: T,
}

impl<T: Scalar> Sample<T> {
    pub fn new(features: Vec<T>, label: T) -> Result<Self> {
        let sample = Sample { features, label };
        sample.validate().map_err(|reason| Error::InvalidSample { index: 0, reason })?;
        Ok(sample)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !self.label.is_finite() {
            return Err("label is not finite".into());
        }
        if self.label < T::lit(LABEL_MIN) || self.label > T::lit(LABEL_MAX) {
            return Err(format!("label {} outside [0, 100]", self.label));
        }
        if let Some(j) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(format!("feature {j} is not finite"));
        }
        Ok(())
    }
}

/// A non-empty ordered collection of samples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    samples: Vec<Sample<T>>,
    dim: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(samples: Vec<Sample<T>>) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("dataset"))?;
        let dim = first.features.len();
        if dim == 0 {
            return Err(Error::invalid("dim", "feature dimension must be positive"));
        }
        for (index, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::InvalidSample {
                    index,
                    reason: format!("expected {dim} features, got {}", s.features.len()),
                });
            }
            s.validate().map_err(|reason| Error::InvalidSample { index, reason })?;
        }
        Ok(Dataset { samples, dim })
    }

    pub fn from_parts(features: Vec<Vec<T>>, labels: Vec<T>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: labels.len(),
            });
        }
        Dataset::new(
            features
                .into_iter()
                .zip(labels)
                .map(|(features, label)| Sample { features, label })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample<T>] {
        &self.samples
    }

    pub fn labels(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn features(&self) -> impl Iterator<Item = &[T]> {
        self.samples.iter().map(|s| s.features.as_slice())
    }

    /// Samples at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::invalid("indices", format!("index {i} out of bounds")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples)
    }
}

/// Fraction of samples assigned to training, plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self> {
        let spec = SplitSpec {
            train_fraction,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid(
                "train_fraction",
                format!("{} not in (0, 1)", self.train_fraction),
            ));
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

/// Seeded shuffle followed by a prefix/suffix cut.
///
/// Each side keeps the input order of its samples. The train side holds
/// `round(train_fraction * N)` samples.
pub fn split<T: Scalar>(dataset: &Dataset<T>, spec: &SplitSpec) -> Result<(Dataset<T>, Dataset<T>)> {
    spec.validate()?;
    let n = dataset.len();
    if n < 2 {
        return Err(Error::invalid("dataset", format!("need at least 2 samples to split, got {n}")));
    }
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::invalid(
            "train_fraction",
            format!("split of {n} samples at {} leaves one side empty", spec.train_fraction),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let (train_idx, test_idx) = order.split_at_mut(n_train);
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((dataset.subset(train_idx)?, dataset.subset(test_idx)?))
}

/// Parameters of the synthetic skewed-label generator.
///
/// Labels follow a truncated exponential on `[0, 100]` with density
/// proportional to `exp(-skew * y / 100)`; `skew = 0` is uniform.
/// `noise_sd` is the per-feature noise, in feature units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub dim: usize,
    pub skew: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::invalid("n", format!("need n >= 10, got {}", self.n)));
        }
        if self.dim < 1 {
            return Err(Error::invalid("dim", "need dim >= 1"));
        }
        if !(self.skew.is_finite() && self.skew >= 0.0) {
            return Err(Error::invalid("skew", format!("{} is not a finite nonnegative value", self.skew)));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::invalid("noise_sd", format!("{} is not a finite nonnegative value", self.noise_sd)));
        }
        Ok(())
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 5000,
            dim: 8,
            skew: 3.0,
            noise_sd: 5.0,
            seed: 0,
        }
    }
}

const LABEL_STREAM: u64 = 1;
const MAP_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

/// Inverse CDF of the truncated exponential on `[0, 100]`, `u` in `[0, 1)`.
fn truncated_exponential(u: f64, skew: f64) -> f64 {
    let y = if skew <= 1e-12 {
        LABEL_MAX * u
    } else {
        let rate = skew / LABEL_MAX;
        -(u * (-skew).exp_m1()).ln_1p() / rate
    };
    y.clamp(LABEL_MIN, LABEL_MAX)
}

pub fn generate_synthetic<T: Scalar>(cfg: &SynthConfig) -> Result<Dataset<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(LABEL_STREAM);
    let labels: Vec<f64> = (0..cfg.n)
        .map(|_| truncated_exponential(rng.random::<f64>(), cfg.skew))
        .collect();
    features_for_labels(&labels, cfg.dim, cfg.noise_sd, cfg.seed)
}

/// Builds a dataset whose features are a fixed random map of the given labels.
///
/// The latent value is `u = (y - 50) / 10`. Feature 0 is `u`, so the clean map
/// is invertible for every `dim`; feature `j > 0` is `a_j u + b_j u^2 / 5` with
/// fixed `a_j, b_j ~ N(0, 1)`. Every feature then gets independent
/// `N(0, noise_sd^2)` noise.
pub fn features_for_labels<T: Scalar>(
    labels: &[f64],
    dim: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset<T>> {
    if dim < 1 {
        return Err(Error::invalid("dim", "need dim >= 1"));
    }
    let mut map_rng = ChaCha8Rng::seed_from_u64(seed);
    map_rng.set_stream(MAP_STREAM);
    let mut mixing = vec![[1.0, 0.0]];
    for _ in 1..dim {
        let a: f64 = map_rng.sample(StandardNormal);
        let b: f64 = map_rng.sample(StandardNormal);
        mixing.push([a, b]);
    }

    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(NOISE_STREAM);
    let mut samples = Vec::with_capacity(labels.len());
    for &y in labels {
        let u = (y - 50.0) / 10.0;
        let features = mixing
            .iter()
            .map(|[a, b]| {
                let e: f64 = noise_rng.sample(StandardNormal);
                T::lit(a * u + b * u * u / 5.0 + noise_sd * e)
            })
            .collect();
        samples.push(Sample {
            features,
            label: T::lit(y),
        });
    }
    Dataset::new(samples)
}

/// Writes `f0,...,f{d-1},yield` with shortest round-trip float formatting.
pub fn write_csv<T: Scalar, W: Write>(dataset: &Dataset<T>, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let header: Vec<String> = (0..dataset.dim())
        .map(|j| format!("f{j}"))
        .chain(std::iter::once("yield".to_string()))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for s in dataset.samples() {
        let mut line = String::new();
        for v in &s.features {
            line.push_str(&v.to_string());
            line.push(',');
        }
        line.push_str(&s.label.to_string());
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv<T: Scalar>(dataset: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    write_csv(dataset, File::create(path)?)
}

pub fn read_csv<T: Scalar, R: Read>(reader: R) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Csv {
        line: 1,
        reason: e.to_string(),
    })?;
    let n_cols = headers.len();
    if n_cols < 2 {
        return Err(Error::Csv {
            line: 1,
            reason: format!("need at least one feature column and `yield`, got {n_cols} columns"),
        });
    }
    if headers.get(n_cols - 1) != Some("yield") {
        return Err(Error::Csv {
            line: 1,
            reason: "last column must be `yield`".into(),
        });
    }

    let mut samples = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Csv {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: String| Error::Csv { line, reason };
        if record.len() != n_cols {
            return Err(bad(format!("expected {n_cols} columns, got {}", record.len())));
        }
        let mut values = Vec::with_capacity(n_cols);
        for (col, field) in record.iter().enumerate() {
            let v: T = field
                .parse()
                .map_err(|_| bad(format!("column {col}: cannot parse {field:?} as a number")))?;
            if !v.is_finite() {
                return Err(bad(format!("column {col}: non-finite value {field:?}")));
            }
            values.push(v);
        }
        let label = values.pop().expect("n_cols >= 2");
        if label < T::lit(LABEL_MIN) || label > T::lit(LABEL_MAX) {
            return Err(bad(format!("yield {label} outside [0, 100]")));
        }
        samples.push(Sample {
            features: values,
            label,
        });
    }
    if samples.is_empty() {
        return Err(Error::Empty("csv has no data rows"));
    }
    Dataset::new(samples)
}

pub fn load_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    read_csv(file).map_err(|e| e.context(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::{count_bins, BinSpec};
    use proptest::prelude::*;

    fn toy(n: usize) -> Dataset<f64> {
        let labels: Vec<f64> = (0..n).map(|i| (i as f64 * 7.3) % 100.0).collect();
        features_for_labels(&labels, 3, 1.0, 42).unwrap()
    }

    #[test]
    fn sample_rejects_out_of_range_and_nan() {
        assert!(Sample::new(vec![1.0_f64], 100.0).is_ok());
        assert!(Sample::new(vec![1.0_f64], 100.5).is_err());
        assert!(Sample::new(vec![1.0_f64], -0.1).is_err());
        assert!(Sample::new(vec![f64::NAN], 50.0).is_err());
        assert!(Sample::new(vec![1.0_f64], f64::INFINITY).is_err());
    }

    #[test]
    fn dataset_rejects_ragged_and_empty() {
        assert!(matches!(Dataset::<f64>::new(vec![]), Err(Error::Empty(_))));
        let ragged = vec![
            Sample { features: vec![1.0, 2.0], label: 1.0 },
            Sample { features: vec![1.0], label: 1.0 },
        ];
        assert!(matches!(
            Dataset::new(ragged),
            Err(Error::InvalidSample { index: 1, .. })
        ));
    }

    #[test]
    fn split_sizes_ten_samples() {
        for seed in [0, 1, 99] {
            let (tr, te) = split(&toy(10), &SplitSpec::new(0.7, seed).unwrap()).unwrap();
            assert_eq!((tr.len(), te.len()), (7, 3));
        }
    }

    #[test]
    fn split_is_deterministic() {
        let d = toy(50);
        let spec = SplitSpec::new(0.7, 5).unwrap();
        assert_eq!(split(&d, &spec).unwrap(), split(&d, &spec).unwrap());
    }

    #[test]
    fn split_seeds_give_different_partitions() {
        let d = toy(100);
        let (a, _) = split(&d, &SplitSpec::new(0.7, 1).unwrap()).unwrap();
        let (b, _) = split(&d, &SplitSpec::new(0.7, 2).unwrap()).unwrap();
        assert_eq!(a.len(), 70);
        assert_eq!(b.len(), 70);
        assert_ne!(a.labels(), b.labels());
    }

    #[test]
    fn split_rejects_degenerate() {
        assert!(split(&toy(1), &SplitSpec::default()).is_err());
        // round(0.1 * 2) = 0
        assert!(split(&toy(2), &SplitSpec::new(0.1, 0).unwrap()).is_err());
        assert!(SplitSpec::new(1.0, 0).is_err());
        assert!(SplitSpec::new(0.0, 0).is_err());
    }

    #[test]
    fn zero_skew_is_near_uniform() {
        let cfg = SynthConfig { n: 20_000, dim: 2, skew: 0.0, noise_sd: 0.0, seed: 3 };
        let d: Dataset<f64> = generate_synthetic(&cfg).unwrap();
        let counts = count_bins(&d.labels(), &BinSpec::new(0.0, 100.0, 10.0).unwrap()).unwrap();
        let max = *counts.counts().iter().max().unwrap() as f64;
        let min = *counts.counts().iter().min().unwrap() as f64;
        assert!(max / min < 2.0, "ratio {}", max / min);
    }

    #[test]
    fn skewed_generator_decays() {
        let cfg = SynthConfig { n: 5000, dim: 8, skew: 3.0, noise_sd: 5.0, seed: 11 };
        let d: Dataset<f64> = generate_synthetic(&cfg).unwrap();
        let counts = count_bins(&d.labels(), &BinSpec::new(0.0, 100.0, 10.0).unwrap()).unwrap();
        assert!(counts.counts()[0] > counts.counts()[9]);
        assert_eq!(counts.total(), 5000);
    }

    #[test]
    fn skewed_label_mean_matches_truncated_exponential() {
        let cfg = SynthConfig { n: 20_000, dim: 1, skew: 3.0, noise_sd: 0.0, seed: 2 };
        let d: Dataset<f64> = generate_synthetic(&cfg).unwrap();
        let mean = d.labels().iter().sum::<f64>() / d.len() as f64;
        // E[y] = 1/rate - H e^{-skew} / (1 - e^{-skew}) with rate = skew / H
        let expect = 100.0 / 3.0 - 100.0 * (-3.0_f64).exp() / (1.0 - (-3.0_f64).exp());
        assert!((mean - expect).abs() < 0.6, "mean {mean} vs {expect}");
        let counts = count_bins(&d.labels(), &BinSpec::yield_default()).unwrap();
        assert!(counts.counts().iter().all(|&c| c > 0));
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = SynthConfig { n: 200, dim: 4, skew: 2.0, noise_sd: 1.0, seed: 9 };
        let a: Dataset<f64> = generate_synthetic(&cfg).unwrap();
        let b: Dataset<f64> = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        let c: Dataset<f64> = generate_synthetic(&SynthConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generator_rejects_bad_config() {
        let bad = SynthConfig { n: 9, ..SynthConfig::default() };
        assert!(generate_synthetic::<f64>(&bad).is_err());
        let bad = SynthConfig { dim: 0, ..SynthConfig::default() };
        assert!(generate_synthetic::<f64>(&bad).is_err());
    }

    #[test]
    fn generator_works_in_f32() {
        let d: Dataset<f32> = generate_synthetic(&SynthConfig { n: 100, ..Default::default() }).unwrap();
        assert_eq!(d.dim(), 8);
    }

    #[test]
    fn csv_three_rows() {
        let text = "f0,f1,yield\n0.5,1,10\n-2,3e-2,55.5\n0,0,100\n";
        let d: Dataset<f64> = read_csv(text.as_bytes()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.labels(), vec![10.0, 55.5, 100.0]);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let cases = [
            ("f0,yield\n1,50\n2,101\n", 3),
            ("f0,yield\n1,50\n2\n", 3),
            ("f0,yield\nabc,50\n", 2),
            ("f0,yield\n1,NaN\n", 2),
            ("f0,yield\n1,50\n1,inf\n", 3),
        ];
        for (text, line) in cases {
            match read_csv::<f64, _>(text.as_bytes()) {
                Err(Error::Csv { line: got, .. }) => assert_eq!(got, line, "{text:?}"),
                other => panic!("{text:?}: expected csv error, got {other:?}"),
            }
        }
    }

    #[test]
    fn csv_requires_yield_column() {
        assert!(read_csv::<f64, _>("a,b\n1,2\n".as_bytes()).is_err());
        assert!(read_csv::<f64, _>("f0,yield\n".as_bytes()).is_err());
    }

    #[test]
    fn csv_round_trip_synthetic() {
        let cfg = SynthConfig { n: 1000, ..SynthConfig::default() };
        let d: Dataset<f64> = generate_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_csv(&d, &path).unwrap();
        let back: Dataset<f64> = load_csv(&path).unwrap();
        assert_eq!(back.len(), d.len());
        for (a, b) in back.labels().iter().zip(d.labels()) {
            assert!((a - b).abs() <= 1e-9);
        }
        assert_eq!(back, d);
    }

    proptest! {
        #[test]
        fn split_partitions_input(n in 2usize..200, frac in 0.05f64..0.95, seed: u64) {
            let d = toy(n);
            let n_train = (frac * n as f64).round() as usize;
            prop_assume!(n_train > 0 && n_train < n);
            let (tr, te) = split(&d, &SplitSpec::new(frac, seed).unwrap()).unwrap();
            prop_assert_eq!(tr.len(), n_train);
            let mut all: Vec<_> = tr.samples().iter().chain(te.samples()).map(|s| s.label.to_bits()).collect();
            let mut orig: Vec<_> = d.samples().iter().map(|s| s.label.to_bits()).collect();
            all.sort_unstable();
            orig.sort_unstable();
            prop_assert_eq!(all, orig);
        }

        #[test]
        fn csv_round_trip_is_exact(rows in proptest::collection::vec((proptest::collection::vec(-1e6f64..1e6, 3), 0.0f64..=100.0), 1..30)) {
            let (features, labels): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
            let d = Dataset::from_parts(features, labels).unwrap();
            let mut buf = Vec::new();
            write_csv(&d, &mut buf).unwrap();
            let back: Dataset<f64> = read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
