//! Experiment orchestration: repeated split / train / evaluate runs for a set
//! of re-weighting schemes, aggregated into a comparison report.
//!
//! Relative changes are reported as `100 * (scheme - vanilla) / vanilla`, so a
//! negative percentage is an error reduction (an improvement).

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::{count_bins, partition_regions, BinSpec, RegionThresholds};
use crate::dataset::{generate_synthetic, load_csv, split, Dataset, SplitSpec, SynthConfig};
use crate::error::{Error, Result};
use crate::metrics::{region_report, ErrorMetrics, RegionReport, ReportRegion};
use crate::model::{train, MlpConfig};
use crate::reweight::{FocalConfig, KernelConfig, Reweighting, Scheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Csv(PathBuf),
    Synth(SynthConfig),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset<f64>> {
        match self {
            DataSource::Csv(path) => load_csv(path),
            DataSource::Synth(cfg) => generate_synthetic(cfg),
        }
    }
}

/// Region thresholds given either by preset name or explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegionSpec {
    Preset(String),
    Explicit { lower: usize, upper: usize },
}

impl RegionSpec {
    pub fn thresholds(&self) -> Result<RegionThresholds> {
        match self {
            RegionSpec::Preset(name) => RegionThresholds::preset(name),
            RegionSpec::Explicit { lower, upper } => RegionThresholds::new(*lower, *upper),
        }
    }
}

impl Default for RegionSpec {
    fn default() -> Self {
        RegionSpec::Preset("bh".into())
    }
}

fn default_train_fraction() -> f64 {
    0.7
}

fn default_repetitions() -> usize {
    10
}

fn default_schemes() -> Vec<Scheme> {
    vec![Scheme::Vanilla]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DataSource,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub bins: BinSpec<f64>,
    #[serde(default)]
    pub regions: RegionSpec,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub model: MlpConfig,
    #[serde(default)]
    pub focal: FocalConfig<f64>,
    #[serde(default)]
    pub kernel: KernelConfig<f64>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub base_seed: u64,
}

impl ExperimentConfig {
    pub fn new(source: DataSource, schemes: Vec<Scheme>) -> Self {
        ExperimentConfig {
            source,
            train_fraction: default_train_fraction(),
            bins: BinSpec::default(),
            regions: RegionSpec::default(),
            schemes,
            model: MlpConfig::default(),
            focal: FocalConfig::default(),
            kernel: KernelConfig::default(),
            repetitions: default_repetitions(),
            base_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::invalid("schemes", "at least one scheme is required"));
        }
        for (i, s) in self.schemes.iter().enumerate() {
            if self.schemes[..i].contains(s) {
                return Err(Error::invalid("schemes", format!("duplicate scheme {s}")));
            }
        }
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions", "must be positive"));
        }
        SplitSpec::new(self.train_fraction, 0)?;
        self.regions.thresholds()?;
        self.model.validate()?;
        self.focal.validate()?;
        self.kernel.validate()
    }

    /// Parses JSON, or TOML when `path` ends in `.toml`.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        let cfg = if path.extension().is_some_and(|e| e == "toml") {
            Self::from_toml(&text)?
        } else {
            Self::from_json(&text)?
        };
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn reweighting(&self, scheme: Scheme) -> Reweighting<f64> {
        Reweighting {
            scheme,
            focal: self.focal,
            kernel: self.kernel,
        }
    }
}

/// One trained-and-evaluated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub repetition: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub report: RegionReport<f64>,
}

/// Mean and sample standard deviation over the repetitions where a value exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub region: ReportRegion,
    pub mean_count: f64,
    pub mae: Option<Stat>,
    pub rmse: Option<Stat>,
    pub gmean: Option<Stat>,
}

/// Percent change versus vanilla; negative means lower error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeChange {
    pub mae_pct: Option<f64>,
    pub rmse_pct: Option<f64>,
    pub gmean_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    /// All, Many, Medium, Few.
    pub regions: Vec<RegionSummary>,
    pub pearson_r: Option<Stat>,
    /// Present for non-vanilla schemes when vanilla was run.
    pub change_all: Option<RelativeChange>,
    pub change_few: Option<RelativeChange>,
    /// Mean rank across every (metric, region) cell; present with >= 2 schemes.
    pub avg_ranking: Option<f64>,
}

impl SchemeSummary {
    pub fn region(&self, r: ReportRegion) -> &RegionSummary {
        self.regions.iter().find(|s| s.region == r).expect("all regions present")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub repetitions: usize,
    pub schemes: Vec<SchemeSummary>,
    pub runs: Vec<RunRecord>,
}

impl ComparisonReport {
    pub fn scheme(&self, s: Scheme) -> Option<&SchemeSummary> {
        self.schemes.iter().find(|x| x.scheme == s)
    }

    pub fn runs_for(&self, s: Scheme) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(move |r| r.scheme == s)
    }
}

fn run_repetition(cfg: &ExperimentConfig, data: &Dataset<f64>, repetition: usize) -> Result<Vec<RunRecord>> {
    let seed = cfg.base_seed.wrapping_add(repetition as u64);
    let ctx = |scheme: Option<Scheme>| match scheme {
        Some(s) => format!("repetition {repetition}, scheme {s}"),
        None => format!("repetition {repetition}"),
    };
    let (train_set, test_set) =
        split(data, &SplitSpec::new(cfg.train_fraction, seed)?).map_err(|e| e.context(ctx(None)))?;
    let train_counts = count_bins(&train_set.labels(), &cfg.bins).map_err(|e| e.context(ctx(None)))?;
    let partition = partition_regions(&train_counts, &cfg.regions.thresholds()?);
    let test_labels = test_set.labels();
    let model_cfg = MlpConfig {
        seed,
        ..cfg.model.clone()
    };

    cfg.schemes
        .iter()
        .map(|&scheme| {
            let run = || -> Result<RunRecord> {
                let model = train(&train_set, &cfg.reweighting(scheme), &model_cfg, &cfg.bins)?;
                let preds = model.predict_dataset(&test_set)?;
                let report = region_report(&preds, &test_labels, &partition, &cfg.bins, &train_counts)?;
                Ok(RunRecord {
                    repetition,
                    seed,
                    scheme,
                    report,
                })
            };
            run().map_err(|e| e.context(ctx(Some(scheme))))
        })
        .collect()
}

/// Runs every scheme on every repetition's split and aggregates the results.
///
/// Repetition `r` uses seed `base_seed + r` for both the split and the model
/// initialization, shared by all schemes. Repetitions run in parallel; the
/// output does not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    cfg.validate()?;
    let data = cfg.source.load()?;
    let per_rep: Vec<Vec<RunRecord>> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|r| run_repetition(cfg, &data, r))
        .collect::<Result<_>>()?;
    let runs: Vec<RunRecord> = per_rep.into_iter().flatten().collect();
    Ok(aggregate(&cfg.schemes, cfg.repetitions, runs))
}

fn metric_of(e: &ErrorMetrics<f64>, metric: usize) -> f64 {
    match metric {
        0 => e.mae,
        1 => e.rmse,
        _ => e.gmean,
    }
}

fn pct(value: Option<Stat>, base: Option<Stat>) -> Option<f64> {
    match (value, base) {
        (Some(v), Some(b)) if b.mean > 0.0 => Some(100.0 * (v.mean - b.mean) / b.mean),
        _ => None,
    }
}

fn aggregate(schemes: &[Scheme], repetitions: usize, runs: Vec<RunRecord>) -> ComparisonReport {
    let mut summaries: Vec<SchemeSummary> = schemes
        .iter()
        .map(|&scheme| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.scheme == scheme).collect();
            let regions = ReportRegion::ALL
                .iter()
                .map(|&region| {
                    let cells: Vec<_> = mine.iter().map(|r| r.report.region(region)).collect();
                    let stat = |m: usize| {
                        Stat::of(&cells.iter().filter_map(|c| c.metrics.map(|e| metric_of(&e, m))).collect::<Vec<_>>())
                    };
                    RegionSummary {
                        region,
                        mean_count: cells.iter().map(|c| c.count as f64).sum::<f64>() / cells.len().max(1) as f64,
                        mae: stat(0),
                        rmse: stat(1),
                        gmean: stat(2),
                    }
                })
                .collect();
            let pearson = Stat::of(&mine.iter().filter_map(|r| r.report.pearson_r).collect::<Vec<_>>());
            SchemeSummary {
                scheme,
                regions,
                pearson_r: pearson,
                change_all: None,
                change_few: None,
                avg_ranking: None,
            }
        })
        .collect();

    if let Some(vanilla) = summaries.iter().find(|s| s.scheme == Scheme::Vanilla).cloned() {
        for s in summaries.iter_mut().filter(|s| s.scheme != Scheme::Vanilla) {
            let change = |r: ReportRegion| {
                let (a, b) = (s.region(r), vanilla.region(r));
                RelativeChange {
                    mae_pct: pct(a.mae, b.mae),
                    rmse_pct: pct(a.rmse, b.rmse),
                    gmean_pct: pct(a.gmean, b.gmean),
                }
            };
            let (all, few) = (change(ReportRegion::All), change(ReportRegion::Few));
            s.change_all = Some(all);
            s.change_few = Some(few);
        }
    }

    if summaries.len() >= 2 {
        let mut rank_sum = vec![0.0; summaries.len()];
        let mut cells = vec![0usize; summaries.len()];
        for region in ReportRegion::ALL {
            for metric in 0..3 {
                let values: Vec<Option<f64>> = summaries
                    .iter()
                    .map(|s| {
                        let r = s.region(region);
                        [r.mae, r.rmse, r.gmean][metric].map(|st| st.mean)
                    })
                    .collect();
                for (i, v) in values.iter().enumerate() {
                    let Some(v) = v else { continue };
                    // competition ranking: 1 + number of strictly better schemes
                    let better = values.iter().flatten().filter(|&&o| o < *v).count();
                    rank_sum[i] += (better + 1) as f64;
                    cells[i] += 1;
                }
            }
        }
        for (i, s) in summaries.iter_mut().enumerate() {
            s.avg_ranking = (cells[i] > 0).then(|| rank_sum[i] / cells[i] as f64);
        }
    }

    ComparisonReport {
        repetitions,
        schemes: summaries,
        runs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "table" => Ok(ReportFormat::Table),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::invalid("format", format!("unknown format {other:?} (expected table, json or csv)"))),
        }
    }
}

fn fmt_stat(s: Option<Stat>) -> String {
    s.map_or_else(|| "-".to_string(), |s| format!("{:.2}±{:.2}", s.mean, s.std))
}

fn fmt_pct(p: Option<f64>) -> String {
    p.map_or_else(|| "-".to_string(), |p| format!("{p:+.1}%"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

pub fn render_table(report: &ComparisonReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "mean±std over {} repetitions (lower is better)", report.repetitions);
    let mut header = format!("{:<10}", "Method");
    for metric in ["MAE", "RMSE", "G-Mean"] {
        for region in ReportRegion::ALL {
            header.push_str(&format!("{:>14}", format!("{metric} {}", region.label())));
        }
    }
    let _ = writeln!(out, "{header}");
    for s in &report.schemes {
        let mut line = format!("{:<10}", s.scheme.as_str());
        for metric in 0..3 {
            for region in ReportRegion::ALL {
                let r = s.region(region);
                line.push_str(&format!("{:>14}", fmt_stat([r.mae, r.rmse, r.gmean][metric])));
            }
        }
        let _ = writeln!(out, "{line}");
    }

    let _ = writeln!(out);
    let _ = writeln!(out, "{:<10}{:>12}{:>10}", "Method", "pearson_r", "avg_rank");
    for s in &report.schemes {
        let rank = s.avg_ranking.map_or_else(|| "-".to_string(), |r| format!("{r:.2}"));
        let _ = writeln!(out, "{:<10}{:>12}{:>10}", s.scheme.as_str(), fmt_stat(s.pearson_r), rank);
    }

    if report.schemes.iter().any(|s| s.change_all.is_some()) {
        let _ = writeln!(out);
        let _ = writeln!(out, "change vs vanilla (negative = lower error = improvement)");
        let _ = writeln!(
            out,
            "{:<10}{:>10}{:>10}{:>10}{:>10}{:>12}{:>12}",
            "Method", "MAE All", "MAE Few", "RMSE All", "RMSE Few", "G-Mean All", "G-Mean Few"
        );
        for s in &report.schemes {
            let (Some(a), Some(f)) = (s.change_all, s.change_few) else { continue };
            let _ = writeln!(
                out,
                "{:<10}{:>10}{:>10}{:>10}{:>10}{:>12}{:>12}",
                s.scheme.as_str(),
                fmt_pct(a.mae_pct),
                fmt_pct(f.mae_pct),
                fmt_pct(a.rmse_pct),
                fmt_pct(f.rmse_pct),
                fmt_pct(a.gmean_pct),
                fmt_pct(f.gmean_pct)
            );
        }
    }
    out
}

/// One row per (scheme, region).
pub fn render_csv(report: &ComparisonReport) -> String {
    let mut out = String::from(
        "scheme,region,mean_count,mae_mean,mae_std,rmse_mean,rmse_std,gmean_mean,gmean_std,mae_change_pct\n",
    );
    for s in &report.schemes {
        for r in &s.regions {
            let change = match r.region {
                ReportRegion::All => s.change_all.and_then(|c| c.mae_pct),
                ReportRegion::Few => s.change_few.and_then(|c| c.mae_pct),
                _ => None,
            };
            let _ = writeln!(
                out,
                "{},{},{:.3},{},{},{},{},{},{},{}",
                s.scheme.as_str(),
                r.region.key(),
                r.mean_count,
                fmt_opt(r.mae.map(|s| s.mean)),
                fmt_opt(r.mae.map(|s| s.std)),
                fmt_opt(r.rmse.map(|s| s.mean)),
                fmt_opt(r.rmse.map(|s| s.std)),
                fmt_opt(r.gmean.map(|s| s.mean)),
                fmt_opt(r.gmean.map(|s| s.std)),
                fmt_opt(change)
            );
        }
    }
    out
}

pub fn render(report: &ComparisonReport, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Table => render_table(report),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            s
        }
    })
}

/// Writes the report to `path`, or stdout when `path` is `None`.
pub fn emit_report(report: &ComparisonReport, format: ReportFormat, path: Option<&Path>) -> Result<()> {
    let text = render(report, format)?;
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::from(e).context(p.display().to_string())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}
