use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use imbreg::harness::ReportFormat;
use imbreg::{
    count_bins, generate_synthetic, lds_weights, load_csv, partition_regions, region_report, save_csv, split,
    write_csv, BinSpec, EdgeMode, Error, ExperimentConfig, FocalConfig, KernelConfig, MlpConfig, Region,
    RegionThresholds, Result, Reweighting, Scheme, SplitSpec, SynthConfig, TrainedModel,
};

#[derive(Parser)]
#[command(name = "imbreg", version, about = "Imbalanced regression toolkit for skewed labels")]
struct Cli {
    /// Seed for synthesis, splitting and model initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic skewed-label dataset as CSV.
    Synth {
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 3.0)]
        skew: f64,
        #[arg(long, default_value_t = 5.0)]
        noise_sd: f64,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seeded train/test split of a CSV.
    Split {
        data: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        train_fraction: f64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Per-bin counts, regions and the imbalance ratio of a CSV.
    Bins {
        data: PathBuf,
        #[command(flatten)]
        bins: BinArgs,
        #[command(flatten)]
        regions: RegionArgs,
    },
    /// LDS weight summary for a CSV.
    Weights {
        data: PathBuf,
        #[command(flatten)]
        bins: BinArgs,
        #[command(flatten)]
        kernel: KernelArgs,
    },
    /// Train one model and save it as JSON.
    Train {
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "vanilla")]
        scheme: String,
        #[arg(long, value_delimiter = ',', default_value = "64,64")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Clamp predictions to [0, 100].
        #[arg(long)]
        clamp: bool,
        #[arg(long, default_value_t = 0.2)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[command(flatten)]
        kernel: KernelArgs,
        #[command(flatten)]
        bins: BinArgs,
    },
    /// Evaluate a saved model on a test CSV, with regions from a training CSV.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[command(flatten)]
        bins: BinArgs,
        #[command(flatten)]
        regions: RegionArgs,
    },
    /// Run a vanilla-vs-reweighted comparison from a JSON or TOML config.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BinArgs {
    /// Bin width in label units.
    #[arg(long, default_value_t = 1.0)]
    width: f64,
}

impl BinArgs {
    fn spec(&self) -> Result<BinSpec<f64>> {
        BinSpec::new(0.0, 100.0, self.width)
    }
}

#[derive(Args)]
struct RegionArgs {
    /// Region threshold preset: bh, sm or az.
    #[arg(long, default_value = "bh")]
    preset: String,
    /// Explicit #lower (overrides the preset; needs --upper).
    #[arg(long, requires = "upper")]
    lower: Option<usize>,
    #[arg(long, requires = "lower")]
    upper: Option<usize>,
}

impl RegionArgs {
    fn thresholds(&self) -> Result<RegionThresholds> {
        match (self.lower, self.upper) {
            (Some(l), Some(u)) => RegionThresholds::new(l, u),
            _ => RegionThresholds::preset(&self.preset),
        }
    }
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, default_value_t = 5)]
    ell: usize,
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    /// Kernel edge handling: renormalize or truncate.
    #[arg(long, default_value = "renormalize")]
    edge: String,
}

impl KernelArgs {
    fn config(&self) -> Result<KernelConfig<f64>> {
        let edge = match self.edge.as_str() {
            "renormalize" => EdgeMode::Renormalize,
            "truncate" => EdgeMode::Truncate,
            other => {
                return Err(Error::InvalidArgument {
                    arg: "edge",
                    reason: format!("unknown edge mode {other:?}"),
                })
            }
        };
        KernelConfig::new(self.ell, self.sigma, edge)
    }
}

fn write_output(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::from(e).context(p.display().to_string())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn unsupported(format: Format, command: &str) -> Error {
    let name = match format {
        Format::Table => "table",
        Format::Json => "json",
        Format::Csv => "csv",
    };
    Error::InvalidArgument {
        arg: "format",
        reason: format!("{command} does not support --format {name}"),
    }
}

fn region_name(r: Region) -> &'static str {
    match r {
        Region::Many => "many",
        Region::Medium => "medium",
        Region::Few => "few",
    }
}

fn cmd_bins(cli: &Cli, data: &Path, bins: &BinArgs, regions: &RegionArgs) -> Result<String> {
    let d = load_csv::<f64>(data)?;
    let spec = bins.spec()?;
    let th = regions.thresholds()?;
    let counts = count_bins(&d.labels(), &spec)?;
    let part = partition_regions(&counts, &th);
    let ratio = counts.imbalance_ratio()?;
    let ratio_text = if ratio.is_infinite() { "inf".to_string() } else { format!("{ratio:.4}") };
    let rows = (0..spec.n_bins()).map(|k| {
        let (lo, hi) = spec.edges(k);
        (k, lo, hi, counts.counts()[k], region_name(part.region_of_bin(k)))
    });
    let mut out = String::new();
    match cli.format {
        Format::Table => {
            let _ = writeln!(out, "samples {}  bins {}  thresholds lower={} upper={}", d.len(), spec.n_bins(), th.lower, th.upper);
            let _ = writeln!(
                out,
                "imbalance_ratio {ratio_text}  bins many={} medium={} few={}",
                part.bins_in(Region::Many),
                part.bins_in(Region::Medium),
                part.bins_in(Region::Few)
            );
            let _ = writeln!(out, "{:>5}{:>10}{:>10}{:>8}{:>8}", "bin", "lo", "hi", "count", "region");
            for (k, lo, hi, c, r) in rows {
                let _ = writeln!(out, "{k:>5}{lo:>10.2}{hi:>10.2}{c:>8}{r:>8}");
            }
        }
        Format::Csv => {
            out.push_str("bin,lo,hi,count,region\n");
            for (k, lo, hi, c, r) in rows {
                let _ = writeln!(out, "{k},{lo},{hi},{c},{r}");
            }
        }
        Format::Json => {
            let bins: Vec<_> = rows
                .map(|(k, lo, hi, c, r)| serde_json::json!({"bin": k, "lo": lo, "hi": hi, "count": c, "region": r}))
                .collect();
            let v = serde_json::json!({
                "samples": d.len(),
                "thresholds": th,
                "imbalance_ratio": ratio_text,
                "bins": bins,
            });
            out = serde_json::to_string_pretty(&v)? + "\n";
        }
    }
    Ok(out)
}

fn cmd_weights(cli: &Cli, data: &Path, bins: &BinArgs, kernel: &KernelArgs) -> Result<String> {
    let d = load_csv::<f64>(data)?;
    let spec = bins.spec()?;
    let labels = d.labels();
    let w = lds_weights(&labels, &spec, &kernel.config()?)?;
    let ws = w.as_slice();
    let min = ws.iter().copied().fold(f64::INFINITY, f64::min);
    let max = ws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let counts = count_bins(&labels, &spec)?;
    // weight is constant within a bin
    let mut per_bin = vec![None; spec.n_bins()];
    for (&y, &wi) in labels.iter().zip(ws) {
        per_bin[spec.bin_index(y)?] = Some(wi);
    }
    let rows: Vec<(usize, usize, f64)> = per_bin
        .iter()
        .enumerate()
        .filter_map(|(k, w)| w.map(|w| (k, counts.counts()[k], w)))
        .collect();
    let mut out = String::new();
    match cli.format {
        Format::Table => {
            let _ = writeln!(out, "samples {}  mean {:.6}  min {:.6}  max {:.6}  max/min {:.4}", ws.len(), w.mean(), min, max, max / min);
            let _ = writeln!(out, "{:>5}{:>8}{:>12}", "bin", "count", "weight");
            for (k, c, wk) in rows {
                let _ = writeln!(out, "{k:>5}{c:>8}{wk:>12.6}");
            }
        }
        Format::Csv => {
            out.push_str("bin,count,weight\n");
            for (k, c, wk) in rows {
                let _ = writeln!(out, "{k},{c},{wk}");
            }
        }
        Format::Json => {
            let bins: Vec<_> = rows
                .iter()
                .map(|(k, c, wk)| serde_json::json!({"bin": k, "count": c, "weight": wk}))
                .collect();
            let v = serde_json::json!({"samples": ws.len(), "mean": w.mean(), "min": min, "max": max, "bins": bins});
            out = serde_json::to_string_pretty(&v)? + "\n";
        }
    }
    Ok(out)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { n, dim, skew, noise_sd, out } => {
            if cli.format != Format::Csv && cli.format != Format::Table {
                return Err(unsupported(cli.format, "synth"));
            }
            let cfg = SynthConfig { n: *n, dim: *dim, skew: *skew, noise_sd: *noise_sd, seed: cli.seed.unwrap_or(0) };
            let d = generate_synthetic::<f64>(&cfg)?;
            match out {
                Some(p) => save_csv(&d, p),
                None => write_csv(&d, std::io::stdout().lock()),
            }
        }
        Command::Split { data, train_fraction, train_out, test_out } => {
            let d = load_csv::<f64>(data)?;
            let (tr, te) = split(&d, &SplitSpec::new(*train_fraction, cli.seed.unwrap_or(0))?)?;
            save_csv(&tr, train_out)?;
            save_csv(&te, test_out)?;
            let text = match cli.format {
                Format::Json => format!("{}\n", serde_json::json!({"train": tr.len(), "test": te.len()})),
                _ => format!("train {}  test {}\n", tr.len(), te.len()),
            };
            write_output(&text, None)
        }
        Command::Bins { data, bins, regions } => write_output(&cmd_bins(cli, data, bins, regions)?, None),
        Command::Weights { data, bins, kernel } => write_output(&cmd_weights(cli, data, bins, kernel)?, None),
        Command::Train {
            data,
            out,
            scheme,
            hidden,
            epochs,
            batch_size,
            lr,
            clamp,
            alpha,
            gamma,
            kernel,
            bins,
        } => {
            let d = load_csv::<f64>(data)?;
            let rw = Reweighting {
                scheme: scheme.parse::<Scheme>()?,
                focal: FocalConfig::new(*alpha, *gamma)?,
                kernel: kernel.config()?,
            };
            let cfg = MlpConfig {
                hidden_sizes: hidden.clone(),
                epochs: *epochs,
                batch_size: *batch_size,
                learning_rate: *lr,
                seed: cli.seed.unwrap_or(0),
                output_clamp: *clamp,
                ..MlpConfig::default()
            };
            let model = imbreg::train(&d, &rw, &cfg, &bins.spec()?)?;
            model.save(out)?;
            let first = model.training_log.first().copied().unwrap_or(f64::NAN);
            let last = model.training_log.last().copied().unwrap_or(f64::NAN);
            let text = match cli.format {
                Format::Json => format!(
                    "{}\n",
                    serde_json::json!({"model": out, "scheme": rw.scheme, "epochs": cfg.epochs, "first_loss": first, "final_loss": last})
                ),
                _ => format!("saved {}  scheme {}  loss {first:.4} -> {last:.4}\n", out.display(), rw.scheme),
            };
            write_output(&text, None)
        }
        Command::Eval { model, test, train, bins, regions } => {
            let test_set = load_csv::<f64>(test)?;
            let train_set = load_csv::<f64>(train)?;
            let m = TrainedModel::<f64>::load_for_dim(model, test_set.dim())?;
            if train_set.dim() != m.dim() {
                return Err(Error::DimensionMismatch { expected: m.dim(), got: train_set.dim() });
            }
            let spec = bins.spec()?;
            let counts = count_bins(&train_set.labels(), &spec)?;
            let part = partition_regions(&counts, &regions.thresholds()?);
            let preds = m.predict_dataset(&test_set)?;
            let report = region_report(&preds, &test_set.labels(), &part, &spec, &counts)?;
            let text = match cli.format {
                Format::Table => report.to_table(),
                Format::Json => serde_json::to_string_pretty(&report)? + "\n",
                Format::Csv => return Err(unsupported(cli.format, "eval")),
            };
            write_output(&text, None)
        }
        Command::Bench { config, out } => {
            let mut cfg = ExperimentConfig::from_path(config)?;
            if let Some(seed) = cli.seed {
                cfg.base_seed = seed;
            }
            let report = imbreg::run_experiment(&cfg)?;
            let format = match cli.format {
                Format::Table => ReportFormat::Table,
                Format::Json => ReportFormat::Json,
                Format::Csv => ReportFormat::Csv,
            };
            imbreg::emit_report(&report, format, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid usage");
            eprintln!("error\tusage\t{}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\t'], " ");
            eprintln!("error\t{}\t{}", e.code(), msg);
            ExitCode::FAILURE
        }
    }
}
