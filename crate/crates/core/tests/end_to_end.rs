use imbreg::harness::{render, ReportFormat};
use imbreg::{
    count_bins, features_for_labels, generate_synthetic, run_experiment, train, train_observed, BinSpec64, DataSource,
    Dataset64, ExperimentConfig, MlpConfig, Reweighting, ReportRegion, Scheme, SynthConfig,
};

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            out[k] = mid;
        }
        i = j + 1;
    }
    out
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    imbreg::pearson(&ranks(x), &ranks(y)).unwrap().unwrap()
}

#[test]
fn skewed_bin_counts_decrease_with_label() {
    for seed in 0..3 {
        let d: Dataset64 = generate_synthetic(&SynthConfig { n: 20_000, seed, ..Default::default() }).unwrap();
        let counts = count_bins(&d.labels(), &BinSpec64::default()).unwrap();
        let c: Vec<f64> = counts.counts().iter().map(|&c| c as f64).collect();
        let k: Vec<f64> = (0..c.len()).map(|k| k as f64).collect();
        let rho = spearman(&k, &c);
        assert!(rho < -0.8, "seed {seed}: spearman {rho}");
    }
}

#[test]
fn training_loss_drops_on_learnable_data() {
    let data: Dataset64 = generate_synthetic(&SynthConfig { n: 600, ..Default::default() }).unwrap();
    let bins = BinSpec64::default();
    let dropped = (0..10)
        .filter(|&seed| {
            let cfg = MlpConfig { epochs: 30, seed, ..MlpConfig::default() };
            let log = train(&data, &Reweighting::vanilla(), &cfg, &bins).unwrap().training_log;
            log.last() < log.first()
        })
        .count();
    assert!(dropped >= 9, "{dropped}/10");
}

#[test]
fn lds_on_uniform_labels_follows_vanilla_trajectory() {
    let labels: Vec<f64> = (0..100).flat_map(|k| std::iter::repeat_n(k as f64 + 0.5, 3)).collect();
    let data: Dataset64 = features_for_labels(&labels, 4, 1.0, 7).unwrap();
    let cfg = MlpConfig { hidden_sizes: vec![16], epochs: 20, ..MlpConfig::default() };
    let bins = BinSpec64::default();
    let mut a = Vec::new();
    let mut b = Vec::new();
    train_observed(&data, &Reweighting::vanilla(), &cfg, &bins, |_, n| a.push(n.clone())).unwrap();
    train_observed(&data, &Reweighting::new(Scheme::Lds), &cfg, &bins, |_, n| b.push(n.clone())).unwrap();
    assert_eq!(a.len(), 20);
    for (x, y) in a.iter().zip(&b) {
        assert!(x.max_abs_diff(y) < 1e-12);
    }
}

#[test]
fn few_region_is_worse_than_many_for_vanilla() {
    let cfg = ExperimentConfig {
        repetitions: 2,
        model: MlpConfig { epochs: 40, ..MlpConfig::default() },
        ..ExperimentConfig::new(DataSource::Synth(SynthConfig::default()), vec![Scheme::Vanilla, Scheme::Lds])
    };
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.runs.len(), 4);
    for run in report.runs_for(Scheme::Vanilla) {
        let few = run.report.metrics(ReportRegion::Few).unwrap().mae;
        let many = run.report.metrics(ReportRegion::Many).unwrap().mae;
        assert!(few > many, "repetition {}: few {few} many {many}", run.repetition);
    }
    let lds = report.scheme(Scheme::Lds).unwrap();
    assert!(lds.change_few.unwrap().mae_pct.unwrap() < 0.0);
    let csv = render(&report, ReportFormat::Csv).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
}
