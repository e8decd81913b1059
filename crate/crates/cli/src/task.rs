//! Pipeline commands. Each reads its inputs through [`RunFiles`] and writes into one output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use outcode::calibrate::{
    automation_csv, ece, evaluate_automation, fit_isotonic, search_thresholds, AutomationRow, IsotonicMap,
    ThresholdRule, ECE_BINS,
};
use outcode::corpus::{corpus_stats, generate_corpus, read_encounters, split_by_patient, write_encounters, Encounter, LabelSpace};
use outcode::metrics::{
    breakdown, breakdown_csv, consistency_check, evaluate, matched_code_pairs, oracle_recall, read_records,
    write_records, GroupKey, MetricsReport, PredictionRecord, DEFAULT_BUCKETS,
};
use outcode::model::{BaseModel, ModalityVocab, Reranker};
use outcode::preprocess::{prepare, Vocabulary};
use outcode::train::{
    data_fraction_experiment, fraction_csv, predict_records, rerank_records, reranker_inputs, train_base,
    train_reranker, EARLY_STOP_K,
};
use outcode::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::manifest::RunFiles;

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenCorpusArgs {}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PreprocessArgs {
    /// Encounter file (JSON lines) written by gen-corpus.
    #[arg(long = "in")]
    pub input: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// Directory written by preprocess.
    #[arg(long = "in")]
    pub input: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainRerankerArgs {
    /// Directory written by preprocess.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Base model checkpoint written by train.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Directory written by preprocess.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Base model checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Reranker checkpoint; scores come from the reranker when given.
    #[arg(long)]
    pub reranker: Option<PathBuf>,
    /// Recall cut-off.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Per-group table for the test split.
    #[arg(long, value_parser = ["dept", "label_frequency", "first_visit"])]
    pub breakdown: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PredictionsArgs {
    /// Directory written by evaluate.
    #[arg(long = "in")]
    pub input: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AutomateArgs {
    /// Directory written by evaluate.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// False-positive budgets, comma separated.
    #[arg(long = "max-fp", value_delimiter = ',', required = true)]
    pub max_fp: Vec<f64>,
    /// Fit isotonic calibration on dev predictions before searching thresholds.
    #[arg(long)]
    pub calibrated: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Directory written by preprocess.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Directory written by evaluate; adds oracle bounds and headline metrics.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

/// A replayable unit of work; stored in every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Task {
    GenCorpus(GenCorpusArgs),
    Preprocess(PreprocessArgs),
    Train(DataArgs),
    TrainReranker(TrainRerankerArgs),
    Evaluate(EvaluateArgs),
    Fractions(DataArgs),
    Calibrate(PredictionsArgs),
    Automate(AutomateArgs),
    Report(ReportArgs),
}

fn absolute(p: &mut PathBuf) -> Result<()> {
    *p = crate::manifest::canonical(p)?;
    Ok(())
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::GenCorpus(_) => "gen-corpus",
            Task::Preprocess(_) => "preprocess",
            Task::Train(_) => "train",
            Task::TrainReranker(_) => "train-reranker",
            Task::Evaluate(_) => "evaluate",
            Task::Fractions(_) => "fractions",
            Task::Calibrate(_) => "calibrate",
            Task::Automate(_) => "automate",
            Task::Report(_) => "report",
        }
    }

    /// Rewrites input paths as absolute paths so a manifest replays from any directory.
    pub fn absolutize(&mut self) -> Result<()> {
        match self {
            Task::GenCorpus(_) => Ok(()),
            Task::Preprocess(a) => absolute(&mut a.input),
            Task::Train(a) | Task::Fractions(a) => absolute(&mut a.input),
            Task::TrainReranker(a) => {
                absolute(&mut a.input)?;
                absolute(&mut a.model)
            }
            Task::Evaluate(a) => {
                absolute(&mut a.input)?;
                absolute(&mut a.model)?;
                a.reranker.as_mut().map_or(Ok(()), absolute)
            }
            Task::Calibrate(a) => absolute(&mut a.input),
            Task::Automate(a) => absolute(&mut a.input),
            Task::Report(a) => {
                absolute(&mut a.input)?;
                a.predictions.as_mut().map_or(Ok(()), absolute)
            }
        }
    }

    /// Runs the task; returns a short human-readable summary.
    pub fn execute(&self, cfg: &RunConfig, files: &mut RunFiles) -> Result<String> {
        match self {
            Task::GenCorpus(_) => gen_corpus(cfg, files),
            Task::Preprocess(a) => preprocess(cfg, &a.input, files),
            Task::Train(a) => train(cfg, &a.input, files),
            Task::TrainReranker(a) => train_rr(cfg, a, files),
            Task::Evaluate(a) => evaluate_cmd(cfg, a, files),
            Task::Fractions(a) => fractions(cfg, &a.input, files),
            Task::Calibrate(a) => calibrate(&a.input, files),
            Task::Automate(a) => automate(cfg, a, files),
            Task::Report(a) => report(cfg, a, files),
        }
    }
}

struct Data {
    train: Vec<Encounter>,
    dev: Vec<Encounter>,
    test: Vec<Encounter>,
    labels: LabelSpace,
    vocab: Vocabulary,
}

fn load_data(dir: &Path, files: &mut RunFiles) -> Result<Data> {
    let mut read = |name: &str| files.input(&dir.join(name));
    Ok(Data {
        train: read_encounters(&read("train.jsonl")?)?,
        dev: read_encounters(&read("dev.jsonl")?)?,
        test: read_encounters(&read("test.jsonl")?)?,
        labels: LabelSpace::read(&read("labels.tsv")?)?,
        vocab: Vocabulary::read(&read("vocab.txt")?)?,
    })
}

fn gen_corpus(cfg: &RunConfig, files: &mut RunFiles) -> Result<String> {
    let g = generate_corpus(&cfg.corpus_config())?;
    write_encounters(&files.output("corpus.jsonl")?, &g.encounters)?;
    let stats = corpus_stats(&g.encounters, None);
    files.write("corpus_stats.txt", &format!("{stats}\n"))?;
    Ok(format!("{} encounters, {} codes", stats.documents, stats.distinct_codes))
}

fn preprocess(cfg: &RunConfig, input: &Path, files: &mut RunFiles) -> Result<String> {
    let corpus = read_encounters(&files.input(input)?)?;
    let split = split_by_patient(&corpus, cfg.split.dev_patients, cfg.split.test_patients, cfg.split_seed())?;
    let p = prepare(&split, &cfg.prep)?;
    write_encounters(&files.output("train.jsonl")?, &p.train)?;
    write_encounters(&files.output("dev.jsonl")?, &p.dev)?;
    write_encounters(&files.output("test.jsonl")?, &p.test)?;
    p.labels.write(&files.output("labels.tsv")?)?;
    p.vocab.write(&files.output("vocab.txt")?)?;
    files.write("prep_report.txt", &p.report.to_text())?;
    files.write("prep_report.csv", &p.report.to_csv())?;
    Ok(format!(
        "train {} / dev {} / test {} documents, {} labels, vocabulary {}",
        p.train.len(),
        p.dev.len(),
        p.test.len(),
        p.labels.len(),
        p.vocab.len()
    ))
}

fn train(cfg: &RunConfig, input: &Path, files: &mut RunFiles) -> Result<String> {
    let d = load_data(input, files)?;
    let init = BaseModel::init(&cfg.model, d.vocab.len(), d.labels.len(), cfg.init_seed())?;
    let (model, history) = train_base(init, &d.train, &d.dev, &d.labels, &d.vocab, &cfg.train_config())?;
    model.save(&files.output("model.ckpt")?, &d.vocab, &d.labels)?;
    files.write("history.csv", &history.to_csv())?;
    Ok(best_summary(&history))
}

fn best_summary(h: &outcode::train::TrainHistory) -> String {
    match h.best() {
        Some(b) => format!("best epoch {} with dev R@5 {:.4}", b.epoch, b.dev_r5),
        None => format!("starting parameters kept, dev R@5 {:.4}", h.initial_dev_r5),
    }
}

fn train_rr(cfg: &RunConfig, a: &TrainRerankerArgs, files: &mut RunFiles) -> Result<String> {
    let d = load_data(&a.input, files)?;
    let mut base = BaseModel::load(&files.input(&a.model)?, &d.vocab, &d.labels)?;
    base.freeze();
    let rr = Reranker::init(
        &cfg.reranker,
        d.labels.len(),
        base.d_conv(),
        ModalityVocab::from_encounters(&d.train),
        cfg.reranker_init_seed(),
    )?;
    let (rr, history) = train_reranker(rr, &base, &d.train, &d.dev, &d.labels, &d.vocab, &cfg.reranker_train_config())?;
    rr.save(&files.output("reranker.ckpt")?, &d.vocab, &d.labels)?;
    files.write("history.csv", &history.to_csv())?;
    Ok(best_summary(&history))
}

fn evaluate_cmd(cfg: &RunConfig, a: &EvaluateArgs, files: &mut RunFiles) -> Result<String> {
    if a.k == 0 {
        return Err(Error::Config("--k must be at least 1".into()));
    }
    let d = load_data(&a.input, files)?;
    let base = BaseModel::load(&files.input(&a.model)?, &d.vocab, &d.labels)?;
    let max_len = cfg.prep.max_len;
    let (name, dev, test) = match &a.reranker {
        None => (
            "base",
            predict_records(&base, &d.vocab, &d.labels, &d.dev, max_len)?,
            predict_records(&base, &d.vocab, &d.labels, &d.test, max_len)?,
        ),
        Some(path) => {
            let rr = Reranker::load(&files.input(path)?, &d.vocab, &d.labels)?;
            let run = |encs: &[Encounter]| -> Result<Vec<PredictionRecord>> {
                let x = reranker_inputs(&rr, &base, &d.vocab, encs, max_len)?;
                rerank_records(&rr, &x, encs, &d.labels)
            };
            ("reranker", run(&d.dev)?, run(&d.test)?)
        }
    };
    write_records(&files.output("dev.predictions.jsonl")?, &dev)?;
    write_records(&files.output("test.predictions.jsonl")?, &test)?;
    let threshold = cfg.train.decision_threshold;
    let mut csv = format!("model,split,{}\n", MetricsReport::CSV_HEADER);
    let mut table = String::new();
    for (split, recs) in [("dev", &dev), ("test", &test)] {
        let m = evaluate(recs, a.k, threshold)?;
        let _ = writeln!(csv, "{name},{split},{}", m.csv_row());
        let _ = write!(table, "{split}\n{}\n", m.to_table(name));
    }
    files.write("metrics.csv", &csv)?;
    files.write("metrics.txt", &table)?;
    if let Some(key) = &a.breakdown {
        let key: GroupKey = key.parse()?;
        let rows = breakdown(&test, key, a.k, threshold, d.labels.counts(), &DEFAULT_BUCKETS)?;
        files.write("breakdown.csv", &breakdown_csv(&rows))?;
    }
    Ok(table.trim_end().to_string())
}

fn fractions(cfg: &RunConfig, input: &Path, files: &mut RunFiles) -> Result<String> {
    let d = load_data(input, files)?;
    let rows = data_fraction_experiment(
        &cfg.fractions,
        &cfg.model,
        &cfg.train_config(),
        &d.train,
        &d.dev,
        &d.test,
        &d.labels,
        &d.vocab,
    )?;
    let csv = fraction_csv(&rows);
    files.write("fractions.csv", &csv)?;
    Ok(csv.trim_end().to_string())
}

fn load_predictions(dir: &Path, files: &mut RunFiles) -> Result<(Vec<PredictionRecord>, Vec<PredictionRecord>)> {
    let dev = read_records(&files.input(&dir.join("dev.predictions.jsonl"))?)?;
    let test = read_records(&files.input(&dir.join("test.predictions.jsonl"))?)?;
    let n = dev.first().or(test.first()).map_or(0, PredictionRecord::n_labels);
    if dev.iter().chain(&test).any(|r| r.n_labels() != n) {
        return Err(Error::Validation {
            line: 0,
            msg: "prediction files disagree on the number of labels".into(),
        });
    }
    Ok((dev, test))
}

fn calibrate(input: &Path, files: &mut RunFiles) -> Result<String> {
    let (dev, test) = load_predictions(input, files)?;
    let map = fit_isotonic(&dev)?;
    let dev_cal = map.calibrate_all(&dev)?;
    let test_cal = map.calibrate_all(&test)?;
    let json = serde_json::to_string(&map).map_err(|e| Error::Invalid(e.to_string()))?;
    files.write("isotonic.json", &(json + "\n"))?;
    write_records(&files.output("dev.calibrated.jsonl")?, &dev_cal)?;
    write_records(&files.output("test.calibrated.jsonl")?, &test_cal)?;

    let mut csv = String::from("label,fitted,dev_ece_raw,dev_ece_calibrated,test_ece_raw,test_ece_calibrated\n");
    let (mut fitted, mut dev_ok, mut test_better) = (0, 0, 0);
    for (l, fit) in map.fits.iter().enumerate() {
        let dr = ece(&dev, l, ECE_BINS)?;
        let dc = ece(&dev_cal, l, ECE_BINS)?;
        let (tr, tc) = if test.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (ece(&test, l, ECE_BINS)?, ece(&test_cal, l, ECE_BINS)?)
        };
        if fit.is_some() {
            fitted += 1;
            dev_ok += usize::from(dc <= dr + 1e-9);
            test_better += usize::from(tc < tr);
        }
        let _ = writeln!(csv, "{l},{},{dr:.6},{dc:.6},{tr:.6},{tc:.6}", fit.is_some());
    }
    files.write("ece.csv", &csv)?;
    let summary = format!(
        "fitted labels: {fitted} of {}\ndev ECE not increased: {dev_ok} of {fitted}\ntest ECE decreased: {test_better} of {fitted}\n",
        map.fits.len()
    );
    files.write("calibration.txt", &summary)?;
    Ok(summary.trim_end().to_string())
}

#[derive(Serialize)]
struct RuleRecord {
    max_fp: f64,
    calibrated: bool,
    rule: ThresholdRule,
    nothing_selected: bool,
    dev_selected: usize,
    dev_fp_rate: f64,
    test_selected: usize,
    test_tp: usize,
    test_fp: usize,
    test_possible: usize,
}

fn automate(cfg: &RunConfig, a: &AutomateArgs, files: &mut RunFiles) -> Result<String> {
    let (dev, test) = load_predictions(&a.input, files)?;
    let threshold = cfg.train.decision_threshold;
    let map: Option<IsotonicMap> = if a.calibrated { Some(fit_isotonic(&dev)?) } else { None };
    let search_on = match &map {
        Some(m) => m.calibrate_all(&dev)?,
        None => dev,
    };
    let mut rows = Vec::new();
    let mut rules = Vec::new();
    for &max_fp in &a.max_fp {
        let found = search_thresholds(&search_on, max_fp, threshold)?;
        let rep = evaluate_automation(&test, &found.rule, map.as_ref())?;
        rows.push(AutomationRow {
            max_fp,
            calibrated: a.calibrated,
            percent_identified: rep.percent_identified,
            achieved_fp_rate: rep.result.fp_rate,
        });
        rules.push(RuleRecord {
            max_fp,
            calibrated: a.calibrated,
            rule: found.rule,
            nothing_selected: found.nothing_selected,
            dev_selected: found.result.selected.len(),
            dev_fp_rate: found.result.fp_rate,
            test_selected: rep.result.selected.len(),
            test_tp: rep.result.tp,
            test_fp: rep.result.fp,
            test_possible: rep.possible,
        });
    }
    let csv = automation_csv(&rows);
    files.write("automation.csv", &csv)?;
    let json = serde_json::to_string_pretty(&rules).map_err(|e| Error::Invalid(e.to_string()))?;
    files.write("rules.json", &(json + "\n"))?;
    Ok(csv.trim_end().to_string())
}

fn report(cfg: &RunConfig, a: &ReportArgs, files: &mut RunFiles) -> Result<String> {
    let d = load_data(&a.input, files)?;
    let parts = [("train", &d.train), ("dev", &d.dev), ("test", &d.test)];
    let stats: Vec<_> = parts
        .iter()
        .map(|(name, e)| (*name, corpus_stats(e, if *name == "train" { None } else { Some(&d.train) })))
        .collect();
    let mut s = String::from("corpus\n");
    let _ = writeln!(s, "{:<22}{:>10}{:>10}{:>10}", "", "train", "dev", "test");
    let mut row = |label: &str, f: &dyn Fn(&outcode::corpus::CorpusStats) -> String| {
        let _ = write!(s, "{label:<22}");
        for (_, st) in &stats {
            let _ = write!(s, "{:>10}", f(st));
        }
        s.push('\n');
    };
    row("documents", &|st| st.documents.to_string());
    row("patients", &|st| st.patients.to_string());
    row("distinct codes", &|st| st.distinct_codes.to_string());
    row("mean length (chars)", &|st| format!("{:.1}", st.mean_text_chars));
    row("mean codes per doc", &|st| format!("{:.3}", st.mean_codes));
    row("unseen codes (%)", &|st| st.unseen_code_pct.map_or("-".into(), |p| format!("{p:.2}")));

    let window = cfg.report.consistency_window_days as i64;
    let _ = writeln!(s, "\nlabel consistency (same chapter, visits within {window} days)");
    for (name, e) in parts {
        let c = consistency_check(&matched_code_pairs(e, window))?;
        let rate = c.rate.map_or("-".into(), |r| format!("{:.2}%", 100.0 * r));
        let _ = writeln!(s, "{name:<8} matched {:>6}  inconsistent {:>6}  rate {rate}", c.matched, c.inconsistent);
    }

    if let Some(dir) = &a.predictions {
        let (_, test) = load_predictions(dir, files)?;
        let m = evaluate(&test, EARLY_STOP_K, cfg.train.decision_threshold)?;
        let min_k = cfg.report.oracle_min_count;
        let oracle = oracle_recall(&test, d.labels.counts(), 0, EARLY_STOP_K)?;
        let oracle_k = oracle_recall(&test, d.labels.counts(), min_k, EARLY_STOP_K)?;
        let _ = writeln!(s, "\ntest metrics\n{}", m.to_table("model").trim_end());
        let _ = writeln!(s, "{:<16} {:>59.2}", "oracle", 100.0 * oracle);
        let _ = writeln!(s, "{:<16} {:>59.2}", format!("oracle+min{min_k}"), 100.0 * oracle_k);
    }
    files.write("report.txt", &s)?;
    Ok(s.trim_end().to_string())
}
