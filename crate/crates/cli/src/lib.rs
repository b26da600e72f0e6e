//! Command implementations behind the `mcrf` binary.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mcrf_core::checkpoint::{Checkpoint, CheckpointError};
use mcrf_core::classifier::{Metrics, Prediction};
use mcrf_core::config::{Ablation, ConfigError, RunConfig};
use mcrf_core::crf_attn::MarginalExport;
use mcrf_core::dataset::{DataError, Dataset};
use mcrf_core::ingest::{
    align_span, parse_corpus, tokenize, AspectInstance, CorpusFormat, DropReport, IngestError, Polarity, PolarityCounts,
};
use mcrf_core::parallel::Exec;
use mcrf_core::trainer::{evaluate, grid_search, train, Grid, TrainError, TrainOutcome};

/// Bad command input that is not a config or corpus problem.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn ingest_category(e: &IngestError) -> (&'static str, i32) {
    match e {
        IngestError::Io { .. } => ("path", 4),
        _ => ("data", 5),
    }
}

/// Category name and exit code for a failed command.
pub fn error_category(err: &anyhow::Error) -> (&'static str, i32) {
    for cause in err.chain() {
        if cause.downcast_ref::<InputError>().is_some() {
            return ("input", 2);
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return ("config", 3);
        }
        if let Some(e) = cause.downcast_ref::<CheckpointError>() {
            return match e {
                CheckpointError::VocabMismatch { .. } => ("vocab", 7),
                _ => ("checkpoint", 6),
            };
        }
        if let Some(e) = cause.downcast_ref::<DataError>() {
            return match e {
                DataError::MissingPath(_) => ("config", 3),
                DataError::Empty(_) => ("data", 5),
                DataError::Ingest(e) => ingest_category(e),
            };
        }
        if let Some(e) = cause.downcast_ref::<IngestError>() {
            return ingest_category(e);
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            match e {
                TrainError::Config(_) => return ("config", 3),
                TrainError::EmptySplit(_) => return ("data", 5),
                _ => return ("train", 8),
            }
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ("io", 4);
        }
    }
    ("internal", 1)
}

/// One line of a results table. Percentages carry two decimals.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub digest: String,
    pub seed: u64,
}

impl ReportRow {
    pub const HEADER: &'static str = "dataset\taccuracy\tmacro_f1\tconfig\tseed";

    pub fn new(dataset: impl Into<String>, m: &Metrics, cfg: &RunConfig) -> Self {
        Self {
            dataset: dataset.into(),
            accuracy: m.accuracy,
            macro_f1: m.macro_f1,
            digest: cfg.digest(),
            seed: cfg.seed,
        }
    }
}

impl fmt::Display for ReportRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.2}\t{:.2}\t{}\t{}",
            self.dataset,
            100.0 * self.accuracy,
            100.0 * self.macro_f1,
            self.digest,
            self.seed
        )
    }
}

/// Read, seed-override and validate a run config.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Relative paths in a config are taken from the config file's directory.
fn resolve(cfg: &RunConfig, base: &Path) -> RunConfig {
    let fix = |p: &Option<String>| {
        p.as_ref().map(|s| {
            let path = Path::new(s);
            if path.is_absolute() {
                s.clone()
            } else {
                base.join(path).display().to_string()
            }
        })
    };
    RunConfig {
        train_path: fix(&cfg.train_path),
        dev_path: fix(&cfg.dev_path),
        test_path: fix(&cfg.test_path),
        embeddings_path: fix(&cfg.embeddings_path),
        output_dir: fix(&Some(cfg.output_dir.clone())).unwrap_or_default(),
        ..cfg.clone()
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_data(cfg: &RunConfig, base: &Path) -> Result<Dataset> {
    Dataset::load(&resolve(cfg, base)).context("loading corpora")
}

/// Files written for one training run.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub rows: Vec<ReportRow>,
}

fn finish_run(cfg: &RunConfig, base: &Path, data: &Dataset, outcome: &TrainOutcome, tag: &str) -> Result<RunReport> {
    let out = resolve(cfg, base).output_dir;
    let dir = Path::new(&out).join(format!("{tag}-{}", cfg.digest()));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let checkpoint = dir.join("model.ckpt");
    outcome.checkpoint.save(&checkpoint)?;
    let log = dir.join("train_log.jsonl");
    std::fs::write(&log, outcome.log.to_jsonl()).with_context(|| format!("writing {}", log.display()))?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string()).context("writing config copy")?;
    let mut rows = vec![ReportRow::new("dev", &outcome.checkpoint.dev_metrics, cfg)];
    if !data.test.is_empty() {
        let (m, _) = evaluate(&outcome.model, &data.test, Exec::default())?;
        rows.push(ReportRow::new("test", &m, cfg));
    }
    Ok(RunReport {
        dir,
        checkpoint,
        log,
        rows,
    })
}

pub fn cmd_train(config: &Path, seed: Option<u64>) -> Result<RunReport> {
    let cfg = load_config(config, seed)?;
    let base = config_dir(config);
    let data = load_data(&cfg, &base)?;
    let outcome = train(&cfg, &data, Exec::default())?;
    finish_run(&cfg, &base, &data, &outcome, "train")
}

pub fn cmd_ablate(config: &Path, flag: Ablation, seed: Option<u64>) -> Result<RunReport> {
    let cfg = load_config(config, seed)?.with_ablation(flag)?;
    let base = config_dir(config);
    let data = load_data(&cfg, &base)?;
    let outcome = train(&cfg, &data, Exec::default())?;
    finish_run(&cfg, &base, &data, &outcome, &format!("ablate-{}", format!("{flag:?}").to_lowercase()))
}

/// Score a checkpoint on a labelled corpus, dropout off.
///
/// Unless `allow_unknown` is set, any test word missing from the checkpoint
/// vocabulary is a vocabulary mismatch.
pub fn cmd_eval(ckpt: &Path, test: &Path, allow_unknown: bool) -> Result<ReportRow> {
    let checkpoint = Checkpoint::load(ckpt)?;
    let corpus = parse_corpus(test, CorpusFormat::from_path(test))?;
    if corpus.instances.is_empty() {
        return Err(DataError::Empty("test").into());
    }
    if !allow_unknown {
        let unknown: usize = corpus
            .instances
            .iter()
            .flat_map(|i| &i.words)
            .filter(|w| !checkpoint.vocab.contains(w))
            .count();
        if unknown > 0 {
            return Err(CheckpointError::VocabMismatch {
                checkpoint: checkpoint.vocab.digest(),
                found: format!("{unknown} test tokens outside it"),
            }
            .into());
        }
    }
    let model = checkpoint.model()?;
    let instances = checkpoint.vocab.encode_all(&corpus.instances);
    let (m, _) = evaluate(&model, &instances, Exec::default())?;
    let name = test.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(ReportRow::new(name, &m, &checkpoint.config))
}

/// Parse `START,END` character offsets.
pub fn parse_span(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| InputError(format!("aspect span `{s}` is not START,END")))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| InputError(format!("aspect span `{s}` is not START,END")))
    };
    Ok((parse(a)?, parse(b)?))
}

#[derive(Clone, Debug)]
pub struct Explanation {
    pub prediction: Prediction,
    pub export: MarginalExport,
}

impl Explanation {
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "tokens": self.export.tokens,
            "aspect_span": self.export.aspect_span,
            "per_head_marginals": self.export.per_head_marginals,
            "predicted": self.prediction.label,
            "probabilities": self.prediction.probabilities,
        })
        .to_string()
    }
}

/// Per-head Yes-marginals for the aspect at character span `[start, end)` of `text`.
pub fn cmd_explain(ckpt: &Path, text: &str, aspect: (usize, usize)) -> Result<Explanation> {
    let checkpoint = Checkpoint::load(ckpt)?;
    let tokens = tokenize(text);
    let (i, j) = align_span(&tokens, aspect.0, aspect.1)
        .ok_or_else(|| InputError(format!("aspect span {},{} covers no token", aspect.0, aspect.1)))?;
    let words: Vec<String> = tokens.into_iter().map(|t| t.text).collect();
    let inst = AspectInstance {
        tokens: words.iter().map(|w| checkpoint.vocab.id(w)).collect(),
        aspect_start: i,
        aspect_end: j,
        label: Polarity::Neutral,
        raw_text: text.to_string(),
    };
    let model = checkpoint.model()?;
    let (prediction, export) = model.explain(&inst, &checkpoint.vocab, Some(&words))?;
    if export.per_head_marginals.is_empty() {
        bail!(InputError("checkpoint was trained without structured attention; no marginals to show".into()));
    }
    Ok(Explanation { prediction, export })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub heads: usize,
    pub dev_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

pub fn sweep_tsv(rows: &[SweepRow]) -> String {
    let mut out = String::from("heads\tdev_accuracy\ttest_accuracy\n");
    for r in rows {
        let test = r.test_accuracy.map_or("-".to_string(), |a| format!("{:.2}", 100.0 * a));
        out.push_str(&format!("{}\t{:.2}\t{test}\n", r.heads, 100.0 * r.dev_accuracy));
    }
    out
}

/// One model per head count, same seed, rows in input order.
pub fn cmd_sweep(config: &Path, heads: &[usize], seed: Option<u64>) -> Result<Vec<SweepRow>> {
    if heads.is_empty() {
        bail!(InputError("head list is empty".into()));
    }
    let cfg = load_config(config, seed)?;
    let data = load_data(&cfg, &config_dir(config))?;
    let configs = heads
        .iter()
        .map(|&a| {
            let c = RunConfig { crf_heads: a, ..cfg.clone() };
            c.validate().map(|_| c)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let outcomes = Exec::default().try_map(&configs, |_, c| train(c, &data, Exec::Sequential))?;
    outcomes
        .iter()
        .zip(heads)
        .map(|(o, &a)| {
            let test = if data.test.is_empty() {
                None
            } else {
                Some(evaluate(&o.model, &data.test, Exec::default())?.0.accuracy)
            };
            Ok(SweepRow {
                heads: a,
                dev_accuracy: o.checkpoint.dev_metrics.accuracy,
                test_accuracy: test,
            })
        })
        .collect()
}

/// Grid search; writes the winning run and returns the leaderboard as TSV.
pub fn cmd_grid(config: &Path, grid: &Path, seed: Option<u64>) -> Result<(String, RunReport)> {
    let cfg = load_config(config, seed)?;
    let text = std::fs::read_to_string(grid).with_context(|| format!("reading {}", grid.display()))?;
    let grid: Grid = toml::from_str(&text).map_err(|e| ConfigError::Syntax(e.message().to_string()))?;
    let base = config_dir(config);
    let data = load_data(&cfg, &base)?;
    let out = grid_search(&cfg, &grid, &data, Exec::default())?;
    let mut table = String::from("rank\tconfig\thidden\tbatch\tdropout\taspect_dim\tgamma\tlayers\theads\tseed\tdev_accuracy\tdev_macro_f1\n");
    for (k, e) in out.leaderboard.iter().enumerate() {
        let c = &e.config;
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.1}\t{}\t{}\t{}\t{}\t{}\t{:.2}\t{:.2}\n",
            k + 1,
            e.digest,
            c.hidden,
            c.batch_size,
            c.dropout,
            c.aspect_dim,
            c.gamma,
            c.gru_layers,
            c.crf_heads,
            c.seed,
            100.0 * e.dev_accuracy,
            100.0 * e.dev_macro_f1
        ));
    }
    let best_cfg = out.best.checkpoint.config.clone();
    let report = finish_run(&best_cfg, &base, &data, &out.best, "grid")?;
    Ok((table, report))
}

#[derive(Clone, Debug)]
pub struct CorpusStats {
    pub path: PathBuf,
    pub counts: PolarityCounts,
    pub report: DropReport,
}

/// Label counts per file after conflict filtering; failures are kept per file.
pub fn cmd_stats(paths: &[PathBuf]) -> Vec<Result<CorpusStats>> {
    paths
        .iter()
        .map(|p| {
            let corpus = parse_corpus(p, CorpusFormat::from_path(p))?;
            Ok(CorpusStats {
                path: p.clone(),
                counts: PolarityCounts::of(corpus.instances.iter().map(|i| &i.label)),
                report: corpus.report,
            })
        })
        .collect()
}

pub fn stats_line(s: &CorpusStats) -> String {
    let c = &s.counts;
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        s.path.display(),
        c.positive,
        c.neutral,
        c.negative,
        c.total(),
        s.report.conflict
    )
}

pub const STATS_HEADER: &str = "corpus\tpositive\tneutral\tnegative\ttotal\tconflict_dropped";
