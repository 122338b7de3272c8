use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mixtopic::corpus::{load_corpus, read_labels, validate_corpus, Corpus};
use mixtopic::eval::{auprc, auroc, perplexity, pr_curve, roc_curve, topic_recovery, RecoveryReport, ScoredLabels};
use mixtopic::inference::{self, BatchMode, TrainConfig, TrainMode};
use mixtopic::matrix::Matrix;
use mixtopic::model::{FittedModel, InitOptions};
use mixtopic::probit::fold_in_corpus;
use mixtopic::simulator::{self, GroundTruth, SimConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::{EvaluateArgs, Mode, PredictArgs, SimulateArgs, TrainArgs, SEED_ENV};

fn resolve_seed(flag: u64) -> CliResult<u64> {
    match std::env::var(SEED_ENV) {
        Ok(raw) => raw
            .trim()
            .parse()
            .map_err(|_| CliError::Invalid(format!("{SEED_ENV}=`{raw}` is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => create_dir(dir),
        _ => Ok(()),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// `<file>.manifest.json` beside a single-file output.
fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn load(events: &Path, labels: Option<&Path>, collapse: bool) -> CliResult<Corpus> {
    let corpus = load_corpus(events, labels)?;
    Ok(if collapse {
        corpus.collapse_specialists()
    } else {
        corpus
    })
}

fn load_model(path: &Path) -> CliResult<FittedModel> {
    Ok(FittedModel::from_json(&read_text(path)?)?)
}

/// Ground truth as written by `simulate`, keyed by patient id.
#[derive(Serialize, Deserialize)]
struct TruthFile {
    patient_ids: Vec<String>,
    truth: GroundTruth,
}

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let seed = resolve_seed(a.seed)?;
    let config = SimConfig {
        d: a.patients,
        v: a.codes,
        t: a.specialists,
        k: a.topics,
        tokens_min: a.tokens_min,
        tokens_max: a.tokens_max,
        alpha: a.alpha,
        iota: a.iota,
        zeta: a.zeta,
        tau: a.tau,
        weights: None,
        seed,
    };
    let mut manifest = ManifestBuilder::new("simulate", &config, Some(seed))?;
    create_dir(&a.out_dir)?;
    let (corpus, truth) = simulator::simulate(&config)?;

    let events = a.out_dir.join("events.tsv");
    let labels = a.out_dir.join("labels.tsv");
    let truth_path = a.out_dir.join("truth.json");
    corpus.write_events(&events)?;
    corpus.write_labels(&labels)?;
    let doc = TruthFile {
        patient_ids: corpus.patients.iter().map(|p| p.id.clone()).collect(),
        truth,
    };
    write_text(&truth_path, &serde_json::to_string(&doc)?)?;
    for p in [&events, &labels, &truth_path] {
        manifest.output(p);
    }
    log::info!(
        "simulated {} patients, {} tokens, {} codes, {} specialists",
        corpus.len(),
        corpus.num_tokens(),
        corpus.num_codes(),
        corpus.num_specialists()
    );
    manifest.finish(&a.out_dir.join("manifest.json"))
}

#[derive(Serialize)]
struct TrainRun<'a> {
    events: &'a Path,
    labels: Option<&'a Path>,
    specialist_collapse: bool,
    train: &'a TrainConfig,
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let seed = resolve_seed(a.seed)?;
    let corpus = load(&a.events, a.labels.as_deref(), a.specialist_collapse)?;
    let report = validate_corpus(&corpus)?;
    log::info!(
        "{} patients, {} tokens, {} labeled ({} positive), {} without tokens",
        report.patients,
        report.tokens,
        report.labeled,
        report.positives,
        report.empty_patients
    );
    let config = TrainConfig {
        k: a.topics,
        max_sweeps: a.max_sweeps,
        elbo_rel_tol: a.tol,
        mode: match a.mode {
            Mode::Supervised => TrainMode::Supervised,
            Mode::Unsupervised => TrainMode::Unsupervised,
        },
        batch: if a.stochastic {
            BatchMode::Stochastic {
                batch_size: a.batch,
                kappa: a.kappa,
                delay: a.delay,
            }
        } else {
            BatchMode::Full
        },
        seed,
        threads: a.threads,
        init: InitOptions {
            tau: a.tau,
            ..InitOptions::default()
        },
        ..TrainConfig::default()
    };
    let run = TrainRun {
        events: &a.events,
        labels: a.labels.as_deref(),
        specialist_collapse: a.specialist_collapse,
        train: &config,
    };
    let mut manifest = ManifestBuilder::new("train", &run, Some(seed))?;
    manifest.input(&a.events)?;
    if let Some(labels) = &a.labels {
        manifest.input(labels)?;
    }
    create_dir(&a.out_dir)?;

    let out = inference::train(&corpus, &config)?;
    if out.converged {
        log::info!("converged after {} sweeps", out.sweeps);
    } else {
        log::warn!("stopped at the sweep limit ({}) before the ELBO settled", out.sweeps);
    }
    let decreases = out.trace.decreases();
    if !decreases.is_empty() {
        log::info!("ELBO decreased at {} sweeps", decreases.len());
    }
    let model = FittedModel::from_state(&out.state, &corpus, out.estimates);
    let model_path = a.out_dir.join("model.json");
    let trace_path = a.out_dir.join("trace.csv");
    write_text(&model_path, &model.to_json()?)?;
    write_text(&trace_path, &out.trace.to_csv())?;
    manifest.output(&model_path);
    manifest.output(&trace_path);
    manifest.finish(&a.out_dir.join("manifest.json"))
}

pub fn predict(a: &PredictArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let corpus = load(&a.events, None, a.specialist_collapse)?;
    let mut manifest = ManifestBuilder::new(
        "predict",
        serde_json::json!({
            "model": a.model,
            "events": a.events,
            "fold_in_iters": a.fold_in_iters,
            "specialist_collapse": a.specialist_collapse,
            "threshold": 0.5,
        }),
        None,
    )?;
    manifest.input(&a.model)?;
    manifest.input(&a.events)?;

    let folded = fold_in_corpus(&corpus, &model, a.fold_in_iters)?;
    let mut partial = 0;
    let mut dropped = 0;
    for (p, f) in corpus.patients.iter().zip(&folded) {
        if f.dropped_tokens == 0 {
            continue;
        }
        dropped += f.dropped_tokens;
        if f.used_tokens == 0 {
            log::warn!(
                "patient {}: all {} tokens outside the model vocabulary, using the prior mixture",
                p.id,
                f.dropped_tokens
            );
        } else {
            partial += 1;
            log::debug!("patient {}: {} tokens outside the model vocabulary", p.id, f.dropped_tokens);
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} tokens outside the model vocabulary; {partial} patients scored on the rest");
    }

    let mut text = String::from("patient_id\tprobability\tlabel\n");
    for (p, f) in corpus.patients.iter().zip(&folded) {
        let _ = writeln!(text, "{}\t{}\t{}", p.id, f.probability, u8::from(f.probability >= 0.5));
    }
    create_parent(&a.out)?;
    write_text(&a.out, &text)?;
    manifest.output(&a.out);
    manifest.finish(&sidecar(&a.out))
}

fn read_predictions(path: &Path) -> CliResult<Vec<(String, f64)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if n == 0 && fields[0] == "patient_id" {
            continue;
        }
        let malformed = |message: String| CliError::Malformed {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        if fields.len() < 2 {
            return Err(malformed("expected patient_id and probability".into()));
        }
        let p: f64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| malformed(format!("probability `{}` is not a number", fields[1])))?;
        out.push((fields[0].trim().to_owned(), p));
    }
    Ok(out)
}

#[derive(Serialize)]
struct Recovery {
    matched_mean: f64,
    matched_min: f64,
    #[serde(flatten)]
    report: RecoveryReport,
}

#[derive(Serialize)]
struct HeldOut {
    scored_tokens: usize,
    dropped_tokens: usize,
    log_likelihood: f64,
}

#[derive(Serialize)]
struct Metrics {
    auroc: Option<f64>,
    auprc: Option<f64>,
    perplexity: Option<f64>,
    topic_recovery: Option<Recovery>,
    scored_patients: Option<usize>,
    heldout: Option<HeldOut>,
}

fn curve_csv(header: &str, points: &[(f64, f64)]) -> String {
    let mut text = format!("{header}\n");
    for (x, y) in points {
        let _ = writeln!(text, "{x},{y}");
    }
    text
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult<()> {
    if a.predictions.is_none() && a.events.is_none() && a.truth.is_none() {
        return Err(CliError::Invalid(
            "nothing to evaluate: pass --predictions, --events or --truth".into(),
        ));
    }
    let seed = resolve_seed(a.seed)?;
    let mut manifest = ManifestBuilder::new(
        "evaluate",
        serde_json::json!({
            "predictions": a.predictions,
            "labels": a.labels,
            "model": a.model,
            "events": a.events,
            "truth": a.truth,
            "fold_in_iters": a.fold_in_iters,
            "specialist_collapse": a.specialist_collapse,
            "curves": a.curves,
        }),
        Some(seed),
    )?;
    for p in [&a.predictions, &a.labels, &a.model, &a.events, &a.truth].into_iter().flatten() {
        manifest.input(p)?;
    }
    let mut metrics = Metrics {
        auroc: None,
        auprc: None,
        perplexity: None,
        topic_recovery: None,
        scored_patients: None,
        heldout: None,
    };
    create_parent(&a.out)?;
    let dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut outputs = Vec::new();

    if let (Some(pred_path), Some(label_path)) = (&a.predictions, &a.labels) {
        let labels: HashMap<String, bool> = read_labels(label_path)?.into_iter().collect();
        let mut scores = Vec::new();
        let mut ys = Vec::new();
        let mut missing = 0;
        for (id, p) in read_predictions(pred_path)? {
            match labels.get(&id) {
                Some(&y) => {
                    scores.push(p);
                    ys.push(y);
                }
                None => missing += 1,
            }
        }
        if missing > 0 {
            log::warn!("{missing} predicted patients have no label and were skipped");
        }
        let scored = ScoredLabels::new(scores, ys)?;
        metrics.auroc = Some(auroc(&scored)?);
        metrics.auprc = Some(auprc(&scored, seed)?);
        metrics.scored_patients = Some(scored.len());
        if a.curves {
            let roc = dir.join("roc_curve.csv");
            let pr = dir.join("pr_curve.csv");
            write_text(&roc, &curve_csv("false_positive_rate,true_positive_rate", &roc_curve(&scored)?))?;
            write_text(&pr, &curve_csv("recall,precision", &pr_curve(&scored, seed)?))?;
            outputs.extend([roc, pr]);
        }
    }

    if let Some(model_path) = &a.model {
        let model = load_model(model_path)?;
        if let Some(events) = &a.events {
            let heldout = load(events, None, a.specialist_collapse)?;
            let px = perplexity(&model, &heldout, a.fold_in_iters)?;
            metrics.perplexity = Some(px.value);
            metrics.heldout = Some(HeldOut {
                scored_tokens: px.scored_tokens,
                dropped_tokens: px.dropped_tokens,
                log_likelihood: px.log_likelihood,
            });
        }
        if let Some(truth_path) = &a.truth {
            let doc: TruthFile = serde_json::from_str(&read_text(truth_path)?)?;
            metrics.topic_recovery = Some(recovery(&model, &doc)?);
        }
    }

    write_text(&a.out, &(serde_json::to_string_pretty(&metrics)? + "\n"))?;
    manifest.output(&a.out);
    for p in &outputs {
        manifest.output(p);
    }
    manifest.finish(&sidecar(&a.out))
}

/// Matches the model's training patients to their true mixtures by id.
fn recovery(model: &FittedModel, doc: &TruthFile) -> CliResult<Recovery> {
    let k = model.k;
    if doc.truth.theta.cols() != k {
        return Err(CliError::Invalid(format!(
            "model has {k} topics but the ground truth has {}",
            doc.truth.theta.cols()
        )));
    }
    let rows: HashMap<&str, usize> = doc
        .patient_ids
        .iter()
        .enumerate()
        .map(|(j, id)| (id.as_str(), j))
        .collect();
    let mut truth = Matrix::zeros(model.patient_ids.len(), k);
    for (j, id) in model.patient_ids.iter().enumerate() {
        let &row = rows
            .get(id.as_str())
            .ok_or_else(|| CliError::Invalid(format!("patient `{id}` missing from the ground truth")))?;
        truth.row_mut(j).copy_from_slice(doc.truth.theta.row(row));
    }
    let report = topic_recovery(&model.estimates.theta, &truth)?;
    Ok(Recovery {
        matched_mean: report.matched_mean,
        matched_min: report.matched_min(),
        report,
    })
}
