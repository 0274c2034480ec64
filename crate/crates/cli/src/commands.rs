use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context};
use das_core::baselines::{checkpoint_baselines, BaselineOptions, BaselineScores, FdMode};
use das_core::eval::{map50, pearson, selection_summary, EvalError, MapResult};
use das_core::io::{parse_manifest, write_run, FeatureStorage, ManifestError};
use das_core::model::RunManifest;
use das_core::prototype::PrototypeOptions;
use das_core::score::{score_run, select_best_index, ScoreOptions, ScoreReport};
use das_core::synth::{generate_trajectory, SyntheticConfig};
use das_core::validate::{validate_run, Finding, Severity, ValidateOptions};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::report::{cell, notes_block, opt_cell, table, Report};

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_SCORING: u8 = 3;
pub const EXIT_MISSING_GT: u8 = 4;
pub const EXIT_IO: u8 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

type Outcome = Result<u8, Failure>;

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Score(a) => cmd_score(&a),
        Command::Baselines(a) => cmd_baselines(&a),
        Command::EvalMap(a) => cmd_eval_map(&a),
        Command::Corr(a) => cmd_corr(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Validate(a) => cmd_validate(&a),
    }
}

fn load(path: &Path) -> Result<RunManifest, Failure> {
    if !path.is_file() {
        return Err(Failure::new(EXIT_IO, anyhow!("cannot read manifest {}", path.display())));
    }
    parse_manifest(path).map_err(|e| {
        let code = match e {
            ManifestError::Io { .. } => EXIT_IO,
            _ => EXIT_VALIDATION,
        };
        Failure::new(code, e)
    })
}

fn emit(report: Report, common: &Common) -> Result<(), Failure> {
    let text = match common.format {
        Format::Doc => {
            let mut s = serde_json::to_string_pretty(&report.doc).expect("json values serialize");
            s.push('\n');
            s
        }
        Format::Table => report.table,
    };
    match &common.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => std::io::stdout().write_all(text.as_bytes()).context("writing stdout"),
    }
    .map_err(|e| Failure::new(EXIT_IO, e))
}

/// Fails with every fatal finding whose kind `relevant` accepts; logs the
/// rest as warnings.
fn gate(run: &RunManifest, conf_thresh: f64, relevant: impl Fn(&str) -> bool) -> Result<(), Failure> {
    let findings = validate_run(run, &ValidateOptions { conf_thresh });
    let (fatal, other): (Vec<&Finding>, Vec<&Finding>) = findings
        .iter()
        .partition(|f| f.severity == Severity::Fatal && relevant(f.kind));
    for f in other {
        log::warn!("{f}");
    }
    if fatal.is_empty() {
        return Ok(());
    }
    let text: Vec<String> = fatal.iter().map(|f| f.to_string()).collect();
    Err(Failure::new(
        EXIT_VALIDATION,
        anyhow!("run is not scoreable:\n  {}", text.join("\n  ")),
    ))
}

fn scoring(e: impl Into<anyhow::Error>) -> Failure {
    Failure::new(EXIT_SCORING, e)
}

fn score_options(lambda: f64, conf_thresh: f64) -> ScoreOptions {
    ScoreOptions {
        lambda,
        conf_thresh,
        prototypes: PrototypeOptions::default(),
    }
}

fn normalization_notes(report: &ScoreReport) -> Vec<String> {
    let mut notes = Vec::new();
    let constant = |v: Vec<f64>| v.iter().all(|x| *x == v[0]);
    if constant(report.rows.iter().map(|r| r.fis).collect()) {
        notes.push("degenerate normalization: FIS is constant across checkpoints, normalized FIS set to 0.5".into());
    }
    if constant(report.rows.iter().map(|r| r.pdr).collect()) {
        notes.push("degenerate normalization: PDR is constant across checkpoints, normalized PDR set to 0.5".into());
    }
    notes
}

#[derive(Serialize)]
struct ScoreDoc<'a> {
    run_id: &'a str,
    lambda: f64,
    conf_thresh: f64,
    selected_checkpoint_id: &'a str,
    checkpoints: Vec<Value>,
    notes: Vec<String>,
}

fn cmd_score(a: &ScoreArgs) -> Outcome {
    let run = load(&a.common.manifest)?;
    gate(&run, a.thresh.conf_thresh, |_| true)?;
    let rep = score_run(&run, &score_options(a.lambda.lambda, a.thresh.conf_thresh)).map_err(scoring)?;
    let notes = normalization_notes(&rep);
    for n in &notes {
        log::warn!("{n}");
    }
    let checkpoints = rep
        .rows
        .iter()
        .map(|r| {
            json!({
                "id": r.checkpoint_id, "index": r.index,
                "fis": r.fis, "fis_norm": r.fis_norm,
                "pdr": r.pdr, "pdr_norm": r.pdr_norm,
                "d_intra": r.d_intra, "d_inter": r.d_inter,
                "das": r.das,
            })
        })
        .collect();
    let header: Vec<String> = ["checkpoint", "index", "fis", "fis_norm", "pdr", "pdr_norm", "das", ""]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = rep
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                r.checkpoint_id.clone(),
                r.index.to_string(),
                cell(r.fis),
                cell(r.fis_norm),
                cell(r.pdr),
                cell(r.pdr_norm),
                cell(r.das),
                if i == rep.selected_position { "*".into() } else { String::new() },
            ]
        })
        .collect();
    let text = format!(
        "run {}  lambda {}  conf_thresh {}\n{}selected: {}\n{}",
        rep.run_id,
        cell(rep.lambda),
        cell(rep.conf_thresh),
        table(&header, &rows),
        rep.selected_checkpoint_id,
        notes_block(&notes)
    );
    let doc = ScoreDoc {
        run_id: &rep.run_id,
        lambda: rep.lambda,
        conf_thresh: rep.conf_thresh,
        selected_checkpoint_id: &rep.selected_checkpoint_id,
        checkpoints,
        notes,
    };
    emit(Report::new("score", doc, text), &a.common)?;
    Ok(0)
}

fn baseline_options(thresh: &Thresh, flags: &BaselineFlags) -> BaselineOptions {
    BaselineOptions {
        conf_thresh: thresh.conf_thresh,
        atc_thresholds: flags.atc_thresholds.clone(),
        fd_mode: FdMode::from(flags.fd_mode),
    }
}

fn baseline_kinds(kind: &str) -> bool {
    matches!(kind, "no checkpoints" | "checkpoint order" | "empty pass")
}

fn compute_baselines(run: &RunManifest, opts: &BaselineOptions) -> Result<Vec<BaselineScores>, Failure> {
    use rayon::prelude::*;
    run.checkpoints
        .par_iter()
        .map(|c| checkpoint_baselines(c, opts).map_err(|e| scoring(anyhow!("checkpoint {}: {e}", c.id))))
        .collect()
}

/// Baseline columns in report order: `(name, per-checkpoint values)`.
/// FD is left out unless every checkpoint has it.
fn baseline_series(scores: &[BaselineScores], thresholds: &[f64]) -> (Vec<(String, Vec<f64>)>, Vec<String>) {
    let mut series = vec![
        ("ps".to_string(), scores.iter().map(|s| s.ps).collect()),
        ("es".to_string(), scores.iter().map(|s| s.es).collect()),
    ];
    for (i, t) in thresholds.iter().enumerate() {
        series.push((format!("atc@{t}"), scores.iter().map(|s| s.atc[i].1).collect()));
    }
    let mut notes = Vec::new();
    if scores.iter().all(|s| s.fd.is_some()) {
        series.push(("fd".to_string(), scores.iter().map(|s| s.fd.unwrap_or_default()).collect()));
    } else {
        notes.push("FD omitted: some checkpoints have fewer than 2 proposal features in a domain".to_string());
    }
    (series, notes)
}

fn cmd_baselines(a: &BaselineArgs) -> Outcome {
    let run = load(&a.common.manifest)?;
    gate(&run, a.thresh.conf_thresh, baseline_kinds)?;
    let opts = baseline_options(&a.thresh, &a.baselines);
    let scores = compute_baselines(&run, &opts)?;
    let (series, mut notes) = baseline_series(&scores, &opts.atc_thresholds);
    for (name, values) in &series {
        if values.iter().all(|v| *v == values[0]) {
            notes.push(format!("degenerate normalization: {name} is constant across checkpoints"));
        }
    }
    for n in &notes {
        log::warn!("{n}");
    }

    let checkpoints: Vec<Value> = run
        .checkpoints
        .iter()
        .zip(&scores)
        .map(|(c, s)| {
            json!({
                "id": c.id, "index": c.index, "ps": s.ps, "es": s.es,
                "atc": s.atc.iter().map(|(t, v)| json!({"threshold": t, "score": v})).collect::<Vec<_>>(),
                "fd": s.fd,
            })
        })
        .collect();
    let mut header = vec!["checkpoint".to_string(), "index".to_string()];
    header.extend(series.iter().map(|(n, _)| n.clone()));
    let rows: Vec<Vec<String>> = run
        .checkpoints
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut row = vec![c.id.clone(), c.index.to_string()];
            row.extend(series.iter().map(|(_, v)| cell(v[i])));
            row
        })
        .collect();
    let text = format!("run {}\n{}{}", run.run_id, table(&header, &rows), notes_block(&notes));
    let doc = json!({
        "run_id": run.run_id,
        "conf_thresh": opts.conf_thresh,
        "atc_thresholds": opts.atc_thresholds,
        "fd_mode": match opts.fd_mode { FdMode::Full => "full", FdMode::Diagonal => "diagonal" },
        "checkpoints": checkpoints,
        "notes": notes,
    });
    emit(Report::new("baselines", doc, text), &a.common)?;
    Ok(0)
}

fn compute_maps(run: &RunManifest) -> Result<Vec<MapResult>, Failure> {
    use rayon::prelude::*;
    let gt = run
        .ground_truth
        .as_ref()
        .ok_or_else(|| Failure::new(EXIT_MISSING_GT, anyhow!("run {} has no ground truth", run.run_id)))?;
    run.checkpoints
        .par_iter()
        .map(|c| {
            map50(&c.target_original, gt, run.num_classes).map_err(|e| match e {
                EvalError::NoGroundTruth | EvalError::ImageNotInGroundTruth(_) => {
                    Failure::new(EXIT_MISSING_GT, anyhow!("checkpoint {}: {e}", c.id))
                }
                other => scoring(other),
            })
        })
        .collect()
}

fn cmd_eval_map(a: &EvalArgs) -> Outcome {
    let run = load(&a.common.manifest)?;
    gate(&run, 0.0, |k| matches!(k, "no checkpoints" | "empty pass"))?;
    let maps = compute_maps(&run)?;
    let checkpoints: Vec<Value> = run
        .checkpoints
        .iter()
        .zip(&maps)
        .map(|(c, m)| {
            let per_class: serde_json::Map<String, Value> = run
                .class_names
                .iter()
                .zip(&m.per_class)
                .map(|(n, ap)| (n.clone(), json!(ap)))
                .collect();
            json!({"id": c.id, "index": c.index, "map50": m.map, "per_class_ap": per_class})
        })
        .collect();
    let mut header = vec!["checkpoint".to_string(), "index".to_string(), "map50".to_string()];
    header.extend(run.class_names.iter().cloned());
    let rows: Vec<Vec<String>> = run
        .checkpoints
        .iter()
        .zip(&maps)
        .map(|(c, m)| {
            let mut row = vec![c.id.clone(), c.index.to_string(), cell(m.map)];
            row.extend(m.per_class.iter().map(|v| opt_cell(*v)));
            row
        })
        .collect();
    let text = format!("run {}\n{}", run.run_id, table(&header, &rows));
    let doc = json!({"run_id": run.run_id, "checkpoints": checkpoints});
    emit(Report::new("eval-map", doc, text), &a.common)?;
    Ok(0)
}

/// Position of the largest value, first on ties.
fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

fn cmd_corr(a: &CorrArgs) -> Outcome {
    let run = load(&a.common.manifest)?;
    if run.ground_truth.is_none() {
        return Err(Failure::new(
            EXIT_MISSING_GT,
            anyhow!("run {} has no ground truth", run.run_id),
        ));
    }
    gate(&run, a.thresh.conf_thresh, |_| true)?;
    let rep = score_run(&run, &score_options(a.lambda.lambda, a.thresh.conf_thresh)).map_err(scoring)?;
    let opts = baseline_options(&a.thresh, &a.baselines);
    let base = compute_baselines(&run, &opts)?;
    let maps: Vec<f64> = compute_maps(&run)?.iter().map(|m| m.map * 100.0).collect();

    let (extra, mut notes) = baseline_series(&base, &opts.atc_thresholds);
    notes.extend(normalization_notes(&rep));
    let mut series: Vec<(String, Vec<f64>)> = vec![
        ("das".into(), rep.das_values()),
        ("fis".into(), rep.rows.iter().map(|r| r.fis).collect()),
        ("pdr".into(), rep.rows.iter().map(|r| r.pdr).collect()),
    ];
    series.extend(extra);

    let ids: Vec<&str> = run.checkpoints.iter().map(|c| c.id.as_str()).collect();
    let mut corr_docs = Vec::new();
    let mut corr_rows = Vec::new();
    for (name, values) in &series {
        let selected = if name == "das" {
            rep.selected_position
        } else if name == "fis" {
            let fis: Vec<f64> = rep.rows.iter().map(|r| r.fis).collect();
            select_best_index(&fis, &fis).map_err(scoring)?
        } else {
            argmax(values)
        };
        let (pcc, note) = match pearson(values, &maps) {
            Ok(c) => (Some(c.pcc), None),
            Err(EvalError::DegenerateVariance) => (None, Some("undefined: DegenerateVariance")),
            Err(EvalError::TooFewSamples(_)) => (None, Some("undefined: fewer than two checkpoints")),
            Err(e) => return Err(scoring(e)),
        };
        if let Some(n) = note {
            log::warn!("PCC({name}, mAP) {n}");
        }
        corr_docs.push(json!({
            "metric": name, "pcc": pcc, "note": note,
            "selected_checkpoint_id": ids[selected], "selected_map50": maps[selected],
        }));
        corr_rows.push(vec![
            name.clone(),
            pcc.map_or_else(|| note.unwrap_or("-").to_string(), cell),
            ids[selected].to_string(),
            format!("{:.2}", maps[selected]),
        ]);
    }

    let summary = selection_summary(&maps, rep.selected_position).map_err(scoring)?;
    let selection = json!({
        "last": summary.last, "ours": summary.ours,
        "improvement": summary.improvement_str(), "oracle": summary.oracle,
        "selected_checkpoint_id": ids[summary.selected_position],
        "oracle_checkpoint_id": ids[summary.oracle_position],
    });
    let mut series_doc = serde_json::Map::new();
    series_doc.insert("checkpoint_id".into(), json!(ids));
    series_doc.insert("map50".into(), json!(maps));
    for (name, values) in &series {
        series_doc.insert(name.clone(), json!(values));
    }

    let header: Vec<String> = ["metric", "pcc_vs_map", "selects", "map50"].iter().map(|s| s.to_string()).collect();
    let sel_header: Vec<String> = ["", "Last", "Ours", "Imp.", "Oracle"].iter().map(|s| s.to_string()).collect();
    let sel_row = vec![
        "map50".to_string(),
        format!("{:.2}", summary.last),
        format!("{:.2}", summary.ours),
        summary.improvement_str(),
        format!("{:.2}", summary.oracle),
    ];
    let text = format!(
        "run {}\n{}\n{}{}",
        run.run_id,
        table(&header, &corr_rows),
        table(&sel_header, &[sel_row]),
        notes_block(&notes)
    );
    let doc = json!({
        "run_id": run.run_id,
        "lambda": rep.lambda,
        "conf_thresh": rep.conf_thresh,
        "map_units": "percent",
        "correlations": corr_docs,
        "selection": selection,
        "series": series_doc,
        "notes": notes,
    });
    emit(Report::new("corr", doc, text), &a.common)?;
    Ok(0)
}

fn cmd_synth(a: &SynthArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(|e| Failure::new(EXIT_IO, e))?;
            serde_json::from_str::<SyntheticConfig>(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .map_err(|e| Failure::new(EXIT_VALIDATION, e))?
        }
        None => SyntheticConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| Failure::new(EXIT_VALIDATION, e))?;
    let run = generate_trajectory(&cfg).map_err(|e| Failure::new(EXIT_VALIDATION, e))?;
    let storage = if a.inline_features {
        FeatureStorage::Inline
    } else {
        FeatureStorage::Sidecar
    };
    let manifest = write_run(&a.out, &run, storage).map_err(|e| Failure::new(EXIT_IO, e))?;
    let cfg_text = serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n";
    let cfg_path = a.out.join("synth_config.json");
    fs::write(&cfg_path, cfg_text)
        .with_context(|| format!("writing {}", cfg_path.display()))
        .map_err(|e| Failure::new(EXIT_IO, e))?;
    println!("{}", manifest.display());
    Ok(0)
}

fn cmd_validate(a: &ValidateArgs) -> Outcome {
    let run = load(&a.common.manifest)?;
    let findings = validate_run(
        &run,
        &ValidateOptions {
            conf_thresh: a.thresh.conf_thresh,
        },
    );
    let scoreable = !findings.iter().any(|f| f.severity == Severity::Fatal);
    let rows: Vec<Vec<String>> = findings
        .iter()
        .map(|f| {
            vec![
                format!("{:?}", f.severity).to_lowercase(),
                f.kind.to_string(),
                f.checkpoint.clone().unwrap_or_default(),
                f.detail.clone(),
            ]
        })
        .collect();
    let header: Vec<String> = ["severity", "kind", "checkpoint", "detail"].iter().map(|s| s.to_string()).collect();
    let text = format!(
        "run {}: {}\n{}",
        run.run_id,
        if scoreable { "scoreable" } else { "NOT scoreable" },
        if findings.is_empty() { String::new() } else { table(&header, &rows) }
    );
    let doc = json!({"run_id": run.run_id, "scoreable": scoreable, "findings": findings});
    emit(Report::new("validate", doc, text), &a.common)?;
    Ok(if scoreable { 0 } else { EXIT_VALIDATION })
}
