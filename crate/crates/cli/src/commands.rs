use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use paud::analysis::{ablation_analysis, logprob_histograms, rank_shift_curve, write_ablation_tsv};
use paud::audit::{fit_audit_model, shadow_features, write_feature_tsv, FrequencyTable, ShadowPlan};
use paud::blackbox::{QueryMode, ServeOptions, Server, TargetHandle};
use paud::corpus::{read_jsonl, synthetic, write_jsonl};
use paud::eval::{
    audit_users, auc, classification_metrics, read_sweep_csv, run_sweep_to_csv, summarize, ModelCache, PreparedData,
    SweepSummary,
};
use paud::seed::derive_seed_tagged;
use paud::textgen::TextModel;
use paud::train::{evaluate, train_model_with};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;

const TARGET_DIR: &str = "target";
const SHADOW_DIR: &str = "shadows";

/// Provenance record written next to every command's outputs.
#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    let m = Manifest { command, version: env!("CARGO_PKG_VERSION"), config: cfg };
    write_atomic(&dir.join("manifest.json"), (serde_json::to_string_pretty(&m)? + "\n").as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn save_model(model: &TextModel, path: &Path) -> Result<()> {
    let tmp = path.with_extension("partial");
    model.save(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn load_model(path: &Path, what: &str, producer: &str) -> Result<TextModel> {
    if !path.exists() {
        bail!("missing {what} checkpoint {}; run `paud {producer}` first", path.display());
    }
    TextModel::load(path).with_context(|| format!("loading {}", path.display()))
}

fn query_mode(model: &TextModel) -> QueryMode {
    if model.task().is_seq2seq() {
        QueryMode::Seq2seq
    } else {
        QueryMode::NextWord
    }
}

/// Reads the corpus files and prepares every role's data.
fn prepare(cfg: &RunConfig) -> Result<PreparedData> {
    let corpus = cfg.corpus_path();
    if !corpus.exists() {
        bail!("missing corpus {}; run `paud gen-synthetic` or set data.corpus", corpus.display());
    }
    let records = read_jsonl(&corpus).with_context(|| format!("reading {}", corpus.display()))?;
    let reference = match cfg.reference_path() {
        Some(p) if !p.exists() => bail!("missing reference corpus {}", p.display()),
        Some(p) => Some(read_jsonl(&p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    Ok(PreparedData::from_records(&records, reference.as_deref(), &cfg.experiment)?)
}

pub fn gen_synthetic(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.out_dir.join("corpus");
    create_dir(&dir)?;
    let exp = &cfg.experiment;
    let records = synthetic::generate(&exp.corpus_config())?;
    write_jsonl(&dir.join("corpus.jsonl"), &records)?;
    println!("wrote {} records for {} users to {}", records.len(), exp.total_users(), dir.display());
    if exp.cross_domain {
        let reference = synthetic::generate(&exp.reference_corpus_config())?;
        write_jsonl(&dir.join("reference.jsonl"), &reference)?;
        println!("wrote {} reference records", reference.len());
    }
    write_manifest(&dir, "gen-synthetic", cfg)
}

/// Same data and recipe as the run that produced `dir`, so its checkpoint
/// can be reused.
fn up_to_date(dir: &Path, key: &serde_json::Value) -> bool {
    fs::read_to_string(dir.join("recipe.json"))
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .is_some_and(|v| &v == key)
}

pub fn train_target(cfg: &RunConfig) -> Result<()> {
    let data = prepare(cfg)?;
    let exp = &cfg.experiment;
    let dir = cfg.out_dir.join(TARGET_DIR);
    create_dir(&dir)?;
    let model_cfg = exp.target_config(data.vocab.size());
    let train_cfg = exp.target_train_config();
    let recipe = json!({
        "model": model_cfg,
        "train": train_cfg,
        "members": data.split.train_users,
        "noise_fraction": exp.noise_fraction,
    });
    let ckpt = dir.join("model.json");
    let model = if ckpt.exists() && up_to_date(&dir, &recipe) {
        println!("target checkpoint {} is up to date", ckpt.display());
        TextModel::load(&ckpt)?
    } else {
        let mut log = BufWriter::new(File::create(dir.join("metrics.tsv"))?);
        writeln!(log, "epoch\ttrain_loss\ttrain_accuracy\tvalidation_accuracy")?;
        let mut io_err = None;
        let trained = train_model_with(&model_cfg, &train_cfg, &data.member_train, Some(&data.non_members), |m| {
            log::info!("target epoch {}", m.log_line());
            if let Err(e) = writeln!(log, "{}", m.log_line()) {
                io_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = io_err {
            return Err(e.into());
        }
        log.flush()?;
        save_model(&trained.model, &ckpt)?;
        write_atomic(&dir.join("recipe.json"), serde_json::to_string_pretty(&recipe)?.as_bytes())?;
        trained.model
    };
    let train = evaluate(&model, &data.member_train)?;
    let test = evaluate(&model, &data.non_members)?;
    let report = json!({ "train": train, "test": test });
    write_atomic(&dir.join("eval.json"), (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    println!(
        "train accuracy {:.4} perplexity {:.2}; test accuracy {:.4} perplexity {:.2}",
        train.accuracy, train.perplexity, test.accuracy, test.perplexity
    );
    write_manifest(&dir, "train-target", cfg)
}

fn shadow_dir(cfg: &RunConfig, i: usize) -> PathBuf {
    cfg.out_dir.join(SHADOW_DIR).join(format!("shadow_{i:02}"))
}

fn shadow_recipe(plan: &ShadowPlan, i: usize, ref_data: &[paud::corpus::UserDataset]) -> serde_json::Value {
    let s = &plan.shadows[i];
    let members: Vec<&str> = s.members.iter().map(|&u| ref_data[u].user_id.as_str()).collect();
    json!({ "model": s.model, "train": s.train, "members": members })
}

pub fn train_shadows(cfg: &RunConfig) -> Result<()> {
    let data = prepare(cfg)?;
    let plan = cfg.experiment.shadow_plan(data.reference.len(), data.vocab.size())?;
    create_dir(&cfg.out_dir.join(SHADOW_DIR))?;
    let trained: Vec<bool> = (0..plan.k())
        .into_par_iter()
        .map(|i| -> Result<bool> {
            let dir = shadow_dir(cfg, i);
            create_dir(&dir)?;
            let recipe = shadow_recipe(&plan, i, &data.reference);
            let ckpt = dir.join("model.json");
            if ckpt.exists() && up_to_date(&dir, &recipe) {
                return Ok(false);
            }
            let s = &plan.shadows[i];
            let mut lines = vec!["epoch\ttrain_loss\ttrain_accuracy\tvalidation_accuracy".to_string()];
            let model = train_model_with(&s.model, &s.train, &plan.member_data(i, &data.reference), None, |m| {
                lines.push(m.log_line())
            })
            .with_context(|| format!("shadow model {i} failed"))?
            .model;
            fs::write(dir.join("metrics.tsv"), lines.join("\n") + "\n")?;
            save_model(&model, &ckpt)?;
            write_atomic(&dir.join("recipe.json"), serde_json::to_string_pretty(&recipe)?.as_bytes())?;
            write_atomic(&dir.join("split.json"), (serde_json::to_string_pretty(&recipe["members"])? + "\n").as_bytes())?;
            Ok(true)
        })
        .collect::<Result<_>>()?;
    let fresh = trained.iter().filter(|&&t| t).count();
    println!("{} shadow models ready ({fresh} trained, {} reused)", plan.k(), plan.k() - fresh);
    write_manifest(&cfg.out_dir.join(SHADOW_DIR), "train-shadows", cfg)
}

fn load_shadows(cfg: &RunConfig, plan: &ShadowPlan, data: &PreparedData) -> Result<Vec<Arc<TextModel>>> {
    (0..plan.k())
        .map(|i| {
            let dir = shadow_dir(cfg, i);
            let model = load_model(&dir.join("model.json"), &format!("shadow {i}"), "train-shadows")?;
            if !up_to_date(&dir, &shadow_recipe(plan, i, &data.reference)) {
                bail!("shadow {i} in {} was trained with a different config; rerun `paud train-shadows`", dir.display());
            }
            Ok(Arc::new(model))
        })
        .collect()
}

pub fn serve(cfg: &RunConfig) -> Result<()> {
    let model = load_model(&cfg.out_dir.join(TARGET_DIR).join("model.json"), "target", "train-target")?;
    let output_k = cfg.experiment.audit.output_k_for(model.vocab_size());
    let server = Server::spawn(
        Arc::new(model),
        cfg.serve.addr.as_str(),
        ServeOptions { output_k, budget: cfg.serve.budget },
    )
    .with_context(|| format!("binding {}", cfg.serve.addr))?;
    println!("listening on {}", server.local_addr());
    io::stdout().flush()?;
    server.join();
    Ok(())
}

pub fn audit(cfg: &RunConfig) -> Result<()> {
    let data = prepare(cfg)?;
    let exp = &cfg.experiment;
    let v = data.vocab.size();
    let plan = exp.shadow_plan(data.reference.len(), v)?;
    let shadows = load_shadows(cfg, &plan, &data)?;
    let settings = exp.audit_settings();
    let freq = FrequencyTable::from_datasets(&data.reference);
    let rows = shadow_features(&data.reference, &plan, &shadows, &settings, &freq)?;
    let audit_model = fit_audit_model(&rows, &settings, v, &plan)?;

    let k = settings.output_k_for(v);
    let handle = match &cfg.audit.target {
        Some(addr) => {
            let mode = query_mode(&shadows[0]);
            TargetHandle::connect(addr.as_str(), mode, k).with_context(|| format!("connecting to {addr}"))?
        }
        None => {
            let model = load_model(&cfg.out_dir.join(TARGET_DIR).join("model.json"), "target", "train-target")?;
            TargetHandle::local(Arc::new(model), k)?
        }
    }
    .with_budget(cfg.audit.budget);
    let outcomes = audit_users(&audit_model, &handle, &data, &settings, &freq)?;
    let metrics = classification_metrics(&outcomes)?;
    let auc = auc(&outcomes)?;

    let dir = cfg.out_dir.join("audit");
    create_dir(&dir)?;
    audit_model.save(&dir.join("audit_model.json"))?;
    let dump: Vec<_> = rows.iter().map(|r| (format!("{}#{}", r.user_id, r.shadow), r.label, r.feature.clone())).collect();
    let mut features = Vec::new();
    write_feature_tsv(&mut features, &dump)?;
    write_atomic(&dir.join("shadow_features.tsv"), &features)?;

    let mut table = String::from("user_id\tlabel\tdecision\tscore\n");
    for o in &outcomes {
        table.push_str(&format!("{}\t{}\t{}\t{:.6}\n", o.user_id, u8::from(o.label), u8::from(o.decision), o.score));
    }
    write_atomic(&dir.join("decisions.tsv"), table.as_bytes())?;
    let summary = json!({
        "precision": metrics.precision,
        "recall": metrics.recall,
        "accuracy": metrics.accuracy,
        "precision_defined": metrics.precision_defined,
        "auc": auc,
        "queries": handle.queries_used(),
    });
    write_atomic(&dir.join("summary.json"), (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
    write_manifest(&dir, "audit", cfg)?;

    print!("{table}");
    println!(
        "precision {:.4} recall {:.4} accuracy {:.4} auc {:.4} ({} queries)",
        metrics.precision,
        metrics.recall,
        metrics.accuracy,
        auc,
        handle.queries_used()
    );
    Ok(())
}

fn sweep_csv(cfg: &RunConfig) -> Result<PathBuf> {
    let s = cfg.sweep.as_ref().ok_or_else(|| anyhow!("the config has no [sweep] section"))?;
    Ok(cfg.out_dir.join("sweep").join(format!("{}.csv", s.axis.name())))
}

fn summary_table(summary: &[SweepSummary]) -> String {
    let mut t = String::from("axis_value\truns\tfailures\tprecision\trecall\taccuracy\tauc\n");
    for s in summary {
        t.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            s.axis_value, s.runs, s.failures, s.precision, s.recall, s.accuracy, s.auc
        ));
    }
    t
}

pub fn sweep(cfg: &RunConfig) -> Result<()> {
    let s = cfg.sweep.as_ref().ok_or_else(|| anyhow!("the config has no [sweep] section"))?;
    let path = sweep_csv(cfg)?;
    create_dir(path.parent().unwrap())?;
    let rows = run_sweep_to_csv(&cfg.sweep_spec(s), &path, &ModelCache::new())?;
    for r in rows.iter().filter(|r| !r.error.is_empty()) {
        log::warn!("{}={} repetition {} failed: {}", s.axis.name(), r.axis_value, r.repetition, r.error);
    }
    let table = summary_table(&summarize(&rows));
    write_atomic(&path.with_extension("summary.tsv"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

pub fn analyze(cfg: &RunConfig) -> Result<()> {
    let data = prepare(cfg)?;
    let model = load_model(&cfg.out_dir.join(TARGET_DIR).join("model.json"), "target", "train-target")?;
    let a = &cfg.analysis;
    let dir = cfg.out_dir.join("analysis");
    create_dir(&dir)?;

    let hist = logprob_histograms(&model, &data.member_train, &data.non_members, a.band_fraction, a.logprob_bins)?;
    for (name, head) in [("logprob_head.tsv", true), ("logprob_tail.tsv", false)] {
        let mut buf = Vec::new();
        hist.write_tsv(&mut buf, head)?;
        write_atomic(&dir.join(name), &buf)?;
    }

    let curve = rank_shift_curve(&model, &data.member_train, &data.non_members, a.bucket_size)?;
    let mut buf = Vec::new();
    curve.write_tsv(&mut buf)?;
    write_atomic(&dir.join("rank_shift.tsv"), &buf)?;
    let (wins, total) = curve.tail_train_lower();

    let seed = derive_seed_tagged(cfg.seed, "ablation");
    let ablation = ablation_analysis(&model, &data.member_train, &a.ablation_fractions, a.head_fraction, seed)?;
    let mut buf = Vec::new();
    write_ablation_tsv(&mut buf, &ablation)?;
    write_atomic(&dir.join("ablation.tsv"), &buf)?;
    write_manifest(&dir, "analyze", cfg)?;

    println!("tail-half buckets with lower rank on training data: {wins} of {total}");
    for r in &ablation {
        println!(
            "ablation {:.2}: head accuracy {:.4}, tail accuracy {:.4}",
            r.fraction, r.head_accuracy, r.tail_accuracy
        );
    }
    Ok(())
}

/// Splits a sweep CSV into one `axis_value, mean, runs` file per metric.
pub fn plot_data(cfg: &RunConfig, input: Option<&Path>) -> Result<()> {
    let path = match input {
        Some(p) => p.to_path_buf(),
        None => sweep_csv(cfg)?,
    };
    if !path.exists() {
        bail!("missing sweep results {}; run `paud sweep` first", path.display());
    }
    let summary = summarize(&read_sweep_csv(&path)?);
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    let dir = cfg.out_dir.join("plots");
    create_dir(&dir)?;
    let metrics: [(&str, fn(&SweepSummary) -> f64); 4] = [
        ("precision", |s| s.precision),
        ("recall", |s| s.recall),
        ("accuracy", |s| s.accuracy),
        ("auc", |s| s.auc),
    ];
    for (name, get) in metrics {
        let mut t = String::from("axis_value\tmean\truns\n");
        for s in &summary {
            t.push_str(&format!("{}\t{:.6}\t{}\n", s.axis_value, get(s), s.runs));
        }
        let out = dir.join(format!("{stem}_{name}.tsv"));
        write_atomic(&out, t.as_bytes())?;
        println!("wrote {}", out.display());
    }
    Ok(())
}
