use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use curator_core::annotate::{format_export, load_export, load_snapshot, read_events, QueueEntry, WorkflowState};
use curator_core::clean::{run_pipeline, Stopwords};
use curator_core::ingest::{load_manifest, load_sidecars, read_jsonl, FEATURES_FILE, save_manifest, write_jsonl};
use curator_core::metrics::{
    describe, mean_ap, recall_at, CaptionScores, MetricReport, SegmentedCaption, SimMatrix, Task,
};
use curator_core::model::{validate_corpus, FeatureVector, GroundTruth, Lang, RankedPrediction, TagDimension, VideoRecord};
use curator_core::preselect::{preselect_candidates, Candidate};
use curator_core::Error;
use curator_service::{system_clock, Service, ServiceConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::Config;
use crate::{CleanArgs, EvalArgs, EvalTask, ExportArgs, PreselectArgs, ServeArgs, StatsArgs, Track};

/// 2 for environment and I/O failures, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sidecar_dir(manifest: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        manifest
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    })
}

fn mismatch(what: &str, offenders: &BTreeSet<String>) -> anyhow::Error {
    let list: Vec<&str> = offenders.iter().map(String::as_str).collect();
    Error::Invalid(format!("{what}: {}", list.join(", "))).into()
}

pub fn clean(cfg: &Config, args: CleanArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let sidecars = load_sidecars(sidecar_dir(&args.manifest, &args.sidecars), &manifest)?;
    let report = validate_corpus(&manifest, &sidecars);
    for issue in &report.issues {
        tracing::warn!(video = issue.video_id.as_deref().unwrap_or("-"), kind = ?issue.kind, "{}", issue.message);
    }
    if report.has_errors() {
        bail!(Error::Invalid(format!("corpus has {} validation issues", report.issues.len())));
    }
    let stopwords = Stopwords::load(cfg.clean.stopword_path.as_deref())?;
    let out = run_pipeline(&manifest, &sidecars, &cfg.clean, &stopwords)?;

    create_dir(&args.out)?;
    write_jsonl(args.out.join("verdicts.jsonl"), &out.verdicts)?;
    let mut summary = serde_json::to_value(&out.summary)?;
    summary["config_digest"] = json!(cfg.digest());
    write_json(&args.out.join("summary.json"), &summary)?;
    let kept: BTreeSet<&str> = out.kept_ids().collect();
    let kept_records: Vec<VideoRecord> = manifest.iter().filter(|v| kept.contains(v.id.as_str())).cloned().collect();
    save_manifest(args.out.join("manifest.jsonl"), &kept_records)?;

    let removed: Vec<String> = out.summary.removed.iter().map(|(c, n)| format!("{}={n}", c.as_str())).collect();
    println!(
        "clean: input {} kept {} removed {}",
        out.summary.input,
        out.summary.kept,
        removed.join(" ")
    );
    Ok(())
}

pub fn preselect(mut cfg: Config, args: PreselectArgs) -> Result<()> {
    if let Some(seed) = args.seed {
        cfg.preselect.seed = seed;
    }
    let manifest = load_manifest(&args.manifest)?;
    // Features of videos removed by cleaning are present but ignored.
    let path = sidecar_dir(&args.manifest, &args.sidecars).join(FEATURES_FILE);
    let features: Vec<FeatureVector> = read_jsonl(&path)?;
    for f in &features {
        f.validate()?;
    }
    if features.is_empty() {
        bail!(Error::Empty("no feature vectors".into()));
    }
    let candidates = preselect_candidates(&manifest, &features, &cfg.preselect)?;
    create_dir(&args.out)?;
    write_jsonl(args.out.join("candidates.jsonl"), &candidates)?;
    println!(
        "preselect: {} candidates from {} videos (seed {}, config {})",
        candidates.len(),
        manifest.len(),
        cfg.preselect.seed,
        &cfg.digest()[..12]
    );
    Ok(())
}

fn load_truth(path: &Option<PathBuf>) -> Result<Option<BTreeMap<String, GroundTruth>>> {
    let Some(path) = path else { return Ok(None) };
    let records = load_export(path)?;
    let mut by_id = BTreeMap::new();
    for r in records {
        if by_id.contains_key(&r.video_id) {
            bail!(Error::DuplicateId(r.video_id));
        }
        by_id.insert(r.video_id.clone(), r);
    }
    Ok(Some(by_id))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaggingLine {
    video_id: String,
    dimension: TagDimension,
    ranking: Vec<(String, f64)>,
}

fn eval_tagging(args: &EvalArgs) -> Result<(MetricReport, Option<Value>)> {
    let path = args.predictions.as_ref().context("tagging needs --predictions")?;
    let truth = load_truth(&args.truth)?.context("tagging needs --truth")?;
    let lines: Vec<TaggingLine> = read_jsonl(path)?;
    let mut by_dim: BTreeMap<TagDimension, BTreeMap<String, RankedPrediction>> = BTreeMap::new();
    for l in lines {
        let pred = RankedPrediction::new(l.video_id.clone(), l.ranking)?;
        if by_dim.entry(l.dimension).or_default().insert(l.video_id.clone(), pred).is_some() {
            bail!(Error::Invalid(format!("duplicate {} prediction for {}", l.dimension, l.video_id)));
        }
    }
    if by_dim.is_empty() {
        bail!(Error::Empty("no predictions".into()));
    }
    let mut offenders = BTreeSet::new();
    for (dim, preds) in &by_dim {
        offenders.extend(preds.keys().filter(|id| !truth.contains_key(*id)).cloned());
        offenders.extend(
            truth
                .keys()
                .filter(|id| !preds.contains_key(*id))
                .map(|id| format!("{id} (no {dim} prediction)")),
        );
    }
    if !offenders.is_empty() {
        return Err(mismatch("prediction ids do not match ground truth", &offenders));
    }
    let mut scores = BTreeMap::new();
    for (dim, preds) in by_dim {
        let pairs: Vec<(RankedPrediction, Vec<String>)> = preds
            .into_iter()
            .map(|(id, p)| (p, truth[&id].labels_of(dim, Lang::Zh).to_vec()))
            .collect();
        scores.insert(format!("mAP/{dim}"), mean_ap(&pairs)? * 100.0);
    }
    Ok((MetricReport::mean_of(Task::Tagging, scores), None))
}

fn eval_retrieval(cfg: &Config, args: &EvalArgs) -> Result<(MetricReport, Option<Value>)> {
    let path = args.sim.as_ref().context("retrieval needs --sim")?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let matrix: SimMatrix = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let videos: BTreeSet<&str> = matrix.video_ids.iter().map(String::as_str).collect();
    let mut offenders: BTreeSet<String> = matrix
        .query_ids
        .iter()
        .filter(|q| !videos.contains(q.as_str()))
        .cloned()
        .collect();
    if let Some(truth) = load_truth(&args.truth)? {
        let queries: BTreeSet<&String> = matrix.query_ids.iter().collect();
        offenders.extend(queries.iter().filter(|q| !truth.contains_key(**q)).map(|q| q.to_string()));
        offenders.extend(
            truth
                .keys()
                .filter(|id| !queries.contains(id))
                .map(|id| format!("{id} (no query)")),
        );
    }
    if !offenders.is_empty() {
        return Err(mismatch("query ids do not match ground truth", &offenders));
    }
    // Each query's own video is its single relevant result.
    let truth: BTreeMap<String, String> = matrix.query_ids.iter().map(|q| (q.clone(), q.clone())).collect();
    let recall = recall_at(&matrix, &truth, &cfg.eval.recall_cutoffs)?;
    Ok((MetricReport::retrieval(&recall), None))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptionLine {
    video_id: String,
    hyp: String,
    #[serde(default)]
    hyp_tokens: Option<Vec<String>>,
    #[serde(default, rename = "ref")]
    reference: Option<String>,
    #[serde(default)]
    ref_tokens: Option<Vec<String>>,
}

fn caption(raw: String, tokens: Option<Vec<String>>) -> SegmentedCaption {
    match tokens {
        Some(t) => SegmentedCaption::new(raw, t),
        None => SegmentedCaption::from_raw(raw),
    }
}

fn eval_caption(cfg: &Config, args: &EvalArgs) -> Result<(MetricReport, Option<Value>)> {
    let path = args.captions.as_ref().context("caption needs --captions")?;
    let lines: Vec<CaptionLine> = read_jsonl(path)?;
    let truth = load_truth(&args.truth)?;
    let titles: Option<BTreeMap<String, String>> = match (&args.manifest, args.track) {
        (Some(m), Track::Beyond) => Some(load_manifest(m)?.into_iter().map(|v| (v.id, v.title)).collect()),
        (None, Track::Beyond) => bail!(Error::Invalid("the beyond track needs --manifest for titles".into())),
        _ => None,
    };
    let mut seen = BTreeSet::new();
    let mut offenders = BTreeSet::new();
    let mut pairs = Vec::with_capacity(lines.len());
    for l in lines {
        if !seen.insert(l.video_id.clone()) {
            bail!(Error::DuplicateId(l.video_id));
        }
        if let Some(t) = &truth {
            if !t.contains_key(&l.video_id) {
                offenders.insert(l.video_id.clone());
                continue;
            }
        }
        let reference = match &titles {
            Some(titles) => titles.get(&l.video_id).map(|t| SegmentedCaption::from_raw(t.clone())),
            None => match l.reference {
                Some(r) => Some(caption(r, l.ref_tokens)),
                None => truth
                    .as_ref()
                    .and_then(|t| t[&l.video_id].caption.get(&Lang::Zh).cloned())
                    .map(SegmentedCaption::from_raw),
            },
        };
        match reference {
            Some(r) => pairs.push((l.video_id, caption(l.hyp, l.hyp_tokens), r)),
            None => {
                offenders.insert(format!("{} (no reference)", l.video_id));
            }
        }
    }
    if let Some(t) = &truth {
        offenders.extend(t.keys().filter(|id| !seen.contains(*id)).map(|id| format!("{id} (no hypothesis)")));
    }
    if !offenders.is_empty() {
        return Err(mismatch("caption ids do not match ground truth", &offenders));
    }
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    let (hyps, refs): (Vec<_>, Vec<_>) = pairs.into_iter().map(|(_, h, r)| (h, r)).unzip();
    let scores = CaptionScores::compute(&hyps, &refs, cfg.eval.bleu_smoothing)?;
    Ok((MetricReport::caption(&scores), Some(json!(scores.raw))))
}

pub fn eval(cfg: &Config, args: EvalArgs) -> Result<()> {
    let (report, raw) = match args.task {
        EvalTask::Tagging => eval_tagging(&args)?,
        EvalTask::Retrieval => eval_retrieval(cfg, &args)?,
        EvalTask::Caption => eval_caption(cfg, &args)?,
    };
    let mut doc = serde_json::to_value(&report)?;
    doc["track"] = json!(args.track);
    if let Some(raw) = raw {
        doc["raw"] = raw;
    }
    doc["config_digest"] = json!(cfg.digest());
    create_dir(&args.out)?;
    write_json(&args.out.join("report.json"), &doc)?;

    let parts: Vec<String> = report.scores.iter().map(|(k, v)| format!("{k}={v:.2}")).collect();
    println!("{}: overall={:.2} {}", doc["task"].as_str().unwrap_or("eval"), report.overall, parts.join(" "));
    Ok(())
}

pub fn stats(args: StatsArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    if manifest.is_empty() {
        bail!(Error::Empty(format!("{} has no videos", args.manifest.display())));
    }
    let durations: Vec<f64> = manifest.iter().map(|v| v.duration_s).collect();
    let sizes: Vec<f64> = manifest.iter().map(|v| v.file_size_bytes as f64).collect();
    let title_chars: Vec<f64> = manifest.iter().map(|v| v.title.chars().count() as f64).collect();
    let mut doc = json!({
        "videos": manifest.len(),
        "duration_s": describe(&durations)?,
        "file_size_bytes": describe(&sizes)?,
        "title_chars": describe(&title_chars)?,
    });
    if let Some(truth) = load_truth(&args.truth)? {
        if truth.is_empty() {
            bail!(Error::Empty("ground truth has no records".into()));
        }
        let mut labels = serde_json::Map::new();
        for dim in TagDimension::ALL {
            let per_video: Vec<f64> = truth.values().map(|r| r.labels_of(dim, Lang::Zh).len() as f64).collect();
            let vocab: BTreeSet<&str> = truth
                .values()
                .flat_map(|r| r.labels_of(dim, Lang::Zh))
                .map(String::as_str)
                .collect();
            labels.insert(
                dim.as_str().into(),
                json!({
                    "vocabulary": vocab.len(),
                    "total": per_video.iter().sum::<f64>() as usize,
                    "per_video": describe(&per_video)?,
                }),
            );
        }
        doc["labels"] = Value::Object(labels);
    }
    let text = serde_json::to_string_pretty(&doc)?;
    println!("{text}");
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_json(&out.join("stats.json"), &doc)?;
    }
    Ok(())
}

fn annotation_queue(manifest: &[VideoRecord], candidates: &Option<PathBuf>) -> Result<Vec<QueueEntry>> {
    let Some(path) = candidates else {
        return Ok(manifest
            .iter()
            .map(|v| QueueEntry {
                video_id: v.id.clone(),
                user_tags: v.user_tags.clone(),
            })
            .collect());
    };
    let known: BTreeSet<&str> = manifest.iter().map(|v| v.id.as_str()).collect();
    let candidates: Vec<Candidate> = read_jsonl(path)?;
    candidates
        .into_iter()
        .map(|c| {
            if !known.contains(c.video_id.as_str()) {
                return Err(Error::UnknownVideo {
                    file: path.display().to_string(),
                    video_id: c.video_id,
                }
                .into());
            }
            Ok(QueueEntry {
                video_id: c.video_id,
                user_tags: c.voted_tags.into_keys().collect(),
            })
        })
        .collect()
}

fn lease_ms(cfg: &Config) -> Result<i64> {
    let ms = cfg.serve.lease_minutes * 60_000.0;
    if !(ms >= 1.0) || !ms.is_finite() {
        bail!(Error::Invalid(format!("serve.lease_minutes {} is not positive", cfg.serve.lease_minutes)));
    }
    Ok(ms.round() as i64)
}

pub fn serve(cfg: &Config, args: ServeArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let queue = annotation_queue(&manifest, &args.candidates)?;
    let svc_cfg = ServiceConfig {
        log_path: args.log.clone(),
        snapshot_path: args.snapshot.clone(),
        snapshot_every: cfg.serve.snapshot_every,
        lease_ms: lease_ms(cfg)?,
        media_url: cfg.serve.media_url.clone(),
    };
    let service = Arc::new(Service::open(queue, manifest, &svc_cfg, system_clock())?);
    let addr = SocketAddr::new(args.host, args.port);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting runtime")?;
    eprintln!("serving on http://{addr}");
    runtime
        .block_on(curator_service::serve(service, addr))
        .with_context(|| format!("serving on {addr}"))?;
    Ok(())
}

pub fn export(cfg: &Config, args: ExportArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let queue = annotation_queue(&manifest, &args.candidates)?;
    let base = match args.snapshot.as_ref().map(load_snapshot).transpose()?.flatten() {
        Some(state) => state,
        None => WorkflowState::new(queue, lease_ms(cfg)?)?,
    };
    let events = read_events(&args.log)?;
    let state = base.replay(&events)?;
    let (records, trailer) = state.export();
    create_dir(&args.out)?;
    let path = args.out.join("groundtruth.jsonl");
    fs::write(&path, format_export(&records, &trailer)?).with_context(|| format!("writing {}", path.display()))?;
    println!("export: {} reviewed records from {} events", records.len(), events.len());
    Ok(())
}
