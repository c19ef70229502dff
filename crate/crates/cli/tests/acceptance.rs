//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Tolerances and time limits are pinned below.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use curator_core::annotate::{
    read_events, AnnotationEvent, EventBody, ItemState, LabelEdits, QueueEntry, StepPayload, WorkflowState,
};
use curator_core::clean::{
    classify_face_video, classify_text_heavy, compute_percentile_thresholds, filter_contentless, run_pipeline,
    CleanConfig, Stopwords,
};
use curator_core::ingest::{load_manifest, load_sidecars};
use curator_core::metrics::{
    average_precision, bleu4, cider, mean_ap, meteor_exact, recall_at, MeteorParams, SegmentedCaption, SimMatrix,
};
use curator_core::model::{
    Category, Dimension, FeatureVector, FrameRecord, LabelScoreSet, Lang, RankedPrediction, TagDimension, TokenGrid,
    VideoRecord,
};
use curator_core::preselect::{preselect_candidates, FeatureIndex, PreselectConfig};
use curator_core::vtr::{reduce_tokens, ReductionMode};
use curator_core::Error;
use curator_service::{ReviewRequest, Service, ServiceConfig, StepRequest};
use curator_testkit::fixture::write_cleaning_fixture;
use curator_testkit::oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RANK_TOL: f64 = 1e-12;
const CAPTION_TOL: f64 = 1e-9;
const GOLDEN_TOL: f64 = 1e-9;
const ORACLE_INSTANCES: usize = 150;
const PROPERTY_TRIALS: usize = 1000;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion(name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let took = start.elapsed();
    let result = result.and_then(|detail| {
        if took <= limit {
            Ok(detail)
        } else {
            Err(format!("{detail}; took {took:.2?}, limit {limit:?}"))
        }
    });
    match &result {
        Ok(detail) => println!("PASS  {name}: {detail} [{took:.2?} / limit {limit:?}]"),
        Err(why) => println!("FAIL  {name}: {why} [{took:.2?} / limit {limit:?}]"),
    }
    result.is_ok()
}

// 1. Visual-token reduction counts.

fn vtr_counts() -> Outcome {
    let cases = [
        (6, 196, ReductionMode::MiddleOnly, 202),
        (16, 196, ReductionMode::MiddleOnly, 212),
        (16, 196, ReductionMode::MiddleFirstLast, 604),
    ];
    let mut seen = Vec::new();
    for (k, p, mode, want) in cases {
        let grid = TokenGrid::from_fn(k, p, 2, |f, t, c| (f * 1000 + t * 2 + c) as f64).map_err(|e| e.to_string())?;
        let got = reduce_tokens(&grid, mode).map_err(|e| e.to_string())?.len();
        ensure(got == want, || format!("k={k} p={p} {mode:?}: {got} tokens, want {want}"))?;
        seen.push(got.to_string());
    }
    Ok(format!("token counts {} (exact)", seen.join("/")))
}

// 2. Planted cleaning fixture.

fn cleaning_fixture() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fx = write_cleaning_fixture(dir.path(), 200, 20, 2024).map_err(|e| e.to_string())?;
    let run = |threads: usize| -> Result<(Vec<u8>, BTreeMap<Category, BTreeSet<String>>), String> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        pool.install(|| {
            let manifest = load_manifest(dir.path().join("manifest.jsonl")).map_err(|e| e.to_string())?;
            let sidecars = load_sidecars(dir.path(), &manifest).map_err(|e| e.to_string())?;
            let out = run_pipeline(&manifest, &sidecars, &CleanConfig::default(), &Stopwords::bundled())
                .map_err(|e| e.to_string())?;
            let mut removed: BTreeMap<Category, BTreeSet<String>> = BTreeMap::new();
            for v in &out.verdicts {
                if let Some(c) = v.category {
                    removed.entry(c).or_default().insert(v.video_id.clone());
                }
            }
            let bytes = serde_json::to_vec(&(&out.verdicts, &out.summary)).map_err(|e| e.to_string())?;
            Ok((bytes, removed))
        })
    };
    let (first, removed) = run(1)?;
    let mut detail = Vec::new();
    for cat in Category::ALL {
        let got = removed.get(&cat).cloned().unwrap_or_default();
        let want: BTreeSet<String> = fx.planted_in(cat.as_str()).into_iter().map(str::to_owned).collect();
        let tp = got.intersection(&want).count();
        let precision = if got.is_empty() { 0.0 } else { tp as f64 / got.len() as f64 };
        let recall = tp as f64 / want.len() as f64;
        ensure(precision == 1.0 && recall == 1.0, || {
            format!("{cat}: precision {precision:.3} recall {recall:.3}")
        })?;
        detail.push(format!("{cat} P=R=1 ({tp})"));
    }
    for threads in [1, 2, 4, 8] {
        let (again, _) = run(threads)?;
        ensure(again == first, || format!("output differs with {threads} threads"))?;
    }
    Ok(format!("{}; identical over runs at 1/2/4/8 threads", detail.join(", ")))
}

// 3. Boundary table.

fn frame(w: u32, h: u32, boxes: Vec<[f64; 4]>, ocr: u32) -> FrameRecord {
    FrameRecord {
        video_id: "v".into(),
        frame_index: 0,
        frame_w: w,
        frame_h: h,
        face_boxes: boxes,
        ocr_char_count: ocr,
    }
}

fn frames(n: usize, hits: usize, hit: &FrameRecord, miss: &FrameRecord) -> Vec<FrameRecord> {
    (0..n)
        .map(|i| if i < hits { hit.clone() } else { miss.clone() })
        .collect()
}

fn preselected(durations: [f64; 2]) -> Result<BTreeSet<String>, String> {
    let videos: Vec<VideoRecord> = ["a", "b", "c"]
        .iter()
        .zip([durations[0], durations[1], 10.0])
        .map(|(id, d)| VideoRecord::new(*id, d, "t").with_tags(["猫"]))
        .collect();
    let feats: Vec<FeatureVector> = videos
        .iter()
        .map(|v| FeatureVector {
            video_id: v.id.clone(),
            values: vec![1.0, 0.5],
        })
        .collect();
    let cfg = PreselectConfig {
        k: 2,
        ..PreselectConfig::default()
    };
    let out = preselect_candidates(&videos, &feats, &cfg).map_err(|e| e.to_string())?;
    Ok(out.into_iter().map(|c| c.video_id).collect())
}

fn boundary_table() -> Outcome {
    let cfg = CleanConfig::default();
    let plain = frame(1, 1, vec![], 0);
    let face = |h: f64| frame(1, 1, vec![[0.0, 0.0, 1.0, h]], 0);
    let faces = |n: usize| frame(100, 100, (0..n).map(|i| [i as f64, 0.0, 1.0, 1.0]).collect(), 0);
    let text = |c: u32| frame(10, 10, vec![], c);
    let above_half = 0.5f64.next_up();

    let rows: Vec<(&str, bool, bool)> = vec![
        (
            "face ratio 0.5",
            classify_face_video(&frames(4, 4, &face(0.5), &plain), &cfg).is_face_only,
            classify_face_video(&frames(4, 4, &face(above_half), &plain), &cfg).is_face_only,
        ),
        (
            "faces 8",
            classify_face_video(&[faces(8)], &cfg).is_face_only,
            classify_face_video(&[faces(9)], &cfg).is_face_only,
        ),
        (
            "OCR 50",
            classify_text_heavy(&frames(4, 4, &text(50), &text(0)), &cfg).is_text_heavy,
            classify_text_heavy(&frames(4, 4, &text(51), &text(0)), &cfg).is_text_heavy,
        ),
        (
            "frame fraction 0.75 (face)",
            classify_face_video(&frames(100, 75, &face(above_half), &plain), &cfg).is_face_only,
            classify_face_video(&frames(100, 76, &face(above_half), &plain), &cfg).is_face_only,
        ),
        (
            "frame fraction 0.75 (text)",
            classify_text_heavy(&frames(100, 75, &text(51), &text(0)), &cfg).is_text_heavy,
            classify_text_heavy(&frames(100, 76, &text(51), &text(0)), &cfg).is_text_heavy,
        ),
        (
            "duration 60 s",
            !preselected([60.0, 60.0f64.next_up()])?.contains("a"),
            !preselected([60.0, 60.0f64.next_up()])?.contains("b"),
        ),
    ];
    for (name, at, above) in &rows {
        ensure(!at && *above, || {
            format!("{name}: at boundary removed={at}, one step above removed={above}")
        })?;
    }
    Ok(format!("{} rows kept at the boundary and removed one ulp/unit above", rows.len()))
}

// 4. Metric oracle suite.

const LABELS: [&str; 7] = ["a", "b", "c", "d", "e", "f", "g"];
const WORDS: [&str; 5] = ["猫", "跑", "在", "草地", "上"];

fn ranking(rng: &mut ChaCha8Rng) -> (Vec<(String, f64)>, Vec<String>) {
    let n = rng.random_range(1..=6);
    let items: Vec<(String, f64)> = LABELS[..n]
        .iter()
        .map(|l| (l.to_string(), rng.random_range(0..4) as f64 / 3.0))
        .collect();
    let mut relevant: Vec<String> = LABELS
        .iter()
        .filter(|_| rng.random_bool(0.4))
        .map(|l| l.to_string())
        .collect();
    if relevant.is_empty() {
        relevant.push(LABELS[rng.random_range(0..n)].to_string());
    }
    (items, relevant)
}

fn words(rng: &mut ChaCha8Rng) -> Vec<String> {
    let n = rng.random_range(1..=8);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string()).collect()
}

fn caption_corpus(rng: &mut ChaCha8Rng) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    // CIDEr's document frequencies need at least two items.
    let n = rng.random_range(2..=6);
    let refs: Vec<Vec<String>> = (0..n).map(|_| words(rng)).collect();
    let hyps = refs
        .iter()
        .map(|r| {
            if rng.random_bool(0.3) {
                words(rng)
            } else {
                let mut h: Vec<String> = r.iter().filter(|_| rng.random_bool(0.85)).cloned().collect();
                if h.is_empty() || rng.random_bool(0.3) {
                    h.push(WORDS[rng.random_range(0..WORDS.len())].to_string());
                }
                h.truncate(8);
                h
            }
        })
        .collect();
    (hyps, refs)
}

fn seg(caps: &[Vec<String>]) -> Vec<SegmentedCaption> {
    caps.iter().map(|t| SegmentedCaption::new(t.concat(), t.clone())).collect()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, got: f64, want: f64, tol: f64| -> Result<(), String> {
        let err = (got - want).abs();
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(err);
        ensure(err <= tol, || format!("{name}: engine {got} oracle {want}"))
    };
    let err = |e: Error| e.to_string();
    for _ in 0..ORACLE_INSTANCES {
        let (items, relevant) = ranking(&mut rng);
        let pred = RankedPrediction::new("v", items.clone()).map_err(err)?;
        note("AP", average_precision(&pred, &relevant).map_err(err)?, oracle::average_precision(&items, &relevant), RANK_TOL)?;

        let videos: Vec<(Vec<(String, f64)>, Vec<String>)> = (0..rng.random_range(1..=6)).map(|_| ranking(&mut rng)).collect();
        let engine: Vec<(RankedPrediction, Vec<String>)> = videos
            .iter()
            .map(|(i, r)| Ok((RankedPrediction::new("v", i.clone())?, r.clone())))
            .collect::<Result<_, Error>>()
            .map_err(err)?;
        note("mAP", mean_ap(&engine).map_err(err)?, oracle::mean_ap(&videos), RANK_TOL)?;

        let nv = rng.random_range(1..=6);
        let video_ids: Vec<String> = (0..nv).map(|i| format!("v{i}")).collect();
        let nq = rng.random_range(1..=6);
        let query_ids: Vec<String> = (0..nq).map(|i| format!("q{i}")).collect();
        let rows: Vec<Vec<f64>> = (0..nq)
            .map(|_| (0..nv).map(|_| rng.random_range(0..3) as f64 / 2.0).collect())
            .collect();
        let truth_cols: Vec<usize> = (0..nq).map(|_| rng.random_range(0..nv)).collect();
        let truth: BTreeMap<String, String> = query_ids
            .iter()
            .zip(&truth_cols)
            .map(|(q, &c)| (q.clone(), video_ids[c].clone()))
            .collect();
        let cutoffs = [1, 2, 5];
        let m = SimMatrix {
            query_ids: query_ids.clone(),
            video_ids: video_ids.clone(),
            rows: rows.clone(),
        };
        let got = recall_at(&m, &truth, &cutoffs).map_err(err)?;
        let ranks: Vec<usize> = rows
            .iter()
            .zip(&truth_cols)
            .map(|(row, &c)| oracle::retrieval_rank(&video_ids, row, &video_ids[c]))
            .collect();
        for (n, want) in cutoffs.iter().zip(oracle::recall(&ranks, &cutoffs)) {
            note("R@N", got.at(*n), want, RANK_TOL)?;
        }

        let (hyps, refs) = caption_corpus(&mut rng);
        let (h, r) = (seg(&hyps), seg(&refs));
        note("BLEU4", bleu4(&h, &r, false).map_err(err)?, oracle::bleu4(&hyps, &refs), CAPTION_TOL)?;
        note(
            "METEOR",
            meteor_exact(&h, &r, MeteorParams::default()).map_err(err)?,
            oracle::meteor(&hyps, &refs),
            CAPTION_TOL,
        )?;
        note("CIDEr", cider(&h, &r).map_err(err)?, oracle::cider(&hyps, &refs), CAPTION_TOL)?;
    }
    let summary: Vec<String> = worst.iter().map(|(k, v)| format!("{k} max|err|={v:.1e}")).collect();
    Ok(format!(
        "{ORACLE_INSTANCES} instances per metric, tol {RANK_TOL:e} rank / {CAPTION_TOL:e} caption; {}",
        summary.join(", ")
    ))
}

// 5. Hand-computed goldens.

fn goldens() -> Outcome {
    let err = |e: Error| e.to_string();
    let cap = |s: &str| SegmentedCaption::new(s, s.split(' ').map(str::to_owned).collect());
    let pred = RankedPrediction::new("v", vec![("a".into(), 3.0), ("b".into(), 2.0), ("c".into(), 1.0)]).map_err(err)?;
    let checks = [
        ("AP", average_precision(&pred, &["a", "c"]).map_err(err)?, 5.0 / 6.0),
        (
            "BLEU4",
            bleu4(&[cap("a b c d")], &[cap("a b c d e")], false).map_err(err)?,
            (1.0f64 - 5.0 / 4.0).exp(),
        ),
        (
            "METEOR",
            meteor_exact(&[cap("a b c d")], &[cap("a b c d")], MeteorParams::default()).map_err(err)?,
            0.9921875,
        ),
        ("CIDEr", {
            let caps = [cap("a b c d"), cap("e f g h")];
            cider(&caps, &caps).map_err(err)?
        }, 10.0),
    ];
    for (name, got, want) in &checks {
        ensure((got - want).abs() <= GOLDEN_TOL, || format!("{name}: {got} != {want}"))?;
    }
    Ok(format!("AP=5/6, BLEU4=e^(-1/4), METEOR=0.9921875, CIDEr=10 within {GOLDEN_TOL:e}"))
}

// 6. Invariance properties.

fn neighbor_scaling(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.random_range(2..12);
    let d = rng.random_range(2..6);
    let vs: Vec<Vec<f64>> = (0..n)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            if v.iter().any(|x: &f64| x.abs() > 1e-3) {
                break v;
            }
        })
        .collect();
    let scale: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..100.0)).collect();
    let build = |c: &[f64]| {
        let feats: Vec<FeatureVector> = vs
            .iter()
            .zip(c)
            .enumerate()
            .map(|(i, (v, c))| FeatureVector {
                video_id: format!("v{i:02}"),
                values: v.iter().map(|x| x * c).collect(),
            })
            .collect();
        FeatureIndex::new(&feats).map_err(|e| e.to_string())
    };
    let (plain, scaled) = (build(&vec![1.0; n])?, build(&scale)?);
    let k = rng.random_range(1..n);
    for i in 0..n {
        let id = format!("v{i:02}");
        let a: Vec<String> = plain.nearest(&id, k).map_err(|e| e.to_string())?.into_iter().map(|p| p.0).collect();
        let b: Vec<String> = scaled.nearest(&id, k).map_err(|e| e.to_string())?.into_iter().map(|p| p.0).collect();
        ensure(a == b, || format!("neighbors of {id} changed under scaling"))?;
    }
    Ok(())
}

fn ap_monotone(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let transforms: [fn(f64) -> f64; 4] = [|x| 3.0 * x + 7.0, f64::exp, |x| x * x * x, |x| (x + 2.0).ln()];
    let n = rng.random_range(1..=6);
    let base: Vec<(String, f64)> = LABELS[..n]
        .iter()
        .map(|l| (l.to_string(), rng.random_range(-8..8) as f64 / 8.0))
        .collect();
    let mut relevant: Vec<&str> = LABELS[..n].iter().copied().filter(|_| rng.random_bool(0.5)).collect();
    if relevant.is_empty() {
        relevant.push(LABELS[0]);
    }
    let t = transforms[rng.random_range(0..transforms.len())];
    let moved: Vec<(String, f64)> = base.iter().map(|(l, s)| (l.clone(), t(*s))).collect();
    let ap = |items: Vec<(String, f64)>| {
        RankedPrediction::new("v", items)
            .and_then(|p| average_precision(&p, &relevant))
            .map_err(|e| e.to_string())
    };
    let (a, b) = (ap(base)?, ap(moved)?);
    ensure(a == b, || format!("AP {a} became {b} under a monotone transform"))
}

fn recall_identities(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let nv = rng.random_range(1..15);
    let nq = rng.random_range(1..8);
    let video_ids: Vec<String> = (0..nv).map(|i| format!("v{i:02}")).collect();
    let query_ids: Vec<String> = (0..nq).map(|i| format!("q{i}")).collect();
    let truth: BTreeMap<String, String> = query_ids
        .iter()
        .map(|q| (q.clone(), video_ids[rng.random_range(0..nv)].clone()))
        .collect();
    let m = SimMatrix {
        rows: (0..nq)
            .map(|_| (0..nv).map(|_| rng.random_range(0..5) as f64).collect())
            .collect(),
        query_ids,
        video_ids,
    };
    let r = recall_at(&m, &truth, &[1, 5, 10]).map_err(|e| e.to_string())?;
    ensure(r.at(1) <= r.at(5) && r.at(5) <= r.at(10), || "R@N not monotone".into())?;
    ensure(r.sum_r == r.at(1) + r.at(5) + r.at(10), || "SumR differs from R@1+R@5+R@10".into())
}

fn contentless_scaling(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let labels = ["x", "y", "z"];
    let n = if rng.random_bool(0.5) { rng.random_range(20..40) } else { rng.random_range(5..20) };
    let raw: Vec<Vec<u16>> = (0..n).map(|_| (0..9).map(|_| rng.random_range(1..1024)).collect()).collect();
    let scale: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..100.0)).collect();
    let sets = |c: &[f64]| -> Vec<Vec<LabelScoreSet>> {
        raw.iter()
            .enumerate()
            .map(|(v, s)| {
                Dimension::ALL
                    .iter()
                    .enumerate()
                    .map(|(d, &dim)| LabelScoreSet {
                        video_id: format!("v{v}"),
                        dimension: dim,
                        scores: labels
                            .iter()
                            .enumerate()
                            .map(|(l, name)| (name.to_string(), f64::from(s[d * 3 + l]) / 1024.0 * c[d]))
                            .collect(),
                    })
                    .collect()
            })
            .collect()
    };
    let emitted = |videos: &[Vec<LabelScoreSet>]| -> Result<Vec<_>, String> {
        let thr = compute_percentile_thresholds(videos.iter().flatten(), &CleanConfig::default())
            .map_err(|e| e.to_string())?;
        Ok(videos.iter().map(|v| filter_contentless(v, &thr).emitted).collect())
    };
    ensure(emitted(&sets(&[1.0; 3]))? == emitted(&sets(&scale))?, || {
        format!("emission changed under per-dimension scale {scale:?}")
    })
}

fn invariance() -> Outcome {
    let props: [(&str, fn(&mut ChaCha8Rng) -> Result<(), String>); 4] = [
        ("neighbor order under vector scaling", neighbor_scaling),
        ("AP under monotone transforms", ap_monotone),
        ("SumR identity and R@N monotonicity", recall_identities),
        ("content-less emission under dimension scaling", contentless_scaling),
    ];
    for (i, (name, prop)) in props.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + i as u64);
        for trial in 0..PROPERTY_TRIALS {
            prop(&mut rng).map_err(|e| format!("{name}, trial {trial}: {e}"))?;
        }
    }
    Ok(format!("{} properties x {PROPERTY_TRIALS} trials", props.len()))
}

// 7. Concurrent annotators through the service.

const ITEMS: usize = 50;
const ANNOTATORS: usize = 4;
const LEASE: i64 = 40;

fn labels(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn step(n: usize, rng: &mut ChaCha8Rng) -> StepPayload {
    match n {
        0 => StepPayload::TitleVerdict {
            relevant: !rng.random_bool(0.1),
        },
        1 => StepPayload::CaptionSet {
            caption: "一只猫在草地上奔跑".into(),
        },
        2 => StepPayload::LabelsSet {
            object: labels(&["猫"]),
            action: labels(&["奔跑"]),
            scene: if rng.random_bool(0.15) { vec![] } else { labels(&["草地"]) },
        },
        3 => StepPayload::UsertagsVerified { tags: labels(&["猫"]) },
        _ => StepPayload::Finalize,
    }
}

fn open_items(svc: &Service) -> bool {
    svc.state()
        .items()
        .any(|it| matches!(it.state, ItemState::Pending | ItemState::Annotated))
}

fn simulate(svc: &Service, clock: &AtomicI64, who: String, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current: Option<(String, usize)> = None;
    for _ in 0..5000 {
        if !open_items(svc) {
            return Ok(());
        }
        clock.fetch_add(rng.random_range(1..4), Ordering::SeqCst);
        if rng.random_bool(0.05) {
            clock.fetch_add(LEASE, Ordering::SeqCst);
        }
        match current.take() {
            None => match svc.next_item(&who).map_err(|e| e.to_string())? {
                Some(view) => current = Some((view.item.video_id, 0)),
                None => {
                    let annotated: Vec<String> = svc
                        .state()
                        .items()
                        .filter(|it| it.state == ItemState::Annotated)
                        .map(|it| it.video_id.clone())
                        .collect();
                    if annotated.is_empty() {
                        continue;
                    }
                    let id = &annotated[rng.random_range(0..annotated.len())];
                    let req = ReviewRequest {
                        reviewer: who.clone(),
                        fixes: LabelEdits::default(),
                        translations: LabelEdits {
                            caption: Some("a cat runs on the grass".into()),
                            labels: BTreeMap::from([(TagDimension::Object, labels(&["cat"]))]),
                        },
                    };
                    match svc.review(id, req) {
                        Ok(_) | Err(Error::Workflow(_)) => {}
                        Err(e) => return Err(e.to_string()),
                    }
                }
            },
            Some((id, n)) => {
                if rng.random_bool(0.05) {
                    let wrong = (n + rng.random_range(1..5)) % 5;
                    let r = svc.submit_step(&id, StepRequest { annotator: who.clone(), step: step(wrong, &mut rng) });
                    ensure(matches!(r, Err(Error::Workflow(_))), || format!("out-of-order step on {id} accepted"))?;
                    current = Some((id, n));
                    continue;
                }
                let req = StepRequest {
                    annotator: who.clone(),
                    step: step(n, &mut rng),
                };
                match svc.submit_step(&id, req) {
                    Ok(out) if out.item.item.state == ItemState::Pending => current = Some((id, n + 1)),
                    Ok(_) | Err(Error::Workflow(_)) => {}
                    Err(e) => return Err(e.to_string()),
                }
            }
        }
    }
    Err(format!("{who} did not finish"))
}

/// Claims by a second annotator are only legal once the holder's last
/// activity is a full lease old; only the holder may submit steps.
fn double_claims(events: &[AnnotationEvent]) -> Vec<u64> {
    let mut bad = Vec::new();
    let mut holder: HashMap<&str, (&str, i64)> = HashMap::new();
    for ev in events {
        let id = ev.video_id.as_str();
        match &ev.body {
            EventBody::Claim => {
                if let Some(&(who, last)) = holder.get(id) {
                    if who != ev.annotator && ev.ts < last + LEASE {
                        bad.push(ev.seq);
                    }
                }
                holder.insert(id, (&ev.annotator, ev.ts));
            }
            EventBody::ReviewFix { .. } => {}
            body => match holder.get(id).copied() {
                Some((who, _)) if who == ev.annotator => {
                    if matches!(body, EventBody::Finalize | EventBody::TitleVerdict { relevant: false }) {
                        holder.remove(id);
                    } else {
                        holder.insert(id, (who, ev.ts));
                    }
                }
                _ => bad.push(ev.seq),
            },
        }
    }
    bad
}

fn annotators_run(seed: u64, dir: &Path) -> Result<(usize, usize), String> {
    let queue: Vec<QueueEntry> = (0..ITEMS)
        .map(|i| QueueEntry {
            video_id: format!("v{i:03}"),
            user_tags: labels(&["猫", "草地"]),
        })
        .collect();
    let videos: Vec<VideoRecord> = queue.iter().map(|q| VideoRecord::new(q.video_id.clone(), 20.0, "小猫")).collect();
    let log = dir.join(format!("events-{seed}.jsonl"));
    let mut cfg = ServiceConfig::new(&log);
    cfg.lease_ms = LEASE;
    let clock = Arc::new(AtomicI64::new(0));
    let c = clock.clone();
    let svc = Service::open(queue.clone(), videos, &cfg, Arc::new(move || c.load(Ordering::SeqCst)))
        .map_err(|e| e.to_string())?;
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..ANNOTATORS)
            .map(|a| {
                let (svc, clock) = (&svc, &*clock);
                scope.spawn(move || simulate(svc, clock, format!("ann{a}"), seed * 10 + a as u64))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().map_err(|_| "annotator thread panicked".to_string())?)
            .collect::<Result<Vec<()>, String>>()
    })?;
    let live = svc.state();
    drop(svc);

    let events = read_events(&log).map_err(|e| e.to_string())?;
    let replayed = WorkflowState::new(queue, LEASE)
        .and_then(|s| s.replay(&events))
        .map_err(|e| e.to_string())?;
    ensure(replayed == live, || format!("seed {seed}: replay differs from live state"))?;
    let bad = double_claims(&events);
    ensure(bad.is_empty(), || format!("seed {seed}: illegal claims or steps at seq {bad:?}"))?;
    let (records, trailer) = live.export();
    ensure(trailer.records == records.len(), || "trailer count mismatch".into())?;
    for r in &records {
        r.validate().map_err(|e| e.to_string())?;
        ensure(r.empty_dimensions(Lang::Zh).is_empty(), || format!("{} has an empty dimension", r.video_id))?;
    }
    Ok((events.len(), records.len()))
}

fn concurrent_annotation() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut totals = (0, 0);
    for seed in 1..=3 {
        let (events, records) = annotators_run(seed, dir.path())?;
        totals.0 += events;
        totals.1 += records;
    }
    Ok(format!(
        "3 runs x {ANNOTATORS} annotators x {ITEMS} items: {} events replayed exactly, no double claims, {} exported records valid",
        totals.0, totals.1
    ))
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let results = [
        criterion("VTR token counts", secs(1), vtr_counts),
        criterion("cleaning fixture precision/recall/determinism", secs(5), cleaning_fixture),
        criterion("boundary table", secs(1), boundary_table),
        criterion("metric oracle suite", secs(30), metric_oracles),
        criterion("hand-computed goldens", secs(1), goldens),
        criterion("invariance properties", secs(60), invariance),
        criterion("concurrent annotation state machine", secs(30), concurrent_annotation),
    ];
    let passed = results.iter().filter(|ok| **ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
