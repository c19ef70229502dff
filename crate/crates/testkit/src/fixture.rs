//! Generated corpora with planted cleaning violations, written as the JSONL
//! files the engine ingests.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub const EMPTY_TITLE: &str = "empty_title";
pub const FACE_ONLY: &str = "face_only";
pub const TEXT_HEAVY: &str = "text_heavy";
pub const CONTENT_LESS: &str = "content_less";
pub const CATEGORIES: [&str; 4] = [EMPTY_TITLE, FACE_ONLY, TEXT_HEAVY, CONTENT_LESS];

pub const FRAME_W: u32 = 640;
pub const FRAME_H: u32 = 360;
pub const FRAMES_PER_VIDEO: u32 = 10;
pub const FEATURE_DIM: usize = 8;

const OBJECTS: [&str; 4] = ["猫", "狗", "汽车", "蛋糕"];
const ACTIONS: [&str; 4] = ["跑步", "跳舞", "做饭", "唱歌"];
const SCENES: [&str; 4] = ["室内", "街道", "公园", "厨房"];
const TAGS: [&str; 8] = ["萌宠", "美食", "旅行", "舞蹈", "音乐", "汽车", "日常", "搞笑"];
const VERBS: [&str; 4] = ["做", "看", "拍", "吃"];
const NOUNS: [&str; 4] = ["蛋糕", "风景", "小猫", "火锅"];

#[derive(Debug, Clone)]
pub struct Fixture {
    /// Corpus order.
    pub ids: Vec<String>,
    /// Planted category per violating video.
    pub planted: BTreeMap<String, &'static str>,
    /// Clean videos whose frames all carry 20 OCR characters: under the
    /// default OCR threshold of 50 but over a threshold of 10.
    pub mid_ocr: BTreeSet<String>,
}

impl Fixture {
    pub fn planted_in(&self, category: &str) -> BTreeSet<&str> {
        self.planted
            .iter()
            .filter(|(_, c)| **c == category)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn clean(&self) -> BTreeSet<&str> {
        self.ids
            .iter()
            .filter(|id| !self.planted.contains_key(*id))
            .map(String::as_str)
            .collect()
    }
}

fn token(surface: &str, pos: &str) -> Value {
    json!({"surface": surface, "pos": pos})
}

fn dependent(surface: &str, pos: &str, head: usize, relation: &str) -> Value {
    json!({"surface": surface, "pos": pos, "head": head, "relation": relation})
}

fn empty_title(variant: usize) -> (String, Vec<Value>) {
    match variant % 4 {
        0 => ("名场面".into(), vec![token("名场面", "noun")]),
        1 => (
            "好看!!!".into(),
            vec![token("好看", "adjective"), token("!!!", "other")],
        ),
        2 => (
            "觉得小猫".into(),
            vec![
                token("觉得", "mental_verb"),
                dependent("小猫", "noun", 0, "verb_object"),
            ],
        ),
        _ => ("小猫小狗".into(), vec![token("小猫", "noun"), token("小狗", "noun")]),
    }
}

fn vnp_title(rng: &mut ChaCha8Rng) -> (String, Vec<Value>) {
    let v = VERBS[rng.random_range(0..VERBS.len())];
    let n = NOUNS[rng.random_range(0..NOUNS.len())];
    (
        format!("{v}{n}"),
        vec![token(v, "verb"), dependent(n, "noun", 0, "verb_object")],
    )
}

fn frames(id: &str, kind: Option<&str>, variant: usize, mid_ocr: bool) -> Vec<Value> {
    let base_ocr = if mid_ocr { 20 } else { 5 };
    (0..FRAMES_PER_VIDEO)
        .map(|i| {
            let mut boxes: Vec<[f64; 4]> = if i % 2 == 0 {
                vec![[100.0, 50.0, 64.0, 64.0]]
            } else {
                Vec::new()
            };
            let mut ocr = base_ocr;
            match kind {
                Some(FACE_ONLY) if variant % 2 == 0 => {
                    boxes = vec![[80.0, 30.0, 480.0, 300.0]];
                }
                Some(FACE_ONLY) if i == 3 => {
                    boxes = (0..9).map(|j| [10.0 + 60.0 * j as f64, 20.0, 40.0, 40.0]).collect();
                }
                Some(TEXT_HEAVY) if i != 9 => ocr = 80,
                _ => {}
            }
            json!({
                "video_id": id,
                "frame_index": i,
                "frame_w": FRAME_W,
                "frame_h": FRAME_H,
                "face_boxes": boxes,
                "ocr_char_count": ocr,
            })
        })
        .collect()
}

fn scores(rng: &mut ChaCha8Rng, vocab: &[&str], contentless: bool) -> BTreeMap<String, f64> {
    let top = rng.random_range(0..vocab.len());
    vocab
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let s = if contentless {
                rng.random_range(0.0001..0.01)
            } else if i == top {
                rng.random_range(0.85..0.99)
            } else {
                rng.random_range(0.1..0.4)
            };
            (l.to_string(), s)
        })
        .collect()
}

fn write_lines(path: &Path, lines: &[Value]) -> io::Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    fs::write(path, text)
}

/// Write a corpus of `n` videos with `per_category` planted violations of
/// each cleaning category into `dir`. Every planted video violates exactly
/// one stage.
pub fn write_cleaning_fixture(dir: &Path, n: usize, per_category: usize, seed: u64) -> io::Result<Fixture> {
    assert!(n >= 4 * per_category, "corpus too small for the plants");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<String> = (0..n).map(|i| format!("v{i:04}")).collect();
    let mut shuffled = ids.clone();
    shuffled.shuffle(&mut rng);

    let mut planted = BTreeMap::new();
    for (c, cat) in CATEGORIES.iter().enumerate() {
        for id in &shuffled[c * per_category..(c + 1) * per_category] {
            planted.insert(id.clone(), *cat);
        }
    }
    let mid_ocr: BTreeSet<String> = shuffled[4 * per_category..]
        .iter()
        .step_by(3)
        .cloned()
        .collect();

    let mut manifest = Vec::new();
    let mut frame_lines = Vec::new();
    let mut title_lines = Vec::new();
    let mut feature_lines = Vec::new();
    let mut label_lines: [Vec<Value>; 3] = Default::default();
    for (i, id) in ids.iter().enumerate() {
        let kind = planted.get(id).copied();
        let (title, tokens) = if kind == Some(EMPTY_TITLE) {
            empty_title(i)
        } else {
            vnp_title(&mut rng)
        };
        let mut tags: Vec<&str> = TAGS.choose_multiple(&mut rng, 3).copied().collect();
        tags.sort();
        manifest.push(json!({
            "id": id,
            "duration_s": rng.random_range(5..=90) as f64,
            "file_size_bytes": rng.random_range(100_000..20_000_000u64),
            "title": title,
            "user_tags": tags,
        }));
        title_lines.push(json!({"video_id": id, "tokens": tokens}));
        frame_lines.extend(frames(id, kind, i, mid_ocr.contains(id)));
        let contentless = kind == Some(CONTENT_LESS);
        for (d, vocab) in [OBJECTS, ACTIONS, SCENES].iter().enumerate() {
            label_lines[d].push(json!({
                "video_id": id,
                "scores": scores(&mut rng, vocab, contentless),
            }));
        }
        let v: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        feature_lines.push(json!({"video_id": id, "values": v}));
    }

    fs::create_dir_all(dir)?;
    write_lines(&dir.join("manifest.jsonl"), &manifest)?;
    write_lines(&dir.join("frames.jsonl"), &frame_lines)?;
    write_lines(&dir.join("title_tokens.jsonl"), &title_lines)?;
    write_lines(&dir.join("features.jsonl"), &feature_lines)?;
    for (d, name) in ["object", "action", "scene"].iter().enumerate() {
        write_lines(&dir.join(format!("labels.{name}.jsonl")), &label_lines[d])?;
    }
    Ok(Fixture {
        ids,
        planted,
        mid_ocr,
    })
}
