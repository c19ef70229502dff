//! Line-delimited manifest and sidecar loading.
//!
//! Every file is UTF-8 with one JSON object per line; blank lines are
//! skipped. Sidecar files are optional: a missing file leaves its map empty
//! and the stages that need it fall back to their conservative treatment.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Dimension, FeatureVector, FrameRecord, LabelScoreSet, TitleTokenization, VideoRecord,
};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const FRAMES_FILE: &str = "frames.jsonl";
pub const FEATURES_FILE: &str = "features.jsonl";
pub const TITLE_TOKENS_FILE: &str = "title_tokens.jsonl";
pub const LABEL_SIM_FILE: &str = "label_sim.jsonl";

pub fn labels_file(dim: Dimension) -> String {
    format!("labels.{dim}.jsonl")
}

/// Precomputed label-to-tag similarities in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSimilarity {
    pairs: BTreeMap<(String, String), f64>,
}

impl LabelSimilarity {
    pub fn insert(&mut self, source: impl Into<String>, target: impl Into<String>, sim: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&sim) {
            return Err(Error::invalid(format!("similarity out of [0,1]: {sim}")));
        }
        self.pairs.insert((source.into(), target.into()), sim);
        Ok(())
    }

    pub fn get(&self, source: &str, target: &str) -> Option<f64> {
        // Borrowed tuple lookups are not expressible on a BTreeMap key of
        // owned strings, so allocate.
        self.pairs
            .get(&(source.to_owned(), target.to_owned()))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.pairs
            .iter()
            .map(|((s, t), v)| (s.as_str(), t.as_str(), *v))
    }
}

/// All sidecar annotations of a corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SidecarBundle {
    pub frames: BTreeMap<String, Vec<FrameRecord>>,
    pub label_scores: BTreeMap<(String, Dimension), LabelScoreSet>,
    pub features: BTreeMap<String, FeatureVector>,
    pub title_tokens: BTreeMap<String, TitleTokenization>,
    pub similarity: Option<LabelSimilarity>,
}

impl SidecarBundle {
    pub fn scores_of(&self, video_id: &str, dim: Dimension) -> Option<&LabelScoreSet> {
        self.label_scores.get(&(video_id.to_owned(), dim))
    }

    pub fn add_frame(&mut self, frame: FrameRecord) {
        self.frames
            .entry(frame.video_id.clone())
            .or_default()
            .push(frame);
    }

    pub fn add_scores(&mut self, set: LabelScoreSet) {
        self.label_scores
            .insert((set.video_id.clone(), set.dimension), set);
    }
}

/// Parse one JSON line, reporting missing required fields and type errors
/// with the line number and field name.
fn parse_line<T: DeserializeOwned>(file: &str, line_no: usize, line: &str, required: &[&str]) -> Result<T> {
    let parse_err = |message: String| Error::Parse {
        file: file.to_owned(),
        line: line_no,
        message,
    };
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| parse_err(format!("malformed JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse_err("expected a JSON object".to_owned()))?;
    if let Some(missing) = required.iter().find(|f| !obj.contains_key(**f)) {
        return Err(parse_err(format!("missing field {missing}")));
    }
    let mut de = serde_json::Deserializer::from_str(line);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        parse_err(format!("field {path}: {}", e.inner()))
    })
}

fn for_each_line<R: BufRead>(
    reader: R,
    file: &str,
    mut f: impl FnMut(usize, &str) -> Result<()>,
) -> Result<()> {
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(file, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        f(i + 1, trimmed)?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Load a manifest file, preserving line order.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<VideoRecord>> {
    let path = path.as_ref();
    read_manifest(open(path)?, &file_label(path))
}

pub fn read_manifest<R: BufRead>(reader: R, file: &str) -> Result<Vec<VideoRecord>> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for_each_line(reader, file, |line_no, line| {
        let rec: VideoRecord = parse_line(
            file,
            line_no,
            line,
            &["id", "duration_s", "file_size_bytes", "title", "user_tags"],
        )?;
        if rec.id.is_empty() {
            return Err(Error::Parse {
                file: file.to_owned(),
                line: line_no,
                message: "field id: empty".into(),
            });
        }
        if !ids.insert(rec.id.clone()) {
            return Err(Error::Parse {
                file: file.to_owned(),
                line: line_no,
                message: format!("duplicate id {}", rec.id),
            });
        }
        records.push(rec);
        Ok(())
    })?;
    Ok(records)
}

#[derive(Deserialize)]
struct ScoresLine {
    video_id: String,
    #[serde(deserialize_with = "unique_scores")]
    scores: BTreeMap<String, f64>,
}

fn unique_scores<'de, D>(de: D) -> std::result::Result<BTreeMap<String, f64>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    struct V;
    impl<'de> serde::de::Visitor<'de> for V {
        type Value = BTreeMap<String, f64>;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a map of label to score")
        }

        fn visit_map<A: serde::de::MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
            let mut out = BTreeMap::new();
            while let Some((k, v)) = map.next_entry::<String, f64>()? {
                if out.insert(k.clone(), v).is_some() {
                    return Err(serde::de::Error::custom(format!("duplicate label {k:?}")));
                }
            }
            Ok(out)
        }
    }
    de.deserialize_map(V)
}

#[derive(Serialize, Deserialize)]
struct SimLine {
    source: String,
    target: String,
    sim: f64,
}

pub fn load_label_similarity(path: impl AsRef<Path>) -> Result<LabelSimilarity> {
    let path = path.as_ref();
    let file = file_label(path);
    let mut sim = LabelSimilarity::default();
    for_each_line(open(path)?, &file, |line_no, line| {
        let l: SimLine = parse_line(&file, line_no, line, &["source", "target", "sim"])?;
        sim.insert(l.source, l.target, l.sim).map_err(|e| Error::Parse {
            file: file.clone(),
            line: line_no,
            message: match e {
                Error::Invalid(m) => m,
                other => other.to_string(),
            },
        })
    })?;
    Ok(sim)
}

/// Load whichever sidecar files exist in `dir`, validating every record and
/// every cross-reference against the manifest.
pub fn load_sidecars(dir: impl AsRef<Path>, manifest: &[VideoRecord]) -> Result<SidecarBundle> {
    let dir = dir.as_ref();
    let known: HashSet<&str> = manifest.iter().map(|r| r.id.as_str()).collect();
    let check_known = |file: &str, id: &str| -> Result<()> {
        if known.contains(id) {
            Ok(())
        } else {
            Err(Error::UnknownVideo {
                file: file.to_owned(),
                video_id: id.to_owned(),
            })
        }
    };
    let mut bundle = SidecarBundle::default();

    let path = dir.join(FRAMES_FILE);
    if path.exists() {
        for_each_line(open(&path)?, FRAMES_FILE, |line_no, line| {
            let f: FrameRecord = parse_line(
                FRAMES_FILE,
                line_no,
                line,
                &["video_id", "frame_index", "frame_w", "frame_h", "face_boxes", "ocr_char_count"],
            )?;
            check_known(FRAMES_FILE, &f.video_id)?;
            f.validate()?;
            let list = bundle.frames.entry(f.video_id.clone()).or_default();
            if let Some(prev) = list.last() {
                if f.frame_index <= prev.frame_index {
                    return Err(Error::invalid(format!(
                        "video {} frame {}: frame_index not strictly increasing",
                        f.video_id, f.frame_index
                    )));
                }
            }
            list.push(f);
            Ok(())
        })?;
    }

    for dim in Dimension::ALL {
        let name = labels_file(dim);
        let path = dir.join(&name);
        if !path.exists() {
            continue;
        }
        for_each_line(open(&path)?, &name, |line_no, line| {
            let l: ScoresLine = parse_line(&name, line_no, line, &["video_id", "scores"])?;
            check_known(&name, &l.video_id)?;
            let set = LabelScoreSet {
                video_id: l.video_id,
                dimension: dim,
                scores: l.scores,
            };
            set.validate()?;
            let key = (set.video_id.clone(), dim);
            if bundle.label_scores.contains_key(&key) {
                return Err(Error::invalid(format!(
                    "{name}: video {} listed twice",
                    set.video_id
                )));
            }
            bundle.label_scores.insert(key, set);
            Ok(())
        })?;
    }

    let path = dir.join(FEATURES_FILE);
    if path.exists() {
        let mut width = None;
        for_each_line(open(&path)?, FEATURES_FILE, |line_no, line| {
            let f: FeatureVector = parse_line(FEATURES_FILE, line_no, line, &["video_id", "values"])?;
            check_known(FEATURES_FILE, &f.video_id)?;
            f.validate()?;
            match width {
                None => width = Some(f.values.len()),
                Some(d) if d != f.values.len() => {
                    return Err(Error::invalid(format!(
                        "video {}: feature dimension {} differs from {d}",
                        f.video_id,
                        f.values.len()
                    )))
                }
                _ => {}
            }
            if bundle.features.insert(f.video_id.clone(), f).is_some() {
                return Err(Error::invalid(format!("{FEATURES_FILE}: line {line_no}: video listed twice")));
            }
            Ok(())
        })?;
    }

    let path = dir.join(TITLE_TOKENS_FILE);
    if path.exists() {
        for_each_line(open(&path)?, TITLE_TOKENS_FILE, |line_no, line| {
            let t: TitleTokenization = parse_line(TITLE_TOKENS_FILE, line_no, line, &["video_id", "tokens"])?;
            check_known(TITLE_TOKENS_FILE, &t.video_id)?;
            t.validate()?;
            if bundle.title_tokens.insert(t.video_id.clone(), t).is_some() {
                return Err(Error::invalid(format!(
                    "{TITLE_TOKENS_FILE}: line {line_no}: video listed twice"
                )));
            }
            Ok(())
        })?;
    }

    let path = dir.join(LABEL_SIM_FILE);
    if path.exists() {
        bundle.similarity = Some(load_label_similarity(&path)?);
    }

    Ok(bundle)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: impl IntoIterator<Item = T>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a whole JSONL file of one record type.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = file_label(path);
    let mut out = Vec::new();
    for_each_line(open(path)?, &file, |line_no, line| {
        out.push(parse_line(&file, line_no, line, &[])?);
        Ok(())
    })?;
    Ok(out)
}

pub fn save_manifest(path: impl AsRef<Path>, records: &[VideoRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// Write every non-empty part of a bundle in the layout `load_sidecars`
/// reads. Empty maps produce no file.
pub fn save_sidecars(bundle: &SidecarBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if !bundle.frames.is_empty() {
        write_jsonl(dir.join(FRAMES_FILE), bundle.frames.values().flatten())?;
    }
    for dim in Dimension::ALL {
        let sets: Vec<_> = bundle
            .label_scores
            .values()
            .filter(|s| s.dimension == dim)
            .map(|s| serde_json::json!({"video_id": s.video_id, "scores": s.scores}))
            .collect();
        if !sets.is_empty() {
            write_jsonl(dir.join(labels_file(dim)), sets)?;
        }
    }
    if !bundle.features.is_empty() {
        write_jsonl(dir.join(FEATURES_FILE), bundle.features.values())?;
    }
    if !bundle.title_tokens.is_empty() {
        write_jsonl(dir.join(TITLE_TOKENS_FILE), bundle.title_tokens.values())?;
    }
    if let Some(sim) = &bundle.similarity {
        write_jsonl(
            dir.join(LABEL_SIM_FILE),
            sim.iter().map(|(s, t, v)| SimLine {
                source: s.to_owned(),
                target: t.to_owned(),
                sim: v,
            }),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn manifest(text: &str) -> Result<Vec<VideoRecord>> {
        read_manifest(Cursor::new(text), MANIFEST_FILE)
    }

    const GOOD: &str = r#"{"id":"a","duration_s":12.5,"file_size_bytes":100,"title":"吃火锅","user_tags":["美食"]}
{"id":"b","duration_s":30,"file_size_bytes":200,"title":"t","user_tags":[],"channel":"c"}
{"id":"c","duration_s":61,"file_size_bytes":300,"title":"x","user_tags":["猫"],"upload_ts":1600000000}
"#;

    #[test]
    fn manifest_lines_in_order() {
        let recs = manifest(GOOD).unwrap();
        let ids: Vec<_> = recs.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(recs[1].channel.as_deref(), Some("c"));
    }

    #[test]
    fn manifest_missing_id_names_line_and_field() {
        let text = "{\"id\":\"a\",\"duration_s\":1,\"file_size_bytes\":1,\"title\":\"t\",\"user_tags\":[]}\n\
                    {\"duration_s\":1,\"file_size_bytes\":1,\"title\":\"t\",\"user_tags\":[]}\n";
        let err = manifest(text).unwrap_err();
        assert!(err.to_string().ends_with("line 2: missing field id"), "{err}");
    }

    #[test]
    fn manifest_bad_type_names_field() {
        let text = "{\"id\":\"a\",\"duration_s\":\"long\",\"file_size_bytes\":1,\"title\":\"t\",\"user_tags\":[]}\n";
        let err = manifest(text).unwrap_err().to_string();
        assert!(err.contains("line 1: field duration_s"), "{err}");
    }

    #[test]
    fn manifest_duplicate_id_is_error() {
        let line = "{\"id\":\"a\",\"duration_s\":1,\"file_size_bytes\":1,\"title\":\"t\",\"user_tags\":[]}\n";
        let err = manifest(&format!("{line}{line}")).unwrap_err();
        assert!(err.to_string().contains("duplicate id a"));
    }

    #[test]
    fn empty_manifest_is_empty() {
        assert!(manifest("").unwrap().is_empty());
    }

    #[test]
    fn duplicate_label_rejected() {
        let err = parse_line::<ScoresLine>("labels.object.jsonl", 1, r#"{"video_id":"a","scores":{"x":1,"x":2}}"#, &[])
            .err()
            .unwrap();
        assert!(err.to_string().contains("duplicate label"));
    }

    #[test]
    fn similarity_range_checked() {
        let mut s = LabelSimilarity::default();
        assert!(s.insert("a", "b", 1.2).is_err());
        assert!(s.insert("a", "b", 1.0).is_ok());
        assert_eq!(s.get("a", "b"), Some(1.0));
        assert_eq!(s.get("b", "a"), None);
    }
}
