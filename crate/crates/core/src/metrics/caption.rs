//! Corpus BLEU-4, exact-match METEOR and vanilla CIDEr over word-segmented
//! captions with one reference per hypothesis.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentedCaption {
    pub raw: String,
    pub tokens: Vec<String>,
}

impl SegmentedCaption {
    /// Caption with caller-supplied segmentation.
    pub fn new(raw: impl Into<String>, tokens: Vec<String>) -> Self {
        SegmentedCaption {
            raw: raw.into(),
            tokens,
        }
    }

    /// Caption segmented by [`segment`].
    pub fn from_raw(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = segment(&raw);
        SegmentedCaption { raw, tokens }
    }
}

fn is_han(c: char) -> bool {
    matches!(c as u32, 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x3134F)
}

/// Fallback word segmentation: whitespace split when the text contains an
/// ASCII space, otherwise one token per Han character with runs of other
/// characters kept together.
pub fn segment(raw: &str) -> Vec<String> {
    if raw.contains(' ') {
        return raw.split_whitespace().map(str::to_owned).collect();
    }
    let mut out = Vec::new();
    let mut run = String::new();
    for c in raw.chars() {
        if is_han(c) || c.is_whitespace() {
            if !run.is_empty() {
                out.push(std::mem::take(&mut run));
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        } else {
            run.push(c);
        }
    }
    if !run.is_empty() {
        out.push(run);
    }
    out
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn check_pairs(hyps: &[SegmentedCaption], refs: &[SegmentedCaption]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Empty("no captions".into()));
    }
    Ok(())
}

/// Corpus-level BLEU-4 with uniform weights. Without smoothing any zero
/// n-gram precision makes the score 0; with smoothing every precision is
/// `(matches + 1) / (total + 1)`.
pub fn bleu4(hyps: &[SegmentedCaption], refs: &[SegmentedCaption], smoothing: bool) -> Result<f64> {
    check_pairs(hyps, refs)?;
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        if h.tokens.is_empty() && r.tokens.is_empty() {
            return Err(Error::invalid(format!("caption pair {i}: both sides empty")));
        }
        hyp_len += h.tokens.len();
        ref_len += r.tokens.len();
        for n in 1..=4 {
            let hc = ngram_counts(&h.tokens, n);
            let rc = ngram_counts(&r.tokens, n);
            for (g, c) in &hc {
                matched[n - 1] += (*c).min(rc.get(g).copied().unwrap_or(0));
                total[n - 1] += c;
            }
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let p = if smoothing {
            (matched[n] + 1) as f64 / (total[n] + 1) as f64
        } else if matched[n] == 0 {
            return Ok(0.0);
        } else {
            matched[n] as f64 / total[n] as f64
        };
        log_sum += p.ln();
    }
    let bp = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok(bp * (log_sum / 4.0).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeteorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        MeteorParams {
            alpha: 0.9,
            beta: 3.0,
            gamma: 0.5,
        }
    }
}

/// Ambiguous reference positions beyond this are aligned greedily.
const MAX_EXACT_ALIGNMENT_BITS: usize = 24;

const NO_PREV: usize = usize::MAX;

/// Exact unigram alignment with the most matches and, among those, the
/// fewest chunks. Returns `(matches, chunks)`.
///
/// Chunks equal matches minus the number of hypothesis neighbours that are
/// aligned to reference neighbours, so the search maximises those links.
/// Words occurring once on both sides are aligned directly; only repeated
/// words are searched, with their reference positions tracked as a bitmask.
fn align(hyp: &[String], reference: &[String]) -> (usize, usize) {
    let mut ref_pos: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, w) in reference.iter().enumerate() {
        ref_pos.entry(w.as_str()).or_default().push(j);
    }
    let mut hyp_count: HashMap<&str, usize> = HashMap::new();
    for w in hyp {
        *hyp_count.entry(w.as_str()).or_default() += 1;
    }
    let need = |w: &str| hyp_count[w].min(ref_pos.get(w).map_or(0, Vec::len));
    let matches: usize = hyp_count.keys().map(|w| need(w)).sum();
    if matches == 0 {
        return (0, 0);
    }

    // Bit assignment for reference positions of repeated words.
    let mut bit_of = vec![usize::MAX; reference.len()];
    let mut bits = 0usize;
    for (w, positions) in &ref_pos {
        if hyp_count.get(w).copied().unwrap_or(0) > 1 || positions.len() > 1 {
            for &j in positions {
                bit_of[j] = bits;
                bits += 1;
            }
        }
    }
    if bits > MAX_EXACT_ALIGNMENT_BITS {
        return (matches, matches - greedy_links(hyp, &ref_pos, &need));
    }

    // Occurrences of hyp[i]'s word strictly after i.
    let mut after = vec![0usize; hyp.len()];
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for i in (0..hyp.len()).rev() {
        let c = seen.entry(hyp[i].as_str()).or_default();
        after[i] = *c;
        *c += 1;
    }

    let search = Search {
        hyp,
        ref_pos: &ref_pos,
        bit_of: &bit_of,
        after: &after,
        need: &need,
        memo: HashMap::new(),
    };
    let links = search.run();
    (matches, matches - links)
}

struct Search<'a, F: Fn(&str) -> usize> {
    hyp: &'a [String],
    ref_pos: &'a HashMap<&'a str, Vec<usize>>,
    bit_of: &'a [usize],
    after: &'a [usize],
    need: &'a F,
    memo: HashMap<(usize, u64, usize), Option<usize>>,
}

impl<F: Fn(&str) -> usize> Search<'_, F> {
    fn run(mut self) -> usize {
        self.best(0, 0, NO_PREV).expect("a maximal alignment exists")
    }

    fn best(&mut self, i: usize, mask: u64, prev: usize) -> Option<usize> {
        if i == self.hyp.len() {
            return Some(0);
        }
        if let Some(&v) = self.memo.get(&(i, mask, prev)) {
            return v;
        }
        let w = self.hyp[i].as_str();
        let positions: &[usize] = self.ref_pos.get(w).map_or(&[], Vec::as_slice);
        let link = |j: usize| usize::from(prev != NO_PREV && prev + 1 == j);
        let result = if positions.is_empty() {
            self.best(i + 1, mask, NO_PREV)
        } else if self.bit_of[positions[0]] == usize::MAX {
            let j = positions[0];
            self.best(i + 1, mask, j).map(|v| v + link(j))
        } else {
            let used = positions
                .iter()
                .filter(|&&j| mask & (1 << self.bit_of[j]) != 0)
                .count();
            let need = (self.need)(w);
            let mut best = None;
            if used + self.after[i] >= need {
                best = self.best(i + 1, mask, NO_PREV);
            }
            if used < need {
                for &j in positions {
                    let bit = 1u64 << self.bit_of[j];
                    if mask & bit != 0 {
                        continue;
                    }
                    if let Some(v) = self.best(i + 1, mask | bit, j) {
                        let v = v + link(j);
                        best = Some(best.map_or(v, |b: usize| b.max(v)));
                    }
                }
            }
            best
        };
        self.memo.insert((i, mask, prev), result);
        result
    }
}

// Left-to-right alignment preferring to continue the current chunk.
fn greedy_links(hyp: &[String], ref_pos: &HashMap<&str, Vec<usize>>, need: &dyn Fn(&str) -> usize) -> usize {
    let mut used = HashSet::new();
    let mut matched: HashMap<&str, usize> = HashMap::new();
    let mut prev = NO_PREV;
    let mut links = 0;
    for w in hyp {
        let w = w.as_str();
        let done = matched.get(w).copied().unwrap_or(0);
        let free: Vec<usize> = ref_pos
            .get(w)
            .map(|p| p.iter().copied().filter(|j| !used.contains(j)).collect())
            .unwrap_or_default();
        if done >= need(w) || free.is_empty() {
            prev = NO_PREV;
            continue;
        }
        let j = free
            .iter()
            .copied()
            .find(|&j| prev != NO_PREV && j == prev + 1)
            .unwrap_or(free[0]);
        if prev != NO_PREV && j == prev + 1 {
            links += 1;
        }
        used.insert(j);
        *matched.entry(w).or_default() += 1;
        prev = j;
    }
    links
}

/// Exact-match METEOR of one hypothesis against its reference.
pub fn meteor_pair(hyp: &SegmentedCaption, reference: &SegmentedCaption, params: MeteorParams) -> Result<f64> {
    if hyp.tokens.is_empty() || reference.tokens.is_empty() {
        return Err(Error::invalid("METEOR needs nonempty captions"));
    }
    let (m, chunks) = align(&hyp.tokens, &reference.tokens);
    if m == 0 {
        return Ok(0.0);
    }
    let m_f = m as f64;
    let precision = m_f / hyp.tokens.len() as f64;
    let recall = m_f / reference.tokens.len() as f64;
    let f_mean = precision * recall / (params.alpha * precision + (1.0 - params.alpha) * recall);
    let penalty = params.gamma * (chunks as f64 / m_f).powf(params.beta);
    Ok(f_mean * (1.0 - penalty))
}

/// Mean exact-match METEOR over caption pairs.
pub fn meteor_exact(hyps: &[SegmentedCaption], refs: &[SegmentedCaption], params: MeteorParams) -> Result<f64> {
    check_pairs(hyps, refs)?;
    let total = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| meteor_pair(h, r, params))
        .sum::<Result<f64>>()?;
    Ok(total / hyps.len() as f64)
}

type TfIdf<'a> = HashMap<&'a [String], f64>;

fn cosine(a: &TfIdf<'_>, b: &TfIdf<'_>) -> f64 {
    let norm = |v: &TfIdf<'_>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a
        .iter()
        .filter_map(|(g, x)| b.get(g).map(|y| x * y))
        .sum();
    dot / (na * nb)
}

/// Vanilla CIDEr (×10) with one reference per item. Document frequencies
/// count reference items containing an n-gram; n-grams never seen in a
/// reference take the maximal IDF `ln(N)`.
pub fn cider<'a>(hyps: &'a [SegmentedCaption], refs: &'a [SegmentedCaption]) -> Result<f64> {
    check_pairs(hyps, refs)?;
    if hyps.len() < 2 {
        return Err(Error::invalid("CIDEr needs at least two items for IDF"));
    }
    let n_items = refs.len() as f64;
    let mut per_item = vec![0.0; hyps.len()];
    for n in 1..=4 {
        let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(&r.tokens, n)).collect();
        let hyp_counts: Vec<_> = hyps.iter().map(|h| ngram_counts(&h.tokens, n)).collect();
        let mut df: HashMap<&[String], usize> = HashMap::new();
        for rc in &ref_counts {
            for g in rc.keys() {
                *df.entry(*g).or_default() += 1;
            }
        }
        let weigh = |counts: &HashMap<&'a [String], usize>| -> TfIdf<'a> {
            counts
                .iter()
                .map(|(g, &c)| {
                    let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
                    (*g, c as f64 * (n_items / d).ln())
                })
                .collect()
        };
        for (i, (hc, rc)) in hyp_counts.iter().zip(&ref_counts).enumerate() {
            per_item[i] += cosine(&weigh(hc), &weigh(rc)) / 4.0;
        }
    }
    Ok(10.0 * per_item.iter().sum::<f64>() / n_items)
}

/// Mean of BLEU-4, METEOR and CIDEr already on the reporting scale.
pub fn caption_overall(bleu4: f64, meteor: f64, cider_scaled: f64) -> f64 {
    (bleu4 + meteor + cider_scaled) / 3.0
}

/// Caption scores on both scales: raw (BLEU/METEOR in `[0,1]`, CIDEr on its
/// 0–10 scale) and reporting (BLEU/METEOR ×100, CIDEr ×10).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionScores {
    pub raw: BTreeMap<String, f64>,
    pub scaled: BTreeMap<String, f64>,
    pub overall: f64,
}

impl CaptionScores {
    pub fn compute(hyps: &[SegmentedCaption], refs: &[SegmentedCaption], smoothing: bool) -> Result<Self> {
        let b = bleu4(hyps, refs, smoothing)?;
        let m = meteor_exact(hyps, refs, MeteorParams::default())?;
        let c = cider(hyps, refs)?;
        let raw = BTreeMap::from([
            ("BLEU4".to_owned(), b),
            ("METEOR".to_owned(), m),
            ("CIDEr".to_owned(), c),
        ]);
        let scaled = BTreeMap::from([
            ("BLEU4".to_owned(), b * 100.0),
            ("METEOR".to_owned(), m * 100.0),
            ("CIDEr".to_owned(), c * 10.0),
        ]);
        let overall = caption_overall(b * 100.0, m * 100.0, c * 10.0);
        Ok(CaptionScores { raw, scaled, overall })
    }
}
