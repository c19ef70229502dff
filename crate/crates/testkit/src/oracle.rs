use std::collections::{BTreeMap, BTreeSet};

/// Average precision from the rank of each relevant item, computed by
/// counting instead of sorting.
pub fn average_precision(items: &[(String, f64)], relevant: &[String]) -> f64 {
    let rank_of = |label: &str, score: f64| {
        1 + items
            .iter()
            .filter(|(l, s)| *s > score || (*s == score && l.as_str() < label))
            .count()
    };
    let relevant: BTreeSet<&String> = relevant.iter().collect();
    let ranks: Vec<usize> = items
        .iter()
        .filter(|(l, _)| relevant.contains(l))
        .map(|(l, s)| rank_of(l, *s))
        .collect();
    let mut total = 0.0;
    for &r in &ranks {
        let hits_within = ranks.iter().filter(|&&o| o <= r).count();
        total += hits_within as f64 / r as f64;
    }
    total / relevant.len() as f64
}

pub fn mean_ap(per_video: &[(Vec<(String, f64)>, Vec<String>)]) -> f64 {
    let sum: f64 = per_video
        .iter()
        .map(|(items, rel)| average_precision(items, rel))
        .sum();
    sum / per_video.len() as f64
}

/// 1-based position of `truth` after fully sorting the row.
pub fn retrieval_rank(video_ids: &[String], row: &[f64], truth: &str) -> usize {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap()
            .then(video_ids[a].cmp(&video_ids[b]))
    });
    1 + order
        .iter()
        .position(|&i| video_ids[i] == truth)
        .expect("truth video present")
}

/// Percent of queries whose truth video ranks within each cutoff.
pub fn recall(ranks: &[usize], cutoffs: &[usize]) -> Vec<f64> {
    cutoffs
        .iter()
        .map(|&n| {
            let hits = ranks.iter().filter(|&&r| r <= n).count();
            hits as f64 * 100.0 / ranks.len() as f64
        })
        .collect()
}

fn grams(tokens: &[String], n: usize) -> Vec<String> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n)
        .map(|i| tokens[i..i + n].join("\u{1}"))
        .collect()
}

fn occurrences(list: &[String], g: &str) -> usize {
    list.iter().filter(|x| x.as_str() == g).count()
}

/// Corpus BLEU-4, unsmoothed.
pub fn bleu4(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let mut product = 1.0;
    for n in 1..=4 {
        let (mut clipped, mut total) = (0usize, 0usize);
        for (h, r) in hyps.iter().zip(refs) {
            let hg = grams(h, n);
            let rg = grams(r, n);
            let distinct: BTreeSet<&String> = hg.iter().collect();
            for g in distinct {
                clipped += occurrences(&hg, g).min(occurrences(&rg, g));
            }
            total += hg.len();
        }
        if clipped == 0 {
            return 0.0;
        }
        product *= clipped as f64 / total as f64;
    }
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    let bp = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    bp * product.powf(0.25)
}

fn chunks(pairs: &[(usize, usize)]) -> usize {
    let mut sorted = pairs.to_vec();
    sorted.sort();
    let mut count = 0;
    for (i, &(h, r)) in sorted.iter().enumerate() {
        if i == 0 || sorted[i - 1] != (h - 1, r.wrapping_sub(1)) {
            count += 1;
        }
    }
    count
}

fn enumerate(
    hyp: &[String],
    reference: &[String],
    pos: usize,
    used: &mut Vec<bool>,
    pairs: &mut Vec<(usize, usize)>,
    best: &mut (usize, usize),
) {
    if pos == hyp.len() {
        let m = pairs.len();
        let ch = chunks(pairs);
        if m > best.0 || (m == best.0 && ch < best.1) {
            *best = (m, ch);
        }
        return;
    }
    enumerate(hyp, reference, pos + 1, used, pairs, best);
    for j in 0..reference.len() {
        if !used[j] && reference[j] == hyp[pos] {
            used[j] = true;
            pairs.push((pos, j));
            enumerate(hyp, reference, pos + 1, used, pairs, best);
            pairs.pop();
            used[j] = false;
        }
    }
}

/// Exact-match METEOR by enumerating every alignment.
pub fn meteor_pair(hyp: &[String], reference: &[String]) -> f64 {
    let mut best = (0, usize::MAX);
    enumerate(
        hyp,
        reference,
        0,
        &mut vec![false; reference.len()],
        &mut Vec::new(),
        &mut best,
    );
    let (m, ch) = best;
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / hyp.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    let frag = ch as f64 / m as f64;
    f * (1.0 - 0.5 * frag * frag * frag)
}

pub fn meteor(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let sum: f64 = hyps.iter().zip(refs).map(|(h, r)| meteor_pair(h, r)).sum();
    sum / hyps.len() as f64
}

/// Vanilla CIDEr ×10 over dense TF-IDF vectors. Grams absent from every
/// reference get document frequency 1.
pub fn cider(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let n_items = refs.len() as f64;
    let mut per_item = vec![0.0; hyps.len()];
    for n in 1..=4 {
        let mut vocab: BTreeMap<String, usize> = BTreeMap::new();
        for cap in hyps.iter().chain(refs) {
            for g in grams(cap, n) {
                let next = vocab.len();
                vocab.entry(g).or_insert(next);
            }
        }
        let mut idf = vec![0.0; vocab.len()];
        for (g, &i) in &vocab {
            let df = refs.iter().filter(|r| grams(r, n).contains(g)).count();
            idf[i] = (n_items / df.max(1) as f64).ln();
        }
        let vector = |cap: &[String]| {
            let mut v = vec![0.0; vocab.len()];
            for g in grams(cap, n) {
                v[vocab[&g]] += 1.0;
            }
            for (x, w) in v.iter_mut().zip(&idf) {
                *x *= w;
            }
            v
        };
        for i in 0..hyps.len() {
            let a = vector(&hyps[i]);
            let b = vector(&refs[i]);
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na > 0.0 && nb > 0.0 {
                per_item[i] += dot / (na * nb) / 4.0;
            }
        }
    }
    10.0 * per_item.iter().sum::<f64>() / n_items
}

/// Indices of the `k` most cosine-similar vectors to `query`, excluding the
/// query itself; ties by ascending id.
pub fn knn(ids: &[String], vectors: &[Vec<f64>], query: usize, k: usize) -> Vec<String> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (norm(a) * norm(b))
    };
    let mut scored: Vec<(f64, &String)> = (0..ids.len())
        .filter(|&i| i != query)
        .map(|i| (cos(&vectors[query], &vectors[i]), &ids[i]))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
    scored.into_iter().take(k).map(|(_, id)| id.clone()).collect()
}
