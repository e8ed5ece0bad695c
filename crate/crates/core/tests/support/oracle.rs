//! Brute-force reference implementations. Deliberately naive and kept free of
//! any code from the crate under test.

pub const HEADER_LABELS: [&str; 20] = [
    "history of present illness",
    "review of systems",
    "past medical history",
    "medications",
    "chief complaint",
    "past surgical history",
    "disposition",
    "diagnosis",
    "emergency department course",
    "plan",
    "labs",
    "assessment",
    "allergy",
    "gynecologic history",
    "exam",
    "other history",
    "procedures",
    "imaging",
    "immunizations",
    "family history/social history",
];

/// Textbook full-matrix edit distance over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + sub);
        }
    }
    d[a.len()][b.len()]
}

pub fn normalize(s: &str) -> String {
    let mut out = String::new();
    let mut pending_space = false;
    for c in s.chars() {
        if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(c.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

pub fn similarity(a: &str, b: &str) -> f64 {
    let m = a.chars().count().max(b.chars().count());
    if m == 0 {
        1.0
    } else {
        1.0 - levenshtein(a, b) as f64 / m as f64
    }
}

/// Index into [`HEADER_LABELS`] of the most similar label; first wins on ties.
pub fn nearest_header(raw: &str) -> usize {
    let key = normalize(raw);
    let mut best = 0;
    let mut best_sim = f64::MIN;
    for (i, label) in HEADER_LABELS.iter().enumerate() {
        let s = similarity(&key, &normalize(label));
        if s > best_sim {
            best = i;
            best_sim = s;
        }
    }
    best
}

/// Text after the final colon (if anything follows it), minus trailing punctuation.
pub fn heading_candidate(response: &str) -> String {
    let mut tail = response;
    if let Some(idx) = response.rfind(':') {
        if !response[idx + 1..].trim().is_empty() {
            tail = &response[idx + 1..];
        }
    }
    let mut s = tail.trim().to_string();
    while s.ends_with(|c: char| c.is_ascii_punctuation() || c.is_whitespace()) {
        s.pop();
    }
    if s.is_empty() {
        response.to_string()
    } else {
        s
    }
}

// ---- n-gram metrics ----

fn ngrams(tokens: &[&str], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            out.push(tokens[i..i + n].iter().map(|s| s.to_string()).collect());
        }
    }
    out
}

fn count_in(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct(list: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut seen: Vec<Vec<String>> = Vec::new();
    for g in list {
        if !seen.contains(g) {
            seen.push(g.clone());
        }
    }
    seen
}

/// (precision, recall, f1)
pub fn prf(matches: f64, cand_total: f64, ref_total: f64) -> (f64, f64, f64) {
    let p = if cand_total > 0.0 { matches / cand_total } else { 0.0 };
    let r = if ref_total > 0.0 { matches / ref_total } else { 0.0 };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

pub fn rouge_n(cand: &[&str], reference: &[&str], n: usize) -> (f64, f64, f64) {
    let c = ngrams(cand, n);
    let r = ngrams(reference, n);
    let mut m = 0;
    for g in distinct(&c) {
        m += count_in(&c, &g).min(count_in(&r, &g));
    }
    prf(m as f64, c.len() as f64, r.len() as f64)
}

/// LCS length by memoized recursion on suffixes.
pub fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    fn go(a: &[&str], b: &[&str], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len()]; a.len()];
    go(a, b, 0, 0, &mut memo)
}

pub fn rouge_l(cand: &[&str], reference: &[&str]) -> (f64, f64, f64) {
    prf(lcs_len(cand, reference) as f64, cand.len() as f64, reference.len() as f64)
}

/// Reference indices picked by the standard LCS backtrack
/// (match, else move along the candidate when its cell is strictly larger).
fn lcs_ref_hits(reference: &[&str], cand: &[&str]) -> Vec<usize> {
    let (m, n) = (reference.len(), cand.len());
    let mut t = vec![vec![0usize; n + 1]; m + 1];
    for i in 0..m {
        for j in 0..n {
            t[i + 1][j + 1] = if reference[i] == cand[j] {
                t[i][j] + 1
            } else {
                t[i][j + 1].max(t[i + 1][j])
            };
        }
    }
    let mut hits = Vec::new();
    let (mut i, mut j) = (m, n);
    while i > 0 && j > 0 {
        if reference[i - 1] == cand[j - 1] {
            hits.push(i - 1);
            i -= 1;
            j -= 1;
        } else if t[i][j - 1] > t[i - 1][j] {
            j -= 1;
        } else {
            i -= 1;
        }
    }
    hits
}

/// Summary-level union LCS with per-token clipping on both sides.
pub fn rouge_lsum(cand: &[Vec<&str>], reference: &[Vec<&str>]) -> (f64, f64, f64) {
    let cand_flat: Vec<&str> = cand.iter().flatten().copied().collect();
    let ref_flat: Vec<&str> = reference.iter().flatten().copied().collect();
    let mut cand_left: Vec<(&str, usize)> = Vec::new();
    let mut ref_left: Vec<(&str, usize)> = Vec::new();
    for (list, src) in [(&mut cand_left, &cand_flat), (&mut ref_left, &ref_flat)] {
        for t in src.iter() {
            match list.iter_mut().find(|(k, _)| k == t) {
                Some(e) => e.1 += 1,
                None => list.push((t, 1)),
            }
        }
    }
    let mut matches = 0usize;
    for r in reference {
        let mut union: Vec<usize> = Vec::new();
        for c in cand {
            for h in lcs_ref_hits(r, c) {
                if !union.contains(&h) {
                    union.push(h);
                }
            }
        }
        union.sort();
        for h in union {
            let tok = r[h];
            let ci = cand_left.iter().position(|(k, _)| *k == tok);
            let ri = ref_left.iter().position(|(k, _)| *k == tok);
            if let (Some(ci), Some(ri)) = (ci, ri) {
                if cand_left[ci].1 > 0 && ref_left[ri].1 > 0 {
                    cand_left[ci].1 -= 1;
                    ref_left[ri].1 -= 1;
                    matches += 1;
                }
            }
        }
    }
    prf(matches as f64, cand_flat.len() as f64, ref_flat.len() as f64)
}

/// Corpus BLEU straight from the formula. `eps = None` means no smoothing.
pub fn corpus_bleu(cands: &[Vec<&str>], refs: &[Vec<Vec<&str>>], max_n: usize, eps: Option<f64>) -> f64 {
    let mut c_len = 0usize;
    let mut r_len = 0usize;
    let mut p = Vec::new();
    for (cand, rs) in cands.iter().zip(refs) {
        c_len += cand.len();
        let mut best: Option<usize> = None;
        for r in rs {
            best = Some(match best {
                None => r.len(),
                Some(b) => {
                    let (db, dr) = (b.abs_diff(cand.len()), r.len().abs_diff(cand.len()));
                    if dr < db || (dr == db && r.len() < b) {
                        r.len()
                    } else {
                        b
                    }
                }
            });
        }
        r_len += best.unwrap_or(0);
    }
    for n in 1..=max_n {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (cand, rs) in cands.iter().zip(refs) {
            let cg = ngrams(cand, n);
            total += cg.len();
            for g in distinct(&cg) {
                let max_ref = rs.iter().map(|r| count_in(&ngrams(r, n), &g)).max().unwrap_or(0);
                matched += count_in(&cg, &g).min(max_ref);
            }
        }
        p.push((matched, total));
    }
    if c_len == 0 {
        return 0.0;
    }
    let mut precisions = Vec::new();
    for (m, t) in p {
        match eps {
            None => {
                if m == 0 {
                    return 0.0;
                }
                precisions.push(m as f64 / t as f64);
            }
            Some(e) => {
                if t == 0 {
                    precisions.push(e);
                } else if m == 0 {
                    precisions.push(e / t as f64);
                } else {
                    precisions.push(m as f64 / t as f64);
                }
            }
        }
    }
    let geo = (precisions.iter().map(|x| x.ln()).sum::<f64>() / max_n as f64).exp();
    let bp = if c_len < r_len { (1.0 - r_len as f64 / c_len as f64).exp() } else { 1.0 };
    bp * geo
}

// ---- concept extraction ----

fn alnum(c: char) -> bool {
    c.is_alphanumeric()
}

/// Lowercases and turns each whitespace run into one space, without trimming.
fn squash(s: &str) -> String {
    let mut out = String::new();
    let mut in_ws = false;
    for c in s.chars() {
        if c.is_whitespace() {
            if !in_ws {
                out.push(' ');
            }
            in_ws = true;
        } else {
            in_ws = false;
            out.extend(c.to_lowercase());
        }
    }
    out
}

/// (surface index, start, end) chosen greedily from every qualifying span.
pub fn extract(text: &str, surfaces: &[String]) -> Vec<(usize, usize, usize)> {
    let keys: Vec<String> = surfaces.iter().map(|s| squash(s.trim())).collect();
    let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).chain([text.len()]).collect();
    let char_at = |i: usize| text[i..].chars().next();
    let char_before = |i: usize| text[..i].chars().next_back();
    let boundary = |i: usize| match (char_before(i), char_at(i)) {
        (None, Some(_)) | (Some(_), None) => true,
        (Some(a), Some(b)) => alnum(a) != alnum(b),
        (None, None) => false,
    };
    let mut out = Vec::new();
    let mut k = 0;
    while k + 1 < bounds.len() {
        let s = bounds[k];
        let mut best: Option<(usize, usize)> = None;
        if boundary(s) {
            for &e in &bounds[k + 1..] {
                if !boundary(e) {
                    continue;
                }
                let span = squash(&text[s..e]);
                if let Some(idx) = keys.iter().position(|key| *key == span) {
                    if best.is_none_or(|(_, be)| e > be) {
                        best = Some((idx, e));
                    }
                }
            }
        }
        match best {
            Some((idx, e)) => {
                out.push((idx, s, e));
                k = bounds.iter().position(|&b| b == e).unwrap();
            }
            None => k += 1,
        }
    }
    out
}
