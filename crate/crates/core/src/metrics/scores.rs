use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

pub const ROUGE_BETA: f64 = 1.2;

/// A candidate and its references, already normalized and tokenized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalCase {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalCase {
    pub fn new(candidate: Vec<String>, references: Vec<Vec<String>>) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::Config("an evaluation case needs at least one reference".into()));
        }
        Ok(Self { candidate, references })
    }

    /// Builds a case from whitespace-separated strings.
    pub fn from_text(candidate: &str, references: &[&str]) -> Result<Self> {
        let split = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        Self::new(split(candidate), references.iter().map(|r| split(r)).collect())
    }
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn check_cases(cases: &[EvalCase]) -> Result<()> {
    if cases.is_empty() {
        return Err(Error::Config("no evaluation cases".into()));
    }
    if cases.iter().any(|c| c.references.is_empty()) {
        return Err(Error::Config("an evaluation case has no references".into()));
    }
    Ok(())
}

/// Clipped matches and candidate n-gram totals per order, plus candidate and
/// effective reference lengths.
fn bleu_stats(cases: &[EvalCase], max_n: usize) -> (Vec<(usize, usize)>, usize, usize) {
    let mut stats = vec![(0, 0); max_n];
    let (mut c_len, mut r_len) = (0, 0);
    for case in cases {
        let c = case.candidate.len();
        c_len += c;
        // closest reference length, shorter on ties
        r_len += case
            .references
            .iter()
            .map(Vec::len)
            .min_by_key(|&r| (r.abs_diff(c), r))
            .unwrap_or(0);
        for (k, s) in stats.iter_mut().enumerate() {
            let n = k + 1;
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &case.references {
                for (g, cnt) in ngrams(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(cnt);
                }
            }
            for (g, cnt) in ngrams(&case.candidate, n) {
                s.0 += cnt.min(max_ref.get(g).copied().unwrap_or(0));
                s.1 += cnt;
            }
        }
    }
    (stats, c_len, r_len)
}

fn bleu_impl(cases: &[EvalCase], n: usize, smooth: bool) -> Result<f64> {
    check_cases(cases)?;
    if !(1..=4).contains(&n) {
        return Err(Error::Config(format!("BLEU order must be 1..4, got {n}")));
    }
    let (stats, c_len, r_len) = bleu_stats(cases, n);
    if c_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for (k, &(m, t)) in stats.iter().enumerate() {
        let (m, t) = if smooth && k > 0 { (m + 1, t + 1) } else { (m, t) };
        if m == 0 || t == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    Ok(bp * (log_sum / n as f64).exp())
}

/// Corpus BLEU-`n`: geometric mean of clipped n-gram precisions of orders
/// `1..=n` times the brevity penalty. A zero precision gives zero.
pub fn bleu(cases: &[EvalCase], n: usize) -> Result<f64> {
    bleu_impl(cases, n, false)
}

/// BLEU with add-one smoothing of the precisions of orders 2 and up.
pub fn bleu_smoothed(cases: &[EvalCase], n: usize) -> Result<f64> {
    bleu_impl(cases, n, true)
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean over cases of the best LCS-based F-measure against any reference.
pub fn rouge_l(cases: &[EvalCase]) -> Result<f64> {
    check_cases(cases)?;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    let mut total = 0.0;
    for case in cases {
        let mut best: f64 = 0.0;
        for r in &case.references {
            let lcs = lcs_len(&case.candidate, r);
            if lcs == 0 {
                continue;
            }
            let p = lcs as f64 / case.candidate.len() as f64;
            let rec = lcs as f64 / r.len() as f64;
            best = best.max((1.0 + b2) * p * rec / (rec + b2 * p));
        }
        total += best;
    }
    Ok(total / cases.len() as f64)
}

type Vector<'a> = HashMap<&'a [String], f64>;

fn tfidf<'a>(tokens: &'a [String], n: usize, df: &HashMap<&[String], usize>, n_docs: f64) -> Vector<'a> {
    ngrams(tokens, n)
        .into_iter()
        .map(|(g, c)| {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            (g, c as f64 * (n_docs / d).ln())
        })
        .collect()
}

fn cosine(a: &Vector<'_>, b: &Vector<'_>) -> f64 {
    let na = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(g, v)| b.get(g).map(|w| v * w)).sum();
    dot / (na * nb)
}

/// CIDEr: TF-IDF n-gram cosine between candidate and each reference,
/// averaged over references and orders 1..4, times 10, averaged over cases.
/// Document frequencies count the cases whose references contain an n-gram.
pub fn cider(cases: &[EvalCase]) -> Result<f64> {
    check_cases(cases)?;
    let n_docs = cases.len() as f64;
    let mut total = 0.0;
    let mut per_case = vec![0.0; cases.len()];
    for n in 1..=4 {
        let mut df: HashMap<&[String], usize> = HashMap::new();
        for case in cases {
            let seen: HashSet<&[String]> = case.references.iter().flat_map(|r| ngrams(r, n).into_keys()).collect();
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        for (i, case) in cases.iter().enumerate() {
            let c = tfidf(&case.candidate, n, &df, n_docs);
            let sim: f64 = case
                .references
                .iter()
                .map(|r| cosine(&c, &tfidf(r, n, &df, n_docs)))
                .sum::<f64>()
                / case.references.len() as f64;
            per_case[i] += sim / 4.0;
        }
    }
    for s in per_case {
        total += 10.0 * s;
    }
    Ok(total / n_docs)
}
