/// Length of the longest common subsequence, by bottom-up dynamic programming.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sentence-level ROUGE-L F-measure.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Lightweight suffix stripper used for stem matching.
pub fn stem(word: &str) -> String {
    let w = word.to_lowercase();
    let n = w.chars().count();
    let strip = |suffix: &str, min_len: usize, with: &str| -> Option<String> {
        (n >= min_len && w.ends_with(suffix)).then(|| format!("{}{with}", &w[..w.len() - suffix.len()]))
    };
    strip("sses", 5, "ss")
        .or_else(|| strip("ies", 5, "y"))
        .or_else(|| strip("ing", 6, ""))
        .or_else(|| strip("ed", 5, ""))
        .or_else(|| strip("ly", 5, ""))
        .or_else(|| if w.ends_with("ss") || w.ends_with("us") { None } else { strip("s", 4, "") })
        .unwrap_or(w)
}

/// Unigram alignment: exact matches first, then stem matches, each word used
/// at most once. Returns `(candidate index, reference index)` pairs sorted by
/// candidate index.
fn align(candidate: &[&str], reference: &[&str]) -> Vec<(usize, usize)> {
    let mut used_c = vec![false; candidate.len()];
    let mut used_r = vec![false; reference.len()];
    let mut pairs = Vec::new();
    let stages: [&dyn Fn(&str) -> String; 2] = [&|w: &str| w.to_lowercase(), &|w: &str| stem(w)];
    for key in stages {
        let rk: Vec<String> = reference.iter().map(|w| key(w)).collect();
        for (i, c) in candidate.iter().enumerate() {
            if used_c[i] {
                continue;
            }
            let ck = key(c);
            if let Some(j) = (0..reference.len()).find(|&j| !used_r[j] && rk[j] == ck) {
                used_c[i] = true;
                used_r[j] = true;
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// METEOR without synonym matching: recall-weighted harmonic mean
/// `10PR / (R + 9P)` times `1 - 0.5 (chunks / matches)^3`.
pub fn meteor_lite(candidate: &[&str], reference: &[&str]) -> f64 {
    let pairs = align(candidate, reference);
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let chunks = 1 + pairs.windows(2).filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1)).count();
    let frag = chunks as f64 / m as f64;
    fmean * (1.0 - 0.5 * frag.powi(3))
}
