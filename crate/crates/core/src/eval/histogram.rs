use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores in `(lower, upper]`; `None` bounds are infinite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub personal: usize,
    pub other: usize,
}

impl HistogramBin {
    pub fn total(&self) -> usize {
        self.personal + self.other
    }

    /// Share of gold-personal tokens, if the bin is populated.
    pub fn personal_fraction(&self) -> Option<f64> {
        (self.total() > 0).then(|| self.personal as f64 / self.total() as f64)
    }
}

/// Edges `-2, -1.5, ..., 6` with 1.0 among them.
pub fn default_edges() -> Vec<f64> {
    (0..=16).map(|i| -2.0 + 0.5 * i as f64).collect()
}

/// Counts gold-personal and other tokens per score bin. Bins are
/// `(-inf, e0], (e0, e1], ..., (e_last, inf)`.
pub fn pir_histogram(scores: &[f64], gold: &[bool], edges: &[f64]) -> Result<Vec<HistogramBin>> {
    if scores.len() != gold.len() {
        return Err(Error::contract(format!("{} scores vs {} gold flags", scores.len(), gold.len())));
    }
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::Config(format!("histogram edges must be finite and strictly increasing: {edges:?}")));
    }
    let mut bins: Vec<HistogramBin> = (0..=edges.len())
        .map(|i| HistogramBin {
            lower: i.checked_sub(1).map(|k| edges[k]),
            upper: edges.get(i).copied(),
            personal: 0,
            other: 0,
        })
        .collect();
    for (&s, &g) in scores.iter().zip(gold) {
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("score {s}")));
        }
        // First edge >= s; scores equal to an edge fall in the bin it closes.
        let i = edges.partition_point(|&e| e < s);
        if g {
            bins[i].personal += 1;
        } else {
            bins[i].other += 1;
        }
    }
    Ok(bins)
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let fmt = |b: Option<f64>, inf: &str| b.map_or(inf.to_string(), |v| v.to_string());
    let mut out = String::from("lower,upper,personal,other,personal_fraction\n");
    for b in bins {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt(b.lower, "-inf"),
            fmt(b.upper, "inf"),
            b.personal,
            b.other,
            b.personal_fraction().map_or(String::new(), |f| f.to_string())
        ));
    }
    out
}

/// Whether the gold share never decreases across populated bins.
pub fn is_weakly_increasing(bins: &[HistogramBin]) -> bool {
    let fr: Vec<f64> = bins.iter().filter_map(HistogramBin::personal_fraction).collect();
    fr.windows(2).all(|w| w[0] <= w[1])
}
