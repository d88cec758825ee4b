//! Majority-vote ensemble over trained classifiers.

use crate::error::{Error, Result};

/// Min-max scale each column of an `n x classes` score table to `[0, 1]`.
/// A constant column maps to 0.5.
pub fn min_max_scale(scores: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let classes = scores.first().map_or(0, Vec::len);
    let mut lo = vec![f64::INFINITY; classes];
    let mut hi = vec![f64::NEG_INFINITY; classes];
    for row in scores {
        for (c, &v) in row.iter().enumerate() {
            lo[c] = lo[c].min(v);
            hi[c] = hi[c].max(v);
        }
    }
    scores
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(c, &v)| {
                    let span = hi[c] - lo[c];
                    if span > 0.0 {
                        (v - lo[c]) / span
                    } else {
                        0.5
                    }
                })
                .collect()
        })
        .collect()
}

/// Per-sample majority vote.
///
/// `member_labels[m][i]` is member `m`'s label for sample `i`, and
/// `member_scores[m][i]` its min-max-scaled score row. An even split goes to
/// the tied label with the largest scaled confidence among its voters, then
/// to the lowest label. Ensemble scores are the per-class mean of the
/// members' scaled scores.
pub fn ensemble_vote(
    member_labels: &[Vec<usize>],
    member_scores: &[Vec<Vec<f64>>],
    classes: usize,
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    if member_labels.is_empty() {
        return Err(Error::config("ensemble has no members"));
    }
    if member_scores.len() != member_labels.len() {
        return Err(Error::dim(format!(
            "{} label vectors but {} score tables",
            member_labels.len(),
            member_scores.len()
        )));
    }
    let n = member_labels[0].len();
    for (m, (l, s)) in member_labels.iter().zip(member_scores).enumerate() {
        if l.len() != n || s.len() != n || s.iter().any(|r| r.len() != classes) {
            return Err(Error::dim(format!(
                "ensemble member {m} does not match {n} samples x {classes} classes"
            )));
        }
        if let Some(&bad) = l.iter().find(|&&v| v >= classes) {
            return Err(Error::Label {
                label: bad as i64,
                classes,
            });
        }
    }
    let members = member_labels.len() as f64;
    let mut labels = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let mut votes = vec![0usize; classes];
        let mut conf = vec![f64::NEG_INFINITY; classes];
        for (l, s) in member_labels.iter().zip(member_scores) {
            let label = l[i];
            votes[label] += 1;
            conf[label] = conf[label].max(s[i][label]);
        }
        let mut best = 0;
        for c in 1..classes {
            if votes[c] > votes[best] || (votes[c] == votes[best] && conf[c] > conf[best]) {
                best = c;
            }
        }
        labels.push(best);
        scores.push(
            (0..classes)
                .map(|c| member_scores.iter().map(|s| s[i][c]).sum::<f64>() / members)
                .collect(),
        );
    }
    Ok((labels, scores))
}
