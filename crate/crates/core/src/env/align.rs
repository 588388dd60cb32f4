//! Matching recovered latent states to reference states.
//!
//! Latent labels are identifiable only up to permutation. The permutation is
//! chosen to minimize the summed row-wise total-variation distance between
//! the reference and relabelled estimated transition matrices, by exhaustive
//! search (first minimum in lexicographic order wins ties).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest state count accepted by the exhaustive search.
pub const MAX_ALIGN_STATES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Reference state `i` corresponds to estimated state `permutation[i]`.
    pub permutation: Vec<usize>,
    /// `[y][i]`: TV between reference row `i` of `P_y` and its aligned estimate.
    pub row_tv: Vec<Vec<f64>>,
    pub max_tv: f64,
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn row_tvs(truth: &[Vec<Vec<f64>>], est: &[Vec<Vec<f64>>], perm: &[usize]) -> Vec<Vec<f64>> {
    truth
        .iter()
        .zip(est)
        .map(|(pt, pe)| {
            (0..perm.len())
                .map(|i| {
                    let aligned: Vec<f64> = (0..perm.len()).map(|c| pe[perm[i]][perm[c]]).collect();
                    total_variation(&pt[i], &aligned)
                })
                .collect()
        })
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Align estimated per-action transition matrices to reference ones.
pub fn align_transitions(truth: &[Vec<Vec<f64>>], est: &[Vec<Vec<f64>>]) -> Result<Alignment> {
    if truth.len() != est.len() || truth.is_empty() {
        return Err(Error::dim("transition matrix count", truth.len(), est.len()));
    }
    let n = truth[0].len();
    if n > MAX_ALIGN_STATES {
        return Err(Error::Size(format!("alignment supports at most {MAX_ALIGN_STATES} states, got {n}")));
    }
    for m in truth.iter().chain(est) {
        if m.len() != n || m.iter().any(|r| r.len() != n) {
            return Err(Error::dim("transition matrix shape", n, m.len()));
        }
    }
    let mut best: Option<(f64, Vec<usize>, Vec<Vec<f64>>)> = None;
    for perm in permutations(n) {
        let tvs = row_tvs(truth, est, &perm);
        let cost: f64 = tvs.iter().flatten().sum();
        if best.as_ref().map_or(true, |(c, _, _)| cost < *c) {
            best = Some((cost, perm, tvs));
        }
    }
    let (_, permutation, row_tv) = best.expect("at least one permutation");
    let max_tv = row_tv.iter().flatten().copied().fold(0.0, f64::max);
    Ok(Alignment {
        permutation,
        row_tv,
        max_tv,
    })
}
