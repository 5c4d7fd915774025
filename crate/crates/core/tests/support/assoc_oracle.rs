//! Greedy association written from the algorithm description alone.

use std::collections::BTreeSet;

/// Reference pass: written from the algorithm description only.
/// Returns (assignment per user, handover user ids, loads).
pub fn reference(
    rates: &[Vec<Vec<f64>>],
    current: &[Option<usize>],
    aps: usize,
    threshold: f64,
) -> (Vec<Option<usize>>, BTreeSet<u64>, Vec<usize>) {
    let mut loads = vec![0usize; aps];
    let mut chosen = Vec::new();
    let mut handovers = BTreeSet::new();
    for (u, user_rates) in rates.iter().enumerate() {
        let mut best_ap = usize::MAX;
        let mut best_score = 0.0;
        let mut score_of = vec![0.0; aps];
        for ap in 0..aps {
            let r = &user_rates[ap];
            let avg = r.iter().sum::<f64>() / r.len() as f64;
            let score = avg / (loads[ap] + 1) as f64;
            score_of[ap] = score;
            if score > best_score {
                best_score = score;
                best_ap = ap;
            }
        }
        let pick = if best_ap == usize::MAX {
            None
        } else {
            match current[u] {
                None => Some(best_ap),
                Some(c) if best_score - score_of[c] > threshold => Some(best_ap),
                Some(c) => Some(c),
            }
        };
        if let Some(ap) = pick {
            loads[ap] += 1;
            if let Some(c) = current[u] {
                if c != ap {
                    handovers.insert(u as u64);
                }
            }
        }
        chosen.push(pick);
    }
    (chosen, handovers, loads)
}
