//! Interactive-pair filtering by closest cross-time future distance.

use super::{AgentTrack, SceneError};

/// Minimum Euclidean distance between the two future trajectories over all
/// valid (t1, t2) step pairs, i.e. the full cross product of time steps.
pub fn closest_future_distance(a: &AgentTrack, b: &AgentTrack) -> Result<f64, SceneError> {
    let pa: Vec<(f64, f64)> = a.valid_future().map(|s| (s.x, s.y)).collect();
    let pb: Vec<(f64, f64)> = b.valid_future().map(|s| (s.x, s.y)).collect();
    if pa.is_empty() {
        return Err(SceneError::EmptyFuture { agent: a.id });
    }
    if pb.is_empty() {
        return Err(SceneError::EmptyFuture { agent: b.id });
    }
    let mut best = f64::INFINITY;
    for p in &pa {
        for q in &pb {
            let d2 = (p.0 - q.0) * (p.0 - q.0) + (p.1 - q.1) * (p.1 - q.1);
            if d2 < best {
                best = d2;
            }
        }
    }
    Ok(best.sqrt())
}

/// Greedy interactive pairing: repeatedly take the globally minimal-distance
/// pair among the remaining agents, remove both and repeat. Ties break on
/// (lower id, lower id). Agents without a valid future step do not pair.
pub fn select_interactive_pairs(agents: &[AgentTrack]) -> Vec<(u64, u64)> {
    let eligible: Vec<&AgentTrack> = agents.iter().filter(|t| t.valid_future().next().is_some()).collect();
    let n = eligible.len();
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = closest_future_distance(eligible[i], eligible[j]).expect("eligible agents have valid futures");
            dist[i * n + j] = d;
        }
    }
    let mut used = vec![false; n];
    let mut out = Vec::new();
    loop {
        let mut best: Option<(f64, u64, u64, usize, usize)> = None;
        for i in 0..n {
            if used[i] {
                continue;
            }
            for j in (i + 1)..n {
                if used[j] {
                    continue;
                }
                let d = dist[i * n + j];
                let (lo, hi) = order_ids(eligible[i].id, eligible[j].id);
                let cand = (d, lo, hi, i, j);
                let better = match &best {
                    None => true,
                    Some(b) => (d, lo, hi) < (b.0, b.1, b.2),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        match best {
            Some((_, lo, hi, i, j)) => {
                used[i] = true;
                used[j] = true;
                out.push((lo, hi));
            }
            None => break,
        }
    }
    out
}

fn order_ids(a: u64, b: u64) -> (u64, u64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}
