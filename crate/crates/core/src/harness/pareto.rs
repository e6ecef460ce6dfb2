//! Reward-versus-cost trade-off analysis.

/// Seed-averaged outcome of one cost level.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    pub lambda: f64,
    /// Mean acquisition fraction (lower is better).
    pub cost: f64,
    /// Mean episode return (higher is better).
    pub reward: f64,
    pub seeds: usize,
}

impl ParetoPoint {
    /// `self` dominates `other`: no worse on both axes, better on one.
    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        self.cost <= other.cost
            && self.reward >= other.reward
            && (self.cost < other.cost || self.reward > other.reward)
    }

    fn same_coordinates(&self, other: &ParetoPoint) -> bool {
        self.cost == other.cost && self.reward == other.reward
    }
}

/// For each point, whether it is left off the front: either dominated, or
/// a repeat of an earlier point with identical coordinates.
pub fn excluded_flags(points: &[ParetoPoint]) -> Vec<bool> {
    (0..points.len())
        .map(|i| {
            let p = &points[i];
            points.iter().any(|q| q.dominates(p))
                || points[..i].iter().any(|q| q.same_coordinates(p))
        })
        .collect()
}

/// Indices of the non-dominated points, ordered by cost (stable for ties).
pub fn pareto_indices(points: &[ParetoPoint]) -> Vec<usize> {
    let flags = excluded_flags(points);
    let mut kept: Vec<usize> = (0..points.len()).filter(|&i| !flags[i]).collect();
    kept.sort_by(|&a, &b| points[a].cost.total_cmp(&points[b].cost));
    kept
}

/// The non-dominated subset, ordered by cost.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    pareto_indices(points)
        .into_iter()
        .map(|i| points[i].clone())
        .collect()
}

/// Ranks starting at 1; tied values share their average rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = avg;
        }
        start = end;
    }
    out
}

/// Spearman rank correlation. Returns 0 when either side is constant, since
/// no ordering can be read from it.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman needs paired samples");
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}
