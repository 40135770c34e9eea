//! Biobjective quality indicators (both objectives minimized).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::Instance;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("set coverage needs a nonempty reference set B")]
    EmptySet,
    #[error("reference point coordinates must be positive, got ({0}, {1})")]
    BadReference(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub r1: f64,
    pub r2: f64,
}

impl ReferencePoint {
    pub fn new(r1: f64, r2: f64) -> Result<Self, MetricsError> {
        if r1 > 0.0 && r2 > 0.0 {
            Ok(Self { r1, r2 })
        } else {
            Err(MetricsError::BadReference(r1, r2))
        }
    }
}

/// `(0.005 n N_pt, 0.05 n N_pt)` for an instance with `n` periods and `N_pt` product tanks.
pub fn reference_point(inst: &Instance) -> ReferencePoint {
    reference_point_for(inst.n_pt, inst.n_periods)
}

pub fn reference_point_for(n_pt: usize, n_periods: usize) -> ReferencePoint {
    let base = (n_periods * n_pt) as f64;
    ReferencePoint { r1: 0.005 * base, r2: 0.05 * base }
}

/// Pareto dominance: no worse in both objectives and strictly better in one.
#[inline]
pub fn dominates(a: &[f64; 2], b: &[f64; 2]) -> bool {
    a[0] <= b[0] && a[1] <= b[1] && (a[0] < b[0] || a[1] < b[1])
}

/// Exact normalized 2-D hypervolume of `front` with respect to `r`.
///
/// Points outside the box `[0, r1) x [0, r2)` contribute nothing. The result
/// is the dominated area divided by `r1 * r2`.
pub fn hypervolume(front: &[[f64; 2]], r: ReferencePoint) -> f64 {
    let mut pts: Vec<[f64; 2]> = front
        .iter()
        .copied()
        .filter(|p| p[0] < r.r1 && p[1] < r.r2)
        .collect();
    if pts.is_empty() {
        return 0.0;
    }
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut area = 0.0;
    let mut ceiling = r.r2;
    for p in pts {
        if p[1] < ceiling {
            area += (r.r1 - p[0]) * (ceiling - p[1]);
            ceiling = p[1];
        }
    }
    area / (r.r1 * r.r2)
}

/// Fraction of `b` dominated by at least one point of `a`.
pub fn set_coverage(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64, MetricsError> {
    if b.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let covered = b.iter().filter(|q| a.iter().any(|p| dominates(p, q))).count();
    Ok(covered as f64 / b.len() as f64)
}

/// Partition into nondominated ranks (fast nondominated sort).
///
/// Returns index lists; `fronts[0]` is the nondominated set.
pub fn nondominated_sort(points: &[[f64; 2]]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by_count = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for p in 0..n {
        for q in (p + 1)..n {
            if dominates(&points[p], &points[q]) {
                dominates_list[p].push(q);
                dominated_by_count[q] += 1;
            } else if dominates(&points[q], &points[p]) {
                dominates_list[q].push(p);
                dominated_by_count[p] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&p| dominated_by_count[p] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominates_list[p] {
                dominated_by_count[q] -= 1;
                if dominated_by_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Indices of the nondominated points.
pub fn nondominated_indices(points: &[[f64; 2]]) -> Vec<usize> {
    nondominated_sort(points).into_iter().next().unwrap_or_default()
}

/// Crowding distance of each member of `front` (indices into `points`).
///
/// Boundary points of each objective get `f64::INFINITY`.
pub fn crowding_distance(points: &[[f64; 2]], front: &[usize]) -> Vec<f64> {
    let m = front.len();
    let mut dist = vec![0.0; m];
    if m <= 2 {
        return vec![f64::INFINITY; m];
    }
    for obj in 0..2 {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| points[front[a]][obj].total_cmp(&points[front[b]][obj]));
        let lo = points[front[order[0]]][obj];
        let hi = points[front[order[m - 1]]][obj];
        dist[order[0]] = f64::INFINITY;
        dist[order[m - 1]] = f64::INFINITY;
        let span = hi - lo;
        if span <= 0.0 {
            continue;
        }
        for w in 1..m - 1 {
            let gap = points[front[order[w + 1]]][obj] - points[front[order[w - 1]]][obj];
            dist[order[w]] += gap / span;
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: ReferencePoint = ReferencePoint { r1: 1.0, r2: 1.0 };

    #[test]
    fn reference_point_formula() {
        let r = reference_point_for(3, 20);
        assert!((r.r1 - 0.3).abs() < 1e-12 && (r.r2 - 3.0).abs() < 1e-12);
        let r = reference_point_for(7, 300);
        assert!((r.r1 - 10.5).abs() < 1e-12 && (r.r2 - 105.0).abs() < 1e-12);
        let r2 = reference_point_for(7, 600);
        assert!((r2.r1 - 2.0 * r.r1).abs() < 1e-12 && (r2.r2 - 2.0 * r.r2).abs() < 1e-12);
    }

    #[test]
    fn hypervolume_hand_cases() {
        assert_eq!(hypervolume(&[[0.0, 0.0]], UNIT), 1.0);
        assert_eq!(hypervolume(&[[0.5, 0.5]], UNIT), 0.25);
        let hv = hypervolume(&[[0.2, 0.6], [0.6, 0.2]], UNIT);
        assert!((hv - 0.48).abs() < 1e-12);
        assert_eq!(hypervolume(&[], UNIT), 0.0);
        assert_eq!(hypervolume(&[[1.5, 0.1], [0.1, 1.0]], UNIT), 0.0);
    }

    #[test]
    fn coverage_cases() {
        let b = [[0.5, 0.5], [0.4, 0.7], [0.7, 0.4], [0.2, 0.9]];
        let better: Vec<[f64; 2]> = b.iter().map(|p| [p[0] - 0.1, p[1] - 0.1]).collect();
        assert_eq!(set_coverage(&better, &b).unwrap(), 1.0);
        assert_eq!(set_coverage(&b, &b).unwrap(), 0.0);
        // (0.45, 0.45) dominates (0.5,0.5); (0.3, 0.6) dominates (0.4, 0.7)
        let a = [[0.45, 0.45], [0.3, 0.69]];
        assert_eq!(set_coverage(&a, &b).unwrap(), 0.5);
        assert_eq!(set_coverage(&a, &[]), Err(MetricsError::EmptySet));
    }

    #[test]
    fn sort_special_cases() {
        let same = vec![[1.0, 2.0]; 5];
        assert_eq!(nondominated_sort(&same).len(), 1);
        let chain: Vec<[f64; 2]> = (0..6).map(|k| [k as f64, k as f64]).collect();
        let fronts = nondominated_sort(&chain);
        assert_eq!(fronts.len(), 6);
        assert!(fronts.iter().enumerate().all(|(r, f)| f == &vec![r]));
    }

    #[test]
    fn crowding_boundaries_are_infinite() {
        let pts = [[0.0, 1.0], [0.25, 0.5], [0.5, 0.4], [1.0, 0.0]];
        let d = crowding_distance(&pts, &[0, 1, 2, 3]);
        assert!(d[0].is_infinite() && d[3].is_infinite());
        assert!((d[1] - (0.5 + 0.6)).abs() < 1e-12);
        assert!((d[2] - (0.75 + 0.5)).abs() < 1e-12);
    }
}
