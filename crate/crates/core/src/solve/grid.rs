use std::cmp::Ordering;

use rayon::prelude::*;

use super::{GridSpec, MAX_ARGMIN_POINTS};
use crate::model::Interval;

const CHUNK: usize = 2048;

#[derive(Clone, Debug)]
pub(crate) struct Sample<T> {
    pub point: Vec<f64>,
    pub value: f64,
    pub data: T,
}

#[derive(Clone, Debug)]
pub(crate) struct SearchResult<T> {
    /// ε-argmin samples, best first.
    pub samples: Vec<Sample<T>>,
    pub truncated: bool,
    pub evaluations: usize,
}

pub(crate) fn cmp_sample(va: f64, pa: &[f64], vb: f64, pb: &[f64]) -> Ordering {
    va.total_cmp(&vb).then_with(|| {
        pa.iter()
            .zip(pb)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// `k`-th of `n` evenly spaced values in `[lo, hi]`, hitting both ends exactly.
pub(crate) fn grid_coord(b: Interval, k: usize, n: usize) -> f64 {
    if n <= 1 || b.width() == 0.0 {
        b.lo
    } else if k + 1 == n {
        b.hi
    } else {
        b.lo + b.width() * k as f64 / (n - 1) as f64
    }
}

fn axis_points(b: Interval, n: usize) -> usize {
    if b.width() == 0.0 {
        1
    } else {
        n
    }
}

/// Evaluates every point of the tensor grid over `boxes`, plus `extra`, and
/// keeps those within `tol` of the best. Index order is lexicographic.
fn sweep<T: Send>(
    boxes: &[Interval],
    n: usize,
    extra: Option<&[f64]>,
    tol: f64,
    f: &(impl Fn(&[f64]) -> Option<(f64, T)> + Sync),
) -> (Vec<Sample<T>>, usize) {
    let dims: Vec<usize> = boxes.iter().map(|b| axis_points(*b, n)).collect();
    let total: usize = dims.iter().product();
    let point_at = |mut idx: usize| {
        let mut p = vec![0.0; boxes.len()];
        for d in (0..boxes.len()).rev() {
            p[d] = grid_coord(boxes[d], idx % dims[d], dims[d]);
            idx /= dims[d];
        }
        p
    };
    let chunks = total.div_ceil(CHUNK);
    let mut parts: Vec<Vec<Sample<T>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut local: Vec<Sample<T>> = Vec::new();
            let mut best = f64::INFINITY;
            for idx in c * CHUNK..((c + 1) * CHUNK).min(total) {
                let point = point_at(idx);
                if let Some((value, data)) = f(&point) {
                    if !value.is_finite() || value > best + tol {
                        continue;
                    }
                    if value < best {
                        best = value;
                        local.retain(|s| s.value <= best + tol);
                    }
                    local.push(Sample { point, value, data });
                }
            }
            local
        })
        .collect();
    let mut evaluations = total;
    if let Some(e) = extra {
        evaluations += 1;
        if let Some((value, data)) = f(e) {
            if value.is_finite() {
                parts.push(vec![Sample { point: e.to_vec(), value, data }]);
            }
        }
    }
    (parts.into_iter().flatten().collect(), evaluations)
}

fn prune<T>(samples: &mut Vec<Sample<T>>, tol: f64) {
    samples.sort_by(|a, b| cmp_sample(a.value, &a.point, b.value, &b.point));
    samples.dedup_by(|a, b| a.point == b.point);
    if let Some(best) = samples.first().map(|s| s.value) {
        samples.retain(|s| s.value <= best + tol);
    }
}

/// Grid search with refinement over `bounds`. `f` returns `None` for
/// infeasible or undefined points.
pub(crate) fn grid_search<T: Send>(
    bounds: &[Interval],
    grid: &GridSpec,
    f: impl Fn(&[f64]) -> Option<(f64, T)> + Sync,
) -> SearchResult<T> {
    let tol = grid.grid_opt_tol();
    let (mut samples, mut evaluations) = sweep(bounds, grid.points, None, tol, &f);
    prune(&mut samples, tol);
    let mut half: Vec<f64> = bounds.iter().map(|b| b.width() / 2.0).collect();
    for _ in 0..grid.rounds {
        let Some(center) = samples.first().map(|s| s.point.clone()) else {
            break;
        };
        for h in half.iter_mut() {
            *h /= 10.0;
        }
        let boxes: Vec<Interval> = bounds
            .iter()
            .zip(&center)
            .zip(&half)
            .map(|((b, &c), &h)| Interval::new((c - h).max(b.lo), (c + h).min(b.hi)))
            .collect();
        let (more, evals) = sweep(&boxes, grid.points, Some(&center), tol, &f);
        evaluations += evals;
        samples.extend(more);
        prune(&mut samples, tol);
    }
    let truncated = samples.len() > MAX_ARGMIN_POINTS;
    samples.truncate(MAX_ARGMIN_POINTS);
    SearchResult {
        samples,
        truncated,
        evaluations,
    }
}
