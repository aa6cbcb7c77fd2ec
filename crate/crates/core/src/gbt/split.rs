//! Exact greedy split search.

use super::GbtParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
    pub grad_left: f64,
    pub hess_left: f64,
    pub grad_right: f64,
    pub hess_right: f64,
    pub weight_left: f64,
    pub weight_right: f64,
}

pub(crate) fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

/// Structure-score improvement of splitting a leaf, minus the leaf charge.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda)
        - (gl + gr) * (gl + gr) / (hl + hr + lambda))
        - gamma
}

/// Best admissible split of one node.
///
/// `columns[k][i]` is feature `k` of sample `i`; `sorted[k]` lists the node's
/// samples in ascending order of feature `k` (ties by sample index).
/// `bounds` are the node's inherited leaf-weight bounds. Candidates are
/// visited by ascending feature then ascending threshold and only a strictly
/// larger gain replaces the incumbent, so ties resolve to the lowest feature
/// and threshold. Returns `None` if no admissible candidate has positive gain.
pub fn find_best_split(
    columns: &[Vec<f64>],
    sorted: &[Vec<usize>],
    grad: &[f64],
    hess: &[f64],
    params: &GbtParams,
    bounds: (f64, f64),
) -> Option<SplitCandidate> {
    let lambda = params.reg_lambda;
    let node = sorted.first()?;
    if node.len() < 2 {
        return None;
    }
    let g_total: f64 = node.iter().map(|&i| grad[i]).sum();
    let h_total: f64 = node.iter().map(|&i| hess[i]).sum();
    let (lo, hi) = bounds;
    let mut best: Option<SplitCandidate> = None;

    for (k, order) in sorted.iter().enumerate() {
        let col = &columns[k];
        let constrained = params.monotone_feature == Some(k);
        let (mut gl, mut hl) = (0.0, 0.0);
        for pos in 0..order.len() - 1 {
            let i = order[pos];
            gl += grad[i];
            hl += hess[i];
            let a = col[i];
            let b = col[order[pos + 1]];
            if !(a < b) {
                continue;
            }
            let gr = g_total - gl;
            let hr = h_total - hl;
            if hl + lambda <= 0.0 || hr + lambda <= 0.0 {
                continue;
            }
            let gain = split_gain(gl, hl, gr, hr, lambda, params.min_split_gain);
            if !(gain > 0.0) || best.is_some_and(|c| gain <= c.gain) {
                continue;
            }
            let wl = leaf_weight(gl, hl, lambda);
            let wr = leaf_weight(gr, hr, lambda);
            if constrained && wl < wr {
                continue;
            }
            if wl < lo || wl > hi || wr < lo || wr > hi {
                continue;
            }
            let mid = 0.5 * (a + b);
            let threshold = if mid > a { mid } else { b };
            best = Some(SplitCandidate {
                feature: k,
                threshold,
                gain,
                grad_left: gl,
                hess_left: hl,
                grad_right: gr,
                hess_right: hr,
                weight_left: wl,
                weight_right: wr,
            });
        }
    }
    best
}

/// Convenience wrapper that sorts `indices` itself; used by tests and small
/// callers.
pub fn find_best_split_in(
    columns: &[Vec<f64>],
    indices: &[usize],
    grad: &[f64],
    hess: &[f64],
    params: &GbtParams,
    bounds: (f64, f64),
) -> Option<SplitCandidate> {
    let sorted = sort_by_columns(columns, indices);
    find_best_split(columns, &sorted, grad, hess, params, bounds)
}

pub(crate) fn sort_by_columns(columns: &[Vec<f64>], indices: &[usize]) -> Vec<Vec<usize>> {
    columns
        .iter()
        .map(|col| {
            let mut o = indices.to_vec();
            o.sort_by(|&x, &y| col[x].total_cmp(&col[y]).then(x.cmp(&y)));
            o
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FREE: (f64, f64) = (f64::NEG_INFINITY, f64::INFINITY);

    fn params(mono: Option<usize>) -> GbtParams {
        GbtParams {
            reg_lambda: 1.0,
            min_split_gain: 0.0,
            monotone_feature: mono,
            ..GbtParams::default()
        }
    }

    #[test]
    fn two_sample_gain() {
        let cols = vec![vec![0.0, 1.0]];
        let s = find_best_split_in(&cols, &[0, 1], &[-1.0, 1.0], &[1.0, 1.0], &params(None), FREE)
            .unwrap();
        assert!((s.gain - 0.5).abs() < 1e-15);
        assert_eq!(s.threshold, 0.5);
        assert_eq!(s.weight_left, 0.5);
        assert_eq!(s.weight_right, -0.5);
    }

    #[test]
    fn constrained_feature_admits_decreasing_split() {
        let cols = vec![vec![0.0, 1.0]];
        let s = find_best_split_in(&cols, &[0, 1], &[-1.0, 1.0], &[1.0, 1.0], &params(Some(0)), FREE);
        assert!(s.is_some());
    }

    #[test]
    fn constrained_feature_vetoes_increasing_split() {
        let cols = vec![vec![0.0, 1.0]];
        let s = find_best_split_in(&cols, &[0, 1], &[1.0, -1.0], &[1.0, 1.0], &params(Some(0)), FREE);
        assert_eq!(s, None);
        // Unconstrained search takes it.
        assert!(find_best_split_in(&cols, &[0, 1], &[1.0, -1.0], &[1.0, 1.0], &params(None), FREE).is_some());
    }

    #[test]
    fn bounds_veto_children_outside() {
        let cols = vec![vec![0.0, 1.0]];
        let s = find_best_split_in(&cols, &[0, 1], &[-1.0, 1.0], &[1.0, 1.0], &params(None), (0.0, 1.0));
        assert_eq!(s, None);
    }

    #[test]
    fn ties_go_to_lowest_feature_and_threshold() {
        // Features 0 and 1 identical: tie on gain, feature 0 wins.
        let cols = vec![vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 2.0, 3.0]];
        let g = [-1.0, -1.0, 1.0, 1.0];
        let s = find_best_split_in(&cols, &[0, 1, 2, 3], &g, &[1.0; 4], &params(None), FREE).unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.threshold, 1.5);
        // Symmetric gradients give equal gains at two thresholds; lowest wins.
        let cols = vec![vec![0.0, 1.0, 2.0]];
        let s = find_best_split_in(&cols, &[0, 1, 2], &[1.0, 0.0, -1.0], &[1.0; 3], &params(None), FREE)
            .unwrap();
        assert_eq!(s.threshold, 0.5);
    }

    #[test]
    fn no_split_without_positive_gain() {
        let cols = vec![vec![0.0, 1.0]];
        assert_eq!(
            find_best_split_in(&cols, &[0, 1], &[1.0, 1.0], &[1.0, 1.0], &params(None), FREE),
            None
        );
        let mut p = params(None);
        p.min_split_gain = 0.6;
        assert_eq!(
            find_best_split_in(&cols, &[0, 1], &[-1.0, 1.0], &[1.0, 1.0], &p, FREE),
            None
        );
        let cols = vec![vec![2.0, 2.0]];
        assert_eq!(
            find_best_split_in(&cols, &[0, 1], &[-1.0, 1.0], &[1.0, 1.0], &params(None), FREE),
            None
        );
    }

    #[test]
    fn threshold_between_adjacent_floats_separates() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let cols = vec![vec![a, b]];
        let s = find_best_split_in(&cols, &[0, 1], &[-1.0, 1.0], &[1.0, 1.0], &params(None), FREE)
            .unwrap();
        assert!(a < s.threshold && b >= s.threshold);
    }

    #[test]
    fn matches_brute_force_on_random_data() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(2..30);
            let cols: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..n).map(|_| rng.random_range(0..6) as f64).collect())
                .collect();
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let h = vec![1.0; n];
            let idx: Vec<usize> = (0..n).collect();
            let p = params(None);
            let got = find_best_split_in(&cols, &idx, &g, &h, &p, FREE);
            // brute force over distinct values
            let mut best: Option<(f64, usize, f64)> = None;
            for (k, col) in cols.iter().enumerate() {
                let mut vals = col.clone();
                vals.sort_by(f64::total_cmp);
                vals.dedup();
                for w in vals.windows(2) {
                    let t = 0.5 * (w[0] + w[1]);
                    let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
                    for i in 0..n {
                        if col[i] < t {
                            gl += g[i];
                            hl += 1.0;
                        } else {
                            gr += g[i];
                            hr += 1.0;
                        }
                    }
                    let gain = split_gain(gl, hl, gr, hr, 1.0, 0.0);
                    if gain > 1e-12 && best.map_or(true, |b| gain > b.0 + 1e-9) {
                        best = Some((gain, k, t));
                    }
                }
            }
            match (got, best) {
                (None, None) => {}
                (Some(s), Some(b)) => assert!((s.gain - b.0).abs() < 1e-9),
                (x, y) => panic!("{x:?} vs {y:?}"),
            }
        }
    }
}
