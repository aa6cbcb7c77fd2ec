//! Additive training: one tree per round on squared-loss gradients.

use super::split::{find_best_split, leaf_weight, sort_by_columns};
use super::{GbtEnsemble, GbtError, GbtParams, Tree, TreeNode};

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// All targets equal: the ensemble is its base score only.
    pub constant_target: bool,
    /// Mean squared training error before any tree and after each round.
    pub train_loss: Vec<f64>,
}

pub fn fit(
    features: &[String],
    rows: &[Vec<f64>],
    targets: &[f64],
    params: &GbtParams,
) -> Result<GbtEnsemble, GbtError> {
    fit_with_report(features, rows, targets, params).map(|(e, _)| e)
}

pub fn fit_with_report(
    features: &[String],
    rows: &[Vec<f64>],
    targets: &[f64],
    params: &GbtParams,
) -> Result<(GbtEnsemble, FitReport), GbtError> {
    let n = rows.len();
    if n < 2 {
        return Err(GbtError::EmptyDataset);
    }
    if targets.len() != n {
        return Err(GbtError::ShapeMismatch(format!(
            "{n} rows but {} targets",
            targets.len()
        )));
    }
    let nf = features.len();
    params.validate(nf)?;
    let mut columns = vec![Vec::with_capacity(n); nf];
    for (r, row) in rows.iter().enumerate() {
        if row.len() != nf {
            return Err(GbtError::ShapeMismatch(format!(
                "row {r} has {} features, expected {nf}",
                row.len()
            )));
        }
        for (k, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(GbtError::NonFinite(format!("feature {} of row {r}", features[k])));
            }
            columns[k].push(*v);
        }
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(GbtError::NonFinite("targets".into()));
    }

    let base_score = targets.iter().sum::<f64>() / n as f64;
    let mut ensemble = GbtEnsemble {
        base_score,
        trees: Vec::new(),
        params: params.clone(),
        features: features.to_vec(),
    };
    let mse = |pred: &[f64]| {
        pred.iter()
            .zip(targets)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n as f64
    };
    let mut pred = vec![base_score; n];
    let mut report = FitReport {
        constant_target: targets.iter().all(|t| *t == targets[0]),
        train_loss: vec![mse(&pred)],
    };
    if report.constant_target {
        return Ok((ensemble, report));
    }

    let all: Vec<usize> = (0..n).collect();
    let presorted = sort_by_columns(&columns, &all);
    let hess = vec![1.0; n];
    let mut grad = vec![0.0; n];
    let eta = params.learning_rate;
    for _ in 0..params.num_rounds {
        for i in 0..n {
            grad[i] = pred[i] - targets[i];
        }
        let mut builder = Builder {
            columns: &columns,
            grad: &grad,
            hess: &hess,
            params,
            nodes: Vec::new(),
        };
        builder.grow(presorted.clone(), 0, (f64::NEG_INFINITY, f64::INFINITY));
        let tree = Tree {
            nodes: builder.nodes,
        };
        for (i, p) in pred.iter_mut().enumerate() {
            *p += eta * predict_column(&tree, &columns, i);
        }
        ensemble.trees.push(tree);
        report.train_loss.push(mse(&pred));
    }
    Ok((ensemble, report))
}

fn predict_column(tree: &Tree, columns: &[Vec<f64>], i: usize) -> f64 {
    let mut id = 0;
    loop {
        match &tree.nodes[id] {
            TreeNode::Leaf { weight, .. } => return *weight,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => id = if columns[*feature][i] < *threshold { *left } else { *right },
        }
    }
}

struct Builder<'a> {
    columns: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a GbtParams,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn grow(&mut self, sorted: Vec<Vec<usize>>, depth: usize, bounds: (f64, f64)) -> usize {
        let id = self.nodes.len();
        let members = &sorted[0];
        let g: f64 = members.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = members.iter().map(|&i| self.hess[i]).sum();
        let weight = leaf_weight(g, h, self.params.reg_lambda);
        self.nodes.push(TreeNode::Leaf {
            weight,
            lo: bounds.0,
            hi: bounds.1,
        });
        if depth >= self.params.max_depth {
            return id;
        }
        let Some(split) =
            find_best_split(self.columns, &sorted, self.grad, self.hess, self.params, bounds)
        else {
            return id;
        };
        let col = &self.columns[split.feature];
        let (mut left, mut right) = (Vec::with_capacity(sorted.len()), Vec::with_capacity(sorted.len()));
        for order in sorted {
            let (l, r): (Vec<usize>, Vec<usize>) =
                order.into_iter().partition(|&i| col[i] < split.threshold);
            left.push(l);
            right.push(r);
        }
        let (left_bounds, right_bounds) = if self.params.monotone_feature == Some(split.feature) {
            let mid = 0.5 * (split.weight_left + split.weight_right);
            ((bounds.0.max(mid), bounds.1), (bounds.0, bounds.1.min(mid)))
        } else {
            (bounds, bounds)
        };
        let l = self.grow(left, depth + 1, left_bounds);
        let r = self.grow(right, depth + 1, right_bounds);
        self.nodes[id] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        id
    }
}

#[cfg(test)]
mod tests {
    use super::super::split_gain;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn one_stump_on_two_clusters() {
        // Cluster A (x=0): targets 1, 3; cluster B (x=10): targets 7, 9.
        let rows = vec![vec![0.0], vec![0.0], vec![10.0], vec![10.0]];
        let y = [1.0, 3.0, 7.0, 9.0];
        let params = GbtParams {
            num_rounds: 1,
            max_depth: 1,
            learning_rate: 1.0,
            ..GbtParams::default()
        };
        let e = fit(&names(1), &rows, &y, &params).unwrap();
        assert_eq!(e.base_score, 5.0);
        // g = pred - y: A: 4, 2 -> G=6, H=2; B: -2, -4 -> G=-6, H=2.
        let wa = -6.0 / (2.0 + 1.0);
        let wb = 6.0 / (2.0 + 1.0);
        let leaves: Vec<f64> = e.trees[0].leaf_weights().collect();
        assert_eq!(leaves, vec![wa, wb]);
        assert_eq!(e.predict(&[0.0]).unwrap(), 5.0 + wa);
    }

    #[test]
    fn increasing_target_gives_constant_in_constrained_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.random_range(-5.0..5.0), rng.random_range(0.0..1.0)])
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0]).collect();
        let params = GbtParams {
            monotone_feature: Some(0),
            num_rounds: 20,
            ..GbtParams::default()
        };
        let e = fit(&names(2), &rows, &y, &params).unwrap();
        for t in &e.trees {
            assert!(t.split_features().all(|f| f != 0));
        }
        let a = e.predict(&[-4.0, 0.3]).unwrap();
        let b = e.predict(&[4.0, 0.3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_target_is_flagged() {
        let rows = vec![vec![1.0], vec![2.0], vec![3.0]];
        let (e, r) = fit_with_report(&names(1), &rows, &[4.0; 3], &GbtParams::default()).unwrap();
        assert!(r.constant_target);
        assert!(e.trees.is_empty());
        assert_eq!(e.predict(&[9.0]).unwrap(), 4.0);
    }

    #[test]
    fn input_errors() {
        let p = GbtParams::default();
        assert_eq!(fit(&names(1), &[vec![1.0]], &[1.0], &p), Err(GbtError::EmptyDataset));
        assert!(matches!(
            fit(&names(1), &[vec![1.0], vec![2.0]], &[1.0], &p),
            Err(GbtError::ShapeMismatch(_))
        ));
        assert!(matches!(
            fit(&names(2), &[vec![1.0], vec![2.0]], &[1.0, 2.0], &p),
            Err(GbtError::ShapeMismatch(_))
        ));
        assert!(matches!(
            fit(&names(1), &[vec![f64::NAN], vec![2.0]], &[1.0, 2.0], &p),
            Err(GbtError::NonFinite(_))
        ));
    }

    fn random_data(seed: u64, n: usize, nf: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..nf).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let y = rows
            .iter()
            .map(|r| r[0].sin() * 3.0 + r[1] * r.get(2).unwrap_or(&0.0) + rng.random_range(-1.0..1.0))
            .collect();
        (rows, y)
    }

    #[test]
    fn training_loss_never_increases() {
        let (rows, y) = random_data(11, 300, 3);
        for mono in [None, Some(0), Some(1)] {
            let params = GbtParams {
                monotone_feature: mono,
                num_rounds: 40,
                ..GbtParams::default()
            };
            let (_, r) = fit_with_report(&names(3), &rows, &y, &params).unwrap();
            for w in r.train_loss.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{mono:?}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn leaf_bounds_hold_and_constrained_predictions_decrease() {
        let (rows, y) = random_data(12, 400, 3);
        let params = GbtParams {
            monotone_feature: Some(0),
            num_rounds: 30,
            ..GbtParams::default()
        };
        let e = fit(&names(3), &rows, &y, &params).unwrap();
        for t in &e.trees {
            for n in &t.nodes {
                if let TreeNode::Leaf { weight, lo, hi } = n {
                    assert!(*lo <= *weight && *weight <= *hi);
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (b, c) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let mut prev = f64::INFINITY;
            for k in 0..=200 {
                let x = -3.5 + 7.0 * k as f64 / 200.0;
                let v = e.predict(&[x, b, c]).unwrap();
                assert!(v <= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn accepted_split_reduces_structure_score_by_gain() {
        let (rows, y) = random_data(13, 60, 2);
        let params = GbtParams {
            num_rounds: 1,
            max_depth: 1,
            reg_lambda: 0.7,
            min_split_gain: 0.05,
            ..GbtParams::default()
        };
        let e = fit(&names(2), &rows, &y, &params).unwrap();
        let TreeNode::Split { feature, threshold, .. } = e.trees[0].nodes[0] else {
            panic!("expected a split");
        };
        let base = e.base_score;
        let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
        for (r, t) in rows.iter().zip(&y) {
            let g = base - t;
            if r[feature] < threshold {
                gl += g;
                hl += 1.0;
            } else {
                gr += g;
                hr += 1.0;
            }
        }
        let lam = 0.7;
        let gamma = 0.05;
        let score = |terms: &[(f64, f64)]| {
            -0.5 * terms.iter().map(|(g, h)| g * g / (h + lam)).sum::<f64>() + gamma * terms.len() as f64
        };
        let before = score(&[(gl + gr, hl + hr)]);
        let after = score(&[(gl, hl), (gr, hr)]);
        let gain = split_gain(gl, hl, gr, hr, lam, gamma);
        assert!(gain > 0.0);
        assert!((before - after - gain).abs() < 1e-9);
    }

    #[test]
    fn deterministic() {
        let (rows, y) = random_data(14, 200, 3);
        let params = GbtParams {
            monotone_feature: Some(1),
            num_rounds: 10,
            ..GbtParams::default()
        };
        assert_eq!(
            fit(&names(3), &rows, &y, &params).unwrap(),
            fit(&names(3), &rows, &y, &params).unwrap()
        );
    }
}
