//! Step function of a fitted ensemble along its constrained feature, and its
//! piecewise-linear interpolant.

use super::{GbtEnsemble, GbtError, TreeNode};
use crate::sensitivity::{PwlSensitivity, SensitivityBounds};

/// Piecewise-constant function on `[x_lo, x_hi]`: `levels[k]` holds on
/// `[breakpoints[k-1], breakpoints[k])` with the domain ends closing the
/// first and last intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    pub breakpoints: Vec<f64>,
    pub levels: Vec<f64>,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl StepFunction {
    pub fn interval_start(&self, k: usize) -> f64 {
        if k == 0 {
            self.x_lo
        } else {
            self.breakpoints[k - 1]
        }
    }

    pub fn interval_end(&self, k: usize) -> f64 {
        self.breakpoints.get(k).copied().unwrap_or(self.x_hi)
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        0.5 * (self.interval_start(k) + self.interval_end(k))
    }

    pub fn value_at(&self, x: f64) -> f64 {
        self.levels[self.breakpoints.partition_point(|b| *b <= x)]
    }

    /// Moves the function right by `dx`.
    pub fn translate(&self, dx: f64) -> Self {
        Self {
            breakpoints: self.breakpoints.iter().map(|b| b + dx).collect(),
            levels: self.levels.clone(),
            x_lo: self.x_lo + dx,
            x_hi: self.x_hi + dx,
        }
    }

    pub fn is_non_increasing(&self) -> bool {
        self.levels.windows(2).all(|w| w[1] <= w[0])
    }

    /// Largest absolute difference between neighbouring levels.
    pub fn max_jump(&self) -> f64 {
        self.levels
            .windows(2)
            .map(|w| (w[0] - w[1]).abs())
            .fold(0.0, f64::max)
    }
}

/// Steps of the ensemble along its constrained feature with every other
/// feature fixed at `context` (the constrained coordinate of `context` is
/// ignored).
pub fn extract_step_function(
    ensemble: &GbtEnsemble,
    context: &[f64],
    x_lo: f64,
    x_hi: f64,
) -> Result<StepFunction, GbtError> {
    let p = ensemble
        .params
        .monotone_feature
        .ok_or(GbtError::NoMonotoneFeature)?;
    extract_along(ensemble, p, context, x_lo, x_hi)
}

pub(crate) fn extract_along(
    ensemble: &GbtEnsemble,
    p: usize,
    context: &[f64],
    x_lo: f64,
    x_hi: f64,
) -> Result<StepFunction, GbtError> {
    if !(x_lo < x_hi) || !x_lo.is_finite() || !x_hi.is_finite() {
        return Err(GbtError::EmptyDomain { lo: x_lo, hi: x_hi });
    }
    if context.len() != ensemble.num_features() {
        return Err(GbtError::ShapeMismatch(format!(
            "context has {} features, expected {}",
            context.len(),
            ensemble.num_features()
        )));
    }
    let mut cuts = Vec::new();
    for tree in &ensemble.trees {
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            if let TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } = &tree.nodes[id]
            {
                if *feature == p {
                    cuts.push(*threshold);
                    stack.push(*left);
                    stack.push(*right);
                } else if context[*feature] < *threshold {
                    stack.push(*left);
                } else {
                    stack.push(*right);
                }
            }
        }
    }
    cuts.retain(|t| *t > x_lo && *t < x_hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut step = StepFunction {
        breakpoints: cuts,
        levels: Vec::new(),
        x_lo,
        x_hi,
    };
    let mut x = context.to_vec();
    step.levels = (0..=step.breakpoints.len())
        .map(|k| {
            x[p] = step.midpoint(k);
            ensemble.predict_unchecked(&x)
        })
        .collect();
    Ok(step)
}

/// Connects the interval midpoints of `step` at their levels, holds the end
/// levels flat to the domain ends and re-bases so the shift at 0 is 0. The
/// domain must contain 0.
pub fn step_to_piecewise_linear(step: &StepFunction, hour: usize) -> Result<PwlSensitivity, GbtError> {
    let bounds = SensitivityBounds::new(step.x_lo, step.x_hi)?;
    let knots: Vec<(f64, f64)> = (0..step.levels.len())
        .map(|k| (step.midpoint(k), step.levels[k]))
        .collect();
    Ok(PwlSensitivity::from_knots(hour, &knots, bounds)?)
}

#[cfg(test)]
mod tests {
    use super::super::{fit, GbtParams, Tree};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stump() -> GbtEnsemble {
        GbtEnsemble {
            base_score: 0.0,
            trees: vec![Tree {
                nodes: vec![
                    TreeNode::Split {
                        feature: 0,
                        threshold: 0.0,
                        left: 1,
                        right: 2,
                    },
                    TreeNode::Leaf {
                        weight: 1.0,
                        lo: 0.0,
                        hi: f64::INFINITY,
                    },
                    TreeNode::Leaf {
                        weight: -1.0,
                        lo: f64::NEG_INFINITY,
                        hi: 0.0,
                    },
                ],
            }],
            params: GbtParams {
                learning_rate: 1.0,
                monotone_feature: Some(0),
                ..GbtParams::default()
            },
            features: vec!["q".into()],
        }
    }

    #[test]
    fn single_constrained_split() {
        let s = extract_step_function(&stump(), &[0.0], -10.0, 10.0).unwrap();
        assert_eq!(s.breakpoints, vec![0.0]);
        assert_eq!(s.levels, vec![1.0, -1.0]);
    }

    #[test]
    fn no_constrained_splits_gives_one_level() {
        let mut e = stump();
        e.trees = vec![Tree::leaf(0.5)];
        let s = extract_step_function(&e, &[0.0], -1.0, 1.0).unwrap();
        assert!(s.breakpoints.is_empty());
        assert_eq!(s.levels, vec![e.base_score + 0.1 * 0.5 * 10.0]);
    }

    #[test]
    fn empty_domain() {
        assert!(matches!(
            extract_step_function(&stump(), &[0.0], 1.0, 1.0),
            Err(GbtError::EmptyDomain { .. })
        ));
    }

    #[test]
    fn two_level_interpolant() {
        let s = extract_step_function(&stump(), &[0.0], -10.0, 10.0).unwrap();
        let p = step_to_piecewise_linear(&s, 0).unwrap();
        // knots (-5, 1), (5, -1): slope -0.2 between them
        assert_eq!(p.num_segments(), 3);
        assert!((p.segments[1].slope + 0.2).abs() < 1e-15);
        assert_eq!(p.shift_at(0.0).unwrap(), 0.0);
        assert!((p.shift_at(-10.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((p.shift_at(10.0).unwrap() + 1.0).abs() < 1e-12);
        assert!(p.validate().is_empty());
    }

    #[test]
    fn constant_step_gives_flat_segment() {
        let s = StepFunction {
            breakpoints: vec![],
            levels: vec![3.0],
            x_lo: -4.0,
            x_hi: 4.0,
        };
        let p = step_to_piecewise_linear(&s, 0).unwrap();
        assert_eq!(p.num_segments(), 1);
        assert_eq!(p.segments[0].slope, 0.0);
        assert_eq!(p.segments[0].intercept, 0.0);
    }

    #[test]
    fn fitted_steps_match_grid_and_interpolant_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..5 {
            let rows: Vec<Vec<f64>> = (0..300)
                .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-20.0..20.0)])
                .collect();
            let y: Vec<f64> = rows
                .iter()
                .map(|r| 3.0 * r[0] - 0.4 * r[1] + 2.0 * (r[1] / 5.0).sin() + rng.random_range(-1.0..1.0))
                .collect();
            let params = GbtParams {
                monotone_feature: Some(1),
                num_rounds: 30,
                ..GbtParams::default()
            };
            let e = fit(&["a".into(), "q".into()], &rows, &y, &params).unwrap();
            let ctx = [rng.random_range(-1.0..1.0), 0.0];
            let s = extract_step_function(&e, &ctx, -25.0, 25.0).unwrap();
            assert!(s.is_non_increasing(), "trial {trial}");
            for k in 0..1000 {
                let x = -25.0 + 50.0 * (k as f64 + 0.5) / 1000.0;
                let direct = e.predict(&[ctx[0], x]).unwrap();
                assert_eq!(s.value_at(x), direct, "x = {x}");
            }
            let p = step_to_piecewise_linear(&s, 0).unwrap();
            assert!(p.validate().is_empty());
            let first = s.levels[0];
            let last = *s.levels.last().unwrap();
            let drop = p.shift_at(-25.0).unwrap() - p.shift_at(25.0).unwrap();
            assert!((drop - (first - last)).abs() < 1e-9);
            let offset = first - p.shift_at(-25.0).unwrap();
            for k in 0..=500 {
                let x = -25.0 + 50.0 * k as f64 / 500.0;
                let dev = (p.shift_at(x).unwrap() + offset - s.value_at(x)).abs();
                assert!(dev <= s.max_jump() + 1e-9);
            }
        }
    }

    #[test]
    fn translation() {
        let s = extract_step_function(&stump(), &[0.0], -10.0, 10.0).unwrap();
        let t = s.translate(-3.0);
        assert_eq!(t.breakpoints, vec![-3.0]);
        assert_eq!((t.x_lo, t.x_hi), (-13.0, 7.0));
        assert_eq!(t.levels, s.levels);
    }
}
