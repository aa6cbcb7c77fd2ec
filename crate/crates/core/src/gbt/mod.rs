//! Second-order gradient boosted regression trees under squared loss, with an
//! optional non-increasing constraint on one feature.
//!
//! Monotonicity is enforced in two layers. A split on the constrained feature
//! is admissible only if its left child weight is at least its right child
//! weight. In addition every node carries weight bounds: after a constrained
//! split at child weights `w_l >= w_r`, the left subtree is bounded below and
//! the right subtree above by `(w_l + w_r) / 2`, and any candidate split (on
//! any feature) whose child weights leave the node's bounds is rejected. Each
//! tree is therefore non-increasing in the constrained feature for every
//! setting of the other features, and so is their positive-weighted sum.

mod dump;
mod fit;
mod split;
mod step;

use thiserror::Error;

pub use dump::{dump_ensemble, load_ensemble};
pub use fit::{fit, fit_with_report, FitReport};
pub use split::{find_best_split, find_best_split_in, split_gain, SplitCandidate};
pub use step::{extract_step_function, step_to_piecewise_linear, StepFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GbtError {
    #[error("dataset is empty or has fewer than two samples")]
    EmptyDataset,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("empty domain [{lo}, {hi}]")]
    EmptyDomain { lo: f64, hi: f64 },
    #[error("ensemble has no constrained feature")]
    NoMonotoneFeature,
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Sensitivity(#[from] crate::sensitivity::SensitivityError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtParams {
    pub num_rounds: usize,
    pub max_depth: usize,
    /// L2 penalty on leaf weights.
    pub reg_lambda: f64,
    /// Complexity charge per extra leaf; a split must gain more than this.
    pub min_split_gain: f64,
    pub learning_rate: f64,
    /// Feature along which predictions must be non-increasing; `None` fits
    /// without constraints.
    pub monotone_feature: Option<usize>,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            num_rounds: 100,
            max_depth: 4,
            reg_lambda: 1.0,
            min_split_gain: 0.0,
            learning_rate: 0.1,
            monotone_feature: None,
        }
    }
}

impl GbtParams {
    pub fn validate(&self, num_features: usize) -> Result<(), GbtError> {
        let bad = |m: String| Err(GbtError::InvalidParams(m));
        if self.num_rounds == 0 || self.max_depth == 0 {
            return bad("num_rounds and max_depth must be at least 1".into());
        }
        if !(self.reg_lambda.is_finite() && self.reg_lambda >= 0.0) {
            return bad(format!("reg_lambda {} must be >= 0", self.reg_lambda));
        }
        if !(self.min_split_gain.is_finite() && self.min_split_gain >= 0.0) {
            return bad(format!("min_split_gain {} must be >= 0", self.min_split_gain));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate {} must lie in (0, 1]", self.learning_rate));
        }
        if let Some(p) = self.monotone_feature {
            if p >= num_features {
                return bad(format!("monotone feature {p} out of range"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        /// Samples with `x[feature] < threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
        lo: f64,
        hi: f64,
    },
}

/// Arena-stored tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(weight: f64) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf {
                weight,
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                TreeNode::Leaf { weight, .. } => return *weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if x[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Split { feature, .. } => Some(*feature),
            TreeNode::Leaf { .. } => None,
        })
    }

    pub fn leaf_weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { weight, .. } => Some(*weight),
            TreeNode::Split { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtEnsemble {
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub params: GbtParams,
    pub features: Vec<String>,
}

impl GbtEnsemble {
    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, GbtError> {
        if x.len() != self.features.len() {
            return Err(GbtError::ShapeMismatch(format!(
                "expected {} features, got {}",
                self.features.len(),
                x.len()
            )));
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let eta = self.params.learning_rate;
        self.trees
            .iter()
            .fold(self.base_score, |acc, t| acc + eta * t.predict(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn empty_ensemble_returns_base() {
        let e = GbtEnsemble {
            base_score: 2.5,
            trees: vec![],
            params: GbtParams::default(),
            features: names(2),
        };
        assert_eq!(e.predict(&[1.0, 2.0]).unwrap(), 2.5);
        assert!(matches!(e.predict(&[1.0]), Err(GbtError::ShapeMismatch(_))));
    }

    #[test]
    fn single_leaf_tree() {
        let e = GbtEnsemble {
            base_score: 1.0,
            trees: vec![Tree::leaf(4.0)],
            params: GbtParams {
                learning_rate: 0.25,
                ..GbtParams::default()
            },
            features: names(1),
        };
        assert_eq!(e.predict(&[0.0]).unwrap(), 2.0);
    }

    #[test]
    fn params_validation() {
        assert!(GbtParams::default().validate(1).is_ok());
        for p in [
            GbtParams { num_rounds: 0, ..GbtParams::default() },
            GbtParams { max_depth: 0, ..GbtParams::default() },
            GbtParams { reg_lambda: -1.0, ..GbtParams::default() },
            GbtParams { learning_rate: 0.0, ..GbtParams::default() },
            GbtParams { learning_rate: 1.5, ..GbtParams::default() },
            GbtParams { monotone_feature: Some(3), ..GbtParams::default() },
        ] {
            assert!(p.validate(3).is_err(), "{p:?}");
        }
    }
}
