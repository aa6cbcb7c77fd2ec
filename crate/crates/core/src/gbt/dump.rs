//! Versioned text serialization of an ensemble (trees in preorder).
//!
//! ```text
//! vbid-gbt 1
//! feature <name>            one line per feature, in order
//! monotone_feature <k|none>
//! num_rounds <n>
//! max_depth <n>
//! reg_lambda <f>
//! min_split_gain <f>
//! learning_rate <f>
//! base_score <f>
//! trees <n>
//! S <feature> <threshold>   split, followed by its left then right subtree
//! L <weight> <lo> <hi>      leaf
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so loading reproduces
//! predictions bit for bit.

use std::fmt::Write as _;

use super::{GbtEnsemble, GbtError, GbtParams, Tree, TreeNode};

const MAGIC: &str = "vbid-gbt 1";

pub fn dump_ensemble(e: &GbtEnsemble) -> String {
    let mut s = String::new();
    let p = &e.params;
    writeln!(s, "{MAGIC}").unwrap();
    for f in &e.features {
        writeln!(s, "feature {f}").unwrap();
    }
    match p.monotone_feature {
        Some(k) => writeln!(s, "monotone_feature {k}").unwrap(),
        None => writeln!(s, "monotone_feature none").unwrap(),
    }
    writeln!(s, "num_rounds {}", p.num_rounds).unwrap();
    writeln!(s, "max_depth {}", p.max_depth).unwrap();
    writeln!(s, "reg_lambda {}", p.reg_lambda).unwrap();
    writeln!(s, "min_split_gain {}", p.min_split_gain).unwrap();
    writeln!(s, "learning_rate {}", p.learning_rate).unwrap();
    writeln!(s, "base_score {}", e.base_score).unwrap();
    writeln!(s, "trees {}", e.trees.len()).unwrap();
    for t in &e.trees {
        write_node(&mut s, t, 0);
    }
    s
}

fn write_node(s: &mut String, t: &Tree, id: usize) {
    match &t.nodes[id] {
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            writeln!(s, "S {feature} {threshold}").unwrap();
            write_node(s, t, *left);
            write_node(s, t, *right);
        }
        TreeNode::Leaf { weight, lo, hi } => writeln!(s, "L {weight} {lo} {hi}").unwrap(),
    }
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, GbtError> {
        match self.iter.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn err(&self, m: &str) -> GbtError {
        GbtError::Format {
            line: self.line,
            message: m.to_string(),
        }
    }

    fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, GbtError> {
        let l = self.next()?;
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| self.err(&format!("expected `{key} <value>`")))
    }
}

pub fn load_ensemble(text: &str) -> Result<GbtEnsemble, GbtError> {
    let mut lines = Lines {
        iter: text.lines().enumerate(),
        line: 0,
    };
    if lines.next()? != MAGIC {
        return Err(lines.err("not a vbid-gbt v1 model"));
    }
    let mut features = Vec::new();
    let mut line = lines.next()?;
    while let Some(name) = line.strip_prefix("feature ") {
        features.push(name.to_string());
        line = lines.next()?;
    }
    let monotone_feature = match line.strip_prefix("monotone_feature ") {
        Some("none") => None,
        Some(v) => Some(v.parse().map_err(|_| lines.err("bad monotone feature"))?),
        None => return Err(lines.err("expected `monotone_feature`")),
    };
    let params = GbtParams {
        num_rounds: lines.keyed("num_rounds")?,
        max_depth: lines.keyed("max_depth")?,
        reg_lambda: lines.keyed("reg_lambda")?,
        min_split_gain: lines.keyed("min_split_gain")?,
        learning_rate: lines.keyed("learning_rate")?,
        monotone_feature,
    };
    params.validate(features.len())?;
    let base_score: f64 = lines.keyed("base_score")?;
    let num_trees: usize = lines.keyed("trees")?;
    let mut trees = Vec::with_capacity(num_trees);
    for _ in 0..num_trees {
        let mut nodes = Vec::new();
        read_node(&mut lines, &mut nodes, features.len(), 0)?;
        trees.push(Tree { nodes });
    }
    if let Some((i, l)) = lines.iter.find(|(_, l)| !l.trim().is_empty()) {
        return Err(GbtError::Format {
            line: i + 1,
            message: format!("trailing content `{l}`"),
        });
    }
    Ok(GbtEnsemble {
        base_score,
        trees,
        params,
        features,
    })
}

fn read_node(
    lines: &mut Lines<'_>,
    nodes: &mut Vec<TreeNode>,
    num_features: usize,
    depth: usize,
) -> Result<usize, GbtError> {
    if depth > 64 {
        return Err(lines.err("tree too deep"));
    }
    let l = lines.next()?;
    let parts: Vec<&str> = l.split(' ').collect();
    let id = nodes.len();
    match parts.as_slice() {
        ["S", f, t] => {
            let feature: usize = f.parse().map_err(|_| lines.err("bad feature"))?;
            let threshold: f64 = t.parse().map_err(|_| lines.err("bad threshold"))?;
            if feature >= num_features {
                return Err(lines.err("feature index out of range"));
            }
            nodes.push(TreeNode::Leaf {
                weight: 0.0,
                lo: 0.0,
                hi: 0.0,
            });
            let left = read_node(lines, nodes, num_features, depth + 1)?;
            let right = read_node(lines, nodes, num_features, depth + 1)?;
            nodes[id] = TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            };
        }
        ["L", w, lo, hi] => {
            let parse = |s: &str| s.parse::<f64>().map_err(|_| lines.err("bad leaf number"));
            nodes.push(TreeNode::Leaf {
                weight: parse(w)?,
                lo: parse(lo)?,
                hi: parse(hi)?,
            });
        }
        _ => return Err(lines.err("expected `S` or `L` node")),
    }
    Ok(id)
}

#[cfg(test)]
mod tests {
    use super::super::fit;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..150)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * 0.3 - r[1].powi(3)).collect();
        let params = GbtParams {
            monotone_feature: Some(1),
            num_rounds: 15,
            ..GbtParams::default()
        };
        let e = fit(&["load forecast".into(), "q".into()], &rows, &y, &params).unwrap();
        let text = dump_ensemble(&e);
        let back = load_ensemble(&text).unwrap();
        assert_eq!(back, e);
        assert_eq!(dump_ensemble(&back), text);
        assert!(text.contains("L ") && text.contains(" inf"));
    }

    #[test]
    fn rejects_malformed() {
        assert!(load_ensemble("").is_err());
        assert!(load_ensemble("vbid-gbt 2\n").is_err());
        let e = GbtEnsemble {
            base_score: 1.0,
            trees: vec![Tree::leaf(2.0)],
            params: GbtParams::default(),
            features: vec!["a".into()],
        };
        let text = dump_ensemble(&e);
        assert_eq!(load_ensemble(&text).unwrap(), e);
        assert!(load_ensemble(&text.replace("L 2", "X 2")).is_err());
        assert!(load_ensemble(&format!("{text}L 1 0 0\n")).is_err());
        assert!(load_ensemble(&text.replace("trees 1", "trees 2")).is_err());
    }
}
