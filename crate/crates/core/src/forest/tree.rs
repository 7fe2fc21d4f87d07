use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ForestError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf_size: usize,
    /// Number of candidate features drawn at each split.
    pub features_per_split: usize,
    pub bootstrap_fraction: f64,
    pub bootstrap_replace: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
        count: u32,
    },
}

/// Variance-reduction regression tree. Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    } as usize;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &RegressionTree, i: usize) -> usize {
            match &t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(t, *left as usize).max(walk(t, *right as usize))
                }
            }
        }
        walk(self, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }
}

struct Builder<'a, R> {
    xs: &'a [&'a [f64]],
    ys: &'a [f64],
    params: &'a TreeParams,
    dim: usize,
    rng: &'a mut R,
    nodes: Vec<TreeNode>,
}

/// Fits one tree on a bootstrap resample of `(xs, ys)`.
///
/// At each node a uniformly drawn subset of `features_per_split` features is
/// searched exhaustively for the threshold minimising the summed squared
/// error of the two children. Growth stops at `max_depth`, when a node holds
/// fewer than `2 * min_leaf_size` rows, when its targets are constant, or when
/// no split reduces the error.
pub fn fit_tree<R: Rng>(
    xs: &[&[f64]],
    ys: &[f64],
    params: &TreeParams,
    rng: &mut R,
) -> Result<RegressionTree, ForestError> {
    let n = ys.len();
    if xs.len() != n {
        return Err(ForestError::DimensionMismatch {
            expected: n,
            got: xs.len(),
        });
    }
    let min_leaf = params.min_leaf_size.max(1);
    if n == 0 || n < min_leaf {
        return Err(ForestError::TooFewSamples {
            have: n,
            need: min_leaf,
        });
    }
    let dim = xs[0].len();
    if let Some(bad) = xs.iter().find(|r| r.len() != dim) {
        return Err(ForestError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }

    let size = ((params.bootstrap_fraction * n as f64).round() as usize).clamp(
        1,
        if params.bootstrap_replace {
            usize::MAX
        } else {
            n
        },
    );
    let rows: Vec<usize> = if params.bootstrap_replace {
        (0..size).map(|_| rng.random_range(0..n)).collect()
    } else if size == n {
        (0..n).collect()
    } else {
        let mut v = index::sample(rng, n, size).into_vec();
        v.sort_unstable();
        v
    };

    let mut b = Builder {
        xs,
        ys,
        params,
        dim,
        rng,
        nodes: Vec::new(),
    };
    b.grow(rows, 0);
    Ok(RegressionTree { nodes: b.nodes })
}

impl<R: Rng> Builder<'_, R> {
    fn leaf(&mut self, rows: &[usize]) -> u32 {
        let value = rows.iter().map(|&r| self.ys[r]).sum::<f64>() / rows.len() as f64;
        self.nodes.push(TreeNode::Leaf {
            value,
            count: rows.len() as u32,
        });
        (self.nodes.len() - 1) as u32
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> u32 {
        let min_leaf = self.params.min_leaf_size.max(1);
        let n = rows.len();
        let constant = rows.iter().all(|&r| self.ys[r] == self.ys[rows[0]]);
        if depth >= self.params.max_depth || n < 2 * min_leaf || constant || self.dim == 0 {
            return self.leaf(&rows);
        }
        let Some((feature, threshold)) = self.best_split(&rows, min_leaf) else {
            return self.leaf(&rows);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.xs[i][feature] <= threshold);
        let me = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            value: 0.0,
            count: 0,
        });
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[me] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        me as u32
    }

    fn best_split(&mut self, rows: &[usize], min_leaf: usize) -> Option<(usize, f64)> {
        let m = self.params.features_per_split.clamp(1, self.dim);
        let mut feats = index::sample(self.rng, self.dim, m).into_vec();
        feats.sort_unstable();

        let n = rows.len();
        let ys = self.ys;
        let total: f64 = rows.iter().map(|&r| ys[r]).sum();
        let total_sq: f64 = rows.iter().map(|&r| ys[r] * ys[r]).sum();
        let parent_sse = total_sq - total * total / n as f64;

        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = rows.to_vec();
        for &f in &feats {
            let xs = self.xs;
            sorted.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]));
            let mut sum = 0.0;
            let mut sq = 0.0;
            for i in 1..n {
                let y = ys[sorted[i - 1]];
                sum += y;
                sq += y * y;
                if i < min_leaf || n - i < min_leaf {
                    continue;
                }
                let lo = xs[sorted[i - 1]][f];
                let hi = xs[sorted[i]][f];
                if lo == hi {
                    continue;
                }
                let (ln, rn) = (i as f64, (n - i) as f64);
                let rsum = total - sum;
                let sse = (sq - sum * sum / ln) + ((total_sq - sq) - rsum * rsum / rn);
                if best.is_none_or(|(b, _, _)| sse < b) {
                    let mut t = lo + (hi - lo) / 2.0;
                    if t >= hi {
                        t = lo;
                    }
                    best = Some((sse, f, t));
                }
            }
        }
        let (sse, f, t) = best?;
        let tol = 1e-12 * parent_sse.abs().max(1.0);
        (sse < parent_sse - tol).then_some((f, t))
    }
}
