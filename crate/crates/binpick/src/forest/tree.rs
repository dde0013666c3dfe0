use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Flat binary decision tree; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub(crate) nodes: Vec<Node>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        /// Fraction of successes among the training rows in this node.
        success_rate: f64,
    },
}

/// Borrowed dense training view: row-major features plus labels.
pub(crate) struct DenseData<'a> {
    pub features: &'a [Vec<f64>],
    pub labels: &'a [bool],
}

impl DenseData<'_> {
    fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// Gini impurity of a two-class node.
fn gini(successes: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = successes as f64 / total as f64;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

impl DecisionTree {
    /// Fits a tree on the rows selected by `indices`.
    ///
    /// Splits minimize the size-weighted Gini impurity over exhaustive
    /// thresholds (midpoints of consecutive distinct values) of a random
    /// feature subset; a branch terminates at `max_depth`, purity, fewer
    /// than two rows, or when no split strictly decreases impurity. The
    /// result depends only on the multiset of selected rows, not their
    /// order.
    pub(crate) fn fit(
        data: &DenseData,
        indices: &[u32],
        max_depth: usize,
        features_per_split: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut tree = DecisionTree { nodes: Vec::new() };
        let mut scratch = indices.to_vec();
        // Canonical order: makes fitting independent of the caller's
        // index order (ties in feature values included).
        scratch.sort_unstable();
        tree.build(data, &mut scratch, 0, max_depth, features_per_split, rng);
        tree
    }

    fn build(
        &mut self,
        data: &DenseData,
        indices: &mut [u32],
        depth: usize,
        max_depth: usize,
        features_per_split: usize,
        rng: &mut ChaCha8Rng,
    ) -> u32 {
        let n = indices.len();
        let successes = indices
            .iter()
            .filter(|&&i| data.labels[i as usize])
            .count();
        let node_index = self.nodes.len() as u32;
        let leaf = Node::Leaf {
            success_rate: successes as f64 / n.max(1) as f64,
        };
        if depth >= max_depth || n < 2 || successes == 0 || successes == n {
            self.nodes.push(leaf);
            return node_index;
        }

        let parent_gini = gini(successes, n);
        let dim = data.dim();
        let mut chosen =
            rand::seq::index::sample(rng, dim, features_per_split.min(dim)).into_vec();
        chosen.sort_unstable();

        let mut best: Option<(f64, usize, f64)> = None; // (weighted gini, feature, threshold)
        let mut order: Vec<u32> = indices.to_vec();
        for &feature in &chosen {
            order.sort_by(|&a, &b| {
                data.features[a as usize][feature].total_cmp(&data.features[b as usize][feature])
            });
            // Scan boundaries between distinct consecutive values.
            let mut left_n = 0usize;
            let mut left_s = 0usize;
            for w in 0..n - 1 {
                let i = order[w] as usize;
                left_n += 1;
                left_s += data.labels[i] as usize;
                let v0 = data.features[i][feature];
                let v1 = data.features[order[w + 1] as usize][feature];
                if v1 <= v0 {
                    continue;
                }
                let threshold = (v0 + v1) / 2.0;
                let right_n = n - left_n;
                let right_s = successes - left_s;
                let weighted = (left_n as f64 * gini(left_s, left_n)
                    + right_n as f64 * gini(right_s, right_n))
                    / n as f64;
                let better = match best {
                    None => weighted < parent_gini - 1e-12,
                    Some((bw, _, _)) => weighted < bw - 1e-12,
                };
                if better {
                    best = Some((weighted, feature, threshold));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            self.nodes.push(leaf);
            return node_index;
        };

        // Partition in place: rows with value < threshold go left.
        indices.sort_by(|&a, &b| {
            let va = data.features[a as usize][feature] >= threshold;
            let vb = data.features[b as usize][feature] >= threshold;
            va.cmp(&vb).then(a.cmp(&b))
        });
        let split_at = indices
            .iter()
            .position(|&i| data.features[i as usize][feature] >= threshold)
            .expect("both sides nonempty by construction");

        self.nodes.push(Node::Split {
            feature,
            threshold,
            left: 0,
            right: 0,
        });
        let (left_slice, right_slice) = indices.split_at_mut(split_at);
        let left = self.build(data, left_slice, depth + 1, max_depth, features_per_split, rng);
        let right = self.build(
            data,
            right_slice,
            depth + 1,
            max_depth,
            features_per_split,
            rng,
        );
        match &mut self.nodes[node_index as usize] {
            Node::Split {
                left: l, right: r, ..
            } => {
                *l = left;
                *r = right;
            }
            Node::Leaf { .. } => unreachable!(),
        }
        node_index
    }

    /// Success rate at the leaf reached by `features`.
    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut node = 0usize;
        loop {
            match &self.nodes[node] {
                Node::Leaf { success_rate } => return *success_rate,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if features[*feature] < *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }
}
