use rand::Rng;

use crate::numkernel::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        count: usize,
    },
}

/// CART regression tree stored as a flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub max_features: usize,
}

struct Builder<'a, R> {
    x: &'a DenseMatrix,
    y: &'a [f64],
    params: TreeParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
    features: Vec<usize>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl RegressionTree {
    /// Grows a tree on the rows listed in `sample` (duplicates allowed).
    pub(crate) fn grow<R: Rng>(
        x: &DenseMatrix,
        y: &[f64],
        sample: Vec<usize>,
        params: TreeParams,
        rng: &mut R,
    ) -> Self {
        let mut b = Builder {
            x,
            y,
            params,
            rng,
            nodes: Vec::new(),
            features: (0..x.cols()).collect(),
        };
        b.build(sample, 0);
        RegressionTree { nodes: b.nodes }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value, count } => Some((*value, *count)),
            Node::Split { .. } => None,
        })
    }
}

impl<R: Rng> Builder<'_, R> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let value = rows.iter().map(|&i| self.y[i]).sum::<f64>() / rows.len() as f64;
        self.nodes.push(Node::Leaf {
            value,
            count: rows.len(),
        });
        self.nodes.len() - 1
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let n = rows.len();
        let p = self.params;
        let depth_ok = p.max_depth.is_none_or(|d| depth < d);
        let first = self.y[rows[0]];
        let constant = rows.iter().all(|&i| self.y[i] == first);
        if !depth_ok || n < p.min_samples_split || n < 2 * p.min_samples_leaf || constant {
            return self.leaf(&rows);
        }
        let Some(best) = self.find_split(&rows) else {
            return self.leaf(&rows);
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x[(i, best.feature)] <= best.threshold);
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0, count: 0 });
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[slot] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        slot
    }

    /// Partial Fisher-Yates draw of `max_features` candidate features.
    fn sample_features(&mut self) -> Vec<usize> {
        let m = self.params.max_features.min(self.features.len());
        let len = self.features.len();
        for i in 0..m {
            let j = self.rng.random_range(i..len);
            self.features.swap(i, j);
        }
        self.features[..m].to_vec()
    }

    fn find_split(&mut self, rows: &[usize]) -> Option<BestSplit> {
        let n = rows.len();
        let min_leaf = self.params.min_samples_leaf;
        let total: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let parent_score = total * total / n as f64;
        let mut best: Option<BestSplit> = None;
        let mut sorted = rows.to_vec();
        for feature in self.sample_features() {
            let x = self.x;
            sorted.sort_by(|&a, &b| x[(a, feature)].total_cmp(&x[(b, feature)]));
            let mut left_sum = 0.0;
            for k in 1..n {
                left_sum += self.y[sorted[k - 1]];
                if k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let lo = x[(sorted[k - 1], feature)];
                let hi = x[(sorted[k], feature)];
                if lo >= hi {
                    continue;
                }
                let right_sum = total - left_sum;
                // maximizing this is minimizing the children's summed SSE
                let score =
                    left_sum * left_sum / k as f64 + right_sum * right_sum / (n - k) as f64;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(BestSplit {
                        feature,
                        threshold,
                        score,
                    });
                }
            }
        }
        best.filter(|b| b.score > parent_score * (1.0 + 1e-12) + 1e-300)
    }
}
