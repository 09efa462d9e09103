//! Minimal static kd-tree for k-nearest-neighbour distances in low dimension.

const LEAF: usize = 12;

enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// kd-tree over points stored row-major in `data` with `dim` columns.
pub struct KdTree<'a> {
    data: &'a [f64],
    dim: usize,
    idx: Vec<usize>,
    root: Node,
}

impl<'a> KdTree<'a> {
    /// Build over the points listed in `subset`.
    pub fn build(data: &'a [f64], dim: usize, subset: Vec<usize>) -> Self {
        let mut idx = subset;
        let n = idx.len();
        let root = Self::build_rec(data, dim, &mut idx, 0, n, 0);
        Self { data, dim, idx, root }
    }

    fn build_rec(data: &[f64], dim: usize, idx: &mut [usize], start: usize, end: usize, depth: usize) -> Node {
        if end - start <= LEAF {
            return Node::Leaf { start, end };
        }
        // Split on the axis of largest spread.
        let mut axis = depth % dim;
        let mut best = -1.0;
        for ax in 0..dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &p in &idx[start..end] {
                let v = data[p * dim + ax];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best {
                best = hi - lo;
                axis = ax;
            }
        }
        let mid = (start + end) / 2;
        idx[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            data[a * dim + axis].total_cmp(&data[b * dim + axis])
        });
        let value = data[idx[mid] * dim + axis];
        let left = Box::new(Self::build_rec(data, dim, idx, start, mid, depth + 1));
        let right = Box::new(Self::build_rec(data, dim, idx, mid, end, depth + 1));
        Node::Split {
            axis,
            value,
            left,
            right,
        }
    }

    /// Distance from point `q` (an index into `data`) to its `k`-th nearest
    /// neighbour among the tree points, excluding `q` itself.
    pub fn kth_distance(&self, q: usize, k: usize) -> f64 {
        let mut best = vec![f64::INFINITY; k];
        let query = &self.data[q * self.dim..(q + 1) * self.dim];
        self.search(&self.root, q, query, &mut best);
        best[k - 1].sqrt()
    }

    fn search(&self, node: &Node, q: usize, query: &[f64], best: &mut [f64]) {
        match node {
            Node::Leaf { start, end } => {
                for &p in &self.idx[*start..*end] {
                    if p == q {
                        continue;
                    }
                    let row = &self.data[p * self.dim..(p + 1) * self.dim];
                    let d2: f64 = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
                    let k = best.len();
                    if d2 < best[k - 1] {
                        let mut pos = k - 1;
                        while pos > 0 && best[pos - 1] > d2 {
                            best[pos] = best[pos - 1];
                            pos -= 1;
                        }
                        best[pos] = d2;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[*axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, query, best);
                if diff * diff < best[best.len() - 1] {
                    self.search(far, q, query, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_brute_force() {
        let n = 300;
        let dim = 3;
        let data: Vec<f64> = (0..n * dim).map(|i| ((i * 7919) % 1009) as f64 / 1009.0).collect();
        let tree = KdTree::build(&data, dim, (0..n).collect());
        for q in [0, 17, 299] {
            let mut ds: Vec<f64> = (0..n)
                .filter(|&p| p != q)
                .map(|p| {
                    (0..dim)
                        .map(|a| (data[p * dim + a] - data[q * dim + a]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            ds.sort_by(f64::total_cmp);
            for k in 1..4 {
                assert!((tree.kth_distance(q, k) - ds[k - 1]).abs() < 1e-12);
            }
        }
    }
}
