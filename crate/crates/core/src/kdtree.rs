//! Static 3-D KD-tree for radius and bounded nearest-neighbor queries.
//!
//! All radius predicates are strict: a point `p` is within `r` of `q` when
//! `|p - q|² < r²`.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    /// Original index of each reordered point.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[inline]
pub fn dist_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl KdTree {
    pub fn build(points: &[Vector3<f64>]) -> Self {
        let mut items: Vec<([f64; 3], usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ([p.x, p.y, p.z], i))
            .collect();
        let mut nodes = Vec::new();
        if !items.is_empty() {
            let n = items.len();
            build_node(&mut items, 0, n, &mut nodes);
        }
        KdTree {
            points: items.iter().map(|it| it.0).collect(),
            order: items.iter().map(|it| it.1).collect(),
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of points strictly within `r` of `q`, stopping early once
    /// `limit` is reached.
    pub fn count_within(&self, q: &Vector3<f64>, r: f64, limit: usize) -> usize {
        let q = [q.x, q.y, q.z];
        let mut count = 0;
        if !self.nodes.is_empty() {
            self.visit(0, &q, r * r, &mut |_, _| {
                count += 1;
                count < limit
            });
        }
        count
    }

    /// All `(index, squared distance)` pairs strictly within `r`, sorted by
    /// distance then index.
    pub fn within(&self, q: &Vector3<f64>, r: f64) -> Vec<(usize, f64)> {
        let qa = [q.x, q.y, q.z];
        let mut out = Vec::new();
        if !self.nodes.is_empty() {
            self.visit(0, &qa, r * r, &mut |i, d2| {
                out.push((i, d2));
                true
            });
        }
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    /// Up to `k` nearest points strictly within `r`, ordered by distance
    /// then index. Same result as the first `k` of [`KdTree::within`].
    pub fn nearest_within(&self, q: &Vector3<f64>, r: f64, k: usize) -> Vec<(usize, f64)> {
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.knn(0, &[q.x, q.y, q.z], r * r, k, &mut best);
        }
        best
    }

    fn knn(&self, node: usize, q: &[f64; 3], r2: f64, k: usize, best: &mut Vec<(usize, f64)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for j in start..end {
                    let d2 = dist_sq(&self.points[j], q);
                    if d2 >= r2 {
                        continue;
                    }
                    let cand = (self.order[j], d2);
                    let before = |a: &(usize, f64), b: &(usize, f64)| a.1 < b.1 || (a.1 == b.1 && a.0 < b.0);
                    if best.len() == k && !before(&cand, &best[k - 1]) {
                        continue;
                    }
                    let at = best.partition_point(|e| before(e, &cand));
                    best.insert(at, cand);
                    best.truncate(k);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.knn(near, q, r2, k, best);
                let bound = if best.len() == k { best[k - 1].1 } else { r2 };
                if diff * diff < r2 && diff * diff <= bound {
                    self.knn(far, q, r2, k, best);
                }
            }
        }
    }

    /// Depth-first traversal; `f` returns `false` to stop.
    fn visit(&self, node: usize, q: &[f64; 3], r2: f64, f: &mut impl FnMut(usize, f64) -> bool) -> bool {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for j in start..end {
                    let d2 = dist_sq(&self.points[j], q);
                    if d2 < r2 && !f(self.order[j], d2) {
                        return false;
                    }
                }
                true
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                if !self.visit(near, q, r2, f) {
                    return false;
                }
                if diff * diff < r2 {
                    return self.visit(far, q, r2, f);
                }
                true
            }
        }
    }
}

fn build_node(items: &mut [([f64; 3], usize)], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut items[start..end];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (p, _) in slice.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    if hi[axis] - lo[axis] == 0.0 {
        // all coincident
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |a, b| a.0[axis].total_cmp(&b.0[axis]));
    let value = slice[mid].0[axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build_node(items, start, start + mid, nodes);
    let right = build_node(items, start + mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}
