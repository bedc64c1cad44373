//! Exact nearest-neighbour search with a static k-d tree.
//!
//! Results are ordered by `(squared distance, index)`, so ties resolve to
//! the lowest point index exactly like a linear scan would.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::scalar::{squared_distance, Real};

const LEAF: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct KdTree<T> {
    points: Vec<Vec<T>>,
    /// Point indices laid out as an implicit balanced tree over ranges.
    order: Vec<usize>,
    /// Split axis of the node stored at each position of `order`.
    axis: Vec<usize>,
    dim: usize,
}

#[derive(Clone, Copy)]
struct Hit<T> {
    d2: T,
    index: usize,
}

impl<T: Real> PartialEq for Hit<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Real> Eq for Hit<T> {}
impl<T: Real> PartialOrd for Hit<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Real> Ord for Hit<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .partial_cmp(&other.d2)
            .unwrap_or(Ordering::Equal)
            .then(self.index.cmp(&other.index))
    }
}

impl<T: Real> KdTree<T> {
    /// Points must share one dimension and be finite.
    pub fn new(points: Vec<Vec<T>>) -> Self {
        let dim = points.first().map_or(0, Vec::len);
        let n = points.len();
        let mut tree = Self {
            points,
            order: (0..n).collect(),
            axis: vec![0; n],
            dim,
        };
        if dim > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<T>] {
        &self.points
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= LEAF {
            return;
        }
        // split on the widest coordinate of this range
        let mut best = (0, T::neg_infinity());
        for a in 0..self.dim {
            let (mut mn, mut mx) = (T::infinity(), T::neg_infinity());
            for &i in &self.order[lo..hi] {
                let v = self.points[i][a];
                mn = mn.min(v);
                mx = mx.max(v);
            }
            if mx - mn > best.1 {
                best = (a, mx - mn);
            }
        }
        let a = best.0;
        let mid = lo + (hi - lo) / 2;
        let pts = &self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&i, &j| {
            pts[i][a]
                .partial_cmp(&pts[j][a])
                .unwrap_or(Ordering::Equal)
                .then(i.cmp(&j))
        });
        self.axis[mid] = a;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    /// Nearest point as `(index, squared distance)`.
    pub fn nearest(&self, x: &[T]) -> Option<(usize, T)> {
        let mut best = Hit {
            d2: T::infinity(),
            index: usize::MAX,
        };
        self.nearest_in(x, 0, self.points.len(), &mut best);
        (best.index != usize::MAX).then_some((best.index, best.d2))
    }

    fn nearest_in(&self, x: &[T], lo: usize, hi: usize, best: &mut Hit<T>) {
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                let h = Hit {
                    d2: squared_distance(&self.points[i], x),
                    index: i,
                };
                if h < *best {
                    *best = h;
                }
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let i = self.order[mid];
        let h = Hit {
            d2: squared_distance(&self.points[i], x),
            index: i,
        };
        if h < *best {
            *best = h;
        }
        let diff = x[self.axis[mid]] - self.points[i][self.axis[mid]];
        let (near, far) = if diff < T::zero() {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_in(x, near.0, near.1, best);
        if diff * diff <= best.d2 {
            self.nearest_in(x, far.0, far.1, best);
        }
    }

    /// The `k` nearest points as `(index, squared distance)`, closest first.
    pub fn knn(&self, x: &[T], k: usize) -> Vec<(usize, T)> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.knn_in(x, k, 0, self.points.len(), &mut heap);
        }
        heap.into_sorted_vec()
            .into_iter()
            .map(|h| (h.index, h.d2))
            .collect()
    }

    fn offer(heap: &mut BinaryHeap<Hit<T>>, k: usize, h: Hit<T>) {
        if heap.len() < k {
            heap.push(h);
        } else if h < *heap.peek().unwrap() {
            heap.pop();
            heap.push(h);
        }
    }

    fn knn_in(&self, x: &[T], k: usize, lo: usize, hi: usize, heap: &mut BinaryHeap<Hit<T>>) {
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                let d2 = squared_distance(&self.points[i], x);
                Self::offer(heap, k, Hit { d2, index: i });
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let i = self.order[mid];
        let d2 = squared_distance(&self.points[i], x);
        Self::offer(heap, k, Hit { d2, index: i });
        let diff = x[self.axis[mid]] - self.points[i][self.axis[mid]];
        let (near, far) = if diff < T::zero() {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_in(x, k, near.0, near.1, heap);
        if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
            self.knn_in(x, k, far.0, far.1, heap);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(points: &[Vec<f64>], x: &[f64], k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, squared_distance(p, x)))
            .collect();
        all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn empty_tree() {
        let t = KdTree::<f64>::new(vec![]);
        assert!(t.nearest(&[0.0]).is_none());
        assert!(t.knn(&[0.0], 3).is_empty());
    }

    proptest! {
        // integer grid coordinates force many exact distance ties
        #[test]
        fn matches_linear_scan(
            pts in proptest::collection::vec((-5i32..5, -5i32..5, -3i32..3), 1..200),
            q in (-6i32..6, -6i32..6, -4i32..4),
            k in 1usize..12,
        ) {
            let points: Vec<Vec<f64>> = pts.iter().map(|&(a, b, c)| vec![a as f64, b as f64, c as f64]).collect();
            let x = [q.0 as f64, q.1 as f64, q.2 as f64];
            let tree = KdTree::new(points.clone());
            let want = brute(&points, &x, k);
            prop_assert_eq!(tree.knn(&x, k), want.clone());
            prop_assert_eq!(tree.nearest(&x), want.first().copied());
        }
    }
}
