//! Voronoi partition of the instance space anchored on the small test set.
//!
//! With `K = |S|` every test point is the center of its own cell. Smaller
//! partitions use seeded Lloyd iterations over the test features. Nearest
//! center search is exact, through a k-d tree over the centers.

use std::collections::BTreeSet;

use rand::Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{squared_distance, Real};
use crate::spatial::KdTree;

const LLOYD_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct Partition<T> {
    centers: Vec<Vec<T>>,
    radii: Option<Vec<T>>,
    dim: usize,
    tree: KdTree<T>,
}

impl<T: Real> Partition<T> {
    /// Partition with explicit centers.
    pub fn from_centers(centers: Vec<Vec<T>>) -> Result<Self> {
        let dim = centers
            .first()
            .map(Vec::len)
            .ok_or(Error::EmptyInput("partition centers"))?;
        if let Some(bad) = centers.iter().find(|c| c.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Ok(Self {
            tree: KdTree::new(centers.clone()),
            centers,
            radii: None,
            dim,
        })
    }

    /// Builds `k` regions over the features of `test`.
    pub fn build(test: &Dataset<T>, k: usize, seed: u64) -> Result<Self> {
        let n = test.len();
        if k < 1 || k > n {
            return Err(Error::InvalidK { k, n });
        }
        let points: Vec<&[T]> = test.iter().map(|s| s.features.as_slice()).collect();
        let centers = if k == n {
            points.iter().map(|p| p.to_vec()).collect()
        } else {
            lloyd(&points, k, seed)
        };
        Ok(Self {
            tree: KdTree::new(centers.clone()),
            centers,
            radii: None,
            dim: test.dim(),
        })
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centers(&self) -> &[Vec<T>] {
        &self.centers
    }

    pub fn center(&self, region: usize) -> &[T] {
        &self.centers[region]
    }

    pub fn radii(&self) -> Option<&[T]> {
        self.radii.as_deref()
    }

    /// Attaches per-region search radii.
    pub fn with_radii(mut self, radii: Vec<T>) -> Result<Self> {
        if radii.len() != self.k() {
            return Err(Error::InvalidInput(format!(
                "{} radii for {} regions",
                radii.len(),
                self.k()
            )));
        }
        if let Some(r) = radii.iter().find(|r| !(**r > T::zero())) {
            return Err(Error::InvalidInput(format!("radius {r} is not positive")));
        }
        self.radii = Some(radii);
        Ok(self)
    }

    /// Index of the nearest center; ties go to the lowest index.
    pub fn assign(&self, x: &[T]) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.nearest_center(x).0)
    }

    /// Nearest region together with the distance to its center.
    pub fn assign_with_distance(&self, x: &[T]) -> Result<(usize, T)> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let (i, d2) = self.nearest_center(x);
        Ok((i, d2.sqrt()))
    }

    fn nearest_center(&self, x: &[T]) -> (usize, T) {
        self.tree.nearest(x).expect("a partition has at least one center")
    }

    /// Assigns every sample of `data`, in order.
    pub fn assign_all(&self, data: &Dataset<T>) -> Result<Vec<usize>> {
        data.samples()
            .par_iter()
            .map(|s| self.assign(&s.features))
            .collect()
    }

    /// Regions holding at least one sample of `data` (the set `T_S`).
    pub fn occupied(&self, data: &Dataset<T>) -> Result<BTreeSet<usize>> {
        Ok(self.assign_all(data)?.into_iter().collect())
    }

    /// Per-center search radius: the largest distance among the `k` nearest
    /// samples of `test`, skipping samples that coincide with the center.
    pub fn knn_radii(&self, test: &Dataset<T>, k: usize) -> Result<Vec<T>> {
        let n = test.len();
        if k < 1 || k >= n {
            return Err(Error::InvalidNeighbours { k, n });
        }
        if test.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: test.dim(),
            });
        }
        self.centers
            .par_iter()
            .map(|c| {
                let mut d2: Vec<T> = test
                    .iter()
                    .map(|s| squared_distance(c, &s.features))
                    .filter(|d| *d > T::zero())
                    .collect();
                if d2.is_empty() {
                    return Err(Error::InvalidInput(
                        "every test sample coincides with the center".into(),
                    ));
                }
                let take = k.min(d2.len());
                d2.select_nth_unstable_by(take - 1, |a, b| a.partial_cmp(b).unwrap());
                Ok(d2[take - 1].sqrt())
            })
            .collect()
    }
}

fn nearest<T: Real>(centers: &[Vec<T>], x: &[T]) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (i, c) in centers.iter().enumerate() {
        let d = squared_distance(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Lloyd's iteration from a seeded farthest-point initialization.
fn lloyd<T: Real>(points: &[&[T]], k: usize, seed: u64) -> Vec<Vec<T>> {
    let mut rng = rng::rng(seed);
    let first = rng.random_range(0..points.len());
    let mut centers: Vec<Vec<T>> = vec![points[first].to_vec()];
    let mut gap: Vec<T> = points
        .iter()
        .map(|p| squared_distance(p, &centers[0]))
        .collect();
    while centers.len() < k {
        let (far, _) = gap
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |best, (i, &d)| {
                if d > best.1 {
                    (i, d)
                } else {
                    best
                }
            });
        let c = points[far].to_vec();
        for (g, p) in gap.iter_mut().zip(points) {
            *g = g.min(squared_distance(p, &c));
        }
        centers.push(c);
    }

    let dim = points[0].len();
    for _ in 0..LLOYD_ITERATIONS {
        let mut sums = vec![vec![T::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for p in points {
            let (i, _) = nearest(&centers, p);
            counts[i] += 1;
            for (s, &v) in sums[i].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        let mut moved = false;
        for ((c, s), &n) in centers.iter_mut().zip(sums).zip(&counts) {
            // empty clusters keep their previous center
            if n == 0 {
                continue;
            }
            let inv = T::from_usize_lossy(n);
            for (cv, sv) in c.iter_mut().zip(s) {
                let next = sv / inv;
                if next != *cv {
                    moved = true;
                }
                *cv = next;
            }
        }
        if !moved {
            break;
        }
    }
    centers
}
