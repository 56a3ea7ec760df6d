//! Partitions of the data space: regular grids and k-means clusterings.
//!
//! Cells are never materialized; a partition is its representative points and
//! a total classifier. Cell indices are zero-based.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::samples::{BoxScaler, SampleSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionKind<T> {
    RegularGrid { bbox: BoxScaler<T>, cells_per_dim: Vec<usize> },
    KMeans { seed: u64, iterations: usize, inertia: Vec<T> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition<T> {
    kind: PartitionKind<T>,
    reps: SampleSet<T>,
    /// Grid cell → retained cell, present once cells have been dropped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    retained: Option<Vec<Option<usize>>>,
}

impl<T: Real> Partition<T> {
    pub fn kind(&self) -> &PartitionKind<T> {
        &self.kind
    }

    pub fn reps(&self) -> &SampleSet<T> {
        &self.reps
    }

    /// Number of cells `p`.
    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.reps.dim()
    }

    /// Cell index of `q`. Total: grid points outside the box clamp to the
    /// boundary cells, k-means uses the nearest centroid with ties going to
    /// the lowest index.
    pub fn classify(&self, q: &[T]) -> usize {
        debug_assert_eq!(q.len(), self.dim());
        match &self.kind {
            PartitionKind::RegularGrid { bbox, cells_per_dim } => {
                let cell = grid_cell(bbox, cells_per_dim, q);
                match &self.retained {
                    None => cell,
                    Some(map) => map[cell].unwrap_or_else(|| nearest(&self.reps, q)),
                }
            }
            PartitionKind::KMeans { .. } => nearest(&self.reps, q),
        }
    }

    /// Classifies every point, in parallel.
    pub fn classify_all(&self, points: &SampleSet<T>) -> Result<Vec<usize>> {
        points.check_dim(self.dim())?;
        Ok((0..points.len()).into_par_iter().map(|i| self.classify(points.point(i))).collect())
    }

    /// Per-cell counts of `assignments`.
    pub fn counts(&self, assignments: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.len()];
        for &a in assignments {
            c[a] += 1;
        }
        c
    }

    /// Keeps only the cells in `keep` (strictly increasing indices). Retained
    /// cells are renumbered `0..keep.len()`; points that would have landed in
    /// a dropped cell go to the nearest retained representative.
    pub fn retain_cells(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::param("cannot drop every cell"));
        }
        if keep.windows(2).any(|w| w[0] >= w[1]) || keep[keep.len() - 1] >= self.len() {
            return Err(Error::param("retained cells must be increasing indices below p"));
        }
        let reps = self.reps.select(keep);
        let retained = match &self.kind {
            PartitionKind::RegularGrid { .. } => {
                let base: Vec<Option<usize>> = match &self.retained {
                    None => (0..self.len()).map(Some).collect(),
                    Some(map) => map.clone(),
                };
                let mut pos = vec![None; self.len()];
                for (new, &old) in keep.iter().enumerate() {
                    pos[old] = Some(new);
                }
                Some(base.into_iter().map(|c| c.and_then(|c| pos[c])).collect())
            }
            PartitionKind::KMeans { .. } => None,
        };
        Ok(Self { kind: self.kind.clone(), reps, retained })
    }
}

fn grid_cell<T: Real>(bbox: &BoxScaler<T>, cells_per_dim: &[usize], q: &[T]) -> usize {
    let mut idx = 0;
    let mut stride = 1;
    for (k, &c) in cells_per_dim.iter().enumerate() {
        let f = (q[k] - bbox.lower()[k]) / bbox.width(k) * T::from_usize_lossy(c);
        // NaN and negatives land in cell 0
        let i = if f >= T::zero() { f.floor().to_usize().unwrap_or(usize::MAX).min(c - 1) } else { 0 };
        idx += i * stride;
        stride *= c;
    }
    idx
}

#[inline]
fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

fn nearest<T: Real>(reps: &SampleSet<T>, q: &[T]) -> usize {
    let mut best = 0;
    let mut best_d = T::infinity();
    for (k, c) in reps.iter().enumerate() {
        let d = sq_dist(c, q);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Regular grid over `bbox` with half-open cells `[low, high)`, the last cell
/// in each dimension closed. The first dimension varies fastest in the cell
/// index; representatives are the cell centers.
pub fn make_regular_grid<T: Real>(bbox: &BoxScaler<T>, cells_per_dim: &[usize]) -> Result<Partition<T>> {
    if cells_per_dim.len() != bbox.dim() {
        return Err(Error::DimensionMismatch { expected: bbox.dim(), got: cells_per_dim.len() });
    }
    if cells_per_dim.contains(&0) {
        return Err(Error::param("every dimension needs at least one cell"));
    }
    let d = bbox.dim();
    let p: usize = cells_per_dim.iter().product();
    let mut data = Vec::with_capacity(p * d);
    for cell in 0..p {
        let mut rem = cell;
        for k in 0..d {
            let c = cells_per_dim[k];
            let i = rem % c;
            rem /= c;
            let frac = (T::from_usize_lossy(i) + T::lit(0.5)) / T::from_usize_lossy(c);
            data.push(bbox.lower()[k] + frac * bbox.width(k));
        }
    }
    Ok(Partition {
        kind: PartitionKind::RegularGrid { bbox: bbox.clone(), cells_per_dim: cells_per_dim.to_vec() },
        reps: SampleSet::from_flat(d, data)?,
        retained: None,
    })
}

fn count_distinct<T: Real>(points: &SampleSet<T>) -> usize {
    let mut rows: Vec<&[T]> = points.iter().collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.partial_cmp(y).expect("finite"))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    rows.dedup();
    rows.len()
}

/// k-means with k-means++ seeding and Lloyd iterations.
///
/// A cluster left empty by an assignment step is re-seeded at the point
/// farthest from its current centroid. The recorded inertia trace holds one
/// value per assignment step and is non-increasing.
pub fn make_kmeans<T: Real>(predicted: &SampleSet<T>, p: usize, seed: u64, max_iter: usize) -> Result<Partition<T>> {
    if p == 0 {
        return Err(Error::param("p must be positive"));
    }
    if max_iter == 0 {
        return Err(Error::param("max_iter must be positive"));
    }
    let distinct = count_distinct(predicted);
    if p > distinct {
        return Err(Error::param(format!("p = {p} exceeds the {distinct} distinct points")));
    }
    let d = predicted.dim();
    let n = predicted.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++
    let mut centers: Vec<T> = Vec::with_capacity(p * d);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(predicted.point(first));
    let mut dist: Vec<T> = predicted.iter().map(|x| sq_dist(x, &centers[..d])).collect();
    for _ in 1..p {
        let total: f64 = dist.iter().map(|v| v.as_f64()).sum();
        let mut pick = n - 1;
        if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            for (i, v) in dist.iter().enumerate() {
                u -= v.as_f64();
                if u < 0.0 {
                    pick = i;
                    break;
                }
            }
            // rounding may leave u ≥ 0; take the last point with positive distance
            if u >= 0.0 {
                pick = dist.iter().rposition(|&v| v > T::zero()).unwrap_or(pick);
            }
        }
        let start = centers.len();
        centers.extend_from_slice(predicted.point(pick));
        let c = centers[start..].to_vec();
        dist.par_iter_mut().enumerate().for_each(|(i, di)| {
            let v = sq_dist(predicted.point(i), &c);
            if v < *di {
                *di = v;
            }
        });
    }

    let mut reps = SampleSet::from_flat(d, centers)?;
    let mut assign = vec![usize::MAX; n];
    let mut inertia = Vec::new();
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        let next: Vec<(usize, T)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = predicted.point(i);
                let k = nearest(&reps, x);
                (k, sq_dist(x, reps.point(k)))
            })
            .collect();
        let changed = next.iter().zip(&assign).any(|(a, &b)| a.0 != b);
        let mut dists: Vec<T> = next.iter().map(|a| a.1).collect();
        for (a, (k, _)) in assign.iter_mut().zip(&next) {
            *a = *k;
        }

        let mut counts = vec![0usize; p];
        for &a in &assign {
            counts[a] += 1;
        }
        for k in 0..p {
            if counts[k] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[assign[i]] > 1)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if dists[b] >= dists[i] => Some(b),
                    _ => Some(i),
                })
                .ok_or_else(|| Error::param("cannot re-seed an empty cluster"))?;
            log::debug!("k-means cluster {k} empty; re-seeding at point {far}");
            counts[assign[far]] -= 1;
            assign[far] = k;
            counts[k] = 1;
            dists[far] = T::zero();
        }
        inertia.push(dists.iter().copied().sum::<T>());

        // update step; sums in index order for reproducibility
        let mut sums = vec![T::zero(); p * d];
        for (i, &a) in assign.iter().enumerate() {
            for (s, &x) in sums[a * d..(a + 1) * d].iter_mut().zip(predicted.point(i)) {
                *s = *s + x;
            }
        }
        for k in 0..p {
            let c = T::from_usize_lossy(counts[k]);
            sums[k * d..(k + 1) * d].iter_mut().for_each(|s| *s = *s / c);
        }
        reps = SampleSet::from_flat(d, sums)?;
        if !changed && it > 1 {
            break;
        }
    }
    Ok(Partition { kind: PartitionKind::KMeans { seed, iterations, inertia }, reps, retained: None })
}

/// Sum of squared distances from each point to its nearest representative.
pub fn inertia<T: Real>(partition: &Partition<T>, points: &SampleSet<T>) -> T {
    points.iter().map(|x| sq_dist(x, partition.reps().point(partition.classify(x)))).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(c: usize) -> Partition<f64> {
        make_regular_grid(&BoxScaler::unit(1), &[c]).unwrap()
    }

    #[test]
    fn grid_reps_are_centers() {
        assert_eq!(unit_grid(4).reps().as_flat(), &[0.125, 0.375, 0.625, 0.875]);
        let b = BoxScaler::new(vec![0.0], vec![2.0]).unwrap();
        assert_eq!(make_regular_grid(&b, &[2]).unwrap().reps().as_flat(), &[0.5, 1.5]);
    }

    #[test]
    fn grid_classification() {
        let g = unit_grid(4);
        assert_eq!(g.classify(&[0.25]), 1);
        assert_eq!(g.classify(&[0.99]), 3);
        assert_eq!(g.classify(&[1.0]), 3);
        assert_eq!(g.classify(&[1.7]), 3);
        assert_eq!(g.classify(&[-3.0]), 0);
        assert_eq!(g.classify(&[0.0]), 0);
    }

    #[test]
    fn grid_2d_index_order() {
        let g = make_regular_grid(&BoxScaler::<f64>::unit(2), &[2, 3]).unwrap();
        assert_eq!(g.len(), 6);
        let k = g.classify(&[0.75, 0.5]);
        assert_eq!(k, 1 + 2);
        assert_eq!(g.reps().point(k), &[0.75, 0.5]);
    }

    #[test]
    fn zero_cells_rejected() {
        assert!(make_regular_grid(&BoxScaler::<f64>::unit(1), &[0]).is_err());
    }

    #[test]
    fn kmeans_two_clusters() {
        let s = SampleSet::<f64>::from_scalars(&[0.0, 0.1, 0.9, 1.0]).unwrap();
        let k = make_kmeans(&s, 2, 7, 100).unwrap();
        let mut c = k.reps().as_flat().to_vec();
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((c[0] - 0.05).abs() < 1e-12 && (c[1] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn kmeans_p_equals_n() {
        let s = SampleSet::<f64>::from_scalars(&[0.3, 0.1, 0.7, 0.5]).unwrap();
        let k = make_kmeans(&s, 4, 1, 50).unwrap();
        assert_eq!(inertia(&k, &s), 0.0);
        let mut c = k.reps().as_flat().to_vec();
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(c, vec![0.1, 0.3, 0.5, 0.7]);
    }

    #[test]
    fn kmeans_rejects_too_many_clusters() {
        let s = SampleSet::<f64>::from_scalars(&[0.3, 0.3, 0.7]).unwrap();
        assert!(make_kmeans(&s, 3, 1, 10).is_err());
        assert!(make_kmeans(&s, 2, 1, 10).is_ok());
    }

    #[test]
    fn kmeans_inertia_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<[f64; 2]> = (0..500).map(|_| [rng.random::<f64>(), rng.random::<f64>().powi(3)]).collect();
        let s = SampleSet::from_rows(2, &rows).unwrap();
        let k = make_kmeans(&s, 12, 11, 200).unwrap();
        let PartitionKind::KMeans { inertia, .. } = k.kind() else { panic!() };
        assert!(inertia.len() > 1);
        for w in inertia.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{w:?}");
        }
    }

    #[test]
    fn kmeans_reproducible() {
        let s = SampleSet::<f64>::from_scalars(&(0..200).map(|i| ((i * 37) % 101) as f64 / 101.0).collect::<Vec<_>>()).unwrap();
        assert_eq!(make_kmeans(&s, 9, 5, 100).unwrap(), make_kmeans(&s, 9, 5, 100).unwrap());
    }

    #[test]
    fn nearest_ties_go_to_lowest_index() {
        let s = SampleSet::<f64>::from_scalars(&[0.0, 0.1, 0.9, 1.0]).unwrap();
        let mut k = make_kmeans(&s, 2, 7, 100).unwrap();
        k.reps = SampleSet::from_scalars(&[0.25, 0.75]).unwrap();
        assert_eq!(k.classify(&[0.5]), 0);
        k.reps = SampleSet::from_scalars(&[0.75, 0.25]).unwrap();
        assert_eq!(k.classify(&[0.5]), 0);
    }

    #[test]
    fn retained_grid_stays_total() {
        let g = unit_grid(4).retain_cells(&[0, 2]).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.classify(&[0.6]), 1);
        assert_eq!(g.classify(&[0.1]), 0);
        // cell 1 was dropped; 0.3 is nearer to 0.125 than to 0.625
        assert_eq!(g.classify(&[0.3]), 0);
        assert_eq!(g.classify(&[0.9]), 1);
        let h = g.retain_cells(&[1]).unwrap();
        assert_eq!(h.classify(&[0.1]), 0);
    }
}
