use rand::Rng as _;
use rayon::prelude::*;

use super::{check_k, FlatIndex, RetrievalResult};
use crate::corpus::{PassageId, QueryId};
use crate::error::{arg_err, config_err, Result};
use crate::rng::stream;
use crate::tensor::dot;

pub const KMEANS_ITERATIONS: usize = 20;

/// Inverted-file index: passages bucketed by nearest k-means centroid; a
/// search scans the `nprobe` buckets whose centroids score highest.
#[derive(Clone, Debug, PartialEq)]
pub struct IvfIndex {
    pub flat: FlatIndex,
    pub centroids: Vec<f64>,
    /// Row indices into `flat`, one list per centroid.
    pub lists: Vec<Vec<u32>>,
    pub nprobe: usize,
    pub seed: u64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[f64], dim: usize, x: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(row, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

impl IvfIndex {
    pub fn train(flat: FlatIndex, n_clusters: usize, nprobe: usize, seed: u64) -> Result<Self> {
        let n = flat.len();
        if n_clusters == 0 || n_clusters > n {
            return Err(config_err!("{n_clusters} clusters for {n} passages"));
        }
        if nprobe == 0 || nprobe > n_clusters {
            return Err(config_err!("nprobe {nprobe} outside 1..={n_clusters}"));
        }
        let dim = flat.dim;
        let mut rng = stream(seed, "ivf/kmeans", 0);

        // k-means++ seeding
        let mut centroids = Vec::with_capacity(n_clusters * dim);
        let first = rng.gen_range(0..n);
        centroids.extend_from_slice(flat.row(first));
        let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(flat.row(i), flat.row(first))).collect();
        for c in 1..n_clusters {
            let total: f64 = d2.iter().sum();
            let pick = if total > 0.0 {
                let mut u = rng.gen::<f64>() * total;
                let mut pick = n - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if u < w {
                        pick = i;
                        break;
                    }
                    u -= w;
                }
                pick
            } else {
                rng.gen_range(0..n)
            };
            centroids.extend_from_slice(flat.row(pick));
            let new = &centroids[c * dim..(c + 1) * dim];
            for (i, d) in d2.iter_mut().enumerate() {
                *d = d.min(sq_dist(flat.row(i), new));
            }
        }

        let mut assign = vec![0usize; n];
        for _ in 0..KMEANS_ITERATIONS {
            assign = (0..n)
                .into_par_iter()
                .map(|i| nearest(&centroids, dim, flat.row(i)))
                .collect();
            let mut sums = vec![0.0; n_clusters * dim];
            let mut counts = vec![0usize; n_clusters];
            for (i, &c) in assign.iter().enumerate() {
                counts[c] += 1;
                for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(flat.row(i)) {
                    *s += x;
                }
            }
            for c in 0..n_clusters {
                // an empty cluster keeps its previous centroid
                if counts[c] > 0 {
                    for j in 0..dim {
                        centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                    }
                }
            }
        }
        let assign: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| nearest(&centroids, dim, flat.row(i)))
            .collect();
        let mut lists = vec![Vec::new(); n_clusters];
        for (i, c) in assign.into_iter().enumerate() {
            lists[c].push(i as u32);
        }
        Ok(Self {
            flat,
            centroids,
            lists,
            nprobe,
            seed,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.lists.len()
    }

    pub fn posting_ids(&self, cluster: usize) -> Vec<PassageId> {
        self.lists[cluster].iter().map(|&r| self.flat.ids[r as usize]).collect()
    }

    pub fn with_nprobe(mut self, nprobe: usize) -> Result<Self> {
        if nprobe == 0 || nprobe > self.n_clusters() {
            return Err(arg_err!("nprobe {nprobe} outside 1..={}", self.n_clusters()));
        }
        self.nprobe = nprobe;
        Ok(self)
    }

    fn probe_order(&self, qv: &[f64]) -> Vec<usize> {
        let dim = self.flat.dim;
        let mut order: Vec<(usize, f64)> = self
            .centroids
            .chunks_exact(dim)
            .map(|c| dot(c, qv))
            .enumerate()
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        order.into_iter().map(|o| o.0).collect()
    }

    pub fn search_vector(&self, query_id: QueryId, qv: &[f64], k: usize) -> Result<RetrievalResult> {
        check_k(k)?;
        let probes = self.probe_order(qv);
        let rows = probes[..self.nprobe]
            .iter()
            .flat_map(|&c| self.lists[c].iter().map(|&r| r as usize));
        let mut res = self.flat.search_rows(query_id, qv, rows, k);
        res.truncated = self.flat.len() < k;
        Ok(res)
    }
}
