//! Lloyd's k-means with k-means++ seeding and restarts.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            tol: 1e-4,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    /// `(k, D)`.
    pub centroids: Tensor,
    pub inertia: f64,
    /// Inertia after each assignment step of the chosen restart.
    pub inertia_trace: Vec<f64>,
}

pub fn kmeans(features: &Tensor, k: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_with(features, k, seed, KMeansOptions::default())
}

pub fn kmeans_with(features: &Tensor, k: usize, seed: u64, opts: KMeansOptions) -> Result<KMeansResult> {
    if features.ndim() != 2 {
        return Err(Error::Shape(format!("features must be (N, D), got {:?}", features.shape())));
    }
    let n = features.dim(0);
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::TooManyClusters { k, n });
    }
    if !features.all_finite() {
        return Err(Error::Shape("features contain non-finite values".into()));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..opts.restarts.max(1) {
        let run = lloyd(features, k, seed, r as u64, &opts);
        // Strict comparison keeps the earliest restart on ties.
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn row(x: &Tensor, i: usize) -> &[f64] {
    let d = x.dim(1);
    &x.data()[i * d..(i + 1) * d]
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn seed_plus_plus<R: Rng>(x: &Tensor, k: usize, rng: &mut R) -> Tensor {
    let (n, d) = (x.dim(0), x.dim(1));
    let mut c = Tensor::zeros(&[k, d]);
    let first = rng.random_range(0..n);
    c.data_mut()[..d].copy_from_slice(row(x, first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(row(x, i), row(x, first))).collect();
    for j in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        c.data_mut()[j * d..(j + 1) * d].copy_from_slice(row(x, pick));
        for (i, m) in nearest.iter_mut().enumerate() {
            *m = m.min(sq_dist(row(x, i), row(x, pick)));
        }
    }
    c
}

fn assign(x: &Tensor, c: &Tensor, out: &mut [usize]) -> f64 {
    let k = c.dim(0);
    let mut inertia = 0.0;
    for (i, a) in out.iter_mut().enumerate() {
        let xi = row(x, i);
        let mut best = (f64::INFINITY, 0);
        for j in 0..k {
            let dj = sq_dist(xi, row(c, j));
            if dj < best.0 {
                best = (dj, j);
            }
        }
        *a = best.1;
        inertia += best.0;
    }
    inertia
}

fn lloyd(x: &Tensor, k: usize, seed: u64, restart: u64, opts: &KMeansOptions) -> KMeansResult {
    let (n, d) = (x.dim(0), x.dim(1));
    let mut rng = rng_for(seed, restart);
    let mut c = seed_plus_plus(x, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut trace = Vec::new();
    for _ in 0..opts.max_iter {
        trace.push(assign(x, &c, &mut labels));
        let mut sums = Tensor::zeros(&[k, d]);
        let mut counts = vec![0usize; k];
        for (i, &a) in labels.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums.data_mut()[a * d..(a + 1) * d].iter_mut().zip(row(x, i)) {
                *s += v;
            }
        }
        let mut next = sums;
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                next.data_mut()[j * d..(j + 1) * d].iter_mut().for_each(|v| *v *= inv);
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // Move the empty centroid onto the point worst served by its own centroid.
                let far = (0..n)
                    .map(|i| (sq_dist(row(x, i), row(&next, labels[i])), i))
                    .fold((-1.0, 0), |m, v| if v.0 > m.0 { v } else { m })
                    .1;
                let p = row(x, far).to_vec();
                next.data_mut()[j * d..(j + 1) * d].copy_from_slice(&p);
                labels[far] = j;
            }
        }
        let shift = (0..k)
            .map(|j| sq_dist(row(&c, j), row(&next, j)))
            .fold(0.0, f64::max);
        c = next;
        if libm::sqrt(shift) < opts.tol {
            break;
        }
    }
    let inertia = assign(x, &c, &mut labels);
    trace.push(inertia);
    KMeansResult {
        assignments: labels,
        centroids: c,
        inertia,
        inertia_trace: trace,
    }
}
