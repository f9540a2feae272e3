//! Inverted-file partition over unit-normalized vectors (spherical k-means).
//!
//! The probe count is calibrated at build time: the smallest `nprobe` whose
//! recall@10 against exact search on synthetic probe queries meets the
//! declared target plus a safety margin.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::IndexSnapshot;
use crate::encoder::dot;
use crate::numeric::Scalar;

pub const DEFAULT_RECALL_TARGET: f64 = 0.95;
const CALIBRATION_MARGIN: f64 = 0.02;
const CALIBRATION_K: usize = 10;

#[derive(Debug, Clone)]
pub struct IvfParams {
    pub recall_target: f64,
    pub kmeans_iters: usize,
    pub calibration_queries: usize,
    pub seed: u64,
}

impl Default for IvfParams {
    fn default() -> Self {
        Self { recall_target: DEFAULT_RECALL_TARGET, kmeans_iters: 12, calibration_queries: 96, seed: 0x5eed }
    }
}

#[derive(Debug, Clone)]
pub(super) struct IvfIndex<T> {
    dim: usize,
    centroids: Vec<T>,
    cells: Vec<Vec<usize>>,
    pub(super) nprobe: usize,
    pub(super) recall_target: f64,
}

fn normalize<T: Scalar>(v: &mut [T]) {
    let n = dot(v, v).sqrt();
    if n > T::zero() {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

impl<T: Scalar> IvfIndex<T> {
    pub(super) fn build(snap: &IndexSnapshot<T>, params: &IvfParams) -> Self {
        let n = snap.len();
        let dim = snap.dim;
        let nlist = ((n as f64).sqrt().round() as usize).clamp(1, n);
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

        let unit: Vec<Vec<T>> = (0..n)
            .map(|i| {
                let mut v = snap.vector(i).to_vec();
                normalize(&mut v);
                v
            })
            .collect();

        let mut centroids: Vec<T> = sample(&mut rng, n, nlist).iter().flat_map(|i| unit[i].clone()).collect();
        let mut assign = vec![0usize; n];
        for _ in 0..params.kmeans_iters {
            for (i, v) in unit.iter().enumerate() {
                assign[i] = nearest(&centroids, dim, v);
            }
            let mut sums = vec![T::zero(); nlist * dim];
            let mut counts = vec![0usize; nlist];
            for (i, v) in unit.iter().enumerate() {
                counts[assign[i]] += 1;
                for (s, &x) in sums[assign[i] * dim..(assign[i] + 1) * dim].iter_mut().zip(v) {
                    *s += x;
                }
            }
            for c in 0..nlist {
                let slot = &mut sums[c * dim..(c + 1) * dim];
                if counts[c] == 0 {
                    // Empty cell: reseed from a random member.
                    slot.copy_from_slice(&unit[rng.gen_range(0..n)]);
                }
                normalize(slot);
            }
            centroids = sums;
        }
        for (i, v) in unit.iter().enumerate() {
            assign[i] = nearest(&centroids, dim, v);
        }
        let mut cells = vec![Vec::new(); nlist];
        for (i, &c) in assign.iter().enumerate() {
            cells[c].push(i);
        }

        let mut ivf = Self { dim, centroids, cells, nprobe: nlist, recall_target: params.recall_target };
        ivf.nprobe = ivf.calibrate(snap, &unit, &assign, params, &mut rng);
        ivf
    }

    fn cell_order(&self, query: &[T]) -> Vec<usize> {
        let nlist = self.cells.len();
        let mut sims: Vec<(T, usize)> =
            (0..nlist).map(|c| (dot(&self.centroids[c * self.dim..(c + 1) * self.dim], query), c)).collect();
        sims.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite").then(a.1.cmp(&b.1)));
        sims.into_iter().map(|(_, c)| c).collect()
    }

    fn calibrate(
        &self,
        snap: &IndexSnapshot<T>,
        unit: &[Vec<T>],
        assign: &[usize],
        params: &IvfParams,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let nlist = self.cells.len();
        let n = unit.len();
        let k = CALIBRATION_K.min(n);
        // hits[p] counts true neighbours whose cell sits at probe rank p.
        let mut hits = vec![0usize; nlist];
        let mut total = 0usize;
        for q in 0..params.calibration_queries {
            let mut query = vec![T::zero(); self.dim];
            if q % 2 == 0 {
                let a = &unit[rng.gen_range(0..n)];
                for (x, &v) in query.iter_mut().zip(a) {
                    *x = v + T::of(rng.gen_range(-1.0..1.0) / (self.dim as f64).sqrt());
                }
            } else {
                for _ in 0..3 {
                    let a = &unit[rng.gen_range(0..n)];
                    for (x, &v) in query.iter_mut().zip(a) {
                        *x += v;
                    }
                }
            }
            normalize(&mut query);
            if query.iter().all(|v| *v == T::zero()) {
                continue;
            }
            let truth = snap.top_k_of(0..n, &query, T::one(), k);
            let order = self.cell_order(&query);
            let mut rank_of = vec![0usize; nlist];
            for (r, &c) in order.iter().enumerate() {
                rank_of[c] = r;
            }
            for hit in truth {
                let i = snap.ids.binary_search(&hit.doc_id).expect("id from snapshot");
                hits[rank_of[assign[i]]] += 1;
                total += 1;
            }
        }
        if total == 0 {
            return nlist;
        }
        let goal = (params.recall_target + CALIBRATION_MARGIN).min(1.0);
        let mut covered = 0usize;
        for (p, &h) in hits.iter().enumerate() {
            covered += h;
            if covered as f64 / total as f64 >= goal {
                return p + 1;
            }
        }
        nlist
    }

    pub(super) fn candidates(&self, query: &[T], qnorm: T) -> Vec<usize> {
        let unit: Vec<T> = query.iter().map(|&v| v / qnorm).collect();
        let mut out: Vec<usize> =
            self.cell_order(&unit).into_iter().take(self.nprobe).flat_map(|c| self.cells[c].iter().copied()).collect();
        out.sort_unstable();
        out
    }
}

fn nearest<T: Scalar>(centroids: &[T], dim: usize, v: &[T]) -> usize {
    let mut best = 0;
    let mut best_sim = T::neg_infinity();
    for (c, cent) in centroids.chunks_exact(dim).enumerate() {
        let s = dot(cent, v);
        if s > best_sim {
            best_sim = s;
            best = c;
        }
    }
    best
}
