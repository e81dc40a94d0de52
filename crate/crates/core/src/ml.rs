//! Brute-force maximum-likelihood detection and exhaustive a posteriori
//! LLRs. These enumerate every one of the `M^K` hypotheses and serve as the
//! reference for the sphere decoder.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::channel::{residual_norm_sqr, AugmentedSystem};
use crate::codebook::{Codebook, ScmaSystem, SearchLayout};
use crate::complexity::OpCounters;
use crate::llr::{max_star, LlrFrame};

/// Metrics closer than `TIE_TOLERANCE * (1 + ||y||^2)` are treated as equal.
pub const TIE_TOLERANCE: f64 = 1e-10;

pub fn tie_tolerance(y: &Array1<Complex64>) -> f64 {
    TIE_TOLERANCE * (1.0 + y.iter().map(|v| v.norm_sqr()).sum::<f64>())
}

/// Tracks every hypothesis within tolerance of the running minimum so that the
/// final decision is the lexicographically smallest codeword-index tuple of
/// the minimal tie class, independent of visiting order.
#[derive(Debug, Clone)]
pub struct TieSet {
    best: f64,
    tol: f64,
    candidates: Vec<(f64, Vec<usize>)>,
}

impl TieSet {
    pub fn new(tol: f64) -> Self {
        Self {
            best: f64::INFINITY,
            tol,
            candidates: Vec::new(),
        }
    }

    /// Largest metric that can still join the tie class.
    pub fn threshold(&self) -> f64 {
        self.best + self.tol
    }

    pub fn offer(&mut self, metric: f64, indices: &[usize]) {
        if metric > self.threshold() {
            return;
        }
        if metric < self.best {
            self.best = metric;
            let limit = self.threshold();
            self.candidates.retain(|(m, _)| *m <= limit);
        }
        self.candidates.push((metric, indices.to_vec()));
    }

    /// Lexicographically smallest member of the minimal tie class.
    pub fn winner(self) -> Option<(f64, Vec<usize>)> {
        self.candidates.into_iter().min_by(|a, b| a.1.cmp(&b.1))
    }
}

/// Hard decisions of a detector, in the natural user/layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    /// Chosen codeword index of every user.
    pub indices: Vec<usize>,
    /// Detected layer vector `x^` (`K'` symbols).
    pub x: Array1<Complex64>,
    /// Detected bits of every user, MSB first.
    pub bits: Vec<Vec<u8>>,
    /// `||y - G x^||^2`.
    pub metric: f64,
    pub counters: OpCounters,
}

impl DetectionResult {
    pub fn from_indices(
        system: &ScmaSystem,
        g: &Array2<Complex64>,
        y: &Array1<Complex64>,
        indices: Vec<usize>,
        counters: OpCounters,
    ) -> Self {
        let x = system.layer_vector(&indices);
        let metric = residual_norm_sqr(y, g, &x);
        let bits = indices
            .iter()
            .enumerate()
            .map(|(k, &i)| system.codebook.bits(k, i))
            .collect();
        Self {
            indices,
            x,
            bits,
            metric,
            counters,
        }
    }
}

/// Iterates all `points^users` index tuples in lexicographic order.
pub fn hypotheses(users: usize, points: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = points.pow(users as u32);
    (0..total).map(move |mut code| {
        let mut idx = vec![0; users];
        for slot in idx.iter_mut().rev() {
            *slot = code % points;
            code /= points;
        }
        idx
    })
}

/// Exhaustive `argmin ||y - G x||^2` over all `M^K` hypotheses; ties go to the
/// lexicographically smallest codeword-index tuple.
///
/// Users whose RE sets are pairwise disjoint are split off as free users. The
/// remaining users are enumerated in order with running per-RE sums, each RE
/// being closed once its last user is fixed. At every such leaf the free users
/// separate: each one minimizes its own REs, and the tie class is rebuilt from
/// the per-user candidates within the remaining slack.
pub fn ml_detect(
    y: &Array1<Complex64>,
    g: &Array2<Complex64>,
    system: &ScmaSystem,
) -> DetectionResult {
    let cb = &system.codebook;
    let s = &system.mapping;
    let users = cb.users();
    let n = s.resources();

    // contrib[k][i] = (RE, g x) for each layer of codeword i of user k.
    let contrib: Vec<Vec<Vec<(usize, Complex64)>>> = (0..users)
        .map(|k| {
            (0..cb.points())
                .map(|i| {
                    cb.codeword(k, i)
                        .iter()
                        .enumerate()
                        .map(|(l, &v)| {
                            let layer = k * s.dv() + l;
                            let re = s.layer_resource(layer);
                            (re, g[[re, layer]] * v)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let resources: Vec<Vec<usize>> = (0..users).map(|k| s.user_resources(k).to_vec()).collect();
    let mut taken = vec![false; n];
    let mut free = Vec::new();
    for k in (0..users).rev() {
        if resources[k].iter().all(|&re| !taken[re]) {
            resources[k].iter().for_each(|&re| taken[re] = true);
            free.push(k);
        }
    }
    free.reverse();
    let enumerated: Vec<usize> = (0..users).filter(|k| !free.contains(k)).collect();

    let mut finalize: Vec<Vec<usize>> = vec![Vec::new(); enumerated.len()];
    let mut idle_residual = 0.0;
    for (re, set) in s.layer_sets().iter().enumerate() {
        if taken[re] {
            continue;
        }
        match set.iter().map(|&layer| layer / s.dv()).max() {
            Some(k) => finalize[enumerated.iter().position(|&e| e == k).unwrap()].push(re),
            None => idle_residual += y[re].norm_sqr(),
        }
    }
    // What each free user adds to each of its REs, per codeword.
    let free_adds: Vec<Vec<Vec<Complex64>>> = free
        .iter()
        .map(|&k| {
            contrib[k]
                .iter()
                .map(|parts| {
                    resources[k]
                        .iter()
                        .map(|&re| parts.iter().filter(|(r, _)| *r == re).map(|(_, v)| v).sum())
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut search = MlSearch {
        y,
        contrib: &contrib,
        enumerated: &enumerated,
        finalize: &finalize,
        free: &free,
        free_res: free.iter().map(|&k| resources[k].clone()).collect(),
        free_adds: &free_adds,
        sums: vec![vec![Complex64::new(0.0, 0.0); n]; enumerated.len() + 1],
        costs: vec![Vec::with_capacity(cb.points()); free.len()],
        picks: vec![Vec::new(); free.len()],
        indices: vec![0; users],
        ties: TieSet::new(tie_tolerance(y)),
        leaves: 0,
    };
    search.descend(0, idle_residual);
    let counters = OpCounters {
        leaves: search.leaves,
        ..Default::default()
    };
    let (_, indices) = search.ties.winner().expect("at least one hypothesis");
    DetectionResult::from_indices(system, g, y, indices, counters)
}

struct MlSearch<'a> {
    y: &'a Array1<Complex64>,
    contrib: &'a [Vec<Vec<(usize, Complex64)>>],
    enumerated: &'a [usize],
    finalize: &'a [Vec<usize>],
    free: &'a [usize],
    free_res: Vec<Vec<usize>>,
    free_adds: &'a [Vec<Vec<Complex64>>],
    sums: Vec<Vec<Complex64>>,
    /// Metric of every codeword of each free user on its own REs.
    costs: Vec<Vec<f64>>,
    /// Codewords of each free user that may join the tie class.
    picks: Vec<Vec<usize>>,
    indices: Vec<usize>,
    ties: TieSet,
    leaves: u64,
}

impl MlSearch<'_> {
    fn descend(&mut self, depth: usize, partial: f64) {
        if depth == self.enumerated.len() {
            self.close(partial);
            return;
        }
        let k = self.enumerated[depth];
        for i in 0..self.contrib[k].len() {
            let (done, rest) = self.sums.split_at_mut(depth + 1);
            let next = &mut rest[0];
            next.copy_from_slice(&done[depth]);
            for &(re, v) in &self.contrib[k][i] {
                next[re] += v;
            }
            let metric = partial
                + self.finalize[depth]
                    .iter()
                    .map(|&re| (self.y[re] - next[re]).norm_sqr())
                    .sum::<f64>();
            self.indices[k] = i;
            self.descend(depth + 1, metric);
        }
    }

    fn close(&mut self, partial: f64) {
        let sums = &self.sums[self.enumerated.len()];
        let mut base = partial;
        for (u, costs) in self.costs.iter_mut().enumerate() {
            let open: Vec<Complex64> = self.free_res[u].iter().map(|&re| self.y[re] - sums[re]).collect();
            costs.clear();
            costs.extend(self.free_adds[u].iter().map(|adds| {
                open.iter().zip(adds).map(|(r, a)| (r - a).norm_sqr()).sum::<f64>()
            }));
            base += costs.iter().copied().fold(f64::INFINITY, f64::min);
        }
        self.leaves += self.costs.iter().map(|c| c.len() as u64).product::<u64>();
        if base > self.ties.threshold() {
            return;
        }
        let slack = self.ties.threshold() - base + self.ties.tol;
        for (costs, picks) in self.costs.iter().zip(&mut self.picks) {
            let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
            picks.clear();
            picks.extend((0..costs.len()).filter(|&i| costs[i] <= min + slack));
        }
        self.offer_free(0, partial);
    }

    fn offer_free(&mut self, u: usize, metric: f64) {
        if u == self.free.len() {
            self.ties.offer(metric, &self.indices);
            return;
        }
        for j in 0..self.picks[u].len() {
            let i = self.picks[u][j];
            self.indices[self.free[u]] = i;
            self.offer_free(u + 1, metric + self.costs[u][i]);
        }
    }
}

/// Exact bit LLRs over the full hypothesis set of the augmented system:
/// `lambda = max*_{c_{k,m}=0} L(x) - max*_{c_{k,m}=1} L(x)` with
/// `L(x) = -(||y~ - G~ x||^2 - ||x^(2)||^2) / sigma2` and uniform priors.
pub fn exhaustive_app_llr(
    aug: &AugmentedSystem,
    layout: &SearchLayout,
    codebook: &Codebook,
    sigma2: f64,
    clamp: f64,
) -> LlrFrame {
    let users = codebook.users();
    let bits = codebook.bits_per_symbol();
    let mut sums = vec![vec![(f64::NEG_INFINITY, f64::NEG_INFINITY); bits]; users];
    let mut count = 0;
    for idx in hypotheses(users, codebook.points()) {
        let x = layout.search_vector(&idx);
        let tail: f64 = x.iter().skip(aug.head).map(|v| v.norm_sqr()).sum();
        let ll = -(aug.residual_norm_sqr(&x) - tail) / sigma2;
        for (k, &i) in idx.iter().enumerate() {
            for (m, slot) in sums[k].iter_mut().enumerate() {
                if codebook.bit(k, i, m) == 0 {
                    slot.0 = max_star(slot.0, ll);
                } else {
                    slot.1 = max_star(slot.1, ll);
                }
            }
        }
        count += 1;
    }
    LlrFrame::from_log_sums(&sums, clamp, count)
}
