//! Log-domain message passing (log-MPA) over the SCMA factor graph.
//!
//! Function nodes are REs and variable nodes are users. Every iteration first
//! updates all RE-to-user messages, marginalizing each RE over the
//! `M^{d_f-1}` codeword combinations of the other users with max*, then all
//! user-to-RE messages. Messages are normalized by subtracting their maximum.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::codebook::ScmaSystem;
use crate::complexity::OpCounters;
use crate::error::{Error, Result};
use crate::llr::{max_star, LlrFrame};
use crate::ml::DetectionResult;

/// One user attached to an RE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub user: usize,
    pub layer: usize,
}

/// Bipartite graph between REs and users, read off the mapping matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    /// Edges of every RE.
    pub re_edges: Vec<Vec<Edge>>,
    /// `(RE, edge slot within that RE)` for every user.
    pub user_edges: Vec<Vec<(usize, usize)>>,
    pub points: usize,
}

impl FactorGraph {
    pub fn new(system: &ScmaSystem) -> Self {
        let s = &system.mapping;
        let dv = s.dv();
        let mut user_edges = vec![Vec::new(); s.users()];
        let re_edges = s
            .layer_sets()
            .iter()
            .enumerate()
            .map(|(n, set)| {
                set.iter()
                    .enumerate()
                    .map(|(slot, &layer)| {
                        user_edges[layer / dv].push((n, slot));
                        Edge {
                            user: layer / dv,
                            layer,
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            re_edges,
            user_edges,
            points: system.codebook.points(),
        }
    }

    pub fn edge_count(&self) -> usize {
        self.re_edges.iter().map(Vec::len).sum()
    }
}

/// Outcome of log-MPA detection.
#[derive(Debug, Clone, PartialEq)]
pub struct MpaOutput {
    pub detection: DetectionResult,
    pub llr: LlrFrame,
    /// Normalized log beliefs `beliefs[k][i]` (maximum 0 per user).
    pub beliefs: Vec<Vec<f64>>,
}

/// Runs `iterations` flooding iterations of log-MPA with uniform priors and
/// likelihood `-|y_n - sum_j g_{n,j} x_j|^2 / sigma2` per RE.
///
/// Counters follow the log-MPA column of the complexity table: metric
/// precomputation, one add per (edge, combination) for the incoming message
/// sum, two adds and one exp/log per (edge, codeword, combination), one
/// exp/log per (edge, codeword), `2 d_v - 1` adds per (user, codeword) in the
/// variable-node update, and one final exp/log. Normalization and LLR
/// extraction are not counted.
pub fn log_mpa_detect(
    y: &Array1<Complex64>,
    g: &Array2<Complex64>,
    system: &ScmaSystem,
    sigma2: f64,
    iterations: usize,
    clamp: f64,
) -> Result<MpaOutput> {
    run(y, g, system, sigma2, iterations, clamp, true)
}

fn run(
    y: &Array1<Complex64>,
    g: &Array2<Complex64>,
    system: &ScmaSystem,
    sigma2: f64,
    iterations: usize,
    clamp: f64,
    normalized: bool,
) -> Result<MpaOutput> {
    if iterations == 0 {
        return Err(Error::Config("MPA needs at least one iteration".into()));
    }
    let cb = &system.codebook;
    let graph = FactorGraph::new(system);
    let m = graph.points;
    let dv = system.mapping.dv();
    let mut counters = OpCounters::default();

    // Joint log-likelihood of every RE over all codeword combinations of its
    // users, indexed in mixed radix with the first edge most significant.
    let tables: Vec<Vec<f64>> = graph
        .re_edges
        .iter()
        .enumerate()
        .map(|(n, edges)| {
            let df = edges.len() as u64;
            let combos = (m as u64).pow(df.saturating_sub(1) as u32);
            let entries = df * m as u64;
            counters.real_adds += entries * combos * (4 * df).saturating_sub(2) + 5 * entries;
            counters.real_mults += entries * combos * 4 * df + 5 * entries;
            let size = m.pow(edges.len() as u32);
            (0..size)
                .map(|mut code| {
                    let mut r = y[n];
                    for e in edges.iter().rev() {
                        let i = code % m;
                        code /= m;
                        let local = e.layer % dv;
                        r -= g[[n, e.layer]] * cb.codeword(e.user, i)[local];
                    }
                    -r.norm_sqr() / sigma2
                })
                .collect()
        })
        .collect();

    let mut to_user: Vec<Vec<Vec<f64>>> = graph
        .re_edges
        .iter()
        .map(|edges| vec![vec![0.0; m]; edges.len()])
        .collect();
    let mut to_re = to_user.clone();

    for _ in 0..iterations {
        for (n, edges) in graph.re_edges.iter().enumerate() {
            let df = edges.len();
            let table = &tables[n];
            for e in 0..df {
                let out = &mut to_user[n][e];
                out.fill(f64::NEG_INFINITY);
                for (code, &f) in table.iter().enumerate() {
                    let mut rest = code;
                    let mut incoming = 0.0;
                    let mut own = 0;
                    for j in (0..df).rev() {
                        let i = rest % m;
                        rest /= m;
                        if j == e {
                            own = i;
                        } else {
                            incoming += to_re[n][j][i];
                        }
                    }
                    out[own] = max_star(out[own], f + incoming);
                }
                if normalized {
                    normalize(out);
                }
                let combos = (m as u64).pow(df.saturating_sub(1) as u32);
                counters.real_adds += combos + 2 * combos * m as u64;
                counters.exp_log += (combos + 1) * m as u64;
            }
        }
        for edges in &graph.user_edges {
            for (slot, &(n, e)) in edges.iter().enumerate() {
                let msg = &mut to_re[n][e];
                for (i, v) in msg.iter_mut().enumerate() {
                    *v = edges
                        .iter()
                        .enumerate()
                        .filter(|&(other, _)| other != slot)
                        .map(|(_, &(n2, e2))| to_user[n2][e2][i])
                        .sum();
                }
                if normalized {
                    normalize(msg);
                }
            }
            counters.real_adds += (2 * edges.len() as u64).saturating_sub(1) * m as u64;
        }
    }
    counters.exp_log += 1;

    let beliefs: Vec<Vec<f64>> = graph
        .user_edges
        .iter()
        .map(|edges| {
            let mut b: Vec<f64> = (0..m)
                .map(|i| edges.iter().map(|&(n, e)| to_user[n][e][i]).sum())
                .collect();
            normalize(&mut b);
            b
        })
        .collect();

    let indices: Vec<usize> = beliefs
        .iter()
        .map(|b| {
            b.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect();

    let bits = cb.bits_per_symbol();
    let sums: Vec<Vec<(f64, f64)>> = beliefs
        .iter()
        .enumerate()
        .map(|(k, b)| {
            (0..bits)
                .map(|bit| {
                    b.iter().enumerate().fold(
                        (f64::NEG_INFINITY, f64::NEG_INFINITY),
                        |(zero, one), (i, &v)| {
                            if cb.bit(k, i, bit) == 0 {
                                (max_star(zero, v), one)
                            } else {
                                (zero, max_star(one, v))
                            }
                        },
                    )
                })
                .collect()
        })
        .collect();
    let llr = LlrFrame::from_log_sums(&sums, clamp, m.pow(cb.users() as u32));
    let detection = DetectionResult::from_indices(system, g, y, indices, counters);
    Ok(MpaOutput {
        detection,
        llr,
        beliefs,
    })
}

fn normalize(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_finite() {
        v.iter_mut().for_each(|x| *x -= max);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_channel, transmit, ChannelModel};
    use crate::codebook::{builtin, Codebook, MappingMatrix};
    use crate::complexity::predicted_mpa_ops;
    use crate::llr::max_star_all;
    use crate::ml::{hypotheses, ml_detect};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn qpsk() -> Vec<Complex64> {
        [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
            .iter()
            .map(|&(re, im)| Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2))
            .collect()
    }

    fn small_system(resources: usize, users: &[Vec<usize>]) -> ScmaSystem {
        let mapping = MappingMatrix::from_user_resources(resources, users).unwrap();
        let rot: Vec<Vec<f64>> = (0..users.len())
            .map(|k| (0..users[k].len()).map(|l| 0.3 * (k + l) as f64).collect())
            .collect();
        let cb = Codebook::repeated(&qpsk(), &[0, 1, 3, 2], &rot).unwrap();
        ScmaSystem::new(mapping, cb).unwrap()
    }

    fn exact_marginals(
        y: &Array1<Complex64>,
        g: &Array2<Complex64>,
        sys: &ScmaSystem,
        sigma2: f64,
    ) -> Vec<Vec<f64>> {
        let users = sys.codebook.users();
        let m = sys.codebook.points();
        let mut acc = vec![vec![f64::NEG_INFINITY; m]; users];
        for idx in hypotheses(users, m) {
            let x = sys.layer_vector(&idx);
            let ll = -crate::channel::residual_norm_sqr(y, g, &x) / sigma2;
            for (k, &i) in idx.iter().enumerate() {
                acc[k][i] = max_star(acc[k][i], ll);
            }
        }
        for b in &mut acc {
            normalize(b);
        }
        acc
    }

    #[test]
    fn graph_matches_mapping() {
        let sys = builtin("4ary").unwrap();
        let graph = FactorGraph::new(&sys);
        assert_eq!(graph.edge_count(), 12);
        assert!(graph.re_edges.iter().all(|e| e.len() == 3));
        assert!(graph.user_edges.iter().all(|e| e.len() == 2));
        for (k, edges) in graph.user_edges.iter().enumerate() {
            let res: Vec<usize> = edges.iter().map(|&(n, _)| n).collect();
            assert_eq!(res, sys.mapping.user_resources(k));
        }
    }

    #[test]
    fn single_user_per_re_matches_ml() {
        let sys = small_system(4, &[vec![0, 1], vec![2, 3]]);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..200 {
            let sent: Vec<usize> = (0..2).map(|_| rng.gen_range(0..4)).collect();
            let h = sample_channel(&sys.config, ChannelModel::RayleighFlat, 0.5, &mut rng);
            let ch = transmit(&sys, &h, &sent, &mut rng);
            let out = log_mpa_detect(&ch.y, &ch.g, &sys, 0.5, 1, 30.0).unwrap();
            let ml = ml_detect(&ch.y, &ch.g, &sys);
            assert_eq!(out.detection.indices, ml.indices);
        }
    }

    #[test]
    fn tree_graph_gives_exact_marginals() {
        // Users {0,1} share RE 1; no cycles.
        let sys = small_system(3, &[vec![0, 1], vec![1, 2]]);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let sigma2 = rng.gen_range(0.1..2.0);
            let sent: Vec<usize> = (0..2).map(|_| rng.gen_range(0..4)).collect();
            let h = sample_channel(&sys.config, ChannelModel::RayleighFlat, sigma2, &mut rng);
            let ch = transmit(&sys, &h, &sent, &mut rng);
            let exact = exact_marginals(&ch.y, &ch.g, &sys, sigma2);
            for iterations in [2, 5] {
                let out = log_mpa_detect(&ch.y, &ch.g, &sys, sigma2, iterations, 30.0).unwrap();
                for (b, e) in out.beliefs.iter().zip(&exact) {
                    for (u, v) in b.iter().zip(e) {
                        assert!((u - v).abs() < 1e-9, "{u} vs {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn counters_match_the_closed_form() {
        let sys = builtin("4ary").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let h = sample_channel(&sys.config, ChannelModel::RayleighFlat, 0.1, &mut rng);
        let ch = transmit(&sys, &h, &[0, 1, 2, 3, 0, 1], &mut rng);
        for ni in [1, 3, 12] {
            let c = log_mpa_detect(&ch.y, &ch.g, &sys, 0.1, ni, 30.0)
                .unwrap()
                .detection
                .counters;
            let p = predicted_mpa_ops(4, 4, 3, 2, ni as u64);
            assert_eq!((c.real_adds, c.real_mults, c.exp_log), (p.real_adds, p.real_mults, p.exp_log));
        }
    }

    #[test]
    fn function_node_combinations() {
        let sys = builtin("4ary").unwrap();
        let graph = FactorGraph::new(&sys);
        for edges in &graph.re_edges {
            let per_hypothesis = graph.points.pow(edges.len() as u32 - 1);
            assert_eq!(per_hypothesis, 16);
        }
    }

    #[test]
    fn messages_stay_finite_and_llrs_follow_beliefs() {
        let sys = builtin("4ary").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for sigma2 in [1e-6, 1e-2, 1.0, 100.0] {
            let sent: Vec<usize> = (0..6).map(|_| rng.gen_range(0..4)).collect();
            let h = sample_channel(&sys.config, ChannelModel::RayleighFlat, sigma2, &mut rng);
            let ch = transmit(&sys, &h, &sent, &mut rng);
            let out = log_mpa_detect(&ch.y, &ch.g, &sys, sigma2, 12, 30.0).unwrap();
            for (k, b) in out.beliefs.iter().enumerate() {
                assert!(b.iter().all(|v| v.is_finite()));
                for bit in 0..2 {
                    let zero = max_star_all((0..4).filter(|&i| sys.codebook.bit(k, i, bit) == 0).map(|i| b[i]));
                    let one = max_star_all((0..4).filter(|&i| sys.codebook.bit(k, i, bit) == 1).map(|i| b[i]));
                    let expect = (zero - one).clamp(-30.0, 30.0);
                    assert!((out.llr.values[k][bit] - expect).abs() < 1e-12);
                }
            }
            if sigma2 <= 1e-2 {
                assert_eq!(out.detection.indices, sent);
            }
        }
    }

    #[test]
    fn normalization_does_not_change_the_output() {
        let sys = builtin("4ary").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..50 {
            let sigma2 = rng.gen_range(0.05..1.0);
            let sent: Vec<usize> = (0..6).map(|_| rng.gen_range(0..4)).collect();
            let h = sample_channel(&sys.config, ChannelModel::RayleighFlat, sigma2, &mut rng);
            let ch = transmit(&sys, &h, &sent, &mut rng);
            let a = run(&ch.y, &ch.g, &sys, sigma2, 6, 30.0, true).unwrap();
            let b = run(&ch.y, &ch.g, &sys, sigma2, 6, 30.0, false).unwrap();
            assert_eq!(a.detection.indices, b.detection.indices);
            for (u, v) in a.llr.values.iter().flatten().zip(b.llr.values.iter().flatten()) {
                assert!((u - v).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_iterations_is_rejected() {
        let sys = builtin("4ary").unwrap();
        let y = Array1::zeros(4);
        let g = Array2::zeros((4, 12));
        assert!(log_mpa_detect(&y, &g, &sys, 1.0, 0, 30.0).is_err());
    }
}
