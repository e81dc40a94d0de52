//! Operation counters and the closed-form average-complexity expressions for
//! the sphere decoder and log-MPA.

use std::ops::{Add, AddAssign};

/// Real-arithmetic tallies of one or more decodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounters {
    pub real_adds: u64,
    pub real_mults: u64,
    pub exp_log: u64,
    /// Candidate metric evaluations on observation rows (`N_v1`).
    pub visited_head: u64,
    /// Candidate metric evaluations on augmented rows (`N_v2`).
    pub visited_tail: u64,
    /// Complete hypotheses reached (leaves of the search tree).
    pub leaves: u64,
}

impl OpCounters {
    /// Adds + multiplies + exp/log, each exp/log weighted as one multiplier.
    pub fn combined_cost(&self) -> u64 {
        self.real_adds + self.real_mults + self.exp_log
    }

    /// Tally for `n` candidate metrics on an observation row with `nnz`
    /// nonzero entries: `nnz` complex products (4 mults, 2 adds each), `nnz`
    /// complex subtractions, one squared magnitude and one accumulation.
    pub(crate) fn head_visits(&mut self, n: u64, nnz: u64) {
        let ops = n * (4 * nnz + 2);
        self.real_adds += ops;
        self.real_mults += ops;
        self.visited_head += n;
    }

    /// Tally for `n` candidate metrics on an augmented row: squared
    /// magnitude and accumulation.
    pub(crate) fn tail_visits(&mut self, n: u64) {
        self.real_adds += 2 * n;
        self.real_mults += 2 * n;
        self.visited_tail += n;
    }
}

impl AddAssign for OpCounters {
    fn add_assign(&mut self, o: Self) {
        self.real_adds += o.real_adds;
        self.real_mults += o.real_mults;
        self.exp_log += o.exp_log;
        self.visited_head += o.visited_head;
        self.visited_tail += o.visited_tail;
        self.leaves += o.leaves;
    }
}

impl Add for OpCounters {
    type Output = Self;

    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl std::iter::Sum for OpCounters {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Predicted sphere-decoder tallies: `(4 d_f + 2) N_v1 + 2 N_v2` real adds and
/// as many multiplies, no exp/log.
pub fn predicted_msd_ops(df: u64, visited_head: u64, visited_tail: u64) -> OpCounters {
    let ops = (4 * df + 2) * visited_head + 2 * visited_tail;
    OpCounters {
        real_adds: ops,
        real_mults: ops,
        exp_log: 0,
        visited_head,
        visited_tail,
        leaves: 0,
    }
}

/// Predicted log-MPA tallies for `N_i` iterations.
///
/// * adds: `M N d_f (M^{d_f-1} (4 d_f - 2 + N_i (2 + 1/M)) + N_i (2 - 1/d_v) + 5)`
/// * mults: `M N d_f (4 d_f M^{d_f-1} + 5)`
/// * exp/log: `M N d_f N_i (M^{d_f-1} + 1) + 1`
pub fn predicted_mpa_ops(m: u64, n: u64, df: u64, dv: u64, iterations: u64) -> OpCounters {
    let (mf, nf, dff, dvf, ni) = (m as f64, n as f64, df as f64, dv as f64, iterations as f64);
    let combos = mf.powi(df as i32 - 1);
    let entries = mf * nf * dff;
    let adds = entries
        * (combos * (4.0 * dff - 2.0 + ni * (2.0 + 1.0 / mf)) + ni * (2.0 - 1.0 / dvf) + 5.0);
    let mults = entries * (4.0 * dff * combos + 5.0);
    let exp_log = entries * ni * (combos + 1.0) + 1.0;
    OpCounters {
        real_adds: adds.round() as u64,
        real_mults: mults.round() as u64,
        exp_log: exp_log.round() as u64,
        ..Default::default()
    }
}
