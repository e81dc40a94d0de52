//! Modified sphere decoding over the augmented upper-triangular system.
//!
//! The tree has one level per search position, visited from the last position
//! down to the first. Each node keeps, per user, the set of codewords still
//! consistent with the symbols placed so far. A position's children are the
//! distinct symbols among its owner's consistent codewords: a constant-modulus
//! user branches into up to `M` children at its highest position and every
//! lower position has a single child replicating the chosen codeword. For a
//! decomposed alphabet the choice is spread over the owner's component
//! positions, each branching over at most the base alphabet.
//!
//! Observation rows only involve the layers of their RE and augmented rows only
//! their diagonal, so each candidate costs a handful of operations and no QR
//! factorization is needed. The search is depth-first with children visited in
//! ascending order of metric increment, starting from an infinite radius that
//! shrinks to the best leaf (hard mode) or to the worst member of a full
//! candidate list (list mode).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_complex::Complex64;

use crate::channel::{augment, AugmentedSystem, EffectiveChannel};
use crate::codebook::{Codebook, ScmaSystem, SearchLayout};
use crate::complexity::OpCounters;
use crate::error::{Error, Result};
use crate::llr::LlrFrame;
use crate::ml::{tie_tolerance, DetectionResult, TieSet};

/// One child of a tree node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Child {
    /// Lowest codeword index of the owner consistent with this child.
    pub codeword: usize,
    /// Bit mask of the owner's codewords consistent with this child.
    pub mask: u64,
    pub symbol: Complex64,
    /// `|y~_p - sum_j g~_{p,j} x_j|^2` with this child's symbol at `p`.
    pub increment: f64,
}

/// A subtree discarded by the radius test, recorded when tracing is enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedBranch {
    pub position: usize,
    /// Codewords of every user still allowed in the pruned subtree (bit masks).
    pub allowed: Vec<u64>,
    /// Partial metric of the pruned node.
    pub metric: f64,
    /// Radius in force when the node was discarded.
    pub radius: f64,
}

/// Static data of one search position.
#[derive(Debug, Clone)]
struct Position {
    user: usize,
    diag: Complex64,
    /// Observation row (other than `p` itself) whose residual this column
    /// enters, with its coefficient.
    feeds: Option<(usize, Complex64)>,
    /// Nonzero entries of the row, diagonal included.
    nnz: u64,
    observed: bool,
}

/// Search state over one augmented system.
pub struct SearchTree<'a> {
    aug: &'a AugmentedSystem,
    layout: &'a SearchLayout,
    positions: Vec<Position>,
    x: Vec<Complex64>,
    /// `sum_{j assigned} g~_{r,j} x_j` for every observation row `r`.
    row_sums: Vec<Complex64>,
    masks: Vec<u64>,
    /// Children of every level, `stride` slots each.
    children: Vec<Child>,
    stride: usize,
    /// Presorted children of rows with a constant residual.
    fixed: Vec<Vec<Child>>,
    pub counters: OpCounters,
    trace: Option<Vec<PrunedBranch>>,
}

/// Iteration state of one level of the depth-first search.
#[derive(Debug, Clone, Copy, Default)]
struct Frame {
    len: usize,
    next: usize,
    partial: f64,
    saved_mask: u64,
    saved_sum: Complex64,
}

impl<'a> SearchTree<'a> {
    pub fn new(aug: &'a AugmentedSystem, layout: &'a SearchLayout) -> Result<Self> {
        let dim = layout.dim();
        if aug.g_tilde.dim() != (dim, dim) || aug.head != layout.head() {
            return Err(Error::Dimension(format!(
                "augmented system is {:?} with {} head rows, layout expects {dim} x {dim} with {}",
                aug.g_tilde.dim(),
                aug.head,
                layout.head()
            )));
        }
        let mut positions: Vec<Position> = (0..dim)
            .map(|p| Position {
                user: layout.user_at(p),
                diag: aug.g_tilde[[p, p]],
                feeds: None,
                nnz: 0,
                observed: p < aug.head,
            })
            .collect();
        for r in 0..dim {
            let mut nnz = 1;
            for j in r + 1..dim {
                let g = aug.g_tilde[[r, j]];
                if g.norm_sqr() == 0.0 {
                    continue;
                }
                nnz += 1;
                if positions[j].feeds.is_some() {
                    return Err(Error::Dimension(format!(
                        "column {j} reaches more than one observation row"
                    )));
                }
                positions[j].feeds = Some((r, g));
            }
            positions[r].nnz = nnz;
        }
        let all = if layout.points() == 64 {
            u64::MAX
        } else {
            (1u64 << layout.points()) - 1
        };
        // Rows no column feeds have a constant residual, so their children
        // can be ranked once.
        let fed: Vec<bool> = (0..dim)
            .map(|r| positions.iter().any(|q| matches!(q.feeds, Some((row, _)) if row == r)))
            .collect();
        let fixed = (0..dim)
            .map(|p| {
                if fed[p] {
                    return Vec::new();
                }
                let open = aug.y_tilde[p];
                let mut kids: Vec<Child> = layout
                    .value_groups(p)
                    .iter()
                    .map(|&(symbol, mask)| Child {
                        codeword: mask.trailing_zeros() as usize,
                        mask,
                        symbol,
                        increment: (open - positions[p].diag * symbol).norm_sqr(),
                    })
                    .collect();
                kids.sort_by(|a, b| a.increment.total_cmp(&b.increment));
                kids
            })
            .collect();
        let stride = (0..dim)
            .map(|p| layout.value_groups(p).len())
            .max()
            .unwrap_or(0);
        Ok(Self {
            aug,
            layout,
            positions,
            x: vec![Complex64::new(0.0, 0.0); dim],
            row_sums: vec![Complex64::new(0.0, 0.0); dim],
            masks: vec![all; layout.users()],
            children: vec![
                Child {
                    codeword: 0,
                    mask: 0,
                    symbol: Complex64::new(0.0, 0.0),
                    increment: 0.0,
                };
                dim * stride
            ],
            stride,
            fixed,
            counters: OpCounters::default(),
            trace: None,
        })
    }

    /// Records every pruned subtree from now on.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    /// Children of the node at position `p`, ascending by metric increment
    /// (ties keep codeword order). All positions above `p` must be assigned.
    pub fn expand_layer(&mut self, p: usize) -> Vec<Child> {
        let len = self.expand(p);
        self.children[p * self.stride..p * self.stride + len].to_vec()
    }

    /// Fills the child slots of level `p` and returns their number.
    fn expand(&mut self, p: usize) -> usize {
        let pos = &self.positions[p];
        let allowed = self.masks[pos.user];
        let open = self.aug.y_tilde[p] - self.row_sums[p];
        let slots = &mut self.children[p * self.stride..(p + 1) * self.stride];
        let mut len = 0;
        if !self.fixed[p].is_empty() {
            for child in &self.fixed[p] {
                let mask = child.mask & allowed;
                if mask != 0 {
                    slots[len] = Child {
                        codeword: mask.trailing_zeros() as usize,
                        mask,
                        ..*child
                    };
                    len += 1;
                }
            }
            self.charge(p, len);
            return len;
        }
        for &(symbol, group) in self.layout.value_groups(p) {
            let mask = group & allowed;
            if mask != 0 {
                slots[len] = Child {
                    codeword: mask.trailing_zeros() as usize,
                    mask,
                    symbol,
                    increment: (open - pos.diag * symbol).norm_sqr(),
                };
                len += 1;
            }
        }
        slots[..len].sort_by(|a, b| a.increment.total_cmp(&b.increment));
        self.charge(p, len);
        len
    }

    fn charge(&mut self, p: usize, len: usize) {
        let pos = &self.positions[p];
        if pos.observed {
            self.counters.head_visits(len as u64, pos.nnz);
        } else {
            self.counters.tail_visits(len as u64);
        }
    }

    /// Places `child` at `p`; returns the owner's previous mask and the
    /// previous sum of the fed row.
    fn assign(&mut self, p: usize, child: &Child) -> (u64, Complex64) {
        self.x[p] = child.symbol;
        let pos = &self.positions[p];
        let sum = match pos.feeds {
            Some((r, g)) => {
                let old = self.row_sums[r];
                self.row_sums[r] = old + g * child.symbol;
                old
            }
            None => Complex64::new(0.0, 0.0),
        };
        let mask = std::mem::replace(&mut self.masks[pos.user], child.mask);
        (mask, sum)
    }

    fn release(&mut self, p: usize, mask: u64, sum: Complex64) {
        let pos = &self.positions[p];
        self.masks[pos.user] = mask;
        if let Some((r, _)) = pos.feeds {
            self.row_sums[r] = sum;
        }
    }

    fn record_pruned(&mut self, p: usize, from: usize, len: usize, partial: f64, radius: f64) {
        if let Some(trace) = self.trace.as_mut() {
            let user = self.positions[p].user;
            for child in &self.children[p * self.stride + from..p * self.stride + len] {
                let mut allowed = self.masks.clone();
                allowed[user] = child.mask;
                trace.push(PrunedBranch {
                    position: p,
                    allowed,
                    metric: partial + child.increment,
                    radius,
                });
            }
        }
    }

    fn leaf<C: LeafCollector>(&mut self, metric: f64, leaves: &mut C, indices: &mut [usize]) {
        self.counters.leaves += 1;
        for (slot, &m) in indices.iter_mut().zip(&self.masks) {
            debug_assert_eq!(m.count_ones(), 1, "leaf fixes every codeword");
            *slot = m.trailing_zeros() as usize;
        }
        leaves.offer(metric, indices);
    }

    /// Depth-first search from the last position down to position 0.
    fn run<C: LeafCollector>(&mut self, leaves: &mut C) {
        let dim = self.layout.dim();
        if dim == 0 {
            return;
        }
        let mut indices = vec![0; self.layout.users()];
        let mut frames = vec![Frame::default(); dim];
        let mut p = dim - 1;
        frames[p].len = self.expand(p);
        loop {
            let f = frames[p];
            if f.next < f.len {
                let child = self.children[p * self.stride + f.next];
                let metric = f.partial + child.increment;
                let radius = leaves.radius();
                if metric > radius {
                    self.record_pruned(p, f.next, f.len, f.partial, radius);
                    frames[p].next = f.len;
                    continue;
                }
                frames[p].next += 1;
                let (mask, sum) = self.assign(p, &child);
                if p == 0 {
                    self.leaf(metric, leaves, &mut indices);
                    self.release(0, mask, sum);
                    continue;
                }
                frames[p].saved_mask = mask;
                frames[p].saved_sum = sum;
                p -= 1;
                frames[p] = Frame {
                    len: self.expand(p),
                    next: 0,
                    partial: metric,
                    ..Frame::default()
                };
                continue;
            }
            if p + 1 == dim {
                break;
            }
            p += 1;
            self.release(p, frames[p].saved_mask, frames[p].saved_sum);
        }
    }

    pub fn take_trace(&mut self) -> Vec<PrunedBranch> {
        self.trace.take().unwrap_or_default()
    }
}

trait LeafCollector {
    fn radius(&self) -> f64;
    fn offer(&mut self, metric: f64, indices: &[usize]);
}

impl LeafCollector for TieSet {
    fn radius(&self) -> f64 {
        self.threshold()
    }

    fn offer(&mut self, metric: f64, indices: &[usize]) {
        TieSet::offer(self, metric, indices);
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ListEntry {
    metric: f64,
    indices: Vec<usize>,
}

impl Eq for ListEntry {}

impl Ord for ListEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.metric
            .total_cmp(&other.metric)
            .then_with(|| self.indices.cmp(&other.indices))
    }
}

impl PartialOrd for ListEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The `N_cand` best leaves seen so far; the worst one sets the radius once
/// the list is full.
struct CandidateList {
    capacity: usize,
    heap: BinaryHeap<ListEntry>,
}

impl LeafCollector for CandidateList {
    fn radius(&self) -> f64 {
        if self.heap.len() < self.capacity {
            f64::INFINITY
        } else {
            self.heap.peek().map_or(f64::INFINITY, |e| e.metric)
        }
    }

    fn offer(&mut self, metric: f64, indices: &[usize]) {
        if self.heap.len() < self.capacity {
            self.heap.push(ListEntry {
                metric,
                indices: indices.to_vec(),
            });
            return;
        }
        let better = self.heap.peek().is_some_and(|worst| {
            metric
                .total_cmp(&worst.metric)
                .then_with(|| indices.cmp(&worst.indices))
                == Ordering::Less
        });
        if better {
            let mut slot = self.heap.peek_mut().expect("full list");
            slot.metric = metric;
            slot.indices.copy_from_slice(indices);
        }
    }
}

/// Outcome of a hard-decision search.
#[derive(Debug, Clone, PartialEq)]
pub struct MsdOutput {
    /// Chosen codeword index of every user.
    pub indices: Vec<usize>,
    /// `||y~ - G~ x^||^2` accumulated along the search path.
    pub search_metric: f64,
    pub counters: OpCounters,
}

/// Hard-decision modified sphere decoding. Returns the maximum-likelihood
/// codewords; ties within [`crate::ml::TIE_TOLERANCE`] go to the
/// lexicographically smallest index tuple, as in [`crate::ml::ml_detect`].
///
/// The constant `-||x^(2)||^2` term separating the augmented objective from
/// `||y - G x||^2` is left out of the search metric.
pub fn msd_detect(aug: &AugmentedSystem, layout: &SearchLayout) -> Result<MsdOutput> {
    let mut tree = SearchTree::new(aug, layout)?;
    Ok(hard_search(&mut tree, aug))
}

/// [`msd_detect`] that also returns every pruned subtree.
pub fn msd_detect_traced(
    aug: &AugmentedSystem,
    layout: &SearchLayout,
) -> Result<(MsdOutput, Vec<PrunedBranch>)> {
    let mut tree = SearchTree::new(aug, layout)?;
    tree.enable_trace();
    let out = hard_search(&mut tree, aug);
    Ok((out, tree.take_trace()))
}

fn hard_search(tree: &mut SearchTree<'_>, aug: &AugmentedSystem) -> MsdOutput {
    let mut ties = TieSet::new(tie_tolerance(&aug.y_tilde));
    tree.run(&mut ties);
    let (search_metric, indices) = ties
        .winner()
        .expect("an infinite initial radius always reaches a leaf");
    MsdOutput {
        indices,
        search_metric,
        counters: tree.counters,
    }
}

/// Outcome of list decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct ListOutput {
    pub llr: LlrFrame,
    /// `(search metric, codeword indices)`, best first.
    pub list: Vec<(f64, Vec<usize>)>,
    pub counters: OpCounters,
}

impl ListOutput {
    /// Codeword indices of the best list member.
    pub fn best(&self) -> &[usize] {
        &self.list[0].1
    }
}

/// List sphere decoding with soft output. Keeps the `n_cand` best leaves and
/// evaluates, for every bit,
/// `lambda = max*_{list, bit=0} L(x) - max*_{list, bit=1} L(x)` with
/// `L(x) = -(||y~ - G~ x||^2 - ||x^(2)||^2) / sigma2`. A bit whose value is
/// the same across the whole list saturates at `+-clamp`.
pub fn list_msd(
    aug: &AugmentedSystem,
    layout: &SearchLayout,
    codebook: &Codebook,
    sigma2: f64,
    n_cand: usize,
    clamp: f64,
) -> Result<ListOutput> {
    if n_cand == 0 {
        return Err(Error::EmptyList);
    }
    let mut tree = SearchTree::new(aug, layout)?;
    let mut leaves = CandidateList {
        capacity: n_cand,
        heap: BinaryHeap::with_capacity(n_cand + 1),
    };
    tree.run(&mut leaves);
    let list: Vec<(f64, Vec<usize>)> = leaves
        .heap
        .into_sorted_vec()
        .into_iter()
        .map(|e| (e.metric, e.indices))
        .collect();

    let lls: Vec<f64> = list
        .iter()
        .map(|(metric, _)| -(metric - layout.tail_energy()) / sigma2)
        .collect();
    let sums = list_log_sums(&lls, list.iter().map(|(_, idx)| idx.as_slice()), codebook);
    Ok(ListOutput {
        llr: LlrFrame::from_log_sums(&sums, clamp, list.len()),
        list,
        counters: tree.counters,
    })
}

/// Per-bit `(log-sum-exp over bit = 0, over bit = 1)` of the list members'
/// log-likelihoods. Every member's weight `exp(ll - max ll)` is computed once
/// and shared by all bits; a side whose weights all underflow falls back to
/// its largest log-likelihood, which is already far past any clamp.
fn list_log_sums<'a>(
    lls: &[f64],
    members: impl Iterator<Item = &'a [usize]>,
    codebook: &Codebook,
) -> Vec<Vec<(f64, f64)>> {
    let users = codebook.users();
    let bits = codebook.bits_per_symbol();
    let top = lls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weight = vec![vec![[0.0f64; 2]; bits]; users];
    let mut best = vec![vec![[f64::NEG_INFINITY; 2]; bits]; users];
    for (&ll, indices) in lls.iter().zip(members) {
        let w = (ll - top).exp();
        for (k, &i) in indices.iter().enumerate() {
            let label = codebook.label(k, i);
            for m in 0..bits {
                let b = ((label >> (bits - 1 - m)) & 1) as usize;
                weight[k][m][b] += w;
                best[k][m][b] = best[k][m][b].max(ll);
            }
        }
    }
    let side = |w: f64, b: f64| {
        if w > 0.0 {
            top + w.ln()
        } else {
            b
        }
    };
    weight
        .iter()
        .zip(&best)
        .map(|(wu, bu)| {
            wu.iter()
                .zip(bu)
                .map(|(w, b)| (side(w[0], b[0]), side(w[1], b[1])))
                .collect()
        })
        .collect()
}

/// Builds the augmented system of one channel use for `layout`.
pub fn augmented_system(layout: &SearchLayout, ch: &EffectiveChannel) -> Result<AugmentedSystem> {
    augment(&layout.search_matrix(&ch.g), &ch.y)
}

/// Hard MSD detection of one channel use, reported in natural layer order.
pub fn detect_frame(
    system: &ScmaSystem,
    layout: &SearchLayout,
    ch: &EffectiveChannel,
) -> Result<DetectionResult> {
    let aug = augmented_system(layout, ch)?;
    let out = msd_detect(&aug, layout)?;
    Ok(DetectionResult::from_indices(
        system,
        &ch.g,
        &ch.y,
        out.indices,
        out.counters,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{residual_norm_sqr, sample_channel, transmit, ChannelModel};
    use crate::codebook::builtin;
    use crate::complexity::predicted_msd_ops;
    use crate::llr::DEFAULT_LLR_CLAMP;
    use crate::ml::{exhaustive_app_llr, hypotheses, ml_detect};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Instance {
        sys: ScmaSystem,
        layout: SearchLayout,
        ch: EffectiveChannel,
        aug: AugmentedSystem,
        sent: Vec<usize>,
    }

    fn instance(name: &str, model: ChannelModel, sigma2: f64, rng: &mut ChaCha8Rng) -> Instance {
        let sys = builtin(name).unwrap();
        let layout = SearchLayout::new(&sys).unwrap();
        let sent: Vec<usize> = (0..6).map(|_| rng.gen_range(0..sys.config.points)).collect();
        let h = sample_channel(&sys.config, model, sigma2, rng);
        let ch = transmit(&sys, &h, &sent, rng);
        let aug = augmented_system(&layout, &ch).unwrap();
        Instance {
            sys,
            layout,
            ch,
            aug,
            sent,
        }
    }

    #[test]
    fn branching_structure_matches_the_modified_tree() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let inst = instance("4ary", ChannelModel::RayleighFlat, 0.1, &mut rng);
        let mut tree = SearchTree::new(&inst.aug, &inst.layout).unwrap();
        // 1-based layers 12, 10, ..., 2 branch; 11, 9, ..., 1 replicate.
        for level in (1..=12).rev() {
            let p = level - 1;
            let children = tree.expand_layer(p);
            if level % 2 == 0 {
                assert_eq!(children.len(), 4);
                assert!(children.windows(2).all(|w| w[0].increment <= w[1].increment));
            } else {
                assert_eq!(children.len(), 1);
                let user = inst.layout.user_at(p);
                let chosen = tree.masks[user];
                assert_eq!(chosen.count_ones(), 1);
                assert_eq!(children[0].mask, chosen);
                assert_eq!(
                    children[0].symbol,
                    inst.sys.codebook.codeword(user, children[0].codeword)[0]
                );
            }
            let first = children[0];
            tree.assign(p, &first);
        }
    }

    #[test]
    fn unpruned_tree_has_m_pow_k_leaves() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let inst = instance("4ary", ChannelModel::RayleighFlat, 0.5, &mut rng);
        let out = list_msd(&inst.aug, &inst.layout, &inst.sys.codebook, 0.5, 5000, 30.0).unwrap();
        assert_eq!(out.counters.leaves, 4096);
        assert_eq!(out.list.len(), 4096);
    }

    #[test]
    fn tail_increment_is_symbol_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let inst = instance("4ary", ChannelModel::RayleighFlat, 0.2, &mut rng);
        let mut tree = SearchTree::new(&inst.aug, &inst.layout).unwrap();
        for p in (4..12).rev() {
            let children = tree.expand_layer(p);
            for c in &children {
                assert_eq!(c.increment, c.symbol.norm_sqr());
            }
            tree.assign(p, &children[0]);
        }
    }

    #[test]
    fn head_increment_uses_only_the_re_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let inst = instance("4ary", ChannelModel::RayleighFlat, 0.2, &mut rng);
        let mut tree = SearchTree::new(&inst.aug, &inst.layout).unwrap();
        for p in (0..12).rev() {
            let children = tree.expand_layer(p);
            if p < 4 {
                for c in &children {
                    let mut r = inst.ch.y[p];
                    for &j in inst.sys.mapping.layer_set(p) {
                        let xj = if j == p { c.symbol } else { tree.x[j] };
                        r -= inst.ch.g[[p, j]] * xj;
                    }
                    assert!((c.increment - r.norm_sqr()).abs() <= 1e-12 * (1.0 + r.norm_sqr()));
                }
            }
            tree.assign(p, &children[0]);
        }
    }

    #[test]
    fn noise_free_reaches_a_single_leaf() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for model in [ChannelModel::Awgn, ChannelModel::RayleighFlat] {
            for _ in 0..50 {
                let inst = instance("4ary", model, 0.0, &mut rng);
                let out = msd_detect(&inst.aug, &inst.layout).unwrap();
                assert_eq!(out.indices, inst.sent);
                assert!(out.counters.leaves < 4096);
                assert!((out.search_metric - inst.layout.tail_energy()).abs() < 1e-12);
                assert!(out.counters.visited_head >= 4);
                assert!(out.counters.visited_tail >= 8);
            }
        }
    }

    #[test]
    fn matches_ml_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for t in 0..1000 {
            let model = if t % 2 == 0 {
                ChannelModel::Awgn
            } else {
                ChannelModel::RayleighFlat
            };
            let sigma2 = 10f64.powf(-rng.gen_range(0.0..1.2));
            let inst = instance("4ary", model, sigma2, &mut rng);
            let det = detect_frame(&inst.sys, &inst.layout, &inst.ch).unwrap();
            let ml = ml_detect(&inst.ch.y, &inst.ch.g, &inst.sys);
            assert_eq!(det.indices, ml.indices);
            assert_eq!(det.metric, ml.metric);
        }
    }

    #[test]
    fn search_metric_is_the_augmented_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..100 {
            let inst = instance("4ary", ChannelModel::RayleighFlat, 0.3, &mut rng);
            let out = list_msd(&inst.aug, &inst.layout, &inst.sys.codebook, 0.3, 50, 30.0).unwrap();
            for (metric, idx) in &out.list {
                let xs = inst.layout.search_vector(idx);
                let dense = inst.aug.residual_norm_sqr(&xs);
                assert!((metric - dense).abs() <= 1e-9 * dense);
                let x = inst.sys.layer_vector(idx);
                let split = residual_norm_sqr(&inst.ch.y, &inst.ch.g, &x) + inst.layout.tail_energy();
                assert!((metric - split).abs() <= 1e-9 * split);
            }
        }
    }

    #[test]
    fn pruned_subtrees_hold_no_better_leaf() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        for _ in 0..30 {
            let inst = instance("4ary", ChannelModel::RayleighFlat, 0.3, &mut rng);
            let (_, trace) = msd_detect_traced(&inst.aug, &inst.layout).unwrap();
            assert!(!trace.is_empty());
            for pruned in &trace {
                let best = hypotheses(6, 4)
                    .filter(|idx| {
                        pruned
                            .allowed
                            .iter()
                            .zip(idx)
                            .all(|(mask, &i)| mask & (1 << i) != 0)
                    })
                    .map(|idx| inst.aug.residual_norm_sqr(&inst.layout.search_vector(&idx)))
                    .fold(f64::INFINITY, f64::min);
                assert!(best >= pruned.radius - 1e-12 * best);
                assert!(best >= pruned.metric - 1e-12 * best);
            }
        }
    }

    #[test]
    fn counters_satisfy_the_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        for _ in 0..100 {
            let inst = instance("4ary", ChannelModel::RayleighFlat, 0.1, &mut rng);
            let c = msd_detect(&inst.aug, &inst.layout).unwrap().counters;
            let p = predicted_msd_ops(3, c.visited_head, c.visited_tail);
            assert_eq!((c.real_adds, c.real_mults, c.exp_log), (p.real_adds, p.real_mults, 0));
        }
    }

    #[test]
    fn full_list_reproduces_exhaustive_llrs() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let sigma2 = 10f64.powf(-rng.gen_range(0.0..1.0));
            let inst = instance("4ary", ChannelModel::RayleighFlat, sigma2, &mut rng);
            let out =
                list_msd(&inst.aug, &inst.layout, &inst.sys.codebook, sigma2, 4096, DEFAULT_LLR_CLAMP)
                    .unwrap();
            let exact = exhaustive_app_llr(&inst.aug, &inst.layout, &inst.sys.codebook, sigma2, DEFAULT_LLR_CLAMP);
            for k in 0..6 {
                for m in 0..2 {
                    assert!((out.llr.values[k][m] - exact.values[k][m]).abs() <= 1e-9);
                }
            }
            assert!(out.list.windows(2).all(|w| w[0].0 <= w[1].0));
        }
    }

    #[test]
    fn singleton_list_saturates_on_the_hard_decision() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for _ in 0..50 {
            let inst = instance("4ary", ChannelModel::RayleighFlat, 0.3, &mut rng);
            let out = list_msd(&inst.aug, &inst.layout, &inst.sys.codebook, 0.3, 1, 30.0).unwrap();
            let hard = msd_detect(&inst.aug, &inst.layout).unwrap();
            assert_eq!(out.best(), hard.indices.as_slice());
            for k in 0..6 {
                for m in 0..2 {
                    let bit = inst.sys.codebook.bit(k, hard.indices[k], m);
                    let expect = if bit == 0 { 30.0 } else { -30.0 };
                    assert_eq!(out.llr.values[k][m], expect);
                }
            }
        }
    }

    #[test]
    fn zero_list_size_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let inst = instance("4ary", ChannelModel::Awgn, 0.3, &mut rng);
        assert!(matches!(
            list_msd(&inst.aug, &inst.layout, &inst.sys.codebook, 0.3, 0, 30.0),
            Err(Error::EmptyList)
        ));
    }

    #[test]
    fn decomposed_positions_branch_over_the_base_alphabet() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let inst = instance("16qam", ChannelModel::RayleighFlat, 0.01, &mut rng);
        let mut tree = SearchTree::new(&inst.aug, &inst.layout).unwrap();
        let mut branching = 0;
        for p in (0..inst.layout.dim()).rev() {
            let children = tree.expand_layer(p);
            assert!((1..=4).contains(&children.len()));
            if children.len() > 1 {
                branching += 1;
            }
            tree.assign(p, &children[0]);
        }
        // Two independent base components per user.
        assert_eq!(branching, 12);
        assert!(tree.masks.iter().all(|m| m.count_ones() == 1));
    }

    #[test]
    fn decomposed_16qam_matches_ml() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..5 {
            let sigma2 = 10f64.powf(-rng.gen_range(1.0..2.5));
            let inst = instance("16qam", ChannelModel::RayleighFlat, sigma2, &mut rng);
            let det = detect_frame(&inst.sys, &inst.layout, &inst.ch).unwrap();
            let ml = ml_detect(&inst.ch.y, &inst.ch.g, &inst.sys);
            assert_eq!(det.indices, ml.indices);
            assert_eq!(det.metric, ml.metric);
        }
    }

    #[test]
    fn user_relabeling_commutes_with_detection() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let base = builtin("4ary").unwrap();
        let scrambled = base.permuted(&[4, 2, 5, 0, 3, 1], &[2, 0, 3, 1]);
        let (relabeled, relabel) = scrambled.relabeled().unwrap();
        let layout = SearchLayout::new(&relabeled).unwrap();
        for _ in 0..100 {
            let sent: Vec<usize> = (0..6).map(|_| rng.gen_range(0..4)).collect();
            let h = sample_channel(&scrambled.config, ChannelModel::RayleighFlat, 0.3, &mut rng);
            let ch = transmit(&scrambled, &h, &sent, &mut rng);
            let reference = ml_detect(&ch.y, &ch.g, &scrambled);
            // Re-express the same observation in relabeled order.
            let h_new = crate::channel::ChannelRealization {
                gains: relabel.user_order.iter().map(|&k| h.gains[k].clone()).collect(),
                ..h.clone()
            };
            let g_new = crate::channel::effective_channel(&relabeled.mapping, &h_new);
            let y_new = relabel.re_order.iter().map(|&n| ch.y[n]).collect();
            let ch_new = EffectiveChannel { g: g_new, y: y_new };
            let det = detect_frame(&relabeled, &layout, &ch_new).unwrap();
            assert_eq!(relabel.restore_users(&det.indices), reference.indices);
            assert!((det.metric - reference.metric).abs() <= 1e-12 * reference.metric.max(1.0));
        }
    }
}
