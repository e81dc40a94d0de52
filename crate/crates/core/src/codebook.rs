//! SCMA codebooks, layer-to-resource mapping matrices and the weighted
//! constant-modulus decomposition used for QAM-like constellations.
//!
//! Indices are 0-based throughout: user `k` owns layers `k*dv .. (k+1)*dv`,
//! and layer `k*dv + l` carries dimension `l` of the user's codeword.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{Error, Result};

/// Relative spread of codeword energies below which a user codebook counts as
/// constant modulus.
pub const CONSTANT_MODULUS_RTOL: f64 = 1e-9;

/// Absolute tolerance (scaled by the constellation peak amplitude) used when
/// matching points against weighted sums of base symbols.
const MATCH_TOL: f64 = 1e-9;

const BUILTIN_4ARY: &str = include_str!("../codebooks/scma_4ary.toml");
const BUILTIN_16QAM: &str = include_str!("../codebooks/scma_16qam.toml");

/// Dimensions of an SCMA uplink.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SystemConfig {
    /// Number of users `K`.
    pub users: usize,
    /// Number of orthogonal resource elements `N`.
    pub resources: usize,
    /// Resource elements occupied per user, `d_v`.
    pub dv: usize,
    /// Layers superimposed per resource element, `d_f` (maximum if irregular).
    pub df: usize,
    /// Constellation size `M`.
    pub points: usize,
}

impl SystemConfig {
    /// Total number of layers `K' = d_v K`.
    pub fn layers(&self) -> usize {
        self.dv * self.users
    }

    /// Bits carried per codeword, `log2 M`.
    pub fn bits_per_symbol(&self) -> usize {
        self.points.trailing_zeros() as usize
    }

    /// Checks the overloaded-system invariants: `N < K`, `d_v < N`, `M` a
    /// power of two and `d_f N = K'`.
    pub fn validate(&self) -> Result<()> {
        if self.resources >= self.users {
            return Err(Error::Dimension(format!(
                "system is not overloaded: N = {} >= K = {}",
                self.resources, self.users
            )));
        }
        if self.dv >= self.resources {
            return Err(Error::Dimension(format!(
                "d_v = {} must be smaller than N = {}",
                self.dv, self.resources
            )));
        }
        if self.points < 2 || !self.points.is_power_of_two() {
            return Err(Error::Dimension(format!(
                "M = {} is not a power of two",
                self.points
            )));
        }
        if self.df * self.resources != self.layers() {
            return Err(Error::Dimension(format!(
                "d_f N = {} does not equal K' = {}",
                self.df * self.resources,
                self.layers()
            )));
        }
        Ok(())
    }
}

/// Binary `N x K'` layer-to-resource matrix `S`, stored by column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingMatrix {
    resources: usize,
    dv: usize,
    layer_re: Vec<usize>,
    layer_sets: Vec<Vec<usize>>,
}

impl MappingMatrix {
    /// Builds `S` from its dense rows. Every column must contain exactly one 1.
    pub fn from_dense(rows: &[Vec<u8>], dv: usize) -> Result<Self> {
        let resources = rows.len();
        if resources == 0 || dv == 0 {
            return Err(Error::Dimension("empty mapping matrix".into()));
        }
        let layers = rows[0].len();
        if rows.iter().any(|r| r.len() != layers) {
            return Err(Error::Dimension("mapping rows have different lengths".into()));
        }
        if layers == 0 || !layers.is_multiple_of(dv) {
            return Err(Error::Dimension(format!(
                "{layers} mapping columns is not a multiple of d_v = {dv}"
            )));
        }
        let mut layer_re = Vec::with_capacity(layers);
        for column in 0..layers {
            let mut ones = 0;
            let mut at = 0;
            for (n, row) in rows.iter().enumerate() {
                match row[column] {
                    0 => {}
                    1 => {
                        ones += 1;
                        at = n;
                    }
                    v => {
                        return Err(Error::Parse(format!(
                            "mapping entry ({n}, {column}) = {v} is not binary"
                        )))
                    }
                }
            }
            if ones != 1 {
                return Err(Error::InvalidMappingColumn { column, ones });
            }
            layer_re.push(at);
        }
        Ok(Self::from_layer_resources(resources, dv, layer_re))
    }

    /// Builds `S` from the resource list of every user, in layer order.
    pub fn from_user_resources(resources: usize, users: &[Vec<usize>]) -> Result<Self> {
        let dv = users.first().map_or(0, Vec::len);
        if dv == 0 || users.iter().any(|u| u.len() != dv) {
            return Err(Error::Dimension("every user needs the same nonzero d_v".into()));
        }
        if users.iter().flatten().any(|&n| n >= resources) {
            return Err(Error::Dimension("resource index out of range".into()));
        }
        Ok(Self::from_layer_resources(
            resources,
            dv,
            users.iter().flatten().copied().collect(),
        ))
    }

    fn from_layer_resources(resources: usize, dv: usize, layer_re: Vec<usize>) -> Self {
        let mut layer_sets = vec![Vec::new(); resources];
        for (layer, &n) in layer_re.iter().enumerate() {
            layer_sets[n].push(layer);
        }
        Self {
            resources,
            dv,
            layer_re,
            layer_sets,
        }
    }

    pub fn resources(&self) -> usize {
        self.resources
    }

    pub fn layers(&self) -> usize {
        self.layer_re.len()
    }

    pub fn users(&self) -> usize {
        self.layer_re.len() / self.dv
    }

    pub fn dv(&self) -> usize {
        self.dv
    }

    /// Resource element occupied by `layer`.
    pub fn layer_resource(&self, layer: usize) -> usize {
        self.layer_re[layer]
    }

    /// `F_n`: the layers superimposed on resource element `n`.
    pub fn layer_set(&self, n: usize) -> &[usize] {
        &self.layer_sets[n]
    }

    pub fn layer_sets(&self) -> &[Vec<usize>] {
        &self.layer_sets
    }

    /// Common `|F_n|` when the mapping is regular.
    pub fn regular_df(&self) -> Option<usize> {
        let df = self.layer_sets[0].len();
        self.layer_sets.iter().all(|f| f.len() == df).then_some(df)
    }

    pub fn max_df(&self) -> usize {
        self.layer_sets.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Resource elements of user `k`, in layer order.
    pub fn user_resources(&self, k: usize) -> &[usize] {
        &self.layer_re[k * self.dv..(k + 1) * self.dv]
    }

    pub fn dense(&self) -> Vec<Vec<u8>> {
        let mut rows = vec![vec![0u8; self.layers()]; self.resources];
        for (layer, &n) in self.layer_re.iter().enumerate() {
            rows[n][layer] = 1;
        }
        rows
    }

    /// The `N x d_v` block `S_k` of user `k`.
    pub fn user_block(&self, k: usize) -> Vec<Vec<u8>> {
        self.dense()
            .into_iter()
            .map(|row| row[k * self.dv..(k + 1) * self.dv].to_vec())
            .collect()
    }

    /// Indicator matrix `P` (`N x K`) with columns `p_k = diag(S_k S_k^T)`.
    pub fn indicator(&self) -> Vec<Vec<u8>> {
        let mut p = vec![vec![0u8; self.users()]; self.resources];
        for k in 0..self.users() {
            let block = self.user_block(k);
            for (n, row) in block.iter().enumerate() {
                p[n][k] = row.iter().map(|s| s * s).sum();
            }
        }
        p
    }

    /// True when the first `N` columns of `S` form an identity matrix.
    pub fn is_upper_triangular(&self) -> bool {
        self.layers() >= self.resources && (0..self.resources).all(|n| self.layer_re[n] == n)
    }

    /// Relabels users and resource elements. Both orders map new index to old.
    pub fn permuted(&self, user_order: &[usize], re_order: &[usize]) -> Self {
        let mut re_new = vec![0; self.resources];
        for (new, &old) in re_order.iter().enumerate() {
            re_new[old] = new;
        }
        let layer_re = user_order
            .iter()
            .flat_map(|&old| self.user_resources(old).iter().map(|&n| re_new[n]))
            .collect();
        Self::from_layer_resources(self.resources, self.dv, layer_re)
    }
}

/// How the constellation energies vary across codewords.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModulusClass {
    Constant,
    OmegaDecomposable { depth: usize },
    General,
}

/// The `M` codewords of one user together with their bit labels.
#[derive(Debug, Clone, PartialEq)]
pub struct UserCodebook {
    codewords: Vec<Vec<Complex64>>,
    labels: Vec<u32>,
    index_of_label: Vec<usize>,
}

impl UserCodebook {
    /// `labels[i]` is the bit label of codeword `i`; labels must be a
    /// permutation of `0..M`.
    pub fn new(codewords: Vec<Vec<Complex64>>, labels: Vec<u32>) -> Result<Self> {
        let m = codewords.len();
        if labels.len() != m {
            return Err(Error::Dimension(format!(
                "{} labels for {m} codewords",
                labels.len()
            )));
        }
        let dv = codewords.first().map_or(0, Vec::len);
        if dv == 0 || codewords.iter().any(|c| c.len() != dv) {
            return Err(Error::Dimension("codewords have inconsistent dimension".into()));
        }
        let mut index_of_label = vec![usize::MAX; m];
        for (i, &label) in labels.iter().enumerate() {
            let slot = index_of_label
                .get_mut(label as usize)
                .ok_or_else(|| Error::Parse(format!("label {label} out of range")))?;
            if *slot != usize::MAX {
                return Err(Error::Parse(format!("duplicate label {label}")));
            }
            *slot = i;
        }
        Ok(Self {
            codewords,
            labels,
            index_of_label,
        })
    }

    pub fn codewords(&self) -> &[Vec<Complex64>] {
        &self.codewords
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
}

/// Per-user constellations `X_k` of an SCMA system.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    users: Vec<UserCodebook>,
    points: usize,
    dv: usize,
    class: ModulusClass,
}

impl Codebook {
    pub fn new(users: Vec<UserCodebook>) -> Result<Self> {
        let first = users
            .first()
            .ok_or_else(|| Error::Dimension("codebook has no users".into()))?;
        let points = first.codewords.len();
        let dv = first.codewords[0].len();
        if points < 2 || !points.is_power_of_two() {
            return Err(Error::Dimension(format!("M = {points} is not a power of two")));
        }
        for (k, u) in users.iter().enumerate() {
            if u.codewords.len() != points || u.codewords[0].len() != dv {
                return Err(Error::Dimension(format!(
                    "user {k} codebook is not {points} x {dv}"
                )));
            }
        }
        let mut cb = Self {
            users,
            points,
            dv,
            class: ModulusClass::General,
        };
        cb.class = if cb.codeword_energy_spread() < CONSTANT_MODULUS_RTOL {
            ModulusClass::Constant
        } else {
            match omega_decompose(&cb) {
                Ok(omega) => ModulusClass::OmegaDecomposable {
                    depth: omega.depth(),
                },
                Err(_) => ModulusClass::General,
            }
        };
        Ok(cb)
    }

    /// The same constellation (with the same labels) for every layer of every
    /// user, each dimension rotated by `rotations[k][l]`.
    pub fn repeated(
        constellation: &[Complex64],
        labels: &[u32],
        rotations: &[Vec<f64>],
    ) -> Result<Self> {
        let users = rotations
            .iter()
            .map(|rot| {
                let codewords = constellation
                    .iter()
                    .map(|&v| rot.iter().map(|&phi| Complex64::from_polar(1.0, phi) * v).collect())
                    .collect();
                UserCodebook::new(codewords, labels.to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(users)
    }

    /// Largest relative spread of `||x||^2` within any user's codebook.
    fn codeword_energy_spread(&self) -> f64 {
        self.users
            .iter()
            .map(|u| {
                let e: Vec<f64> = u.codewords.iter().map(|c| energy(c)).collect();
                let max = e.iter().copied().fold(f64::MIN, f64::max);
                let min = e.iter().copied().fold(f64::MAX, f64::min);
                if max > 0.0 {
                    (max - min) / max
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn users(&self) -> usize {
        self.users.len()
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn dv(&self) -> usize {
        self.dv
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.points.trailing_zeros() as usize
    }

    pub fn class(&self) -> ModulusClass {
        self.class
    }

    pub fn user(&self, k: usize) -> &UserCodebook {
        &self.users[k]
    }

    /// Codeword `i` of user `k` (`d_v` complex values).
    pub fn codeword(&self, k: usize, i: usize) -> &[Complex64] {
        &self.users[k].codewords[i]
    }

    /// Bit label of codeword `i` of user `k`; bit `m` (MSB first) is
    /// `(label >> (L_M - 1 - m)) & 1`.
    pub fn label(&self, k: usize, i: usize) -> u32 {
        self.users[k].labels[i]
    }

    /// Bit `m` (0 = most significant) of codeword `i` of user `k`.
    pub fn bit(&self, k: usize, i: usize, m: usize) -> u8 {
        ((self.label(k, i) >> (self.bits_per_symbol() - 1 - m)) & 1) as u8
    }

    pub fn bits(&self, k: usize, i: usize) -> Vec<u8> {
        (0..self.bits_per_symbol()).map(|m| self.bit(k, i, m)).collect()
    }

    pub fn index_of_label(&self, k: usize, label: u32) -> usize {
        self.users[k].index_of_label[label as usize]
    }

    /// Codeword index carrying `bits` (MSB first) for user `k`.
    pub fn index_of_bits(&self, k: usize, bits: &[u8]) -> Result<usize> {
        let expected = self.bits_per_symbol();
        if bits.len() != expected {
            return Err(Error::BitLength {
                expected,
                got: bits.len(),
            });
        }
        let label = bits.iter().fold(0u32, |acc, &b| (acc << 1) | u32::from(b & 1));
        Ok(self.index_of_label(k, label))
    }

    /// `X_k(c_k)`: the codeword of user `k` carrying `bits`.
    pub fn map_bits(&self, k: usize, bits: &[u8]) -> Result<&[Complex64]> {
        let i = self.index_of_bits(k, bits)?;
        Ok(self.codeword(k, i))
    }

    /// Inverse of [`Codebook::map_bits`]: the bits of the codeword equal to
    /// `point`, if any.
    pub fn demap(&self, k: usize, point: &[Complex64]) -> Option<Vec<u8>> {
        let tol = MATCH_TOL * self.peak_amplitude().max(1.0);
        self.users[k]
            .codewords
            .iter()
            .position(|c| {
                c.len() == point.len() && c.iter().zip(point).all(|(a, b)| (a - b).norm() <= tol)
            })
            .map(|i| self.bits(k, i))
    }

    /// Values taken by dimension `l` of user `k`, in codeword-index order.
    pub fn layer_values(&self, k: usize, l: usize) -> Vec<Complex64> {
        self.users[k].codewords.iter().map(|c| c[l]).collect()
    }

    /// Mean codeword energy `E||x_k||^2`, averaged over users.
    pub fn average_energy(&self) -> f64 {
        let total: f64 = self
            .users
            .iter()
            .flat_map(|u| u.codewords.iter())
            .map(|c| energy(c))
            .sum();
        total / (self.users.len() * self.points) as f64
    }

    fn peak_amplitude(&self) -> f64 {
        self.users
            .iter()
            .flat_map(|u| u.codewords.iter().flatten())
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    /// Reorders users; `user_order[new] = old`.
    pub fn permuted(&self, user_order: &[usize]) -> Self {
        Self {
            users: user_order.iter().map(|&k| self.users[k].clone()).collect(),
            ..self.clone()
        }
    }
}

fn energy(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}

/// A complete SCMA system: dimensions, mapping and codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmaSystem {
    pub config: SystemConfig,
    pub mapping: MappingMatrix,
    pub codebook: Codebook,
}

impl ScmaSystem {
    /// Checks structural consistency between `mapping` and `codebook`. The
    /// overload invariants of [`SystemConfig::validate`] are not enforced here
    /// so that small test topologies can be built.
    pub fn new(mapping: MappingMatrix, codebook: Codebook) -> Result<Self> {
        if mapping.users() != codebook.users() {
            return Err(Error::Dimension(format!(
                "mapping has {} users, codebook has {}",
                mapping.users(),
                codebook.users()
            )));
        }
        if mapping.dv() != codebook.dv() {
            return Err(Error::Dimension(format!(
                "mapping has d_v = {}, codebook has d_v = {}",
                mapping.dv(),
                codebook.dv()
            )));
        }
        let config = SystemConfig {
            users: codebook.users(),
            resources: mapping.resources(),
            dv: mapping.dv(),
            df: mapping.max_df(),
            points: codebook.points(),
        };
        Ok(Self {
            config,
            mapping,
            codebook,
        })
    }

    /// Relabels users and REs (`new -> old` orders).
    pub fn permuted(&self, user_order: &[usize], re_order: &[usize]) -> Self {
        Self {
            config: self.config,
            mapping: self.mapping.permuted(user_order, re_order),
            codebook: self.codebook.permuted(user_order),
        }
    }

    /// Brings the system into upper-triangular form.
    pub fn relabeled(&self) -> Result<(Self, Relabeling)> {
        let relabel = relabel_upper_triangular(&self.mapping)?;
        let system = Self {
            config: self.config,
            mapping: relabel.mapping.clone(),
            codebook: self.codebook.permuted(&relabel.user_order),
        };
        Ok((system, relabel))
    }

    /// Natural-order layer vector `x` for the given codeword indices.
    pub fn layer_vector(&self, indices: &[usize]) -> Array1<Complex64> {
        indices
            .iter()
            .enumerate()
            .flat_map(|(k, &i)| self.codebook.codeword(k, i).iter().copied())
            .collect()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookFile {
    #[allow(dead_code)]
    name: Option<String>,
    users: usize,
    resources: usize,
    dv: usize,
    points: usize,
    mapping: Vec<Vec<u8>>,
    user: Vec<UserEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UserEntry {
    labels: Vec<String>,
    codewords: Vec<Vec<[f64; 2]>>,
}

/// Parses the text codebook format (see `codebooks/*.toml`).
pub fn parse_codebook(text: &str) -> Result<ScmaSystem> {
    let file: CodebookFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if file.mapping.len() != file.resources {
        return Err(Error::Dimension(format!(
            "mapping has {} rows, expected N = {}",
            file.mapping.len(),
            file.resources
        )));
    }
    if file.mapping.iter().any(|r| r.len() != file.users * file.dv) {
        return Err(Error::Dimension(format!(
            "mapping rows must have K d_v = {} columns",
            file.users * file.dv
        )));
    }
    if file.user.len() != file.users {
        return Err(Error::Dimension(format!(
            "{} user blocks, expected K = {}",
            file.user.len(),
            file.users
        )));
    }
    let mapping = MappingMatrix::from_dense(&file.mapping, file.dv)?;
    let bits = file.points.trailing_zeros() as usize;
    let users = file
        .user
        .into_iter()
        .enumerate()
        .map(|(k, entry)| {
            if entry.codewords.len() != file.points {
                return Err(Error::Dimension(format!(
                    "user {k} has {} codewords, expected M = {}",
                    entry.codewords.len(),
                    file.points
                )));
            }
            if entry.codewords.iter().any(|c| c.len() != file.dv) {
                return Err(Error::Dimension(format!(
                    "user {k} codewords must have d_v = {} entries",
                    file.dv
                )));
            }
            let labels = entry
                .labels
                .iter()
                .map(|s| parse_label(s, bits))
                .collect::<Result<Vec<_>>>()?;
            let codewords = entry
                .codewords
                .iter()
                .map(|c| c.iter().map(|&[re, im]| Complex64::new(re, im)).collect())
                .collect();
            UserCodebook::new(codewords, labels)
        })
        .collect::<Result<Vec<_>>>()?;
    let system = ScmaSystem::new(mapping, Codebook::new(users)?)?;
    if file.points != system.codebook.points() {
        return Err(Error::Dimension("points does not match codebook".into()));
    }
    system.config.validate()?;
    Ok(system)
}

fn parse_label(s: &str, bits: usize) -> Result<u32> {
    if s.len() != bits || !s.bytes().all(|b| b == b'0' || b == b'1') {
        return Err(Error::Parse(format!(
            "label \"{s}\" is not a {bits}-bit binary string"
        )));
    }
    Ok(s.bytes().fold(0, |acc, b| (acc << 1) | u32::from(b - b'0')))
}

/// Loads a codebook file. `builtin:4ary` and `builtin:16qam` name the shipped
/// codebooks.
pub fn load_codebook(path: impl AsRef<Path>) -> Result<ScmaSystem> {
    let path = path.as_ref();
    if let Some(name) = path.to_str().and_then(|s| s.strip_prefix("builtin:")) {
        return builtin(name)
            .ok_or_else(|| Error::Config(format!("unknown builtin codebook \"{name}\"")));
    }
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_codebook(&text)
}

/// Shipped codebooks: `4ary` (rotated QPSK per layer) and `16qam`.
pub fn builtin(name: &str) -> Option<ScmaSystem> {
    let text = match name {
        "4ary" => BUILTIN_4ARY,
        "16qam" => BUILTIN_16QAM,
        _ => return None,
    };
    Some(parse_codebook(text).expect("shipped codebook is valid"))
}

/// Text of a shipped codebook file.
pub fn builtin_text(name: &str) -> Option<&'static str> {
    match name {
        "4ary" => Some(BUILTIN_4ARY),
        "16qam" => Some(BUILTIN_16QAM),
        _ => None,
    }
}

/// Result of relabeling users and REs into upper-triangular form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relabeling {
    /// `user_order[new] = old`.
    pub user_order: Vec<usize>,
    /// `re_order[new] = old`.
    pub re_order: Vec<usize>,
    pub mapping: MappingMatrix,
}

impl Relabeling {
    pub fn is_identity(&self) -> bool {
        self.user_order.iter().enumerate().all(|(i, &k)| i == k)
            && self.re_order.iter().enumerate().all(|(i, &n)| i == n)
    }

    /// Maps per-user values from relabeled order back to the original order.
    pub fn restore_users<T: Clone>(&self, relabeled: &[T]) -> Vec<T> {
        let mut out = relabeled.to_vec();
        for (new, &old) in self.user_order.iter().enumerate() {
            out[old] = relabeled[new].clone();
        }
        out
    }
}

/// Finds `N / d_v` mutually orthogonal users, places them first and renumbers
/// REs so the first `N` columns of `S` become the identity.
///
/// Among all valid choices the one with the lexicographically smallest RE
/// renumbering (then smallest user tuple) wins, so an already triangular
/// mapping is returned unchanged.
pub fn relabel_upper_triangular(s: &MappingMatrix) -> Result<Relabeling> {
    let n = s.resources();
    let dv = s.dv();
    let needed = n / dv;
    if !n.is_multiple_of(dv) {
        return Err(Error::NoOrthogonalUsers { needed: n.div_ceil(dv) });
    }
    let sets: Vec<BTreeSet<usize>> = (0..s.users())
        .map(|k| s.user_resources(k).iter().copied().collect())
        .collect();

    let mut best: Option<(Vec<usize>, Vec<usize>)> = None;
    let mut tuple = Vec::with_capacity(needed);
    let mut used = BTreeSet::new();
    search_orthogonal(s, &sets, needed, &mut tuple, &mut used, &mut best);

    let (re_order, chosen) = best.ok_or(Error::NoOrthogonalUsers { needed })?;
    let mut user_order = chosen.clone();
    user_order.extend((0..s.users()).filter(|k| !chosen.contains(k)));
    let mapping = s.permuted(&user_order, &re_order);
    debug_assert!(mapping.is_upper_triangular());
    Ok(Relabeling {
        user_order,
        re_order,
        mapping,
    })
}

fn search_orthogonal(
    s: &MappingMatrix,
    sets: &[BTreeSet<usize>],
    needed: usize,
    tuple: &mut Vec<usize>,
    used: &mut BTreeSet<usize>,
    best: &mut Option<(Vec<usize>, Vec<usize>)>,
) {
    if tuple.len() == needed {
        let re_order: Vec<usize> = tuple
            .iter()
            .flat_map(|&k| s.user_resources(k).iter().copied())
            .collect();
        let key = (re_order, tuple.clone());
        if best.as_ref().is_none_or(|b| key < *b) {
            *best = Some(key);
        }
        return;
    }
    for k in 0..sets.len() {
        if tuple.contains(&k) || sets[k].len() != s.dv() || !sets[k].is_disjoint(used) {
            continue;
        }
        tuple.push(k);
        used.extend(sets[k].iter().copied());
        search_orthogonal(s, sets, needed, tuple, used, best);
        for r in &sets[k] {
            used.remove(r);
        }
        tuple.pop();
    }
}

/// Decomposition `x = Omega x'` of a codebook into weighted sums of
/// constant-modulus base symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaDecomposition {
    depth: usize,
    dv: usize,
    weights: Vec<f64>,
    base_alphabets: Vec<Vec<Complex64>>,
    components: Vec<Vec<Vec<usize>>>,
}

impl OmegaDecomposition {
    /// Number of base symbols per layer, `m`.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `omega = [2^{m-1}, ..., 2, 1]`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Constant-modulus alphabet of the entries of `x'` on `layer`.
    pub fn base_alphabet(&self, layer: usize) -> &[Complex64] {
        &self.base_alphabets[layer]
    }

    /// Base-alphabet indices of codeword `i` of user `k`, laid out as
    /// `[l * m + j]` for dimension `l` and component `j`.
    pub fn component_indices(&self, k: usize, i: usize) -> &[usize] {
        &self.components[k][i]
    }

    /// Base symbols `x'_k` of codeword `i` of user `k`, in the same layout as
    /// [`OmegaDecomposition::component_indices`].
    pub fn components(&self, k: usize, i: usize) -> Vec<Complex64> {
        let m = self.depth;
        self.components[k][i]
            .iter()
            .enumerate()
            .map(|(t, &c)| self.base_alphabets[k * self.dv + t / m][c])
            .collect()
    }

    /// `sum_j omega_j x'_{l,j}` for every dimension of codeword `i` of user `k`.
    pub fn reconstruct(&self, k: usize, i: usize) -> Vec<Complex64> {
        self.components(k, i)
            .chunks(self.depth)
            .map(|c| c.iter().zip(&self.weights).map(|(v, &w)| v * w).sum())
            .collect()
    }

    /// Dense block-diagonal `K' x m K'` matrix `Omega`.
    pub fn omega_matrix(&self) -> Array2<f64> {
        let layers = self.base_alphabets.len();
        let m = self.depth;
        let mut omega = Array2::zeros((layers, m * layers));
        for layer in 0..layers {
            for (j, &w) in self.weights.iter().enumerate() {
                omega[[layer, layer * m + j]] = w;
            }
        }
        omega
    }
}

/// Factors every codeword into `m` weighted base symbols drawn from a
/// constant-modulus 4-point alphabet per layer.
///
/// Constant-modulus codebooks decompose trivially with `m = 1` and
/// `Omega = I`. Otherwise `M` must be `4^m`; the base alphabet of each layer is
/// its four minimum-modulus points and every point is matched exhaustively
/// against all `4^m` weighted sums.
pub fn omega_decompose(cb: &Codebook) -> Result<OmegaDecomposition> {
    let dv = cb.dv();
    let layers = cb.users() * dv;
    if cb.codeword_energy_spread() < CONSTANT_MODULUS_RTOL {
        let mut base_alphabets = Vec::with_capacity(layers);
        let mut components = vec![vec![Vec::with_capacity(dv); cb.points()]; cb.users()];
        for k in 0..cb.users() {
            for l in 0..dv {
                let mut alphabet: Vec<Complex64> = Vec::new();
                for (i, v) in cb.layer_values(k, l).into_iter().enumerate() {
                    let idx = match alphabet.iter().position(|a| (a - v).norm() <= MATCH_TOL) {
                        Some(idx) => idx,
                        None => {
                            alphabet.push(v);
                            alphabet.len() - 1
                        }
                    };
                    components[k][i].push(idx);
                }
                base_alphabets.push(alphabet);
            }
        }
        return Ok(OmegaDecomposition {
            depth: 1,
            dv,
            weights: vec![1.0],
            base_alphabets,
            components,
        });
    }

    let m = (cb.points().trailing_zeros() / 2) as usize;
    if 4usize.pow(m as u32) != cb.points() {
        return Err(Error::GeneralModulus(format!(
            "M = {} is not a power of 4",
            cb.points()
        )));
    }
    let weights: Vec<f64> = (0..m).rev().map(|j| (1u64 << j) as f64).collect();
    let tol = MATCH_TOL * cb.peak_amplitude().max(1.0);

    let mut base_alphabets = Vec::with_capacity(layers);
    let mut components = vec![vec![vec![0; dv * m]; cb.points()]; cb.users()];
    for k in 0..cb.users() {
        for l in 0..dv {
            let values = cb.layer_values(k, l);
            let alphabet = min_modulus_alphabet(&values, tol).ok_or_else(|| {
                Error::GeneralModulus(format!(
                    "user {k} dimension {l} has no 4-point minimum-modulus base"
                ))
            })?;
            for (i, v) in values.iter().enumerate() {
                let tuple = match_weighted_sum(*v, &alphabet, &weights, tol).ok_or_else(|| {
                    Error::GeneralModulus(format!(
                        "user {k} codeword {i} dimension {l} is not a weighted sum of base symbols"
                    ))
                })?;
                components[k][i][l * m..(l + 1) * m].copy_from_slice(&tuple);
            }
            base_alphabets.push(alphabet);
        }
    }
    Ok(OmegaDecomposition {
        depth: m,
        dv,
        weights,
        base_alphabets,
        components,
    })
}

fn min_modulus_alphabet(values: &[Complex64], tol: f64) -> Option<Vec<Complex64>> {
    let min = values.iter().map(|v| v.norm()).fold(f64::MAX, f64::min);
    let mut alphabet: Vec<Complex64> = Vec::new();
    for v in values.iter().filter(|v| v.norm() - min <= tol) {
        if !alphabet.iter().any(|a| (a - v).norm() <= tol) {
            alphabet.push(*v);
        }
    }
    (alphabet.len() == 4 && min > tol).then_some(alphabet)
}

fn match_weighted_sum(
    v: Complex64,
    alphabet: &[Complex64],
    weights: &[f64],
    tol: f64,
) -> Option<Vec<usize>> {
    let m = weights.len();
    let q = alphabet.len();
    (0..q.pow(m as u32)).find_map(|mut code| {
        let mut tuple = vec![0; m];
        for slot in tuple.iter_mut().rev() {
            *slot = code % q;
            code /= q;
        }
        let sum: Complex64 = tuple.iter().zip(weights).map(|(&c, &w)| alphabet[c] * w).sum();
        ((sum - v).norm() <= tol).then_some(tuple)
    })
}

/// Maps codeword choices onto the columns searched by the sphere decoder.
///
/// Search position `p` corresponds to column `weight_p * g_{layer_p}` of the
/// effective channel. For constant-modulus codebooks positions are the layers
/// themselves. For decomposed codebooks there are `m K'` positions: the most
/// significant component of layers `0..N` first (so the augmented matrix stays
/// upper triangular), then the remaining components in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchLayout {
    head: usize,
    depth: usize,
    points: usize,
    columns: Vec<(usize, f64)>,
    position_user: Vec<usize>,
    position_slot: Vec<usize>,
    user_positions: Vec<Vec<usize>>,
    symbols: Vec<Vec<Vec<Complex64>>>,
    groups: Vec<Vec<(Complex64, u64)>>,
    tail_energy: f64,
}

impl SearchLayout {
    /// Requires an upper-triangular mapping and a constant-modulus or
    /// decomposable codebook whose augmented tail energy is hypothesis
    /// independent.
    pub fn new(system: &ScmaSystem) -> Result<Self> {
        if !system.mapping.is_upper_triangular() {
            return Err(Error::NotUpperTriangular);
        }
        let cb = &system.codebook;
        if cb.points() > 64 {
            return Err(Error::Dimension(format!(
                "sphere search supports at most 64 codewords per user, got {}",
                cb.points()
            )));
        }
        if cb.class() == ModulusClass::General {
            return Err(Error::GeneralModulus(
                "codebook is neither constant modulus nor decomposable".into(),
            ));
        }
        let omega = omega_decompose(cb)?;
        let m = omega.depth();
        let dv = cb.dv();
        let head = system.mapping.resources();
        let layers = system.mapping.layers();

        // (layer, component) of every search position.
        let mut order: Vec<(usize, usize)> = (0..head).map(|n| (n, 0)).collect();
        for layer in 0..layers {
            for j in 0..m {
                if !(layer < head && j == 0) {
                    order.push((layer, j));
                }
            }
        }
        let columns = order
            .iter()
            .map(|&(layer, j)| (layer, omega.weights()[j]))
            .collect();
        let position_user: Vec<usize> = order.iter().map(|&(layer, _)| layer / dv).collect();
        let mut user_positions = vec![Vec::new(); cb.users()];
        for (p, &k) in position_user.iter().enumerate() {
            user_positions[k].push(p);
        }
        let mut position_slot = vec![0; order.len()];
        for positions in &user_positions {
            for (slot, &p) in positions.iter().enumerate() {
                position_slot[p] = slot;
            }
        }
        let symbols: Vec<Vec<Vec<Complex64>>> = (0..cb.users())
            .map(|k| {
                (0..cb.points())
                    .map(|i| {
                        let comps = omega.components(k, i);
                        user_positions[k]
                            .iter()
                            .map(|&p| {
                                let (layer, j) = order[p];
                                comps[(layer - k * dv) * m + j]
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();

        let mut tail_energy = 0.0;
        for k in 0..cb.users() {
            let tails: Vec<f64> = symbols[k]
                .iter()
                .map(|s| {
                    user_positions[k]
                        .iter()
                        .zip(s)
                        .filter(|(&p, _)| p >= head)
                        .map(|(_, v)| v.norm_sqr())
                        .sum()
                })
                .collect();
            let max = tails.iter().copied().fold(0.0, f64::max);
            let min = tails.iter().copied().fold(f64::MAX, f64::min);
            if max > 0.0 && (max - min) / max >= CONSTANT_MODULUS_RTOL {
                return Err(Error::GeneralModulus(format!(
                    "augmented tail energy of user {k} varies across codewords"
                )));
            }
            tail_energy += tails[0];
        }

        let groups = (0..order.len())
            .map(|p| {
                let (k, slot) = (position_user[p], position_slot[p]);
                let mut g: Vec<(Complex64, u64)> = Vec::new();
                for (i, s) in symbols[k].iter().enumerate() {
                    match g.iter_mut().find(|(v, _)| *v == s[slot]) {
                        Some((_, mask)) => *mask |= 1 << i,
                        None => g.push((s[slot], 1 << i)),
                    }
                }
                g
            })
            .collect();

        Ok(Self {
            head,
            depth: m,
            points: cb.points(),
            columns,
            position_user,
            position_slot,
            user_positions,
            symbols,
            groups,
            tail_energy,
        })
    }

    /// Number of observation rows `N`.
    pub fn head(&self) -> usize {
        self.head
    }

    /// Number of search positions (tree layers).
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn users(&self) -> usize {
        self.user_positions.len()
    }

    pub fn points(&self) -> usize {
        self.points
    }

    /// Owner of search position `p`.
    pub fn user_at(&self, p: usize) -> usize {
        self.position_user[p]
    }

    pub fn user_positions(&self, k: usize) -> &[usize] {
        &self.user_positions[k]
    }

    /// Highest position of user `k`, where the descending search first
    /// branches on the user's codeword.
    pub fn branch_position(&self, k: usize) -> usize {
        *self.user_positions[k].last().expect("user has positions")
    }

    pub fn is_branching(&self, p: usize) -> bool {
        self.branch_position(self.position_user[p]) == p
    }

    /// Symbol placed at position `p` when its owner sends codeword `i`.
    pub fn symbol(&self, i: usize, p: usize) -> Complex64 {
        self.symbols[self.position_user[p]][i][self.position_slot[p]]
    }

    /// Distinct symbols at position `p`, each with the bit mask of the owner's
    /// codewords placing it there, in order of first codeword.
    pub fn value_groups(&self, p: usize) -> &[(Complex64, u64)] {
        &self.groups[p]
    }

    /// `||x^(2)||^2`, identical for every hypothesis.
    pub fn tail_energy(&self) -> f64 {
        self.tail_energy
    }

    /// `(layer, weight)` of search column `p`.
    pub fn column(&self, p: usize) -> (usize, f64) {
        self.columns[p]
    }

    /// `G Omega` with columns in search order (`N x dim`).
    pub fn search_matrix(&self, g: &Array2<Complex64>) -> Array2<Complex64> {
        let mut out = Array2::zeros((g.nrows(), self.dim()));
        for (p, &(layer, w)) in self.columns.iter().enumerate() {
            for n in 0..g.nrows() {
                out[[n, p]] = g[[n, layer]] * w;
            }
        }
        out
    }

    /// Search-order symbol vector for per-user codeword indices.
    pub fn search_vector(&self, indices: &[usize]) -> Array1<Complex64> {
        (0..self.dim())
            .map(|p| self.symbol(indices[self.position_user[p]], p))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_mapping() -> MappingMatrix {
        MappingMatrix::from_user_resources(
            4,
            &[
                vec![0, 1],
                vec![2, 3],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
            ],
        )
        .unwrap()
    }

    fn qam(levels: &[f64]) -> Vec<Complex64> {
        levels
            .iter()
            .flat_map(|&re| levels.iter().map(move |&im| Complex64::new(re, im)))
            .collect()
    }

    fn plain_qam_codebook(levels: &[f64]) -> Codebook {
        let points = qam(levels);
        let labels: Vec<u32> = (0..points.len() as u32).collect();
        Codebook::repeated(&points, &labels, &vec![vec![0.0, 0.0]; 6]).unwrap()
    }

    #[test]
    fn builtin_4ary_dimensions() {
        let sys = builtin("4ary").unwrap();
        assert_eq!(sys.config.users, 6);
        assert_eq!(sys.config.resources, 4);
        assert_eq!(sys.config.dv, 2);
        assert_eq!(sys.config.layers(), 12);
        assert_eq!(sys.config.df, 3);
        assert_eq!(sys.config.bits_per_symbol(), 2);
        assert_eq!(sys.codebook.class(), ModulusClass::Constant);
        assert!(sys.mapping.is_upper_triangular());
        assert_eq!(sys.mapping, paper_mapping());
    }

    #[test]
    fn builtin_16qam_is_decomposable() {
        let sys = builtin("16qam").unwrap();
        assert_eq!(
            sys.codebook.class(),
            ModulusClass::OmegaDecomposable { depth: 2 }
        );
    }

    #[test]
    fn two_ones_in_a_column_is_rejected() {
        let text = builtin_text("4ary")
            .unwrap()
            .replacen("[0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 1, 0]", "[1, 1, 0, 0, 0, 0, 0, 0, 1, 0, 1, 0]", 1);
        let err = parse_codebook(&text).unwrap_err();
        assert!(matches!(err, Error::InvalidMappingColumn { column: 0, ones: 2 }));
        assert!(err.to_string().contains("invalid mapping column"));
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(matches!(parse_codebook("users = ["), Err(Error::Parse(_))));
        let text = builtin_text("4ary").unwrap().replacen("points = 4", "points = 8", 1);
        assert!(parse_codebook(&text).is_err());
        let text = builtin_text("4ary")
            .unwrap()
            .replacen("labels = [\"00\", \"01\", \"11\", \"10\"]", "labels = [\"00\", \"00\", \"11\", \"10\"]", 1);
        assert!(matches!(parse_codebook(&text), Err(Error::Parse(_))));
        assert!(matches!(
            load_codebook("/nonexistent/codebook.toml"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn layer_sets_and_indicator() {
        let s = paper_mapping();
        for n in 0..4 {
            assert_eq!(s.layer_set(n).len(), 3);
            for &layer in s.layer_set(n) {
                assert_eq!(s.dense()[n][layer], 1);
            }
        }
        let p = s.indicator();
        for k in 0..6 {
            let res = s.user_resources(k);
            for n in 0..4 {
                assert_eq!(p[n][k], u8::from(res.contains(&n)));
            }
        }
        for column in 0..12 {
            assert_eq!(s.dense().iter().map(|r| r[column]).sum::<u8>(), 1);
        }
    }

    #[test]
    fn relabel_identity_for_triangular_mapping() {
        let r = relabel_upper_triangular(&paper_mapping()).unwrap();
        assert!(r.is_identity());
        assert_eq!(r.mapping, paper_mapping());
    }

    #[test]
    fn relabel_restores_swapped_users() {
        // Users 1,2 swapped with users 3,4.
        let swapped = paper_mapping().permuted(&[2, 3, 0, 1, 4, 5], &[0, 1, 2, 3]);
        assert!(!swapped.is_upper_triangular());
        let r = relabel_upper_triangular(&swapped).unwrap();
        assert_eq!(r.user_order, vec![2, 3, 0, 1, 4, 5]);
        assert_eq!(r.re_order, vec![0, 1, 2, 3]);
        assert_eq!(r.mapping, paper_mapping());
    }

    #[test]
    fn relabel_brute_force_agrees_on_existence() {
        // Every permutation of users has an orthogonal pair, so relabeling
        // always succeeds and yields a triangular matrix.
        let base = paper_mapping();
        let perms = [[5, 4, 3, 2, 1, 0], [1, 3, 5, 0, 2, 4], [4, 0, 5, 1, 3, 2]];
        for perm in perms {
            let s = base.permuted(&perm, &[3, 1, 0, 2]);
            let r = relabel_upper_triangular(&s).unwrap();
            assert!(r.mapping.is_upper_triangular());
            assert_eq!(s.permuted(&r.user_order, &r.re_order), r.mapping);
        }
    }

    #[test]
    fn relabel_fails_without_orthogonal_users() {
        // Every user occupies RE 0, so no two users are orthogonal.
        let star = MappingMatrix::from_user_resources(
            4,
            &[vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 0], vec![2, 0]],
        )
        .unwrap();
        assert!(matches!(
            relabel_upper_triangular(&star),
            Err(Error::NoOrthogonalUsers { needed: 2 })
        ));
    }

    #[test]
    fn omega_of_16qam_point() {
        let cb = plain_qam_codebook(&[-3.0, -1.0, 1.0, 3.0]);
        let omega = omega_decompose(&cb).unwrap();
        assert_eq!(omega.depth(), 2);
        assert_eq!(omega.weights(), &[2.0, 1.0]);
        // 3 + j1 sits at grid position (re = 3, im = 1) -> index 3*4 + 2.
        let i = 14;
        assert_eq!(cb.codeword(0, i)[0], Complex64::new(3.0, 1.0));
        let comps = omega.components(0, i);
        assert_eq!(comps[0], Complex64::new(1.0, 1.0));
        assert_eq!(comps[1], Complex64::new(1.0, -1.0));
        for k in 0..6 {
            for i in 0..16 {
                assert_eq!(omega.reconstruct(k, i), cb.codeword(k, i));
            }
        }
    }

    #[test]
    fn omega_of_64qam() {
        let cb = plain_qam_codebook(&[-7.0, -5.0, -3.0, -1.0, 1.0, 3.0, 5.0, 7.0]);
        assert_eq!(cb.class(), ModulusClass::OmegaDecomposable { depth: 3 });
        let omega = omega_decompose(&cb).unwrap();
        assert_eq!(omega.weights(), &[4.0, 2.0, 1.0]);
        for i in 0..64 {
            assert_eq!(omega.reconstruct(2, i), cb.codeword(2, i));
        }
        let big = omega.omega_matrix();
        assert_eq!(big.dim(), (12, 36));
        for layer in 0..12 {
            let nonzero: Vec<usize> = (0..36).filter(|&c| big[[layer, c]] != 0.0).collect();
            assert_eq!(nonzero, vec![3 * layer, 3 * layer + 1, 3 * layer + 2]);
        }
    }

    #[test]
    fn omega_of_constant_modulus_is_identity() {
        let sys = builtin("4ary").unwrap();
        let omega = omega_decompose(&sys.codebook).unwrap();
        assert_eq!(omega.depth(), 1);
        assert_eq!(omega.weights(), &[1.0]);
        let big = omega.omega_matrix();
        assert_eq!(big, Array2::eye(12));
        for k in 0..6 {
            for i in 0..4 {
                assert_eq!(omega.reconstruct(k, i), sys.codebook.codeword(k, i));
            }
        }
    }

    #[test]
    fn general_modulus_is_detected() {
        // 8 points on two rings: not constant modulus and M is not 4^m.
        let pts: Vec<Complex64> = (0..8)
            .map(|i| Complex64::from_polar(1.0 + (i % 2) as f64, i as f64))
            .collect();
        let labels: Vec<u32> = (0..8).collect();
        let cb = Codebook::repeated(&pts, &labels, &vec![vec![0.0, 0.0]; 6]).unwrap();
        assert_eq!(cb.class(), ModulusClass::General);
        assert!(matches!(omega_decompose(&cb), Err(Error::GeneralModulus(_))));
        let sys = ScmaSystem::new(paper_mapping(), cb).unwrap();
        let err = SearchLayout::new(&sys).unwrap_err();
        assert!(err.to_string().contains("general modulus"));
    }

    #[test]
    fn map_bits_is_bijective() {
        for name in ["4ary", "16qam"] {
            let cb = builtin(name).unwrap().codebook;
            let l = cb.bits_per_symbol();
            for k in 0..cb.users() {
                let mut seen = Vec::new();
                for label in 0..cb.points() as u32 {
                    let bits: Vec<u8> = (0..l).map(|m| ((label >> (l - 1 - m)) & 1) as u8).collect();
                    let x = cb.map_bits(k, &bits).unwrap().to_vec();
                    assert!(!seen.contains(&x));
                    assert_eq!(cb.demap(k, &x).unwrap(), bits);
                    seen.push(x);
                }
            }
        }
    }

    #[test]
    fn all_zero_bits_follow_file_labels() {
        let cb = builtin("16qam").unwrap().codebook;
        // The file lists "0000" first.
        assert_eq!(cb.map_bits(0, &[0, 0, 0, 0]).unwrap(), cb.codeword(0, 0));
        let cb = builtin("4ary").unwrap().codebook;
        // "10" is the fourth entry of every user.
        assert_eq!(cb.map_bits(3, &[1, 0]).unwrap(), cb.codeword(3, 3));
    }

    #[test]
    fn wrong_bit_length_is_rejected() {
        let cb = builtin("4ary").unwrap().codebook;
        assert!(matches!(
            cb.map_bits(0, &[0, 1, 1]),
            Err(Error::BitLength { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn search_layout_for_constant_modulus() {
        let sys = builtin("4ary").unwrap();
        let layout = SearchLayout::new(&sys).unwrap();
        assert_eq!(layout.dim(), 12);
        assert_eq!(layout.head(), 4);
        let branching: Vec<usize> = (0..12).filter(|&p| layout.is_branching(p)).collect();
        assert_eq!(branching, vec![1, 3, 5, 7, 9, 11]);
        // Four tail users with unit-modulus layers.
        assert!((layout.tail_energy() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn search_layout_for_decomposed_codebook() {
        let sys = builtin("16qam").unwrap();
        let layout = SearchLayout::new(&sys).unwrap();
        assert_eq!(layout.dim(), 24);
        for p in 0..4 {
            assert_eq!(layout.column(p), (p, 2.0));
        }
        let g: Array2<Complex64> = Array2::from_shape_fn((4, 12), |(n, c)| {
            Complex64::new(n as f64 + 1.0, c as f64 - 3.0)
        });
        let gs = layout.search_matrix(&g);
        for idx in [[0, 5, 9, 15, 2, 7], [15, 14, 13, 12, 11, 10]] {
            let x = sys.layer_vector(&idx);
            let xs = layout.search_vector(&idx);
            let a = g.dot(&x);
            let b = gs.dot(&xs);
            for n in 0..4 {
                assert!((a[n] - b[n]).norm() < 1e-12);
            }
        }
    }
}
