//! Channel realizations, the effective channel `G = [S_1 H_1 ... S_K H_K]`
//! and the square upper-triangular augmentation used by the sphere decoder.

use ndarray::{s, Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::codebook::{MappingMatrix, ScmaSystem, SystemConfig};
use crate::error::{Error, Result};

/// Fading model for the per-user diagonal gains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelModel {
    /// Unit gains on every layer.
    Awgn,
    /// One CN(0, 1) gain per user, shared by all of the user's REs.
    RayleighFlat,
}

impl std::str::FromStr for ChannelModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "awgn" => Ok(Self::Awgn),
            "rayleigh" | "rayleigh-flat" => Ok(Self::RayleighFlat),
            _ => Err(Error::Config(format!("unknown channel model \"{s}\""))),
        }
    }
}

/// Diagonal gains `H_k` of every user plus the noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `gains[k][l] = h_{l,k}`.
    pub gains: Vec<Vec<Complex64>>,
    /// Noise variance per complex dimension.
    pub sigma2: f64,
    pub model: ChannelModel,
}

/// Draws one channel realization. Exactly-zero Rayleigh gains are redrawn.
pub fn sample_channel<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    model: ChannelModel,
    sigma2: f64,
    rng: &mut R,
) -> ChannelRealization {
    let gains = (0..cfg.users)
        .map(|_| {
            let h = match model {
                ChannelModel::Awgn => Complex64::new(1.0, 0.0),
                ChannelModel::RayleighFlat => loop {
                    let h = complex_gaussian(rng, 1.0);
                    if h.norm_sqr() > 0.0 {
                        break h;
                    }
                },
            };
            vec![h; cfg.dv]
        })
        .collect();
    ChannelRealization {
        gains,
        sigma2,
        model,
    }
}

/// One CN(0, `variance`) sample.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * scale, im * scale)
}

pub fn sample_noise<R: Rng + ?Sized>(n: usize, sigma2: f64, rng: &mut R) -> Array1<Complex64> {
    (0..n).map(|_| complex_gaussian(rng, sigma2)).collect()
}

/// `G` (`N x K'`): column `k d_v + l` holds `h_{l,k}` at the RE of that layer.
pub fn effective_channel(s: &MappingMatrix, h: &ChannelRealization) -> Array2<Complex64> {
    let mut g = Array2::zeros((s.resources(), s.layers()));
    for layer in 0..s.layers() {
        g[[s.layer_resource(layer), layer]] = h.gains[layer / s.dv()][layer % s.dv()];
    }
    g
}

/// Noise variance for a per-RE SNR in dB: average received symbol energy per
/// RE (unit-power gains) divided by `sigma2`.
pub fn sigma2_for_snr(system: &ScmaSystem, snr_db: f64) -> f64 {
    let per_re =
        system.codebook.average_energy() * system.config.users as f64 / system.config.resources as f64;
    per_re / 10f64.powf(snr_db / 10.0)
}

/// `G` and the observation `y = G x + w` of one channel use.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannel {
    pub g: Array2<Complex64>,
    pub y: Array1<Complex64>,
}

/// Simulates one channel use with the given codeword indices.
pub fn transmit<R: Rng + ?Sized>(
    system: &ScmaSystem,
    h: &ChannelRealization,
    indices: &[usize],
    rng: &mut R,
) -> EffectiveChannel {
    let g = effective_channel(&system.mapping, h);
    let x = system.layer_vector(indices);
    let y = g.dot(&x) + sample_noise(system.config.resources, h.sigma2, rng);
    EffectiveChannel { g, y }
}

/// Square system `y~ = G~ x + w~` obtained by appending an identity block and
/// zero observations below `[G^(1) G^(2)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem {
    pub g_tilde: Array2<Complex64>,
    pub y_tilde: Array1<Complex64>,
    /// Number of original observation rows `N`.
    pub head: usize,
}

impl AugmentedSystem {
    /// `||y~ - G~ x||^2`.
    pub fn residual_norm_sqr(&self, x: &Array1<Complex64>) -> f64 {
        residual_norm_sqr(&self.y_tilde, &self.g_tilde, x)
    }
}

/// Builds `G~` and `y~` from an `N x L` matrix (`L >= N`) whose leading
/// `N x N` block is upper triangular.
pub fn augment(g: &Array2<Complex64>, y: &Array1<Complex64>) -> Result<AugmentedSystem> {
    let (n, l) = g.dim();
    if l < n || y.len() != n {
        return Err(Error::Dimension(format!(
            "cannot augment a {n} x {l} system with {} observations",
            y.len()
        )));
    }
    for i in 0..n {
        if g[[i, i]].norm_sqr() == 0.0 {
            return Err(Error::DegenerateChannel(i));
        }
        if (0..i).any(|j| g[[i, j]].norm_sqr() != 0.0) {
            return Err(Error::NotUpperTriangular);
        }
    }
    let mut g_tilde = Array2::zeros((l, l));
    g_tilde.slice_mut(s![..n, ..]).assign(g);
    for i in n..l {
        g_tilde[[i, i]] = Complex64::new(1.0, 0.0);
    }
    let mut y_tilde = Array1::zeros(l);
    y_tilde.slice_mut(s![..n]).assign(y);
    Ok(AugmentedSystem {
        g_tilde,
        y_tilde,
        head: n,
    })
}

/// `||y - G x||^2`.
pub fn residual_norm_sqr(
    y: &Array1<Complex64>,
    g: &Array2<Complex64>,
    x: &Array1<Complex64>,
) -> f64 {
    (y - &g.dot(x)).iter().map(|v| v.norm_sqr()).sum()
}
