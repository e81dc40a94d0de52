//! Jacobian logarithm and per-bit log-likelihood ratio frames.

/// Saturation applied to every LLR, and the value used when one of the two
/// hypothesis sets of a bit is empty.
pub const DEFAULT_LLR_CLAMP: f64 = 30.0;

/// `max*(a, b) = max(a, b) + ln(1 + e^{-|a - b|}) = ln(e^a + e^b)`.
pub fn max_star(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    a.max(b) + (-(a - b).abs()).exp().ln_1p()
}

/// Left fold of [`max_star`]; `-inf` for an empty input.
pub fn max_star_all<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().fold(f64::NEG_INFINITY, max_star)
}

/// `ln P(bit = 0) - ln P(bit = 1)` for every bit of every user.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrFrame {
    /// `values[k][m]`, bit `m` counted from the most significant label bit.
    pub values: Vec<Vec<f64>>,
    pub clamp: f64,
    /// Hypotheses that contributed (list length for list decoding).
    pub hypotheses: usize,
    /// Number of bits for which one side of the max* was empty.
    pub saturated: usize,
}

impl LlrFrame {
    /// Builds a frame from per-bit `(max* over bit = 0, max* over bit = 1)`
    /// pairs, saturating to `+-clamp`.
    pub fn from_log_sums(sums: &[Vec<(f64, f64)>], clamp: f64, hypotheses: usize) -> Self {
        let mut saturated = 0;
        let values = sums
            .iter()
            .map(|user| {
                user.iter()
                    .map(|&(zero, one)| match (zero.is_finite(), one.is_finite()) {
                        (true, true) => (zero - one).clamp(-clamp, clamp),
                        (true, false) => {
                            saturated += 1;
                            clamp
                        }
                        (false, true) => {
                            saturated += 1;
                            -clamp
                        }
                        (false, false) => {
                            saturated += 1;
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            values,
            clamp,
            hypotheses,
            saturated,
        }
    }

    /// Hard decisions: bit 1 where the LLR is negative.
    pub fn hard_bits(&self) -> Vec<Vec<u8>> {
        self.values
            .iter()
            .map(|u| u.iter().map(|&l| u8::from(l < 0.0)).collect())
            .collect()
    }
}
