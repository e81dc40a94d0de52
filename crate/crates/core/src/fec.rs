//! Rate-1/3 convolutional outer code with soft-input Viterbi decoding.
//!
//! The code has constraint length 7 and generators 133, 171, 165 (octal). It
//! is zero-terminated with 6 tail bits, so a codeword of `N_c` bits carries
//! `N_c / 3 - 6` information bits. Code bits are interleaved by
//! `pi(i) = a i mod N_c` before being split into `L_M`-bit SCMA symbols.

use crate::error::{Error, Result};

pub const CONSTRAINT_LENGTH: usize = 7;
pub const GENERATORS: [u32; 3] = [0o133, 0o171, 0o165];
const MEMORY: usize = CONSTRAINT_LENGTH - 1;
const STATES: usize = 1 << MEMORY;
const RATE_INV: usize = GENERATORS.len();

/// Information bits carried by a terminated codeword of `nc` bits.
pub fn info_len(nc: usize) -> Result<usize> {
    if !nc.is_multiple_of(RATE_INV) || nc / RATE_INV <= MEMORY {
        return Err(Error::Config(format!(
            "codeword length {nc} must be a multiple of {RATE_INV} above {}",
            RATE_INV * MEMORY
        )));
    }
    Ok(nc / RATE_INV - MEMORY)
}

/// Output bits for `input` entering a register holding `state` (newest bit in
/// the MSB of the 6-bit state).
fn branch_output(state: usize, input: u8) -> [u8; RATE_INV] {
    let reg = ((input as u32) << MEMORY) | state as u32;
    GENERATORS.map(|g| ((reg & g).count_ones() & 1) as u8)
}

fn next_state(state: usize, input: u8) -> usize {
    ((input as usize) << (MEMORY - 1)) | (state >> 1)
}

/// Encodes `info` followed by 6 zero tail bits.
pub fn conv_encode(info: &[u8]) -> Vec<u8> {
    let mut state = 0;
    let mut out = Vec::with_capacity(RATE_INV * (info.len() + MEMORY));
    for &b in info.iter().chain(std::iter::repeat_n(&0, MEMORY)) {
        out.extend_from_slice(&branch_output(state, b));
        state = next_state(state, b);
    }
    out
}

/// Correlation metric `sum_i (1 - 2 c_i) llr_i / 2` of a candidate codeword.
pub fn codeword_metric(codeword: &[u8], llrs: &[f64]) -> f64 {
    codeword
        .iter()
        .zip(llrs)
        .map(|(&c, &l)| if c == 0 { l / 2.0 } else { -l / 2.0 })
        .sum()
}

/// Maximum-likelihood sequence decoding from bit LLRs (positive favours 0).
/// Among equally good paths the one through the lower-numbered predecessor
/// state wins.
pub fn soft_decode(llrs: &[f64]) -> Result<Vec<u8>> {
    let k = info_len(llrs.len()).map_err(|_| Error::LlrLength {
        expected: RATE_INV * (MEMORY + 1),
        got: llrs.len(),
    })?;
    let steps = k + MEMORY;
    let mut metric = vec![f64::NEG_INFINITY; STATES];
    metric[0] = 0.0;
    let mut history: Vec<[(u16, u8); STATES]> = Vec::with_capacity(steps);
    let outputs: Vec<[[u8; RATE_INV]; 2]> = (0..STATES)
        .map(|s| [branch_output(s, 0), branch_output(s, 1)])
        .collect();

    for t in 0..steps {
        let l = &llrs[RATE_INV * t..RATE_INV * (t + 1)];
        let inputs: &[u8] = if t < k { &[0, 1] } else { &[0] };
        let mut next = vec![f64::NEG_INFINITY; STATES];
        let mut from = [(0u16, 0u8); STATES];
        for s in 0..STATES {
            if metric[s] == f64::NEG_INFINITY {
                continue;
            }
            for &b in inputs {
                let ns = next_state(s, b);
                let m = metric[s] + codeword_metric(&outputs[s][b as usize], l);
                if m > next[ns] {
                    next[ns] = m;
                    from[ns] = (s as u16, b);
                }
            }
        }
        history.push(from);
        metric = next;
    }

    let mut state = 0;
    let mut bits = vec![0; steps];
    for t in (0..steps).rev() {
        let (prev, b) = history[t][state];
        bits[t] = b;
        state = prev as usize;
    }
    bits.truncate(k);
    Ok(bits)
}

/// Multiplicative interleaver `pi(i) = a i mod N_c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaver {
    pub multiplier: usize,
    perm: Vec<usize>,
}

impl Interleaver {
    /// Uses the smallest multiplier `a >= 13` coprime with `nc`.
    pub fn new(nc: usize) -> Self {
        let multiplier = (13..).find(|&a| gcd(a, nc) == 1).expect("coprime multiplier");
        let perm = (0..nc).map(|i| (multiplier * i) % nc.max(1)).collect();
        Self { multiplier, perm }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Position of input `i` in the interleaved sequence.
    pub fn position(&self, i: usize) -> usize {
        self.perm[i]
    }

    pub fn interleave<T: Copy + Default>(&self, data: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); data.len()];
        for (i, &v) in data.iter().enumerate() {
            out[self.perm[i]] = v;
        }
        out
    }

    pub fn deinterleave<T: Copy>(&self, data: &[T]) -> Vec<T> {
        self.perm.iter().map(|&p| data[p]).collect()
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// One user's coded frame, split into SCMA symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedFrame {
    pub info: Vec<u8>,
    pub codeword: Vec<u8>,
    /// Interleaved code bits in chunks of `L_M` bits, one per channel use.
    pub symbols: Vec<Vec<u8>>,
}

impl CodedFrame {
    pub fn new(info: Vec<u8>, interleaver: &Interleaver, bits_per_symbol: usize) -> Result<Self> {
        let nc = interleaver.len();
        let expected = info_len(nc)?;
        if info.len() != expected {
            return Err(Error::BitLength {
                expected,
                got: info.len(),
            });
        }
        check_partition(nc, bits_per_symbol)?;
        let codeword = conv_encode(&info);
        let symbols = interleaver
            .interleave(&codeword)
            .chunks(bits_per_symbol)
            .map(<[u8]>::to_vec)
            .collect();
        Ok(Self {
            info,
            codeword,
            symbols,
        })
    }
}

/// `nc` must split into whole symbols of `bits_per_symbol` bits.
pub fn check_partition(nc: usize, bits_per_symbol: usize) -> Result<()> {
    if bits_per_symbol == 0 || !nc.is_multiple_of(bits_per_symbol) {
        return Err(Error::Config(format!(
            "codeword length {nc} is not a multiple of {bits_per_symbol} bits per symbol"
        )));
    }
    Ok(())
}

/// Deinterleaves per-symbol LLRs of one user and decodes them.
pub fn decode_frame(symbol_llrs: &[Vec<f64>], interleaver: &Interleaver) -> Result<Vec<u8>> {
    let flat: Vec<f64> = symbol_llrs.iter().flatten().copied().collect();
    if flat.len() != interleaver.len() {
        return Err(Error::LlrLength {
            expected: interleaver.len(),
            got: flat.len(),
        });
    }
    soft_decode(&interleaver.deinterleave(&flat))
}
