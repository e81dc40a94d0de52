//! Seeded Monte Carlo sweeps over SNR with BER, FER and operation counts.
//!
//! Every trial draws from its own ChaCha8 stream selected by the SNR index and
//! positioned by the trial index, so results do not depend on how trials are
//! scheduled across threads. Per-trial tallies are integers and are summed
//! exactly.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_channel, sigma2_for_snr, transmit, ChannelModel, EffectiveChannel};
use crate::codebook::{load_codebook, ScmaSystem, SearchLayout};
use crate::complexity::OpCounters;
use crate::error::{Error, Result};
use crate::fec::{check_partition, decode_frame, info_len, CodedFrame, Interleaver};
use crate::llr::{LlrFrame, DEFAULT_LLR_CLAMP};
use crate::ml::ml_detect;
use crate::mpa::log_mpa_detect;
use crate::msd::{augmented_system, list_msd, msd_detect};

/// Words reserved in a trial's ChaCha stream.
const TRIAL_STRIDE: u128 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detector {
    Ml,
    Msd,
    Mpa,
    ListMsd,
}

impl FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ml" => Ok(Self::Ml),
            "msd" => Ok(Self::Msd),
            "mpa" => Ok(Self::Mpa),
            "list-msd" | "listmsd" | "list_msd" => Ok(Self::ListMsd),
            other => Err(Error::Config(format!("unknown detector '{other}'"))),
        }
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ml => "ml",
            Self::Msd => "msd",
            Self::Mpa => "mpa",
            Self::ListMsd => "list-msd",
        })
    }
}

/// What the channel decoder receives from the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlrInput {
    /// Detector LLRs as they are.
    Soft,
    /// `+-clamp` from the sign of each LLR.
    Hard,
}

impl FromStr for LlrInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "soft" => Ok(Self::Soft),
            "hard" => Ok(Self::Hard),
            other => Err(Error::Config(format!("unknown llr input '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// File path or `builtin:4ary` / `builtin:16qam`.
    pub codebook: String,
    pub channel: ChannelModel,
    pub snr_db: Vec<f64>,
    pub detector: Detector,
    /// MPA iterations.
    pub ni: usize,
    /// List size for list MSD.
    pub ncand: usize,
    pub coded: bool,
    pub nc: usize,
    pub llr_input: LlrInput,
    pub clamp: f64,
    pub trials: u64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Record wall-clock seconds per point; `false` writes 0 so that output is
    /// reproducible byte for byte.
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            codebook: "builtin:4ary".into(),
            channel: ChannelModel::RayleighFlat,
            snr_db: vec![0.0, 4.0, 8.0, 12.0],
            detector: Detector::Msd,
            ni: 3,
            ncand: 600,
            coded: false,
            nc: 132,
            llr_input: LlrInput::Soft,
            clamp: DEFAULT_LLR_CLAMP,
            trials: 10_000,
            seed: 1,
            out: None,
            timing: false,
        }
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "codebook" => self.codebook = value.to_string(),
            "channel" => self.channel = value.parse()?,
            "snr" | "snr_db" => self.snr_db = parse_snr_grid(value)?,
            "detector" => self.detector = value.parse()?,
            "ni" => self.ni = parse_num(key, value)?,
            "ncand" => self.ncand = parse_num(key, value)?,
            "coded" => self.coded = parse_bool(key, value)?,
            "nc" => self.nc = parse_num(key, value)?,
            "llr" => self.llr_input = value.parse()?,
            "clamp" => self.clamp = parse_num(key, value)?,
            "trials" => self.trials = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "timing" => self.timing = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_empty() {
            return Err(Error::Config("SNR grid is empty".into()));
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("SNR values must be finite".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be positive".into()));
        }
        if self.ni == 0 {
            return Err(Error::Config("ni must be positive".into()));
        }
        if self.ncand == 0 {
            return Err(Error::EmptyList);
        }
        if !(self.clamp > 0.0 && self.clamp.is_finite()) {
            return Err(Error::Config("clamp must be positive and finite".into()));
        }
        if self.coded {
            info_len(self.nc)?;
        }
        Ok(())
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid value '{value}' for {key}"))),
    }
}

/// `a:b:step` (inclusive of `b`), a comma-separated list, or a single value.
pub fn parse_snr_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("invalid SNR grid '{text}'"));
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step): (f64, f64, f64) = (
                a.parse().map_err(|_| bad())?,
                b.parse().map_err(|_| bad())?,
                step.parse().map_err(|_| bad())?,
            );
            if step.is_nan() || step <= 0.0 || b < a {
                return Err(bad());
            }
            let count = ((b - a) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| a + i as f64 * step).collect())
        }
        [single] => single
            .split(',')
            .map(|v| v.trim().parse().map_err(|_| bad()))
            .collect(),
        _ => Err(bad()),
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub snr_db: f64,
    pub trials: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub frame_errors: u64,
    pub fer: f64,
    pub avg_real_adds: f64,
    pub avg_real_mults: f64,
    pub avg_exp_log: f64,
    #[serde(rename = "avg_N_v1")]
    pub avg_n_v1: f64,
    #[serde(rename = "avg_N_v2")]
    pub avg_n_v2: f64,
    pub wall_time: f64,
}

impl ResultRecord {
    /// Fewer than 100 bit errors.
    pub fn low_confidence(&self) -> bool {
        self.bit_errors < 100
    }
}

/// Raw tallies of one SNR point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PointTally {
    pub bits: u64,
    pub bit_errors: u64,
    pub frames: u64,
    pub frame_errors: u64,
    /// Detector invocations (channel uses).
    pub detections: u64,
    pub counters: OpCounters,
}

impl std::ops::Add for PointTally {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            bits: self.bits + o.bits,
            bit_errors: self.bit_errors + o.bit_errors,
            frames: self.frames + o.frames,
            frame_errors: self.frame_errors + o.frame_errors,
            detections: self.detections + o.detections,
            counters: self.counters + o.counters,
        }
    }
}

impl PointTally {
    pub fn record(&self, snr_db: f64, trials: u64, wall_time: f64) -> ResultRecord {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let d = self.detections;
        ResultRecord {
            snr_db,
            trials,
            bit_errors: self.bit_errors,
            ber: ratio(self.bit_errors, self.bits),
            frame_errors: self.frame_errors,
            fer: ratio(self.frame_errors, self.frames),
            avg_real_adds: ratio(self.counters.real_adds, d),
            avg_real_mults: ratio(self.counters.real_mults, d),
            avg_exp_log: ratio(self.counters.exp_log, d),
            avg_n_v1: ratio(self.counters.visited_head, d),
            avg_n_v2: ratio(self.counters.visited_tail, d),
            wall_time,
        }
    }
}

/// Hard decisions and, where the detector has them, bit LLRs.
struct Decision {
    bits: Vec<Vec<u8>>,
    llr: Option<LlrFrame>,
    counters: OpCounters,
}

/// A loaded system bound to one detector.
pub struct Receiver {
    pub system: ScmaSystem,
    layout: Option<SearchLayout>,
    pub detector: Detector,
    pub ni: usize,
    pub ncand: usize,
    pub clamp: f64,
}

impl Receiver {
    /// Relabels `system` to the upper-triangular form when needed and, for
    /// the sphere decoders, prepares the search layout.
    pub fn new(system: ScmaSystem, detector: Detector, ni: usize, ncand: usize, clamp: f64) -> Result<Self> {
        let system = if system.mapping.is_upper_triangular() {
            system
        } else {
            system.relabeled()?.0
        };
        let layout = match detector {
            Detector::Msd | Detector::ListMsd => Some(SearchLayout::new(&system)?),
            Detector::Ml | Detector::Mpa => None,
        };
        Ok(Self {
            system,
            layout,
            detector,
            ni,
            ncand,
            clamp,
        })
    }

    fn detect(&self, ch: &EffectiveChannel, sigma2: f64) -> Result<Decision> {
        let cb = &self.system.codebook;
        let index_bits = |indices: &[usize]| -> Vec<Vec<u8>> {
            indices.iter().enumerate().map(|(k, &i)| cb.bits(k, i)).collect()
        };
        match self.detector {
            Detector::Ml => {
                let det = ml_detect(&ch.y, &ch.g, &self.system);
                Ok(Decision {
                    bits: det.bits,
                    llr: None,
                    counters: det.counters,
                })
            }
            Detector::Msd => {
                let layout = self.layout.as_ref().expect("layout prepared");
                let aug = augmented_system(layout, ch)?;
                let out = msd_detect(&aug, layout)?;
                Ok(Decision {
                    bits: index_bits(&out.indices),
                    llr: None,
                    counters: out.counters,
                })
            }
            Detector::ListMsd => {
                let layout = self.layout.as_ref().expect("layout prepared");
                let aug = augmented_system(layout, ch)?;
                let out = list_msd(&aug, layout, cb, sigma2, self.ncand, self.clamp)?;
                Ok(Decision {
                    bits: out.llr.hard_bits(),
                    llr: Some(out.llr),
                    counters: out.counters,
                })
            }
            Detector::Mpa => {
                let out = log_mpa_detect(&ch.y, &ch.g, &self.system, sigma2, self.ni, self.clamp)?;
                Ok(Decision {
                    bits: out.detection.bits,
                    llr: Some(out.llr),
                    counters: out.detection.counters,
                })
            }
        }
    }
}

/// The generator of trial `trial` at SNR index `point`.
pub fn trial_rng(seed: u64, point: usize, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(point as u64);
    rng.set_word_pos(trial as u128 * TRIAL_STRIDE);
    rng
}

struct Point<'a> {
    cfg: &'a RunConfig,
    rx: &'a Receiver,
    interleaver: Option<&'a Interleaver>,
    sigma2: f64,
    index: usize,
}

impl Point<'_> {
    fn trial(&self, t: u64) -> Result<PointTally> {
        let mut rng = trial_rng(self.cfg.seed, self.index, t);
        match self.interleaver {
            None => self.uncoded(&mut rng),
            Some(il) => self.coded(&mut rng, il),
        }
    }

    fn uncoded(&self, rng: &mut ChaCha8Rng) -> Result<PointTally> {
        let sys = &self.rx.system;
        let m = sys.config.points;
        let sent: Vec<usize> = (0..sys.config.users).map(|_| rng.gen_range(0..m)).collect();
        let h = sample_channel(&sys.config, self.cfg.channel, self.sigma2, rng);
        let ch = transmit(sys, &h, &sent, rng);
        let dec = self.rx.detect(&ch, self.sigma2)?;
        let mut tally = PointTally {
            detections: 1,
            counters: dec.counters,
            ..Default::default()
        };
        for (k, &i) in sent.iter().enumerate() {
            let truth = sys.codebook.bits(k, i);
            let errors = truth.iter().zip(&dec.bits[k]).filter(|(a, b)| a != b).count() as u64;
            tally.bits += truth.len() as u64;
            tally.bit_errors += errors;
            tally.frames += 1;
            tally.frame_errors += u64::from(errors > 0);
        }
        Ok(tally)
    }

    fn coded(&self, rng: &mut ChaCha8Rng, il: &Interleaver) -> Result<PointTally> {
        let sys = &self.rx.system;
        let users = sys.config.users;
        let lm = sys.config.bits_per_symbol();
        let k = info_len(il.len())?;
        let frames: Vec<CodedFrame> = (0..users)
            .map(|_| CodedFrame::new((0..k).map(|_| rng.gen_range(0..2u8)).collect(), il, lm))
            .collect::<Result<_>>()?;
        let uses = il.len() / lm;
        let mut llrs: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(uses); users];
        let mut tally = PointTally::default();
        for t in 0..uses {
            let sent: Vec<usize> = frames
                .iter()
                .enumerate()
                .map(|(u, f)| sys.codebook.index_of_bits(u, &f.symbols[t]))
                .collect::<Result<_>>()?;
            let h = sample_channel(&sys.config, self.cfg.channel, self.sigma2, rng);
            let ch = transmit(sys, &h, &sent, rng);
            let dec = self.rx.detect(&ch, self.sigma2)?;
            tally.detections += 1;
            tally.counters += dec.counters;
            for (u, slot) in llrs.iter_mut().enumerate() {
                let hard = || hard_llrs(&dec.bits[u], self.cfg.clamp);
                slot.push(match (&dec.llr, self.cfg.llr_input) {
                    (Some(frame), LlrInput::Soft) => frame.values[u].clone(),
                    (Some(frame), LlrInput::Hard) => frame.values[u]
                        .iter()
                        .map(|&l| if l < 0.0 { -self.cfg.clamp } else { self.cfg.clamp })
                        .collect(),
                    (None, _) => hard(),
                });
            }
        }
        for (frame, user_llrs) in frames.iter().zip(&llrs) {
            let decoded = decode_frame(user_llrs, il)?;
            let errors = frame.info.iter().zip(&decoded).filter(|(a, b)| a != b).count() as u64;
            tally.bits += k as u64;
            tally.bit_errors += errors;
            tally.frames += 1;
            tally.frame_errors += u64::from(errors > 0);
        }
        Ok(tally)
    }
}

fn hard_llrs(bits: &[u8], clamp: f64) -> Vec<f64> {
    bits.iter().map(|&b| if b == 0 { clamp } else { -clamp }).collect()
}

/// Runs every SNR point of `cfg` and returns one record per point.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let system = load_codebook(&cfg.codebook)?;
    run_sweep_with(cfg, system)
}

/// [`run_sweep`] with an already loaded system.
pub fn run_sweep_with(cfg: &RunConfig, system: ScmaSystem) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let rx = Receiver::new(system, cfg.detector, cfg.ni, cfg.ncand, cfg.clamp)?;
    let interleaver = if cfg.coded {
        check_partition(cfg.nc, rx.system.config.bits_per_symbol())?;
        Some(Interleaver::new(cfg.nc))
    } else {
        None
    };
    cfg.snr_db
        .iter()
        .enumerate()
        .map(|(index, &snr)| {
            let start = Instant::now();
            let point = Point {
                cfg,
                rx: &rx,
                interleaver: interleaver.as_ref(),
                sigma2: sigma2_for_snr(&rx.system, snr),
                index,
            };
            let tally = (0..cfg.trials)
                .into_par_iter()
                .map(|t| point.trial(t))
                .try_reduce(PointTally::default, |a, b| Ok(a + b))?;
            let wall = if cfg.timing {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            };
            Ok(tally.record(snr, cfg.trials, wall))
        })
        .collect()
}

/// Writes `records` as CSV with a fixed header.
pub fn write_results(records: &[ResultRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let output_err = |reason: String| Error::Output {
        path: path.to_path_buf(),
        reason,
    };
    let file = std::fs::File::create(path).map_err(|e| output_err(e.to_string()))?;
    write_csv(records, file).map_err(|e| output_err(e.to_string()))
}

/// Writes `records` as CSV to any writer.
pub fn write_csv<W: std::io::Write>(records: &[ResultRecord], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const CSV_HEADER: [&str; 12] = [
    "snr_db",
    "trials",
    "bit_errors",
    "ber",
    "frame_errors",
    "fer",
    "avg_real_adds",
    "avg_real_mults",
    "avg_exp_log",
    "avg_N_v1",
    "avg_N_v2",
    "wall_time",
];

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<ResultRecord>, _>>()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
