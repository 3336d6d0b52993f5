//! Tampering applied to a payload in transit, and the single-bit detection sweep.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics;
use crate::protocol::Session;
use crate::reconstruction::SolverParams;
use crate::rng::SplitMix64;
use crate::sensing::ImageRaster;
use crate::watermark::{PermutationKey, WatermarkedPayload};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    /// Uniformly random reordering of all words.
    Shuffle,
    /// XOR of one bit (0 = least significant) of one word.
    BitFlip { value_index: usize, bit_index: u32 },
    /// `count` distinct, randomly chosen words overwritten with `+0.0`.
    ZeroSubstitute { count: usize },
    /// One word removed, the rest shifted down, `+0.0` appended.
    DeleteShift { value_index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Drives the shuffle and the choice of zeroed positions.
    pub seed: u64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, seed: u64) -> Self {
        AttackSpec { kind, seed }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            AttackKind::Shuffle => write!(f, "shuffle"),
            AttackKind::BitFlip { value_index, bit_index } => write!(f, "bit-flip:{value_index}:{bit_index}"),
            AttackKind::ZeroSubstitute { count } => write!(f, "zero:{count}"),
            AttackKind::DeleteShift { value_index } => write!(f, "delete-shift:{value_index}"),
        }
    }
}

/// Parses `shuffle`, `bit-flip:<value>:<bit>`, `zero:<count>` or `delete-shift:<value>`.
impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| {
            p.parse::<usize>()
                .map_err(|_| Error::config(format!("attack `{s}`: `{p}` is not a number")))
        };
        match parts.as_slice() {
            ["shuffle"] => Ok(AttackKind::Shuffle),
            ["bit-flip", v, b] => {
                let bit = num(b)?;
                if bit > 63 {
                    return Err(Error::config(format!("attack `{s}`: bit index must be 0-63")));
                }
                Ok(AttackKind::BitFlip {
                    value_index: num(v)?,
                    bit_index: bit as u32,
                })
            }
            ["zero", c] => Ok(AttackKind::ZeroSubstitute { count: num(c)? }),
            ["delete-shift", v] => Ok(AttackKind::DeleteShift { value_index: num(v)? }),
            _ => Err(Error::config(format!(
                "unknown attack `{s}` (expected shuffle, bit-flip:<value>:<bit>, zero:<count> or delete-shift:<value>)"
            ))),
        }
    }
}

/// Returns a tampered copy of `payload`; the length never changes.
pub fn apply_attack(payload: &WatermarkedPayload, spec: &AttackSpec) -> Result<WatermarkedPayload> {
    let m = payload.len();
    let mut words = payload.words().to_vec();
    match spec.kind {
        AttackKind::Shuffle => {
            if m > 0 {
                let perm = PermutationKey::new(spec.seed, m).derive()?;
                words = perm.apply(&words);
            }
        }
        AttackKind::BitFlip { value_index, bit_index } => {
            if value_index >= m || bit_index > 63 {
                return Err(Error::contract(format!(
                    "bit flip at word {value_index}, bit {bit_index} is outside a payload of {m} words"
                )));
            }
            words[value_index] ^= 1u64 << bit_index;
        }
        AttackKind::ZeroSubstitute { count } => {
            if count > m {
                return Err(Error::contract(format!("cannot zero {count} of {m} words")));
            }
            // Partial Fisher-Yates: the first `count` slots are a uniform sample.
            let mut idx: Vec<usize> = (0..m).collect();
            let mut rng = SplitMix64::new(spec.seed);
            for i in 0..count {
                let j = i + rng.below((m - i) as u64) as usize;
                idx.swap(i, j);
                words[idx[i]] = 0.0f64.to_bits();
            }
        }
        AttackKind::DeleteShift { value_index } => {
            if value_index >= m {
                return Err(Error::contract(format!(
                    "cannot delete word {value_index} of a payload of {m} words"
                )));
            }
            words.remove(value_index);
            words.push(0.0f64.to_bits());
        }
    }
    Ok(WatermarkedPayload::from_words(words))
}

/// Inputs for [`detection_rate`].
#[derive(Debug, Clone)]
pub struct DetectionScenario<'a> {
    pub session: &'a Session,
    pub object: &'a ImageRaster,
    pub watermark: Vec<u8>,
    pub noise_seed: u64,
    /// Word whose bits are flipped, one bit per trial.
    pub value_index: usize,
    /// PSNR loss (dB, against the object) counted as a detection.
    pub threshold_db: f64,
    pub params: SolverParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitOutcome {
    pub bit: u32,
    pub psnr_db: f64,
    pub watermark_changed: bool,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    /// PSNR of the untampered reconstruction against the object.
    pub baseline_psnr_db: f64,
    pub outcomes: Vec<BitOutcome>,
    /// Fraction of the 64 bit positions detected.
    pub rate: f64,
}

/// Flips each of the 64 bits of one word in turn and asks whether the receiver notices:
/// either the extracted watermark changes or the reconstruction loses more than
/// `threshold_db` of PSNR relative to the untampered one.
pub fn detection_rate(s: &DetectionScenario<'_>) -> Result<DetectionReport> {
    let carrier = s.session.carrier(s.object, s.noise_seed)?;
    let payload = s.session.embed(&carrier, &s.watermark)?;
    let clean = s.session.receive(&payload, &s.params)?;
    let baseline = metrics::psnr(s.object, &clean.image)?;

    let mut outcomes = Vec::with_capacity(64);
    for bit in 0..64u32 {
        let spec = AttackSpec::new(
            AttackKind::BitFlip {
                value_index: s.value_index,
                bit_index: bit,
            },
            0,
        );
        let tampered = apply_attack(&payload, &spec)?;
        let extraction = s.session.extract(&tampered)?;
        let watermark_changed = extraction.watermark != clean.extraction.watermark;
        let psnr_db = if extraction.measurements == clean.extraction.measurements {
            baseline
        } else {
            let rec = s.session.reconstruct(&extraction.measurements, &s.params)?;
            metrics::psnr(s.object, &metrics::rescale_to_display(&rec.image))?
        };
        let detected = watermark_changed || baseline - psnr_db > s.threshold_db;
        outcomes.push(BitOutcome {
            bit,
            psnr_db,
            watermark_changed,
            detected,
        });
    }
    let rate = outcomes.iter().filter(|o| o.detected).count() as f64 / 64.0;
    Ok(DetectionReport {
        baseline_psnr_db: baseline,
        outcomes,
        rate,
    })
}
