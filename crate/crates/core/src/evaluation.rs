//! Evaluation sweeps: BER against group size, and the tamper battery.

use std::fmt;

use crate::attacks::{apply_attack, AttackKind, AttackSpec};
use crate::error::{Error, Result};
use crate::keys::{KeyBundle, KeygenParams};
use crate::metrics;
use crate::protocol::{Received, Session};
use crate::reconstruction::SolverParams;
use crate::rng::{mix64, SplitMix64};
use crate::sensing::{sense, ImageRaster, NoiseModel};
use crate::watermark::{self, Watermark};

/// Photons per unit intensity that give `mean_count` expected counts per measurement
/// for `object` under a half-dense binary matrix.
pub fn poisson_gain_for_mean_count(object: &ImageRaster, mean_count: f64) -> Result<f64> {
    let total: f64 = object.values().iter().sum();
    if !(mean_count > 0.0) || total <= 0.0 {
        return Err(Error::config("mean count and object intensity must be positive"));
    }
    Ok(mean_count / (0.5 * total))
}

/// A reproducible random watermark.
pub fn random_watermark(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = SplitMix64::new(mix64(seed ^ 0x5741_5445_524d_4152));
    (0..len).map(|_| (rng.next_u64() >> 63) as u8).collect()
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub object: ImageRaster,
    pub watermark_len: usize,
    pub repeats: Vec<usize>,
    pub group_sizes: Vec<usize>,
    /// One trial per seed; each seed fixes the keys, the watermark and the noise.
    pub seeds: Vec<u64>,
    pub noise: NoiseModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub repeats: usize,
    pub group_size: usize,
    pub measurements: usize,
    pub trials: usize,
    pub mean_ber: f64,
    pub max_ber: f64,
}

impl fmt::Display for SweepPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "repeats={} r={} measurements={} trials={} mean_ber={:.6} max_ber={:.6}",
            self.repeats, self.group_size, self.measurements, self.trials, self.mean_ber, self.max_ber
        )
    }
}

/// BER of embed/extract for every `(repeats, group_size)` pair.
///
/// Matrix rows and their noise are seeded per row, so each trial senses once at
/// the largest `M` and every smaller configuration uses a prefix of that carrier.
pub fn ber_sweep(cfg: &SweepConfig) -> Result<Vec<SweepPoint>> {
    let max_r = cfg.group_sizes.iter().copied().max().unwrap_or(0);
    let max_rep = cfg.repeats.iter().copied().max().unwrap_or(0);
    if cfg.seeds.is_empty() || max_r < 2 || max_rep == 0 {
        return Err(Error::config("sweep needs at least one seed, one repeat count and r >= 2"));
    }
    let max_m = cfg.watermark_len * max_rep * max_r;
    let mut points: Vec<SweepPoint> = Vec::new();
    for &repeats in &cfg.repeats {
        for &r in &cfg.group_sizes {
            points.push(SweepPoint {
                repeats,
                group_size: r,
                measurements: cfg.watermark_len * repeats * r,
                trials: 0,
                mean_ber: 0.0,
                max_ber: 0.0,
            });
        }
    }

    for &seed in &cfg.seeds {
        let base = KeyBundle::generate(
            seed,
            KeygenParams {
                width: cfg.object.width(),
                height: cfg.object.height(),
                measurements: max_m,
                watermark_len: cfg.watermark_len,
                repeats: max_rep,
                noise: cfg.noise,
            },
        )?;
        let carrier = sense(&cfg.object, &base.matrix()?, cfg.noise, mix64(seed))?;
        let bits = random_watermark(cfg.watermark_len, seed);
        let bounds = base.bounds()?;
        for p in points.iter_mut() {
            let mut keys = base.clone();
            keys.measurements = p.measurements;
            keys.repeats = p.repeats;
            let (key1, key2) = (keys.key1()?, keys.key2()?);
            let wm = Watermark::new(bits.clone(), p.repeats)?;
            let payload = watermark::embed(&carrier[..p.measurements], &key1, &key2, &wm, &bounds)?;
            let ex = watermark::extract(&payload, &key1, &key2, cfg.watermark_len, p.repeats, &bounds)?;
            let ber = metrics::ber(&bits, &ex.watermark)?;
            p.trials += 1;
            p.mean_ber += ber;
            p.max_ber = p.max_ber.max(ber);
        }
    }
    for p in points.iter_mut() {
        p.mean_ber /= p.trials as f64;
    }
    Ok(points)
}

/// The tamper battery: shuffle, bit flips 13 to 16 (indices 12..=15) of one
/// seed-chosen word, 8/16/32/64 zeroed words and one deletion.
pub fn standard_attacks(measurements: usize, seed: u64) -> Vec<AttackSpec> {
    let value_index = SplitMix64::new(mix64(seed)).below(measurements.max(1) as u64) as usize;
    let mut kinds = vec![AttackKind::Shuffle];
    kinds.extend((12..16).map(|bit_index| AttackKind::BitFlip { value_index, bit_index }));
    kinds.extend([8, 16, 32, 64].into_iter().filter(|&c| c <= measurements).map(|count| AttackKind::ZeroSubstitute { count }));
    kinds.push(AttackKind::DeleteShift {
        value_index: measurements / 2,
    });
    kinds.into_iter().map(|k| AttackSpec::new(k, seed)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackRow {
    pub attack: AttackSpec,
    /// Tampered reconstruction against the untampered one.
    pub psnr_vs_clean: f64,
    /// Tampered reconstruction against the object.
    pub psnr_vs_object: f64,
    pub ber: f64,
}

impl fmt::Display for AttackRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "scenario={} seed={} psnr_vs_clean_db={} psnr_vs_object_db={} ber={:.6}",
            self.attack.kind,
            self.attack.seed,
            metrics::format_db(self.psnr_vs_clean),
            metrics::format_db(self.psnr_vs_object),
            self.ber
        )
    }
}

/// One fixed transmission that attacks are applied to.
#[derive(Debug, Clone)]
pub struct AttackScenario<'a> {
    pub session: &'a Session,
    pub object: &'a ImageRaster,
    pub watermark: Vec<u8>,
    pub noise_seed: u64,
    pub params: SolverParams,
}

#[derive(Debug, Clone)]
pub struct AttackTable {
    pub clean: Received,
    pub clean_psnr: f64,
    pub rows: Vec<AttackRow>,
}

/// Sends the scenario's payload once untampered and once per attack.
pub fn attack_table(s: &AttackScenario<'_>, attacks: &[AttackSpec]) -> Result<AttackTable> {
    let carrier = s.session.carrier(s.object, s.noise_seed)?;
    let payload = s.session.embed(&carrier, &s.watermark)?;
    let clean = s.session.receive(&payload, &s.params)?;
    let clean_psnr = metrics::psnr(s.object, &clean.image)?;
    let mut rows = Vec::with_capacity(attacks.len());
    for spec in attacks {
        let tampered = apply_attack(&payload, spec)?;
        let extraction = s.session.extract(&tampered)?;
        let image = if extraction.measurements == clean.extraction.measurements {
            clean.image.clone()
        } else {
            let rec = s.session.reconstruct(&extraction.measurements, &s.params)?;
            metrics::rescale_to_display(&rec.image)
        };
        rows.push(AttackRow {
            attack: *spec,
            psnr_vs_clean: metrics::psnr(&clean.image, &image)?,
            psnr_vs_object: metrics::psnr(s.object, &image)?,
            ber: metrics::ber(&s.watermark, &extraction.watermark)?,
        });
    }
    Ok(AttackTable {
        clean,
        clean_psnr,
        rows,
    })
}
