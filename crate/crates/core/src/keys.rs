//! The initial keys shared out of band, stored as a flat `field: value` text file.
//!
//! ```text
//! # cskd key bundle
//! version: 1
//! matrix_seed: 11400714819323198485
//! perm1_seed: 7046029254386353131
//! perm2_seed: 12297829382473034410
//! measurements: 1280
//! width: 64
//! height: 64
//! watermark_len: 8
//! repeats: 5
//! norm_lo: 0
//! norm_hi: 428654.7
//! noise: poisson
//! noise_param: 0.41
//! ```
//!
//! `noise` is one of `none`, `poisson` (parameter: photons per unit intensity)
//! or `gaussian` (parameter: sigma). Lines starting with `#` are comments.
//! Every field is required and may appear once.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::sensing::{generate_measurement_matrix, MeasurementMatrix, NoiseModel};
use crate::watermark::{GroupLayout, NormalizationBounds, Permutation, PermutationKey};

pub const KEY_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct KeyBundle {
    pub matrix_seed: u64,
    pub perm1_seed: u64,
    pub perm2_seed: u64,
    pub measurements: usize,
    pub width: usize,
    pub height: usize,
    pub watermark_len: usize,
    pub repeats: usize,
    pub norm_lo: f64,
    pub norm_hi: f64,
    pub noise: NoiseModel,
}

/// Inputs to [`KeyBundle::generate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeygenParams {
    pub width: usize,
    pub height: usize,
    pub measurements: usize,
    pub watermark_len: usize,
    pub repeats: usize,
    pub noise: NoiseModel,
}

impl KeyBundle {
    /// Draws all seeds from one master seed and picks bounds that cover every
    /// noiseless measurement of a `[0, 255]` object.
    pub fn generate(master_seed: u64, p: KeygenParams) -> Result<Self> {
        let mut rng = SplitMix64::new(master_seed);
        let n = (p.width * p.height) as f64;
        let norm_hi = match p.noise {
            NoiseModel::Gaussian { sigma } => 255.0 * n + 8.0 * sigma,
            other => other.gain() * 255.0 * n,
        };
        let keys = KeyBundle {
            matrix_seed: rng.next_u64(),
            perm1_seed: rng.next_u64(),
            perm2_seed: rng.next_u64(),
            measurements: p.measurements,
            width: p.width,
            height: p.height,
            watermark_len: p.watermark_len,
            repeats: p.repeats,
            norm_lo: 0.0,
            norm_hi,
            noise: p.noise,
        };
        keys.validate()?;
        Ok(keys)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("width and height must be at least 1"));
        }
        self.layout()?;
        self.bounds()?;
        self.noise.validate()
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn layout(&self) -> Result<GroupLayout> {
        GroupLayout::for_measurements(self.measurements, self.watermark_len, self.repeats)
    }

    pub fn bounds(&self) -> Result<NormalizationBounds> {
        NormalizationBounds::new(self.norm_lo, self.norm_hi)
    }

    pub fn matrix(&self) -> Result<MeasurementMatrix> {
        generate_measurement_matrix(self.matrix_seed, self.measurements, self.pixels())
    }

    pub fn key1(&self) -> Result<Permutation> {
        PermutationKey::new(self.perm1_seed, self.measurements).derive()
    }

    pub fn key2(&self) -> Result<Permutation> {
        PermutationKey::new(self.perm2_seed, self.measurements).derive()
    }

    pub fn to_text(&self) -> String {
        let (noise, param) = match self.noise {
            NoiseModel::None => ("none", 0.0),
            NoiseModel::Poisson { lambda } => ("poisson", lambda),
            NoiseModel::Gaussian { sigma } => ("gaussian", sigma),
        };
        let mut s = String::from("# cskd key bundle\n");
        let _ = writeln!(s, "version: {KEY_FILE_VERSION}");
        let _ = writeln!(s, "matrix_seed: {}", self.matrix_seed);
        let _ = writeln!(s, "perm1_seed: {}", self.perm1_seed);
        let _ = writeln!(s, "perm2_seed: {}", self.perm2_seed);
        let _ = writeln!(s, "measurements: {}", self.measurements);
        let _ = writeln!(s, "width: {}", self.width);
        let _ = writeln!(s, "height: {}", self.height);
        let _ = writeln!(s, "watermark_len: {}", self.watermark_len);
        let _ = writeln!(s, "repeats: {}", self.repeats);
        let _ = writeln!(s, "norm_lo: {}", self.norm_lo);
        let _ = writeln!(s, "norm_hi: {}", self.norm_hi);
        let _ = writeln!(s, "noise: {noise}");
        let _ = writeln!(s, "noise_param: {param}");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = Fields::default();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let at = offset;
            offset += line.len();
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| Error::parse("line", at, format!("expected `field: value`, found `{line}`")))?;
            fields.set(key.trim(), value.trim(), at)?;
        }
        let keys = fields.finish()?;
        keys.validate()?;
        Ok(keys)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read key file {}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}

#[derive(Default)]
struct Fields {
    version: Option<u32>,
    matrix_seed: Option<u64>,
    perm1_seed: Option<u64>,
    perm2_seed: Option<u64>,
    measurements: Option<usize>,
    width: Option<usize>,
    height: Option<usize>,
    watermark_len: Option<usize>,
    repeats: Option<usize>,
    norm_lo: Option<f64>,
    norm_hi: Option<f64>,
    noise: Option<String>,
    noise_param: Option<f64>,
}

fn store<T: std::str::FromStr>(slot: &mut Option<T>, field: &'static str, value: &str, at: usize) -> Result<()> {
    if slot.is_some() {
        return Err(Error::parse(field, at, format!("duplicate field `{field}`")));
    }
    let v = value
        .parse()
        .map_err(|_| Error::parse(field, at, format!("invalid value `{value}` for `{field}`")))?;
    *slot = Some(v);
    Ok(())
}

fn required<T>(slot: Option<T>, field: &str) -> Result<T> {
    slot.ok_or_else(|| Error::config(format!("key file is missing `{field}`")))
}

impl Fields {
    fn set(&mut self, key: &str, value: &str, at: usize) -> Result<()> {
        match key {
            "version" => store(&mut self.version, "version", value, at),
            "matrix_seed" => store(&mut self.matrix_seed, "matrix_seed", value, at),
            "perm1_seed" => store(&mut self.perm1_seed, "perm1_seed", value, at),
            "perm2_seed" => store(&mut self.perm2_seed, "perm2_seed", value, at),
            "measurements" => store(&mut self.measurements, "measurements", value, at),
            "width" => store(&mut self.width, "width", value, at),
            "height" => store(&mut self.height, "height", value, at),
            "watermark_len" => store(&mut self.watermark_len, "watermark_len", value, at),
            "repeats" => store(&mut self.repeats, "repeats", value, at),
            "norm_lo" => store(&mut self.norm_lo, "norm_lo", value, at),
            "norm_hi" => store(&mut self.norm_hi, "norm_hi", value, at),
            "noise" => store(&mut self.noise, "noise", value, at),
            "noise_param" => store(&mut self.noise_param, "noise_param", value, at),
            other => Err(Error::parse("line", at, format!("unknown field `{other}`"))),
        }
    }

    fn finish(self) -> Result<KeyBundle> {
        let version = required(self.version, "version")?;
        if version != KEY_FILE_VERSION {
            return Err(Error::config(format!(
                "unsupported key file version {version} (expected {KEY_FILE_VERSION})"
            )));
        }
        let param = required(self.noise_param, "noise_param")?;
        let noise = match required(self.noise, "noise")?.as_str() {
            "none" => NoiseModel::None,
            "poisson" => NoiseModel::Poisson { lambda: param },
            "gaussian" => NoiseModel::Gaussian { sigma: param },
            other => return Err(Error::config(format!("unknown noise model `{other}`"))),
        };
        Ok(KeyBundle {
            matrix_seed: required(self.matrix_seed, "matrix_seed")?,
            perm1_seed: required(self.perm1_seed, "perm1_seed")?,
            perm2_seed: required(self.perm2_seed, "perm2_seed")?,
            measurements: required(self.measurements, "measurements")?,
            width: required(self.width, "width")?,
            height: required(self.height, "height")?,
            watermark_len: required(self.watermark_len, "watermark_len")?,
            repeats: required(self.repeats, "repeats")?,
            norm_lo: required(self.norm_lo, "norm_lo")?,
            norm_hi: required(self.norm_hi, "norm_hi")?,
            noise,
        })
    }
}
