//! Test objects and the simulated single-pixel measurement `y = Ax + e`.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{sub_seed, SplitMix64};

/// A row-major grayscale raster with nonnegative values, nominally in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRaster {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ImageRaster {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config("raster dimensions must be at least 1x1"));
        }
        if values.len() != width * height {
            return Err(Error::contract(format!(
                "raster {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::contract(format!(
                "raster values must be finite and nonnegative, found {bad}"
            )));
        }
        Ok(ImageRaster {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of pixels, `width * height`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Multiplies every pixel by `factor >= 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.values.iter().map(|v| v * factor).collect(),
        )
    }
}

/// Which synthetic object to render.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhantomKind {
    /// Modified Shepp-Logan head phantom.
    Phantom,
    /// Binary letter "S", strokes 255 on a 0 background.
    LetterS,
    Constant(f64),
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phantom" => Ok(PhantomKind::Phantom),
            "letter-s" | "letter-S" => Ok(PhantomKind::LetterS),
            other => {
                let value = other
                    .strip_prefix("constant:")
                    .and_then(|c| c.parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::config(format!(
                            "unknown object kind `{other}` (expected phantom, letter-s or constant:<value>)"
                        ))
                    })?;
                Ok(PhantomKind::Constant(value))
            }
        }
    }
}

// (intensity, semi-axis a, semi-axis b, centre x, centre y, rotation in degrees)
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

const LETTER_S: [&str; 8] = [
    "..####..",
    ".##..##.",
    ".##.....",
    "..####..",
    ".....##.",
    ".##..##.",
    "..####..",
    "........",
];

/// Renders a deterministic, piecewise-constant test object.
pub fn generate_phantom(width: usize, height: usize, kind: PhantomKind) -> Result<ImageRaster> {
    if width == 0 || height == 0 {
        return Err(Error::config("object dimensions must be at least 1x1"));
    }
    let values = match kind {
        PhantomKind::Constant(c) => {
            if !(0.0..=255.0).contains(&c) {
                return Err(Error::config(format!(
                    "constant object value {c} outside [0, 255]"
                )));
            }
            vec![c; width * height]
        }
        PhantomKind::LetterS => {
            let mut v = Vec::with_capacity(width * height);
            for row in 0..height {
                let line = LETTER_S[row * 8 / height].as_bytes();
                for col in 0..width {
                    v.push(if line[col * 8 / width] == b'#' { 255.0 } else { 0.0 });
                }
            }
            v
        }
        PhantomKind::Phantom => {
            let mut v = Vec::with_capacity(width * height);
            for row in 0..height {
                let y = 1.0 - 2.0 * (row as f64 + 0.5) / height as f64;
                for col in 0..width {
                    let x = 2.0 * (col as f64 + 0.5) / width as f64 - 1.0;
                    let mut acc = 0.0;
                    for &(intensity, a, b, x0, y0, deg) in &SHEPP_LOGAN {
                        let (sin, cos) = deg.to_radians().sin_cos();
                        let dx = x - x0;
                        let dy = y - y0;
                        let u = dx * cos + dy * sin;
                        let w = -dx * sin + dy * cos;
                        if (u / a).powi(2) + (w / b).powi(2) <= 1.0 {
                            acc += intensity;
                        }
                    }
                    // 8-bit quantisation keeps PGM round trips exact.
                    v.push((acc * 255.0).round().clamp(0.0, 255.0));
                }
            }
            v
        }
    };
    ImageRaster::new(width, height, values)
}

/// Dense `M x N` matrix with entries in `{0, 1}`, regenerable from its seed.
#[derive(Clone, PartialEq, Eq)]
pub struct MeasurementMatrix {
    rows: usize,
    cols: usize,
    seed: u64,
    entries: Vec<u8>,
    // Bit-packed copies for the products: byte `b` of row `j` holds columns
    // `8b..8b+8` (LSB first); `packed_cols` is the same layout for the transpose.
    packed_rows: Vec<u8>,
    packed_cols: Vec<u8>,
}

impl std::fmt::Debug for MeasurementMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MeasurementMatrix")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

/// Generates a Bernoulli(1/2) binary matrix.
///
/// Row `j` is filled from a generator seeded with `splitmix64(seed ^ j)`; each
/// output word supplies 64 consecutive columns, least significant bit first.
pub fn generate_measurement_matrix(seed: u64, rows: usize, cols: usize) -> Result<MeasurementMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::config("measurement matrix needs M >= 1 and N >= 1"));
    }
    let mut entries = vec![0u8; rows * cols];
    entries
        .par_chunks_mut(cols)
        .enumerate()
        .for_each(|(j, row)| {
            let mut rng = SplitMix64::new(sub_seed(seed, j as u64));
            for chunk in row.chunks_mut(64) {
                let word = rng.next_u64();
                for (k, e) in chunk.iter_mut().enumerate() {
                    *e = ((word >> k) & 1) as u8;
                }
            }
        });
    Ok(MeasurementMatrix::assemble(rows, cols, seed, entries))
}

impl MeasurementMatrix {
    /// Builds a matrix from explicit 0/1 entries (row-major). The seed is recorded as 0.
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 || entries.len() != rows * cols {
            return Err(Error::contract(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                entries.len()
            )));
        }
        if entries.iter().any(|&e| e > 1) {
            return Err(Error::contract("matrix entries must be 0 or 1"));
        }
        Ok(MeasurementMatrix::assemble(rows, cols, 0, entries))
    }

    fn assemble(rows: usize, cols: usize, seed: u64, entries: Vec<u8>) -> Self {
        let row_bytes = cols.div_ceil(8);
        let col_bytes = rows.div_ceil(8);
        let mut packed_rows = vec![0u8; rows * row_bytes];
        let mut packed_cols = vec![0u8; cols * col_bytes];
        for j in 0..rows {
            for k in 0..cols {
                if entries[j * cols + k] != 0 {
                    packed_rows[j * row_bytes + k / 8] |= 1 << (k % 8);
                    packed_cols[k * col_bytes + j / 8] |= 1 << (j % 8);
                }
            }
        }
        MeasurementMatrix {
            rows,
            cols,
            seed,
            entries,
            packed_rows,
            packed_cols,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, j: usize) -> &[u8] {
        &self.entries[j * self.cols..(j + 1) * self.cols]
    }

    pub fn entries(&self) -> &[u8] {
        &self.entries
    }

    pub fn count_ones(&self) -> usize {
        self.entries.iter().map(|&e| e as usize).sum()
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "apply: vector length must equal N");
        packed_product(&self.packed_rows, self.rows, x)
    }

    /// `A^T y`.
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "apply_transpose: vector length must equal M");
        packed_product(&self.packed_cols, self.cols, y)
    }
}

/// Product of a bit-packed 0/1 matrix with `v`.
///
/// For every group of 8 entries of `v` a table of all 256 subset sums is built
/// once, so each output costs one lookup per packed byte.
fn packed_product(packed: &[u8], out_len: usize, v: &[f64]) -> Vec<f64> {
    let nbytes = v.len().div_ceil(8);
    let mut table = vec![0.0f64; nbytes * 256];
    for (b, t) in table.chunks_exact_mut(256).enumerate() {
        let mut lane = [0.0f64; 8];
        for (i, l) in lane.iter_mut().enumerate() {
            *l = v.get(8 * b + i).copied().unwrap_or(0.0);
        }
        for m in 1..256usize {
            t[m] = t[m & (m - 1)] + lane[m.trailing_zeros() as usize];
        }
    }
    packed
        .par_chunks(nbytes)
        .take(out_len)
        .map(|bytes| {
            let mut acc = [0.0f64; 4];
            let mut chunks = bytes.chunks_exact(4);
            let mut b = 0;
            for c in &mut chunks {
                acc[0] += table[b * 256 + c[0] as usize];
                acc[1] += table[(b + 1) * 256 + c[1] as usize];
                acc[2] += table[(b + 2) * 256 + c[2] as usize];
                acc[3] += table[(b + 3) * 256 + c[3] as usize];
                b += 4;
            }
            for &c in chunks.remainder() {
                acc[0] += table[b * 256 + c as usize];
                b += 1;
            }
            (acc[0] + acc[1]) + (acc[2] + acc[3])
        })
        .collect()
}

/// Measurement noise added by the detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    None,
    /// Photon counting: `y_j ~ Poisson(lambda * <a_j, x>)`.
    Poisson { lambda: f64 },
    /// Additive Gaussian noise, clamped at zero.
    Gaussian { sigma: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Poisson { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                Err(Error::config(format!("poisson scale must be > 0, got {lambda}")))
            }
            NoiseModel::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::config(format!("gaussian sigma must be >= 0, got {sigma}")))
            }
            _ => Ok(()),
        }
    }

    /// Multiplier between object intensity and expected measurement.
    pub fn gain(&self) -> f64 {
        match *self {
            NoiseModel::Poisson { lambda } => lambda,
            _ => 1.0,
        }
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NoiseModel::None => write!(f, "none"),
            NoiseModel::Poisson { lambda } => write!(f, "poisson:{lambda}"),
            NoiseModel::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
        }
    }
}

/// Parses `none`, `poisson:<lambda>` or `gaussian:<sigma>`.
impl std::str::FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, param) = match s.split_once(':') {
            Some((k, p)) => (k, Some(p)),
            None => (s, None),
        };
        let value = || -> Result<f64> {
            let p = param.ok_or_else(|| Error::config(format!("noise model `{s}` needs a parameter")))?;
            p.parse()
                .map_err(|_| Error::config(format!("noise parameter `{p}` is not a number")))
        };
        let model = match kind {
            "none" if param.is_none() => NoiseModel::None,
            "poisson" => NoiseModel::Poisson { lambda: value()? },
            "gaussian" => NoiseModel::Gaussian { sigma: value()? },
            _ => return Err(Error::config(format!("unknown noise model `{s}`"))),
        };
        model.validate()?;
        Ok(model)
    }
}

/// Simulates the detector: `y = A x` plus noise drawn from per-row streams of `noise_seed`.
pub fn sense(
    x: &ImageRaster,
    a: &MeasurementMatrix,
    noise: NoiseModel,
    noise_seed: u64,
) -> Result<Vec<f64>> {
    if a.cols() != x.len() {
        return Err(Error::contract(format!(
            "matrix has N = {} columns but the object has {} pixels",
            a.cols(),
            x.len()
        )));
    }
    noise.validate()?;
    let clean = a.apply(x.values());
    let y = match noise {
        NoiseModel::None => clean,
        NoiseModel::Poisson { lambda } => clean
            .par_iter()
            .enumerate()
            .map(|(j, &v)| {
                let mut rng = SplitMix64::new(sub_seed(noise_seed, j as u64));
                sample_poisson(&mut rng, lambda * v) as f64
            })
            .collect(),
        NoiseModel::Gaussian { sigma } => clean
            .par_iter()
            .enumerate()
            .map(|(j, &v)| {
                let mut rng = SplitMix64::new(sub_seed(noise_seed, j as u64));
                (v + sigma * rng.next_gaussian()).max(0.0)
            })
            .collect(),
    };
    Ok(y)
}

/// Draws a Poisson deviate: inversion below mean 30, Hormann's PTRS above.
pub fn sample_poisson(rng: &mut SplitMix64, mean: f64) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    if mean < 30.0 {
        let limit = (-mean).exp();
        let mut k = 0u64;
        let mut p = rng.next_f64_open0();
        while p > limit {
            p *= rng.next_f64_open0();
            k += 1;
        }
        return k;
    }
    let smu = mean.sqrt();
    let b = 0.931 + 2.53 * smu;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    let log_mean = mean.ln();
    loop {
        let u = rng.next_f64() - 0.5;
        let v = rng.next_f64_open0();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        if lhs <= -mean + k * log_mean - ln_factorial(k) {
            return k as u64;
        }
    }
}

fn ln_factorial(k: f64) -> f64 {
    if k < 10.0 {
        let mut acc = 0.0;
        let mut i = 2.0;
        while i <= k {
            acc += f64::ln(i);
            i += 1.0;
        }
        return acc;
    }
    // Stirling series for ln Gamma(k + 1).
    let n = k + 1.0;
    let inv = 1.0 / n;
    let inv2 = inv * inv;
    (n - 0.5) * n.ln() - n + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}
