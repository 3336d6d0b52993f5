//! MSE, PSNR and bit error rate.

use std::fmt;

use crate::error::{Error, Result};
use crate::sensing::ImageRaster;

pub const PEAK: f64 = 255.0;

/// Mean squared difference over all pixels.
pub fn mse(reference: &ImageRaster, candidate: &ImageRaster) -> Result<f64> {
    if reference.width() != candidate.width() || reference.height() != candidate.height() {
        return Err(Error::contract(format!(
            "cannot compare a {}x{} image with a {}x{} image",
            reference.width(),
            reference.height(),
            candidate.width(),
            candidate.height()
        )));
    }
    let sum: f64 = reference
        .values()
        .iter()
        .zip(candidate.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / reference.len() as f64)
}

/// `10 log10(255^2 / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(reference: &ImageRaster, candidate: &ImageRaster) -> Result<f64> {
    Ok(psnr_from_mse(mse(reference, candidate)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

/// Fraction of positions where the two bit strings differ.
pub fn ber(sent: &[u8], received: &[u8]) -> Result<f64> {
    if sent.len() != received.len() || sent.is_empty() {
        return Err(Error::contract(format!(
            "BER needs two non-empty bit strings of equal length, got {} and {}",
            sent.len(),
            received.len()
        )));
    }
    let errors = sent.iter().zip(received).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / sent.len() as f64)
}

/// Min-max rescales a raster onto `[0, 255]`. A flat raster maps to all zeros.
pub fn rescale_to_display(image: &ImageRaster) -> ImageRaster {
    let (lo, hi) = image
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let values = image
        .values()
        .iter()
        .map(|&v| if span > 0.0 { (v - lo) / span * PEAK } else { 0.0 })
        .collect();
    ImageRaster::new(image.width(), image.height(), values).expect("rescaled values are in range")
}

/// Clamps every pixel into `[0, 255]`.
pub fn clamp_to_display(image: &ImageRaster) -> ImageRaster {
    let values = image.values().iter().map(|v| v.clamp(0.0, PEAK)).collect();
    ImageRaster::new(image.width(), image.height(), values).expect("clamped values are in range")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub mse: f64,
    pub psnr: f64,
    pub ber: f64,
}

impl QualityReport {
    pub fn compute(
        reference: &ImageRaster,
        candidate: &ImageRaster,
        sent: &[u8],
        received: &[u8],
    ) -> Result<Self> {
        let mse = mse(reference, candidate)?;
        Ok(QualityReport {
            mse,
            psnr: psnr_from_mse(mse),
            ber: ber(sent, received)?,
        })
    }
}

impl fmt::Display for QualityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mse={:.6} psnr_db={} ber={:.6}", self.mse, format_db(self.psnr), self.ber)
    }
}

/// Formats a dB value with two decimals; infinity prints as `inf`.
pub fn format_db(db: f64) -> String {
    if db.is_infinite() {
        "inf".to_owned()
    } else {
        format!("{db:.2}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, v: &[f64]) -> ImageRaster {
        ImageRaster::new(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn mse_examples() {
        let a = img(2, 1, &[0.0, 0.0]);
        let b = img(2, 1, &[3.0, 4.0]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), 12.5);
        assert_eq!(mse(&b, &a).unwrap(), 12.5);
        let black = ImageRaster::filled(8, 8, 0.0).unwrap();
        let white = ImageRaster::filled(8, 8, 255.0).unwrap();
        assert_eq!(mse(&black, &white).unwrap(), 65025.0);
        assert!(matches!(mse(&a, &black), Err(Error::Contract(_))));
    }

    #[test]
    fn psnr_examples() {
        let black = ImageRaster::filled(8, 8, 0.0).unwrap();
        let white = ImageRaster::filled(8, 8, 255.0).unwrap();
        assert_eq!(psnr(&black, &black).unwrap(), f64::INFINITY);
        assert_eq!(psnr(&black, &white).unwrap(), 0.0);
        assert!((psnr_from_mse(650.25) - 20.0).abs() < 1e-12);
        assert!(psnr_from_mse(1.0) > psnr_from_mse(2.0));
    }

    #[test]
    fn ber_examples() {
        let w = [1, 0, 1, 1, 0, 0, 1, 0];
        let not_w: Vec<u8> = w.iter().map(|b| 1 - b).collect();
        assert_eq!(ber(&w, &w).unwrap(), 0.0);
        assert_eq!(ber(&w, &not_w).unwrap(), 1.0);
        let sent = [0u8; 16];
        let mut got = [0u8; 16];
        got[..9].fill(1);
        assert_eq!(ber(&sent, &got).unwrap(), 0.5625);
        assert!(ber(&w, &sent).is_err());
    }

    #[test]
    fn report_line() {
        let a = img(2, 1, &[0.0, 0.0]);
        let r = QualityReport::compute(&a, &a, &[1, 0], &[1, 1]).unwrap();
        assert_eq!(r.to_string(), "mse=0.000000 psnr_db=inf ber=0.500000");
    }

    #[test]
    fn rescale_spans_display_range() {
        let r = rescale_to_display(&img(3, 1, &[2.0, 4.0, 6.0]));
        assert_eq!(r.values(), &[0.0, 127.5, 255.0]);
        assert_eq!(rescale_to_display(&img(2, 1, &[5.0, 5.0])).values(), &[0.0, 0.0]);
    }
}
