//! The end-to-end protocol: carrier generation, embedding, extraction, authentication.

use crate::error::{Error, Result};
use crate::keys::KeyBundle;
use crate::metrics::{self, QualityReport};
use crate::reconstruction::{tv_reconstruct, Reconstruction, SolverParams};
use crate::sensing::{sense, ImageRaster, MeasurementMatrix};
use crate::transport;
use crate::watermark::{self, Extraction, GroupLayout, NormalizationBounds, Permutation, Watermark, WatermarkedPayload};

/// A key bundle with its matrix and permutations expanded once.
#[derive(Debug, Clone)]
pub struct Session {
    keys: KeyBundle,
    matrix: MeasurementMatrix,
    key1: Permutation,
    key2: Permutation,
    layout: GroupLayout,
    bounds: NormalizationBounds,
}

impl Session {
    pub fn new(keys: KeyBundle) -> Result<Self> {
        keys.validate()?;
        Ok(Session {
            matrix: keys.matrix()?,
            key1: keys.key1()?,
            key2: keys.key2()?,
            layout: keys.layout()?,
            bounds: keys.bounds()?,
            keys,
        })
    }

    pub fn keys(&self) -> &KeyBundle {
        &self.keys
    }

    pub fn matrix(&self) -> &MeasurementMatrix {
        &self.matrix
    }

    pub fn layout(&self) -> GroupLayout {
        self.layout
    }

    pub fn bounds(&self) -> NormalizationBounds {
        self.bounds
    }

    /// Server side: `y = A x + e` under the bundle's noise model.
    pub fn carrier(&self, object: &ImageRaster, noise_seed: u64) -> Result<Vec<f64>> {
        if object.width() != self.keys.width || object.height() != self.keys.height {
            return Err(Error::contract(format!(
                "object is {}x{} but the key bundle expects {}x{}",
                object.width(),
                object.height(),
                self.keys.width,
                self.keys.height
            )));
        }
        sense(object, &self.matrix, self.keys.noise, noise_seed)
    }

    /// Server side: hides `bits` (repeated per the bundle) in the carrier.
    pub fn embed(&self, carrier: &[f64], bits: &[u8]) -> Result<WatermarkedPayload> {
        if bits.len() != self.keys.watermark_len {
            return Err(Error::config(format!(
                "watermark has {} bits but the key bundle expects {}",
                bits.len(),
                self.keys.watermark_len
            )));
        }
        let wm = Watermark::new(bits.to_vec(), self.keys.repeats)?;
        watermark::embed(carrier, &self.key1, &self.key2, &wm, &self.bounds)
    }

    /// Receiver side: recovers the watermark and the measurements.
    pub fn extract(&self, payload: &WatermarkedPayload) -> Result<Extraction> {
        watermark::extract(
            payload,
            &self.key1,
            &self.key2,
            self.keys.watermark_len,
            self.keys.repeats,
            &self.bounds,
        )
    }

    /// Receiver side: TV reconstruction from recovered measurements, expressed in
    /// object intensity units (the detector gain is divided out).
    pub fn reconstruct(&self, measurements: &[f64], params: &SolverParams) -> Result<Reconstruction> {
        let gain = self.keys.noise.gain();
        let b: Vec<f64> = measurements.iter().map(|v| v / gain).collect();
        tv_reconstruct(&self.matrix, &b, self.keys.width, self.keys.height, params)
    }

    /// Extraction followed by reconstruction, the full receiver.
    pub fn receive(&self, payload: &WatermarkedPayload, params: &SolverParams) -> Result<Received> {
        let extraction = self.extract(payload)?;
        let reconstruction = self.reconstruct(&extraction.measurements, params)?;
        let image = metrics::rescale_to_display(&reconstruction.image);
        Ok(Received {
            extraction,
            reconstruction,
            image,
        })
    }
}

/// What a receiver ends up with.
#[derive(Debug, Clone)]
pub struct Received {
    pub extraction: Extraction,
    pub reconstruction: Reconstruction,
    /// The reconstruction rescaled to `[0, 255]`, the form it is compared in.
    pub image: ImageRaster,
}

/// How the payload travels from server to receiver in [`run_pipeline`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    InProcess,
    /// Through a loopback TCP server and client.
    Loopback,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub payload: WatermarkedPayload,
    pub received: Received,
    /// Reconstruction against the object, and sent against extracted watermark.
    pub report: QualityReport,
}

/// Runs the whole protocol once for `object` and `bits`.
pub fn run_pipeline(
    session: &Session,
    object: &ImageRaster,
    bits: &[u8],
    noise_seed: u64,
    params: &SolverParams,
    channel: Channel,
) -> Result<PipelineOutcome> {
    let carrier = session.carrier(object, noise_seed)?;
    let sent = session.embed(&carrier, bits)?;
    let payload = match channel {
        Channel::InProcess => sent,
        Channel::Loopback => {
            let server = transport::spawn_server("127.0.0.1:0", &sent)?;
            let fetched = transport::fetch(server.local_addr());
            server.shutdown();
            fetched?
        }
    };
    let received = session.receive(&payload, params)?;
    let report = QualityReport::compute(object, &received.image, bits, &received.extraction.watermark)?;
    Ok(PipelineOutcome {
        payload,
        received,
        report,
    })
}
