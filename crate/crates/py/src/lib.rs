//! Python bindings. The module is importable as `cskd`.

use std::net::SocketAddr;

use pyo3::exceptions::{PyConnectionError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use cskd::attacks::{AttackKind, AttackSpec};
use cskd::keys::{KeyBundle, KeygenParams};
use cskd::protocol::{self, Channel};
use cskd::reconstruction::{SolverParams, TvNorm};
use cskd::sensing::{NoiseModel, PhantomKind};
use cskd::transport::ServerHandle;
use cskd::watermark::{HexBits, WatermarkedPayload};

fn to_py(e: cskd::Error) -> PyErr {
    match e {
        cskd::Error::Io(_) => PyConnectionError::new_err(e.to_string()),
        cskd::Error::Solver { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> OrPy<T> for cskd::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn bits_out(bits: &[u8]) -> Vec<u32> {
    bits.iter().map(|&b| u32::from(b)).collect()
}

fn bits_in(bits: Vec<u32>) -> PyResult<Vec<u8>> {
    bits.into_iter()
        .map(|b| match b {
            0 | 1 => Ok(b as u8),
            _ => Err(PyValueError::new_err(format!("watermark bits must be 0 or 1, got {b}"))),
        })
        .collect()
}

/// Row-major grayscale raster.
#[pyclass(name = "Image", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Image(cskd::sensing::ImageRaster);

#[pymethods]
impl Image {
    #[new]
    fn new(width: usize, height: usize, values: Vec<f64>) -> PyResult<Self> {
        Ok(Image(cskd::sensing::ImageRaster::new(width, height, values).py_err()?))
    }

    /// `kind` is `phantom`, `letter-s` or `constant:<value>`.
    #[staticmethod]
    #[pyo3(signature = (width, height, kind = "phantom"))]
    fn phantom(width: usize, height: usize, kind: &str) -> PyResult<Self> {
        let kind: PhantomKind = kind.parse().py_err()?;
        Ok(Image(cskd::sensing::generate_phantom(width, height, kind).py_err()?))
    }

    #[staticmethod]
    fn from_pgm(data: &[u8]) -> PyResult<Self> {
        Ok(Image(cskd::pgm::decode(data).py_err()?))
    }

    fn to_pgm<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &cskd::pgm::encode(&self.0))
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.0.width(), self.0.height())
    }
}

/// The initial keys shared between server and receivers.
#[pyclass(name = "KeyBundle", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyKeyBundle(KeyBundle);

#[pymethods]
impl PyKeyBundle {
    /// `noise` is `none`, `poisson:<lambda>` or `gaussian:<sigma>`.
    #[staticmethod]
    #[pyo3(signature = (seed, width = 64, height = 64, measurements = 1280, watermark_len = 8, repeats = 5, noise = "none"))]
    fn generate(
        seed: u64,
        width: usize,
        height: usize,
        measurements: usize,
        watermark_len: usize,
        repeats: usize,
        noise: &str,
    ) -> PyResult<Self> {
        let noise: NoiseModel = noise.parse().py_err()?;
        let keys = KeyBundle::generate(
            seed,
            KeygenParams {
                width,
                height,
                measurements,
                watermark_len,
                repeats,
                noise,
            },
        )
        .py_err()?;
        Ok(PyKeyBundle(keys))
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(PyKeyBundle(KeyBundle::from_text(text).py_err()?))
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    #[getter]
    fn measurements(&self) -> usize {
        self.0.measurements
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height
    }

    #[getter]
    fn watermark_len(&self) -> usize {
        self.0.watermark_len
    }

    #[getter]
    fn repeats(&self) -> usize {
        self.0.repeats
    }

    #[getter]
    fn noise(&self) -> String {
        self.0.noise.to_string()
    }

    fn __repr__(&self) -> String {
        format!(
            "KeyBundle(M={}, {}x{}, len={}, R={}, noise={})",
            self.0.measurements, self.0.width, self.0.height, self.0.watermark_len, self.0.repeats, self.0.noise
        )
    }
}

/// Transmitted words, each the bit pattern of a normalized or complemented value.
#[pyclass(name = "Payload", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Payload(WatermarkedPayload);

#[pymethods]
impl Payload {
    #[new]
    fn new(words: Vec<u64>) -> Self {
        Payload(WatermarkedPayload::from_words(words))
    }

    #[staticmethod]
    fn from_frame(frame: &[u8]) -> PyResult<Self> {
        Ok(Payload(cskd::transport::deserialize(frame).py_err()?))
    }

    fn to_frame<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &cskd::transport::serialize(&self.0).py_err()?))
    }

    #[getter]
    fn words(&self) -> Vec<u64> {
        self.0.words().to_vec()
    }

    fn decoded(&self) -> Vec<f64> {
        self.0.decoded()
    }

    /// Returns a tampered copy; see `cskd attack --help` for the attack syntax.
    #[pyo3(signature = (spec, seed = 0))]
    fn attacked(&self, spec: &str, seed: u64) -> PyResult<Self> {
        let kind: AttackKind = spec.parse().py_err()?;
        Ok(Payload(cskd::attacks::apply_attack(&self.0, &AttackSpec::new(kind, seed)).py_err()?))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __eq__(&self, other: &Payload) -> bool {
        self.0 == other.0
    }
}

#[pyclass(name = "Extraction", frozen, get_all)]
struct Extraction {
    watermark: Vec<u32>,
    raw_bits: Vec<u32>,
    normalized: Vec<f64>,
    measurements: Vec<f64>,
    zero_variance_groups: usize,
    non_finite_groups: usize,
    out_of_range: usize,
}

impl From<cskd::watermark::Extraction> for Extraction {
    fn from(e: cskd::watermark::Extraction) -> Self {
        Extraction {
            watermark: bits_out(&e.watermark),
            raw_bits: bits_out(&e.raw_bits),
            normalized: e.normalized,
            measurements: e.measurements,
            zero_variance_groups: e.zero_variance_groups,
            non_finite_groups: e.non_finite_groups,
            out_of_range: e.out_of_range,
        }
    }
}

#[pymethods]
impl Extraction {
    /// The watermark as `<hex>:<bits>`.
    fn hex(&self) -> String {
        HexBits(self.watermark.iter().map(|&b| b as u8).collect()).to_string()
    }
}

#[pyclass(name = "Reconstruction", frozen, get_all)]
struct Reconstruction {
    image: Image,
    outer_iterations: usize,
    inner_iterations: usize,
    objective: f64,
    converged: bool,
}

fn solver_params(mu: f64, beta: f64, anisotropic: bool, max_outer: usize, tolerance: f64) -> PyResult<SolverParams> {
    let p = SolverParams {
        mu,
        beta,
        norm: if anisotropic { TvNorm::Anisotropic } else { TvNorm::Isotropic },
        max_outer,
        tolerance,
        ..SolverParams::default()
    };
    p.validate().py_err()?;
    Ok(p)
}

/// A key bundle with its matrix and permutations expanded.
#[pyclass(name = "Session", frozen)]
struct Session(protocol::Session);

#[pymethods]
impl Session {
    #[new]
    fn new(keys: &PyKeyBundle) -> PyResult<Self> {
        Ok(Session(protocol::Session::new(keys.0.clone()).py_err()?))
    }

    #[getter]
    fn keys(&self) -> PyKeyBundle {
        PyKeyBundle(self.0.keys().clone())
    }

    /// Simulated measurements of `image`.
    #[pyo3(signature = (image, noise_seed = 0))]
    fn carrier(&self, image: &Image, noise_seed: u64) -> PyResult<Vec<f64>> {
        self.0.carrier(&image.0, noise_seed).py_err()
    }

    fn embed(&self, carrier: Vec<f64>, watermark: Vec<u32>) -> PyResult<Payload> {
        Ok(Payload(self.0.embed(&carrier, &bits_in(watermark)?).py_err()?))
    }

    fn extract(&self, payload: &Payload) -> PyResult<Extraction> {
        Ok(self.0.extract(&payload.0).py_err()?.into())
    }

    #[pyo3(signature = (measurements, mu = 256.0, beta = 32.0, anisotropic = false, max_outer = 300, tolerance = 1e-4))]
    fn reconstruct(
        &self,
        py: Python<'_>,
        measurements: Vec<f64>,
        mu: f64,
        beta: f64,
        anisotropic: bool,
        max_outer: usize,
        tolerance: f64,
    ) -> PyResult<Reconstruction> {
        let params = solver_params(mu, beta, anisotropic, max_outer, tolerance)?;
        let rec = py.detach(|| self.0.reconstruct(&measurements, &params)).py_err()?;
        Ok(Reconstruction {
            image: Image(rec.image),
            outer_iterations: rec.outer_iterations,
            inner_iterations: rec.inner_iterations,
            objective: rec.objective,
            converged: rec.converged,
        })
    }

    /// Runs the whole protocol and returns `(mse, psnr_db, ber, extracted_watermark)`.
    #[pyo3(signature = (image, watermark, noise_seed = 0, loopback = false))]
    fn pipeline(
        &self,
        py: Python<'_>,
        image: &Image,
        watermark: Vec<u32>,
        noise_seed: u64,
        loopback: bool,
    ) -> PyResult<(f64, f64, f64, Vec<u32>)> {
        let bits = bits_in(watermark)?;
        let channel = if loopback { Channel::Loopback } else { Channel::InProcess };
        let out = py
            .detach(|| protocol::run_pipeline(&self.0, &image.0, &bits, noise_seed, &SolverParams::default(), channel))
            .py_err()?;
        Ok((
            out.report.mse,
            out.report.psnr,
            out.report.ber,
            bits_out(&out.received.extraction.watermark),
        ))
    }
}

/// Background payload server; call `shutdown()` when done.
#[pyclass(name = "Server")]
struct Server(Option<ServerHandle>);

#[pymethods]
impl Server {
    #[new]
    #[pyo3(signature = (payload, bind = "127.0.0.1:0"))]
    fn new(payload: &Payload, bind: &str) -> PyResult<Self> {
        Ok(Server(Some(cskd::transport::spawn_server(bind, &payload.0).py_err()?)))
    }

    #[getter]
    fn address(&self) -> PyResult<String> {
        self.0
            .as_ref()
            .map(|h| h.local_addr().to_string())
            .ok_or_else(|| PyRuntimeError::new_err("server already shut down"))
    }

    fn shutdown(&mut self, py: Python<'_>) {
        if let Some(h) = self.0.take() {
            py.detach(|| h.shutdown());
        }
    }
}

#[pyfunction]
#[pyo3(signature = (address, timeout = 30.0))]
fn fetch(py: Python<'_>, address: &str, timeout: f64) -> PyResult<Payload> {
    let addr: SocketAddr = address
        .parse()
        .map_err(|_| PyValueError::new_err(format!("`{address}` is not a socket address")))?;
    let timeout = std::time::Duration::try_from_secs_f64(timeout)
        .map_err(|_| PyValueError::new_err("timeout must be a positive number of seconds"))?;
    Ok(Payload(py.detach(|| cskd::transport::fetch_with_timeout(addr, timeout)).py_err()?))
}

#[pyfunction]
fn mse(reference: &Image, candidate: &Image) -> PyResult<f64> {
    cskd::metrics::mse(&reference.0, &candidate.0).py_err()
}

#[pyfunction]
fn psnr(reference: &Image, candidate: &Image) -> PyResult<f64> {
    cskd::metrics::psnr(&reference.0, &candidate.0).py_err()
}

#[pyfunction]
fn ber(sent: Vec<u32>, received: Vec<u32>) -> PyResult<f64> {
    cskd::metrics::ber(&bits_in(sent)?, &bits_in(received)?).py_err()
}

#[pyfunction]
fn complement_bits(pattern: u64) -> u64 {
    cskd::watermark::complement_bits(pattern)
}

#[pyfunction]
fn poisson_gain_for_mean_count(image: &Image, mean_count: f64) -> PyResult<f64> {
    cskd::evaluation::poisson_gain_for_mean_count(&image.0, mean_count).py_err()
}

/// Parses `<hex>:<bits>` into a list of bits.
#[pyfunction]
fn parse_watermark(text: &str) -> PyResult<Vec<u32>> {
    let HexBits(bits) = text.parse().py_err()?;
    Ok(bits_out(&bits))
}

#[pymodule]
#[pyo3(name = "cskd")]
fn cskd_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Image>()?;
    m.add_class::<PyKeyBundle>()?;
    m.add_class::<Payload>()?;
    m.add_class::<Extraction>()?;
    m.add_class::<Reconstruction>()?;
    m.add_class::<Session>()?;
    m.add_class::<Server>()?;
    m.add_function(wrap_pyfunction!(fetch, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ber, m)?)?;
    m.add_function(wrap_pyfunction!(complement_bits, m)?)?;
    m.add_function(wrap_pyfunction!(poisson_gain_for_mean_count, m)?)?;
    m.add_function(wrap_pyfunction!(parse_watermark, m)?)?;
    Ok(())
}
