use std::collections::HashMap;
use std::net::TcpListener;
use std::thread;

use cskd::evaluation::{poisson_gain_for_mean_count, random_watermark};
use cskd::keys::{KeyBundle, KeygenParams};
use cskd::metrics;
use cskd::protocol::{run_pipeline, Channel, Session};
use cskd::reconstruction::{tv_reconstruct, SolverParams};
use cskd::sensing::{
    generate_measurement_matrix, generate_phantom, sense, ImageRaster, MeasurementMatrix, NoiseModel, PhantomKind,
};
use cskd::transport;
use cskd::watermark::{embed, extract, NormalizationBounds, Permutation, PermutationKey, Watermark};

fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in all_permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn five_element_permutations_are_uniform() {
    let cells: HashMap<Vec<usize>, usize> = all_permutations(5).into_iter().enumerate().map(|(i, p)| (p, i)).collect();
    assert_eq!(cells.len(), 120);
    let draws = 100_000u64;
    let mut counts = [0u64; 120];
    for seed in 0..draws {
        let p = PermutationKey::new(seed, 5).derive().unwrap();
        counts[cells[p.as_slice()]] += 1;
    }
    assert!(counts.iter().all(|&c| c > 0));
    let expected = draws as f64 / 120.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // Upper 0.001 quantile of chi-square with 119 degrees of freedom.
    assert!(chi2 < 172.41768, "chi-square {chi2}");
}

#[test]
fn small_payloads_round_trip_for_every_watermark() {
    let bounds = NormalizationBounds::new(0.0, 100.0).unwrap();
    for (len, repeats, r) in [(8, 1, 2), (4, 2, 2), (2, 2, 4), (5, 1, 3), (3, 1, 5)] {
        let m = len * repeats * r;
        assert!(m <= 16);
        let y: Vec<f64> = (0..m).map(|i| (i * 37 % m) as f64 * 6.0 + 1.0).collect();
        let key1 = PermutationKey::new(3 + m as u64, m).derive().unwrap();
        let key2 = PermutationKey::new(99, m).derive().unwrap();
        for word in 0u32..(1 << len) {
            let bits: Vec<u8> = (0..len).map(|i| ((word >> i) & 1) as u8).collect();
            let wm = Watermark::new(bits.clone(), repeats).unwrap();
            let payload = embed(&y, &key1, &key2, &wm, &bounds).unwrap();
            let ex = extract(&payload, &key1, &key2, len, repeats, &bounds).unwrap();
            assert_eq!(ex.watermark, bits);
            for (got, want) in ex.measurements.iter().zip(&y) {
                assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            }
        }
    }
}

#[test]
fn identity_keys_leave_groups_in_place() {
    let bounds = NormalizationBounds::new(0.0, 1.0).unwrap();
    let id = Permutation::identity(4);
    let wm = Watermark::new(vec![0, 1], 1).unwrap();
    let payload = embed(&[0.0, 0.5, 0.25, 0.75], &id, &id, &wm, &bounds).unwrap();
    let decoded = payload.decoded();
    assert_eq!(&decoded[..2], &[0.5, 0.75]);
    assert!(decoded[2..].iter().all(|v| (-8.0..=-4.0).contains(v)));
}

fn dense_product(a: &MeasurementMatrix, x: &[f64]) -> Vec<f64> {
    (0..a.rows())
        .map(|j| a.row(j).iter().zip(x).filter(|(&bit, _)| bit == 1).map(|(_, v)| v).sum())
        .collect()
}

#[test]
fn poisson_counts_average_to_the_scaled_projection() {
    let x = generate_phantom(64, 64, PhantomKind::Phantom).unwrap();
    let a = generate_measurement_matrix(5, 1280, 4096).unwrap();
    let lambda = poisson_gain_for_mean_count(&x, 1e4).unwrap();
    let clean = dense_product(&a, x.values());
    let expected = lambda * clean.iter().sum::<f64>() / clean.len() as f64;
    assert!((expected / 1e4 - 1.0).abs() < 0.05, "{expected}");
    let mut total = 0.0;
    for seed in 0..20 {
        let y = sense(&x, &a, NoiseModel::Poisson { lambda }, seed).unwrap();
        assert!(y.iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
        total += y.iter().sum::<f64>() / y.len() as f64;
    }
    let mean = total / 20.0;
    assert!((mean / expected - 1.0).abs() < 0.02, "{mean} vs {expected}");
}

#[test]
fn packed_product_matches_dense_rows() {
    let x = generate_phantom(32, 32, PhantomKind::Phantom).unwrap();
    let a = generate_measurement_matrix(8, 300, 1024).unwrap();
    let y = sense(&x, &a, NoiseModel::None, 0).unwrap();
    for (got, want) in y.iter().zip(dense_product(&a, x.values())) {
        assert_eq!(*got, want);
    }
}

fn rectangles(width: usize, height: usize) -> ImageRaster {
    let mut v = vec![0.0; width * height];
    for row in 0..height {
        for col in 0..width {
            if row >= height / 8 && row < height / 2 && col >= width / 6 && col < 2 * width / 3 {
                v[row * width + col] = 180.0;
            }
            if row >= 5 * height / 8 && col >= width / 3 && col < 7 * width / 8 {
                v[row * width + col] = 60.0;
            }
        }
    }
    ImageRaster::new(width, height, v).unwrap()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
    let den: f64 = b.iter().map(|q| q * q).sum();
    (num / den).sqrt()
}

#[test]
fn undersampled_rectangles_are_recovered() {
    let x = rectangles(32, 32);
    let a = generate_measurement_matrix(12, 410, 1024).unwrap();
    let b = sense(&x, &a, NoiseModel::None, 0).unwrap();
    let rec = tv_reconstruct(&a, &b, 32, 32, &SolverParams::default()).unwrap();
    assert!(relative_error(rec.image.values(), x.values()) <= 5e-2);
    assert!(rec.objective <= rec.zero_objective);
}

#[test]
fn square_systems_are_solved_exactly() {
    let n = 16 * 16;
    let x = rectangles(16, 16);
    // Full-rank data needs a heavier penalty than the undersampled default.
    let params = SolverParams {
        mu: 4096.0,
        ..SolverParams::default()
    };
    for shape in ["cyclic-shift", "bidiagonal"] {
        let mut entries = vec![0u8; n * n];
        for i in 0..n {
            if shape == "cyclic-shift" {
                entries[i * n + (i + 1) % n] = 1;
            } else {
                entries[i * n + i] = 1;
                if i > 0 {
                    entries[i * n + i - 1] = 1;
                }
            }
        }
        let a = MeasurementMatrix::from_entries(n, n, entries).unwrap();
        let b = sense(&x, &a, NoiseModel::None, 0).unwrap();
        let rec = tv_reconstruct(&a, &b, 16, 16, &params).unwrap();
        let db = metrics::psnr(&x, &rec.image).unwrap();
        assert!(db >= 50.0, "{shape}: {db} dB");
    }
}

#[test]
fn noisy_reconstruction_is_nonnegative_and_descends() {
    let x = rectangles(24, 24);
    let a = generate_measurement_matrix(3, 300, 576).unwrap();
    let b = sense(&x, &a, NoiseModel::Gaussian { sigma: 400.0 }, 9).unwrap();
    let rec = tv_reconstruct(&a, &b, 24, 24, &SolverParams::default()).unwrap();
    assert!(rec.image.values().iter().all(|&v| v >= 0.0));
    assert!(rec.objective <= rec.zero_objective);
    assert!(rec.outer_iterations >= 1);
}

fn small_session() -> (Session, ImageRaster) {
    let x = generate_phantom(32, 32, PhantomKind::LetterS).unwrap();
    let keys = KeyBundle::generate(
        31,
        KeygenParams {
            width: 32,
            height: 32,
            measurements: 480,
            watermark_len: 8,
            repeats: 3,
            noise: NoiseModel::Poisson {
                lambda: poisson_gain_for_mean_count(&x, 1e4).unwrap(),
            },
        },
    )
    .unwrap();
    (Session::new(keys).unwrap(), x)
}

#[test]
fn loopback_pipeline_matches_in_process() {
    let (s, x) = small_session();
    let bits = random_watermark(8, 5);
    let params = SolverParams::default();
    let local = run_pipeline(&s, &x, &bits, 4, &params, Channel::InProcess).unwrap();
    let remote = run_pipeline(&s, &x, &bits, 4, &params, Channel::Loopback).unwrap();
    assert_eq!(local.payload, remote.payload);
    assert_eq!(local.received.extraction, remote.received.extraction);
    assert_eq!(local.received.image, remote.received.image);
    assert_eq!(local.report, remote.report);
    assert_eq!(local.report.ber, 0.0);
}

#[test]
fn blocking_server_serves_concurrent_clients() {
    let (s, x) = small_session();
    let payload = s.embed(&s.carrier(&x, 1).unwrap(), &random_watermark(8, 1)).unwrap();
    let addr = {
        let probe = TcpListener::bind("127.0.0.1:0").unwrap();
        probe.local_addr().unwrap()
    };
    let served = payload.clone();
    let server = thread::spawn(move || transport::serve(addr, &served, Some(2)));
    let fetch = move || {
        for _ in 0..200 {
            if let Ok(p) = transport::fetch(addr) {
                return p;
            }
            thread::sleep(std::time::Duration::from_millis(10));
        }
        panic!("server never came up");
    };
    let clients: Vec<_> = (0..2).map(|_| thread::spawn(fetch)).collect();
    for c in clients {
        assert_eq!(c.join().unwrap(), payload);
    }
    server.join().unwrap().unwrap();
}

#[test]
fn wrong_keys_do_not_recover_the_watermark() {
    let (s, x) = small_session();
    let bits = random_watermark(8, 2);
    let payload = s.embed(&s.carrier(&x, 2).unwrap(), &bits).unwrap();
    let mut other = s.keys().clone();
    other.perm2_seed ^= 1;
    let eve = Session::new(other).unwrap();
    let stolen = eve.extract(&payload).unwrap();
    let own = s.extract(&payload).unwrap();
    assert_eq!(own.watermark, bits);
    assert_ne!(stolen.measurements, own.measurements);
}
