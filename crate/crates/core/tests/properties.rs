use proptest::prelude::*;

use cskd::attacks::{apply_attack, AttackKind, AttackSpec};
use cskd::keys::{KeyBundle, KeygenParams};
use cskd::metrics::{ber, mse, psnr_from_mse};
use cskd::sensing::{generate_measurement_matrix, sense, ImageRaster, NoiseModel};
use cskd::transport::{deserialize, serialize};
use cskd::watermark::{
    classify, embed, extract, normalize, HexBits, NormalizationBounds, PermutationKey, ValueClass, Watermark,
    WatermarkedPayload,
};

fn layout() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..12, 1usize..6, 2usize..12)
}

proptest! {
    #[test]
    fn extract_inverts_embed(
        (len, repeats, r) in layout(),
        seeds in any::<(u64, u64)>(),
        raw in prop::collection::vec(0.0f64..5000.0, 12 * 6 * 12),
        bit_seed in any::<u64>(),
    ) {
        let m = len * repeats * r;
        let y = &raw[..m];
        let bounds = NormalizationBounds::new(0.0, 5000.0).unwrap();
        let key1 = PermutationKey::new(seeds.0, m).derive().unwrap();
        let key2 = PermutationKey::new(seeds.1, m).derive().unwrap();
        let norm = normalize(y, &bounds).values;
        let permuted = key1.apply(&norm);
        prop_assume!(permuted.chunks(r).all(|g| g.iter().any(|&v| v != g[0])));
        let bits: Vec<u8> = (0..len).map(|i| ((bit_seed >> (i % 64)) & 1) as u8).collect();
        let wm = Watermark::new(bits.clone(), repeats).unwrap();
        let payload = embed(y, &key1, &key2, &wm, &bounds).unwrap();
        for &w in payload.words() {
            prop_assert_ne!(classify(w), ValueClass::Invalid);
        }
        let ex = extract(&payload, &key1, &key2, len, repeats, &bounds).unwrap();
        prop_assert_eq!(ex.watermark, bits);
        prop_assert_eq!(ex.out_of_range, 0);
        for (a, b) in ex.normalized.iter().zip(&norm) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn complement_is_affine_on_the_binade(mantissa in 0u64..(1 << 52)) {
        let v = f64::from_bits(0x3FE0_0000_0000_0000 | mantissa);
        let c = f64::from_bits(!v.to_bits());
        prop_assert_eq!(c, 8.0 * v - 12.0 + 2f64.powi(-50));
        prop_assert!((-8.0..=-4.0).contains(&c));
    }

    #[test]
    fn permutation_inverse_composes_to_identity(seed in any::<u64>(), m in 1usize..300) {
        let p = PermutationKey::new(seed, m).derive().unwrap();
        let idx: Vec<usize> = (0..m).collect();
        prop_assert_eq!(p.apply_inverse(&p.apply(&idx)), idx.clone());
        prop_assert_eq!(p.inverse().apply(&p.apply(&idx)), idx);
    }

    #[test]
    fn normalize_preserves_order(a in -10.0f64..1010.0, b in -10.0f64..1010.0) {
        let bounds = NormalizationBounds::new(0.0, 1000.0).unwrap();
        let n = normalize(&[a, b], &bounds).values;
        prop_assert!((0.5..1.0).contains(&n[0]) && (0.5..1.0).contains(&n[1]));
        if a <= b {
            prop_assert!(n[0] <= n[1]);
        }
    }

    #[test]
    fn noiseless_sensing_is_homogeneous(
        seed in any::<u64>(),
        pixels in prop::collection::vec(0.0f64..255.0, 64),
        alpha in 0.0f64..4.0,
    ) {
        let a = generate_measurement_matrix(seed, 12, 64).unwrap();
        let x = ImageRaster::new(8, 8, pixels).unwrap();
        let y = sense(&x, &a, NoiseModel::None, 0).unwrap();
        let ys = sense(&x.scaled(alpha).unwrap(), &a, NoiseModel::None, 0).unwrap();
        for (u, v) in y.iter().zip(&ys) {
            prop_assert!((alpha * u - v).abs() <= 1e-12 * (64.0 * 255.0 * alpha).max(1.0));
        }
    }

    #[test]
    fn metric_symmetries(
        p in prop::collection::vec(0.0f64..255.0, 16),
        q in prop::collection::vec(0.0f64..255.0, 16),
        w in prop::collection::vec(0u8..2, 16),
        v in prop::collection::vec(0u8..2, 16),
        seed in any::<u64>(),
    ) {
        let a = ImageRaster::new(4, 4, p).unwrap();
        let b = ImageRaster::new(4, 4, q).unwrap();
        prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        prop_assert_eq!(ber(&w, &v).unwrap(), ber(&v, &w).unwrap());
        let perm = PermutationKey::new(seed, 16).derive().unwrap();
        prop_assert_eq!(ber(&perm.apply(&w), &perm.apply(&v)).unwrap(), ber(&w, &v).unwrap());
        let e = mse(&a, &b).unwrap();
        prop_assert!(psnr_from_mse(e + 1.0) < psnr_from_mse(e));
    }

    #[test]
    fn attacks_keep_length_and_repeat(
        words in prop::collection::vec(any::<u64>(), 1..200),
        seed in any::<u64>(),
        pick in any::<usize>(),
        bit in 0u32..64,
    ) {
        let payload = WatermarkedPayload::from_words(words);
        let m = payload.len();
        for kind in [
            AttackKind::Shuffle,
            AttackKind::BitFlip { value_index: pick % m, bit_index: bit },
            AttackKind::ZeroSubstitute { count: pick % (m + 1) },
            AttackKind::DeleteShift { value_index: pick % m },
        ] {
            let spec = AttackSpec::new(kind, seed);
            let once = apply_attack(&payload, &spec).unwrap();
            prop_assert_eq!(once.len(), m);
            prop_assert_eq!(once, apply_attack(&payload, &spec).unwrap());
        }
    }

    #[test]
    fn frames_round_trip(words in prop::collection::vec(any::<u64>(), 0..300)) {
        let payload = WatermarkedPayload::from_words(words);
        let frame = serialize(&payload).unwrap();
        prop_assert_eq!(frame.len(), 9 + 8 * payload.len());
        prop_assert_eq!(deserialize(&frame).unwrap(), payload);
    }

    #[test]
    fn hex_bits_round_trip(bits in prop::collection::vec(0u8..2, 1..80)) {
        let text = HexBits(bits.clone()).to_string();
        prop_assert_eq!(text.parse::<HexBits>().unwrap().0, bits);
    }

    #[test]
    fn key_files_round_trip(seed in any::<u64>(), repeats in 1usize..6, r in 2usize..40, lambda in 0.01f64..10.0) {
        let keys = KeyBundle::generate(seed, KeygenParams {
            width: 16,
            height: 16,
            measurements: 8 * repeats * r,
            watermark_len: 8,
            repeats,
            noise: NoiseModel::Poisson { lambda },
        }).unwrap();
        prop_assert_eq!(KeyBundle::from_text(&keys.to_text()).unwrap(), keys);
    }
}
