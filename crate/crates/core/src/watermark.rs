//! Watermark embedding into permuted measurements and variance-based extraction.
//!
//! Measurements are first mapped into the binade `[0.5, 1.0)`. Inside that
//! binade, complementing all 64 bits of a double is the exact affine map
//! `v -> 8v - 12 + 2^-50`, so a complemented group has exactly 64 times the
//! variance of the original. The receiver complements everything once more
//! ("global XOR") and, per group, keeps whichever of the two versions has the
//! smaller variance; the smaller one is the original.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Largest double below 1.0.
pub const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// The key bits to distribute, repeated `repeats` times across the carrier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Watermark {
    bits: Vec<u8>,
    repeats: usize,
}

impl Watermark {
    pub fn new(bits: Vec<u8>, repeats: usize) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::config("watermark must have at least one bit"));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::config("watermark bits must be 0 or 1"));
        }
        if repeats == 0 {
            return Err(Error::config("watermark repeat count must be at least 1"));
        }
        Ok(Watermark { bits, repeats })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn repeats(&self) -> usize {
        self.repeats
    }

    pub fn with_repeats(&self, repeats: usize) -> Result<Self> {
        Watermark::new(self.bits.clone(), repeats)
    }

    /// The bit carried by group `i`: the watermark concatenated `repeats` times.
    pub fn group_bit(&self, i: usize) -> u8 {
        self.bits[i % self.bits.len()]
    }

    /// Hex rendering with explicit bit length, e.g. `c5:8`.
    pub fn to_hex(&self) -> String {
        HexBits(self.bits.clone()).to_string()
    }

    pub fn from_hex(s: &str, repeats: usize) -> Result<Self> {
        let HexBits(bits) = s.parse()?;
        Watermark::new(bits, repeats)
    }
}

/// A bit string written as `<hex digits>:<bit length>`, most significant bit first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HexBits(pub Vec<u8>);

impl fmt::Display for HexBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for nibble in self.0.chunks(4) {
            let mut v = 0u8;
            for k in 0..4 {
                v = (v << 1) | nibble.get(k).copied().unwrap_or(0);
            }
            write!(f, "{v:x}")?;
        }
        write!(f, ":{}", self.0.len())
    }
}

impl FromStr for HexBits {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (hex, len) = s
            .split_once(':')
            .ok_or_else(|| Error::config(format!("watermark `{s}` must look like <hex>:<bits>")))?;
        let len: usize = len
            .parse()
            .map_err(|_| Error::config(format!("watermark bit length `{len}` is not a number")))?;
        if len == 0 || hex.len() != len.div_ceil(4) {
            return Err(Error::config(format!(
                "watermark `{s}`: {len} bits need exactly {} hex digits",
                len.div_ceil(4)
            )));
        }
        let mut bits = Vec::with_capacity(hex.len() * 4);
        for c in hex.chars() {
            let v = c
                .to_digit(16)
                .ok_or_else(|| Error::config(format!("`{c}` is not a hex digit")))?;
            bits.extend((0..4).rev().map(|k| ((v >> k) & 1) as u8));
        }
        if bits[len..].iter().any(|&b| b != 0) {
            return Err(Error::config(format!("watermark `{s}` has nonzero padding bits")));
        }
        bits.truncate(len);
        Ok(HexBits(bits))
    }
}

/// Seed of a random allocation key; expands into a permutation of `0..len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PermutationKey {
    pub seed: u64,
    pub len: usize,
}

impl PermutationKey {
    pub fn new(seed: u64, len: usize) -> Self {
        PermutationKey { seed, len }
    }

    /// Fisher-Yates shuffle of the identity driven by `splitmix64(seed)`.
    pub fn derive(&self) -> Result<Permutation> {
        if self.len == 0 {
            return Err(Error::config("permutation length must be at least 1"));
        }
        let mut map: Vec<usize> = (0..self.len).collect();
        let mut rng = SplitMix64::new(self.seed);
        for i in (1..self.len).rev() {
            let j = rng.below(i as u64 + 1) as usize;
            map.swap(i, j);
        }
        Ok(Permutation { map })
    }
}

/// A bijection on `0..len`. Applying it gathers: `out[i] = v[map[i]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn identity(len: usize) -> Self {
        Permutation {
            map: (0..len).collect(),
        }
    }

    pub fn from_map(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::contract("not a permutation"));
            }
        }
        Ok(Permutation { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn apply<T: Copy>(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.map.len(), "permutation length mismatch");
        self.map.iter().map(|&i| v[i]).collect()
    }

    pub fn apply_inverse<T: Copy + Default>(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.map.len(), "permutation length mismatch");
        let mut out = vec![T::default(); v.len()];
        for (&dst, &x) in self.map.iter().zip(v) {
            out[dst] = x;
        }
        out
    }

    pub fn inverse(&self) -> Permutation {
        let mut map = vec![0; self.map.len()];
        for (i, &m) in self.map.iter().enumerate() {
            map[m] = i;
        }
        Permutation { map }
    }
}

/// Static calibration range mapped affinely onto `[0.5, 1.0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationBounds {
    lo: f64,
    hi: f64,
}

/// Result of [`normalize`]: values in `[0.5, 1.0)` and how many inputs fell outside the bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    pub clamped: usize,
}

impl NormalizationBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::config(format!(
                "normalization bounds need finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(NormalizationBounds { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn normalize_value(&self, v: f64) -> f64 {
        let c = if v.is_nan() { self.lo } else { v.clamp(self.lo, self.hi) };
        (0.5 + 0.5 * (c - self.lo) / (self.hi - self.lo)).min(ONE_BELOW)
    }

    pub fn denormalize_value(&self, v: f64) -> f64 {
        self.lo + (v - 0.5) * 2.0 * (self.hi - self.lo)
    }
}

pub fn normalize(y: &[f64], bounds: &NormalizationBounds) -> Normalized {
    let clamped = y
        .iter()
        .filter(|&&v| !(v >= bounds.lo && v <= bounds.hi))
        .count();
    Normalized {
        values: y.iter().map(|&v| bounds.normalize_value(v)).collect(),
        clamped,
    }
}

pub fn denormalize(v: &[f64], bounds: &NormalizationBounds) -> Vec<f64> {
    v.iter().map(|&x| bounds.denormalize_value(x)).collect()
}

/// Inverts all 64 bits of an IEEE-754 pattern.
#[inline]
pub fn complement_bits(pattern: u64) -> u64 {
    !pattern
}

/// Which of the two legal ranges a transmitted word decodes into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueClass {
    /// `[0.5, 1.0)`: a value left as is.
    Plain,
    /// Magnitude in `[4, 8)`, i.e. `(-8, -4]`: a complemented value.
    Complemented,
    /// Anything else, which only tampering produces.
    Invalid,
}

pub fn classify(pattern: u64) -> ValueClass {
    match pattern >> 52 {
        0x3FE => ValueClass::Plain,
        0xC01 => ValueClass::Complemented,
        _ => ValueClass::Invalid,
    }
}

/// The transmitted signal: one IEEE-754 bit pattern per measurement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WatermarkedPayload {
    words: Vec<u64>,
}

impl WatermarkedPayload {
    pub fn from_words(words: Vec<u64>) -> Self {
        WatermarkedPayload { words }
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn words_mut(&mut self) -> &mut Vec<u64> {
        &mut self.words
    }

    pub fn into_words(self) -> Vec<u64> {
        self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn decoded(&self) -> Vec<f64> {
        self.words.iter().map(|&w| f64::from_bits(w)).collect()
    }
}

/// How the carrier is cut into groups: `M = len * repeats * group_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupLayout {
    pub watermark_len: usize,
    pub repeats: usize,
    pub group_size: usize,
}

impl GroupLayout {
    pub fn for_measurements(m: usize, watermark_len: usize, repeats: usize) -> Result<Self> {
        if watermark_len == 0 || repeats == 0 {
            return Err(Error::config("watermark length and repeats must be at least 1"));
        }
        let groups = watermark_len * repeats;
        if m % groups != 0 || m / groups < 2 {
            return Err(Error::config(format!(
                "M must equal len*R*r with r >= 2 (M = {m}, len = {watermark_len}, R = {repeats})"
            )));
        }
        Ok(GroupLayout {
            watermark_len,
            repeats,
            group_size: m / groups,
        })
    }

    pub fn group_count(&self) -> usize {
        self.watermark_len * self.repeats
    }

    pub fn measurements(&self) -> usize {
        self.group_count() * self.group_size
    }
}

/// Embeds `wm` into `y`: normalize, permute with key 1, complement the groups
/// whose bit is 1, permute with key 2.
pub fn embed(
    y: &[f64],
    key1: &Permutation,
    key2: &Permutation,
    wm: &Watermark,
    bounds: &NormalizationBounds,
) -> Result<WatermarkedPayload> {
    let m = y.len();
    if key1.len() != m || key2.len() != m {
        return Err(Error::contract(format!(
            "allocation keys cover {} and {} values but the carrier has {m}",
            key1.len(),
            key2.len()
        )));
    }
    let layout = GroupLayout::for_measurements(m, wm.len(), wm.repeats())?;
    let normalized = normalize(y, bounds);
    let mut words: Vec<u64> = key1
        .apply(&normalized.values)
        .into_iter()
        .map(f64::to_bits)
        .collect();
    for (i, group) in words.chunks_mut(layout.group_size).enumerate() {
        if wm.group_bit(i) == 1 {
            group.iter_mut().for_each(|w| *w = complement_bits(*w));
        }
    }
    Ok(WatermarkedPayload::from_words(key2.apply(&words)))
}

/// Population variance (divisor `r`) of a group, `r >= 2`.
pub fn group_variance(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::contract(format!(
            "group variance needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}

/// Everything the receiver recovers from one payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    /// Consensus watermark, one bit per position.
    pub watermark: Vec<u8>,
    /// Per-group decisions before the repetition vote.
    pub raw_bits: Vec<u8>,
    /// Recovered measurements in the normalized domain `[0.5, 1.0)`.
    pub normalized: Vec<f64>,
    /// Recovered measurements in detector units.
    pub measurements: Vec<f64>,
    /// Groups whose received variance was zero, so their bit cannot be told apart.
    pub zero_variance_groups: usize,
    /// Groups whose variance comparison involved NaN or infinity.
    pub non_finite_groups: usize,
    /// Recovered values outside `[0.5, 1.0)`, clamped back before denormalization.
    pub out_of_range: usize,
}

/// Extracts the watermark and the original measurements from a received payload.
pub fn extract(
    payload: &WatermarkedPayload,
    key1: &Permutation,
    key2: &Permutation,
    watermark_len: usize,
    repeats: usize,
    bounds: &NormalizationBounds,
) -> Result<Extraction> {
    let m = payload.len();
    if key1.len() != m || key2.len() != m {
        return Err(Error::contract(format!(
            "allocation keys cover {} and {} values but the payload has {m}",
            key1.len(),
            key2.len()
        )));
    }
    let layout = GroupLayout::for_measurements(m, watermark_len, repeats)?;
    let r = layout.group_size;

    let received = key2.apply_inverse(payload.words());
    let mut raw_bits = Vec::with_capacity(layout.group_count());
    let mut zero_variance_groups = 0;
    let mut non_finite_groups = 0;
    let mut plain = vec![0.0; r];
    let mut flipped = vec![0.0; r];
    for group in received.chunks(r) {
        for (k, &w) in group.iter().enumerate() {
            plain[k] = f64::from_bits(w);
            flipped[k] = f64::from_bits(complement_bits(w));
        }
        let var_plain = group_variance(&plain)?;
        let var_flipped = group_variance(&flipped)?;
        if var_plain == 0.0 {
            zero_variance_groups += 1;
        }
        if !(var_plain.is_finite() && var_flipped.is_finite()) {
            non_finite_groups += 1;
        }
        // NaN comparisons are false, which lands on the "otherwise" branch.
        raw_bits.push(u8::from(var_flipped < var_plain));
    }

    let watermark: Vec<u8> = (0..watermark_len)
        .map(|p| {
            let ones: usize = (0..repeats)
                .map(|c| raw_bits[c * watermark_len + p] as usize)
                .sum();
            u8::from(ones as f64 / repeats as f64 >= 0.5)
        })
        .collect();

    let mut restored = received;
    for (i, group) in restored.chunks_mut(r).enumerate() {
        if watermark[i % watermark_len] == 1 {
            group.iter_mut().for_each(|w| *w = complement_bits(*w));
        }
    }
    let mut out_of_range = 0;
    let normalized: Vec<f64> = key1
        .apply_inverse(&restored)
        .into_iter()
        .map(|w| {
            let v = f64::from_bits(w);
            if (0.5..1.0).contains(&v) {
                v
            } else {
                out_of_range += 1;
                if v.is_nan() {
                    0.5
                } else {
                    v.clamp(0.5, ONE_BELOW)
                }
            }
        })
        .collect();
    let measurements = denormalize(&normalized, bounds);
    Ok(Extraction {
        watermark,
        raw_bits,
        normalized,
        measurements,
        zero_variance_groups,
        non_finite_groups,
        out_of_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_POW_M50: f64 = 1.0 / (1u64 << 50) as f64;

    fn unit_bounds() -> NormalizationBounds {
        NormalizationBounds::new(0.0, 1.0).unwrap()
    }

    #[test]
    fn identity_for_single_element() {
        for seed in 0..20 {
            assert_eq!(PermutationKey::new(seed, 1).derive().unwrap().as_slice(), &[0]);
        }
    }

    #[test]
    fn permutation_determinism_and_inverse() {
        let key = PermutationKey::new(0xDEAD_BEEF, 2560);
        let p = key.derive().unwrap();
        assert_eq!(p, key.derive().unwrap());
        let v: Vec<usize> = (0..2560).map(|i| i * 3).collect();
        assert_eq!(p.apply_inverse(&p.apply(&v)), v);
        assert_eq!(p.inverse().apply(&p.apply(&v)), v);
        assert!(Permutation::from_map(p.as_slice().to_vec()).is_ok());
        assert!(Permutation::from_map(vec![0, 0, 1]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let b = NormalizationBounds::new(0.0, 1000.0).unwrap();
        assert_eq!(b.normalize_value(0.0), 0.5);
        assert_eq!(b.normalize_value(1000.0), ONE_BELOW);
        assert_eq!(b.normalize_value(500.0), 0.75);
        let n = normalize(&[-3.0, 10.0, 2000.0, f64::NAN], &b);
        assert_eq!(n.clamped, 3);
        assert!(n.values.iter().all(|v| (0.5..1.0).contains(v)));
        assert!(NormalizationBounds::new(1.0, 1.0).is_err());
    }

    #[test]
    fn complement_examples() {
        let half = 0.5f64.to_bits();
        assert_eq!(half, 0x3FE0_0000_0000_0000);
        assert_eq!(complement_bits(half), 0xC01F_FFFF_FFFF_FFFF);
        assert_eq!(f64::from_bits(complement_bits(half)), -8.0 + TWO_POW_M50);
        assert_eq!(f64::from_bits(complement_bits(0.75f64.to_bits())), -6.0 + TWO_POW_M50);
        assert_eq!(classify(complement_bits(ONE_BELOW.to_bits())), ValueClass::Complemented);
        assert_eq!(f64::from_bits(complement_bits(ONE_BELOW.to_bits())), -4.0);
    }

    #[test]
    fn complement_is_involution() {
        let mut rng = SplitMix64::new(77);
        for _ in 0..1_000_000 {
            let w = rng.next_u64();
            assert_eq!(complement_bits(complement_bits(w)), w);
        }
    }

    #[test]
    fn variance_examples() {
        assert_eq!(group_variance(&[0.5, 0.75]).unwrap(), 0.015625);
        assert_eq!(group_variance(&[0.3; 7]).unwrap(), 0.0);
        assert_eq!(group_variance(&[-8.0, -6.0]).unwrap(), 1.0);
        assert!(matches!(group_variance(&[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn hand_example_embed_and_extract() {
        let y = [0.0, 0.5, 0.25, 0.75];
        let id = Permutation::identity(4);
        let wm = Watermark::new(vec![1, 0], 1).unwrap();
        let payload = embed(&y, &id, &id, &wm, &unit_bounds()).unwrap();
        assert_eq!(
            payload.decoded(),
            vec![-8.0 + TWO_POW_M50, -6.0 + TWO_POW_M50, 0.625, 0.875]
        );
        let out = extract(&payload, &id, &id, 2, 1, &unit_bounds()).unwrap();
        assert_eq!(out.watermark, vec![1, 0]);
        assert_eq!(out.raw_bits, vec![1, 0]);
        assert_eq!(out.normalized, vec![0.5, 0.75, 0.625, 0.875]);
        assert_eq!(out.measurements, y.to_vec());
        assert_eq!(out.out_of_range, 0);
    }

    #[test]
    fn all_zero_watermark_only_permutes() {
        let y: Vec<f64> = (0..24).map(|i| i as f64 * 3.0 + 1.0).collect();
        let bounds = NormalizationBounds::new(0.0, 100.0).unwrap();
        let k1 = PermutationKey::new(1, 24).derive().unwrap();
        let k2 = PermutationKey::new(2, 24).derive().unwrap();
        let wm = Watermark::new(vec![0; 4], 3).unwrap();
        let payload = embed(&y, &k1, &k2, &wm, &bounds).unwrap();
        let expected = k2.apply(&k1.apply(&normalize(&y, &bounds).values));
        assert_eq!(payload.decoded(), expected);
    }

    #[test]
    fn layout_from_published_configuration() {
        let l = GroupLayout::for_measurements(1280, 8, 5).unwrap();
        assert_eq!((l.group_count(), l.group_size), (40, 32));
        let l = GroupLayout::for_measurements(5120, 64, 5).unwrap();
        assert_eq!((l.group_count(), l.group_size), (320, 16));
        assert!(matches!(
            GroupLayout::for_measurements(1281, 8, 5),
            Err(Error::Config(msg)) if msg.contains("M must equal len*R*r")
        ));
        assert!(GroupLayout::for_measurements(40, 8, 5).is_err());
    }

    #[test]
    fn embed_rejects_mismatched_keys() {
        let id3 = Permutation::identity(3);
        let id4 = Permutation::identity(4);
        let wm = Watermark::new(vec![1], 1).unwrap();
        assert!(matches!(
            embed(&[0.1; 4], &id3, &id4, &wm, &unit_bounds()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_variance_group_is_reported() {
        let y = [0.2, 0.2, 0.1, 0.3];
        let id = Permutation::identity(4);
        let wm = Watermark::new(vec![1, 1], 1).unwrap();
        let payload = embed(&y, &id, &id, &wm, &unit_bounds()).unwrap();
        let out = extract(&payload, &id, &id, 2, 1, &unit_bounds()).unwrap();
        // The constant group ties and falls to 0; the other is still decoded.
        assert_eq!(out.watermark, vec![0, 1]);
        assert_eq!(out.zero_variance_groups, 1);
    }

    #[test]
    fn zero_word_does_not_poison_output() {
        let y: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 + 0.05).collect();
        let id = Permutation::identity(8);
        let wm = Watermark::new(vec![1, 0], 1).unwrap();
        let mut payload = embed(&y, &id, &id, &wm, &unit_bounds()).unwrap();
        payload.words_mut()[5] = 0.0f64.to_bits();
        let out = extract(&payload, &id, &id, 2, 1, &unit_bounds()).unwrap();
        assert!(out.measurements.iter().all(|v| v.is_finite()));
        assert_eq!(out.out_of_range, 1);
        assert_eq!(out.non_finite_groups, 1);
    }

    #[test]
    fn hex_bits() {
        let wm = Watermark::from_hex("c5:8", 5).unwrap();
        assert_eq!(wm.bits(), &[1, 1, 0, 0, 0, 1, 0, 1]);
        assert_eq!(wm.to_hex(), "c5:8");
        let odd = Watermark::from_hex("a:3", 1).unwrap();
        assert_eq!(odd.bits(), &[1, 0, 1]);
        assert_eq!(odd.to_hex(), "a:3");
        assert!(Watermark::from_hex("b:3", 1).is_err());
        assert!(Watermark::from_hex("c5", 1).is_err());
        assert!(Watermark::from_hex("c5:4", 1).is_err());
        assert!(Watermark::from_hex("zz:8", 1).is_err());
    }
}
