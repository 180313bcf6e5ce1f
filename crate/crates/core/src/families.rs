//! Primitive pseudorandom families: k-wise independent vectors, small-bias
//! bit strings, their combination as hash functions, and pairwise
//! independent permutations.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::bits::{BitString, SeedReader};
use crate::error::{check_seed, refused, usage, Result};
use crate::field::{ceil_log2, next_prime, Field};

/// Extra coefficient bits drawn per element of a prime field, so that the
/// reduction of a uniform integer mod p is within 2^-16 of uniform.
pub const PRIME_SLACK_BITS: u32 = 16;

/// Polynomials of degree < k over a field, evaluated at the first n elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KWiseFamily {
    pub n: usize,
    pub field: Field,
    pub k: usize,
    pub coeff_bits: u32,
}

impl KWiseFamily {
    pub fn new(n: usize, field: Field, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(usage("independence order k must be at least 1"));
        }
        if n as u128 > field.order() {
            return Err(usage(format!(
                "{field} has only {} evaluation points, {n} requested",
                field.order()
            )));
        }
        let coeff_bits = match field {
            Field::Binary { degree } => degree,
            Field::Prime { .. } => field.element_bits() + PRIME_SLACK_BITS,
        };
        Ok(KWiseFamily { n, field, k, coeff_bits })
    }

    pub fn seed_bits(&self) -> usize {
        self.k * self.coeff_bits as usize
    }

    pub fn coefficients(&self, seed: &BitString) -> Result<Vec<u128>> {
        check_seed(self.seed_bits(), seed.len())?;
        Ok(self.read_coefficients(&mut SeedReader::new(seed)))
    }

    pub(crate) fn read_coefficients(&self, r: &mut SeedReader<'_>) -> Vec<u128> {
        (0..self.k)
            .map(|_| {
                let raw = r.take_u128(self.coeff_bits as usize);
                match self.field {
                    Field::Binary { .. } => raw,
                    Field::Prime { modulus } => raw % modulus as u128,
                }
            })
            .collect()
    }

    /// Coefficients packed big-endian into the low `seed_bits()` bits of `v`.
    pub fn coefficients_from_value(&self, v: u128) -> SmallVec<[u128; 8]> {
        let cb = self.coeff_bits as usize;
        let mask = if cb == 128 { u128::MAX } else { (1u128 << cb) - 1 };
        (0..self.k)
            .map(|j| {
                let raw = (v >> ((self.k - 1 - j) * cb)) & mask;
                match self.field {
                    Field::Binary { .. } => raw,
                    Field::Prime { modulus } => raw % modulus as u128,
                }
            })
            .collect()
    }

    /// Value at coordinate `i`, whose evaluation point is the field element `i`.
    #[inline]
    pub fn eval(&self, coeffs: &[u128], i: usize) -> u128 {
        self.field.eval_poly(coeffs, i as u128)
    }

    pub fn sample(&self, seed: &BitString) -> Result<Vec<u128>> {
        let c = self.coefficients(seed)?;
        Ok((0..self.n).map(|i| self.eval(&c, i)).collect())
    }
}

pub fn kwise_sample(fam: &KWiseFamily, seed: &BitString) -> Result<Vec<u128>> {
    fam.sample(seed)
}

/// k-wise independent vectors over an arbitrary alphabet [m].
///
/// For m a power of two the field is GF(2^t) with 2^t >= max(n, m) and the
/// low bits of each value are taken, which is exact. Otherwise values come
/// from the smallest prime q >= max(n, m * ceil(4n / delta_map)) reduced
/// mod m, so each string is within nm/q of its ideal distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KWiseSymbols {
    pub m: u128,
    pub family: KWiseFamily,
}

impl KWiseSymbols {
    pub fn new(n: usize, m: u128, k: usize, delta_map: f64) -> Result<Self> {
        if m == 0 {
            return Err(usage("alphabet must be nonempty"));
        }
        let field = if m.is_power_of_two() {
            let deg = ceil_log2(n as u128).max(m.trailing_zeros()).max(1);
            Field::binary(deg)?
        } else {
            if !(delta_map > 0.0 && delta_map < 1.0) {
                return Err(usage(format!("mapping budget {delta_map} must lie in (0, 1)")));
            }
            let blow = (4.0 * n as f64 / delta_map).ceil();
            let target = (m as f64 * blow).max(n as f64);
            if target >= 2f64.powi(62) {
                return Err(refused(format!(
                    "alphabet {m} at dimension {n} needs a prime near {target:.3e}, beyond 2^62"
                )));
            }
            let q = next_prime(target as u64)
                .ok_or_else(|| refused("no prime available for the symbol map"))?;
            Field::prime(q)?
        };
        Ok(KWiseSymbols { m, family: KWiseFamily::new(n, field, k)? })
    }

    pub fn exact(&self) -> bool {
        self.m.is_power_of_two()
    }

    pub fn n(&self) -> usize {
        self.family.n
    }

    pub fn seed_bits(&self) -> usize {
        self.family.seed_bits()
    }

    #[inline]
    pub fn map(&self, v: u128) -> u128 {
        v % self.m
    }

    #[inline]
    pub fn eval(&self, coeffs: &[u128], i: usize) -> u128 {
        self.map(self.family.eval(coeffs, i))
    }

    pub fn sample(&self, seed: &BitString) -> Result<Vec<u128>> {
        let c = self.family.coefficients(seed)?;
        Ok((0..self.n()).map(|i| self.eval(&c, i)).collect())
    }
}

/// Powering construction: with (x, y) uniform in GF(2^t), bit i is the
/// constant coefficient of x^i * y. Bias is at most (n - 1) / 2^t.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallBiasFamily {
    pub n: usize,
    pub delta: f64,
    pub degree: u32,
}

impl SmallBiasFamily {
    pub fn new(n: usize, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(usage(format!("bias {delta} must lie in (0, 1)")));
        }
        let degree = (n.max(1) as f64 / delta).log2().ceil() as u32 + 1;
        if degree > crate::field::MAX_BINARY_DEGREE {
            return Err(refused(format!(
                "bias {delta} over {n} bits needs GF(2^{degree})"
            )));
        }
        Ok(SmallBiasFamily { n, delta, degree })
    }

    pub fn seed_bits(&self) -> usize {
        2 * self.degree as usize
    }

    pub fn sample(&self, seed: &BitString) -> Result<BitString> {
        check_seed(self.seed_bits(), seed.len())?;
        Ok(self.read_sample(&mut SeedReader::new(seed)))
    }

    pub(crate) fn read_sample(&self, r: &mut SeedReader<'_>) -> BitString {
        let f = Field::Binary { degree: self.degree };
        let x = r.take_u128(self.degree as usize);
        let mut cur = r.take_u128(self.degree as usize);
        let mut out = BitString::zeros(self.n);
        for i in 0..self.n {
            out.set(i, cur & 1 == 1);
            cur = f.mul(cur, x);
        }
        out
    }
}

pub fn small_bias_sample(fam: &SmallBiasFamily, seed: &BitString) -> Result<BitString> {
    fam.sample(seed)
}

/// Hash functions [n] -> [t] formed as the pointwise sum mod t of a k-wise
/// independent function and a small-bias function. Either part may be
/// absent: `k = 0` drops the k-wise part, `delta = 0` drops the biased part.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedHashFamily {
    pub n: usize,
    pub range: usize,
    pub k: usize,
    pub delta: f64,
    pub kwise: Option<KWiseSymbols>,
    pub biased: Option<SmallBiasFamily>,
    /// Bits of the biased string consumed per coordinate.
    pub chunk_bits: u32,
}

impl CombinedHashFamily {
    pub fn new(n: usize, range: usize, k: usize, delta: f64, delta_map: f64) -> Result<Self> {
        if range == 0 {
            return Err(usage("hash range must be nonempty"));
        }
        // a single bucket needs no randomness
        let kwise = if k > 0 && range > 1 {
            Some(KWiseSymbols::new(n, range as u128, k, delta_map)?)
        } else {
            None
        };
        let chunk_bits = ceil_log2(range as u128);
        let biased = if delta > 0.0 && chunk_bits > 0 {
            Some(SmallBiasFamily::new(n * chunk_bits as usize, delta)?)
        } else {
            None
        };
        Ok(CombinedHashFamily { n, range, k, delta, kwise, biased, chunk_bits })
    }

    pub fn seed_bits(&self) -> usize {
        self.kwise.map_or(0, |f| f.seed_bits()) + self.biased.map_or(0, |f| f.seed_bits())
    }

    pub fn sample(&self, seed: &BitString) -> Result<Vec<usize>> {
        check_seed(self.seed_bits(), seed.len())?;
        Ok(self.read_sample(&mut SeedReader::new(seed)))
    }

    pub(crate) fn read_sample(&self, r: &mut SeedReader<'_>) -> Vec<usize> {
        let mut table = vec![0usize; self.n];
        if let Some(kw) = &self.kwise {
            let c = kw.family.read_coefficients(r);
            for (i, slot) in table.iter_mut().enumerate() {
                *slot = kw.eval(&c, i) as usize;
            }
        }
        if let Some(sb) = &self.biased {
            let bits = sb.read_sample(r);
            let w = self.chunk_bits as usize;
            for (i, slot) in table.iter_mut().enumerate() {
                let extra = bits.read(i * w, w) as usize % self.range;
                *slot = (*slot + extra) % self.range;
            }
        }
        table
    }
}

pub fn hash_sample(fam: &CombinedHashFamily, seed: &BitString) -> Result<Vec<usize>> {
    fam.sample(seed)
}

/// The map x -> a*x + b on GF(2^t), a != 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwisePermutation {
    pub t: u32,
    pub a: u128,
    pub b: u128,
}

impl PairwisePermutation {
    pub fn new(t: u32, a: u128, b: u128) -> Result<Self> {
        let f = Field::binary(t)?;
        if a == 0 || !f.contains(a) || !f.contains(b) {
            return Err(usage(format!("({a}, {b}) is not an affine bijection of GF(2^{t})")));
        }
        Ok(PairwisePermutation { t, a, b })
    }

    pub fn identity(t: u32) -> Result<Self> {
        Self::new(t, 1, 0)
    }

    pub fn seed_bits(t: u32) -> usize {
        2 * t as usize
    }

    #[inline]
    pub fn apply(&self, x: u128) -> u128 {
        Field::Binary { degree: self.t }.mul(self.a, x) ^ self.b
    }

    pub fn inverse(&self) -> PairwisePermutation {
        let f = Field::Binary { degree: self.t };
        let a = f.inv(self.a).expect("a is nonzero");
        PairwisePermutation { t: self.t, a, b: f.mul(a, self.b) }
    }

    /// Every member of the family, for exhaustive checks.
    pub fn members(t: u32) -> impl Iterator<Item = PairwisePermutation> {
        let size = 1u128 << t;
        (1..size).flat_map(move |a| (0..size).map(move |b| PairwisePermutation { t, a, b }))
    }
}

/// Decodes a 2t-bit seed as (a', b) and sets a = 1 + (a' mod (2^t - 1)).
pub fn perm_sample(t: u32, seed: &BitString) -> Result<PairwisePermutation> {
    check_seed(PairwisePermutation::seed_bits(t), seed.len())?;
    Ok(read_perm(t, &mut SeedReader::new(seed)))
}

pub(crate) fn read_perm(t: u32, r: &mut SeedReader<'_>) -> PairwisePermutation {
    let raw = r.take_u128(t as usize);
    let b = r.take_u128(t as usize);
    let nonzero = if t == 128 { u128::MAX } else { (1u128 << t) - 1 };
    PairwisePermutation { t, a: 1 + raw % nonzero, b }
}

/// Sum over buckets of the squared bucket mass: sum_j (sum_{h(i)=j} v_i^2)^2.
pub fn hash_load(v: &[f64], h: &[usize]) -> Result<f64> {
    if v.len() != h.len() {
        return Err(usage(format!("vector has {} entries, hash table {}", v.len(), h.len())));
    }
    let buckets = h.iter().copied().max().map_or(0, |x| x + 1);
    let mut mass = vec![0.0; buckets];
    for (&vi, &j) in v.iter().zip(h) {
        mass[j] += vi * vi;
    }
    Ok(mass.iter().map(|s| s * s).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn all_seeds(bits: usize) -> impl Iterator<Item = BitString> {
        (0..1u128 << bits).map(move |i| BitString::from_index(i, bits))
    }

    #[test]
    fn constant_and_zero_seeds() {
        let fam = KWiseFamily::new(8, Field::binary(3).unwrap(), 1).unwrap();
        let out = fam.sample(&BitString::from_index(5, 3)).unwrap();
        assert!(out.iter().all(|&v| v == 5));
        let fam = KWiseFamily::new(8, Field::binary(3).unwrap(), 3).unwrap();
        assert!(fam.sample(&BitString::zeros(9)).unwrap().iter().all(|&v| v == 0));
    }

    #[test]
    fn too_many_points_rejected() {
        assert!(KWiseFamily::new(9, Field::binary(3).unwrap(), 2).is_err());
        assert!(KWiseFamily::new(8, Field::binary(3).unwrap(), 0).is_err());
    }

    #[test]
    fn pair_marginals_exact_q8() {
        let fam = KWiseFamily::new(8, Field::binary(3).unwrap(), 2).unwrap();
        let samples: Vec<_> = all_seeds(fam.seed_bits()).map(|s| fam.sample(&s).unwrap()).collect();
        for i in 0..8 {
            for j in 0..8 {
                if i == j {
                    continue;
                }
                let mut counts = HashMap::new();
                for s in &samples {
                    *counts.entry((s[i], s[j])).or_insert(0) += 1;
                }
                assert_eq!(counts.len(), 64);
                assert!(counts.values().all(|&c| c == 1));
            }
        }
    }

    #[test]
    fn prime_field_symbols_near_uniform() {
        let fam = KWiseSymbols::new(4, 3, 2, 0.5).unwrap();
        assert!(!fam.exact());
        assert!(matches!(fam.family.field, Field::Prime { .. }));
        let fam2 = KWiseSymbols::new(16, 8, 2, 0.1).unwrap();
        assert_eq!(fam2.family.field, Field::binary(4).unwrap());
    }

    fn max_parity_bias(fam: &SmallBiasFamily) -> f64 {
        let n = fam.n;
        let mut hist = vec![0f64; 1 << n];
        for s in all_seeds(fam.seed_bits()) {
            let out = fam.sample(&s).unwrap();
            hist[out.read(0, n) as usize] += 1.0;
        }
        walsh_hadamard(&mut hist);
        let total = (1u64 << fam.seed_bits()) as f64;
        hist[1..].iter().map(|c| (c / total).abs()).fold(0.0, f64::max)
    }

    fn walsh_hadamard(a: &mut [f64]) {
        let mut h = 1;
        while h < a.len() {
            for i in (0..a.len()).step_by(2 * h) {
                for j in i..i + h {
                    let (x, y) = (a[j], a[j + h]);
                    a[j] = x + y;
                    a[j + h] = x - y;
                }
            }
            h *= 2;
        }
    }

    #[test]
    fn single_bit_unbiased() {
        let fam = SmallBiasFamily::new(1, 0.25).unwrap();
        assert_eq!(max_parity_bias(&fam), 0.0);
    }

    #[test]
    fn bias_bound_n16() {
        let fam = SmallBiasFamily::new(16, 0.125).unwrap();
        assert_eq!(fam.seed_bits(), 16);
        assert!(max_parity_bias(&fam) <= 0.125 + 1e-12);
        let s = BitString::from_index(0xbeef, 16);
        assert_eq!(fam.sample(&s).unwrap(), fam.sample(&s).unwrap());
    }

    #[test]
    fn hash_single_marginals_k1() {
        let fam = CombinedHashFamily::new(4, 4, 1, 0.0, 0.1).unwrap();
        let mut counts = vec![[0usize; 4]; 4];
        for s in all_seeds(fam.seed_bits()) {
            for (i, &v) in fam.sample(&s).unwrap().iter().enumerate() {
                counts[i][v] += 1;
            }
        }
        for row in counts {
            assert!(row.iter().all(|&c| c == row[0]));
        }
    }

    #[test]
    fn hash_range_one_is_constant() {
        let fam = CombinedHashFamily::new(5, 1, 2, 0.1, 0.1).unwrap();
        for s in all_seeds(fam.seed_bits()).take(50) {
            assert!(fam.sample(&s).unwrap().iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn hash_pair_marginals_exact() {
        let fam = CombinedHashFamily::new(8, 4, 2, 0.0, 0.1).unwrap();
        let tables: Vec<_> = all_seeds(fam.seed_bits()).map(|s| fam.sample(&s).unwrap()).collect();
        let total = tables.len() as f64;
        for i in 0..8 {
            for j in (i + 1)..8 {
                let mut c = [[0f64; 4]; 4];
                for t in &tables {
                    c[t[i]][t[j]] += 1.0;
                }
                for row in c {
                    for x in row {
                        assert_eq!(x / total, 1.0 / 16.0);
                    }
                }
            }
        }
    }

    #[test]
    fn biased_hash_pairs_close() {
        let delta = 0.25;
        let fam = CombinedHashFamily::new(4, 4, 0, delta, 0.1).unwrap();
        let tables: Vec<_> = all_seeds(fam.seed_bits()).map(|s| fam.sample(&s).unwrap()).collect();
        let total = tables.len() as f64;
        let mut c = [[0f64; 4]; 4];
        for t in &tables {
            c[t[0]][t[3]] += 1.0;
        }
        for row in c {
            for x in row {
                assert!((x / total - 1.0 / 16.0).abs() <= delta);
            }
        }
    }

    #[test]
    fn permutation_identity_and_bijective() {
        let id = PairwisePermutation::identity(5).unwrap();
        assert!((0..32).all(|x| id.apply(x) == x));
        for t in 1..=12u32 {
            for a in [1u128, 3, (1 << t) - 1] {
                let p = PairwisePermutation::new(t, a & ((1 << t) - 1), 1 % (1 << t)).unwrap();
                let mut img: Vec<_> = (0..1u128 << t).map(|x| p.apply(x)).collect();
                img.sort();
                assert!(img.iter().enumerate().all(|(i, &v)| v == i as u128));
            }
        }
    }

    #[test]
    fn permutation_pairs_uniform_over_members() {
        for t in 1..=6u32 {
            let size = 1u128 << t;
            let mut counts = HashMap::new();
            for p in PairwisePermutation::members(t) {
                *counts.entry((p.apply(2 % size), p.apply(size - 1))).or_insert(0) += 1;
            }
            if t == 1 {
                continue;
            }
            assert_eq!(counts.len() as u128, size * (size - 1));
            let first = *counts.values().next().unwrap();
            assert!(counts.values().all(|&c| c == first));
        }
    }

    #[test]
    fn sampled_perm_t4_first_pair() {
        let mut counts = HashMap::new();
        for s in all_seeds(8) {
            let p = perm_sample(4, &s).unwrap();
            *counts.entry((p.apply(0), p.apply(1))).or_insert(0usize) += 1;
        }
        // every ordered distinct pair occurs; the a-decoding folds 2 of 16
        // values together, so counts differ by at most that factor
        assert_eq!(counts.len(), 240);
        let a = PairwisePermutation::new(4, 1, 0).unwrap();
        assert_eq!(a.apply(7), 7);
    }

    #[test]
    fn hash_load_cases() {
        assert_eq!(hash_load(&[0.0; 4], &[0, 1, 2, 3]).unwrap(), 0.0);
        let v = [0.5, 0.25, 1.0];
        let n2: f64 = v.iter().map(|x| x * x).sum();
        assert!((hash_load(&v, &[0, 0, 0]).unwrap() - n2 * n2).abs() < 1e-15);
        let v = [0.3, 0.9, 0.1, 0.7, 0.2, 0.6];
        let h = [2, 0, 2, 1, 0, 2];
        let mut direct = 0.0;
        for j in 0..3 {
            let s: f64 = (0..6).filter(|&i| h[i] == j).map(|i| v[i] * v[i]).sum();
            direct += s * s;
        }
        assert!((hash_load(&v, &h).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn hash_moment_bound() {
        // exact E[h(v)^2] over a 4-wise family, n = 12, t = 4
        let (n, t, p) = (12usize, 4usize, 2i32);
        let fam = CombinedHashFamily::new(n, t, 4, 0.0, 0.1).unwrap();
        let tables: Vec<_> = all_seeds(fam.seed_bits()).map(|s| fam.sample(&s).unwrap()).collect();
        let vs: [Vec<f64>; 3] = [
            vec![1.0; n],
            (0..n).map(|i| 1.0 / (i + 1) as f64).collect(),
            (0..n).map(|i| if i < 3 { 1.0 } else { 0.1 }).collect(),
        ];
        for v in &vs {
            let l2sq: f64 = v.iter().map(|x| x * x).sum();
            let l4: f64 = v.iter().map(|x| x.powi(4)).sum();
            let mean = tables.iter().map(|h| hash_load(v, h).unwrap().powi(p)).sum::<f64>()
                / tables.len() as f64;
            let bound = 64.0 * ((l2sq * l2sq / t as f64).powi(p) + l4.powi(p));
            assert!(mean <= bound, "moment {mean} > {bound}");
        }
    }

    #[test]
    fn load_balancing_tail() {
        let (n, t) = (12usize, 4usize);
        for p in [2usize, 4] {
            let fam = CombinedHashFamily::new(n, t, p, 0.0, 0.1).unwrap();
            let tables: Vec<_> =
                all_seeds(fam.seed_bits()).map(|s| fam.sample(&s).unwrap()).collect();
            let v: Vec<f64> = (0..n).map(|i| ((i * 7) % 5) as f64 / 4.0).collect();
            let l1: f64 = v.iter().sum();
            let l2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let cp = 4.0 * (p as f64).sqrt();
            for t0 in [0.5, 1.0, 2.0] {
                for j in 0..t {
                    let hits = tables
                        .iter()
                        .filter(|h| {
                            let s: f64 = (0..n).filter(|&i| h[i] == j).map(|i| v[i]).sum();
                            (s - l1 / t as f64).abs() >= t0
                        })
                        .count();
                    let prob = hits as f64 / tables.len() as f64;
                    assert!(prob <= (cp * l2 / t0).powi(p as i32));
                }
            }
        }
    }
}
