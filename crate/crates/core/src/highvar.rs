//! Generators for shapes of large total variance: the constant-error
//! generator G1 and its amplification G_large.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::bits::{BitString, SeedReader};
use crate::config::Knobs;
use crate::error::{check_seed, usage, Result};
use crate::families::{read_perm, CombinedHashFamily, KWiseSymbols, PairwisePermutation};
use crate::prg::Prg;
use crate::robp::InwGenerator;

/// Buckets B_0..B_T of a padded index set of size n = 2^(T+1):
/// B_j = { pi(i) : 2^j <= i < 2^(j+1) }. Index pi(0) is left out here.
pub fn bucket_split(pi: &PairwisePermutation, n: usize) -> Result<Vec<Vec<usize>>> {
    if !n.is_power_of_two() || n < 2 || n as u128 != 1u128 << pi.t {
        return Err(usage(format!("bucket split needs n = 2^{} >= 2, got {n}", pi.t)));
    }
    Ok((0..n.trailing_zeros())
        .map(|j| ((1usize << j)..(2usize << j)).map(|i| pi.apply(i as u128) as usize).collect())
        .collect())
}

/// Constant-error generator: a pairwise permutation cuts the padded index
/// set into dyadic buckets, and bucket j receives a p-wise independent
/// string seeded by block j of a recycling generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct G1Plan {
    pub m: u128,
    pub n: usize,
    pub padded: usize,
    pub p: usize,
    pub perm_degree: u32,
    pub bucket_family: KWiseSymbols,
    pub recycle_delta: f64,
    pub recycler: InwGenerator,
}

impl G1Plan {
    pub fn new(m: u128, n: usize, p: usize, recycle_delta: f64, delta_map: f64) -> Result<Self> {
        if m < 2 || n < 1 {
            return Err(usage("G1 needs m >= 2 and n >= 1"));
        }
        let padded = n.next_power_of_two().max(2);
        let perm_degree = padded.trailing_zeros();
        // bucket 0 also receives pi(0), so it has two slots
        let bucket_family = KWiseSymbols::new((padded / 2).max(2), m, p, delta_map)?;
        let recycler =
            InwGenerator::new(bucket_family.seed_bits(), perm_degree as usize, recycle_delta)?;
        Ok(G1Plan { m, n, padded, p, perm_degree, bucket_family, recycle_delta, recycler })
    }

    pub fn from_knobs(m: u128, n: usize, knobs: &Knobs, delta_map: f64) -> Result<Self> {
        Self::new(m, n, knobs.p, knobs.g1_recycle_delta, delta_map)
    }

    pub fn buckets(&self) -> usize {
        self.perm_degree as usize
    }

    fn read_parts(&self, r: &mut SeedReader<'_>) -> (PairwisePermutation, Vec<SmallVec<[u128; 8]>>) {
        let pi = read_perm(self.perm_degree, r);
        let fam = &self.bucket_family;
        let coeffs = if fam.seed_bits() <= 128 {
            match self.recycler.read_expand_values(r) {
                Some(vals) => vals.into_iter().map(|v| fam.family.coefficients_from_value(v)).collect(),
                None => self.wide_coefficients(r),
            }
        } else {
            self.wide_coefficients(r)
        };
        (pi, coeffs)
    }

    pub(crate) fn read_generate(&self, r: &mut SeedReader<'_>) -> Vec<u128> {
        let (pi, coeffs) = self.read_parts(r);
        let fam = &self.bucket_family;
        let mut out = vec![0u128; self.n];
        for (j, c) in coeffs.iter().enumerate() {
            let lo = 1usize << j;
            let mut put = |slot: usize, i: usize| {
                let pos = pi.apply(i as u128) as usize;
                if pos < self.n {
                    out[pos] = fam.eval(c, slot);
                }
            };
            for i in lo..2 * lo {
                put(i - lo, i);
            }
            if j == 0 {
                put(1, 0);
            }
        }
        out
    }

    /// The coordinates at `positions` only.
    pub(crate) fn read_generate_at(&self, r: &mut SeedReader<'_>, positions: &[usize]) -> Vec<u128> {
        let (pi, coeffs) = self.read_parts(r);
        let inv = pi.inverse();
        positions
            .iter()
            .map(|&pos| {
                let i = inv.apply(pos as u128) as usize;
                let (j, slot) = if i == 0 { (0, 1) } else { (i.ilog2() as usize, i - (1 << i.ilog2())) };
                self.bucket_family.eval(&coeffs[j], slot)
            })
            .collect()
    }

    fn wide_coefficients(&self, r: &mut SeedReader<'_>) -> Vec<SmallVec<[u128; 8]>> {
        self.recycler
            .read_expand(r)
            .iter()
            .map(|b| SmallVec::from_vec(self.bucket_family.family.coefficients(b).expect("block width")))
            .collect()
    }
}

impl Prg for G1Plan {
    fn alphabet(&self) -> u128 {
        self.m
    }
    fn dimension(&self) -> usize {
        self.n
    }
    fn seed_bits(&self) -> usize {
        PairwisePermutation::seed_bits(self.perm_degree) + self.recycler.seed_bits()
    }
    fn generate(&self, seed: &BitString) -> Result<Vec<u128>> {
        check_seed(self.seed_bits(), seed.len())?;
        Ok(self.read_generate(&mut SeedReader::new(seed)))
    }
}

pub fn g1_generate(plan: &G1Plan, seed: &BitString) -> Result<Vec<u128>> {
    plan.generate(seed)
}

/// Hash [n] -> [T] under which any vector of squared norm at least
/// `threshold` puts mass at least threshold / (2T) into at least `spread`
/// buckets, except with probability about `delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpreadingFamily {
    pub n: usize,
    pub buckets: usize,
    pub threshold: f64,
    pub spread: usize,
    pub delta: f64,
    pub hash: CombinedHashFamily,
}

impl SpreadingFamily {
    /// T = max(16, ceil(c_T ln^5(1/delta))) rounded up to a power of two,
    /// B = tau_hv or 2T, spread = ceil(2 ln(1/delta)).
    pub fn new(n: usize, delta: f64, knobs: &Knobs, delta_map: f64) -> Result<Self> {
        let l = (1.0 / delta).ln();
        let raw = (knobs.c_t * l.powi(5)).ceil().max(16.0);
        if raw > (1u64 << 40) as f64 {
            return Err(crate::error::refused(format!("{raw:.3e} spreading buckets requested")));
        }
        Self::with_buckets(n, (raw as usize).next_power_of_two(), delta, knobs, delta_map)
    }

    pub fn with_buckets(
        n: usize,
        buckets: usize,
        delta: f64,
        knobs: &Knobs,
        delta_map: f64,
    ) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(usage(format!("failure probability {delta} must lie in (0, 1)")));
        }
        let threshold = knobs.tau_hv.unwrap_or(2.0 * buckets as f64);
        let spread = (2.0 * (1.0 / delta).ln()).ceil() as usize;
        let hash = CombinedHashFamily::new(n, buckets, knobs.spread_k, delta, delta_map)?;
        Ok(SpreadingFamily { n, buckets, threshold, spread, delta, hash })
    }

    pub fn seed_bits(&self) -> usize {
        self.hash.seed_bits()
    }

    /// Number of buckets whose squared mass reaches threshold / (2T).
    pub fn heavy_buckets(&self, v: &[f64], h: &[usize]) -> usize {
        let mut mass = vec![0.0; self.buckets];
        for (&x, &j) in v.iter().zip(h) {
            mass[j] += x * x;
        }
        let cut = self.threshold / (2.0 * self.buckets as f64);
        mass.iter().filter(|&&s| s >= cut).count()
    }
}

/// Spreading hash plus independent-looking G1 outputs per bucket, with the
/// bucket seeds recycled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GLargePlan {
    pub m: u128,
    pub n: usize,
    pub delta: f64,
    pub spreading: SpreadingFamily,
    pub g1: G1Plan,
    pub recycler: InwGenerator,
}

impl GLargePlan {
    pub fn new(m: u128, n: usize, delta: f64, knobs: &Knobs, delta_map: f64) -> Result<Self> {
        let spreading = SpreadingFamily::new(n, delta, knobs, delta_map)?;
        Self::assemble(m, n, delta, spreading, knobs, delta_map)
    }

    pub fn with_buckets(
        m: u128,
        n: usize,
        delta: f64,
        buckets: usize,
        knobs: &Knobs,
        delta_map: f64,
    ) -> Result<Self> {
        let spreading = SpreadingFamily::with_buckets(n, buckets, delta, knobs, delta_map)?;
        Self::assemble(m, n, delta, spreading, knobs, delta_map)
    }

    fn assemble(
        m: u128,
        n: usize,
        delta: f64,
        spreading: SpreadingFamily,
        knobs: &Knobs,
        delta_map: f64,
    ) -> Result<Self> {
        let g1 = G1Plan::from_knobs(m, n, knobs, delta_map)?;
        let recycler = InwGenerator::new(g1.seed_bits(), spreading.buckets, delta / 4.0)?;
        Ok(GLargePlan { m, n, delta, spreading, g1, recycler })
    }

    pub(crate) fn read_generate(&self, r: &mut SeedReader<'_>) -> Vec<u128> {
        let h = self.spreading.hash.read_sample(r);
        let blocks = self.recycler.read_expand(r);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); blocks.len()];
        for (i, &j) in h.iter().enumerate() {
            members[j].push(i);
        }
        let mut out = vec![0u128; self.n];
        for (block, pos) in blocks.iter().zip(&members) {
            if pos.is_empty() {
                continue;
            }
            let vals = self.g1.read_generate_at(&mut SeedReader::new(block), pos);
            for (&i, v) in pos.iter().zip(vals) {
                out[i] = v;
            }
        }
        out
    }
}

impl Prg for GLargePlan {
    fn alphabet(&self) -> u128 {
        self.m
    }
    fn dimension(&self) -> usize {
        self.n
    }
    fn seed_bits(&self) -> usize {
        self.spreading.seed_bits() + self.recycler.seed_bits()
    }
    fn generate(&self, seed: &BitString) -> Result<Vec<u128>> {
        check_seed(self.seed_bits(), seed.len())?;
        Ok(self.read_generate(&mut SeedReader::new(seed)))
    }
}

pub fn glarge_generate(plan: &GLargePlan, seed: &BitString) -> Result<Vec<u128>> {
    plan.generate(seed)
}

/// Dyadic level t with n / 2^(t+1) <= ||v||^2 <= n / 2^t, for ||v||^2 in [1, n].
pub fn sampling_level(norm_sq: f64, n: usize) -> Option<u32> {
    if !(1.0..=n as f64).contains(&norm_sq) {
        return None;
    }
    let t = (n as f64 / norm_sq).log2().floor() as u32;
    Some(t.min(n.trailing_zeros() - 1))
}

/// Exact probability over all affine permutations of GF(n) that bucket
/// B_t captures squared mass in [1/6, 4/3], t the level of v.
pub fn subsampling_success(v: &[f64]) -> Result<f64> {
    let n = v.len();
    if !n.is_power_of_two() || n < 2 {
        return Err(usage("vector length must be a power of two >= 2"));
    }
    let norm_sq: f64 = v.iter().map(|x| x * x).sum();
    let t = sampling_level(norm_sq, n)
        .ok_or_else(|| usage(format!("squared norm {norm_sq} outside [1, {n}]")))?;
    let deg = n.trailing_zeros();
    let (mut hits, mut total) = (0u64, 0u64);
    for pi in PairwisePermutation::members(deg) {
        let mass: f64 = ((1usize << t)..(2usize << t))
            .map(|i| v[pi.apply(i as u128) as usize].powi(2))
            .sum();
        if (1.0 / 6.0..=4.0 / 3.0).contains(&mass) {
            hits += 1;
        }
        total += 1;
    }
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prg::{EvalMode, OutputDistribution};
    use crate::shapes::{empirical_expectation, FourierShape};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_buckets() {
        let id = PairwisePermutation::identity(3).unwrap();
        let b = bucket_split(&id, 8).unwrap();
        assert_eq!(b, vec![vec![1], vec![2, 3], vec![4, 5, 6, 7]]);
    }

    #[test]
    fn buckets_partition_nonzero_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let s = BitString::random(&mut rng, 8);
            let pi = crate::families::perm_sample(4, &s).unwrap();
            let b = bucket_split(&pi, 16).unwrap();
            assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [1, 2, 4, 8]);
            let mut all: Vec<usize> = b.concat();
            all.push(pi.apply(0) as usize);
            all.sort();
            assert_eq!(all, (0..16).collect::<Vec<_>>());
        }
    }

    #[test]
    fn reduced_plan_seed_length() {
        let plan = G1Plan::new(2, 8, 2, 0.25, 0.01).unwrap();
        assert_eq!(plan.seed_bits(), 26);
    }

    #[test]
    fn single_bucket_is_pwise_string() {
        let plan = G1Plan::new(4, 2, 2, 0.1, 0.01).unwrap();
        assert_eq!(plan.buckets(), 1);
        let mut counts = std::collections::HashMap::new();
        for s in 0..1u128 << plan.seed_bits() {
            let y = plan.generate(&BitString::from_index(s, plan.seed_bits())).unwrap();
            *counts.entry((y[0], y[1])).or_insert(0u32) += 1;
        }
        assert_eq!(counts.len(), 16);
        let first = *counts.values().next().unwrap();
        assert!(counts.values().all(|&c| c == first));
    }

    #[test]
    fn deterministic() {
        let plan = G1Plan::new(3, 11, 8, 0.05, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = BitString::random(&mut rng, plan.seed_bits());
        let y = plan.generate(&s).unwrap();
        assert_eq!(y, plan.generate(&s).unwrap());
        assert_eq!(y.len(), 11);
        assert!(y.iter().all(|&v| v < 3));
    }

    #[test]
    fn point_evaluation_matches_full_output() {
        let plan = G1Plan::new(5, 27, 8, 0.05, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let positions: Vec<usize> = (0..27).rev().collect();
        for _ in 0..50 {
            let s = BitString::random(&mut rng, plan.seed_bits());
            let full = plan.generate(&s).unwrap();
            let at = plan.read_generate_at(&mut SeedReader::new(&s), &positions);
            let expect: Vec<u128> = positions.iter().map(|&p| full[p]).collect();
            assert_eq!(at, expect);
        }
    }

    fn unit_variance_shape(rng: &mut ChaCha8Rng, n: usize) -> FourierShape {
        let rows = (0..n)
            .map(|_| {
                let z = Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU);
                vec![z, -z]
            })
            .collect();
        FourierShape::from_rows(2, rows).unwrap()
    }

    #[test]
    fn g1_marginals_uniform_and_constant_error() {
        let plan = G1Plan::new(2, 4, 2, 0.25, 0.01).unwrap();
        assert_eq!(plan.seed_bits(), 10);
        let dist = OutputDistribution::collect(&plan, EvalMode::enumerate()).unwrap();
        let mut ones = [0f64; 4];
        for (x, p) in dist.probabilities() {
            for i in 0..4 {
                ones[i] += p * x[i] as f64;
            }
        }
        assert!(ones.iter().all(|&p| p == 0.5), "{ones:?}");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let f = unit_variance_shape(&mut rng, 4);
            assert!(f.tvar() >= 1.0);
            let e = dist.expectation(|x| f.eval(x)).unwrap().mean.norm();
            assert!(e <= 0.9, "{e}");
        }
    }

    #[test]
    fn g1_constant_error_sampled() {
        let plan = G1Plan::new(2, 8, 2, 0.25, 0.01).unwrap();
        let mode = EvalMode::Sample { samples: 1 << 16, rng_seed: 5 };
        let dist = OutputDistribution::collect(&plan, mode).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let f = unit_variance_shape(&mut rng, 8);
            let e = dist.expectation(|x| f.eval(x)).unwrap();
            assert!(e.mean.norm() <= 0.9 + 4.0 * e.std_err, "{e:?}");
        }
    }

    #[test]
    fn spreading_constants() {
        let k = Knobs::default();
        let s = SpreadingFamily::new(64, 0.1, &k, 0.01).unwrap();
        assert_eq!(s.buckets, 16);
        assert_eq!(s.threshold, 32.0);
        assert_eq!(s.spread, 5);
        let tau = Knobs { tau_hv: Some(4.0), ..Knobs::default() };
        assert_eq!(SpreadingFamily::new(64, 0.1, &tau, 0.01).unwrap().threshold, 4.0);
    }

    #[test]
    fn spreading_spot_check() {
        let k = Knobs::default();
        let fam = SpreadingFamily::new(256, 0.1, &k, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vs: Vec<Vec<f64>> = vec![
            vec![1.0; 64],
            (0..256).map(|_| rng.random::<f64>()).collect(),
            (0..256).map(|i| if i % 4 == 0 { 1.0 } else { 0.2 }).collect(),
        ];
        for v in vs {
            assert!(v.iter().map(|x| x * x).sum::<f64>() >= fam.threshold);
            let mut v = v;
            v.resize(256, 0.0);
            let trials = 2000;
            let fails = (0..trials)
                .filter(|_| {
                    let s = BitString::random(&mut rng, fam.seed_bits());
                    fam.heavy_buckets(&v, &fam.hash.sample(&s).unwrap()) < fam.spread
                })
                .count();
            assert!(fails as f64 / trials as f64 <= 2.0 * fam.delta);
        }
    }

    #[test]
    fn glarge_single_bucket_is_g1() {
        let k = Knobs::default();
        let plan = GLargePlan::with_buckets(2, 10, 0.1, 1, &k, 0.01).unwrap();
        assert_eq!(plan.spreading.seed_bits(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = BitString::random(&mut rng, plan.seed_bits());
        assert_eq!(plan.recycler.seed_bits(), plan.g1.seed_bits());
        assert_eq!(plan.generate(&s).unwrap(), plan.g1.generate(&s).unwrap());
    }

    #[test]
    fn glarge_fools_high_variance_shapes() {
        let k = Knobs::default();
        let delta = 0.1;
        let plan = GLargePlan::new(2, 16, delta, &k, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = BitString::random(&mut rng, plan.seed_bits());
        assert_eq!(plan.generate(&s).unwrap(), plan.generate(&s).unwrap());
        for i in 0..3 {
            let rows = (0..16)
                .map(|_| {
                    let z = Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU);
                    vec![z, -z]
                })
                .collect();
            let f = FourierShape::from_rows(2, rows).unwrap();
            assert!((f.tvar() - 16.0).abs() < 1e-9);
            let e = empirical_expectation(&f, &plan, EvalMode::Sample { samples: 20_000, rng_seed: i })
                .unwrap();
            assert!(e.mean.norm() <= 2.0 * delta + 3.0 * e.std_err, "{}", e.mean.norm());
        }
    }

    #[test]
    fn sampling_levels() {
        assert_eq!(sampling_level(1.0, 16), Some(3));
        assert_eq!(sampling_level(16.0, 16), Some(0));
        assert_eq!(sampling_level(3.0, 16), Some(2));
        assert_eq!(sampling_level(0.5, 16), None);
        let mut v = vec![0.0; 16];
        v[5] = 1.0;
        assert_eq!(subsampling_success(&v).unwrap(), 0.5);
    }
}
