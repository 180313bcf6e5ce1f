//! The generator interface and the seed-space evaluation driver shared by
//! every oracle: exact enumeration of all seeds, or independent sampling.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{check_seed, refused, usage, Result};
use crate::field::ceil_log2;

pub const DEFAULT_ENUM_CAP: u32 = 26;

/// Seeds (or samples) per work unit. Partial sums are formed per chunk and
/// merged in chunk order, so results do not depend on thread scheduling.
const CHUNK: u64 = 1 << 12;

/// A deterministic map from `seed_bits()`-bit seeds to `[alphabet()]^dimension()`.
pub trait Prg: Send + Sync {
    fn alphabet(&self) -> u128;
    fn dimension(&self) -> usize;
    fn seed_bits(&self) -> usize;
    fn generate(&self, seed: &BitString) -> Result<Vec<u128>>;
}

impl<T: Prg + ?Sized> Prg for Box<T> {
    fn alphabet(&self) -> u128 {
        (**self).alphabet()
    }
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn seed_bits(&self) -> usize {
        (**self).seed_bits()
    }
    fn generate(&self, seed: &BitString) -> Result<Vec<u128>> {
        (**self).generate(seed)
    }
}

/// Alphabet size. Powers of two may be too large for `u128`; those arise
/// only as intermediate alphabets whose symbols are seeds for another stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alphabet {
    Size(u128),
    PowerOfTwo(u32),
}

impl Alphabet {
    pub fn from_bits(bits: u32) -> Self {
        if bits < 128 {
            Alphabet::Size(1u128 << bits)
        } else {
            Alphabet::PowerOfTwo(bits)
        }
    }

    /// Symbol width ceil(log2 m).
    pub fn bits(&self) -> u32 {
        match *self {
            Alphabet::Size(m) => ceil_log2(m),
            Alphabet::PowerOfTwo(b) => b,
        }
    }

    pub fn size(&self) -> Option<u128> {
        match *self {
            Alphabet::Size(m) => Some(m),
            Alphabet::PowerOfTwo(_) => None,
        }
    }

    pub fn is_power_of_two(&self) -> bool {
        self.size().is_none_or(|m| m.is_power_of_two())
    }

    pub fn ln(&self) -> f64 {
        match *self {
            Alphabet::Size(m) => (m as f64).ln(),
            Alphabet::PowerOfTwo(b) => b as f64 * std::f64::consts::LN_2,
        }
    }

    /// Whether m > bound.
    pub fn exceeds(&self, bound: u128) -> bool {
        self.size().is_none_or(|m| m > bound)
    }
}

impl std::fmt::Display for Alphabet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Alphabet::Size(m) => write!(f, "{m}"),
            Alphabet::PowerOfTwo(b) => write!(f, "2^{b}"),
        }
    }
}

/// A generator over `[2^w]^n`, read as n blocks of w bits.
pub trait BlockPrg: Send + Sync {
    fn block_bits(&self) -> usize;
    fn blocks(&self) -> usize;
    fn seed_bits(&self) -> usize;
    fn generate_blocks(&self, seed: &BitString) -> Result<Vec<BitString>>;
}

/// Uniform blocks: the seed cut into pieces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniformBlocks {
    pub block_bits: usize,
    pub blocks: usize,
}

impl BlockPrg for UniformBlocks {
    fn block_bits(&self) -> usize {
        self.block_bits
    }
    fn blocks(&self) -> usize {
        self.blocks
    }
    fn seed_bits(&self) -> usize {
        self.block_bits * self.blocks
    }
    fn generate_blocks(&self, seed: &BitString) -> Result<Vec<BitString>> {
        check_seed(BlockPrg::seed_bits(self), seed.len())?;
        let b = self.block_bits;
        Ok((0..self.blocks).map(|i| seed.slice(i * b, b)).collect())
    }
}

/// The seed itself, cut into ceil(log2 m)-bit symbols (each reduced mod m).
/// Exactly uniform when m is a power of two.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniformStub {
    pub m: u128,
    pub n: usize,
    pub bits_per_symbol: u32,
}

impl UniformStub {
    pub fn new(m: u128, n: usize) -> Result<Self> {
        if m < 1 {
            return Err(usage("alphabet must be nonempty"));
        }
        Ok(UniformStub { m, n, bits_per_symbol: ceil_log2(m) })
    }
}

impl Prg for UniformStub {
    fn alphabet(&self) -> u128 {
        self.m
    }
    fn dimension(&self) -> usize {
        self.n
    }
    fn seed_bits(&self) -> usize {
        self.n * self.bits_per_symbol as usize
    }
    fn generate(&self, seed: &BitString) -> Result<Vec<u128>> {
        check_seed(self.seed_bits(), seed.len())?;
        let b = self.bits_per_symbol as usize;
        Ok((0..self.n).map(|i| seed.read(i * b, b) % self.m).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EvalMode {
    /// Average over all 2^r seeds; refused when r exceeds `cap_bits`.
    Enumerate { cap_bits: u32 },
    /// Average over `samples` seeds drawn from ChaCha8 seeded with `rng_seed`.
    Sample { samples: u64, rng_seed: u64 },
}

impl EvalMode {
    pub fn enumerate() -> Self {
        EvalMode::Enumerate { cap_bits: DEFAULT_ENUM_CAP }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, EvalMode::Enumerate { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EvalMode::Enumerate { .. } => "enumerate",
            EvalMode::Sample { .. } => "sample",
        }
    }
}

/// A mean over seeds with the standard error of the complex mean (zero
/// when exact).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: Complex64,
    pub std_err: f64,
    pub seeds: u64,
    pub exact: bool,
}

#[derive(Clone, Copy, Default)]
struct Partial {
    sum: Complex64,
    sum_sq: f64,
    count: u64,
}

impl Partial {
    fn push(&mut self, z: Complex64) {
        self.sum += z;
        self.sum_sq += z.norm_sqr();
        self.count += 1;
    }

    fn merge(mut self, o: Partial) -> Partial {
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self.count += o.count;
        self
    }

    fn finish(self, exact: bool) -> Estimate {
        let n = self.count.max(1) as f64;
        let mean = self.sum / n;
        let std_err = if exact || self.count < 2 {
            0.0
        } else {
            let var = ((self.sum_sq - n * mean.norm_sqr()) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        };
        Estimate { mean, std_err, seeds: self.count, exact }
    }
}

pub fn check_enumerable(seed_bits: usize, cap_bits: u32) -> Result<()> {
    if seed_bits > cap_bits as usize || seed_bits >= 64 {
        return Err(refused(format!(
            "enumerating {seed_bits}-bit seeds exceeds the cap of {cap_bits} bits; use sample mode"
        )));
    }
    Ok(())
}

/// Streams every seed of the mode through `f`, combining per-chunk
/// accumulators in order.
pub fn fold_seeds<A, Init, Step, Merge>(
    seed_bits: usize,
    mode: EvalMode,
    init: Init,
    step: Step,
    merge: Merge,
) -> Result<A>
where
    A: Send,
    Init: Fn() -> A + Sync,
    Step: Fn(&mut A, &BitString) -> Result<()> + Sync,
    Merge: Fn(A, A) -> A,
{
    let (total, sampled) = match mode {
        EvalMode::Enumerate { cap_bits } => {
            check_enumerable(seed_bits, cap_bits)?;
            (1u64 << seed_bits, None)
        }
        EvalMode::Sample { samples, rng_seed } => (samples, Some(rng_seed)),
    };
    let chunks = total.div_ceil(CHUNK);
    let parts: Vec<Result<A>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(total);
            match sampled {
                None => {
                    let mut seed = BitString::zeros(seed_bits);
                    for s in lo..hi {
                        seed.assign_index(s as u128);
                        step(&mut acc, &seed)?;
                    }
                }
                Some(rng_seed) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
                    rng.set_stream(c);
                    for _ in lo..hi {
                        step(&mut acc, &BitString::random(&mut rng, seed_bits))?;
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut out = init();
    for p in parts {
        out = merge(out, p?);
    }
    Ok(out)
}

/// E_seed[f(G(seed))] under the mode.
pub fn expectation<G, F>(g: &G, f: F, mode: EvalMode) -> Result<Estimate>
where
    G: Prg + ?Sized,
    F: Fn(&[u128]) -> Result<Complex64> + Sync,
{
    let p = fold_seeds(
        g.seed_bits(),
        mode,
        Partial::default,
        |acc, s| {
            acc.push(f(&g.generate(s)?)?);
            Ok(())
        },
        Partial::merge,
    )?;
    Ok(p.finish(mode.is_exact()))
}

/// Output histogram over [m]^n, indexed in mixed radix with coordinate 0
/// most significant. Built once and reused to evaluate many tests.
#[derive(Clone, Debug)]
pub struct OutputDistribution {
    pub m: u128,
    pub n: usize,
    pub counts: Vec<u64>,
    pub total: u64,
    pub exact: bool,
}

/// Largest output space a histogram is built for.
pub const MAX_HISTOGRAM: u128 = 1 << 24;

impl OutputDistribution {
    pub fn collect<G: Prg + ?Sized>(g: &G, mode: EvalMode) -> Result<Self> {
        let (m, n) = (g.alphabet(), g.dimension());
        let size = m
            .checked_pow(n as u32)
            .filter(|&s| s <= MAX_HISTOGRAM)
            .ok_or_else(|| refused(format!("output space {m}^{n} too large for a histogram")))?;
        let counts = fold_seeds(
            g.seed_bits(),
            mode,
            || vec![0u64; size as usize],
            |acc, s| {
                acc[encode(&g.generate(s)?, m) as usize] += 1;
                Ok(())
            },
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        )?;
        let total = counts.iter().sum();
        Ok(OutputDistribution { m, n, counts, total, exact: mode.is_exact() })
    }

    pub fn expectation<F>(&self, f: F) -> Result<Estimate>
    where
        F: Fn(&[u128]) -> Result<Complex64>,
    {
        let mut sum = Complex64::new(0.0, 0.0);
        let mut sum_sq = 0.0;
        let mut x = vec![0u128; self.n];
        for (idx, &c) in self.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            decode_into(idx as u128, self.m, &mut x);
            let z = f(&x)?;
            sum += z * c as f64;
            sum_sq += z.norm_sqr() * c as f64;
        }
        Ok(Partial { sum, sum_sq, count: self.total }.finish(self.exact))
    }

    /// Probability of each output, in index order.
    pub fn probabilities(&self) -> impl Iterator<Item = (Vec<u128>, f64)> + '_ {
        let total = self.total as f64;
        self.counts.iter().enumerate().filter(|(_, &c)| c > 0).map(move |(i, &c)| {
            let mut x = vec![0u128; self.n];
            decode_into(i as u128, self.m, &mut x);
            (x, c as f64 / total)
        })
    }
}

pub fn encode(x: &[u128], m: u128) -> u128 {
    x.iter().fold(0, |acc, &v| acc * m + v)
}

pub fn decode_into(mut idx: u128, m: u128, out: &mut [u128]) {
    for slot in out.iter_mut().rev() {
        *slot = idx % m;
        idx /= m;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_reinterprets_seed() {
        let g = UniformStub::new(4, 3).unwrap();
        assert_eq!(g.seed_bits(), 6);
        let out = g.generate(&BitString::from_index(0b11_01_10, 6)).unwrap();
        assert_eq!(out, [3, 1, 2]);
        assert!(g.generate(&BitString::zeros(5)).is_err());
    }

    #[test]
    fn enumerate_is_exact_average() {
        let g = UniformStub::new(2, 4).unwrap();
        let e = expectation(&g, |x| Ok(Complex64::new(x[0] as f64, 0.0)), EvalMode::enumerate())
            .unwrap();
        assert_eq!(e.mean, Complex64::new(0.5, 0.0));
        assert_eq!(e.seeds, 16);
        assert_eq!(e.std_err, 0.0);
    }

    #[test]
    fn cap_refuses() {
        let g = UniformStub::new(2, 30).unwrap();
        let r = expectation(&g, |_| Ok(Complex64::new(1.0, 0.0)), EvalMode::enumerate());
        assert!(matches!(r, Err(crate::Error::Refused(_))));
    }

    #[test]
    fn sampling_is_reproducible_and_close() {
        let g = UniformStub::new(2, 40).unwrap();
        let mode = EvalMode::Sample { samples: 20_000, rng_seed: 7 };
        let f = |x: &[u128]| Ok(Complex64::new(x[3] as f64, 0.0));
        let a = expectation(&g, f, mode).unwrap();
        let b = expectation(&g, f, mode).unwrap();
        assert_eq!(a, b);
        assert!((a.mean.re - 0.5).abs() <= 4.0 * a.std_err);
    }

    #[test]
    fn histogram_matches_direct() {
        let g = UniformStub::new(3, 3).unwrap();
        let h = OutputDistribution::collect(&g, EvalMode::enumerate()).unwrap();
        assert_eq!(h.total, 64);
        let f = |x: &[u128]| Ok(Complex64::new((x[0] * 3 + x[2]) as f64, x[1] as f64));
        let a = h.expectation(f).unwrap();
        let b = expectation(&g, f, EvalMode::enumerate()).unwrap();
        assert!((a.mean - b.mean).norm() < 1e-12);
        let mut x = [0u128; 3];
        decode_into(encode(&[2, 0, 1], 3), 3, &mut x);
        assert_eq!(x, [2, 0, 1]);
    }
}
