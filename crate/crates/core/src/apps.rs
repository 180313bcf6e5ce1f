//! Tests built on top of Fourier shapes: halfspaces, generalized
//! halfspaces, modular tests, combinatorial shapes, and a sampler for
//! product distributions with Chernoff-type tails.

use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::compose::{build_generator, Generator};
use crate::config::Knobs;
use crate::error::{refused, usage, Result};
use crate::metrics::{linear_pmf_uniform, seed_pmf, table_sum_pmf, IntPmf};
use crate::prg::{fold_seeds, EvalMode, Prg};

/// Discrepancy of one test between a generator and the uniform distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestError {
    pub generator: f64,
    pub uniform: f64,
    pub error: f64,
    /// Binomial standard error of the generator side; zero when exact.
    pub std_err: f64,
    pub exact: bool,
}

impl TestError {
    fn new(generator: f64, uniform: f64, mode: EvalMode) -> Self {
        let std_err = match mode {
            EvalMode::Enumerate { .. } => 0.0,
            EvalMode::Sample { samples, .. } => {
                (generator * (1.0 - generator) / samples.max(1) as f64).sqrt()
            }
        };
        TestError { generator, uniform, error: (generator - uniform).abs(), std_err, exact: mode.is_exact() }
    }
}

fn check_binary<G: Prg + ?Sized>(g: &G, n: usize) -> Result<()> {
    if g.alphabet() != 2 {
        return Err(usage(format!("expected a generator over bits, got alphabet {}", g.alphabet())));
    }
    check_dimension(g, n)
}

fn check_dimension<G: Prg + ?Sized>(g: &G, n: usize) -> Result<()> {
    if g.dimension() != n {
        return Err(usage(format!("test has {n} coordinates, generator outputs {}", g.dimension())));
    }
    Ok(())
}

/// 1 iff <w, x> >= theta.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Halfspace {
    pub w: Vec<i64>,
    pub theta: i64,
}

impl Halfspace {
    pub fn dot(&self, x: &[u128]) -> i64 {
        self.w.iter().zip(x).map(|(&w, &x)| w * x as i64).sum()
    }

    pub fn eval(&self, x: &[u128]) -> bool {
        self.dot(x) >= self.theta
    }

    /// Weights uniform in [-bound, bound], threshold uniform between the
    /// extremes of <w, x>.
    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, bound: i64) -> Self {
        let w: Vec<i64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        let lo: i64 = w.iter().filter(|&&v| v < 0).sum();
        let hi: i64 = w.iter().filter(|&&v| v > 0).sum();
        Halfspace { theta: rng.random_range(lo..=hi + 1), w }
    }

    pub fn as_generalized(&self) -> GeneralizedHalfspace {
        GeneralizedHalfspace {
            tables: self.w.iter().map(|&w| vec![0.0, w as f64]).collect(),
            theta: self.theta as f64,
        }
    }
}

/// Exact pmfs of <w, X> under the generator and under uniform bits.
pub fn halfspace_pmfs<G: Prg + ?Sized>(g: &G, w: &[i64], mode: EvalMode, cap: usize) -> Result<(IntPmf, IntPmf)> {
    check_binary(g, w.len())?;
    let uniform = linear_pmf_uniform(w, 2, cap)?;
    let gen = seed_pmf(g, |x| Ok(w.iter().zip(x).map(|(&w, &x)| w * x as i64).sum()), mode)?;
    Ok((gen, uniform))
}

pub fn halfspace_error<G: Prg + ?Sized>(g: &G, h: &Halfspace, mode: EvalMode, cap: usize) -> Result<TestError> {
    let (gen, uniform) = halfspace_pmfs(g, &h.w, mode, cap)?;
    Ok(TestError::new(gen.tail_at_least(h.theta), uniform.tail_at_least(h.theta), mode))
}

/// 1 iff sum_j tables[j][x_j] >= theta.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedHalfspace {
    pub tables: Vec<Vec<f64>>,
    pub theta: f64,
}

/// Integer form of a generalized halfspace: same function, integer tables.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegerHalfspace {
    pub tables: Vec<Vec<i64>>,
    pub theta: i64,
    /// The tables were multiplied by 2^scale_bits.
    pub scale_bits: u32,
}

impl IntegerHalfspace {
    pub fn eval(&self, x: &[u128]) -> bool {
        self.sum(x) >= self.theta
    }

    fn sum(&self, x: &[u128]) -> i64 {
        self.tables.iter().zip(x).map(|(t, &v)| t[v as usize]).sum()
    }
}

/// Largest dyadic scale tried when making tables integral.
pub const MAX_SCALE_BITS: u32 = 20;

impl GeneralizedHalfspace {
    pub fn eval(&self, x: &[u128]) -> bool {
        self.tables.iter().zip(x).map(|(t, &v)| t[v as usize]).sum::<f64>() >= self.theta
    }

    /// Random integer tables with entries in [-bound, bound].
    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R, m: usize, n: usize, bound: i64) -> Self {
        let tables: Vec<Vec<f64>> =
            (0..n).map(|_| (0..m).map(|_| rng.random_range(-bound..=bound) as f64).collect()).collect();
        let lo: f64 = tables.iter().map(|t| t.iter().cloned().fold(f64::INFINITY, f64::min)).sum();
        let hi: f64 = tables.iter().map(|t| t.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).sum();
        GeneralizedHalfspace { theta: rng.random_range(lo as i64..=hi as i64 + 1) as f64, tables }
    }

    /// Smallest dyadic scale making every entry an integer. The threshold is
    /// rounded up, which keeps the function unchanged because sums of
    /// integers clear it exactly when they clear the scaled real threshold.
    pub fn canonicalize(&self) -> Result<IntegerHalfspace> {
        if !self.theta.is_finite() || self.tables.iter().flatten().any(|v| !v.is_finite()) {
            return Err(usage("tables and threshold must be finite"));
        }
        for bits in 0..=MAX_SCALE_BITS {
            let s = f64::powi(2.0, bits as i32);
            let integral = |v: f64| (v * s).fract() == 0.0 && (v * s).abs() < 2f64.powi(52);
            if self.tables.iter().flatten().all(|&v| integral(v)) {
                let theta = (self.theta * s).ceil();
                if theta.abs() >= 2f64.powi(62) {
                    return Err(refused("threshold out of range"));
                }
                return Ok(IntegerHalfspace {
                    tables: self.tables.iter().map(|t| t.iter().map(|&v| (v * s) as i64).collect()).collect(),
                    theta: theta as i64,
                    scale_bits: bits,
                });
            }
        }
        Err(refused(format!("tables are not integral at any dyadic scale up to 2^{MAX_SCALE_BITS}")))
    }
}

pub fn gen_halfspace_error<G: Prg + ?Sized>(
    g: &G,
    gh: &GeneralizedHalfspace,
    mode: EvalMode,
    cap: usize,
) -> Result<TestError> {
    check_dimension(g, gh.tables.len())?;
    let m = g.alphabet();
    if gh.tables.iter().any(|t| t.len() as u128 != m) {
        return Err(usage(format!("every table needs {m} entries")));
    }
    let ih = gh.canonicalize()?;
    let uniform = table_sum_pmf(&ih.tables, cap)?;
    let gen = seed_pmf(g, |x| Ok(ih.sum(x)), mode)?;
    Ok(TestError::new(gen.tail_at_least(ih.theta), uniform.tail_at_least(ih.theta), mode))
}

/// 1 iff sum_i a_i x_i mod M lies in `accept`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModularTest {
    pub a: Vec<u64>,
    pub modulus: u64,
    pub accept: Vec<u64>,
}

impl ModularTest {
    pub fn new(a: Vec<u64>, modulus: u64, accept: Vec<u64>) -> Result<Self> {
        if modulus < 2 {
            return Err(usage("modulus must be at least 2"));
        }
        if accept.iter().any(|&s| s >= modulus) {
            return Err(usage("accepting residues must lie in 0..M"));
        }
        Ok(ModularTest { a: a.into_iter().map(|v| v % modulus).collect(), modulus, accept })
    }

    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, modulus: u64) -> Self {
        let a = (0..n).map(|_| rng.random_range(0..modulus)).collect();
        let accept = (0..modulus).filter(|_| rng.random_bool(0.5)).collect();
        ModularTest { a, modulus, accept }
    }

    pub fn residue(&self, x: &[u128]) -> u64 {
        let m = self.modulus as u128;
        (self.a.iter().zip(x).fold(0u128, |acc, (&a, &x)| (acc + a as u128 * (x % m)) % m)) as u64
    }

    /// Residue distribution under uniform x in [m]^n.
    pub fn uniform_residues(&self, m: u128) -> Vec<f64> {
        let modulus = self.modulus as usize;
        let mut cur = vec![0.0; modulus];
        cur[0] = 1.0;
        let p = 1.0 / m as f64;
        for &a in &self.a {
            let mut step = vec![0.0; modulus];
            for x in 0..m {
                step[((a as u128 * (x % self.modulus as u128)) % self.modulus as u128) as usize] += p;
            }
            let mut next = vec![0.0; modulus];
            for (r, &c) in cur.iter().enumerate().filter(|(_, c)| **c != 0.0) {
                for (s, &q) in step.iter().enumerate().filter(|(_, q)| **q != 0.0) {
                    next[(r + s) % modulus] += c * q;
                }
            }
            cur = next;
        }
        cur
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModularReport {
    /// Total variation between residue distributions.
    pub tv: f64,
    /// Discrepancy on the accepting set.
    pub accept: TestError,
    /// Zero when exact; otherwise a one-sigma radius for the TV estimate.
    pub confidence_radius: f64,
}

pub fn modular_error<G: Prg + ?Sized>(g: &G, t: &ModularTest, mode: EvalMode, cap: usize) -> Result<ModularReport> {
    check_dimension(g, t.a.len())?;
    let states = (t.modulus as u128).saturating_mul(t.a.len() as u128);
    if states > cap as u128 {
        return Err(refused(format!("M * n = {states} exceeds the DP budget of {cap}")));
    }
    let uniform = t.uniform_residues(g.alphabet());
    let gen = seed_pmf(g, |x| Ok(t.residue(x) as i64), mode)?.residues(t.modulus);
    let tv = 0.5 * uniform.iter().zip(&gen).map(|(u, v)| (u - v).abs()).sum::<f64>();
    let in_s = |p: &[f64]| t.accept.iter().map(|&s| p[s as usize]).sum::<f64>();
    let confidence_radius = match mode {
        EvalMode::Enumerate { .. } => 0.0,
        EvalMode::Sample { samples, .. } => 0.5 * (t.modulus as f64 / samples.max(1) as f64).sqrt(),
    };
    Ok(ModularReport { tv, accept: TestError::new(in_s(&gen), in_s(&uniform), mode), confidence_radius })
}

/// f(x) = h(sum_j g_j(x_j)) with boolean g_j and h.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinatorialShape {
    pub tables: Vec<Vec<bool>>,
    pub h: Vec<bool>,
}

impl CombinatorialShape {
    pub fn new(tables: Vec<Vec<bool>>, h: Vec<bool>) -> Result<Self> {
        if h.len() != tables.len() + 1 {
            return Err(usage("h needs one entry per count 0..=n"));
        }
        Ok(CombinatorialShape { tables, h })
    }

    /// Rectangle: 1 iff x_j lies in sets[j] for every j.
    pub fn rectangle(sets: Vec<Vec<bool>>) -> Self {
        let n = sets.len();
        let mut h = vec![false; n + 1];
        h[n] = true;
        CombinatorialShape { tables: sets, h }
    }

    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R, m: usize, n: usize) -> Self {
        let tables = (0..n).map(|_| (0..m).map(|_| rng.random_bool(0.5)).collect()).collect();
        let h = (0..=n).map(|_| rng.random_bool(0.5)).collect();
        CombinatorialShape { tables, h }
    }

    pub fn count(&self, x: &[u128]) -> usize {
        self.tables.iter().zip(x).filter(|(t, &v)| t[v as usize]).count()
    }

    pub fn eval(&self, x: &[u128]) -> bool {
        self.h[self.count(x)]
    }
}

pub fn comb_shape_error<G: Prg + ?Sized>(
    g: &G,
    c: &CombinatorialShape,
    mode: EvalMode,
    cap: usize,
) -> Result<TestError> {
    check_dimension(g, c.tables.len())?;
    let m = g.alphabet();
    if c.tables.iter().any(|t| t.len() as u128 != m) || c.h.len() != c.tables.len() + 1 {
        return Err(usage(format!("tables need {m} entries and h needs n + 1")));
    }
    let ints: Vec<Vec<i64>> = c.tables.iter().map(|t| t.iter().map(|&b| b as i64).collect()).collect();
    let uniform = table_sum_pmf(&ints, cap)?;
    let gen = seed_pmf(g, |x| Ok(c.count(x) as i64), mode)?;
    let accept = |p: &IntPmf| p.iter().filter(|&(v, _)| c.h[v as usize]).map(|(_, q)| q).sum::<f64>();
    Ok(TestError::new(accept(&gen), accept(&uniform), mode))
}

/// Samples a product distribution over [m]^n by inverse-CDF mapping the
/// output of a generator over [2^r]^n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChernoffSampler {
    pub m: usize,
    pub n: usize,
    pub eps: f64,
    pub quant_bits: u32,
    /// Per coordinate, the number of the 2^r quantization cells given to each symbol.
    pub counts: Vec<Vec<u128>>,
    pub generator: Generator,
}

/// Rounds `probs * 2^bits` to integers summing to exactly 2^bits, giving
/// leftover units to the largest fractional parts (lowest index on ties).
pub fn largest_remainder(probs: &[f64], bits: u32) -> Result<Vec<u128>> {
    if bits > 100 {
        return Err(refused("quantization above 100 bits"));
    }
    let total: f64 = probs.iter().sum();
    if probs.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(usage("probabilities must be nonnegative and sum to 1"));
    }
    let unit = 2f64.powi(bits as i32);
    let mut counts: Vec<u128> = probs.iter().map(|&p| (p / total * unit).floor() as u128).collect();
    let assigned: u128 = counts.iter().sum();
    let full = 1u128 << bits;
    let mut order: Vec<usize> = (0..probs.len()).collect();
    let frac = |i: usize| probs[i] / total * unit - counts[i] as f64;
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    if assigned > full {
        return Err(usage("probabilities overflow the quantization"));
    }
    for &i in order.iter().cycle().take((full - assigned) as usize) {
        counts[i] += 1;
    }
    Ok(counts)
}

impl ChernoffSampler {
    /// r = ceil(log2(m n / eps)).
    pub fn quantization_bits(m: usize, n: usize, eps: f64) -> u32 {
        ((m * n) as f64 / eps).log2().ceil().max(1.0) as u32
    }

    pub fn new(pmfs: &[Vec<f64>], eps: f64, knobs: &Knobs) -> Result<Self> {
        let m = pmfs.first().map_or(0, Vec::len);
        Self::with_bits(pmfs, Self::quantization_bits(m, pmfs.len(), eps), eps, knobs)
    }

    /// As [`ChernoffSampler::new`] with an explicit quantization.
    pub fn with_bits(pmfs: &[Vec<f64>], quant_bits: u32, eps: f64, knobs: &Knobs) -> Result<Self> {
        let n = pmfs.len();
        let m = pmfs.first().map_or(0, Vec::len);
        if n == 0 || m == 0 || pmfs.iter().any(|p| p.len() != m) {
            return Err(usage("need n >= 1 pmfs over a common alphabet"));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(usage("eps must lie in (0, 1)"));
        }
        if quant_bits == 0 || quant_bits > 100 {
            return Err(usage("quantization must use 1 to 100 bits"));
        }
        let counts = pmfs.iter().map(|p| largest_remainder(p, quant_bits)).collect::<Result<Vec<_>>>()?;
        let generator = build_generator(1u128 << quant_bits, n, eps, knobs)?;
        Ok(ChernoffSampler { m, n, eps, quant_bits, counts, generator })
    }

    /// Quantized pmf actually sampled at coordinate i.
    pub fn quantized_pmf(&self, i: usize) -> Vec<f64> {
        let unit = 2f64.powi(self.quant_bits as i32);
        self.counts[i].iter().map(|&c| c as f64 / unit).collect()
    }

    pub fn map(&self, z: &[u128]) -> Vec<u128> {
        z.iter()
            .zip(&self.counts)
            .map(|(&z, counts)| {
                let mut acc = 0u128;
                for (s, &c) in counts.iter().enumerate() {
                    acc += c;
                    if z < acc {
                        return s as u128;
                    }
                }
                unreachable!("quantized counts cover every cell")
            })
            .collect()
    }

    pub fn sample(&self, seed: &BitString) -> Result<Vec<u128>> {
        Ok(self.map(&self.generator.generate(seed)?))
    }
}

impl Prg for ChernoffSampler {
    fn alphabet(&self) -> u128 {
        self.m as u128
    }
    fn dimension(&self) -> usize {
        self.n
    }
    fn seed_bits(&self) -> usize {
        self.generator.seed_bits
    }
    fn generate(&self, seed: &BitString) -> Result<Vec<u128>> {
        self.sample(seed)
    }
}

pub fn chernoff_sample(s: &ChernoffSampler, seed: &BitString) -> Result<Vec<u128>> {
    s.sample(seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub t: f64,
    pub tail: f64,
    pub bound: f64,
    /// Binomial standard error at the bound.
    pub std_err: f64,
    pub pass: bool,
    pub vacuous: bool,
}

/// Pr[|sum_i g_i(Y_i) - mu| >= t] over the seeds of the mode, for each t,
/// against 2 exp(-t^2 / 2n) + eps.
pub fn chernoff_tail_check(
    s: &ChernoffSampler,
    g_tables: &[Vec<f64>],
    ts: &[f64],
    mode: EvalMode,
) -> Result<Vec<TailCheck>> {
    if g_tables.len() != s.n || g_tables.iter().any(|t| t.len() != s.m) {
        return Err(usage("need one table over [m] per coordinate"));
    }
    if g_tables.iter().flatten().any(|v| !(v.abs() <= 1.0)) {
        return Err(usage("table values must lie in [-1, 1]"));
    }
    let mu: f64 = (0..s.n)
        .map(|i| s.quantized_pmf(i).iter().zip(&g_tables[i]).map(|(p, g)| p * g).sum::<f64>())
        .sum();
    let trials = match mode {
        EvalMode::Enumerate { .. } => 2f64.powi(s.seed_bits() as i32),
        EvalMode::Sample { samples, .. } => samples.max(1) as f64,
    };
    let hits = fold_seeds(
        s.seed_bits(),
        mode,
        || vec![0u64; ts.len()],
        |acc, seed| {
            let y = s.sample(seed)?;
            let dev = (y.iter().zip(g_tables).map(|(&v, g)| g[v as usize]).sum::<f64>() - mu).abs();
            for (a, &t) in acc.iter_mut().zip(ts) {
                // Sums of table values are inexact in floating point.
                if dev >= t - 1e-9 {
                    *a += 1;
                }
            }
            Ok(())
        },
        |mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        },
    )?;
    Ok(ts
        .iter()
        .zip(hits)
        .map(|(&t, h)| {
            let tail = h as f64 / trials;
            let bound = 2.0 * (-t * t / (2.0 * s.n as f64)).exp() + s.eps;
            let b = bound.min(1.0);
            let std_err = if mode.is_exact() { 0.0 } else { (b * (1.0 - b) / trials).sqrt() };
            let vacuous = t <= 0.0;
            TailCheck { t, tail, bound, std_err, pass: vacuous || tail <= bound + 3.0 * std_err, vacuous }
        })
        .collect())
}
