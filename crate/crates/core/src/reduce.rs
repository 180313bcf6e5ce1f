//! Alphabet reduction (m -> about sqrt(m) per step, until m <= n^4) and
//! dimension reduction for low-variance shapes (n -> ceil(sqrt(n)) over a
//! blown-up alphabet of 2^r0 symbols).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::bits::{BitString, SeedReader};
use crate::compose::Generator;
use crate::config::Knobs;
use crate::error::{check_seed, refused, usage, Result};
use crate::families::{KWiseFamily, KWiseSymbols};
use crate::field::{ceil_log2, Field};
use crate::prg::{Alphabet, BlockPrg, Prg};
use crate::shapes::FourierShape;

type Coeffs = SmallVec<[u128; 8]>;

/// Inner alphabets of an alphabet step never exceed 2^64 symbols.
pub const MAX_INNER_BITS: u32 = 64;

/// max(2, ceil(c ln(x) / ln_base)).
fn order(c: f64, x: f64, ln_base: f64) -> usize {
    if ln_base <= 0.0 {
        return 2;
    }
    ((c * x.ln() / ln_base).ceil() as usize).max(2)
}

fn n_pow4(n: usize) -> u128 {
    (n as u128).saturating_pow(4)
}

/// k-wise independent strings of `width` bits at n points, formed from
/// independent polynomial families on chunks of at most 127 bits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KWiseStrings {
    pub n: usize,
    pub k: usize,
    pub width: usize,
    pub chunks: Vec<(u32, KWiseFamily)>,
}

impl KWiseStrings {
    pub fn new(n: usize, width: usize, k: usize) -> Result<Self> {
        let pieces = width.div_ceil(127);
        let mut chunks = Vec::with_capacity(pieces);
        for c in 0..pieces {
            let w = (width / pieces + usize::from(c < width % pieces)) as u32;
            let deg = w.max(ceil_log2(n as u128)).max(1);
            chunks.push((w, KWiseFamily::new(n, Field::binary(deg)?, k)?));
        }
        Ok(KWiseStrings { n, k, width, chunks })
    }

    pub fn seed_bits(&self) -> usize {
        self.chunks.iter().map(|(_, f)| f.seed_bits()).sum()
    }

    pub(crate) fn read_coefficients(&self, r: &mut SeedReader<'_>) -> Vec<Vec<u128>> {
        self.chunks.iter().map(|(_, f)| f.read_coefficients(r)).collect()
    }

    pub(crate) fn value(&self, coeffs: &[Vec<u128>], i: usize) -> BitString {
        let mut out = BitString::zeros(self.width);
        let mut off = 0;
        for ((w, fam), c) in self.chunks.iter().zip(coeffs) {
            let w = *w as usize;
            out.write(off, w, fam.eval(c, i) & ((1u128 << w) - 1));
            off += w;
        }
        out
    }
}

/// Column seeds of one alphabet step, parsed into per-chunk coefficients.
pub(crate) struct ColumnSeeds {
    cols: Vec<Vec<Coeffs>>,
}

/// One alphabet step: X is a D x n matrix over [m] whose columns are
/// pairwise independent and whose column seeds are k-wise independent; with
/// Y from the inner generator over [D]^n the output is Z_j = X[Y_j, j].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphabetStepPlan {
    pub m: Alphabet,
    pub n: usize,
    pub d: u128,
    pub k: usize,
    /// The pairwise column family, split into chunks of the symbol (high
    /// bits first). A single chunk unless the symbol exceeds 127 bits.
    pub columns: Vec<KWiseSymbols>,
    pub cross: KWiseStrings,
}

impl AlphabetStepPlan {
    /// D = floor(sqrt(m)), taken as 2^floor(e/2) for m = 2^e, and at most 2^64.
    pub fn inner_alphabet(m: Alphabet) -> u128 {
        match m {
            Alphabet::Size(s) if !s.is_power_of_two() => s.isqrt().min(1u128 << MAX_INNER_BITS),
            _ => 1u128 << (m.bits() / 2).min(MAX_INNER_BITS),
        }
    }

    /// A step with k = max(2, ceil(c_k ln(1/delta) / ln m)); refused unless m > n^4.
    pub fn new(m: Alphabet, n: usize, delta: f64, knobs: &Knobs, delta_map: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(usage(format!("error budget {delta} must lie in (0, 1)")));
        }
        if !m.exceeds(n_pow4(n)) {
            return Err(refused(format!("alphabet step needs m > n^4, got m = {m}, n = {n}")));
        }
        Self::forced(m, n, order(knobs.c_k, 1.0 / delta, m.ln()), delta_map)
    }

    /// The same construction with an explicit k and no applicability check.
    pub fn forced(m: Alphabet, n: usize, k: usize, delta_map: f64) -> Result<Self> {
        if n == 0 {
            return Err(usage("dimension must be at least 1"));
        }
        let d = Self::inner_alphabet(m);
        let points = usize::try_from(d).unwrap_or(usize::MAX);
        let columns = match m {
            Alphabet::Size(s) if !s.is_power_of_two() => {
                vec![KWiseSymbols::new(points, s, 2, delta_map)?]
            }
            _ => {
                let e = m.bits() as usize;
                let pieces = e.div_ceil(127).max(1);
                (0..pieces)
                    .map(|c| {
                        let w = e / pieces + usize::from(c < e % pieces);
                        KWiseSymbols::new(points, 1u128 << w, 2, delta_map)
                    })
                    .collect::<Result<_>>()?
            }
        };
        let column_bits = columns.iter().map(|c| c.seed_bits()).sum();
        let cross = KWiseStrings::new(n, column_bits, k)?;
        Ok(AlphabetStepPlan { m, n, d, k, columns, cross })
    }

    /// Seed bits of X; the inner generator's seed follows.
    pub fn seed_bits(&self) -> usize {
        self.cross.seed_bits()
    }

    pub fn column_bits(&self) -> usize {
        self.cross.width
    }

    pub(crate) fn read_columns(&self, r: &mut SeedReader<'_>) -> ColumnSeeds {
        let c = self.cross.read_coefficients(r);
        let cols = (0..self.n)
            .map(|j| {
                let s = self.cross.value(&c, j);
                let mut sr = SeedReader::new(&s);
                self.columns
                    .iter()
                    .map(|col| Coeffs::from_vec(col.family.read_coefficients(&mut sr)))
                    .collect()
            })
            .collect();
        ColumnSeeds { cols }
    }

    fn entry(&self, seeds: &ColumnSeeds, l: u128, j: usize) -> u128 {
        self.columns[0].eval(&seeds.cols[j][0], l as usize)
    }

    fn narrow_entry(&self, seeds: &ColumnSeeds, l: u128, j: usize) -> u128 {
        if self.columns.len() == 1 {
            self.entry(seeds, l, j)
        } else {
            self.entry_bits(seeds, l, j).read(0, self.m.bits() as usize)
        }
    }

    fn entry_bits(&self, seeds: &ColumnSeeds, l: u128, j: usize) -> BitString {
        let mut out = BitString::zeros(self.m.bits() as usize);
        let mut off = 0;
        for (col, c) in self.columns.iter().zip(&seeds.cols[j]) {
            let w = col.m.trailing_zeros() as usize;
            out.write(off, w, col.eval(c, l as usize));
            off += w;
        }
        out
    }

    pub(crate) fn apply(&self, seeds: &ColumnSeeds, y: &[u128]) -> Vec<u128> {
        debug_assert!(self.m.size().is_some());
        y.iter().enumerate().map(|(j, &l)| self.narrow_entry(seeds, l, j)).collect()
    }

    pub(crate) fn apply_bits(&self, seeds: &ColumnSeeds, y: &[u128]) -> Vec<BitString> {
        y.iter().enumerate().map(|(j, &l)| self.entry_bits(seeds, l, j)).collect()
    }

    /// X as D rows of n symbols. Only for small D and symbols of at most 128 bits.
    pub fn matrix(&self, seed: &BitString) -> Result<Vec<Vec<u128>>> {
        check_seed(self.seed_bits(), seed.len())?;
        if self.m.size().is_none() || self.d > 1 << 20 {
            return Err(refused("matrix too large to materialize"));
        }
        let seeds = self.read_columns(&mut SeedReader::new(seed));
        Ok((0..self.d)
            .map(|l| (0..self.n).map(|j| self.narrow_entry(&seeds, l, j)).collect())
            .collect())
    }
}

/// Output of one alphabet step; `seed` is X's seed followed by the inner seed.
pub fn alphabet_step<G: Prg + ?Sized>(
    plan: &AlphabetStepPlan,
    inner: &G,
    seed: &BitString,
) -> Result<Vec<u128>> {
    if plan.m.size().is_none() {
        return Err(usage("alphabet too large for integer symbols"));
    }
    if inner.alphabet() != plan.d || inner.dimension() != plan.n {
        return Err(usage(format!(
            "inner generator must produce [{}]^{}, got [{}]^{}",
            plan.d,
            plan.n,
            inner.alphabet(),
            inner.dimension()
        )));
    }
    check_seed(plan.seed_bits() + inner.seed_bits(), seed.len())?;
    let mut r = SeedReader::new(seed);
    let cols = plan.read_columns(&mut r);
    let y = inner.generate(&r.take(inner.seed_bits()))?;
    Ok(plan.apply(&cols, &y))
}

/// prod_j (1/D) sum_l f_j(x[l][j]) for a D x n matrix given as rows.
pub fn bias_function(f: &FourierShape, x: &[Vec<u128>]) -> Result<Complex64> {
    if x.is_empty() || x.iter().any(|row| row.len() != f.n()) {
        return Err(usage(format!("matrix must have rows of length {}", f.n())));
    }
    let d = x.len() as f64;
    let mut prod = Complex64::new(1.0, 0.0);
    for j in 0..f.n() {
        let mut s = Complex64::new(0.0, 0.0);
        for row in x {
            if row[j] >= f.m() as u128 {
                return Err(usage(format!("symbol {} outside [{}]", row[j], f.m())));
            }
            s += f.get(j, row[j] as usize);
        }
        prod *= s / d;
    }
    Ok(prod)
}

/// Steps taking m down to at most n^4, each with an equal share of `delta`.
pub fn alphabet_steps(
    m: Alphabet,
    n: usize,
    delta: f64,
    knobs: &Knobs,
    delta_map: f64,
) -> Result<Vec<AlphabetStepPlan>> {
    let bound = n_pow4(n);
    let mut count = 0;
    let mut a = m;
    while a.exceeds(bound) {
        a = Alphabet::Size(AlphabetStepPlan::inner_alphabet(a));
        count += 1;
    }
    let mut steps = Vec::with_capacity(count);
    let mut a = m;
    for _ in 0..count {
        let step = AlphabetStepPlan::new(a, n, delta / count as f64, knobs, delta_map)?;
        a = Alphabet::Size(step.d);
        steps.push(step);
    }
    Ok(steps)
}

/// Chains alphabet steps down to m' <= n^4 and hands (m', n) to `base`.
pub fn alphabet_reduce(
    m: Alphabet,
    n: usize,
    delta: f64,
    knobs: &Knobs,
    delta_map: f64,
    base: &mut dyn FnMut(u128, usize) -> Result<Generator>,
) -> Result<Generator> {
    let steps = alphabet_steps(m, n, delta, knobs, delta_map)?;
    let bottom = match steps.last() {
        Some(s) => s.d,
        None => m.size().ok_or_else(|| usage("alphabet too large for integer symbols"))?,
    };
    let inner = base(bottom, n)?;
    if steps.is_empty() {
        return Ok(inner);
    }
    Generator::alphabet_chain(m, delta, steps, inner)
}

/// One dimension step: h hashes [n] into t = ceil(sqrt(n)) buckets, the inner
/// generator supplies one r0-bit block per bucket, and the coordinates in
/// bucket j come from the within-bucket k-wise family seeded by block j.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimStepPlan {
    pub m: u128,
    pub n: usize,
    pub t: usize,
    pub k: usize,
    pub bucket: Option<KWiseSymbols>,
    pub within: KWiseSymbols,
    pub r0: usize,
}

impl DimStepPlan {
    /// k = max(2, ceil(c_k ln(n/delta) / ln n)); refused when m > n^4.
    pub fn new(m: u128, n: usize, delta: f64, knobs: &Knobs, delta_map: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(usage(format!("error budget {delta} must lie in (0, 1)")));
        }
        if m > n_pow4(n) {
            return Err(refused(format!("dimension step needs m <= n^4, got m = {m}, n = {n}")));
        }
        let k = order(knobs.c_k, n as f64 / delta, (n as f64).ln());
        Self::with_k(m, n, k, delta_map)
    }

    pub fn with_k(m: u128, n: usize, k: usize, delta_map: f64) -> Result<Self> {
        if n == 0 || m < 2 {
            return Err(usage("dimension step needs n >= 1 and m >= 2"));
        }
        let t = n.isqrt() + usize::from(n.isqrt() * n.isqrt() < n);
        let bucket = if t > 1 { Some(KWiseSymbols::new(n, t as u128, k, delta_map)?) } else { None };
        let within = KWiseSymbols::new(n, m, k, delta_map)?;
        let r0 = within.seed_bits();
        Ok(DimStepPlan { m, n, t, k, bucket, within, r0 })
    }

    /// Seed bits of the bucket hash; the inner generator's seed follows.
    pub fn seed_bits(&self) -> usize {
        self.bucket.map_or(0, |b| b.seed_bits())
    }

    /// Alphabet [2^r0] of the inner generator.
    pub fn inner_alphabet(&self) -> Alphabet {
        Alphabet::from_bits(self.r0 as u32)
    }

    pub(crate) fn read_hash(&self, r: &mut SeedReader<'_>) -> Vec<usize> {
        match &self.bucket {
            None => vec![0; self.n],
            Some(b) => {
                let c = b.family.read_coefficients(r);
                (0..self.n).map(|i| b.eval(&c, i) as usize).collect()
            }
        }
    }

    pub fn hash(&self, seed: &BitString) -> Result<Vec<usize>> {
        check_seed(self.seed_bits(), seed.len())?;
        Ok(self.read_hash(&mut SeedReader::new(seed)))
    }

    pub(crate) fn assemble(&self, h: &[usize], blocks: &[BitString]) -> Vec<u128> {
        let fam = &self.within;
        let mut coeffs: Vec<Option<Coeffs>> = vec![None; self.t];
        h.iter()
            .enumerate()
            .map(|(i, &j)| {
                let c = coeffs[j].get_or_insert_with(|| {
                    if self.r0 <= 128 {
                        fam.family.coefficients_from_value(blocks[j].read(0, self.r0))
                    } else {
                        Coeffs::from_vec(fam.family.read_coefficients(&mut SeedReader::new(&blocks[j])))
                    }
                });
                fam.eval(c, i)
            })
            .collect()
    }
}

/// Output of one dimension step; `seed` is the hash seed followed by the inner seed.
pub fn dim_step<G: BlockPrg + ?Sized>(
    plan: &DimStepPlan,
    inner: &G,
    seed: &BitString,
) -> Result<Vec<u128>> {
    if inner.block_bits() != plan.r0 || inner.blocks() != plan.t {
        return Err(usage(format!(
            "inner generator must produce {} blocks of {} bits, got {} of {}",
            plan.t,
            plan.r0,
            inner.blocks(),
            inner.block_bits()
        )));
    }
    check_seed(plan.seed_bits() + inner.seed_bits(), seed.len())?;
    let mut r = SeedReader::new(seed);
    let h = plan.read_hash(&mut r);
    let blocks = inner.generate_blocks(&r.take(inner.seed_bits()))?;
    Ok(plan.assemble(&h, &blocks))
}

/// Whether every bucket holds at most k/2 coordinates of variance >= alpha
/// and the remaining variance in every bucket sums to at most beta.
pub fn is_good_hash(h: &[usize], f: &FourierShape, alpha: f64, beta: f64, k: usize) -> Result<bool> {
    if h.len() != f.n() {
        return Err(usage(format!("hash covers {} coordinates, shape has {}", h.len(), f.n())));
    }
    let var = f.stats().variances;
    let buckets = h.iter().max().map_or(0, |&b| b + 1);
    let mut large = vec![0usize; buckets];
    let mut small = vec![0f64; buckets];
    for (&b, &v) in h.iter().zip(&var) {
        if v >= alpha {
            large[b] += 1;
        } else {
            small[b] += v;
        }
    }
    Ok(large.iter().all(|&c| 2 * c <= k) && small.iter().all(|&s| s <= beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prg::{EvalMode, OutputDistribution, UniformBlocks, UniformStub};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_seeds(bits: usize) -> impl Iterator<Item = BitString> {
        (0..1u64 << bits).map(move |s| BitString::from_index(s as u128, bits))
    }

    #[test]
    fn inner_alphabet_sizes() {
        assert_eq!(AlphabetStepPlan::inner_alphabet(Alphabet::Size(16)), 4);
        assert_eq!(AlphabetStepPlan::inner_alphabet(Alphabet::Size(32)), 4);
        assert_eq!(AlphabetStepPlan::inner_alphabet(Alphabet::Size(99)), 9);
        assert_eq!(AlphabetStepPlan::inner_alphabet(Alphabet::Size(100)), 10);
        assert_eq!(AlphabetStepPlan::inner_alphabet(Alphabet::PowerOfTwo(300)), 1 << 64);
    }

    #[test]
    fn step_needs_large_alphabet() {
        let k = Knobs::default();
        assert!(AlphabetStepPlan::new(Alphabet::Size(16), 2, 0.1, &k, 0.01).is_err());
        let s = AlphabetStepPlan::new(Alphabet::Size(256), 2, 0.1, &k, 0.01).unwrap();
        assert_eq!((s.d, s.column_bits()), (16, 16));
    }

    #[test]
    fn chain_lengths() {
        let k = Knobs::default();
        // m = n^8 takes exactly one step, to n^4
        let steps = alphabet_steps(Alphabet::Size(1 << 16), 4, 0.1, &k, 0.01).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].d, 256);
        assert!(alphabet_steps(Alphabet::Size(256), 4, 0.1, &k, 0.01).unwrap().is_empty());
        let wide = alphabet_steps(Alphabet::PowerOfTwo(300), 16, 0.1, &k, 0.01).unwrap();
        let ds: Vec<u128> = wide.iter().map(|s| s.d).collect();
        assert_eq!(ds, vec![1 << 64, 1 << 32, 1 << 16]);
        assert_eq!(wide[0].columns.len(), 3);
    }

    #[test]
    fn degenerate_inner_alphabet_reads_first_row() {
        let plan = AlphabetStepPlan::forced(Alphabet::Size(2), 3, 2, 0.01).unwrap();
        assert_eq!(plan.d, 1);
        let inner = UniformStub::new(1, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let s = BitString::random(&mut rng, plan.seed_bits());
            let z = alphabet_step(&plan, &inner, &s).unwrap();
            assert_eq!(z, plan.matrix(&s).unwrap()[0]);
        }
    }

    struct Step<'a> {
        plan: &'a AlphabetStepPlan,
        inner: UniformStub,
    }

    impl Prg for Step<'_> {
        fn alphabet(&self) -> u128 {
            self.plan.m.size().unwrap()
        }
        fn dimension(&self) -> usize {
            self.plan.n
        }
        fn seed_bits(&self) -> usize {
            self.plan.seed_bits() + self.inner.seed_bits()
        }
        fn generate(&self, seed: &BitString) -> Result<Vec<u128>> {
            alphabet_step(self.plan, &self.inner, seed)
        }
    }

    #[test]
    fn step_marginals_uniform() {
        let plan = AlphabetStepPlan::forced(Alphabet::Size(16), 2, 2, 0.01).unwrap();
        assert_eq!(plan.d, 4);
        let g = Step { plan: &plan, inner: UniformStub::new(4, 2).unwrap() };
        assert_eq!(g.seed_bits(), 20);
        let dist = OutputDistribution::collect(&g, EvalMode::enumerate()).unwrap();
        for j in 0..2 {
            let mut marg = [0f64; 16];
            for (x, p) in dist.probabilities() {
                marg[x[j] as usize] += p;
            }
            assert!(marg.iter().all(|&p| (p - 1.0 / 16.0).abs() < 1e-15), "{marg:?}");
        }
    }

    #[test]
    fn step_with_uniform_matrix_is_uniform() {
        for (m, n) in [(4u128, 2usize), (8, 2), (8, 1)] {
            // k = n makes the column seeds fully independent
            let plan = AlphabetStepPlan::forced(Alphabet::Size(m), n, n.max(2), 0.5).unwrap();
            let g = Step { plan: &plan, inner: UniformStub::new(plan.d, n).unwrap() };
            let dist = OutputDistribution::collect(&g, EvalMode::enumerate()).unwrap();
            let ps: Vec<f64> = dist.probabilities().map(|(_, p)| p).collect();
            assert_eq!(ps.len() as u128, m.pow(n as u32));
            assert!(ps.iter().all(|&p| p == ps[0]));
        }
    }

    #[test]
    fn column_average_variance() {
        let plan = AlphabetStepPlan::forced(Alphabet::Size(16), 1, 2, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = FourierShape::random(&mut rng, 16, 1);
        let var = f.stats().variances[0];
        let col = &plan.columns[0];
        let (mut s1, mut s2) = (Complex64::new(0.0, 0.0), 0.0);
        let total = 1u64 << col.seed_bits();
        for seed in all_seeds(col.seed_bits()) {
            let c = col.family.coefficients(&seed).unwrap();
            let a = (0..plan.d as usize).map(|l| f.get(0, col.eval(&c, l) as usize)).sum::<Complex64>()
                / plan.d as f64;
            s1 += a;
            s2 += a.norm_sqr();
        }
        let mean = s1 / total as f64;
        let got = s2 / total as f64 - mean.norm_sqr();
        assert!((mean - f.uniform_expectation()).norm() < 1e-12);
        assert!((got - var / plan.d as f64).abs() < 1e-10, "{got} vs {}", var / plan.d as f64);
    }

    #[test]
    fn bias_function_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = FourierShape::constant(5, 3);
        assert_eq!(bias_function(&c, &[vec![1, 2, 3], vec![0, 4, 4]]).unwrap(), Complex64::new(1.0, 0.0));
        let f = FourierShape::random(&mut rng, 5, 3);
        let row = vec![4, 0, 2];
        assert!((bias_function(&f, std::slice::from_ref(&row)).unwrap() - f.eval(&row).unwrap()).norm() < 1e-15);
        let x: Vec<Vec<u128>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(0..5)).collect()).collect();
        let mut direct = Complex64::new(1.0, 0.0);
        for j in 0..3 {
            let mut s = Complex64::new(0.0, 0.0);
            for row in &x {
                s += f.get(j, row[j] as usize);
            }
            direct *= s / 4.0;
        }
        assert!((bias_function(&f, &x).unwrap() - direct).norm() < 1e-12);
        assert!(bias_function(&f, &[vec![5, 0, 0]]).is_err());
    }

    #[test]
    fn wide_columns_concatenate_chunks() {
        let plan = AlphabetStepPlan::forced(Alphabet::PowerOfTwo(200), 2, 2, 0.01).unwrap();
        assert_eq!(plan.columns.len(), 2);
        assert_eq!(plan.column_bits(), 400);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = BitString::random(&mut rng, plan.seed_bits());
        let cols = plan.read_columns(&mut SeedReader::new(&s));
        let z = plan.apply_bits(&cols, &[5, 7]);
        assert!(z.iter().all(|b| b.len() == 200));
        assert_ne!(z[0], z[1]);
    }

    #[test]
    fn dim_step_single_bucket() {
        let plan = DimStepPlan::with_k(2, 1, 3, 0.01).unwrap();
        assert_eq!((plan.t, plan.seed_bits()), (1, 0));
        let inner = UniformBlocks { block_bits: plan.r0, blocks: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = BitString::random(&mut rng, plan.r0);
        assert_eq!(dim_step(&plan, &inner, &s).unwrap(), plan.within.sample(&s).unwrap());
        let plan = DimStepPlan::with_k(2, 4, 2, 0.01).unwrap();
        assert_eq!(plan.t, 2);
    }

    struct Dim<'a> {
        plan: &'a DimStepPlan,
        inner: UniformBlocks,
    }

    impl Prg for Dim<'_> {
        fn alphabet(&self) -> u128 {
            self.plan.m
        }
        fn dimension(&self) -> usize {
            self.plan.n
        }
        fn seed_bits(&self) -> usize {
            self.plan.seed_bits() + BlockPrg::seed_bits(&self.inner)
        }
        fn generate(&self, seed: &BitString) -> Result<Vec<u128>> {
            dim_step(self.plan, &self.inner, seed)
        }
    }

    #[test]
    fn dim_step_uniform_stubs() {
        for n in 2..=6 {
            // k = n: every family involved is fully independent
            let plan = DimStepPlan::with_k(2, n, n, 0.01).unwrap();
            let g = Dim { plan: &plan, inner: UniformBlocks { block_bits: plan.r0, blocks: plan.t } };
            if g.seed_bits() > 24 {
                continue;
            }
            let dist = OutputDistribution::collect(&g, EvalMode::enumerate()).unwrap();
            let ps: Vec<f64> = dist.probabilities().map(|(_, p)| p).collect();
            assert_eq!(ps.len(), 1 << n, "n = {n}");
            assert!(ps.iter().all(|&p| p == ps[0]), "n = {n}");
        }
    }

    #[test]
    fn dim_step_marginals_nine_coordinates() {
        let plan = DimStepPlan::with_k(2, 9, 2, 0.01).unwrap();
        assert_eq!(plan.t, 3);
        let inner = UniformBlocks { block_bits: plan.r0, blocks: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let hs = BitString::random(&mut rng, plan.seed_bits());
            let h = plan.hash(&hs).unwrap();
            // coordinate i depends on block h(i) only; enumerate that block
            for i in 0..9 {
                let mut ones = 0u64;
                for b in 0..1u128 << plan.r0 {
                    let mut blocks = BitString::zeros(3 * plan.r0);
                    blocks.write(h[i] * plan.r0, plan.r0, b);
                    let z = dim_step(&plan, &inner, &BitString::concat(&[&hs, &blocks])).unwrap();
                    ones += z[i] as u64;
                }
                assert_eq!(2 * ones, 1u64 << plan.r0);
            }
        }
    }

    #[test]
    fn good_hash_cases() {
        let c = FourierShape::constant(2, 8);
        assert!(is_good_hash(&[0, 1, 2, 0, 1, 2, 0, 1], &c, 0.1, 0.0, 2).unwrap());
        let f = FourierShape::from_rows(
            2,
            (0..4).map(|_| vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)]).collect(),
        )
        .unwrap();
        assert!(!is_good_hash(&[0; 4], &f, 0.5, 1.0, 4).unwrap());
        assert!(is_good_hash(&[0, 0, 1, 1], &f, 0.5, 1.0, 4).unwrap());
    }

    #[test]
    fn good_hash_fraction_low_variance() {
        let n = 16;
        let alpha = (n as f64).powf(-1.0 / 3.0);
        let beta = (n as f64).powf(-1.0 / 36.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = FourierShape::random(&mut rng, 2, n).scaled_toward_mean(0.3).unwrap();
        assert!(f.tvar() <= (n as f64).powf(1.0 / 9.0), "{}", f.tvar());
        let plan = DimStepPlan::with_k(2, n, 4, 0.01).unwrap();
        assert_eq!(plan.seed_bits(), 16);
        let good = all_seeds(16).filter(|s| is_good_hash(&plan.hash(s).unwrap(), &f, alpha, beta, 4).unwrap()).count();
        let frac = good as f64 / 65536.0;
        assert!(frac >= 0.9, "{frac}");
    }
}
