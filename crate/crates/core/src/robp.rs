//! Read-once branching programs with complex terminal labels, the recycling
//! generator that fools them, and the compilation of Fourier shapes into
//! programs.

use std::collections::HashMap;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::{BitString, SeedReader};
use crate::error::{check_seed, refused, usage, Result};
use crate::field::{ceil_log2, Field};
use crate::shapes::FourierShape;

const LABEL_SLACK: f64 = 1e-12;

/// Largest layer the shape compiler will materialize.
pub const MAX_COMPILED_WIDTH: usize = 1 << 20;

/// Layer `i` has `widths[i]` states; `transitions[i][s << block_bits | x]`
/// is the successor in layer `i + 1` of state `s` on block `x`. The start
/// state is state 0 of layer 0, and layer T carries the labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Robp {
    pub state_bits: u32,
    pub block_bits: u32,
    pub widths: Vec<usize>,
    pub transitions: Vec<Vec<u32>>,
    pub labels: Vec<Complex64>,
}

impl Robp {
    pub fn new(
        state_bits: u32,
        block_bits: u32,
        widths: Vec<usize>,
        transitions: Vec<Vec<u32>>,
        labels: Vec<Complex64>,
    ) -> Result<Self> {
        let p = Robp { state_bits, block_bits, widths, transitions, labels };
        p.validate()?;
        Ok(p)
    }

    pub fn steps(&self) -> usize {
        self.transitions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.transitions.len();
        if self.block_bits > 16 {
            return Err(usage(format!("{} bits per step is too many", self.block_bits)));
        }
        if self.widths.len() != t + 1 || self.widths[0] != 1 {
            return Err(usage("program must have T+1 layers and a single start state"));
        }
        let cap = 1usize.checked_shl(self.state_bits).unwrap_or(usize::MAX);
        if let Some(w) = self.widths.iter().find(|&&w| w == 0 || w > cap) {
            return Err(usage(format!("layer width {w} outside 1..=2^{}", self.state_bits)));
        }
        for (i, layer) in self.transitions.iter().enumerate() {
            if layer.len() != self.widths[i] << self.block_bits {
                return Err(usage(format!("layer {i} has {} transitions", layer.len())));
            }
            if layer.iter().any(|&s| s as usize >= self.widths[i + 1]) {
                return Err(usage(format!("layer {i} has an edge leaving the next layer")));
            }
        }
        if self.labels.len() != self.widths[t] {
            return Err(usage("one label per final state required"));
        }
        if self.labels.iter().any(|z| !(z.norm() <= 1.0 + LABEL_SLACK)) {
            return Err(usage("labels must lie in the unit disk"));
        }
        Ok(())
    }

    /// Label of the state reached on the given blocks.
    pub fn eval(&self, input: &[u32]) -> Result<Complex64> {
        if input.len() != self.steps() {
            return Err(usage(format!("expected {} blocks, got {}", self.steps(), input.len())));
        }
        let mut s = 0usize;
        for (layer, &x) in self.transitions.iter().zip(input) {
            if x >> self.block_bits != 0 {
                return Err(usage(format!("block {x} wider than {} bits", self.block_bits)));
            }
            s = layer[s << self.block_bits | x as usize] as usize;
        }
        Ok(self.labels[s])
    }

    /// Reads `T` consecutive `D`-bit blocks from a bit string.
    pub fn eval_bits(&self, bits: &BitString) -> Result<Complex64> {
        let d = self.block_bits as usize;
        check_seed(d * self.steps(), bits.len())?;
        let blocks: Vec<u32> = (0..self.steps()).map(|i| bits.read(i * d, d) as u32).collect();
        self.eval(&blocks)
    }

    /// Exact expectation under uniform input, by propagating the state
    /// distribution layer by layer.
    pub fn uniform_expectation(&self) -> Complex64 {
        let fan = 1usize << self.block_bits;
        let mut dist = vec![1.0f64];
        for (i, layer) in self.transitions.iter().enumerate() {
            let mut next = vec![0.0; self.widths[i + 1]];
            for (s, &p) in dist.iter().enumerate() {
                for x in 0..fan {
                    next[layer[s * fan + x] as usize] += p / fan as f64;
                }
            }
            dist = next;
        }
        dist.iter().zip(&self.labels).map(|(&p, &z)| z * p).sum()
    }

    /// Full-width program with uniformly random edges and labels.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, state_bits: u32, block_bits: u32, steps: usize) -> Self {
        let w = 1usize << state_bits;
        let mut widths = vec![w; steps + 1];
        widths[0] = 1;
        let transitions = (0..steps)
            .map(|i| (0..widths[i] << block_bits).map(|_| rng.random_range(0..w as u32)).collect())
            .collect();
        let labels = (0..w)
            .map(|_| {
                let r: f64 = rng.random::<f64>().sqrt();
                Complex64::from_polar(r, rng.random::<f64>() * std::f64::consts::TAU)
            })
            .collect();
        Robp { state_bits, block_bits, widths, transitions, labels }
    }
}

pub fn robp_eval(p: &Robp, input: &[u32]) -> Result<Complex64> {
    p.validate()?;
    p.eval(input)
}

/// Second eigenvalue bound 5 sqrt(2) / 8 of the Gabber-Galil graph.
pub const WALK_LAMBDA: f64 = 0.883_883_476_483_184_4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelHash {
    /// x -> a*x + b over GF(2^d); for blocks of at most 128 bits.
    Affine,
    /// A walk of `steps` steps on the 8-regular Gabber-Galil expander over
    /// (Z_M)^2, M = 2^(d/2), three seed bits per step; for wider blocks.
    Walk { steps: usize },
    /// x -> x; test-only degenerate hash.
    Identity,
}

impl LevelHash {
    /// Affine up to 128 bits; otherwise a walk long enough that
    /// lambda^steps <= delta / levels.
    pub fn for_width(d: usize, levels: u32, delta: f64) -> Self {
        if d <= 128 {
            LevelHash::Affine
        } else {
            let need = (levels.max(1) as f64 / delta).log2() / (1.0 / WALK_LAMBDA).log2();
            LevelHash::Walk { steps: (need.ceil() as usize).max(1) }
        }
    }

    pub fn seed_bits(&self, d: usize) -> usize {
        match self {
            LevelHash::Affine => 2 * d,
            LevelHash::Walk { steps } => 3 * steps,
            LevelHash::Identity => 0,
        }
    }
}

/// One step from vertex (x, y) of the Gabber-Galil graph mod 2^h: op 0..3
/// adds 2y, 2y + 1 to x or 2x, 2x + 1 to y; op 4..7 subtracts the same.
fn walk_step(x: &mut [u64], y: &mut [u64], op: u8, h: usize) {
    let (dst, src) = if op & 2 == 0 { (x, &*y) } else { (y, &*x) };
    let mut carry = u64::from(op & 1);
    let mut t = vec![0u64; src.len()];
    for (ti, &si) in t.iter_mut().zip(src) {
        *ti = (si << 1) | carry;
        carry = si >> 63;
    }
    if op & 4 == 0 {
        let mut c = false;
        for (d, &ti) in dst.iter_mut().zip(&t) {
            let (s1, o1) = d.overflowing_add(ti);
            let (s2, o2) = s1.overflowing_add(u64::from(c));
            *d = s2;
            c = o1 || o2;
        }
    } else {
        let mut b = false;
        for (d, &ti) in dst.iter_mut().zip(&t) {
            let (s1, o1) = d.overflowing_sub(ti);
            let (s2, o2) = s1.overflowing_sub(u64::from(b));
            *d = s2;
            b = o1 || o2;
        }
    }
    if h % 64 != 0 {
        if let Some(top) = dst.last_mut() {
            *top &= (1u64 << (h % 64)) - 1;
        }
    }
}

/// Walks from the vertex encoded by `v` (two halves of d bits) along `ops`.
fn walk(v: &BitString, ops: &BitString) -> BitString {
    let h = v.len() / 2;
    let mut x = v.slice(0, h).to_words();
    let mut y = v.slice(h, h).to_words();
    for i in 0..ops.len() / 3 {
        walk_step(&mut x, &mut y, ops.read(3 * i, 3) as u8, h);
    }
    BitString::concat(&[&BitString::from_words(&x, h), &BitString::from_words(&y, h)])
}

/// Recursive seed recycling: the output on seed (x, h_0, ..., h_{L-1}) is
/// G_L(x), where G_0(x) = x and G_{i+1}(x) = G_i(x) || G_i(h_i(x)).
/// Internal blocks have `inner_bits` bits; each is truncated to its first
/// `block_bits` bits on output, and blocks past `blocks` are discarded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InwGenerator {
    pub block_bits: usize,
    pub inner_bits: usize,
    pub blocks: usize,
    pub levels: u32,
    pub hash: LevelHash,
}

impl InwGenerator {
    /// Inner block length max(D, ceil(log2(L / delta))) for L = ceil(log2 T)
    /// levels: every pair of blocks split at a level collides with
    /// probability 2^-d, which is spread evenly over the levels.
    pub fn new(block_bits: usize, blocks: usize, delta: f64) -> Result<Self> {
        if blocks == 0 {
            return Err(usage("at least one block is required"));
        }
        let levels = ceil_log2(blocks as u128);
        let floor = if levels == 0 { 0 } else { (levels as f64 / delta).log2().ceil() as usize };
        Self::with_inner_bits(block_bits, blocks, block_bits.max(floor).max(1), delta)
    }

    /// Blocks wider than 128 bits are rounded up to an even width for the walk.
    pub fn with_inner_bits(
        block_bits: usize,
        blocks: usize,
        inner_bits: usize,
        delta: f64,
    ) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(usage(format!("error budget {delta} must lie in (0, 1)")));
        }
        if inner_bits < block_bits || inner_bits == 0 {
            return Err(usage("inner blocks must be at least as wide as output blocks"));
        }
        let levels = ceil_log2(blocks as u128);
        let inner_bits = if inner_bits > 128 { inner_bits + inner_bits % 2 } else { inner_bits };
        Ok(InwGenerator {
            block_bits,
            inner_bits,
            blocks,
            levels,
            hash: LevelHash::for_width(inner_bits, levels, delta),
        })
    }

    /// Same shape with every level hash replaced by the identity.
    pub fn degenerate(mut self) -> Self {
        self.hash = LevelHash::Identity;
        self
    }

    pub fn seed_bits(&self) -> usize {
        self.inner_bits + self.levels as usize * self.hash.seed_bits(self.inner_bits)
    }

    pub fn output_bits(&self) -> usize {
        self.block_bits * self.blocks
    }

    pub fn expand(&self, seed: &BitString) -> Result<Vec<BitString>> {
        check_seed(self.seed_bits(), seed.len())?;
        Ok(self.read_expand(&mut SeedReader::new(seed)))
    }

    /// Block values as integers, when blocks and the hash domain fit in 128 bits.
    pub(crate) fn read_expand_values(&self, r: &mut SeedReader<'_>) -> Option<Vec<u128>> {
        let d = self.inner_bits;
        if matches!(self.hash, LevelHash::Walk { .. }) || d > 128 {
            return None;
        }
        let x0 = r.take_u128(d);
        let shift = d - self.block_bits;
        if matches!(self.hash, LevelHash::Identity) {
            return Some(vec![x0 >> shift; self.blocks]);
        }
        let f = Field::Binary { degree: d as u32 };
        let mut ab = [(0u128, 0u128); 64];
        for h in ab.iter_mut().take(self.levels as usize) {
            *h = (r.take_u128(d), r.take_u128(d));
        }
        // Block j applies the hashes of its set bits, highest level first, so
        // the values unfold one level at a time: v -> (v, h_l(v)).
        let mut vals = Vec::with_capacity(self.blocks.next_power_of_two());
        vals.push(x0);
        for l in (0..self.levels as usize).rev() {
            let (a, b) = ab[l];
            let len = vals.len();
            vals.resize(2 * len, 0);
            for i in (0..len).rev() {
                let v = vals[i];
                vals[2 * i] = v;
                vals[2 * i + 1] = f.mul(a, v) ^ b;
            }
        }
        vals.truncate(self.blocks);
        vals.iter_mut().for_each(|v| *v >>= shift);
        Some(vals)
    }

    pub(crate) fn read_expand(&self, r: &mut SeedReader<'_>) -> Vec<BitString> {
        let d = self.inner_bits;
        let LevelHash::Walk { .. } = self.hash else {
            if d <= 128 {
                let vals = self.read_expand_values(r).expect("narrow hash");
                return vals.into_iter().map(|v| BitString::from_index(v, self.block_bits)).collect();
            }
            let x = r.take(d);
            return (0..self.blocks).map(|_| x.slice(0, self.block_bits)).collect();
        };
        let x = r.take(d);
        let ops: Vec<BitString> =
            (0..self.levels).map(|_| r.take(self.hash.seed_bits(d))).collect();
        let mut vals = vec![x];
        for l in (0..self.levels as usize).rev() {
            vals = vals.into_iter().flat_map(|v| [walk(&v, &ops[l]), v].into_iter().rev()).collect();
        }
        vals.truncate(self.blocks);
        vals.into_iter().map(|v| v.slice(0, self.block_bits)).collect()
    }
}

pub fn inw_expand(g: &InwGenerator, seed: &BitString) -> Result<Vec<BitString>> {
    g.expand(seed)
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Acc {
    Zero,
    Polar { phase: u64, mag: u64 },
}

/// Compiles f over [2^D]^n into a program whose state is the running
/// product in fixed point: phase in turns and magnitude, each rounded to
/// `precision_bits` bits (ties to even) after every step. Entries that
/// round to magnitude zero send the program to an absorbing zero state.
pub fn shape_to_robp(f: &FourierShape, precision_bits: u32) -> Result<Robp> {
    if !f.m().is_power_of_two() {
        return Err(usage(format!("alphabet {} is not a power of two", f.m())));
    }
    if precision_bits == 0 || precision_bits > 52 {
        return Err(usage("precision must be between 1 and 52 bits"));
    }
    let block_bits = f.m().trailing_zeros();
    let one = 1u64 << precision_bits;
    let scale = one as f64;
    let quantized: Vec<Vec<Option<(u64, f64)>>> = (0..f.n())
        .map(|j| {
            (0..f.m())
                .map(|x| {
                    let z = f.get(j, x);
                    let r = z.norm().min(1.0);
                    if (r * scale).round_ties_even() == 0.0 {
                        return None;
                    }
                    let turns = (z.arg() / std::f64::consts::TAU).rem_euclid(1.0);
                    let inc = ((turns * scale).round_ties_even() as u64) & (one - 1);
                    Some((inc, r))
                })
                .collect()
        })
        .collect();

    let mut layer: Vec<Acc> = vec![Acc::Polar { phase: 0, mag: one }];
    let mut widths = vec![1usize];
    let mut transitions = Vec::with_capacity(f.n());
    for row in &quantized {
        let mut index: HashMap<Acc, u32> = HashMap::new();
        let mut next: Vec<Acc> = Vec::new();
        let mut edges = Vec::with_capacity(layer.len() * f.m());
        for &state in &layer {
            for entry in row {
                let target = match (state, entry) {
                    (Acc::Zero, _) | (_, None) => Acc::Zero,
                    (Acc::Polar { phase, mag }, Some((inc, r))) => {
                        let m = (mag as f64 * r).round_ties_even() as u64;
                        if m == 0 {
                            Acc::Zero
                        } else {
                            Acc::Polar { phase: (phase + inc) & (one - 1), mag: m }
                        }
                    }
                };
                let id = *index.entry(target).or_insert_with(|| {
                    next.push(target);
                    (next.len() - 1) as u32
                });
                edges.push(id);
            }
        }
        if next.len() > MAX_COMPILED_WIDTH {
            return Err(refused(format!(
                "compiled program needs {} states per layer (cap {MAX_COMPILED_WIDTH})",
                next.len()
            )));
        }
        widths.push(next.len());
        transitions.push(edges);
        layer = next;
    }
    let labels = layer
        .iter()
        .map(|s| match *s {
            Acc::Zero => Complex64::new(0.0, 0.0),
            Acc::Polar { phase, mag } => Complex64::from_polar(
                mag as f64 / scale,
                phase as f64 / scale * std::f64::consts::TAU,
            ),
        })
        .collect();
    let state_bits = ceil_log2(*widths.iter().max().unwrap() as u128);
    Robp::new(state_bits, block_bits, widths, transitions, labels)
}

/// Default precision 2*ceil(log2(n / delta)) bits.
pub fn default_precision(n: usize, delta: f64) -> u32 {
    2 * (n.max(1) as f64 / delta).log2().ceil().max(1.0) as u32
}
