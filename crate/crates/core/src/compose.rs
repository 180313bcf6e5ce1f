//! The top-level generator: XOR (sum mod m) of the high-variance generator
//! with a dimension step over an alphabet-reduced recursive generator, down
//! to a recycling base case once n <= n0.
//!
//! Seeds are sliced depth-first, left child first, so a serialized plan and
//! a seed determine the output.

use serde::{Deserialize, Serialize};

use crate::bits::{BitString, SeedReader};
use crate::config::Knobs;
use crate::error::{check_seed, usage, Result};
use crate::families::{KWiseSymbols, SmallBiasFamily};
use crate::field::ceil_log2;
use crate::highvar::{G1Plan, GLargePlan};
use crate::prg::{Alphabet, BlockPrg, Prg};
use crate::reduce::{alphabet_reduce, AlphabetStepPlan, DimStepPlan};
use crate::robp::InwGenerator;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "node", rename_all = "kebab-case")]
pub enum Plan {
    Kwise { family: KWiseSymbols },
    /// Bits of a small-bias string as symbols of [2].
    SmallBiasLift { family: SmallBiasFamily },
    G1 { plan: G1Plan },
    Glarge { plan: Box<GLargePlan> },
    AlphabetChain { steps: Vec<AlphabetStepPlan>, base: Box<Generator> },
    DimStep { step: DimStepPlan, inner: Box<Generator> },
    XorCompose { left: Box<Generator>, right: Box<Generator> },
    /// Recycled blocks of `symbol_bits` bits, each reduced mod m. When the
    /// recycler would not be shorter than the raw output it is a single block.
    InwBase { inw: InwGenerator, symbol_bits: u32 },
    UniformStub { bits_per_symbol: u32 },
    ConstantStub { symbol: u128 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub m: Alphabet,
    pub n: usize,
    pub seed_bits: usize,
    /// Error budget this node was planned for.
    pub eps: f64,
    pub plan: Plan,
}

fn add_mod(a: u128, b: u128, m: u128) -> u128 {
    if a >= m - b {
        a - (m - b)
    } else {
        a + b
    }
}

fn narrow(m: Alphabet) -> Result<u128> {
    m.size().ok_or_else(|| usage(format!("alphabet {m} too large for integer symbols")))
}

impl Generator {
    /// Wraps a plan, recording its total seed length.
    pub fn new(m: Alphabet, n: usize, eps: f64, plan: Plan) -> Result<Self> {
        let mut g = Generator { m, n, seed_bits: 0, eps, plan };
        g.seed_bits = g.local_seed_bits() + g.children().iter().map(|c| c.seed_bits).sum::<usize>();
        g.check_shape()?;
        Ok(g)
    }

    pub fn uniform_stub(m: u128, n: usize) -> Result<Self> {
        if m < 1 {
            return Err(usage("alphabet must be nonempty"));
        }
        Self::new(Alphabet::Size(m), n, 0.0, Plan::UniformStub { bits_per_symbol: ceil_log2(m) })
    }

    pub fn constant(m: u128, n: usize, symbol: u128) -> Result<Self> {
        Self::new(Alphabet::Size(m), n, 0.0, Plan::ConstantStub { symbol })
    }

    pub fn kwise(m: u128, n: usize, k: usize, delta_map: f64) -> Result<Self> {
        let family = KWiseSymbols::new(n, m, k, delta_map)?;
        Self::new(Alphabet::Size(m), n, 0.0, Plan::Kwise { family })
    }

    pub fn small_bias(n: usize, delta: f64) -> Result<Self> {
        let family = SmallBiasFamily::new(n, delta)?;
        Self::new(Alphabet::Size(2), n, delta, Plan::SmallBiasLift { family })
    }

    pub fn xor(left: Generator, right: Generator) -> Result<Self> {
        let eps = left.eps + right.eps;
        Self::new(left.m, left.n, eps, Plan::XorCompose { left: Box::new(left), right: Box::new(right) })
    }

    pub fn alphabet_chain(
        m: Alphabet,
        delta: f64,
        steps: Vec<AlphabetStepPlan>,
        base: Generator,
    ) -> Result<Self> {
        let n = base.n;
        Self::new(m, n, delta, Plan::AlphabetChain { steps, base: Box::new(base) })
    }

    /// Recycling base case over [m]^n, or the raw seed when that is shorter.
    pub fn inw_base(m: u128, n: usize, delta: f64, delta_map: f64) -> Result<Self> {
        if m < 2 || n == 0 {
            return Err(usage("base case needs m >= 2 and n >= 1"));
        }
        let mut b = ceil_log2(m);
        if !m.is_power_of_two() {
            // mod-m reduction of b uniform bits is within m / 2^b per symbol
            b += ceil_log2((n as f64 / delta_map).ceil() as u128);
        }
        let raw = n * b as usize;
        let recycled = InwGenerator::new(b as usize, n, delta)?;
        let inw = if recycled.seed_bits() < raw {
            recycled
        } else {
            InwGenerator::with_inner_bits(raw, 1, raw, delta)?
        };
        Self::new(Alphabet::Size(m), n, delta, Plan::InwBase { inw, symbol_bits: b })
    }

    pub fn local_seed_bits(&self) -> usize {
        match &self.plan {
            Plan::Kwise { family } => family.seed_bits(),
            Plan::SmallBiasLift { family } => family.seed_bits(),
            Plan::G1 { plan } => plan.seed_bits(),
            Plan::Glarge { plan } => plan.seed_bits(),
            Plan::AlphabetChain { steps, .. } => steps.iter().map(|s| s.seed_bits()).sum(),
            Plan::DimStep { step, .. } => step.seed_bits(),
            Plan::XorCompose { .. } | Plan::ConstantStub { .. } => 0,
            Plan::InwBase { inw, .. } => inw.seed_bits(),
            Plan::UniformStub { bits_per_symbol } => self.n * *bits_per_symbol as usize,
        }
    }

    pub fn children(&self) -> Vec<&Generator> {
        match &self.plan {
            Plan::AlphabetChain { base, .. } => vec![base],
            Plan::DimStep { inner, .. } => vec![inner],
            Plan::XorCompose { left, right } => vec![left, right],
            _ => vec![],
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.plan {
            Plan::Kwise { .. } => "kwise",
            Plan::SmallBiasLift { .. } => "small-bias-lift",
            Plan::G1 { .. } => "g1",
            Plan::Glarge { .. } => "glarge",
            Plan::AlphabetChain { .. } => "alphabet-chain",
            Plan::DimStep { .. } => "dim-step",
            Plan::XorCompose { .. } => "xor-compose",
            Plan::InwBase { .. } => "inw-base",
            Plan::UniformStub { .. } => "uniform-stub",
            Plan::ConstantStub { .. } => "constant-stub",
        }
    }

    /// Checks this node's alphabet and dimension against its plan and children.
    fn check_shape(&self) -> Result<()> {
        let bad = |what: &str| Err(usage(format!("{} node: {what}", self.kind())));
        let m = self.m;
        match &self.plan {
            Plan::Kwise { family } => {
                if Alphabet::Size(family.m) != m || family.n() != self.n {
                    return bad("family does not match [m]^n");
                }
            }
            Plan::SmallBiasLift { family } => {
                if m != Alphabet::Size(2) || family.n != self.n {
                    return bad("small-bias strings give [2]^n");
                }
            }
            Plan::G1 { plan } => {
                if Alphabet::Size(plan.m) != m || plan.n != self.n {
                    return bad("plan does not match [m]^n");
                }
            }
            Plan::Glarge { plan } => {
                if Alphabet::Size(plan.m) != m || plan.n != self.n {
                    return bad("plan does not match [m]^n");
                }
            }
            Plan::AlphabetChain { steps, base } => {
                let mut a = m;
                for s in steps {
                    if s.m != a || s.n != self.n {
                        return bad("steps do not chain");
                    }
                    a = Alphabet::Size(s.d);
                }
                if base.m != a || base.n != self.n {
                    return bad("base does not match the last step");
                }
            }
            Plan::DimStep { step, inner } => {
                if Alphabet::Size(step.m) != m || step.n != self.n {
                    return bad("step does not match [m]^n");
                }
                if inner.m != step.inner_alphabet() || inner.n != step.t {
                    return bad("inner generator must give t blocks of r0 bits");
                }
            }
            Plan::XorCompose { left, right } => {
                if left.m != m || right.m != m || left.n != self.n || right.n != self.n {
                    return bad("children must share [m]^n");
                }
                narrow(m)?;
            }
            Plan::InwBase { inw, symbol_bits } => {
                let mm = narrow(m)?;
                if inw.output_bits() != self.n * *symbol_bits as usize || *symbol_bits < ceil_log2(mm) {
                    return bad("recycler output does not cover n symbols");
                }
            }
            Plan::UniformStub { bits_per_symbol } => {
                if *bits_per_symbol < ceil_log2(narrow(m)?) || *bits_per_symbol > 128 {
                    return bad("symbol width does not cover the alphabet");
                }
            }
            Plan::ConstantStub { symbol } => {
                if *symbol >= narrow(m)? {
                    return bad("symbol outside the alphabet");
                }
            }
        }
        Ok(())
    }

    /// Recomputes seed lengths and shapes over the whole tree.
    pub fn validate(&self) -> Result<()> {
        self.check_shape()?;
        for c in self.children() {
            c.validate()?;
        }
        let sum = self.local_seed_bits() + self.children().iter().map(|c| c.seed_bits).sum::<usize>();
        if sum != self.seed_bits {
            return Err(usage(format!(
                "{} node records {} seed bits, its parts use {sum}",
                self.kind(),
                self.seed_bits
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates a plan whose top-level alphabet fits in u128.
    pub fn from_json(text: &str) -> Result<Self> {
        let g: Generator = serde_json::from_str(text)?;
        g.validate()?;
        narrow(g.m)?;
        Ok(g)
    }

    /// Number of dimension steps on the deepest path.
    pub fn recursion_depth(&self) -> usize {
        let below = self.children().iter().map(|c| c.recursion_depth()).max().unwrap_or(0);
        below + usize::from(matches!(self.plan, Plan::DimStep { .. }))
    }

    pub(crate) fn read_symbols(&self, r: &mut SeedReader<'_>) -> Vec<u128> {
        let m = self.m.size().expect("integer alphabet");
        match &self.plan {
            Plan::Kwise { family } => {
                let c = family.family.read_coefficients(r);
                (0..self.n).map(|i| family.eval(&c, i)).collect()
            }
            Plan::SmallBiasLift { family } => {
                let s = family.read_sample(r);
                (0..self.n).map(|i| u128::from(s.get(i))).collect()
            }
            Plan::G1 { plan } => plan.read_generate(r),
            Plan::Glarge { plan } => plan.read_generate(r),
            Plan::AlphabetChain { steps, base } => {
                let cols: Vec<_> = steps.iter().map(|s| s.read_columns(r)).collect();
                let mut y = base.read_symbols(r);
                for (s, c) in steps.iter().zip(&cols).rev() {
                    y = s.apply(c, &y);
                }
                y
            }
            Plan::DimStep { step, inner } => {
                let h = step.read_hash(r);
                let blocks = inner.read_blocks(r);
                step.assemble(&h, &blocks)
            }
            Plan::XorCompose { left, right } => {
                let a = left.read_symbols(r);
                let b = right.read_symbols(r);
                a.iter().zip(&b).map(|(&x, &y)| add_mod(x, y, m)).collect()
            }
            Plan::InwBase { inw, symbol_bits } => {
                let b = *symbol_bits as usize;
                if inw.block_bits == b {
                    if let Some(v) = inw.read_expand_values(r) {
                        return v.into_iter().map(|x| x % m).collect();
                    }
                }
                let out = BitString::concat(&inw.read_expand(r).iter().collect::<Vec<_>>());
                (0..self.n).map(|i| out.read(i * b, b) % m).collect()
            }
            Plan::UniformStub { bits_per_symbol } => {
                let b = *bits_per_symbol as usize;
                (0..self.n).map(|_| r.take_u128(b) % m).collect()
            }
            Plan::ConstantStub { symbol } => vec![*symbol; self.n],
        }
    }

    /// Symbols as bit strings; the alphabet must be a power of two.
    pub(crate) fn read_blocks(&self, r: &mut SeedReader<'_>) -> Vec<BitString> {
        let bits = self.m.bits() as usize;
        match &self.plan {
            Plan::AlphabetChain { steps, base } if self.m.size().is_none() => {
                let cols: Vec<_> = steps.iter().map(|s| s.read_columns(r)).collect();
                let mut y = base.read_symbols(r);
                for (s, c) in steps.iter().zip(&cols).skip(1).rev() {
                    y = s.apply(c, &y);
                }
                steps[0].apply_bits(&cols[0], &y)
            }
            _ => self.read_symbols(r).into_iter().map(|v| BitString::from_index(v, bits)).collect(),
        }
    }
}

impl Prg for Generator {
    /// Panics for the oversized intermediate alphabets, which never occur at
    /// the top of a plan built or parsed here.
    fn alphabet(&self) -> u128 {
        self.m.size().expect("integer alphabet")
    }
    fn dimension(&self) -> usize {
        self.n
    }
    fn seed_bits(&self) -> usize {
        self.seed_bits
    }
    fn generate(&self, seed: &BitString) -> Result<Vec<u128>> {
        narrow(self.m)?;
        check_seed(self.seed_bits, seed.len())?;
        Ok(self.read_symbols(&mut SeedReader::new(seed)))
    }
}

impl BlockPrg for Generator {
    fn block_bits(&self) -> usize {
        self.m.bits() as usize
    }
    fn blocks(&self) -> usize {
        self.n
    }
    fn seed_bits(&self) -> usize {
        self.seed_bits
    }
    fn generate_blocks(&self, seed: &BitString) -> Result<Vec<BitString>> {
        if !self.m.is_power_of_two() {
            return Err(usage("block output needs a power-of-two alphabet"));
        }
        check_seed(self.seed_bits, seed.len())?;
        Ok(self.read_blocks(&mut SeedReader::new(seed)))
    }
}

/// Error schedule of a build: every level works at `delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposePlan {
    pub eps: f64,
    pub delta: f64,
    pub delta_map: f64,
    pub n0: usize,
    pub tau_hv: Option<f64>,
}

impl ComposePlan {
    /// delta = eps / (4 max(1, ceil(log2 log2 n))).
    pub fn new(n: usize, eps: f64, knobs: &Knobs) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(usage(format!("target error {eps} must lie in (0, 1)")));
        }
        knobs.validate()?;
        let loglog = (n.max(2) as f64).log2().log2().ceil().max(1.0);
        Ok(ComposePlan {
            eps,
            delta: eps / (4.0 * loglog),
            delta_map: eps * knobs.delta_map_frac,
            n0: knobs.n0,
            tau_hv: knobs.tau_hv,
        })
    }
}

struct Builder<'a> {
    knobs: &'a Knobs,
    schedule: ComposePlan,
}

impl Builder<'_> {
    fn level(&self, m: u128, n: usize) -> Result<Generator> {
        let (delta, dm, knobs) = (self.schedule.delta, self.schedule.delta_map, self.knobs);
        if n <= knobs.n0 {
            return Generator::inw_base(m, n, delta, dm);
        }
        if m > (n as u128).saturating_pow(4) {
            return alphabet_reduce(Alphabet::Size(m), n, delta, knobs, dm, &mut |m2, n2| {
                self.level(m2, n2)
            });
        }
        let high = GLargePlan::new(m, n, delta, knobs, dm)?;
        let left = Generator::new(Alphabet::Size(m), n, delta, Plan::Glarge { plan: Box::new(high) })?;
        let step = DimStepPlan::new(m, n, delta, knobs, dm)?;
        let inner = alphabet_reduce(step.inner_alphabet(), step.t, delta, knobs, dm, &mut |m2, t| {
            self.level(m2, t)
        })?;
        let right = Generator::new(
            Alphabet::Size(m),
            n,
            delta,
            Plan::DimStep { step, inner: Box::new(inner) },
        )?;
        Generator::xor(left, right)
    }
}

/// Plans a generator for (m, n)-Fourier shapes at target error eps.
pub fn build_generator(m: u128, n: usize, eps: f64, knobs: &Knobs) -> Result<Generator> {
    if m < 2 || n < 1 {
        return Err(usage("need m >= 2 and n >= 1"));
    }
    let schedule = ComposePlan::new(n, eps, knobs)?;
    let mut g = Builder { knobs, schedule }.level(m, n)?;
    g.eps = eps;
    Ok(g)
}

pub fn generate(g: &Generator, seed: &BitString) -> Result<Vec<u128>> {
    g.generate(seed)
}

pub fn seed_length(g: &Generator) -> usize {
    g.seed_bits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prg::{EvalMode, OutputDistribution};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_dimension_is_a_single_base_node() {
        let g = build_generator(2, 8, 0.1, &Knobs::default()).unwrap();
        assert_eq!(g.kind(), "inw-base");
        assert_eq!(g.recursion_depth(), 0);
        let g = build_generator(2, 64, 0.05, &Knobs::default()).unwrap();
        assert_eq!(g.kind(), "inw-base");
    }

    #[test]
    fn stub_reads_seed_in_base_m() {
        let g = Generator::uniform_stub(4, 3).unwrap();
        assert_eq!(seed_length(&g), 6);
        assert_eq!(g.generate(&BitString::from_index(0b10_00_11, 6)).unwrap(), [2, 0, 3]);
    }

    #[test]
    fn xor_with_zero_is_identity() {
        let k = Generator::kwise(5, 6, 3, 0.01).unwrap();
        let g = Generator::xor(Generator::constant(5, 6, 0).unwrap(), k.clone()).unwrap();
        assert_eq!(g.seed_bits, k.seed_bits);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let s = BitString::random(&mut rng, g.seed_bits);
            assert_eq!(g.generate(&s).unwrap(), k.generate(&s).unwrap());
        }
        let two = Generator::xor(k.clone(), Generator::uniform_stub(5, 6).unwrap()).unwrap();
        assert_eq!(two.seed_bits, k.seed_bits + 18);
    }

    #[test]
    fn large_plan_recursion() {
        let g = build_generator(2, 1 << 16, 0.01, &Knobs::default()).unwrap();
        g.validate().unwrap();
        assert_eq!(g.recursion_depth(), 2);
        assert!(g.seed_bits < 1 << 16, "{}", g.seed_bits);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = BitString::random(&mut rng, g.seed_bits);
        let x = g.generate(&s).unwrap();
        assert_eq!(x.len(), 1 << 16);
        assert!(x.iter().all(|&v| v < 2));
        assert_eq!(x, g.generate(&s).unwrap());
    }

    #[test]
    fn seed_length_monotone_in_eps() {
        let k = Knobs::default();
        for n in [8, 100, 300] {
            let loose = build_generator(2, n, 0.1, &k).unwrap().seed_bits;
            let tight = build_generator(2, n, 0.01, &k).unwrap().seed_bits;
            assert!(tight >= loose, "n = {n}: {tight} < {loose}");
        }
    }

    fn tree_walk(v: &serde_json::Value) -> usize {
        // independent recount from the serialized plan
        let plan = &v["plan"]["node"];
        let n = v["n"].as_u64().unwrap() as usize;
        let kbits = |fam: &serde_json::Value| {
            let k = fam["k"].as_u64().unwrap() as usize;
            k * fam["coeff_bits"].as_u64().unwrap() as usize
        };
        let local = match v["plan"]["kind"].as_str().unwrap() {
            "uniform-stub" => n * plan["bits_per_symbol"].as_u64().unwrap() as usize,
            "constant-stub" | "xor-compose" => 0,
            "kwise" => kbits(&plan["family"]["family"]),
            "dim-step" => match &plan["step"]["bucket"] {
                serde_json::Value::Null => 0,
                b => kbits(&b["family"]),
            },
            "alphabet-chain" => plan["steps"]
                .as_array()
                .unwrap()
                .iter()
                .flat_map(|s| s["cross"]["chunks"].as_array().unwrap().iter().map(|c| kbits(&c[1])))
                .sum(),
            "inw-base" => {
                let inw = &plan["inw"];
                let d = inw["inner_bits"].as_u64().unwrap() as usize;
                let per = match &inw["hash"] {
                    serde_json::Value::String(s) if s == "affine" => 2 * d,
                    serde_json::Value::Object(o) if o.contains_key("walk") => {
                        3 * o["walk"]["steps"].as_u64().unwrap() as usize
                    }
                    _ => 0,
                };
                d + inw["levels"].as_u64().unwrap() as usize * per
            }
            _ => v["seed_bits"].as_u64().unwrap() as usize,
        };
        let kids: usize = ["base", "inner", "left", "right"]
            .iter()
            .filter_map(|k| plan.get(*k))
            .map(tree_walk)
            .sum();
        local + kids
    }

    #[test]
    fn seed_length_matches_tree_walk() {
        let g = build_generator(2, 256, 0.05, &Knobs::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&g.to_json().unwrap()).unwrap();
        assert_eq!(tree_walk(&v), seed_length(&g));
        let back = Generator::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn tampered_plan_rejected() {
        let g = build_generator(2, 8, 0.1, &Knobs::default()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&g.to_json().unwrap()).unwrap();
        v["seed_bits"] = serde_json::json!(g.seed_bits + 1);
        assert!(Generator::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn marginals_uniform_power_of_two() {
        let k = Knobs { n0: 4, ..Knobs::default() };
        let g = build_generator(4, 5, 0.2, &k).unwrap();
        assert_eq!(g.kind(), "xor-compose");
        let mode = EvalMode::Sample { samples: 1 << 14, rng_seed: 4 };
        let dist = OutputDistribution::collect(&g, mode).unwrap();
        for j in 0..5 {
            let mut marg = [0f64; 4];
            for (x, p) in dist.probabilities() {
                marg[x[j] as usize] += p;
            }
            assert!(marg.iter().all(|&p| (p - 0.25).abs() < 0.02), "{marg:?}");
        }
    }
}
