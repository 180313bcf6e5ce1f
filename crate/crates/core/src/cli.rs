//! Command-line front end: `gen`, `verify` and `report`.
//!
//! Exit codes: 0 pass, 1 fail, 2 usage error.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bits::BitString;
use crate::compose::{build_generator, Generator};
use crate::config::Knobs;
use crate::error::{usage, Result};
use crate::harness::{run_campaign, Aggregate, Campaign, Family, FamilyParams, GeneratorKind, Tolerance};
use crate::prg::{EvalMode, Prg, DEFAULT_ENUM_CAP};

#[derive(Parser, Debug)]
#[command(name = "fourier-prg", version, about = "Pseudorandom generators for Fourier shapes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct KnobArgs {
    /// Plain-text `key = value` knob file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Knob override, `KEY=VALUE`; repeatable and applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

impl KnobArgs {
    pub fn knobs(&self) -> Result<Knobs> {
        let mut k = match &self.config {
            Some(p) => Knobs::load(p)?,
            None => Knobs::default(),
        };
        for s in &self.set {
            let (key, value) = s.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
            k.set(key, value)?;
        }
        Ok(k)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a generator, print its seed length, and optionally emit samples.
    Gen(GenArgs),
    /// Run a verification campaign and write a JSON-lines report.
    Verify(VerifyArgs),
    /// Merge JSON-lines reports into CSV.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, required_unless_present = "plan")]
    pub m: Option<u128>,
    #[arg(long, required_unless_present = "plan")]
    pub n: Option<usize>,
    #[arg(long, required_unless_present = "plan")]
    pub eps: Option<f64>,
    /// Seed of the first sample, big-endian hex; later samples count up from it.
    #[arg(long)]
    pub seed: Option<String>,
    /// Seed for drawing sample seeds when --seed is absent.
    #[arg(long, default_value_t = 0)]
    pub rng_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub samples: u64,
    /// Print each sample's seed before its symbols.
    #[arg(long)]
    pub with_seeds: bool,
    #[arg(long)]
    pub plan_out: Option<PathBuf>,
    /// Load a plan JSON instead of building one.
    #[arg(long, conflicts_with_all = ["m", "n", "eps"])]
    pub plan: Option<PathBuf>,
    #[command(flatten)]
    pub knobs: KnobArgs,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Campaign JSON; without it the campaign is taken from the flags.
    #[arg(long)]
    pub campaign: Option<PathBuf>,
    #[arg(long, value_parser = parse_family)]
    pub family: Option<Family>,
    #[arg(long, default_value_t = 2)]
    pub m: u64,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    #[arg(long, default_value_t = 10)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub rng_seed: u64,
    /// Sample this many seeds instead of enumerating.
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_ENUM_CAP)]
    pub enum_cap: u32,
    #[arg(long)]
    pub uniform_stub: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub knobs: KnobArgs,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub knobs: KnobArgs,
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        format!("unknown family {s:?}; expected shapes, halfspaces, modular, comb-shapes or chernoff")
    })
}

/// Parses big-endian hex into exactly `bits` bits.
pub fn seed_from_hex(hex: &str, bits: usize) -> Result<BitString> {
    let raw = BitString::from_hex(hex)?;
    if raw.len() >= bits {
        let extra = raw.len() - bits;
        if (0..extra).any(|i| raw.get(i)) {
            return Err(usage(format!("seed {hex} does not fit in {bits} bits")));
        }
        Ok(raw.slice(extra, bits))
    } else {
        let mut out = BitString::zeros(bits);
        out.splice(bits - raw.len(), &raw);
        Ok(out)
    }
}

/// Big-endian lowercase hex, zero-padded on the left to whole digits.
pub fn seed_to_hex(seed: &BitString) -> String {
    let pad = (4 - seed.len() % 4) % 4;
    let mut padded = BitString::zeros(seed.len() + pad);
    padded.splice(pad, seed);
    padded.to_hex()
}

fn increment(seed: &mut BitString) {
    for i in (0..seed.len()).rev() {
        let b = seed.get(i);
        seed.set(i, !b);
        if !b {
            return;
        }
    }
}

fn open_out<'a>(path: &Option<PathBuf>, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(File::create(p)?)),
        None => Box::new(stdout),
    })
}

pub fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<i32> {
    let knobs = a.knobs.knobs()?;
    let g = match &a.plan {
        Some(p) => Generator::from_json(&std::fs::read_to_string(p)?)?,
        None => build_generator(a.m.unwrap_or(0), a.n.unwrap_or(0), a.eps.unwrap_or(0.0), &knobs)?,
    };
    if let Some(p) = &a.plan_out {
        std::fs::write(p, g.to_json()?)?;
    }
    writeln!(out, "seed_bits {}", g.seed_bits)?;
    let r = g.seed_bits;
    let mut rng = ChaCha8Rng::seed_from_u64(a.rng_seed);
    let mut next = match &a.seed {
        Some(h) => Some(seed_from_hex(h, r)?),
        None => None,
    };
    for _ in 0..a.samples {
        let seed = match &mut next {
            Some(s) => {
                let cur = s.clone();
                increment(s);
                cur
            }
            None => BitString::random(&mut rng, r),
        };
        let y = g.generate(&seed)?;
        let line: Vec<String> = y.iter().map(u128::to_string).collect();
        if a.with_seeds {
            write!(out, "{} ", seed_to_hex(&seed))?;
        }
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(0)
}

pub fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<i32> {
    let knobs = a.knobs.knobs()?;
    let campaign = match &a.campaign {
        Some(p) => Campaign::load(p)?,
        None => Campaign {
            name: String::new(),
            family: a.family.ok_or_else(|| usage("verify needs --campaign or --family"))?,
            m: a.m,
            n: a.n,
            eps: a.eps,
            instances: a.instances,
            rng_seed: a.rng_seed,
            mode: match a.samples {
                Some(samples) => EvalMode::Sample { samples, rng_seed: a.rng_seed },
                None => EvalMode::Enumerate { cap_bits: a.enum_cap },
            },
            generator: if a.uniform_stub { GeneratorKind::UniformStub } else { GeneratorKind::Composed },
            tolerance: Tolerance::default(),
            params: FamilyParams::default(),
            knobs: Default::default(),
        },
    };
    let report = run_campaign(&campaign, &knobs)?;
    let mut w = open_out(&a.out, out)?;
    report.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(if report.summary.pass { 0 } else { 1 })
}

pub fn cmd_report(a: &ReportArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let mut agg = Aggregate::default();
    for f in &a.files {
        let name = f.display().to_string();
        agg.add(&name, BufReader::new(File::open(f)?))?;
    }
    for w in &agg.warnings {
        writeln!(err, "warning: {w}")?;
    }
    let mut w = open_out(&a.out, out)?;
    agg.write_csv(&mut w)?;
    w.flush()?;
    for s in agg.summaries() {
        writeln!(err, "{}: rows={} max_err={} mean_err={}", s.file, s.rows, s.max_err, s.mean_err)?;
    }
    Ok(0)
}

/// Runs the tool on `args` (including the program name), returning the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return 2;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    let res = match &cli.command {
        Command::Gen(a) => cmd_gen(a, out),
        Command::Verify(a) => cmd_verify(a, out),
        Command::Report(a) => cmd_report(a, out, err),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("fourier-prg").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn hex_seeds_roundtrip() {
        let s = seed_from_hex("00ff", 10).unwrap();
        assert_eq!(s.read(0, 10), 0xff);
        assert_eq!(seed_to_hex(&s), "0ff");
        assert!(seed_from_hex("ffff", 10).is_err());
        let mut t = seed_from_hex("3", 2).unwrap();
        increment(&mut t);
        assert_eq!(t.read(0, 2), 0);
    }

    #[test]
    fn gen_is_deterministic() {
        let args = ["gen", "--m", "2", "--n", "8", "--eps", "0.1", "--seed", "00ff", "--samples", "1"];
        let (code, a, _) = run_str(&args);
        assert_eq!(code, 0);
        assert_eq!(a.lines().count(), 2);
        assert_eq!(run_str(&args).1, a);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_str(&["gen", "--m", "1", "--n", "8", "--eps", "0.1"]).0, 2);
        assert_eq!(run_str(&["bogus"]).0, 2);
        assert_eq!(run_str(&["gen", "--m", "2", "--n", "8", "--eps", "0.1", "--set", "nope=1"]).0, 2);
        assert_eq!(run_str(&["verify"]).0, 2);
    }

    #[test]
    fn verify_from_flags() {
        let (code, out, _) = run_str(&["verify", "--family", "shapes", "--n", "4", "--instances", "3"]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().count(), 5);
        assert!(out.lines().next().unwrap().contains("\"knobs\""));
    }
}
