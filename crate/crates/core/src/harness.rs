//! Verification campaigns: reproducible batches of random tests run against
//! a generator, reported as JSON lines.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apps::{
    chernoff_tail_check, comb_shape_error, halfspace_error, modular_error, ChernoffSampler, CombinatorialShape,
    Halfspace, ModularTest,
};
use crate::compose::build_generator;
use crate::config::Knobs;
use crate::error::{usage, Error, Result};
use crate::prg::{expectation, EvalMode, Prg, UniformStub};
use crate::shapes::FourierShape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Shapes,
    Halfspaces,
    Modular,
    CombShapes,
    Chernoff,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Shapes => "shapes",
            Family::Halfspaces => "halfspaces",
            Family::Modular => "modular",
            Family::CombShapes => "comb-shapes",
            Family::Chernoff => "chernoff",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    #[default]
    Composed,
    UniformStub,
}

/// A campaign passes when at least `quantile` of the instances are within
/// the target error and every instance is within `hard` (default: the
/// target). Sampled instances get 3 standard errors of slack on both.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    #[serde(default = "one")]
    pub quantile: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { quantile: 1.0, hard: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FamilyParams {
    /// Halfspace weights are drawn from [-weight_bound, weight_bound]; default n.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_bound: Option<i64>,
    /// Moduli cycled through by modular instances; default [3].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub moduli: Vec<u64>,
    /// Deviation thresholds cycled through by chernoff instances; default [sqrt(n)].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub thresholds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Campaign {
    #[serde(default)]
    pub name: String,
    pub family: Family,
    pub m: u64,
    pub n: usize,
    pub eps: f64,
    pub instances: usize,
    pub rng_seed: u64,
    pub mode: EvalMode,
    #[serde(default)]
    pub generator: GeneratorKind,
    #[serde(default)]
    pub tolerance: Tolerance,
    #[serde(default)]
    pub params: FamilyParams,
    /// Knob overrides applied on top of the caller's configuration.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub knobs: BTreeMap<String, String>,
}

impl Campaign {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.n < 1 {
            return Err(usage("campaign needs m >= 2 and n >= 1"));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(usage("campaign eps must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.tolerance.quantile) {
            return Err(usage("tolerance quantile must lie in [0, 1]"));
        }
        if matches!(self.family, Family::Halfspaces | Family::Modular) && self.m != 2 {
            return Err(usage(format!("{} campaigns run over bits (m = 2)", self.family.name())));
        }
        if self.params.moduli.iter().any(|&q| q < 2) {
            return Err(usage("moduli must be at least 2"));
        }
        if self.family == Family::Chernoff && self.generator == GeneratorKind::UniformStub {
            return Err(usage("chernoff campaigns always use the composed generator"));
        }
        Ok(())
    }

    /// The caller's knobs with this campaign's overrides applied.
    pub fn effective_knobs(&self, base: &Knobs) -> Result<Knobs> {
        let mut k = base.clone();
        for (key, value) in &self.knobs {
            k.set(key, value)?;
        }
        Ok(k)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    #[serde(rename = "type")]
    pub kind: String,
    pub campaign: Campaign,
    pub knobs: Knobs,
    pub seed_bits: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    #[serde(rename = "type")]
    pub kind: String,
    pub index: usize,
    pub family: Family,
    pub m: u64,
    pub n: usize,
    pub eps_target: f64,
    pub err_measured: f64,
    pub std_err: f64,
    pub seeds_evaluated: u64,
    pub mode: String,
    pub within: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refused: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(rename = "type")]
    pub kind: String,
    pub instances: usize,
    pub refused: usize,
    pub within: usize,
    pub max_err: f64,
    pub mean_err: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoolingReport {
    pub header: Header,
    pub instances: Vec<InstanceReport>,
    pub summary: Summary,
}

impl FoolingReport {
    /// Header, one line per instance in order, then the summary.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", serde_json::to_string(&self.header)?)?;
        for r in &self.instances {
            writeln!(w, "{}", serde_json::to_string(r)?)?;
        }
        writeln!(w, "{}", serde_json::to_string(&self.summary)?)?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
    }
}

enum Instance {
    Shape(FourierShape),
    Halfspace(Halfspace),
    Modular(ModularTest),
    Comb(CombinatorialShape),
    Tail(f64),
}

struct Measured {
    err: f64,
    std_err: f64,
    seeds: u64,
}

fn seeds_for(mode: EvalMode, seed_bits: usize) -> u64 {
    match mode {
        EvalMode::Enumerate { .. } => 1u64.checked_shl(seed_bits as u32).unwrap_or(u64::MAX),
        EvalMode::Sample { samples, .. } => samples,
    }
}

fn instances(c: &Campaign) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(c.rng_seed);
    let (m, n) = (c.m as usize, c.n);
    (0..c.instances)
        .map(|i| match c.family {
            Family::Shapes => Instance::Shape(FourierShape::random(&mut rng, m, n)),
            Family::Halfspaces => {
                Instance::Halfspace(Halfspace::random(&mut rng, n, c.params.weight_bound.unwrap_or(n as i64)))
            }
            Family::Modular => {
                let moduli = if c.params.moduli.is_empty() { &[3][..] } else { &c.params.moduli };
                Instance::Modular(ModularTest::random(&mut rng, n, moduli[i % moduli.len()]))
            }
            Family::CombShapes => Instance::Comb(CombinatorialShape::random(&mut rng, m, n)),
            Family::Chernoff => {
                let ts = &c.params.thresholds;
                Instance::Tail(if ts.is_empty() { (n as f64).sqrt() } else { ts[i % ts.len()] })
            }
        })
        .collect()
}

fn measure(g: &dyn Prg, inst: &Instance, mode: EvalMode, cap: usize) -> Result<Measured> {
    let seeds = seeds_for(mode, g.seed_bits());
    let from = |e: crate::apps::TestError| Measured { err: e.error, std_err: e.std_err, seeds };
    match inst {
        Instance::Shape(f) => {
            let est = expectation(g, |x| f.eval(x), mode)?;
            let err = (est.mean - f.uniform_expectation()).norm();
            Ok(Measured { err, std_err: est.std_err, seeds: est.seeds })
        }
        Instance::Halfspace(h) => Ok(from(halfspace_error(g, h, mode, cap)?)),
        Instance::Modular(t) => {
            let r = modular_error(g, t, mode, cap)?;
            Ok(Measured { err: r.tv, std_err: r.confidence_radius, seeds })
        }
        Instance::Comb(c) => Ok(from(comb_shape_error(g, c, mode, cap)?)),
        Instance::Tail(_) => unreachable!("tails are measured together"),
    }
}

/// The generator a campaign measures.
pub fn campaign_generator(c: &Campaign, knobs: &Knobs) -> Result<Box<dyn Prg>> {
    Ok(match c.generator {
        GeneratorKind::Composed => Box::new(build_generator(c.m as u128, c.n, c.eps, knobs)?),
        GeneratorKind::UniformStub => Box::new(UniformStub::new(c.m as u128, c.n)?),
    })
}

pub fn run_campaign(c: &Campaign, base: &Knobs) -> Result<FoolingReport> {
    c.validate()?;
    let knobs = c.effective_knobs(base)?;
    let insts = instances(c);
    let cap = knobs.dp_window;
    let (seed_bits, measured): (usize, Vec<Result<Measured>>) = if c.family == Family::Chernoff {
        let pmfs = vec![vec![1.0 / c.m as f64; c.m as usize]; c.n];
        let sampler = ChernoffSampler::new(&pmfs, c.eps, &knobs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(c.rng_seed);
        let tables: Vec<Vec<f64>> = if c.m == 2 {
            vec![vec![-1.0, 1.0]; c.n]
        } else {
            (0..c.n).map(|_| (0..c.m).map(|_| rand::Rng::random_range(&mut rng, -1.0..=1.0)).collect()).collect()
        };
        let ts: Vec<f64> = insts.iter().map(|i| if let Instance::Tail(t) = i { *t } else { 0.0 }).collect();
        let seeds = seeds_for(c.mode, sampler.seed_bits());
        let out = match chernoff_tail_check(&sampler, &tables, &ts, c.mode) {
            Ok(checks) => checks
                .into_iter()
                .map(|t| {
                    // Excess over the Chernoff term, measured against eps.
                    let err = (t.tail - (t.bound - c.eps)).max(0.0);
                    Ok(Measured { err, std_err: t.std_err, seeds })
                })
                .collect(),
            Err(e) => {
                let msg = e.to_string();
                ts.iter().map(|_| Err(Error::Refused(msg.clone()))).collect()
            }
        };
        (sampler.seed_bits(), out)
    } else {
        let g = campaign_generator(c, &knobs)?;
        let out = insts.par_iter().map(|inst| measure(g.as_ref(), inst, c.mode, cap)).collect();
        (g.seed_bits(), out)
    };

    let hard = c.tolerance.hard.unwrap_or(c.eps);
    let mut reports = Vec::with_capacity(measured.len());
    let mut all_hard = true;
    for (index, r) in measured.into_iter().enumerate() {
        let base = InstanceReport {
            kind: "instance".into(),
            index,
            family: c.family,
            m: c.m,
            n: c.n,
            eps_target: c.eps,
            err_measured: 0.0,
            std_err: 0.0,
            seeds_evaluated: 0,
            mode: c.mode.name().into(),
            within: false,
            refused: None,
        };
        reports.push(match r {
            Ok(m) => {
                let slack = if c.mode.is_exact() { 0.0 } else { 3.0 * m.std_err };
                all_hard &= m.err <= hard + slack;
                InstanceReport {
                    err_measured: m.err,
                    std_err: m.std_err,
                    seeds_evaluated: m.seeds,
                    within: m.err <= c.eps + slack,
                    ..base
                }
            }
            Err(Error::Usage(msg)) => return Err(Error::Usage(msg)),
            Err(e) => InstanceReport { refused: Some(e.to_string()), ..base },
        });
    }
    let evaluated: Vec<&InstanceReport> = reports.iter().filter(|r| r.refused.is_none()).collect();
    let refused = reports.len() - evaluated.len();
    let within = evaluated.iter().filter(|r| r.within).count();
    let max_err = evaluated.iter().map(|r| r.err_measured).fold(0.0, f64::max);
    let mean_err = if evaluated.is_empty() {
        0.0
    } else {
        evaluated.iter().map(|r| r.err_measured).sum::<f64>() / evaluated.len() as f64
    };
    let needed = (c.tolerance.quantile * reports.len() as f64 - 1e-9).ceil() as usize;
    let summary = Summary {
        kind: "summary".into(),
        instances: reports.len(),
        refused,
        within,
        max_err,
        mean_err,
        pass: refused == 0 && all_hard && within >= needed,
    };
    let header = Header { kind: "header".into(), campaign: c.clone(), knobs, seed_bits };
    Ok(FoolingReport { header, instances: reports, summary })
}

/// Instance rows gathered from report files.
#[derive(Clone, Debug, Default)]
pub struct Aggregate {
    pub rows: Vec<(String, InstanceReport)>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FileSummary {
    pub file: String,
    pub rows: usize,
    pub max_err: f64,
    pub mean_err: f64,
}

impl Aggregate {
    /// Reads JSON lines; header and summary lines are ignored, malformed
    /// lines are skipped with a warning.
    pub fn add<R: BufRead>(&mut self, name: &str, reader: R) -> Result<()> {
        for (no, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value = match serde_json::from_str(&line) {
                Ok(v) => v,
                Err(e) => {
                    self.warnings.push(format!("{name}:{}: skipped malformed line: {e}", no + 1));
                    continue;
                }
            };
            match v.get("type").and_then(|t| t.as_str()) {
                Some("instance") => match serde_json::from_value::<InstanceReport>(v) {
                    Ok(r) => self.rows.push((name.to_string(), r)),
                    Err(e) => self.warnings.push(format!("{name}:{}: skipped malformed instance: {e}", no + 1)),
                },
                Some("header") | Some("summary") => {}
                _ => self.warnings.push(format!("{name}:{}: skipped line without a known type", no + 1)),
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "file",
            "index",
            "family",
            "m",
            "n",
            "eps_target",
            "err_measured",
            "std_err",
            "seeds_evaluated",
            "mode",
            "within",
            "refused",
        ])
        .map_err(csv_err)?;
        for (file, r) in &self.rows {
            out.write_record([
                file.clone(),
                r.index.to_string(),
                r.family.name().to_string(),
                r.m.to_string(),
                r.n.to_string(),
                r.eps_target.to_string(),
                r.err_measured.to_string(),
                r.std_err.to_string(),
                r.seeds_evaluated.to_string(),
                r.mode.clone(),
                r.within.to_string(),
                r.refused.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Per-file row counts and error statistics, in first-seen order.
    pub fn summaries(&self) -> Vec<FileSummary> {
        let mut order: Vec<String> = Vec::new();
        let mut by_file: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (file, r) in &self.rows {
            if !by_file.contains_key(file.as_str()) {
                order.push(file.clone());
            }
            let errs = by_file.entry(file.as_str()).or_default();
            if r.refused.is_none() {
                errs.push(r.err_measured);
            }
        }
        order
            .into_iter()
            .map(|file| {
                let rows = self.rows.iter().filter(|(f, _)| *f == file).count();
                let errs = &by_file[file.as_str()];
                let max_err = errs.iter().cloned().fold(0.0, f64::max);
                let mean_err = if errs.is_empty() { 0.0 } else { errs.iter().sum::<f64>() / errs.len() as f64 };
                FileSummary { file, rows, max_err, mean_err }
            })
            .collect()
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
