//! Distances between integer-valued random variables and the exact pmf
//! oracles behind the application checks.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{refused, usage, Result};
use crate::prg::{fold_seeds, EvalMode, Prg};

/// Default largest support window for [`linear_pmf`].
pub const DEFAULT_WINDOW_CAP: usize = 1_000_000;

/// A pmf on the integer window `[lo, lo + probs.len())`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntPmf {
    pub lo: i64,
    pub probs: Vec<f64>,
}

impl IntPmf {
    pub fn new(lo: i64, probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(usage("a pmf needs at least one entry"));
        }
        if probs.iter().any(|&p| !(p >= -1e-15)) {
            return Err(usage("pmf entries must be nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(usage(format!("pmf sums to {total}, not 1")));
        }
        Ok(IntPmf { lo, probs })
    }

    pub fn point(v: i64) -> Self {
        IntPmf { lo: v, probs: vec![1.0] }
    }

    /// Uniform on `lo..=hi`.
    pub fn uniform(lo: i64, hi: i64) -> Result<Self> {
        if hi < lo {
            return Err(usage("empty uniform range"));
        }
        let len = (hi - lo + 1) as usize;
        Ok(IntPmf { lo, probs: vec![1.0 / len as f64; len] })
    }

    /// Empirical pmf of integer counts.
    pub fn from_counts(counts: &BTreeMap<i64, u64>) -> Result<Self> {
        let (&lo, _) = counts.first_key_value().ok_or_else(|| usage("no samples"))?;
        let (&hi, _) = counts.last_key_value().unwrap();
        let total: u64 = counts.values().sum();
        let mut probs = vec![0.0; (hi - lo + 1) as usize];
        for (&v, &c) in counts {
            probs[(v - lo) as usize] = c as f64 / total as f64;
        }
        Ok(IntPmf { lo, probs })
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.probs.len() as i64 - 1
    }

    pub fn prob(&self, v: i64) -> f64 {
        if v < self.lo || v > self.hi() {
            0.0
        } else {
            self.probs[(v - self.lo) as usize]
        }
    }

    /// N = max |support|.
    pub fn radius(&self) -> u64 {
        self.lo.unsigned_abs().max(self.hi().unsigned_abs())
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(v, p)| v as f64 * p).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.probs.iter().enumerate().map(|(i, &p)| (self.lo + i as i64, p))
    }

    /// Pr[Z >= t].
    pub fn tail_at_least(&self, t: i64) -> f64 {
        self.iter().filter(|&(v, _)| v >= t).map(|(_, p)| p).sum()
    }

    /// Pr[Z mod M = r] for r in 0..M.
    pub fn residues(&self, modulus: u64) -> Vec<f64> {
        let mut out = vec![0.0; modulus as usize];
        for (v, p) in self.iter() {
            out[v.rem_euclid(modulus as i64) as usize] += p;
        }
        out
    }

    /// Characteristic function E[exp(2 pi i alpha Z)].
    pub fn transform(&self, alpha: f64) -> Complex64 {
        self.iter().map(|(v, p)| Complex64::from_polar(p, 2.0 * PI * alpha * v as f64)).sum()
    }
}

/// Distribution of `sum_j tables[j][X_j]` with each X_j uniform over its
/// table, computed by exact convolution.
pub fn table_sum_pmf(tables: &[Vec<i64>], cap: usize) -> Result<IntPmf> {
    let parts = tables
        .iter()
        .map(|t| {
            if t.is_empty() {
                return Err(usage("empty table"));
            }
            let p = 1.0 / t.len() as f64;
            Ok(t.iter().map(|&v| (v, p)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    convolve(&parts, cap)
}

/// Distribution of `<w, X>` with X_i drawn independently from `base[i]`.
pub fn linear_pmf(w: &[i64], base: &[IntPmf], cap: usize) -> Result<IntPmf> {
    if w.len() != base.len() {
        return Err(usage(format!("{} weights but {} base pmfs", w.len(), base.len())));
    }
    let parts: Vec<Vec<(i64, f64)>> = w
        .iter()
        .zip(base)
        .map(|(&wi, b)| b.iter().map(|(v, p)| (wi * v, p)).collect())
        .collect();
    convolve(&parts, cap)
}

/// Distribution of `<w, X>` with X uniform over [m]^n.
pub fn linear_pmf_uniform(w: &[i64], m: u64, cap: usize) -> Result<IntPmf> {
    if m == 0 {
        return Err(usage("alphabet must be nonempty"));
    }
    let base = IntPmf::uniform(0, m as i64 - 1)?;
    linear_pmf(w, &vec![base; w.len()], cap)
}

fn convolve(parts: &[Vec<(i64, f64)>], cap: usize) -> Result<IntPmf> {
    let mut lo = 0i64;
    let mut width = 0u64;
    for part in parts {
        let min = part.iter().map(|x| x.0).min().unwrap_or(0);
        let max = part.iter().map(|x| x.0).max().unwrap_or(0);
        lo += min;
        width += (max - min) as u64;
    }
    if width + 1 > cap as u64 {
        return Err(refused(format!("support window of {} values exceeds the cap of {cap}", width + 1)));
    }
    let mut cur = vec![1.0];
    let mut cur_lo = 0i64;
    for part in parts {
        let min = part.iter().map(|x| x.0).min().unwrap_or(0);
        let max = part.iter().map(|x| x.0).max().unwrap_or(0);
        let mut next = vec![0.0; cur.len() + (max - min) as usize];
        for &(v, p) in part {
            let off = (v - min) as usize;
            for (i, &c) in cur.iter().enumerate() {
                next[i + off] += c * p;
            }
        }
        cur = next;
        cur_lo += min;
    }
    debug_assert_eq!(cur_lo, lo);
    Ok(IntPmf { lo, probs: cur })
}

/// Distribution of `f(G(seed))` under the mode.
pub fn seed_pmf<G, F>(g: &G, f: F, mode: EvalMode) -> Result<IntPmf>
where
    G: Prg + ?Sized,
    F: Fn(&[u128]) -> Result<i64> + Sync,
{
    let counts = fold_seeds(
        g.seed_bits(),
        mode,
        BTreeMap::new,
        |acc, s| {
            *acc.entry(f(&g.generate(s)?)?).or_insert(0u64) += 1;
            Ok(())
        },
        |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        },
    )?;
    IntPmf::from_counts(&counts)
}

/// `p - q` on the union window.
fn difference(p: &IntPmf, q: &IntPmf) -> (i64, Vec<f64>) {
    let lo = p.lo.min(q.lo);
    let hi = p.hi().max(q.hi());
    (lo, (lo..=hi).map(|v| p.prob(v) - q.prob(v)).collect())
}

pub fn d_tv(p: &IntPmf, q: &IntPmf) -> f64 {
    0.5 * difference(p, q).1.iter().map(|d| d.abs()).sum::<f64>()
}

pub fn d_k(p: &IntPmf, q: &IntPmf) -> f64 {
    let mut gap: f64 = 0.0;
    let mut cdf = 0.0;
    for d in difference(p, q).1 {
        cdf += d;
        gap = gap.max(cdf.abs());
    }
    gap
}

/// Maximum of |E exp(2 pi i a p) - E exp(2 pi i a q)| over the grid
/// a in {0, D, 2D, ..., 1} with D <= eta / (4 pi N).
///
/// The returned value is the exact grid maximum; a branch-and-bound over
/// the grid prunes intervals whose Lipschitz bound cannot beat the best
/// value found, so only a small part of the grid is evaluated.
pub fn d_ft(p: &IntPmf, q: &IntPmf, eta: f64) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(usage("grid tolerance must be positive"));
    }
    let (lo, r) = difference(p, q);
    let radius = p.radius().max(q.radius()).max(1) as f64;
    let len = r.len();
    // Centering the phase leaves |R| unchanged and shrinks the Lipschitz constant.
    let center = lo as f64 + (len as f64 - 1.0) / 2.0;
    let lip = 2.0 * PI * r.iter().enumerate().map(|(i, d)| d.abs() * (lo as f64 + i as f64 - center).abs()).sum::<f64>();

    let coarse = (4 * len).next_power_of_two();
    let fine_target = (4.0 * PI * radius / eta).ceil();
    let step = (fine_target / coarse as f64).ceil().max(1.0) as u64;
    let grid = step * coarse as u64;

    let mut buf: Vec<Complex64> = r.iter().map(|&d| Complex64::new(d, 0.0)).collect();
    buf.resize(coarse, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_inverse(coarse).process(&mut buf);
    let values: Vec<f64> = buf.iter().map(|z| z.norm()).collect();
    let floor = values.iter().cloned().fold(0.0, f64::max);
    if step == 1 || lip == 0.0 {
        return Ok(floor);
    }

    let eval = |idx: u64| -> f64 {
        let alpha = idx as f64 / grid as f64;
        let rot = Complex64::from_polar(1.0, 2.0 * PI * alpha);
        let mut z = Complex64::from_polar(1.0, 2.0 * PI * alpha * (lo as f64 - center));
        let mut acc = Complex64::new(0.0, 0.0);
        for &d in &r {
            acc += z * d;
            z *= rot;
        }
        acc.norm()
    };
    let scale = lip / grid as f64;
    let best = (0..coarse)
        .into_par_iter()
        .map(|k| {
            let a = k as u64 * step;
            let va = values[k];
            let vb = values[(k + 1) % coarse];
            let mut best = floor;
            let mut stack = vec![(a, va, a + step, vb)];
            while let Some((a, va, b, vb)) = stack.pop() {
                if b - a <= 1 || (va + vb) / 2.0 + scale * (b - a) as f64 / 2.0 <= best {
                    continue;
                }
                let c = a + (b - a) / 2;
                let vc = eval(c);
                best = best.max(vc);
                stack.push((a, va, c, vc));
                stack.push((c, vc, b, vb));
            }
            best
        })
        .reduce(|| floor, f64::max);
    Ok(best)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistanceTriple {
    pub d_ft: f64,
    pub d_tv: f64,
    pub d_k: f64,
}

pub fn distances(p: &IntPmf, q: &IntPmf, eta: f64) -> Result<DistanceTriple> {
    Ok(DistanceTriple { d_ft: d_ft(p, q, eta)?, d_tv: d_tv(p, q), d_k: d_k(p, q) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub radius: u64,
    pub eta: f64,
    pub distances: DistanceTriple,
    pub tv_bound: f64,
    pub k_bound: f64,
    /// d_tv / tv_bound, zero when both vanish.
    pub tv_ratio: f64,
    pub k_ratio: f64,
    pub pass: bool,
}

/// Checks d_tv <= c_tv sqrt(4N+1) (d_ft + eta) and
/// d_k <= c_kol log2(2N+2) (d_ft + eta).
pub fn fourier_lemma_check(p: &IntPmf, q: &IntPmf, eta: f64, c_tv: f64, c_kol: f64) -> Result<LemmaCheck> {
    let d = distances(p, q, eta)?;
    let radius = p.radius().max(q.radius());
    let n = radius as f64;
    let tv_bound = c_tv * (4.0 * n + 1.0).sqrt() * (d.d_ft + eta);
    let k_bound = c_kol * (2.0 * n + 2.0).log2() * (d.d_ft + eta);
    let ratio = |x: f64, b: f64| if x == 0.0 { 0.0 } else { x / b };
    let (tv_ratio, k_ratio) = (ratio(d.d_tv, tv_bound), ratio(d.d_k, k_bound));
    Ok(LemmaCheck {
        radius,
        eta,
        distances: d,
        tv_bound,
        k_bound,
        tv_ratio,
        k_ratio,
        pass: tv_ratio <= 1.0 && k_ratio <= 1.0,
    })
}

/// A random pmf on a random subwindow of [-n, n], used by the lemma audit.
pub fn random_pmf<R: rand::Rng + ?Sized>(rng: &mut R, n: i64) -> IntPmf {
    let a = rng.random_range(-n..=n);
    let b = rng.random_range(-n..=n);
    let (lo, hi) = (a.min(b), a.max(b));
    let mut probs: Vec<f64> = (lo..=hi).map(|_| rng.random::<f64>().powi(3)).collect();
    let total: f64 = probs.iter().sum();
    if total == 0.0 {
        return IntPmf::point(lo);
    }
    probs.iter_mut().for_each(|p| *p /= total);
    IntPmf { lo, probs }
}
