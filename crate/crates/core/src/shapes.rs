//! Fourier shapes: products of per-coordinate functions into the unit disk.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{usage, Result};
use crate::prg::{self, EvalMode, Estimate, Prg};

const DISK_SLACK: f64 = 1e-12;

/// f(x) = prod_j f_j(x_j) over [m]^n, stored as an explicit n x m table.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierShape {
    m: usize,
    n: usize,
    table: Vec<Complex64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeStats {
    pub means: Vec<Complex64>,
    pub variances: Vec<f64>,
    pub tvar: f64,
}

impl FourierShape {
    pub fn new(m: usize, n: usize, table: Vec<Complex64>) -> Result<Self> {
        if m == 0 {
            return Err(usage("alphabet must be nonempty"));
        }
        if table.len() != m * n {
            return Err(usage(format!("table has {} entries, expected {}", table.len(), m * n)));
        }
        if let Some(z) = table.iter().find(|z| !(z.norm() <= 1.0 + DISK_SLACK)) {
            return Err(usage(format!("table entry {z} lies outside the unit disk")));
        }
        Ok(FourierShape { m, n, table })
    }

    pub fn from_rows(m: usize, rows: Vec<Vec<Complex64>>) -> Result<Self> {
        if rows.iter().any(|r| r.len() != m) {
            return Err(usage(format!("every row needs {m} entries")));
        }
        let n = rows.len();
        Self::new(m, n, rows.into_iter().flatten().collect())
    }

    pub fn constant(m: usize, n: usize) -> Self {
        FourierShape { m, n, table: vec![Complex64::new(1.0, 0.0); m * n] }
    }

    /// Entries drawn uniformly from the unit disk.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, m: usize, n: usize) -> Self {
        let table = (0..m * n)
            .map(|_| {
                Complex64::from_polar(
                    rng.random::<f64>().sqrt(),
                    rng.random::<f64>() * std::f64::consts::TAU,
                )
            })
            .collect();
        FourierShape { m, n, table }
    }

    /// Entries drawn uniformly from the unit circle.
    pub fn random_unimodular<R: Rng + ?Sized>(rng: &mut R, m: usize, n: usize) -> Self {
        let table = (0..m * n)
            .map(|_| Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU))
            .collect();
        FourierShape { m, n, table }
    }

    /// f_j(x) = exp(2 pi i alpha w_j x).
    pub fn linear(w: &[i64], alpha: f64, m: usize) -> Result<Self> {
        let mut table = Vec::with_capacity(w.len() * m);
        for &wj in w {
            for x in 0..m {
                // reduce the integer phase first so large products stay exact
                let turns = (alpha * ((wj as i128 * x as i128) as f64)).rem_euclid(1.0);
                table.push(Complex64::from_polar(1.0, std::f64::consts::TAU * turns));
            }
        }
        Self::new(m, w.len(), table)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, j: usize, x: usize) -> Complex64 {
        self.table[j * self.m + x]
    }

    pub fn row(&self, j: usize) -> &[Complex64] {
        &self.table[j * self.m..(j + 1) * self.m]
    }

    pub fn eval(&self, x: &[u128]) -> Result<Complex64> {
        if x.len() != self.n {
            return Err(usage(format!("input has {} symbols, shape has {}", x.len(), self.n)));
        }
        let mut acc = Complex64::new(1.0, 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj >= self.m as u128 {
                return Err(usage(format!("symbol {xj} at coordinate {j} outside [{}]", self.m)));
            }
            acc *= self.get(j, xj as usize);
        }
        Ok(acc)
    }

    pub fn stats(&self) -> ShapeStats {
        let mut means = Vec::with_capacity(self.n);
        let mut variances = Vec::with_capacity(self.n);
        for j in 0..self.n {
            let row = self.row(j);
            let re = sorted_sum(row.iter().map(|z| z.re));
            let im = sorted_sum(row.iter().map(|z| z.im));
            let mu = Complex64::new(re, im) / self.m as f64;
            let second = sorted_sum(row.iter().map(|z| z.norm_sqr())) / self.m as f64;
            means.push(mu);
            variances.push(second - mu.norm_sqr());
        }
        let tvar = variances.iter().sum();
        ShapeStats { means, variances, tvar }
    }

    pub fn tvar(&self) -> f64 {
        self.stats().tvar
    }

    /// prod_j E[f_j], the exact expectation under uniform input.
    pub fn uniform_expectation(&self) -> Complex64 {
        self.stats().means.iter().product()
    }

    /// mu_j + s (f_j - mu_j) per coordinate; scales every variance by s^2.
    pub fn scaled_toward_mean(&self, s: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&s) {
            return Err(usage("scale must lie in [0, 1]"));
        }
        let stats = self.stats();
        let mut table = self.table.clone();
        for j in 0..self.n {
            for x in 0..self.m {
                let mu = stats.means[j];
                table[j * self.m + x] = mu + (self.get(j, x) - mu) * s;
            }
        }
        Ok(FourierShape { m: self.m, n: self.n, table })
    }

    /// y -> f(y + z mod m), coordinatewise.
    pub fn shifted(&self, z: &[u128]) -> Result<Self> {
        if z.len() != self.n {
            return Err(usage("shift has the wrong dimension"));
        }
        let mut table = Vec::with_capacity(self.table.len());
        for (j, &zj) in z.iter().enumerate() {
            for y in 0..self.m {
                table.push(self.get(j, (y + (zj % self.m as u128) as usize) % self.m));
            }
        }
        Ok(FourierShape { m: self.m, n: self.n, table })
    }

    /// Rounds every entry in polar form to `bits` bits of phase (in turns)
    /// and of magnitude.
    pub fn quantized(&self, bits: u32) -> Self {
        let scale = 2f64.powi(bits as i32);
        let table = self
            .table
            .iter()
            .map(|z| {
                let r = (z.norm().min(1.0) * scale).round_ties_even() / scale;
                let turns = (z.arg() / std::f64::consts::TAU).rem_euclid(1.0);
                let t = (turns * scale).round_ties_even() / scale;
                Complex64::from_polar(r, std::f64::consts::TAU * t)
            })
            .collect();
        FourierShape { m: self.m, n: self.n, table }
    }
}

/// Sum in ascending order, so permuting a row cannot change its statistics.
fn sorted_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

pub fn tvar(f: &FourierShape) -> f64 {
    f.tvar()
}

pub fn uniform_expectation(f: &FourierShape) -> Complex64 {
    f.uniform_expectation()
}

pub fn linear_shape(w: &[i64], alpha: f64, m: usize) -> Result<FourierShape> {
    FourierShape::linear(w, alpha, m)
}

/// E_seed[f(G(seed))] by enumeration or sampling.
pub fn empirical_expectation<G: Prg + ?Sized>(
    f: &FourierShape,
    g: &G,
    mode: EvalMode,
) -> Result<Estimate> {
    if g.alphabet() != f.m as u128 || g.dimension() != f.n {
        return Err(usage(format!(
            "generator outputs [{}]^{} but the shape is over [{}]^{}",
            g.alphabet(),
            g.dimension(),
            f.m,
            f.n
        )));
    }
    prg::expectation(g, |x| f.eval(x), mode)
}

#[derive(Serialize, Deserialize)]
struct ShapeRepr {
    m: usize,
    n: usize,
    table: Vec<Vec<[f64; 2]>>,
}

impl Serialize for FourierShape {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ShapeRepr {
            m: self.m,
            n: self.n,
            table: (0..self.n)
                .map(|j| self.row(j).iter().map(|z| [z.re, z.im]).collect())
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FourierShape {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ShapeRepr::deserialize(d)?;
        if r.table.len() != r.n {
            return Err(serde::de::Error::custom(format!("expected {} rows", r.n)));
        }
        let rows = r
            .table
            .into_iter()
            .map(|row| row.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
            .collect();
        FourierShape::from_rows(r.m, rows).map_err(serde::de::Error::custom)
    }
}
