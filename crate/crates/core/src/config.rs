//! Tunable constants. Every knob is echoed into report headers so measured
//! results can be tied to the configuration that produced them.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knobs {
    /// Multiplier C in the independence orders k = ceil(C log(.) / log(.)).
    pub c_k: f64,
    /// Dimension at or below which the composer switches to the base case.
    pub n0: usize,
    /// Independence order inside each bucket of the constant-error generator.
    pub p: usize,
    /// Multiplier in the spreading bucket count max(16, c_T ln^5(1/delta)).
    pub c_t: f64,
    /// Budget for symbol-mapping deviation, as a fraction of the target error.
    pub delta_map_frac: f64,
    /// Largest seed length enumerated exhaustively.
    pub enum_cap: u32,
    /// Spreading variance threshold; defaults to twice the bucket count.
    pub tau_hv: Option<f64>,
    /// Independence order of the spreading hash.
    pub spread_k: usize,
    /// Error budget of the recycling generator inside the constant-error generator.
    pub g1_recycle_delta: f64,
    /// Constant in d_TV <= c_tv sqrt(4N+1) (d_FT + eta).
    pub c_tv: f64,
    /// Constant in d_K <= c_kol log2(2N+2) (d_FT + eta).
    pub c_kol: f64,
    /// Largest support window of an exact linear-form pmf.
    pub dp_window: usize,
}

impl Default for Knobs {
    fn default() -> Self {
        Knobs {
            c_k: 4.0,
            n0: 64,
            p: 8,
            c_t: 0.125,
            delta_map_frac: 0.1,
            enum_cap: crate::prg::DEFAULT_ENUM_CAP,
            tau_hv: None,
            spread_k: 4,
            g1_recycle_delta: 0.05,
            c_tv: 2.0,
            c_kol: 10.0,
            dp_window: 1_000_000,
        }
    }
}

impl Knobs {
    pub const KEYS: [&'static str; 12] = [
        "c_k",
        "n0",
        "p",
        "c_t",
        "delta_map_frac",
        "enum_cap",
        "tau_hv",
        "spread_k",
        "g1_recycle_delta",
        "c_tv",
        "c_kol",
        "dp_window",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| usage(format!("invalid value {v:?} for {key}")))
        }
        let v = value.trim();
        match key.trim() {
            "c_k" => self.c_k = num(key, v)?,
            "n0" => self.n0 = num(key, v)?,
            "p" => self.p = num(key, v)?,
            "c_t" => self.c_t = num(key, v)?,
            "delta_map_frac" => self.delta_map_frac = num(key, v)?,
            "enum_cap" => self.enum_cap = num(key, v)?,
            "tau_hv" => {
                self.tau_hv = if v.is_empty() || v == "auto" { None } else { Some(num(key, v)?) }
            }
            "spread_k" => self.spread_k = num(key, v)?,
            "g1_recycle_delta" => self.g1_recycle_delta = num(key, v)?,
            "c_tv" => self.c_tv = num(key, v)?,
            "c_kol" => self.c_kol = num(key, v)?,
            "dp_window" => self.dp_window = num(key, v)?,
            other => return Err(usage(format!("unknown knob {other:?}"))),
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |x: f64| x > 0.0 && x < 1.0;
        if ![self.c_k, self.c_t, self.c_tv, self.c_kol].iter().all(|&c| c > 0.0) {
            return Err(usage("c_k, c_t, c_tv and c_kol must be positive"));
        }
        if self.dp_window < 1 {
            return Err(usage("dp_window must be at least 1"));
        }
        if self.n0 < 1 || self.p < 1 || self.spread_k < 1 {
            return Err(usage("n0, p and spread_k must be at least 1"));
        }
        if !frac(self.delta_map_frac) || !frac(self.g1_recycle_delta) {
            return Err(usage("delta_map_frac and g1_recycle_delta must lie in (0, 1)"));
        }
        if self.enum_cap > 40 {
            return Err(usage("enum_cap above 40 bits is not supported"));
        }
        if self.tau_hv.is_some_and(|t| !(t > 0.0)) {
            return Err(usage("tau_hv must be positive"));
        }
        Ok(())
    }

    /// Parses `key = value` lines; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut k = Knobs::default();
        k.apply(text)?;
        Ok(k)
    }

    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("line {}: expected key = value", no + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let tau = self.tau_hv.map_or("auto".to_string(), |t| t.to_string());
        let _ = writeln!(s, "c_k = {}", self.c_k);
        let _ = writeln!(s, "n0 = {}", self.n0);
        let _ = writeln!(s, "p = {}", self.p);
        let _ = writeln!(s, "c_t = {}", self.c_t);
        let _ = writeln!(s, "delta_map_frac = {}", self.delta_map_frac);
        let _ = writeln!(s, "enum_cap = {}", self.enum_cap);
        let _ = writeln!(s, "tau_hv = {tau}");
        let _ = writeln!(s, "spread_k = {}", self.spread_k);
        let _ = writeln!(s, "g1_recycle_delta = {}", self.g1_recycle_delta);
        let _ = writeln!(s, "c_tv = {}", self.c_tv);
        let _ = writeln!(s, "c_kol = {}", self.c_kol);
        let _ = writeln!(s, "dp_window = {}", self.dp_window);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_through_text() {
        let mut k = Knobs::default();
        k.set("p", "4").unwrap();
        k.set("tau_hv", "12.5").unwrap();
        let back = Knobs::parse(&k.to_config_string()).unwrap();
        assert_eq!(back, k);
        assert_eq!(k.to_config_string().lines().count(), Knobs::KEYS.len());
    }

    #[test]
    fn comments_and_errors() {
        let k = Knobs::parse("# header\n\nn0 = 16  # small\n").unwrap();
        assert_eq!(k.n0, 16);
        assert!(Knobs::parse("bogus = 1").is_err());
        assert!(Knobs::parse("n0 16").is_err());
        assert!(Knobs::parse("delta_map_frac = 2").is_err());
    }
}
