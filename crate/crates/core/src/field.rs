//! Arithmetic in GF(2^t) for t <= 128 and in prime fields GF(p) for p < 2^63.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};

/// Low-weight irreducible polynomials over GF(2), indexed by degree - 1.
/// Each entry is the polynomial with its leading x^t term removed.
const IRREDUCIBLE_LOW: [u128; 128] = [
    0x1, 0x3, 0x3, 0x3,
    0x5, 0x3, 0x3, 0x1b,
    0x3, 0x9, 0x5, 0x9,
    0x1b, 0x21, 0x3, 0x2b,
    0x9, 0x9, 0x27, 0x9,
    0x5, 0x3, 0x21, 0x1b,
    0x9, 0x1b, 0x27, 0x3,
    0x5, 0x3, 0x9, 0x8d,
    0x401, 0x81, 0x5, 0x201,
    0x53, 0x63, 0x11, 0x39,
    0x9, 0x81, 0x59, 0x21,
    0x1b, 0x3, 0x21, 0x2d,
    0x201, 0x1d, 0x4b, 0x9,
    0x47, 0x201, 0x81, 0x95,
    0x11, 0x80001, 0x95, 0x3,
    0x27, 0x20000001, 0x3, 0x1b,
    0x40001, 0x9, 0x27, 0x201,
    0x65, 0x2b, 0x41, 0x609,
    0x2000001, 0x800000001, 0x4b, 0x200001,
    0x65, 0x69, 0x201, 0x215,
    0x11, 0x10b, 0x95, 0x21,
    0x107, 0x200001, 0x2001, 0xc5,
    0x4000000001, 0x8000001, 0x123, 0x200001,
    0x5, 0x200001, 0x801, 0x641,
    0x41, 0x801, 0x4b, 0x8001,
    0xc3, 0x20000001, 0x201, 0x1b,
    0x11, 0x8001, 0x291, 0x20001,
    0x35, 0x200000001, 0x401, 0x39,
    0x201, 0x2d, 0x1a1, 0x17,
    0x27, 0x200000001, 0x101, 0x1b,
    0x40001, 0x47, 0x5, 0x80001,
    0xe1, 0x200001, 0x3, 0x87,
];

pub const MAX_BINARY_DEGREE: u32 = 128;
pub const MAX_PRIME: u64 = 1 << 63;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Field {
    Binary { degree: u32 },
    Prime { modulus: u64 },
}

impl Field {
    pub fn binary(degree: u32) -> Result<Field> {
        if degree == 0 || degree > MAX_BINARY_DEGREE {
            return Err(usage(format!(
                "GF(2^{degree}) unsupported; degree must be in 1..={MAX_BINARY_DEGREE}"
            )));
        }
        Ok(Field::Binary { degree })
    }

    pub fn prime(modulus: u64) -> Result<Field> {
        if modulus >= MAX_PRIME || !is_prime(modulus) {
            return Err(usage(format!("{modulus} is not a prime below 2^63")));
        }
        Ok(Field::Prime { modulus })
    }

    /// Number of elements.
    pub fn order(&self) -> u128 {
        match *self {
            Field::Binary { degree: 128 } => u128::MAX,
            Field::Binary { degree } => 1u128 << degree,
            Field::Prime { modulus } => modulus as u128,
        }
    }

    /// Bits needed to write any element: t for GF(2^t), ceil(log2 p) otherwise.
    pub fn element_bits(&self) -> u32 {
        match *self {
            Field::Binary { degree } => degree,
            Field::Prime { modulus } => ceil_log2(modulus as u128),
        }
    }

    /// Reduction polynomial (without the leading term) for binary fields.
    pub fn modulus_low(&self) -> Option<u128> {
        match *self {
            Field::Binary { degree } => Some(IRREDUCIBLE_LOW[degree as usize - 1]),
            Field::Prime { .. } => None,
        }
    }

    #[inline]
    pub fn contains(&self, v: u128) -> bool {
        match *self {
            Field::Binary { degree } => degree == 128 || v >> degree == 0,
            Field::Prime { modulus } => v < modulus as u128,
        }
    }

    pub fn elem(self, value: u128) -> Result<FieldElem> {
        if !self.contains(value) {
            return Err(usage(format!("{value} is not an element of {self}")));
        }
        Ok(FieldElem { value, field: self })
    }

    #[inline]
    pub fn add(&self, a: u128, b: u128) -> u128 {
        match *self {
            Field::Binary { .. } => a ^ b,
            Field::Prime { modulus } => {
                let s = a + b;
                if s >= modulus as u128 {
                    s - modulus as u128
                } else {
                    s
                }
            }
        }
    }

    #[inline]
    pub fn neg(&self, a: u128) -> u128 {
        match *self {
            Field::Binary { .. } => a,
            Field::Prime { modulus } => {
                if a == 0 {
                    0
                } else {
                    modulus as u128 - a
                }
            }
        }
    }

    #[inline]
    pub fn sub(&self, a: u128, b: u128) -> u128 {
        self.add(a, self.neg(b))
    }

    #[inline]
    pub fn mul(&self, a: u128, b: u128) -> u128 {
        match *self {
            Field::Binary { degree } => gf2_mul(a, b, degree, IRREDUCIBLE_LOW[degree as usize - 1]),
            Field::Prime { modulus } => (a * b) % modulus as u128,
        }
    }

    pub fn pow(&self, mut base: u128, mut exp: u128) -> u128 {
        let mut acc = 1;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn inv(&self, a: u128) -> Option<u128> {
        if a == 0 {
            return None;
        }
        let exp = match *self {
            // a^(2^t - 2)
            Field::Binary { degree: 128 } => u128::MAX - 1,
            Field::Binary { degree } => (1u128 << degree) - 2,
            Field::Prime { modulus } => modulus as u128 - 2,
        };
        Some(self.pow(a, exp))
    }

    /// Horner evaluation of sum_j coeffs[j] * x^j.
    #[inline]
    pub fn eval_poly(&self, coeffs: &[u128], x: u128) -> u128 {
        coeffs
            .iter()
            .rev()
            .fold(0, |acc, &c| self.add(self.mul(acc, x), c))
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Binary { degree } => write!(f, "GF(2^{degree})"),
            Field::Prime { modulus } => write!(f, "GF({modulus})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FieldElem {
    value: u128,
    field: Field,
}

impl FieldElem {
    pub fn value(&self) -> u128 {
        self.value
    }

    pub fn field(&self) -> Field {
        self.field
    }
}

fn same_field(a: &FieldElem, b: &FieldElem) -> Result<Field> {
    if a.field != b.field {
        return Err(usage(format!(
            "operands live in different fields ({} vs {})",
            a.field, b.field
        )));
    }
    Ok(a.field)
}

pub fn field_mul(a: FieldElem, b: FieldElem) -> Result<FieldElem> {
    let f = same_field(&a, &b)?;
    Ok(FieldElem { value: f.mul(a.value, b.value), field: f })
}

pub fn field_add(a: FieldElem, b: FieldElem) -> Result<FieldElem> {
    let f = same_field(&a, &b)?;
    Ok(FieldElem { value: f.add(a.value, b.value), field: f })
}

/// Shift-and-add multiplication modulo x^t + low, scanning `b` from its top bit.
#[inline]
fn gf2_mul(a: u128, b: u128, t: u32, low: u128) -> u128 {
    if t <= 64 {
        return gf2_mul64(a as u64, b as u64, t, low as u64) as u128;
    }
    let top = 1u128 << (t - 1);
    let mask = if t == 128 { u128::MAX } else { (1u128 << t) - 1 };
    let mut acc: u128 = 0;
    for i in (0..t).rev() {
        let carry = acc & top != 0;
        acc = (acc << 1) & mask;
        if carry {
            acc ^= low;
        }
        if (b >> i) & 1 == 1 {
            acc ^= a;
        }
    }
    acc
}

#[inline]
fn gf2_mul64(a: u64, b: u64, t: u32, low: u64) -> u64 {
    let top = 1u64 << (t - 1);
    let mask = if t == 64 { u64::MAX } else { (1u64 << t) - 1 };
    let mut acc: u64 = 0;
    let mut i = 64 - b.leading_zeros();
    while i > 0 {
        i -= 1;
        let carry = acc & top != 0;
        acc = (acc << 1) & mask;
        if carry {
            acc ^= low;
        }
        if (b >> i) & 1 == 1 {
            acc ^= a;
        }
    }
    acc
}

/// Smallest c with 2^c >= x (0 for x <= 1).
pub fn ceil_log2(x: u128) -> u32 {
    if x <= 1 {
        0
    } else {
        128 - (x - 1).leading_zeros()
    }
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod(acc, b, m);
        }
        b = mul_mod(b, b, m);
        e >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin, exact for all 64-bit inputs.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &p in &BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'outer: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

/// Smallest prime >= n, if one exists below 2^63.
pub fn next_prime(n: u64) -> Option<u64> {
    let mut c = n.max(2);
    while c < MAX_PRIME {
        if is_prime(c) {
            return Some(c);
        }
        c += 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schoolbook(a: u128, b: u128, t: u32) -> u128 {
        // full carry-less product, then long division by the modulus
        let mut prod = [0u8; 256];
        for i in 0..t as usize {
            for j in 0..t as usize {
                prod[i + j] ^= (((a >> i) & 1) & ((b >> j) & 1)) as u8;
            }
        }
        let low = IRREDUCIBLE_LOW[t as usize - 1];
        for d in (t as usize..2 * t as usize).rev() {
            if prod[d] == 1 {
                prod[d] = 0;
                for k in 0..t as usize {
                    prod[d - t as usize + k] ^= ((low >> k) & 1) as u8;
                }
            }
        }
        (0..t as usize).fold(0, |acc, i| acc | (prod[i] as u128) << i)
    }

    #[test]
    fn gf8_examples() {
        let f = Field::binary(3).unwrap();
        assert_eq!(f.mul(0b001, 0b101), 0b101);
        assert_eq!(f.mul(0b010, 0b010), 0b100);
        assert_eq!(f.mul(0b110, 0b101), schoolbook(0b110, 0b101, 3));
        assert_eq!(f.mul(0b110, 0b101), 0b011);
    }

    #[test]
    fn matches_schoolbook_across_degrees() {
        let mut x: u128 = 0x9e37_79b9_7f4a_7c15_f39c_c060_5ced_c834;
        for t in 1..=128u32 {
            let f = Field::binary(t).unwrap();
            let mask = if t == 128 { u128::MAX } else { (1 << t) - 1 };
            for _ in 0..20 {
                x = x.rotate_left(17).wrapping_mul(0x2545_f491_4f6c_dd1d) ^ 0x5851_f42d;
                let a = x & mask;
                let b = x.rotate_left(64) & mask;
                assert_eq!(f.mul(a, b), schoolbook(a, b, t), "t={t}");
            }
        }
    }

    #[test]
    fn table_entries_are_irreducible_small() {
        // irreducible iff no nonzero element is a zero divisor: check x has an inverse
        // and every element has full multiplicative order dividing 2^t-1
        for t in 1..=12u32 {
            let f = Field::binary(t).unwrap();
            for a in 1..(1u128 << t) {
                let inv = f.inv(a).unwrap();
                assert_eq!(f.mul(a, inv), 1, "t={t} a={a}");
            }
        }
    }

    #[test]
    fn binary_field_axioms() {
        for t in 1..=4u32 {
            let f = Field::binary(t).unwrap();
            let q = 1u128 << t;
            check_axioms(&f, q);
        }
    }

    #[test]
    fn prime_field_axioms() {
        for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31] {
            let f = Field::prime(p).unwrap();
            check_axioms(&f, p as u128);
        }
    }

    fn check_axioms(f: &Field, q: u128) {
        for a in 0..q {
            assert_eq!(f.add(a, f.neg(a)), 0);
            if a != 0 {
                assert_eq!(f.mul(a, f.inv(a).unwrap()), 1);
            }
            for b in 0..q {
                assert_eq!(f.mul(a, b), f.mul(b, a));
                for c in 0..q {
                    assert_eq!(f.mul(f.mul(a, b), c), f.mul(a, f.mul(b, c)));
                    assert_eq!(f.add(f.add(a, b), c), f.add(a, f.add(b, c)));
                    assert_eq!(f.mul(a, f.add(b, c)), f.add(f.mul(a, b), f.mul(a, c)));
                }
            }
        }
    }

    #[test]
    fn mismatched_fields_rejected() {
        let a = Field::binary(3).unwrap().elem(1).unwrap();
        let b = Field::prime(7).unwrap().elem(1).unwrap();
        assert!(field_mul(a, b).is_err());
        assert!(Field::binary(3).unwrap().elem(8).is_err());
    }

    #[test]
    fn primes() {
        let small: Vec<u64> = (0..60).filter(|&n| is_prime(n)).collect();
        assert_eq!(small, [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59]);
        assert!(is_prime(0x7fff_ffff_ffff_ffe7));
        assert!(!is_prime(3_215_031_751));
        assert_eq!(next_prime(258), Some(263));
    }

    #[test]
    fn ceil_log2_values() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(1 << 40), 40);
        assert_eq!(ceil_log2((1 << 40) + 1), 41);
    }
}
