//! Seeds and other bit strings.
//!
//! Bit order is big-endian throughout: bit 0 is the most significant bit of
//! byte 0. Multi-bit fields read out of a string are interpreted as unsigned
//! integers with the first bit most significant.

use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use smallvec::{smallvec, SmallVec};

use crate::error::{usage, Error, Result};

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitString {
    // seeds of up to 256 bits stay off the heap
    bytes: SmallVec<[u8; 32]>,
    len: usize,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        BitString { bytes: smallvec![0; len.div_ceil(8)], len }
    }

    /// Takes the first `len` bits of `bytes`; trailing bits are cleared.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() * 8 < len {
            return Err(usage(format!(
                "{} bytes cannot hold {len} bits",
                bytes.len()
            )));
        }
        let mut out = BitString { bytes: SmallVec::from_slice(&bytes[..len.div_ceil(8)]), len };
        out.clear_tail();
        Ok(out)
    }

    /// Parses lowercase or uppercase hex; the length is four bits per digit.
    pub fn from_hex(hex: &str) -> Result<Self> {
        let hex = hex.trim();
        let hex = hex.strip_prefix("0x").unwrap_or(hex);
        let mut out = BitString::zeros(hex.len() * 4);
        for (i, c) in hex.chars().enumerate() {
            let nibble = c
                .to_digit(16)
                .ok_or_else(|| usage(format!("invalid hex digit {c:?} in seed")))?;
            out.write(i * 4, 4, nibble as u128);
        }
        Ok(out)
    }

    /// Hex rendering; a partial final nibble is zero-padded on the right.
    pub fn to_hex(&self) -> String {
        let digits = self.len.div_ceil(4);
        let mut s = String::with_capacity(digits);
        for i in 0..digits {
            let width = (self.len - i * 4).min(4);
            let v = (self.read(i * 4, width) << (4 - width)) as u32;
            s.push(char::from_digit(v, 16).unwrap());
        }
        s
    }

    /// The `len`-bit big-endian encoding of `index` (requires `len <= 128`
    /// or high bits zero).
    pub fn from_index(index: u128, len: usize) -> Self {
        let mut out = BitString::zeros(len);
        if len <= 128 {
            out.write(0, len, index);
        } else {
            out.write(len - 128, 128, index);
        }
        out
    }

    /// Overwrites the string with the big-endian encoding of `index`.
    pub fn assign_index(&mut self, index: u128) {
        self.bytes.iter_mut().for_each(|b| *b = 0);
        let len = self.len;
        if len <= 128 {
            self.write(0, len, index);
        } else {
            self.write(len - 128, 128, index);
        }
    }

    pub fn random<R: RngCore + ?Sized>(rng: &mut R, len: usize) -> Self {
        let mut out = BitString::zeros(len);
        rng.fill_bytes(&mut out.bytes);
        out.clear_tail();
        out
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.bytes[i / 8] >> (7 - i % 8)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, bit: bool) {
        debug_assert!(i < self.len);
        let mask = 1u8 << (7 - i % 8);
        if bit {
            self.bytes[i / 8] |= mask;
        } else {
            self.bytes[i / 8] &= !mask;
        }
    }

    /// Reads `width <= 128` bits starting at `offset` as a big-endian integer.
    pub fn read(&self, offset: usize, width: usize) -> u128 {
        assert!(width <= 128, "field of {width} bits does not fit in u128");
        assert!(offset + width <= self.len, "read past end of bit string");
        let mut acc: u128 = 0;
        let mut pos = offset;
        let end = offset + width;
        while pos < end {
            let byte = self.bytes[pos / 8];
            let in_byte = pos % 8;
            let take = (8 - in_byte).min(end - pos);
            let chunk = (byte >> (8 - in_byte - take)) & ((1u16 << take) - 1) as u8;
            acc = (acc << take) | chunk as u128;
            pos += take;
        }
        acc
    }

    /// Writes the low `width` bits of `value` at `offset`, most significant first.
    pub fn write(&mut self, offset: usize, width: usize, value: u128) {
        assert!(width <= 128);
        assert!(offset + width <= self.len, "write past end of bit string");
        let mut pos = offset;
        let end = offset + width;
        while pos < end {
            let in_byte = pos % 8;
            let take = (8 - in_byte).min(end - pos);
            let shift = 8 - in_byte - take;
            let mask = (((1u16 << take) - 1) as u8) << shift;
            let remaining = end - pos - take;
            let chunk = ((value >> remaining) as u8) & (((1u16 << take) - 1) as u8);
            let byte = &mut self.bytes[pos / 8];
            *byte = (*byte & !mask) | (chunk << shift);
            pos += take;
        }
    }

    pub fn slice(&self, offset: usize, len: usize) -> BitString {
        assert!(offset + len <= self.len, "slice past end of bit string");
        let mut out = BitString::zeros(len);
        let mut done = 0;
        while done < len {
            let w = (len - done).min(128);
            out.write(done, w, self.read(offset + done, w));
            done += w;
        }
        out
    }

    pub fn concat(parts: &[&BitString]) -> BitString {
        let total = parts.iter().map(|p| p.len).sum();
        let mut out = BitString::zeros(total);
        let mut at = 0;
        for p in parts {
            out.splice(at, p);
            at += p.len;
        }
        out
    }

    /// Overwrites bits `[offset, offset + src.len())` with `src`.
    pub fn splice(&mut self, offset: usize, src: &BitString) {
        let mut done = 0;
        while done < src.len {
            let w = (src.len - done).min(128);
            self.write(offset + done, w, src.read(done, w));
            done += w;
        }
    }

    /// Bits packed into little-endian u64 words, bit `i` of the string at
    /// word `i / 64`, position `i % 64`. Used by the word-parallel hashes.
    pub(crate) fn to_words(&self) -> Vec<u64> {
        let mut words = vec![0u64; self.len.div_ceil(64)];
        for i in 0..self.len {
            if self.get(i) {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        words
    }

    pub(crate) fn from_words(words: &[u64], len: usize) -> BitString {
        let mut out = BitString::zeros(len);
        for i in 0..len {
            if (words[i / 64] >> (i % 64)) & 1 == 1 {
                out.set(i, true);
            }
        }
        out
    }

    fn clear_tail(&mut self) {
        let rem = self.len % 8;
        if rem != 0 {
            let last = self.bytes.len() - 1;
            self.bytes[last] &= 0xffu8 << (8 - rem);
        }
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({} bits, 0x{})", self.len, self.to_hex())
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            len: usize,
            hex: &'a str,
        }
        Repr { len: self.len, hex: &self.to_hex() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            len: usize,
            hex: String,
        }
        let r = Repr::deserialize(d)?;
        let full = BitString::from_hex(&r.hex).map_err(serde::de::Error::custom)?;
        if full.len() < r.len {
            return Err(serde::de::Error::custom(Error::Usage(format!(
                "hex too short for {} bits",
                r.len
            ))));
        }
        Ok(full.slice(0, r.len))
    }
}

/// Sequential reader over a seed, used to slice local seed material off the
/// front of a plan's seed in depth-first order.
pub struct SeedReader<'a> {
    seed: &'a BitString,
    pos: usize,
}

impl<'a> SeedReader<'a> {
    pub fn new(seed: &'a BitString) -> Self {
        SeedReader { seed, pos: 0 }
    }

    pub fn take_u128(&mut self, width: usize) -> u128 {
        let v = self.seed.read(self.pos, width);
        self.pos += width;
        v
    }

    pub fn take(&mut self, len: usize) -> BitString {
        let v = self.seed.slice(self.pos, len);
        self.pos += len;
        v
    }

    pub fn remaining(&self) -> usize {
        self.seed.len() - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn big_endian_layout() {
        let s = BitString::from_hex("a5").unwrap();
        assert_eq!(s.len(), 8);
        assert!(s.get(0));
        assert!(!s.get(1));
        assert_eq!(s.read(0, 4), 0xa);
        assert_eq!(s.read(2, 4), 0b1001);
        assert_eq!(s.to_hex(), "a5");
    }

    #[test]
    fn index_roundtrip() {
        let s = BitString::from_index(0b1011, 4);
        assert_eq!(s.read(0, 4), 0b1011);
        assert!(s.get(0));
        let wide = BitString::from_index(7, 200);
        assert_eq!(wide.read(197, 3), 7);
        assert_eq!(wide.read(0, 128), 0);
    }

    #[test]
    fn partial_nibble_hex() {
        let mut s = BitString::zeros(5);
        s.set(4, true);
        assert_eq!(s.to_hex(), "08");
    }

    #[test]
    fn slices_and_concat() {
        let s = BitString::from_hex("deadbeefcafe").unwrap();
        let a = s.slice(0, 13);
        let b = s.slice(13, 35);
        assert_eq!(BitString::concat(&[&a, &b]), s);
        let words = s.to_words();
        assert_eq!(BitString::from_words(&words, s.len()), s);
    }

    #[test]
    fn serde_roundtrip() {
        let s = BitString::from_index(0x1f, 7);
        let j = serde_json::to_string(&s).unwrap();
        let back: BitString = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
    }
}
