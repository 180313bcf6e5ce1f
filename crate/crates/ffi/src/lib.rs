//! C ABI over the generator plans.
//!
//! Generators are opaque handles created by `fprg_generator_new*` and
//! released with `fprg_generator_free`. Every fallible call returns an
//! [`FprgStatus`]; the message of the last failure on the calling thread is
//! available from `fprg_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fourier_prg::bits::BitString;
use fourier_prg::compose::{build_generator, Generator};
use fourier_prg::config::Knobs;
use fourier_prg::prg::Prg;
use fourier_prg::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FprgStatus {
    Ok = 0,
    NullPointer = 1,
    Usage = 2,
    SeedLength = 3,
    Refused = 4,
    BufferTooSmall = 5,
    InvalidUtf8 = 6,
    Json = 7,
    Io = 8,
    Panic = 9,
}

/// Opaque generator handle.
pub struct FprgGenerator {
    inner: Generator,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> FprgStatus {
    match e {
        Error::Usage(_) => FprgStatus::Usage,
        Error::SeedLength { .. } => FprgStatus::SeedLength,
        Error::Refused(_) => FprgStatus::Refused,
        Error::Io(_) => FprgStatus::Io,
        Error::Json(_) => FprgStatus::Json,
    }
}

fn guard(f: impl FnOnce() -> Result<(), FprgStatus>) -> FprgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FprgStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            FprgStatus::Panic
        }
    }
}

fn fail(e: Error) -> FprgStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> FprgStatus {
    set_error(format!("{what} is null"));
    FprgStatus::NullPointer
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, FprgStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not UTF-8"));
        FprgStatus::InvalidUtf8
    })
}

unsafe fn store(out: *mut *mut FprgGenerator, g: Generator) -> Result<(), FprgStatus> {
    if g.alphabet() > u64::MAX as u128 {
        set_error("alphabet does not fit in 64-bit symbols");
        return Err(FprgStatus::Usage);
    }
    *out = Box::into_raw(Box::new(FprgGenerator { inner: g }));
    Ok(())
}

/// Builds the composed generator over [m]^n with error `eps` and default knobs.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn fprg_generator_new(m: u64, n: usize, eps: f64, out: *mut *mut FprgGenerator) -> FprgStatus {
    fprg_generator_new_with_config(m, n, eps, ptr::null(), out)
}

/// As `fprg_generator_new`, with knobs given as `key = value` lines.
/// A null `config` means default knobs.
///
/// # Safety
/// `config` must be null or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fprg_generator_new_with_config(
    m: u64,
    n: usize,
    eps: f64,
    config: *const c_char,
    out: *mut *mut FprgGenerator,
) -> FprgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let knobs = if config.is_null() {
            Knobs::default()
        } else {
            Knobs::parse(text(config, "config")?).map_err(fail)?
        };
        let g = build_generator(m as u128, n, eps, &knobs).map_err(fail)?;
        store(out, g)
    })
}

/// Loads a generator from its plan JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fprg_generator_from_json(json: *const c_char, out: *mut *mut FprgGenerator) -> FprgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let g = Generator::from_json(text(json, "json")?).map_err(fail)?;
        store(out, g)
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `g` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn fprg_generator_free(g: *mut FprgGenerator) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Seed length in bits.
///
/// # Safety
/// `g` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fprg_generator_seed_bits(g: *const FprgGenerator, out: *mut usize) -> FprgStatus {
    guard(|| {
        if g.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        *out = (*g).inner.seed_bits;
        Ok(())
    })
}

/// Output length n and alphabet size m.
///
/// # Safety
/// `g` must be a live handle; `n` and `m` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fprg_generator_shape(g: *const FprgGenerator, n: *mut usize, m: *mut u64) -> FprgStatus {
    guard(|| {
        if g.is_null() || n.is_null() || m.is_null() {
            return Err(null("argument"));
        }
        *n = (*g).inner.dimension();
        *m = (*g).inner.alphabet() as u64;
        Ok(())
    })
}

/// Expands a seed into `n` symbols. The seed is the first `seed_bits` bits
/// of `seed`, most significant bit of byte 0 first; `seed_len` must be
/// exactly ceil(seed_bits / 8) bytes.
///
/// # Safety
/// `g` must be a live handle, `seed` readable for `seed_len` bytes and
/// `out` writable for `out_len` symbols.
#[no_mangle]
pub unsafe extern "C" fn fprg_generator_generate(
    g: *const FprgGenerator,
    seed: *const u8,
    seed_len: usize,
    out: *mut u64,
    out_len: usize,
) -> FprgStatus {
    guard(|| {
        if g.is_null() || out.is_null() || (seed.is_null() && seed_len > 0) {
            return Err(null("argument"));
        }
        let g = &(*g).inner;
        let bits = g.seed_bits;
        if seed_len != bits.div_ceil(8) {
            set_error(format!("seed needs {} bytes, got {seed_len}", bits.div_ceil(8)));
            return Err(FprgStatus::SeedLength);
        }
        if out_len < g.dimension() {
            set_error(format!("output needs {} symbols, got room for {out_len}", g.dimension()));
            return Err(FprgStatus::BufferTooSmall);
        }
        let bytes = if seed_len == 0 { &[][..] } else { std::slice::from_raw_parts(seed, seed_len) };
        let s = BitString::from_bytes(bytes, bits).map_err(fail)?;
        let y = g.generate(&s).map_err(fail)?;
        let dst = std::slice::from_raw_parts_mut(out, out_len);
        for (d, v) in dst.iter_mut().zip(y) {
            *d = v as u64;
        }
        Ok(())
    })
}

/// Plan JSON as a newly allocated string; release it with `fprg_string_free`.
///
/// # Safety
/// `g` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fprg_generator_to_json(g: *const FprgGenerator, out: *mut *mut c_char) -> FprgStatus {
    guard(|| {
        if g.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let json = (*g).inner.to_json().map_err(fail)?;
        *out = CString::new(json).map_err(|_| FprgStatus::Json)?.into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn fprg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failure on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fprg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fprg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
