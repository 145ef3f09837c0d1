//! Prime-field arithmetic with centered-lift signed semantics.
//!
//! Residues are stored in `[0, p)`. Signed integers enter through [`Modulus::encode`]
//! and leave through [`Modulus::decode`], which maps back into
//! `[-(p-1)/2, (p-1)/2]`.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FieldError {
    #[error("{0} is not an odd prime")]
    NotPrime(u64),
    #[error("modulus {0} must be below 2^63")]
    TooLarge(u64),
    #[error("{value} does not fit the centered range of p = {p}")]
    OutOfRange { value: i128, p: u64 },
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// An odd prime below `2^63`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct Modulus(u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FieldElement(u64);

impl FieldElement {
    pub fn value(self) -> u64 {
        self.0
    }
}

impl TryFrom<u64> for Modulus {
    type Error = FieldError;

    fn try_from(p: u64) -> Result<Self, FieldError> {
        Modulus::new(p)
    }
}

impl From<Modulus> for u64 {
    fn from(m: Modulus) -> u64 {
        m.0
    }
}

impl Modulus {
    pub fn new(p: u64) -> Result<Self, FieldError> {
        if p >= 1 << 63 {
            return Err(FieldError::TooLarge(p));
        }
        if p < 3 || !is_prime(p) {
            return Err(FieldError::NotPrime(p));
        }
        Ok(Self(p))
    }

    pub fn p(self) -> u64 {
        self.0
    }

    /// `(p - 1) / 2`, the largest magnitude representable after decoding.
    pub fn half(self) -> u64 {
        (self.0 - 1) / 2
    }

    /// Residue of an existing `[0, p)` value.
    pub fn element(self, value: u64) -> FieldElement {
        FieldElement(value % self.0)
    }

    pub fn encode(self, v: i64) -> Result<FieldElement, FieldError> {
        if v.unsigned_abs() > self.half() {
            return Err(FieldError::OutOfRange {
                value: v as i128,
                p: self.0,
            });
        }
        Ok(self.reduce_i128(v as i128))
    }

    /// `v mod p` without a range check.
    pub fn reduce_i128(self, v: i128) -> FieldElement {
        FieldElement(v.rem_euclid(self.0 as i128) as u64)
    }

    /// `v mod p` for arbitrary-precision integers.
    pub fn reduce_big(self, v: &BigInt) -> FieldElement {
        let r = v.mod_floor(&BigInt::from(self.0));
        FieldElement(r.to_u64().expect("residue below p"))
    }

    pub fn decode(self, e: FieldElement) -> i64 {
        if e.0 <= self.half() {
            e.0 as i64
        } else {
            e.0 as i64 - self.0 as i64
        }
    }

    pub fn add(self, a: FieldElement, b: FieldElement) -> FieldElement {
        let s = a.0 as u128 + b.0 as u128;
        FieldElement((s % self.0 as u128) as u64)
    }

    pub fn sub(self, a: FieldElement, b: FieldElement) -> FieldElement {
        self.add(a, self.neg(b))
    }

    pub fn mul(self, a: FieldElement, b: FieldElement) -> FieldElement {
        FieldElement(((a.0 as u128 * b.0 as u128) % self.0 as u128) as u64)
    }

    pub fn neg(self, a: FieldElement) -> FieldElement {
        if a.0 == 0 {
            a
        } else {
            FieldElement(self.0 - a.0)
        }
    }

    pub fn dot(self, a: &[FieldElement], b: &[FieldElement]) -> Result<FieldElement, FieldError> {
        if a.len() != b.len() {
            return Err(FieldError::LengthMismatch(a.len(), b.len()));
        }
        Ok(self.dot_unchecked(a.iter().copied().zip(b.iter().copied())))
    }

    pub(crate) fn dot_unchecked(
        self,
        pairs: impl Iterator<Item = (FieldElement, FieldElement)>,
    ) -> FieldElement {
        let p = self.0 as u128;
        // Products are below 2^126, so two can be summed before reducing.
        let mut acc: u128 = 0;
        for (x, y) in pairs {
            acc += x.0 as u128 * y.0 as u128;
            if acc >= 1 << 126 {
                acc %= p;
            }
        }
        FieldElement((acc % p) as u64)
    }

    /// Horner evaluation of `sum coeffs[k] x^k` with coefficients reduced mod p.
    pub fn eval_int_poly(self, coeffs: &[i64], x: FieldElement) -> FieldElement {
        coeffs.iter().rev().fold(FieldElement(0), |acc, &c| {
            self.add(self.mul(acc, x), self.reduce_i128(c as i128))
        })
    }
}

/// Free-function form of [`Modulus::eval_int_poly`].
pub fn eval_int_poly_field(coeffs: &[i64], x: FieldElement, m: Modulus) -> FieldElement {
    m.eval_int_poly(coeffs, x)
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin, exact for every `u64`.
pub fn is_prime(n: u64) -> bool {
    const WITNESSES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &w in &WITNESSES {
        if n % w == 0 {
            return n == w;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &WITNESSES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Smallest prime `>= n` (and at least 3), or `None` past `2^63`.
pub fn next_prime(n: u64) -> Option<u64> {
    let mut c = n.max(3);
    if c % 2 == 0 {
        c += 1;
    }
    while c < 1 << 63 {
        if is_prime(c) {
            return Some(c);
        }
        c += 2;
    }
    None
}
