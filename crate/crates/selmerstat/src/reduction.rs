//! Reduction types at primes p >= 5, Tamagawa numbers, and the exact local
//! Tamagawa ratios attached to prime-degree isogeny steps.

use crate::arith::{self, ArithError};
use crate::curves::{minimal_valuation, CurveError, ShortModel};
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ReductionError {
    #[error("excluded prime")]
    ExcludedPrime,
    #[error("ratio rule undefined at p | deg(φ)")]
    RatioUndefined,
    #[error("local ratio {0} is not supported on the step degree")]
    UnexpectedRatio(String),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Arith(#[from] ArithError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReductionKind {
    Good,
    Multiplicative,
    Additive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionRecord {
    pub p: u64,
    pub kind: ReductionKind,
    /// Defined exactly when the reduction is multiplicative.
    pub split: Option<bool>,
    /// Valuation of the minimal discriminant at p.
    pub v_disc: u32,
    /// Component-group order: v_disc if split, parity-determined in {1,2}
    /// if non-split, 1 if good. Additive reduction is not modeled beyond
    /// the fact that it contributes no ratio term; it records 1.
    pub tamagawa: u32,
    /// Optional exponent n with local ratio = d^n, filled by callers.
    pub n_class: Option<BigRational>,
}

/// Classifies reduction of y^2 = x^3 + ax + b at p >= 5 from the p-minimal
/// model: v(Δ_min) = 0 is good; v > 0 splits into multiplicative (p ∤ c4)
/// and additive (p | c4). A multiplicative node at x0 = -3b(2a)^{-1} is
/// split exactly when 3*x0 is a square mod p.
pub fn classify(s: &ShortModel, p: u64) -> Result<ReductionRecord, ReductionError> {
    if p < 5 {
        return Err(ReductionError::ExcludedPrime);
    }
    let disc = s.disc();
    if disc.is_zero() {
        return Err(CurveError::Singular.into());
    }
    let mv = minimal_valuation(s, p)?;
    if mv.v_disc == 0 {
        return Ok(ReductionRecord {
            p,
            kind: ReductionKind::Good,
            split: None,
            v_disc: 0,
            tamagawa: 1,
            n_class: None,
        });
    }
    if mv.v_c4 != Some(0) {
        return Ok(ReductionRecord {
            p,
            kind: ReductionKind::Additive,
            split: None,
            v_disc: mv.v_disc,
            tamagawa: 1,
            n_class: None,
        });
    }
    // p-minimal coefficients: strip the 12th-power content at p
    let t = (arith::valuation_int(&disc, p)? - mv.v_disc) / 12;
    let pb = BigInt::from(p);
    let a_min = &s.a / pb.pow(4 * t);
    let b_min = &s.b / pb.pow(6 * t);
    let a_p = a_min.mod_floor(&pb).to_u64().expect("residue fits");
    let b_p = b_min.mod_floor(&pb).to_u64().expect("residue fits");
    debug_assert!(a_p != 0, "multiplicative reduction has p ∤ a");
    let inv_2a = arith::pow_mod_u64(2 * a_p % p, p - 2, p);
    let x0 = (p - 3 * b_p % p) % p * inv_2a % p;
    let tangent = 3 * x0 % p;
    debug_assert!(tangent != 0, "node of a multiplicative fiber is ordinary");
    let split = arith::square_mod_u64(tangent, p).is_square;
    let tamagawa = if split {
        mv.v_disc
    } else if mv.v_disc % 2 == 0 {
        2
    } else {
        1
    };
    Ok(ReductionRecord {
        p,
        kind: ReductionKind::Multiplicative,
        split: Some(split),
        v_disc: mv.v_disc,
        tamagawa,
        n_class: None,
    })
}

fn v_ratio(e: &ReductionRecord, q: &ReductionRecord) -> BigRational {
    BigRational::new(BigInt::from(q.v_disc), BigInt::from(e.v_disc))
}

/// Exact c(E')/c(E) across one isogeny step of prime degree `ell`, from the
/// records of the two curves at the same prime. Odd degree grants the
/// valuation ratio only at split primes; degree 2 also grants it whenever
/// gcd(vΔ, vΔ') is odd. Pseudo mode returns the valuation ratio at every
/// multiplicative prime unconditionally. Good and additive primes yield 1.
pub fn step_ratio(
    e: &ReductionRecord,
    q: &ReductionRecord,
    ell: u32,
    pseudo: bool,
) -> Result<BigRational, ReductionError> {
    debug_assert_eq!(e.p, q.p, "records must live at the same prime");
    if e.p % ell as u64 == 0 {
        return Err(ReductionError::RatioUndefined);
    }
    if e.kind != ReductionKind::Multiplicative {
        return Ok(BigRational::one());
    }
    if pseudo {
        return Ok(v_ratio(e, q));
    }
    let split = e.split.expect("multiplicative records carry splitness");
    let grant = if ell == 2 {
        split || e.v_disc.gcd(&q.v_disc) % 2 == 1
    } else {
        split
    };
    Ok(if grant { v_ratio(e, q) } else { BigRational::one() })
}

/// Folds `step_ratio` along a chain: records[i] -> records[i+1] has prime
/// degree steps[i]. Returns the exact end-to-end c(E')/c(E).
pub fn chain_ratio(
    records: &[ReductionRecord],
    steps: &[u32],
    pseudo: bool,
) -> Result<BigRational, ReductionError> {
    assert_eq!(records.len(), steps.len() + 1, "one record per chain curve");
    let mut acc = BigRational::one();
    for (i, &l) in steps.iter().enumerate() {
        acc *= step_ratio(&records[i], &records[i + 1], l, pseudo)?;
    }
    Ok(acc)
}

/// Writes `ratio` as ell^k if possible.
pub fn power_exponent(ratio: &BigRational, ell: u32) -> Option<i64> {
    if !ratio.is_positive() {
        return None;
    }
    let l = BigInt::from(ell);
    let count = |mut n: BigInt| {
        let mut c = 0i64;
        while (&n % &l).is_zero() {
            n /= &l;
            c += 1;
        }
        (c, n)
    };
    let (kn, rn) = count(ratio.numer().clone());
    let (kd, rd) = count(ratio.denom().clone());
    (rn.is_one() && rd.is_one()).then_some(kn - kd)
}

/// Writes `ratio` as 2^a * 3^b if possible.
pub fn ratio_exponents_23(ratio: &BigRational) -> Option<(i64, i64)> {
    if !ratio.is_positive() {
        return None;
    }
    let strip = |mut n: BigInt, l: u32| {
        let l = BigInt::from(l);
        let mut c = 0i64;
        while (&n % &l).is_zero() {
            n /= &l;
            c += 1;
        }
        (c, n)
    };
    let (a_n, n) = strip(ratio.numer().clone(), 2);
    let (b_n, n) = strip(n, 3);
    let (a_d, d) = strip(ratio.denom().clone(), 2);
    let (b_d, d) = strip(d, 3);
    (n.is_one() && d.is_one()).then_some((a_n - a_d, b_n - b_d))
}

/// n with local ratio = d^n, for d a prime power (the end-to-end rule; the
/// per-step grants telescope for prime-power degrees because splitness is
/// isogeny-invariant at multiplicative primes). Good reduction gives 0.
pub fn n_class(
    e: &ReductionRecord,
    q: &ReductionRecord,
    d: u32,
    pseudo: bool,
) -> Result<BigRational, ReductionError> {
    let (ell, exp) = prime_power(d).ok_or(ReductionError::RatioUndefined)?;
    let ratio = step_ratio(e, q, ell, pseudo)?;
    let k = power_exponent(&ratio, ell)
        .ok_or_else(|| ReductionError::UnexpectedRatio(ratio.to_string()))?;
    Ok(BigRational::new(BigInt::from(k), BigInt::from(exp)))
}

fn prime_power(d: u32) -> Option<(u32, u32)> {
    let mut l = 2;
    while l * l <= d {
        if d % l == 0 {
            let mut m = d;
            let mut e = 0;
            while m % l == 0 {
                m /= l;
                e += 1;
            }
            return (m == 1).then_some((l, e));
        }
        l += 1;
    }
    (d > 1).then_some((d, 1))
}
