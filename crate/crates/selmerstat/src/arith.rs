//! Exact integer and residue utilities: factorization, p-adic valuations,
//! quadratic residue tests, and prime streams in arithmetic progressions.

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use once_cell::sync::Lazy;
use thiserror::Error;

/// Trial division bound; primes below this are sieved once and reused.
pub const TRIAL_BOUND: u64 = 100_000;

/// Default cap on rho iteration count per factorization call.
///
/// Sized so that a 128-bit semiprime with a 64-bit smallest factor still
/// resolves (expected ~2^32 iterations) with slack for unlucky polynomial
/// constants, while runaway inputs fail loudly instead of hanging a worker.
pub const DEFAULT_FACTOR_BUDGET: u64 = 1 << 34;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArithError {
    #[error("valuation undefined for zero input")]
    ValuationUndefined,
    #[error("factorization budget exceeded (n = {0})")]
    FactorizationBudgetExceeded(String),
    #[error("zero has no factorization")]
    ZeroFactorization,
    #[error("factorization input exceeds 128 bits: {0}")]
    InputTooLarge(String),
    #[error("is_square_mod requires an odd prime modulus, got 2")]
    EvenModulus,
}

static SMALL_PRIMES: Lazy<Vec<u32>> = Lazy::new(|| sieve(TRIAL_BOUND as usize));

fn sieve(bound: usize) -> Vec<u32> {
    let mut composite = vec![false; bound + 1];
    let mut primes = Vec::new();
    for p in 2..=bound {
        if composite[p] {
            continue;
        }
        primes.push(p as u32);
        let mut k = p * p;
        while k <= bound {
            composite[k] = true;
            k += p;
        }
    }
    primes
}

/// A complete signed factorization: `sign * prod(p^e) == value`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factorization {
    pub sign: i8,
    /// `(prime, exponent)` pairs with strictly increasing primes.
    pub factors: Vec<(u128, u32)>,
}

impl Factorization {
    pub fn value(&self) -> BigInt {
        let mut v = BigInt::from(self.sign);
        for &(p, e) in &self.factors {
            v *= BigInt::from(p).pow(e);
        }
        v
    }

    pub fn valuation(&self, p: u128) -> u32 {
        self.factors
            .iter()
            .find(|&&(q, _)| q == p)
            .map_or(0, |&(_, e)| e)
    }
}

/// Factors a nonzero integer with the default iteration budget.
pub fn factorize(n: &BigInt) -> Result<Factorization, ArithError> {
    factorize_with_budget(n, DEFAULT_FACTOR_BUDGET)
}

/// Factors a nonzero integer of at most 128 bits in absolute value.
///
/// Trial division up to [`TRIAL_BOUND`] followed by Brent's cycle-finding
/// variant of the rho method; `budget` caps the total number of rho
/// iterations, and exhausting it is an error rather than a partial answer.
pub fn factorize_with_budget(n: &BigInt, budget: u64) -> Result<Factorization, ArithError> {
    if n.is_zero() {
        return Err(ArithError::ZeroFactorization);
    }
    let sign = if n.sign() == Sign::Minus { -1 } else { 1 };
    let mag = n
        .magnitude()
        .to_u128()
        .ok_or_else(|| ArithError::InputTooLarge(n.to_string()))?;
    let factors = factorize_u128(mag, budget)?;
    Ok(Factorization { sign, factors })
}

/// Factors a nonzero `u128`, returning ascending `(prime, exponent)` pairs.
pub fn factorize_u128(mut n: u128, budget: u64) -> Result<Vec<(u128, u32)>, ArithError> {
    assert!(n != 0, "factorize_u128 requires nonzero input");
    let original = n;
    let mut out: Vec<(u128, u32)> = Vec::new();
    for &p in SMALL_PRIMES.iter() {
        let p = p as u128;
        if p * p > n {
            break;
        }
        if n % p == 0 {
            let mut e = 0u32;
            while n % p == 0 {
                n /= p;
                e += 1;
            }
            out.push((p, e));
        }
    }
    if n > 1 {
        if n < (TRIAL_BOUND as u128) * (TRIAL_BOUND as u128) {
            // Any remaining cofactor below the trial square is prime.
            out.push((n, 1));
        } else {
            let mut budget = budget;
            let mut stack = vec![n];
            let mut hard: Vec<u128> = Vec::new();
            while let Some(m) = stack.pop() {
                if is_prime_u128(m) {
                    hard.push(m);
                    continue;
                }
                let d = split_composite(m, &mut budget)
                    .ok_or_else(|| ArithError::FactorizationBudgetExceeded(original.to_string()))?;
                stack.push(d);
                stack.push(m / d);
            }
            hard.sort_unstable();
            let mut i = 0;
            while i < hard.len() {
                let p = hard[i];
                let mut e = 0u32;
                while i < hard.len() && hard[i] == p {
                    e += 1;
                    i += 1;
                }
                out.push((p, e));
            }
        }
    }
    out.sort_unstable_by_key(|&(p, _)| p);
    debug_assert!(out.windows(2).all(|w| w[0].0 < w[1].0));
    Ok(out)
}

/// Largest `e` with `p^e | n`, for nonzero integers.
pub fn valuation_int(n: &BigInt, p: u64) -> Result<u32, ArithError> {
    if n.is_zero() {
        return Err(ArithError::ValuationUndefined);
    }
    let p = BigInt::from(p);
    let mut m = n.abs();
    let mut e = 0u32;
    loop {
        let (q, r) = m.div_rem(&p);
        if !r.is_zero() {
            return Ok(e);
        }
        m = q;
        e += 1;
    }
}

/// p-adic valuation of a nonzero rational: `v(num) - v(den)`.
pub fn valuation(x: &BigRational, p: u64) -> Result<i64, ArithError> {
    if x.is_zero() {
        return Err(ArithError::ValuationUndefined);
    }
    let vn = valuation_int(x.numer(), p)? as i64;
    let vd = valuation_int(x.denom(), p)? as i64;
    Ok(vn - vd)
}

/// Result of a quadratic residue test; a zero residue is never a "square"
/// here and is flagged so callers can assert they tested a unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SquareMod {
    pub is_square: bool,
    pub zero_residue: bool,
}

/// Euler-criterion residue test modulo an odd prime.
pub fn is_square_mod(a: &BigInt, q: u64) -> Result<SquareMod, ArithError> {
    if q == 2 {
        return Err(ArithError::EvenModulus);
    }
    debug_assert!(is_prime_u128(q as u128), "modulus must be prime");
    let r = a.mod_floor(&BigInt::from(q)).to_u64().unwrap();
    Ok(square_mod_u64(r, q))
}

/// `is_square_mod` for residues already reduced into `u64` range.
pub fn square_mod_u64(a: u64, q: u64) -> SquareMod {
    let r = a % q;
    if r == 0 {
        return SquareMod {
            is_square: false,
            zero_residue: true,
        };
    }
    let e = pow_mod_u64(r, (q - 1) / 2, q);
    SquareMod {
        is_square: e == 1,
        zero_residue: false,
    }
}

pub fn pow_mod_u64(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc: u64 = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = ((acc as u128 * b as u128) % m as u128) as u64;
        }
        b = ((b as u128 * b as u128) % m as u128) as u64;
        e >>= 1;
    }
    acc
}

/// Primes `q <= bound` with `q = a (mod m)`, plus a warning flag when the
/// class is not coprime to the modulus (in which case the list is empty
/// apart from the degenerate `m = 1` case, which imposes no restriction).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassPrimes {
    pub primes: Vec<u64>,
    pub coprime_warning: bool,
}

pub fn primes_in_class(m: u64, a: u64, bound: u64) -> ClassPrimes {
    assert!(m >= 1, "modulus must be positive");
    if m > 1 && gcd_u64(a % m, m) != 1 {
        return ClassPrimes {
            primes: Vec::new(),
            coprime_warning: true,
        };
    }
    let primes = primes_up_to(bound)
        .into_iter()
        .filter(|&p| m == 1 || p % m == a % m)
        .collect();
    ClassPrimes {
        primes,
        coprime_warning: false,
    }
}

/// All primes up to `bound`, ascending.
pub fn primes_up_to(bound: u64) -> Vec<u64> {
    if bound < 2 {
        return Vec::new();
    }
    if bound <= TRIAL_BOUND {
        return SMALL_PRIMES
            .iter()
            .take_while(|&&p| p as u64 <= bound)
            .map(|&p| p as u64)
            .collect();
    }
    sieve(bound as usize).into_iter().map(|p| p as u64).collect()
}

/// Partial sum of prime reciprocals in an arithmetic progression:
/// `sum of 1/q over primes q <= bound with q = a (mod m)`. Diagnostic only.
pub fn mertens_ap(m: u64, a: u64, bound: u64) -> f64 {
    primes_in_class(m, a, bound)
        .primes
        .iter()
        .map(|&p| 1.0 / p as f64)
        .sum()
}

pub fn gcd_u64(a: u64, b: u64) -> u64 {
    a.gcd(&b)
}

pub fn gcd_u128(a: u128, b: u128) -> u128 {
    a.gcd(&b)
}

// --- primality -------------------------------------------------------------

/// Deterministic Miller-Rabin below 2^64; 40 fixed rounds above.
pub fn is_prime_u128(n: u128) -> bool {
    if n < 2 {
        return false;
    }
    for &p in &[2u128, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == p {
            return true;
        }
        if n % p == 0 {
            return false;
        }
    }
    if n < (1 << 64) {
        // This base set is known to be exact for all 64-bit inputs.
        miller_rabin(n, &[2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37])
    } else {
        const BASES: [u128; 40] = [
            2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79,
            83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173,
        ];
        miller_rabin(n, &BASES)
    }
}

fn miller_rabin(n: u128, bases: &[u128]) -> bool {
    let d = n - 1;
    let s = d.trailing_zeros();
    let d = d >> s;
    let mont = Montgomery::new(n);
    let one = mont.to_mont(1);
    let minus_one = mont.sub(0, one);
    'outer: for &b in bases {
        let b = b % n;
        if b == 0 {
            continue;
        }
        let mut x = mont.pow(mont.to_mont(b), d);
        if x == one || x == minus_one {
            continue;
        }
        for _ in 1..s {
            x = mont.mul(x, x);
            if x == minus_one {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

// --- Montgomery arithmetic for odd 128-bit moduli --------------------------

/// Montgomery domain (R = 2^128) modular arithmetic for an odd modulus.
struct Montgomery {
    n: u128,
    neg_inv: u128,
    r2: u128,
}

impl Montgomery {
    fn new(n: u128) -> Self {
        debug_assert!(n & 1 == 1 && n > 1);
        // Newton iteration for n^{-1} mod 2^128.
        let mut inv: u128 = 1;
        for _ in 0..7 {
            inv = inv.wrapping_mul(2u128.wrapping_sub(n.wrapping_mul(inv)));
        }
        debug_assert!(n.wrapping_mul(inv) == 1);
        let r = (u128::MAX % n) + 1; // 2^128 mod n (n > 1 so no wrap to n)
        let r = if r == n { 0 } else { r };
        let mut r2 = r;
        for _ in 0..128 {
            r2 = add_mod(r2, r2, n);
        }
        Montgomery {
            n,
            neg_inv: inv.wrapping_neg(),
            r2,
        }
    }

    fn to_mont(&self, x: u128) -> u128 {
        self.mul_plain(x % self.n, self.r2)
    }

    /// Montgomery product of two domain elements.
    fn mul(&self, a: u128, b: u128) -> u128 {
        self.mul_plain(a, b)
    }

    fn mul_plain(&self, a: u128, b: u128) -> u128 {
        let (t_hi, t_lo) = mul_wide(a, b);
        self.redc(t_hi, t_lo)
    }

    fn redc(&self, t_hi: u128, t_lo: u128) -> u128 {
        let m = t_lo.wrapping_mul(self.neg_inv);
        let (mn_hi, mn_lo) = mul_wide(m, self.n);
        let (_, carry) = t_lo.overflowing_add(mn_lo);
        let (sum, c2) = t_hi.overflowing_add(mn_hi);
        let (sum, c3) = sum.overflowing_add(carry as u128);
        if c2 || c3 || sum >= self.n {
            sum.wrapping_sub(self.n)
        } else {
            sum
        }
    }

    fn add(&self, a: u128, b: u128) -> u128 {
        add_mod(a, b, self.n)
    }

    fn sub(&self, a: u128, b: u128) -> u128 {
        if a >= b {
            a - b
        } else {
            self.n - (b - a)
        }
    }

    fn pow(&self, base: u128, mut e: u128) -> u128 {
        let mut acc = self.to_mont(1);
        let mut b = base;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul(acc, b);
            }
            b = self.mul(b, b);
            e >>= 1;
        }
        acc
    }
}

fn add_mod(a: u128, b: u128, n: u128) -> u128 {
    let (s, c) = a.overflowing_add(b);
    if c || s >= n {
        s.wrapping_sub(n)
    } else {
        s
    }
}

/// Full 128x128 -> 256 bit product as `(hi, lo)`.
fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    const MASK: u128 = (1 << 64) - 1;
    let (a1, a0) = (a >> 64, a & MASK);
    let (b1, b0) = (b >> 64, b & MASK);
    let ll = a0 * b0;
    let lh = a0 * b1;
    let hl = a1 * b0;
    let hh = a1 * b1;
    let (mid, mc) = lh.overflowing_add(hl);
    let (lo, lc) = ll.overflowing_add(mid << 64);
    let hi = hh + (mid >> 64) + ((mc as u128) << 64) + lc as u128;
    (hi, lo)
}

// --- composite splitting ----------------------------------------------------

/// Iteration cap for the cheap rho pass on 128-bit composites before
/// escalating to elliptic curves; catches second factors up to ~2^34.
const RHO_PREPASS: u64 = 200_000;

/// One nontrivial factor of an odd composite with no factor below the trial
/// bound, or `None` if the iteration budget runs out.
///
/// Strategy: perfect squares by integer root; composites under 2^64 by rho
/// (their least factor is below 2^32, so rho is fast); larger composites by
/// a short rho pass for small factors, then ECM stage 1, which finds the
/// 50-64 bit factors of balanced semiprimes orders of magnitude sooner than
/// rho's sqrt(p) random walk.
fn split_composite(n: u128, budget: &mut u64) -> Option<u128> {
    debug_assert!(n & 1 == 1 && !is_prime_u128(n));
    if let Some(r) = exact_sqrt(n) {
        return Some(r);
    }
    if n < (1 << 64) {
        return rho_u64(n as u64, budget).map(u128::from);
    }
    let mut slice = RHO_PREPASS.min(*budget);
    let before = slice;
    let outcome = brent(n, 1, &mut slice);
    *budget -= before - slice;
    match outcome {
        BrentOutcome::Factor(d) => return Some(d),
        BrentOutcome::Cycle | BrentOutcome::OutOfBudget => {}
    }
    if *budget == 0 {
        return None;
    }
    ecm_split(n, budget)
}

fn rho_u64(n: u64, budget: &mut u64) -> Option<u64> {
    for c in 1u64.. {
        match brent_u64(n, c, budget) {
            BrentOutcome64::Factor(d) => return Some(d),
            BrentOutcome64::Cycle => continue,
            BrentOutcome64::OutOfBudget => return None,
        }
    }
    unreachable!()
}

enum BrentOutcome {
    Factor(u128),
    Cycle,
    OutOfBudget,
}

fn brent(n: u128, c: u128, budget: &mut u64) -> BrentOutcome {
    const BATCH: u64 = 128;
    let mont = Montgomery::new(n);
    let c = mont.to_mont(c);
    let f = |x: u128| mont.add(mont.mul(x, x), c);
    let mut y = mont.to_mont(2);
    let mut q = mont.to_mont(1);
    let mut g: u128 = 1;
    let mut r: u64 = 1;
    let mut x = y;
    let mut ys = y;
    while g == 1 {
        x = y;
        for _ in 0..r {
            y = f(y);
        }
        if *budget < r {
            return BrentOutcome::OutOfBudget;
        }
        *budget -= r;
        let mut k = 0u64;
        while k < r && g == 1 {
            ys = y;
            let m = BATCH.min(r - k);
            if *budget < m {
                return BrentOutcome::OutOfBudget;
            }
            *budget -= m;
            for _ in 0..m {
                y = f(y);
                q = mont.mul(q, mont.sub(x, y));
            }
            g = gcd_u128(q, n);
            k += m;
        }
        r = r.saturating_mul(2);
    }
    if g == n {
        // Batch overshot: replay one step at a time from the last checkpoint.
        loop {
            ys = f(ys);
            if *budget == 0 {
                return BrentOutcome::OutOfBudget;
            }
            *budget -= 1;
            g = gcd_u128(mont.sub(x, ys), n);
            if g > 1 {
                break;
            }
        }
    }
    if g == n {
        BrentOutcome::Cycle
    } else {
        BrentOutcome::Factor(g)
    }
}

enum BrentOutcome64 {
    Factor(u64),
    Cycle,
    OutOfBudget,
}

fn brent_u64(n: u64, c: u64, budget: &mut u64) -> BrentOutcome64 {
    const BATCH: u64 = 128;
    let mont = Montgomery64::new(n);
    let c = mont.to_mont(c);
    let f = |x: u64| mont.add(mont.mul(x, x), c);
    let mut y = mont.to_mont(2);
    let mut q = mont.to_mont(1);
    let mut g: u64 = 1;
    let mut r: u64 = 1;
    let mut x = y;
    let mut ys = y;
    while g == 1 {
        x = y;
        for _ in 0..r {
            y = f(y);
        }
        if *budget < r {
            return BrentOutcome64::OutOfBudget;
        }
        *budget -= r;
        let mut k = 0u64;
        while k < r && g == 1 {
            ys = y;
            let m = BATCH.min(r - k);
            if *budget < m {
                return BrentOutcome64::OutOfBudget;
            }
            *budget -= m;
            for _ in 0..m {
                y = f(y);
                q = mont.mul(q, mont.sub(x, y));
            }
            g = gcd_u64(q, n);
            k += m;
        }
        r = r.saturating_mul(2);
    }
    if g == n {
        loop {
            ys = f(ys);
            if *budget == 0 {
                return BrentOutcome64::OutOfBudget;
            }
            *budget -= 1;
            g = gcd_u64(mont.sub(x, ys), n);
            if g > 1 {
                break;
            }
        }
    }
    if g == n {
        BrentOutcome64::Cycle
    } else {
        BrentOutcome64::Factor(g)
    }
}

/// Montgomery domain (R = 2^64) arithmetic for odd moduli below 2^64.
struct Montgomery64 {
    n: u64,
    neg_inv: u64,
    r2: u64,
}

impl Montgomery64 {
    fn new(n: u64) -> Self {
        debug_assert!(n & 1 == 1 && n > 1);
        let mut inv: u64 = 1;
        for _ in 0..6 {
            inv = inv.wrapping_mul(2u64.wrapping_sub(n.wrapping_mul(inv)));
        }
        debug_assert!(n.wrapping_mul(inv) == 1);
        let r = ((u64::MAX % n) + 1) % n;
        let mut r2 = r;
        for _ in 0..64 {
            r2 = add_mod_u64(r2, r2, n);
        }
        Montgomery64 {
            n,
            neg_inv: inv.wrapping_neg(),
            r2,
        }
    }

    fn to_mont(&self, x: u64) -> u64 {
        self.mul(x % self.n, self.r2)
    }

    fn mul(&self, a: u64, b: u64) -> u64 {
        let t = a as u128 * b as u128;
        let m = (t as u64).wrapping_mul(self.neg_inv);
        let mn = m as u128 * self.n as u128;
        let (sum, carry) = t.overflowing_add(mn);
        let hi = (sum >> 64) as u64;
        if carry || hi >= self.n {
            hi.wrapping_sub(self.n)
        } else {
            hi
        }
    }

    fn add(&self, a: u64, b: u64) -> u64 {
        add_mod_u64(a, b, self.n)
    }

    fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            self.n - (b - a)
        }
    }
}

fn add_mod_u64(a: u64, b: u64, n: u64) -> u64 {
    let (s, c) = a.overflowing_add(b);
    if c || s >= n {
        s.wrapping_sub(n)
    } else {
        s
    }
}

// --- ECM stage 1 -------------------------------------------------------------

/// Smoothness-bound tiers: a few cheap curves first, then progressively
/// deeper stage-1 bounds. The last tier repeats until the budget runs out.
const ECM_TIERS: [(u64, u32); 3] = [(2_000, 12), (11_000, 30), (50_000, u32::MAX)];

/// Budget units charged per ladder bit; one bit costs about five times a
/// rho step (11 modular multiplications versus 2).
const ECM_BIT_COST: u64 = 6;

/// ECM stage 1 on Montgomery curves with Suyama parametrization.
///
/// Only relative primality to 6 is assumed (guaranteed here by prior trial
/// division). Each curve multiplies a point by every prime power up to the
/// tier bound and takes a gcd with the accumulated z-coordinate; a gcd
/// strictly between 1 and n is a factor.
fn ecm_split(n: u128, budget: &mut u64) -> Option<u128> {
    let mut sigma: u64 = 6;
    for &(b1, curves) in ECM_TIERS.iter() {
        let plan = stage1_plan(b1);
        let cost = ECM_BIT_COST * plan.iter().map(|&(_, bits)| bits as u64).sum::<u64>();
        for _ in 0..curves {
            if *budget < cost {
                return None;
            }
            *budget -= cost;
            match ecm_curve(n, sigma, &plan) {
                EcmOutcome::Factor(d) => return Some(d),
                EcmOutcome::NoFactor => {}
            }
            sigma += 1;
        }
    }
    None
}

/// Prime powers `l^e <= B1` as `(l^e, bit length)` pairs.
fn stage1_plan(b1: u64) -> Vec<(u128, u32)> {
    primes_up_to(b1)
        .into_iter()
        .map(|l| {
            let mut pk = l;
            while pk <= b1 / l {
                pk *= l;
            }
            (pk as u128, 64 - pk.leading_zeros())
        })
        .collect()
}

enum EcmOutcome {
    Factor(u128),
    NoFactor,
}

fn ecm_curve(n: u128, sigma: u64, plan: &[(u128, u32)]) -> EcmOutcome {
    let big_n = BigInt::from(n);
    let three = BigInt::from(3u32);
    let s = BigInt::from(sigma);
    let u = (&s * &s - 5u32).mod_floor(&big_n);
    let v = (&s * 4u32).mod_floor(&big_n);
    let x0 = u.modpow(&three, &big_n);
    let z0 = v.modpow(&three, &big_n);
    // a24 = (v-u)^3 (3u+v) / (16 u^3 v); a failed inversion is itself a gcd.
    let num = (&v - &u).mod_floor(&big_n).modpow(&three, &big_n)
        * ((&u * 3u32 + &v).mod_floor(&big_n))
        % &big_n;
    let den = (&x0 * 16u32 % &big_n * &v) % &big_n;
    let a24 = match mod_inverse(&den, &big_n) {
        Ok(inv) => num * inv % &big_n,
        Err(g) => {
            let g = g.to_u128().expect("gcd fits the modulus");
            return if g > 1 && g < n {
                EcmOutcome::Factor(g)
            } else {
                EcmOutcome::NoFactor
            };
        }
    };

    let mont = Montgomery::new(n);
    let a24 = mont.to_mont(a24.to_u128().unwrap());
    let mut p = MontPoint {
        x: mont.to_mont(x0.to_u128().unwrap()),
        z: mont.to_mont(z0.to_u128().unwrap()),
    };
    for &(k, _) in plan {
        p = ladder(&mont, &p, a24, k);
        if p.z == 0 {
            // Died modulo every factor at once; hope is lost for this curve.
            return EcmOutcome::NoFactor;
        }
    }
    // gcd is insensitive to the Montgomery scaling, which is a unit mod n.
    let g = gcd_u128(p.z, n);
    if g > 1 && g < n {
        EcmOutcome::Factor(g)
    } else {
        EcmOutcome::NoFactor
    }
}

#[derive(Clone, Copy)]
struct MontPoint {
    x: u128,
    z: u128,
}

/// x-only scalar multiplication by `k >= 2` via the Montgomery ladder.
fn ladder(mont: &Montgomery, p: &MontPoint, a24: u128, k: u128) -> MontPoint {
    debug_assert!(k >= 2);
    let mut r0 = *p;
    let mut r1 = xdbl(mont, p, a24);
    let bits = 128 - k.leading_zeros();
    for i in (0..bits - 1).rev() {
        if (k >> i) & 1 == 1 {
            r0 = xadd(mont, &r0, &r1, p);
            r1 = xdbl(mont, &r1, a24);
        } else {
            r1 = xadd(mont, &r0, &r1, p);
            r0 = xdbl(mont, &r0, a24);
        }
    }
    r0
}

fn xdbl(mont: &Montgomery, p: &MontPoint, a24: u128) -> MontPoint {
    let a = mont.add(p.x, p.z);
    let aa = mont.mul(a, a);
    let b = mont.sub(p.x, p.z);
    let bb = mont.mul(b, b);
    let c = mont.sub(aa, bb);
    MontPoint {
        x: mont.mul(aa, bb),
        z: mont.mul(c, mont.add(bb, mont.mul(a24, c))),
    }
}

/// Differential addition: `p + q` given `diff = p - q`.
fn xadd(mont: &Montgomery, p: &MontPoint, q: &MontPoint, diff: &MontPoint) -> MontPoint {
    let da = mont.mul(mont.sub(p.x, p.z), mont.add(q.x, q.z));
    let cb = mont.mul(mont.add(p.x, p.z), mont.sub(q.x, q.z));
    let s = mont.add(da, cb);
    let d = mont.sub(da, cb);
    MontPoint {
        x: mont.mul(diff.z, mont.mul(s, s)),
        z: mont.mul(diff.x, mont.mul(d, d)),
    }
}

/// Inverse of `a` mod `m`, or the offending gcd when not coprime.
fn mod_inverse(a: &BigInt, m: &BigInt) -> Result<BigInt, BigInt> {
    let e = a.extended_gcd(m);
    if e.gcd == BigInt::from(1u32) {
        Ok(e.x.mod_floor(m))
    } else {
        Err(e.gcd)
    }
}

fn isqrt_u128(n: u128) -> u128 {
    if n < 2 {
        return n;
    }
    // f64 seed is within ~2^12 of the true root; Newton descent from above.
    let mut x = ((n as f64).sqrt() as u128).saturating_add(1 << 14);
    loop {
        let y = (x + n / x) >> 1;
        if y >= x {
            return x;
        }
        x = y;
    }
}

fn exact_sqrt(n: u128) -> Option<u128> {
    let r = isqrt_u128(n);
    if r * r == n {
        Some(r)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;

    #[test]
    fn valuation_examples() {
        assert_eq!(valuation_int(&BigInt::from(48), 2).unwrap(), 4);
        assert_eq!(valuation_int(&BigInt::from(1), 7).unwrap(), 0);
        let n = -BigInt::from(11).pow(5);
        assert_eq!(valuation_int(&n, 11).unwrap(), 5);
        assert_eq!(
            valuation(&BigRational::new(BigInt::from(3), BigInt::from(8)), 2).unwrap(),
            -3
        );
        assert_eq!(
            valuation(&BigRational::zero(), 5),
            Err(ArithError::ValuationUndefined)
        );
    }

    #[test]
    fn valuation_strips_completely() {
        for n in [-720i64, 99, 1024, -3, 123456] {
            for p in [2u64, 3, 5, 7] {
                let v = valuation_int(&BigInt::from(n), p).unwrap();
                let stripped = BigInt::from(n) / BigInt::from(p).pow(v);
                assert_eq!(valuation_int(&stripped, p).unwrap(), 0);
            }
        }
    }

    #[test]
    fn factorize_examples() {
        let f = factorize(&BigInt::one()).unwrap();
        assert_eq!(f.sign, 1);
        assert!(f.factors.is_empty());

        let f = factorize(&BigInt::from(-48)).unwrap();
        assert_eq!(f.sign, -1);
        assert_eq!(f.factors, vec![(2, 4), (3, 1)]);

        // 16 * 1 * (25 - 4) = 336
        let f = factorize(&BigInt::from(336)).unwrap();
        assert_eq!(f.factors, vec![(2, 4), (3, 1), (7, 1)]);

        assert_eq!(
            factorize(&BigInt::zero()),
            Err(ArithError::ZeroFactorization)
        );
    }

    #[test]
    fn factorize_large_semiprime() {
        // Two 40-bit primes; far beyond trial division.
        let p: u128 = 1_099_511_627_791; // 2^40 + 15
        let q: u128 = 1_099_511_627_873;
        assert!(is_prime_u128(p) && is_prime_u128(q));
        let f = factorize_u128(p * q, DEFAULT_FACTOR_BUDGET).unwrap();
        assert_eq!(f, vec![(p, 1), (q, 1)]);
    }

    #[test]
    fn factorize_prime_square() {
        let p: u128 = 1_099_511_627_791;
        let f = factorize_u128(p * p, DEFAULT_FACTOR_BUDGET).unwrap();
        assert_eq!(f, vec![(p, 2)]);
    }

    fn next_prime(mut n: u128) -> u128 {
        loop {
            n += 1;
            if is_prime_u128(n) {
                return n;
            }
        }
    }

    #[test]
    fn factorize_balanced_semiprime_via_curves() {
        // ~59-bit primes: the rho pre-pass cannot split this in 2*10^5
        // steps, so it exercises the elliptic-curve stage.
        let p = next_prime(1 << 59);
        let q = next_prime((1 << 59) + 987_654_321);
        let f = factorize_u128(p * q, DEFAULT_FACTOR_BUDGET).unwrap();
        assert_eq!(f, vec![(p, 1), (q, 1)]);
    }

    #[test]
    fn isqrt_edges() {
        for n in [0u128, 1, 2, 3, 4, 8, 9, u128::MAX, (1 << 64) - 1, 1 << 64] {
            let r = isqrt_u128(n);
            assert!(r * r <= n);
            assert!(r.checked_add(1).and_then(|s| s.checked_mul(s)).map_or(true, |s| s > n));
        }
        let r: u128 = 12_345_678_901_234_567_890;
        assert_eq!(exact_sqrt(r * r), Some(r));
        assert_eq!(exact_sqrt(r * r + 1), None);
    }

    #[test]
    fn budget_exceeded_is_an_error() {
        let p: u128 = 1_099_511_627_791;
        let q: u128 = 1_099_511_627_873;
        let err = factorize_with_budget(&(BigInt::from(p) * BigInt::from(q)), 4).unwrap_err();
        assert!(matches!(err, ArithError::FactorizationBudgetExceeded(_)));
    }

    #[test]
    fn square_mod_examples() {
        assert_eq!(
            is_square_mod(&BigInt::from(-3), 7).unwrap(),
            SquareMod {
                is_square: true,
                zero_residue: false
            }
        );
        assert_eq!(
            is_square_mod(&BigInt::from(-3), 5).unwrap(),
            SquareMod {
                is_square: false,
                zero_residue: false
            }
        );
        assert!(is_square_mod(&BigInt::from(4), 11).unwrap().is_square);
        assert_eq!(
            is_square_mod(&BigInt::from(14), 7).unwrap(),
            SquareMod {
                is_square: false,
                zero_residue: true
            }
        );
        assert_eq!(
            is_square_mod(&BigInt::from(3), 2),
            Err(ArithError::EvenModulus)
        );
    }

    #[test]
    fn square_mod_matches_enumeration() {
        for &q in SMALL_PRIMES.iter().take_while(|&&p| p <= 97).skip(1) {
            let q = q as u64;
            let mut squares = vec![false; q as usize];
            for x in 1..q {
                squares[((x * x) % q) as usize] = true;
            }
            for a in 0..q {
                let got = square_mod_u64(a, q);
                assert_eq!(got.zero_residue, a == 0, "q={q} a={a}");
                assert_eq!(got.is_square, a != 0 && squares[a as usize], "q={q} a={a}");
            }
        }
    }

    #[test]
    fn primes_in_class_examples() {
        assert_eq!(primes_in_class(3, 1, 20).primes, vec![7, 13, 19]);
        assert_eq!(primes_in_class(1, 0, 10).primes, vec![2, 3, 5, 7]);
        assert_eq!(primes_in_class(5, 2, 30).primes, vec![2, 7, 17]);
        let bad = primes_in_class(6, 3, 100);
        assert!(bad.primes.is_empty() && bad.coprime_warning);
    }

    #[test]
    fn primes_in_class_partitions() {
        for m in [3u64, 4, 5, 6, 12] {
            let mut union: Vec<u64> = Vec::new();
            for a in 0..m {
                if gcd_u64(a, m) == 1 {
                    union.extend(primes_in_class(m, a, 500).primes);
                }
            }
            union.sort_unstable();
            let expect: Vec<u64> = primes_up_to(500)
                .into_iter()
                .filter(|&p| gcd_u64(p, m) == 1)
                .collect();
            assert_eq!(union, expect, "m={m}");
        }
    }

    #[test]
    fn mertens_examples() {
        assert!((mertens_ap(1, 0, 100) - 1.802).abs() < 1e-3);
        assert!((mertens_ap(4, 1, 10) - 0.2).abs() < 1e-12);
        assert!((mertens_ap(3, 2, 20) - (0.5 + 0.2 + 1.0 / 11.0 + 1.0 / 17.0)).abs() < 1e-12);
    }

    #[test]
    fn primality_spot_checks() {
        assert!(is_prime_u128(2));
        assert!(is_prime_u128((1u128 << 61) - 1)); // Mersenne
        assert!(!is_prime_u128((1u128 << 67) - 1)); // 193707721 * 761838257287
        let f = factorize_u128((1u128 << 67) - 1, DEFAULT_FACTOR_BUDGET).unwrap();
        assert_eq!(f, vec![(193_707_721, 1), (761_838_257_287, 1)]);
    }

    #[test]
    fn montgomery_matches_naive() {
        let n: u128 = (1u128 << 101) + 63; // odd
        let mont = Montgomery::new(n);
        for (a, b) in [(3u128, 5u128), (1 << 100, (1 << 100) + 12345), (n - 1, n - 1)] {
            let am = mont.to_mont(a);
            let bm = mont.to_mont(b);
            let prod = mont.mul(am, bm);
            // Compare against BigInt arithmetic.
            let want = (BigInt::from(a) * BigInt::from(b)) % BigInt::from(n);
            let got = mont.redc(0, prod); // divide by R to leave the domain
            assert_eq!(BigInt::from(got), want);
        }
    }
}
