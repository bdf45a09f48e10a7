//! Factorization roundtrip suites: exhaustive small range against a
//! smallest-prime-factor sieve, plus seeded random 128-bit inputs.

use num_bigint::BigInt;
use num_traits::Zero;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use selmerstat::arith::{
    factorize, factorize_u128, valuation_int, ArithError, DEFAULT_FACTOR_BUDGET,
};

const EXHAUSTIVE_BOUND: u32 = 1_000_000;

fn spf_sieve(bound: usize) -> Vec<u32> {
    let mut spf: Vec<u32> = vec![0; bound + 1];
    for i in 2..=bound {
        if spf[i] == 0 {
            let mut j = i;
            while j <= bound {
                if spf[j] == 0 {
                    spf[j] = i as u32;
                }
                j += i;
            }
        }
    }
    spf
}

fn factor_by_spf(mut n: u32, spf: &[u32]) -> Vec<(u128, u32)> {
    let mut out = Vec::new();
    while n > 1 {
        let p = spf[n as usize];
        let mut e = 0;
        while n % p == 0 {
            n /= p;
            e += 1;
        }
        out.push((p as u128, e));
    }
    out
}

#[test]
fn exhaustive_roundtrip_to_one_million() {
    let spf = spf_sieve(EXHAUSTIVE_BOUND as usize);
    let failures: Vec<u32> = (1..=EXHAUSTIVE_BOUND)
        .into_par_iter()
        .filter(|&n| {
            let got = factorize_u128(n as u128, DEFAULT_FACTOR_BUDGET).unwrap();
            got != factor_by_spf(n, &spf)
        })
        .collect();
    assert!(failures.is_empty(), "mismatches at {failures:?}");

    // Signs survive the roundtrip too.
    for n in [-1i64, -2, -999_983, -1_000_000] {
        let f = factorize(&BigInt::from(n)).unwrap();
        assert_eq!(f.sign, -1);
        assert_eq!(f.value(), BigInt::from(n));
    }
}

fn random_roundtrips(seed: u64, count: usize) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for _ in 0..count {
        let n: u128 = rng.gen();
        let f = factorize_u128(n, DEFAULT_FACTOR_BUDGET).unwrap();
        let mut prod: u128 = 1;
        let mut last = 0u128;
        for &(p, e) in &f {
            assert!(p > last, "primes out of order for {n}");
            assert!(selmerstat::arith::is_prime_u128(p), "{p} not prime ({n})");
            last = p;
            for _ in 0..e {
                prod = prod.checked_mul(p).expect("overflow rebuilding value");
            }
        }
        assert_eq!(prod, n);
    }
}

// 10^4 uniform 128-bit integers, in chunks so a failure isolates by seed.
#[test]
fn random_roundtrip_chunk_a() {
    random_roundtrips(0x5e1f_0001, 2500);
}

#[test]
fn random_roundtrip_chunk_b() {
    random_roundtrips(0x5e1f_0002, 2500);
}

#[test]
fn random_roundtrip_chunk_c() {
    random_roundtrips(0x5e1f_0003, 2500);
}

#[test]
fn random_roundtrip_chunk_d() {
    random_roundtrips(0x5e1f_0004, 2500);
}

proptest! {
    #[test]
    fn stripping_p_power_leaves_valuation_zero(n in any::<i64>(), pidx in 0usize..6) {
        let p = [2u64, 3, 5, 7, 11, 13][pidx];
        let n = BigInt::from(n);
        if n.is_zero() {
            prop_assert_eq!(valuation_int(&n, p), Err(ArithError::ValuationUndefined));
        } else {
            let v = valuation_int(&n, p).unwrap();
            let stripped = &n / BigInt::from(p).pow(v);
            prop_assert_eq!(valuation_int(&stripped, p).unwrap(), 0);
            prop_assert_eq!(&stripped * BigInt::from(p).pow(v), n);
        }
    }

    #[test]
    fn factorization_value_roundtrip(n in any::<i128>()) {
        if n != 0 {
            let f = factorize(&BigInt::from(n)).unwrap();
            prop_assert_eq!(f.value(), BigInt::from(n));
        }
    }
}
