//! Elliptic curve models over Q: Weierstrass invariants, the group law,
//! integral short forms, naive heights, and per-prime minimal valuations.

use crate::arith::{self, ArithError};
use crate::families::{BaseModel, Family};
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

fn n(k: i64) -> BigInt {
    BigInt::from(k)
}

#[derive(Debug, Error, PartialEq)]
pub enum CurveError {
    #[error("singular model")]
    Singular,
    #[error("point not on curve")]
    OffCurve,
    #[error("point order mismatch: expected {expected}")]
    WrongOrder { expected: u32 },
    #[error("non-reduced input")]
    NonReduced,
    #[error(transparent)]
    Arith(#[from] ArithError),
}

/// Long Weierstrass model y^2 + a1 xy + a3 y = x^3 + a2 x^2 + a4 x + a6.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveModel {
    pub a1: BigRational,
    pub a2: BigRational,
    pub a3: BigRational,
    pub a4: BigRational,
    pub a6: BigRational,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invariants {
    pub b2: BigRational,
    pub b4: BigRational,
    pub b6: BigRational,
    pub b8: BigRational,
    pub c4: BigRational,
    pub c6: BigRational,
    pub disc: BigRational,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Point {
    Infinity,
    Affine { x: BigRational, y: BigRational },
}

impl Point {
    pub fn affine(x: BigRational, y: BigRational) -> Self {
        Point::Affine { x, y }
    }

    pub fn is_infinity(&self) -> bool {
        matches!(self, Point::Infinity)
    }
}

/// y^2 = x^3 + a x + b with integer coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShortModel {
    pub a: BigInt,
    pub b: BigInt,
    /// No prime p has p^4 | a and p^6 | b.
    pub minimal12: bool,
}

impl CurveModel {
    pub fn from_integers(a1: i64, a2: i64, a3: i64, a4: i64, a6: i64) -> Self {
        let r = |n: i64| BigRational::from_integer(BigInt::from(n));
        CurveModel {
            a1: r(a1),
            a2: r(a2),
            a3: r(a3),
            a4: r(a4),
            a6: r(a6),
        }
    }

    pub fn short(a: &BigInt, b: &BigInt) -> Self {
        CurveModel {
            a1: BigRational::zero(),
            a2: BigRational::zero(),
            a3: BigRational::zero(),
            a4: BigRational::from_integer(a.clone()),
            a6: BigRational::from_integer(b.clone()),
        }
    }

    /// Standard b-, c-invariants and discriminant.
    pub fn invariants(&self) -> Result<Invariants, CurveError> {
        let b2 = &self.a1 * &self.a1 + &self.a2 * n(4);
        let b4 = &self.a4 * n(2) + &self.a1 * &self.a3;
        let b6 = &self.a3 * &self.a3 + &self.a6 * n(4);
        let b8 = (&b2 * &b6 - &b4 * &b4) / BigRational::from_integer(BigInt::from(4));
        let c4 = &b2 * &b2 - &b4 * n(24);
        let c6 = -(&b2 * &b2 * &b2) + &b2 * &b4 * n(36) - &b6 * n(216);
        let disc = -(&b2 * &b2 * &b8) - &b4 * &b4 * &b4 * n(8) - &b6 * &b6 * n(27)
            + &b2 * &b4 * &b6 * n(9);
        if disc.is_zero() {
            return Err(CurveError::Singular);
        }
        debug_assert_eq!(&c4 * &c4 * &c4 - &c6 * &c6, &disc * n(1728));
        Ok(Invariants {
            b2,
            b4,
            b6,
            b8,
            c4,
            c6,
            disc,
        })
    }

    /// Coordinate scaling (x, y) -> (u^2 x, u^3 y): a_i -> u^i a_i, so the
    /// discriminant picks up u^12.
    pub fn transform(&self, u: &BigRational) -> CurveModel {
        let u2 = u * u;
        let u3 = &u2 * u;
        CurveModel {
            a1: &self.a1 * u,
            a2: &self.a2 * &u2,
            a3: &self.a3 * &u3,
            a4: &self.a4 * &u2 * &u2,
            a6: &self.a6 * &u3 * &u3,
        }
    }

    pub fn on_curve(&self, p: &Point) -> bool {
        match p {
            Point::Infinity => true,
            Point::Affine { x, y } => {
                y * y + &self.a1 * x * y + &self.a3 * y
                    == x * x * x + &self.a2 * x * x + &self.a4 * x + &self.a6
            }
        }
    }

    pub fn negate(&self, p: &Point) -> Point {
        match p {
            Point::Infinity => Point::Infinity,
            Point::Affine { x, y } => Point::Affine {
                x: x.clone(),
                y: -y - &self.a1 * x - &self.a3,
            },
        }
    }

    /// Chord-tangent addition with the point at infinity as identity.
    pub fn add(&self, p: &Point, q: &Point) -> Result<Point, CurveError> {
        if !self.on_curve(p) || !self.on_curve(q) {
            return Err(CurveError::OffCurve);
        }
        let (x1, y1, x2, y2) = match (p, q) {
            (Point::Infinity, _) => return Ok(q.clone()),
            (_, Point::Infinity) => return Ok(p.clone()),
            (Point::Affine { x: x1, y: y1 }, Point::Affine { x: x2, y: y2 }) => (x1, y1, x2, y2),
        };
        let lambda = if x1 == x2 {
            if self.negate(p) == *q {
                return Ok(Point::Infinity);
            }
            // doubling; the tangent denominator is nonzero or we returned above
            let den = y1 * n(2) + &self.a1 * x1 + &self.a3;
            (x1 * x1 * n(3) + &self.a2 * x1 * n(2) + &self.a4 - &self.a1 * y1) / den
        } else {
            (y2 - y1) / (x2 - x1)
        };
        let nu = y1 - &lambda * x1;
        let x3 = &lambda * &lambda + &self.a1 * &lambda - &self.a2 - x1 - x2;
        let y3 = -(&lambda + &self.a1) * &x3 - &nu - &self.a3;
        Ok(Point::Affine { x: x3, y: y3 })
    }

    pub fn multiple(&self, p: &Point, k: u32) -> Result<Point, CurveError> {
        if !self.on_curve(p) {
            return Err(CurveError::OffCurve);
        }
        let mut acc = Point::Infinity;
        for _ in 0..k {
            acc = self.add(&acc, p)?;
        }
        Ok(acc)
    }

    /// Verifies that p has exact order n: n p = O and (n/l) p != O for l | n.
    pub fn assert_order(&self, p: &Point, n: u32) -> Result<(), CurveError> {
        if self.multiple(p, n)? != Point::Infinity {
            return Err(CurveError::WrongOrder { expected: n });
        }
        let mut m = n;
        let mut l = 2;
        while l * l <= n {
            if m % l == 0 {
                if self.multiple(p, n / l)? == Point::Infinity {
                    return Err(CurveError::WrongOrder { expected: n });
                }
                while m % l == 0 {
                    m /= l;
                }
            }
            l += 1;
        }
        if m > 1 && self.multiple(p, n / m)? == Point::Infinity {
            return Err(CurveError::WrongOrder { expected: n });
        }
        Ok(())
    }

    /// Integral short Weierstrass form, 12th-power reduced.
    pub fn short_form(&self) -> Result<ShortModel, CurveError> {
        let inv = self.invariants()?;
        // y^2 = x^3 - 27 c4 x - 54 c6
        let a = &inv.c4 * n(-27);
        let b = &inv.c6 * n(-54);
        let t = BigRational::from_integer(a.denom().lcm(b.denom()));
        let t4 = &t * &t * &t * &t;
        let ai = (&a * &t4).to_integer();
        let bi = (&b * &t4 * &t * &t).to_integer();
        reduce_short(ai, bi)
    }
}

/// Removes every 12th-power content: divide by (p^4, p^6) while possible.
pub fn reduce_short(mut a: BigInt, mut b: BigInt) -> Result<ShortModel, CurveError> {
    let g = a.gcd(&b);
    if !g.is_one() && !g.is_zero() {
        for (p, _) in arith::factorize(&g)?.factors {
            let p4 = BigInt::from(p).pow(4);
            let p6 = BigInt::from(p).pow(6);
            while (&a % &p4).is_zero() && (&b % &p6).is_zero() {
                a /= &p4;
                b /= &p6;
            }
        }
    }
    Ok(ShortModel {
        a,
        b,
        minimal12: true,
    })
}

impl ShortModel {
    pub fn disc(&self) -> BigInt {
        (self.a.pow(3) * 4 + self.b.pow(2) * 27) * -16
    }

    pub fn c4(&self) -> BigInt {
        &self.a * -48
    }

    pub fn c6(&self) -> BigInt {
        &self.b * -864
    }

    /// Naive height max(|a|^3, b^2).
    pub fn height(&self) -> Result<BigInt, CurveError> {
        if !self.minimal12 {
            return Err(CurveError::NonReduced);
        }
        Ok(self.a.abs().pow(3).max(self.b.pow(2)))
    }
}

/// Minimal valuations at p >= 5 after removing the 12th-power content.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinimalValuations {
    pub v_disc: u32,
    /// None encodes v_p(c4) = infinity (c4 = 0).
    pub v_c4: Option<u32>,
}

pub fn minimal_valuation(s: &ShortModel, p: u64) -> Result<MinimalValuations, CurveError> {
    assert!(p >= 5, "minimalization only covers p >= 5");
    let disc = s.disc();
    if disc.is_zero() {
        return Err(CurveError::Singular);
    }
    let c4 = s.c4();
    let c6 = s.c6();
    let vd = arith::valuation_int(&disc, p)?;
    let v4 = (!c4.is_zero()).then(|| arith::valuation_int(&c4, p).unwrap());
    let v6 = (!c6.is_zero()).then(|| arith::valuation_int(&c6, p).unwrap());
    let mut t = vd / 12;
    if let Some(v4) = v4 {
        t = t.min(v4 / 4);
    }
    if let Some(v6) = v6 {
        t = t.min(v6 / 6);
    }
    Ok(MinimalValuations {
        v_disc: vd - 12 * t,
        v_c4: v4.map(|v| v - 4 * t),
    })
}

/// The family's long model at (A, B), with coefficients from the registry.
pub fn base_curve(f: &Family, a: &BigInt, b: &BigInt) -> Option<CurveModel> {
    let m = f.base_model.as_ref()?;
    let r = |p: &crate::families::WPoly| BigRational::from_integer(p.eval(a, b));
    Some(CurveModel {
        a1: r(&m.a1),
        a2: r(&m.a2),
        a3: r(&m.a3),
        a4: r(&m.a4),
        a6: r(&m.a6),
    })
}

/// The registry marked point: the origin of the Tate-normal base models.
pub fn marked_point(_m: &BaseModel) -> Point {
    Point::affine(BigRational::zero(), BigRational::zero())
}
