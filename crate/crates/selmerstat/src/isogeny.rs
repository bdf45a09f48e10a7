//! Cyclic-kernel quotients of elliptic curves over Q via Velu's formulas,
//! composite kernels as chains of prime-degree steps, and randomized
//! cross-checks of quotient discriminants against the registry tables.

use crate::curves::{base_curve, marked_point, CurveError, CurveModel, Point};
use crate::families::{Family, FamilyError, IsogenySpec, KernelSpec};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum IsogenyError {
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error("kernel data unavailable for {family} {phi}")]
    MissingKernel { family: String, phi: String },
    #[error("kernel image has irrational coordinates")]
    IrrationalImage,
}

/// One summand of the Velu sums for a nonzero kernel point (x, y):
/// v_Q feeds a4' = a4 - 5t and w_Q feeds a6' = a6 - b2 t - 7w.
struct VeluTerm {
    x: BigRational,
    u: BigRational,
    v: BigRational,
}

/// One representative per {Q, -Q} pair of the nonzero points of <P>,
/// with 2-torsion points appearing once.
fn kernel_reps(e: &CurveModel, p: &Point, n: u32) -> Result<Vec<VeluTerm>, IsogenyError> {
    let mut pts: Vec<(BigRational, BigRational)> = Vec::new();
    let mut q = p.clone();
    for _ in 1..n {
        match &q {
            Point::Affine { x, y } => pts.push((x.clone(), y.clone())),
            Point::Infinity => unreachable!("order verified before kernel walk"),
        }
        q = e.add(&q, p)?;
    }
    let mut reps = Vec::new();
    let mut seen: Vec<(BigRational, BigRational)> = Vec::new();
    for (x, y) in pts {
        if seen.iter().any(|(sx, sy)| *sx == x && *sy == y) {
            continue;
        }
        let neg_y = -&y - &e.a1 * &x - &e.a3;
        seen.push((x.clone(), y.clone()));
        seen.push((x.clone(), neg_y));
        let gx = &x * &x * BigInt::from(3) + &e.a2 * &x * BigInt::from(2) + &e.a4 - &e.a1 * &y;
        let gy = -&y * BigInt::from(2) - &e.a1 * &x - &e.a3;
        let v = if gy.is_zero() {
            gx
        } else {
            &gx * BigInt::from(2) - &e.a1 * &gy
        };
        let u = &gy * &gy;
        reps.push(VeluTerm { x, u, v });
    }
    Ok(reps)
}

/// The quotient E/<P> for P of exact order n (n = 1 returns E itself).
pub fn velu_quotient(e: &CurveModel, p: &Point, n: u32) -> Result<CurveModel, IsogenyError> {
    e.assert_order(p, n)?;
    if n == 1 {
        return Ok(e.clone());
    }
    let mut t = BigRational::zero();
    let mut w = BigRational::zero();
    for term in kernel_reps(e, p, n)? {
        w += &term.u + &term.x * &term.v;
        t += term.v;
    }
    let b2 = &e.a1 * &e.a1 + &e.a2 * BigInt::from(4);
    Ok(CurveModel {
        a1: e.a1.clone(),
        a2: e.a2.clone(),
        a3: e.a3.clone(),
        a4: &e.a4 - &t * BigInt::from(5),
        a6: &e.a6 - &b2 * &t - &w * BigInt::from(7),
    })
}

fn rational_sqrt(r: &BigRational) -> Option<BigRational> {
    if r.is_negative() {
        return None;
    }
    let ns = r.numer().sqrt();
    let ds = r.denom().sqrt();
    (&ns * &ns == *r.numer() && &ds * &ds == *r.denom()).then(|| BigRational::new(ns, ds))
}

/// Image of `pt` under the quotient by <p> (p of exact order n). Points of
/// the kernel map to infinity. The y-coordinate is recovered from the
/// quotient equation; either sign generates the same subgroup downstream.
pub fn velu_image(
    e: &CurveModel,
    p: &Point,
    n: u32,
    pt: &Point,
) -> Result<Point, IsogenyError> {
    if !e.on_curve(pt) {
        return Err(CurveError::OffCurve.into());
    }
    let quotient = velu_quotient(e, p, n)?;
    let (x, _) = match pt {
        Point::Infinity => return Ok(Point::Infinity),
        Point::Affine { x, y } => (x, y),
    };
    // membership in <p>
    let mut k = p.clone();
    for _ in 1..n {
        if k == *pt {
            return Ok(Point::Infinity);
        }
        k = e.add(&k, p)?;
    }
    let mut xi = x.clone();
    for term in kernel_reps(e, p, n)? {
        let d = x - &term.x;
        xi += &term.v / &d + &term.u / (&d * &d);
    }
    // solve y^2 + (a1 x + a3) y - (x^3 + a2 x^2 + a4 x + a6) = 0 on the quotient
    let lin = &quotient.a1 * &xi + &quotient.a3;
    let rhs = &xi * &xi * &xi
        + &quotient.a2 * &xi * &xi
        + &quotient.a4 * &xi
        + &quotient.a6;
    let disc = &lin * &lin + &rhs * BigInt::from(4);
    let root = rational_sqrt(&disc).ok_or(IsogenyError::IrrationalImage)?;
    let y = (-&lin + root) / BigRational::from_integer(BigInt::from(2));
    let img = Point::affine(xi, y);
    debug_assert!(quotient.on_curve(&img));
    Ok(img)
}

/// Decomposes the quotient by <P> (P of order = product of `steps`) into
/// prime-degree Velu steps in the given order; returns each step's degree
/// and the curve it lands on.
pub fn chain_with_steps(
    e: &CurveModel,
    p: &Point,
    steps: &[u32],
) -> Result<Vec<(u32, CurveModel)>, IsogenyError> {
    let n: u32 = steps.iter().product();
    e.assert_order(p, n)?;
    let mut out = Vec::with_capacity(steps.len());
    let mut cur = e.clone();
    let mut pt = p.clone();
    let mut rem = n;
    for &l in steps {
        let gen = cur.multiple(&pt, rem / l)?;
        let next = velu_quotient(&cur, &gen, l)?;
        if rem / l > 1 {
            pt = velu_image(&cur, &gen, l, &pt)?;
        }
        cur = next;
        rem /= l;
        out.push((l, cur.clone()));
    }
    Ok(out)
}

/// Prime-degree steps in ascending order (2 before 3).
pub fn composite_chain(
    e: &CurveModel,
    p: &Point,
    n: u32,
) -> Result<Vec<(u32, CurveModel)>, IsogenyError> {
    let mut steps = Vec::new();
    let mut m = n;
    let mut l = 2;
    while m > 1 {
        while m % l == 0 {
            steps.push(l);
            m /= l;
        }
        l += 1;
    }
    chain_with_steps(e, p, &steps)
}

/// True when |r| is a product of powers of 2 and 3 (and their inverses).
pub fn is_23_unit(r: &BigRational) -> bool {
    let strip = |mut n: BigInt| {
        n = n.abs();
        for p in [2u32, 3] {
            let p = BigInt::from(p);
            while !n.is_zero() && (&n % &p).is_zero() {
                n /= &p;
            }
        }
        n
    };
    strip(r.numer().clone()).is_one() && strip(r.denom().clone()).is_one()
}

/// Kernel generator of the registry isogeny on the curve at (a, b):
/// a stated multiple of the marked point, or a 2-torsion section.
pub fn kernel_generator(
    f: &Family,
    spec: &IsogenySpec,
    e: &CurveModel,
    a: &BigInt,
    b: &BigInt,
) -> Result<Point, IsogenyError> {
    let kernel = spec.kernel.as_ref().ok_or_else(|| IsogenyError::MissingKernel {
        family: f.label.clone(),
        phi: spec.phi.clone(),
    })?;
    match kernel {
        KernelSpec::Multiple { k } => {
            let m = f.base_model.as_ref().ok_or_else(|| IsogenyError::MissingKernel {
                family: f.label.clone(),
                phi: spec.phi.clone(),
            })?;
            Ok(e.multiple(&marked_point(m), *k)?)
        }
        KernelSpec::Section { x } => {
            let x0 = BigRational::from_integer(x.eval(a, b));
            let y0 = -(&e.a1 * &x0 + &e.a3) / BigRational::from_integer(BigInt::from(2));
            Ok(Point::affine(x0, y0))
        }
    }
}

#[derive(Debug, Clone)]
pub struct DualCheckReport {
    pub family: String,
    pub phi: String,
    pub requested: u32,
    pub checked: u32,
    /// Degenerate samples (vanishing table discriminant), logged and skipped.
    pub skipped: Vec<String>,
    /// The frozen constant relating the quotient discriminant to the table row.
    pub unit: BigRational,
    pub failures: Vec<String>,
}

impl DualCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked == self.requested
    }
}

/// Samples random (A, B) with |A|, |B| <= 50, runs the registry isogeny
/// chain by Velu steps, and requires the quotient discriminant to equal
/// unit * table row exactly, with |unit| supported on {2, 3}.
pub fn dual_discriminant_check(
    f: &Family,
    phi: &str,
    samples: u32,
    seed: u64,
) -> Result<DualCheckReport, IsogenyError> {
    let spec = f
        .isogenies
        .iter()
        .find(|s| s.phi == phi)
        .ok_or_else(|| FamilyError::UnknownKernel {
            family: f.label.clone(),
            phi: phi.to_string(),
            available: f
                .isogenies
                .iter()
                .map(|s| s.phi.as_str())
                .collect::<Vec<_>>()
                .join(", "),
        })?;
    if f.base_model.is_none() || spec.kernel.is_none() {
        return Err(IsogenyError::MissingKernel {
            family: f.label.clone(),
            phi: phi.to_string(),
        });
    }
    let unit = BigRational::from_integer(
        spec.velu_unit
            .clone()
            .expect("registry stores a unit wherever it stores a kernel"),
    );
    assert!(is_23_unit(&unit), "{} {phi}: unit {unit} not 2,3-supported", f.label);

    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut report = DualCheckReport {
        family: f.label.clone(),
        phi: phi.to_string(),
        requested: samples,
        checked: 0,
        skipped: Vec::new(),
        unit,
        failures: Vec::new(),
    };
    let mut attempts = 0u32;
    while report.checked < samples && attempts < samples.saturating_mul(100) {
        attempts += 1;
        let a = BigInt::from(rng.gen_range(-50i64..=50));
        let b = BigInt::from(rng.gen_range(-50i64..=50));
        let dtab = f.table_discriminant(phi, &a, &b)?;
        if dtab.is_zero() {
            report
                .skipped
                .push(format!("({a},{b}): degenerate (table discriminant 0)"));
            continue;
        }
        let e = base_curve(f, &a, &b).expect("base model present");
        if e.invariants().is_err() {
            report
                .skipped
                .push(format!("({a},{b}): degenerate (singular specialization)"));
            continue;
        }
        let gen = kernel_generator(f, spec, &e, &a, &b)?;
        let endpoint = match chain_with_steps(&e, &gen, &spec.chain) {
            Ok(chain) => chain.last().expect("nonempty chain").1.clone(),
            Err(err) => {
                report.failures.push(format!("({a},{b}): chain failed: {err}"));
                continue;
            }
        };
        let dv = endpoint
            .invariants()
            .map_err(|err| {
                report
                    .failures
                    .push(format!("({a},{b}): quotient singular: {err}"));
            })
            .ok();
        let Some(dv) = dv else { continue };
        let expected = &report.unit * BigRational::from_integer(dtab);
        if dv.disc != expected {
            report.failures.push(format!(
                "({a},{b}): quotient disc {} != unit*table {}",
                dv.disc, expected
            ));
        }
        report.checked += 1;
    }
    Ok(report)
}
