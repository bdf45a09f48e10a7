//! Registry of the nineteen genus-zero torsion families: defining weighted
//! polynomials, factored discriminants per cyclic kernel, local density
//! tables, and moment constants, all loaded from an embedded data file that
//! is fully validated on first use.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use once_cell::sync::Lazy;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::str::FromStr;
use thiserror::Error;

pub const FAMILY_DATA: &str = include_str!("../data/families.toml");

#[derive(Debug, Error, PartialEq)]
pub enum FamilyError {
    #[error("family data parse error: {0}")]
    Parse(String),
    #[error("family {family}, field {field}: {message}")]
    Validation {
        family: String,
        field: String,
        message: String,
    },
    #[error("family {family}: unknown kernel {phi}; available: {available}")]
    UnknownKernel {
        family: String,
        phi: String,
        available: String,
    },
    #[error("density undefined at bad prime {q} for family {family}")]
    BadPrime { family: String, q: u64 },
    #[error("unknown family {0}; valid ids are G(M,MN) as listed by the registry")]
    UnknownFamily(String),
}

// --- weighted polynomials ----------------------------------------------------

/// Sparse bivariate polynomial in (A, B) with exact integer coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WPoly {
    /// `(deg_A, deg_B, coeff)`, sorted, no duplicates, no zero coefficients.
    pub terms: Vec<(u32, u32, BigInt)>,
}

impl WPoly {
    pub fn zero() -> Self {
        WPoly { terms: Vec::new() }
    }

    pub fn constant(c: BigInt) -> Self {
        WPoly::from_terms(vec![(0, 0, c)])
    }

    pub fn from_terms(terms: Vec<(u32, u32, BigInt)>) -> Self {
        let mut map: BTreeMap<(u32, u32), BigInt> = BTreeMap::new();
        for (i, j, c) in terms {
            let e = map.entry((i, j)).or_insert_with(BigInt::zero);
            *e += c;
        }
        WPoly {
            terms: map
                .into_iter()
                .filter(|(_, c)| !c.is_zero())
                .map(|((i, j), c)| (i, j, c))
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Weighted degree if homogeneous under `w`, else `None`. Zero counts as
    /// homogeneous of any degree and reports `None`.
    pub fn weighted_degree(&self, w: (u32, u32)) -> Option<u64> {
        let mut degs = self
            .terms
            .iter()
            .map(|&(i, j, _)| i as u64 * w.0 as u64 + j as u64 * w.1 as u64);
        let first = degs.next()?;
        degs.all(|d| d == first).then_some(first)
    }

    pub fn eval(&self, a: &BigInt, b: &BigInt) -> BigInt {
        let mut acc = BigInt::zero();
        for (i, j, c) in &self.terms {
            acc += c * a.pow(*i) * b.pow(*j);
        }
        acc
    }

    /// Evaluation mod q given precomputed power tables `apow[i] = a^i mod q`.
    pub fn eval_mod_tables(&self, apow: &[u64], bpow: &[u64], q: u64) -> u64 {
        let mut acc: u64 = 0;
        for (i, j, c) in &self.terms {
            let cq = c.mod_floor_u64(q);
            let t = (cq as u128 * apow[*i as usize] as u128 % q as u128) as u64;
            let t = (t as u128 * bpow[*j as usize] as u128 % q as u128) as u64;
            acc = (acc + t) % q;
        }
        acc
    }

    pub fn max_degrees(&self) -> (u32, u32) {
        self.terms.iter().fold((0, 0), |(ma, mb), &(i, j, _)| {
            (ma.max(i), mb.max(j))
        })
    }

    pub fn mul(&self, other: &WPoly) -> WPoly {
        let mut out = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (i1, j1, c1) in &self.terms {
            for (i2, j2, c2) in &other.terms {
                out.push((i1 + i2, j1 + j2, c1 * c2));
            }
        }
        WPoly::from_terms(out)
    }

    pub fn pow(&self, e: u32) -> WPoly {
        let mut acc = WPoly::constant(BigInt::one());
        for _ in 0..e {
            acc = acc.mul(self);
        }
        acc
    }

    pub fn scale(&self, c: &BigInt) -> WPoly {
        if c.is_zero() {
            return WPoly::zero();
        }
        WPoly {
            terms: self
                .terms
                .iter()
                .map(|(i, j, k)| (*i, *j, k * c))
                .collect(),
        }
    }

    pub fn add(&self, other: &WPoly) -> WPoly {
        let mut out = self.terms.clone();
        out.extend(other.terms.iter().cloned());
        WPoly::from_terms(out)
    }

    pub fn sub(&self, other: &WPoly) -> WPoly {
        self.add(&other.scale(&BigInt::from(-1)))
    }
}

trait ModFloorU64 {
    fn mod_floor_u64(&self, q: u64) -> u64;
}

impl ModFloorU64 for BigInt {
    fn mod_floor_u64(&self, q: u64) -> u64 {
        use num_integer::Integer;
        use num_traits::ToPrimitive;
        self.mod_floor(&BigInt::from(q)).to_u64().unwrap()
    }
}

// --- density value polynomials -----------------------------------------------

/// A closed-form density in the prime q: `(sum num[i] q^i) / q^den_pow`.
#[derive(Debug, Clone, PartialEq)]
pub struct QPoly {
    pub num: Vec<BigRational>,
    pub den_pow: u32,
}

impl QPoly {
    pub fn eval(&self, q: u64) -> BigRational {
        let qb = BigInt::from(q);
        let mut acc = BigRational::zero();
        let mut pw = BigInt::one();
        for c in &self.num {
            acc += c * BigRational::from_integer(pw.clone());
            pw *= &qb;
        }
        acc / BigRational::from_integer(BigInt::from(q).pow(self.den_pow))
    }
}

// --- table rows ----------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DiscRow {
    pub phi: String,
    pub unit: BigInt,
    /// Exponent of each family factor polynomial, in registry order.
    pub exponents: Vec<u32>,
    pub printed: Option<String>,
    pub typo: bool,
}

#[derive(Debug, Clone)]
pub enum KernelSpec {
    /// Kernel generated by `k` times the marked point.
    Multiple { k: u32 },
    /// Two-torsion section with the given x-coordinate polynomial.
    Section { x: WPoly },
}

#[derive(Debug, Clone)]
pub struct IsogenySpec {
    pub phi: String,
    /// Prime step degrees, ascending (2 before 3).
    pub chain: Vec<u32>,
    pub kernel: Option<KernelSpec>,
    /// Exact unit u' with disc(quotient) = velu_unit^12-free ... the quotient
    /// discriminant equals velu_unit * table row exactly when present.
    pub velu_unit: Option<BigInt>,
    /// Per-factor exponent trajectories along the chain (len = chain.len()+1).
    pub chain_exponents: Vec<Vec<u32>>,
}

#[derive(Debug, Clone)]
pub struct LocalRow {
    pub classes: Vec<u32>,
    pub ramified: bool,
    pub good: QPoly,
    pub good_printed: Option<String>,
    pub additive: QPoly,
    pub mult_lead: BigRational,
    pub split_lead: BigRational,
    pub printed_modulus: Option<u32>,
    pub printed_classes: Option<Vec<u32>>,
}

#[derive(Debug, Clone)]
pub struct IsogenyRow {
    pub phi: String,
    pub classes: Vec<u32>,
    /// Leading coefficients per label: kappa = lead * (q-1)/q^2.
    pub leads: Vec<BigRational>,
    pub note: Option<String>,
    pub typo: bool,
}

#[derive(Debug, Clone)]
pub struct MeanRow {
    pub phi: String,
    pub subgroup: Vec<u32>,
    pub c_minus: BigRational,
    pub c_plus: BigRational,
    pub note: Option<String>,
    pub inconsistent: bool,
}

#[derive(Debug, Clone)]
pub struct SelmerRow {
    pub phi: String,
    pub subgroup: Vec<u32>,
    pub c_e: BigRational,
    pub c_v: BigRational,
    pub theta: BigRational,
    pub note: Option<String>,
    pub inconsistent: bool,
}

#[derive(Debug, Clone)]
pub struct DistributionRow {
    pub phi: String,
    pub subgroup: Vec<u32>,
    pub c_n: Vec<BigRational>,
    pub note: Option<String>,
    pub inconsistent: bool,
}

/// Selmer constants for composite-degree isogenies, as polynomials in
/// lambda = log_6(2) (coefficient vectors, constant term first).
#[derive(Debug, Clone)]
pub struct CompositeSelmerRow {
    pub phi: String,
    pub subgroup: Vec<u32>,
    pub c_e: Vec<BigRational>,
    pub c_v: Vec<BigRational>,
    pub theta: Vec<BigRational>,
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BaseModel {
    pub a1: WPoly,
    pub a2: WPoly,
    pub a3: WPoly,
    pub a4: WPoly,
    pub a6: WPoly,
}

// --- the family ---------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Family {
    pub label: String,
    /// (M, N) with torsion group Z/M x Z/MN.
    pub torsion: (u32, u32),
    pub level: u32,
    pub weights: (u32, u32),
    pub weights_printed: Option<(u32, u32)>,
    pub delta: u32,
    pub alpha: BigRational,
    pub beta_coeff: Option<BigRational>,
    /// Congruence modulus of the density and constants tables.
    pub modulus: u32,
    pub modulus_printed: Option<u32>,
    pub f4: WPoly,
    pub f6: WPoly,
    /// -16(4 f4^3 + 27 f6^2) = short_unit * (O-row product), exactly.
    pub short_unit: BigInt,
    /// disc(base model) = base_unit * (O-row product), exactly.
    pub base_unit: Option<BigInt>,
    pub marked_order: Option<u32>,
    pub base_model: Option<BaseModel>,
    pub factors: Vec<WPoly>,
    pub disc_rows: Vec<DiscRow>,
    pub isogenies: Vec<IsogenySpec>,
    pub local_rows: Vec<LocalRow>,
    pub isogeny_rows: Vec<IsogenyRow>,
    pub mean_rows: Vec<MeanRow>,
    pub selmer_rows: Vec<SelmerRow>,
    pub distribution_rows: Vec<DistributionRow>,
    pub composite_selmer_rows: Vec<CompositeSelmerRow>,
}

/// Reduction-type condition whose local density a table row predicts.
#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Good,
    Additive,
    Multiplicative,
    Split,
    Nonsplit,
    Iso { phi: String, label: IsoLabel },
}

/// Label of a local log-ratio class.
#[derive(Debug, Clone, PartialEq)]
pub enum IsoLabel {
    /// log_d of the Selmer ratio: -1, -1/2, 0, 1/2, 1.
    Value(BigRational),
    /// Degree-6 case: (n2, n3) with value n2 log_6 2 + n3 log_6 3.
    Log6Pair { two: i8, three: i8 },
}

impl IsoLabel {
    pub fn value(n: i64, d: i64) -> Self {
        IsoLabel::Value(BigRational::new(BigInt::from(n), BigInt::from(d)))
    }
}

/// Labels for a kernel's local-ratio table, in table column order.
pub fn alphabet(phi: &str) -> Vec<IsoLabel> {
    match phi {
        "C9" => vec![
            IsoLabel::value(-1, 1),
            IsoLabel::value(-1, 2),
            IsoLabel::value(0, 1),
            IsoLabel::value(1, 2),
            IsoLabel::value(1, 1),
        ],
        "C6" => [
            (-1, -1),
            (0, -1),
            (-1, 0),
            (1, -1),
            (0, 0),
            (-1, 1),
            (1, 0),
            (0, 1),
            (1, 1),
        ]
        .iter()
        .map(|&(two, three)| IsoLabel::Log6Pair { two, three })
        .collect(),
        _ => vec![
            IsoLabel::value(-1, 1),
            IsoLabel::value(0, 1),
            IsoLabel::value(1, 1),
        ],
    }
}

/// Kernel degree from its name: "O" -> 1, "C5" -> 5.
pub fn phi_degree(phi: &str) -> u32 {
    if phi == "O" {
        1
    } else {
        phi.trim_start_matches('C').parse().unwrap_or(0)
    }
}

impl Family {
    pub fn evaluate_f(&self, a: &BigInt, b: &BigInt) -> (BigInt, BigInt) {
        (self.f4.eval(a, b), self.f6.eval(a, b))
    }

    pub fn disc_row(&self, phi: &str) -> Result<&DiscRow, FamilyError> {
        self.disc_rows.iter().find(|r| r.phi == phi).ok_or_else(|| {
            FamilyError::UnknownKernel {
                family: self.label.clone(),
                phi: phi.to_string(),
                available: self
                    .disc_rows
                    .iter()
                    .map(|r| r.phi.as_str())
                    .collect::<Vec<_>>()
                    .join(", "),
            }
        })
    }

    /// unit * prod factor_i^{e_i} at (A, B), exactly.
    pub fn table_discriminant(
        &self,
        phi: &str,
        a: &BigInt,
        b: &BigInt,
    ) -> Result<BigInt, FamilyError> {
        let row = self.disc_row(phi)?;
        let mut acc = row.unit.clone();
        for (g, &e) in self.factors.iter().zip(&row.exponents) {
            acc *= g.eval(a, b).pow(e);
        }
        Ok(acc)
    }

    /// The O-row discriminant as a polynomial: unit * prod factor_i^{e_i}.
    pub fn table_disc_poly(&self, phi: &str) -> Result<WPoly, FamilyError> {
        let row = self.disc_row(phi)?;
        let mut acc = WPoly::constant(row.unit.clone());
        for (g, &e) in self.factors.iter().zip(&row.exponents) {
            acc = acc.mul(&g.pow(e));
        }
        Ok(acc)
    }

    /// True when q is coprime to 6, the level, and the kernel degree.
    pub fn admissible(&self, q: u64, deg: u32) -> bool {
        q >= 5 && 6 % q != 0 && self.level as u64 % q != 0 && deg as u64 % q != 0
    }

    pub fn local_row(&self, q: u64) -> Option<&LocalRow> {
        let class = (q % self.modulus as u64) as u32;
        self.local_rows.iter().find(|r| r.classes.contains(&class))
    }

    pub fn isogeny_row(&self, phi: &str, q: u64) -> Result<&IsogenyRow, FamilyError> {
        if !self.isogeny_rows.iter().any(|r| r.phi == phi) {
            let mut avail: Vec<&str> = self.isogeny_rows.iter().map(|r| r.phi.as_str()).collect();
            avail.dedup();
            return Err(FamilyError::UnknownKernel {
                family: self.label.clone(),
                phi: phi.to_string(),
                available: avail.join(", "),
            });
        }
        let class = (q % self.modulus as u64) as u32;
        self.isogeny_rows
            .iter()
            .find(|r| r.phi == phi && r.classes.contains(&class))
            .ok_or_else(|| FamilyError::BadPrime {
                family: self.label.clone(),
                q,
            })
    }

    /// Exact local density of `cond` at the prime q.
    pub fn density_prediction(&self, cond: &Condition, q: u64) -> Result<BigRational, FamilyError> {
        let deg = match cond {
            Condition::Iso { phi, .. } => phi_degree(phi),
            _ => 1,
        };
        if !self.admissible(q, deg) {
            return Err(FamilyError::BadPrime {
                family: self.label.clone(),
                q,
            });
        }
        let per_pair = || {
            // kappa = lead (q-1)/q^2
            BigRational::new(BigInt::from(q - 1), BigInt::from(q).pow(2))
        };
        match cond {
            Condition::Iso { phi, label } => {
                let row = self.isogeny_row(phi, q)?;
                let idx = alphabet(phi)
                    .iter()
                    .position(|l| l == label)
                    .ok_or_else(|| FamilyError::UnknownKernel {
                        family: self.label.clone(),
                        phi: format!("{phi} label {label:?}"),
                        available: format!("{} labels per row", row.leads.len()),
                    })?;
                Ok(&row.leads[idx] * per_pair())
            }
            _ => {
                let row = self.local_row(q).ok_or_else(|| FamilyError::BadPrime {
                    family: self.label.clone(),
                    q,
                })?;
                Ok(match cond {
                    Condition::Good => row.good.eval(q),
                    Condition::Additive => row.additive.eval(q),
                    Condition::Multiplicative => &row.mult_lead * per_pair(),
                    Condition::Split => &row.split_lead * per_pair(),
                    Condition::Nonsplit => (&row.mult_lead - &row.split_lead) * per_pair(),
                    Condition::Iso { .. } => unreachable!(),
                })
            }
        }
    }
}

// --- registry -----------------------------------------------------------------

static REGISTRY: Lazy<Vec<Family>> =
    Lazy::new(|| load_from_str(FAMILY_DATA).expect("embedded family data is valid"));

/// All nineteen families, in data-file order.
pub fn registry() -> &'static [Family] {
    &REGISTRY
}

pub fn by_label(label: &str) -> Result<&'static Family, FamilyError> {
    registry()
        .iter()
        .find(|f| f.label == label)
        .ok_or_else(|| FamilyError::UnknownFamily(label.to_string()))
}

// --- raw data file model --------------------------------------------------------

type RawTerm = (u32, u32, String);

#[derive(Deserialize)]
struct RawRoot {
    #[allow(dead_code)]
    schema_version: u32,
    family: Vec<RawFamily>,
}

#[derive(Deserialize)]
struct RawFamily {
    label: String,
    m_structure: u32,
    n_cyclic: u32,
    level: u32,
    weights: [u32; 2],
    weights_printed: Option<[u32; 2]>,
    delta: u32,
    alpha: String,
    beta_coeff: Option<String>,
    modulus: u32,
    modulus_printed: Option<u32>,
    f4: Vec<RawTerm>,
    f6: Vec<RawTerm>,
    short_unit: String,
    base_unit: Option<String>,
    marked_order: Option<u32>,
    base_model: Option<RawModel>,
    #[serde(default)]
    factor: Vec<RawFactor>,
    #[serde(default)]
    disc_row: Vec<RawDiscRow>,
    #[serde(default)]
    isogeny: Vec<RawIsogeny>,
    #[serde(default)]
    local_row: Vec<RawLocalRow>,
    #[serde(default)]
    isogeny_row: Vec<RawIsogenyRow>,
    #[serde(default)]
    mean_row: Vec<RawMeanRow>,
    #[serde(default)]
    selmer_row: Vec<RawSelmerRow>,
    #[serde(default)]
    distribution_row: Vec<RawDistributionRow>,
    #[serde(default)]
    composite_selmer_row: Vec<RawCompositeSelmerRow>,
}

#[derive(Deserialize)]
struct RawModel {
    a1: Vec<RawTerm>,
    a2: Vec<RawTerm>,
    a3: Vec<RawTerm>,
    a4: Vec<RawTerm>,
    a6: Vec<RawTerm>,
}

#[derive(Deserialize)]
struct RawFactor {
    poly: Vec<RawTerm>,
}

#[derive(Deserialize)]
struct RawDiscRow {
    phi: String,
    unit: String,
    exponents: Vec<u32>,
    printed: Option<String>,
    #[serde(default)]
    typo: bool,
}

#[derive(Deserialize)]
#[serde(tag = "kind")]
enum RawKernel {
    #[serde(rename = "multiple")]
    Multiple { k: u32 },
    #[serde(rename = "section")]
    Section { x: Vec<RawTerm> },
}

#[derive(Deserialize)]
struct RawIsogeny {
    phi: String,
    chain: Vec<u32>,
    kernel: Option<RawKernel>,
    velu_unit: Option<String>,
    chain_exponents: Vec<Vec<u32>>,
}

#[derive(Deserialize)]
struct RawQPoly {
    num: Vec<String>,
    den_pow: u32,
}

#[derive(Deserialize)]
struct RawLocalRow {
    classes: Vec<u32>,
    #[serde(default)]
    ramified: bool,
    good: RawQPoly,
    good_typo: Option<String>,
    additive: RawQPoly,
    mult_lead: String,
    split_lead: String,
    printed_modulus: Option<u32>,
    printed_classes: Option<Vec<u32>>,
}

#[derive(Deserialize)]
struct RawIsogenyRow {
    phi: String,
    classes: Vec<u32>,
    leads: Vec<String>,
    note: Option<String>,
    #[serde(default)]
    typo: bool,
}

#[derive(Deserialize)]
struct RawMeanRow {
    phi: String,
    subgroup: Vec<u32>,
    c_minus: String,
    c_plus: String,
    note: Option<String>,
    #[serde(default)]
    inconsistent: bool,
}

#[derive(Deserialize)]
struct RawSelmerRow {
    phi: String,
    subgroup: Vec<u32>,
    c_e: String,
    c_v: String,
    theta: String,
    note: Option<String>,
    #[serde(default)]
    inconsistent: bool,
}

#[derive(Deserialize)]
struct RawDistributionRow {
    phi: String,
    subgroup: Vec<u32>,
    c_n: Vec<String>,
    note: Option<String>,
    #[serde(default)]
    inconsistent: bool,
}

#[derive(Deserialize)]
struct RawCompositeSelmerRow {
    phi: String,
    subgroup: Vec<u32>,
    c_e: Vec<String>,
    c_v: Vec<String>,
    theta: Vec<String>,
    note: Option<String>,
}

// --- loading and validation -----------------------------------------------------

fn verr(family: &str, field: &str, message: impl Into<String>) -> FamilyError {
    FamilyError::Validation {
        family: family.to_string(),
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_int(family: &str, field: &str, s: &str) -> Result<BigInt, FamilyError> {
    BigInt::from_str(s).map_err(|e| verr(family, field, format!("bad integer {s:?}: {e}")))
}

fn parse_ratio(family: &str, field: &str, s: &str) -> Result<BigRational, FamilyError> {
    BigRational::from_str(s).map_err(|e| verr(family, field, format!("bad rational {s:?}: {e}")))
}

fn parse_poly(family: &str, field: &str, terms: &[RawTerm]) -> Result<WPoly, FamilyError> {
    let mut out = Vec::with_capacity(terms.len());
    for (i, j, c) in terms {
        out.push((*i, *j, parse_int(family, field, c)?));
    }
    Ok(WPoly::from_terms(out))
}

fn parse_qpoly(family: &str, field: &str, raw: &RawQPoly) -> Result<QPoly, FamilyError> {
    let mut num = Vec::with_capacity(raw.num.len());
    for c in &raw.num {
        num.push(parse_ratio(family, field, c)?);
    }
    Ok(QPoly {
        num,
        den_pow: raw.den_pow,
    })
}

fn parse_ratio_list(
    family: &str,
    field: &str,
    raw: &[String],
) -> Result<Vec<BigRational>, FamilyError> {
    raw.iter().map(|s| parse_ratio(family, field, s)).collect()
}

/// Parse and fully validate a family data file.
pub fn load_from_str(text: &str) -> Result<Vec<Family>, FamilyError> {
    let root: RawRoot = toml::from_str(text).map_err(|e| FamilyError::Parse(e.to_string()))?;
    let mut out = Vec::with_capacity(root.family.len());
    for raw in &root.family {
        out.push(build_family(raw)?);
    }
    for f in &out {
        validate_family(f)?;
    }
    Ok(out)
}

fn build_family(raw: &RawFamily) -> Result<Family, FamilyError> {
    let l = raw.label.as_str();
    let base_model = match &raw.base_model {
        Some(m) => Some(BaseModel {
            a1: parse_poly(l, "base_model.a1", &m.a1)?,
            a2: parse_poly(l, "base_model.a2", &m.a2)?,
            a3: parse_poly(l, "base_model.a3", &m.a3)?,
            a4: parse_poly(l, "base_model.a4", &m.a4)?,
            a6: parse_poly(l, "base_model.a6", &m.a6)?,
        }),
        None => None,
    };
    let factors = raw
        .factor
        .iter()
        .map(|f| parse_poly(l, "factor.poly", &f.poly))
        .collect::<Result<Vec<_>, _>>()?;
    let disc_rows = raw
        .disc_row
        .iter()
        .map(|r| {
            Ok(DiscRow {
                phi: r.phi.clone(),
                unit: parse_int(l, "disc_row.unit", &r.unit)?,
                exponents: r.exponents.clone(),
                printed: r.printed.clone(),
                typo: r.typo,
            })
        })
        .collect::<Result<Vec<_>, FamilyError>>()?;
    let isogenies = raw
        .isogeny
        .iter()
        .map(|r| {
            Ok(IsogenySpec {
                phi: r.phi.clone(),
                chain: r.chain.clone(),
                kernel: match &r.kernel {
                    Some(RawKernel::Multiple { k }) => Some(KernelSpec::Multiple { k: *k }),
                    Some(RawKernel::Section { x }) => Some(KernelSpec::Section {
                        x: parse_poly(l, "isogeny.kernel.x", x)?,
                    }),
                    None => None,
                },
                velu_unit: r
                    .velu_unit
                    .as_deref()
                    .map(|u| parse_int(l, "isogeny.velu_unit", u))
                    .transpose()?,
                chain_exponents: r.chain_exponents.clone(),
            })
        })
        .collect::<Result<Vec<_>, FamilyError>>()?;
    let local_rows = raw
        .local_row
        .iter()
        .map(|r| {
            Ok(LocalRow {
                classes: r.classes.clone(),
                ramified: r.ramified,
                good: parse_qpoly(l, "local_row.good", &r.good)?,
                good_printed: r.good_typo.clone(),
                additive: parse_qpoly(l, "local_row.additive", &r.additive)?,
                mult_lead: parse_ratio(l, "local_row.mult_lead", &r.mult_lead)?,
                split_lead: parse_ratio(l, "local_row.split_lead", &r.split_lead)?,
                printed_modulus: r.printed_modulus,
                printed_classes: r.printed_classes.clone(),
            })
        })
        .collect::<Result<Vec<_>, FamilyError>>()?;
    let isogeny_rows = raw
        .isogeny_row
        .iter()
        .map(|r| {
            Ok(IsogenyRow {
                phi: r.phi.clone(),
                classes: r.classes.clone(),
                leads: parse_ratio_list(l, "isogeny_row.leads", &r.leads)?,
                note: r.note.clone(),
                typo: r.typo,
            })
        })
        .collect::<Result<Vec<_>, FamilyError>>()?;
    let mean_rows = raw
        .mean_row
        .iter()
        .map(|r| {
            Ok(MeanRow {
                phi: r.phi.clone(),
                subgroup: r.subgroup.clone(),
                c_minus: parse_ratio(l, "mean_row.c_minus", &r.c_minus)?,
                c_plus: parse_ratio(l, "mean_row.c_plus", &r.c_plus)?,
                note: r.note.clone(),
                inconsistent: r.inconsistent,
            })
        })
        .collect::<Result<Vec<_>, FamilyError>>()?;
    let selmer_rows = raw
        .selmer_row
        .iter()
        .map(|r| {
            Ok(SelmerRow {
                phi: r.phi.clone(),
                subgroup: r.subgroup.clone(),
                c_e: parse_ratio(l, "selmer_row.c_e", &r.c_e)?,
                c_v: parse_ratio(l, "selmer_row.c_v", &r.c_v)?,
                theta: parse_ratio(l, "selmer_row.theta", &r.theta)?,
                note: r.note.clone(),
                inconsistent: r.inconsistent,
            })
        })
        .collect::<Result<Vec<_>, FamilyError>>()?;
    let distribution_rows = raw
        .distribution_row
        .iter()
        .map(|r| {
            Ok(DistributionRow {
                phi: r.phi.clone(),
                subgroup: r.subgroup.clone(),
                c_n: parse_ratio_list(l, "distribution_row.c_n", &r.c_n)?,
                note: r.note.clone(),
                inconsistent: r.inconsistent,
            })
        })
        .collect::<Result<Vec<_>, FamilyError>>()?;
    let composite_selmer_rows = raw
        .composite_selmer_row
        .iter()
        .map(|r| {
            Ok(CompositeSelmerRow {
                phi: r.phi.clone(),
                subgroup: r.subgroup.clone(),
                c_e: parse_ratio_list(l, "composite_selmer_row.c_e", &r.c_e)?,
                c_v: parse_ratio_list(l, "composite_selmer_row.c_v", &r.c_v)?,
                theta: parse_ratio_list(l, "composite_selmer_row.theta", &r.theta)?,
                note: r.note.clone(),
            })
        })
        .collect::<Result<Vec<_>, FamilyError>>()?;

    Ok(Family {
        label: raw.label.clone(),
        torsion: (raw.m_structure, raw.n_cyclic),
        level: raw.level,
        weights: (raw.weights[0], raw.weights[1]),
        weights_printed: raw.weights_printed.map(|w| (w[0], w[1])),
        delta: raw.delta,
        alpha: parse_ratio(l, "alpha", &raw.alpha)?,
        beta_coeff: raw
            .beta_coeff
            .as_deref()
            .map(|s| parse_ratio(l, "beta_coeff", s))
            .transpose()?,
        modulus: raw.modulus,
        modulus_printed: raw.modulus_printed,
        f4: parse_poly(l, "f4", &raw.f4)?,
        f6: parse_poly(l, "f6", &raw.f6)?,
        short_unit: parse_int(l, "short_unit", &raw.short_unit)?,
        base_unit: raw
            .base_unit
            .as_deref()
            .map(|s| parse_int(l, "base_unit", s))
            .transpose()?,
        marked_order: raw.marked_order,
        base_model,
        factors,
        disc_rows,
        isogenies,
        local_rows,
        isogeny_rows,
        mean_rows,
        selmer_rows,
        distribution_rows,
        composite_selmer_rows,
    })
}

/// Discriminant of a long Weierstrass model with polynomial coefficients,
/// via the integral b-invariant formulas.
pub fn model_disc_poly(m: &BaseModel) -> WPoly {
    let two = |p: &WPoly| p.scale(&BigInt::from(2));
    let b2 = m.a1.mul(&m.a1).add(&m.a2.scale(&BigInt::from(4)));
    let b4 = two(&m.a4).add(&m.a1.mul(&m.a3));
    let b6 = m.a3.mul(&m.a3).add(&m.a6.scale(&BigInt::from(4)));
    // b8 = a1^2 a6 + 4 a2 a6 - a1 a3 a4 + a2 a3^2 - a4^2
    let b8 = m
        .a1
        .mul(&m.a1)
        .mul(&m.a6)
        .add(&m.a2.mul(&m.a6).scale(&BigInt::from(4)))
        .sub(&m.a1.mul(&m.a3).mul(&m.a4))
        .add(&m.a2.mul(&m.a3).mul(&m.a3))
        .sub(&m.a4.mul(&m.a4));
    // disc = -b2^2 b8 - 8 b4^3 + 9 b2 b4 b6 - 27 b6^2
    b2.mul(&b2)
        .mul(&b8)
        .scale(&BigInt::from(-1))
        .sub(&b4.pow(3).scale(&BigInt::from(8)))
        .add(&b2.mul(&b4).mul(&b6).scale(&BigInt::from(9)))
        .sub(&b6.mul(&b6).scale(&BigInt::from(27)))
}

fn validate_family(f: &Family) -> Result<(), FamilyError> {
    let l = f.label.as_str();
    let w = f.weights;
    let d = f.delta as u64;

    if num_integer::gcd(w.0 as u64 * w.1 as u64, d) != 1 {
        return Err(verr(l, "weights/delta", "gcd(w0*w1, delta) != 1"));
    }
    let alpha = BigRational::new(BigInt::from(w.0 + w.1), BigInt::from(12 * f.delta));
    if f.alpha != alpha {
        return Err(verr(l, "alpha", format!("expected {alpha}, got {}", f.alpha)));
    }
    if f.f4.weighted_degree(w) != Some(4 * d) {
        return Err(verr(l, "f4", "not weighted-homogeneous of degree 4*delta"));
    }
    if f.f6.weighted_degree(w) != Some(6 * d) {
        return Err(verr(l, "f6", "not weighted-homogeneous of degree 6*delta"));
    }
    for (i, g) in f.factors.iter().enumerate() {
        if g.weighted_degree(w).is_none() {
            return Err(verr(l, "factor", format!("factor {i} not homogeneous")));
        }
    }
    for row in &f.disc_rows {
        if row.exponents.len() != f.factors.len() {
            return Err(verr(
                l,
                "disc_row.exponents",
                format!("row {}: {} exponents for {} factors", row.phi, row.exponents.len(), f.factors.len()),
            ));
        }
        let total: u64 = f
            .factors
            .iter()
            .zip(&row.exponents)
            .map(|(g, &e)| g.weighted_degree(w).unwrap_or(0) * e as u64)
            .sum();
        if total != 12 * d {
            return Err(verr(
                l,
                "disc_row.exponents",
                format!("row {}: weighted degree {total} != 12*delta", row.phi),
            ));
        }
    }

    // Short-form discriminant identity: -16(4 f4^3 + 27 f6^2) = short_unit * O-row.
    let disc_short = f
        .f4
        .pow(3)
        .scale(&BigInt::from(-64))
        .add(&f.f6.pow(2).scale(&BigInt::from(-432)));
    let o_row = f
        .table_disc_poly("O")
        .map_err(|_| verr(l, "disc_row", "missing O row"))?;
    if disc_short != o_row.scale(&f.short_unit) {
        return Err(verr(l, "short_unit", "short-form discriminant mismatch"));
    }

    // Base-model discriminant identity.
    if let Some(m) = &f.base_model {
        let unit = f
            .base_unit
            .as_ref()
            .ok_or_else(|| verr(l, "base_unit", "base model without base_unit"))?;
        if model_disc_poly(m) != o_row.scale(unit) {
            return Err(verr(l, "base_model", "base-model discriminant mismatch"));
        }
        let expect = f.torsion.0 * f.torsion.1;
        if f.marked_order != Some(expect) {
            return Err(verr(l, "marked_order", format!("expected {expect}")));
        }
    }

    // Local rows must cover every unit class mod m exactly once, and only
    // ramified rows may sit on non-unit classes.
    let m = f.modulus;
    for a in 0..m {
        let unit = num_integer::gcd(a, m) == 1 || m == 1;
        let hits: Vec<&LocalRow> = f
            .local_rows
            .iter()
            .filter(|r| r.classes.contains(&(a % m)))
            .collect();
        if unit {
            if hits.len() != 1 || hits[0].ramified {
                return Err(verr(
                    l,
                    "local_row.classes",
                    format!("unit class {a} mod {m} covered {} times", hits.len()),
                ));
            }
        } else if hits.iter().any(|r| !r.ramified) {
            return Err(verr(
                l,
                "local_row.classes",
                format!("non-unit class {a} mod {m} in an unramified row"),
            ));
        }
    }
    let mut phis: Vec<&str> = f.isogeny_rows.iter().map(|r| r.phi.as_str()).collect();
    phis.sort_unstable();
    phis.dedup();
    for phi in phis {
        let labels = alphabet(phi).len();
        for a in 0..m {
            if m != 1 && num_integer::gcd(a, m) != 1 {
                continue;
            }
            let hits: Vec<&IsogenyRow> = f
                .isogeny_rows
                .iter()
                .filter(|r| r.phi == phi && r.classes.contains(&a))
                .collect();
            if hits.len() != 1 {
                return Err(verr(
                    l,
                    "isogeny_row.classes",
                    format!("{phi}: class {a} mod {m} covered {} times", hits.len()),
                ));
            }
            if hits[0].leads.len() != labels {
                return Err(verr(
                    l,
                    "isogeny_row.leads",
                    format!("{phi}: {} leads for {labels} labels", hits[0].leads.len()),
                ));
            }
        }
    }
    for iso in &f.isogenies {
        if iso.chain_exponents.len() != f.factors.len() {
            return Err(verr(
                l,
                "isogeny.chain_exponents",
                format!("{}: {} trajectories for {} factors", iso.phi, iso.chain_exponents.len(), f.factors.len()),
            ));
        }
        if iso
            .chain_exponents
            .iter()
            .any(|t| t.len() != iso.chain.len() + 1)
        {
            return Err(verr(
                l,
                "isogeny.chain_exponents",
                format!("{}: trajectory length != chain length + 1", iso.phi),
            ));
        }
        let degree: u32 = iso.chain.iter().product();
        if phi_degree(&iso.phi) != degree {
            return Err(verr(
                l,
                "isogeny.chain",
                format!("{}: chain degree {degree}", iso.phi),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::primes_in_class;
    use num_traits::Signed;

    fn fam(label: &str) -> &'static Family {
        by_label(label).unwrap()
    }

    fn rat(s: &str) -> BigRational {
        BigRational::from_str(s).unwrap()
    }

    #[test]
    fn registry_has_nineteen_families() {
        assert_eq!(registry().len(), 19);
        let labels: Vec<&str> = registry().iter().map(|f| f.label.as_str()).collect();
        for l in [
            "G(1,1)", "G(1,2)", "G(1,3)", "G(1,4)", "G(1,5)", "G(1,6)", "G(1,7)", "G(1,8)",
            "G(1,9)", "G(1,10)", "G(1,12)", "G(2,2)", "G(2,4)", "G(2,6)", "G(2,8)", "G(3,3)",
            "G(3,6)", "G(4,4)", "G(5,5)",
        ] {
            assert!(labels.contains(&l), "missing {l}");
        }
    }

    #[test]
    fn descriptor_fields() {
        assert_eq!(fam("G(1,5)").weights, (1, 1));
        assert_eq!(fam("G(1,3)").alpha, rat("1/3"));
        assert_eq!(fam("G(1,1)").alpha, rat("5/6"));
        // weights corrected from the printed order
        assert_eq!(fam("G(1,4)").weights, (2, 1));
        assert_eq!(fam("G(1,4)").weights_printed, Some((1, 2)));
    }

    #[test]
    fn evaluate_f_examples() {
        let (a, b) = fam("G(1,5)").evaluate_f(&BigInt::from(1), &BigInt::from(0));
        assert_eq!((a, b), (BigInt::from(-27), BigInt::from(54)));

        let (a, b) = fam("G(1,2)").evaluate_f(&BigInt::from(1), &BigInt::from(1));
        assert_eq!((a, b), (BigInt::from(864), BigInt::from(-12096)));

        let (a, b) = fam("G(1,1)").evaluate_f(&BigInt::from(7), &BigInt::from(-3));
        assert_eq!((a, b), (BigInt::from(7), BigInt::from(-3)));
    }

    #[test]
    fn table_discriminant_examples() {
        let g15 = fam("G(1,5)");
        let d = g15
            .table_discriminant("O", &BigInt::from(11), &BigInt::from(1))
            .unwrap();
        assert_eq!(d, -BigInt::from(11).pow(5));
        let d = g15
            .table_discriminant("C5", &BigInt::from(11), &BigInt::from(1))
            .unwrap();
        assert_eq!(d, BigInt::from(-11));

        let d = fam("G(1,2)")
            .table_discriminant("O", &BigInt::from(1), &BigInt::from(1))
            .unwrap();
        assert_eq!(d, BigInt::from(-48));

        let err = g15.table_discriminant("C3", &BigInt::one(), &BigInt::one());
        match err {
            Err(FamilyError::UnknownKernel { available, .. }) => {
                assert!(available.contains("O") && available.contains("C5"));
            }
            other => panic!("expected kernel error, got {other:?}"),
        }
    }

    #[test]
    fn density_prediction_examples() {
        let v = fam("G(1,3)")
            .density_prediction(&Condition::Split, 7)
            .unwrap();
        assert_eq!(v, rat("12/49"));

        let v = fam("G(1,4)")
            .density_prediction(
                &Condition::Iso {
                    phi: "C2".into(),
                    label: IsoLabel::value(1, 1),
                },
                5,
            )
            .unwrap();
        assert_eq!(v, rat("6/25"));

        // 11 = 2 mod 9
        let v = fam("G(1,9)")
            .density_prediction(
                &Condition::Iso {
                    phi: "C3".into(),
                    label: IsoLabel::value(1, 1),
                },
                11,
            )
            .unwrap();
        assert_eq!(v, BigRational::zero());

        let err = fam("G(1,3)").density_prediction(&Condition::Good, 3);
        assert!(matches!(err, Err(FamilyError::BadPrime { q: 3, .. })));
        let err = fam("G(1,5)").density_prediction(&Condition::Good, 5);
        assert!(matches!(err, Err(FamilyError::BadPrime { q: 5, .. })));
    }

    #[test]
    fn weighted_homogeneity_under_scaling() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        for f in registry() {
            let (w0, w1) = f.weights;
            for lam in [2i64, 3, 5] {
                for _ in 0..50 {
                    let a = BigInt::from(rng.gen_range(-20i64..=20));
                    let b = BigInt::from(rng.gen_range(-20i64..=20));
                    let la = BigInt::from(lam).pow(w0) * &a;
                    let lb = BigInt::from(lam).pow(w1) * &b;
                    let (f4, f6) = f.evaluate_f(&a, &b);
                    let (g4, g6) = f.evaluate_f(&la, &lb);
                    assert_eq!(g4, BigInt::from(lam).pow(4 * f.delta) * &f4, "{}", f.label);
                    assert_eq!(g6, BigInt::from(lam).pow(6 * f.delta) * &f6, "{}", f.label);
                }
            }
        }
    }

    #[test]
    fn density_sum_rule() {
        // kappa_good + kappa_add + kappa_mult = 1 - q^-(w0+w1), exactly.
        for f in registry() {
            let one = BigRational::one();
            for row in f.local_rows.iter().filter(|r| !r.ramified) {
                for &class in &row.classes {
                    let qs = primes_in_class(f.modulus as u64, class as u64, 400).primes;
                    for q in qs.into_iter().filter(|&q| f.admissible(q, 1)).take(2) {
                        let total = f.density_prediction(&Condition::Good, q).unwrap()
                            + f.density_prediction(&Condition::Additive, q).unwrap()
                            + f.density_prediction(&Condition::Multiplicative, q).unwrap();
                        let expect = &one
                            - BigRational::new(
                                BigInt::one(),
                                BigInt::from(q).pow(f.weights.0 + f.weights.1),
                            );
                        assert_eq!(total, expect, "{} q={q}", f.label);
                    }
                }
            }
        }
    }

    #[test]
    fn n_class_partition() {
        // sum over labels of kappa_n = kappa_mult for every kernel row.
        for f in registry() {
            let mut phis: Vec<&str> = f.isogeny_rows.iter().map(|r| r.phi.as_str()).collect();
            phis.sort_unstable();
            phis.dedup();
            for phi in phis {
                let deg = phi_degree(phi);
                for row in f.isogeny_rows.iter().filter(|r| r.phi == phi) {
                    for &class in &row.classes {
                        let qs = primes_in_class(f.modulus as u64, class as u64, 600).primes;
                        for q in qs.into_iter().filter(|&q| f.admissible(q, deg)).take(2) {
                            let total: BigRational = alphabet(phi)
                                .into_iter()
                                .map(|label| {
                                    f.density_prediction(
                                        &Condition::Iso {
                                            phi: phi.to_string(),
                                            label,
                                        },
                                        q,
                                    )
                                    .unwrap()
                                })
                                .sum();
                            let mult = f
                                .density_prediction(&Condition::Multiplicative, q)
                                .unwrap();
                            assert_eq!(total, mult, "{} {phi} q={q}", f.label);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn split_never_exceeds_mult() {
        for f in registry() {
            for row in &f.local_rows {
                assert!(row.split_lead <= row.mult_lead, "{}", f.label);
                assert!(!row.split_lead.is_negative(), "{}", f.label);
            }
        }
    }

    #[test]
    fn malformed_data_is_rejected_by_name() {
        let text = r#"
schema_version = 1
[[family]]
label = "G(9,9)"
m_structure = 9
n_cyclic = 1
level = 9
weights = [2, 4]
delta = 2
alpha = "1/4"
modulus = 1
f4 = [[1, 0, "1"]]
f6 = [[0, 1, "1"]]
short_unit = "1"
[[family.factor]]
poly = [[3, 0, "4"], [0, 2, "27"]]
[[family.disc_row]]
phi = "O"
unit = "-16"
exponents = [1]
"#;
        let err = load_from_str(text).unwrap_err();
        match err {
            FamilyError::Validation { family, field, .. } => {
                assert_eq!(family, "G(9,9)");
                assert_eq!(field, "weights/delta");
            }
            other => panic!("expected validation error, got {other:?}"),
        }

        let err = load_from_str("schema_version = 1\n[[family]]\nlabel = 3\n").unwrap_err();
        assert!(matches!(err, FamilyError::Parse(_)));
    }

    #[test]
    fn composite_rows_present() {
        assert!(!fam("G(1,9)").distribution_rows.is_empty());
        assert!(!fam("G(1,6)").composite_selmer_rows.is_empty());
        assert_eq!(alphabet("C9").len(), 5);
        assert_eq!(alphabet("C6").len(), 9);
        assert_eq!(alphabet("C3").len(), 3);
    }

    #[test]
    fn short_only_families_have_no_base_model() {
        for l in ["G(3,3)", "G(3,6)", "G(5,5)"] {
            assert!(fam(l).base_model.is_none(), "{l}");
        }
        // 15 families carry a base model with marked point.
        let n = registry().iter().filter(|f| f.base_model.is_some()).count();
        assert_eq!(n, 15);
    }
}
