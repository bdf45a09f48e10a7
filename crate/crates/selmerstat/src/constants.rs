//! Moment constants for log-ratio statistics.
//!
//! Averaging the leading density coefficients of a kernel's ratio-class
//! table over a subgroup of residue classes gives the per-class coefficients
//! c_n; from these the mean, variance, and θ = mean + variance/2 constants
//! are assembled, either as exact rationals (prime-power ratio alphabets) or
//! as exact polynomials in λ = log_6(2) (degree-six chains).  An audit pass
//! re-derives every stored constants row and reports the cells where the
//! stored (printed) value disagrees with the derivation.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::Zero;
use thiserror::Error;

use crate::families::{alphabet, registry, Family, FamilyError, IsoLabel};

#[derive(Debug, Error)]
pub enum ConstantsError {
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error("{family}: {residues:?} is not a subgroup of the units mod {modulus}")]
    NotSubgroup {
        family: String,
        modulus: u32,
        residues: Vec<u32>,
    },
    #[error("{family} {phi}: no ratio-class row covers residue class {class}")]
    MissingClass {
        family: String,
        phi: String,
        class: u32,
    },
}

/// Reduce, deduplicate, and validate a residue list as a subgroup of
/// (Z/mZ)^× for the family's table modulus m.
pub fn normalize_subgroup(f: &Family, residues: &[u32]) -> Result<Vec<u32>, ConstantsError> {
    let m = f.modulus;
    let err = || ConstantsError::NotSubgroup {
        family: f.label.clone(),
        modulus: m,
        residues: residues.to_vec(),
    };
    if residues.is_empty() {
        return Err(err());
    }
    let mut set: Vec<u32> = residues.iter().map(|a| a % m.max(1)).collect();
    set.sort_unstable();
    set.dedup();
    let one = 1 % m.max(1);
    if !set.contains(&one) {
        return Err(err());
    }
    for &a in &set {
        if m > 1 && a.gcd(&m) != 1 {
            return Err(err());
        }
        for &b in &set {
            if m > 1 && !set.contains(&(a * b % m)) {
                return Err(err());
            }
        }
    }
    Ok(set)
}

/// Per-class coefficients c_n, in `alphabet(phi)` order: the average over
/// the subgroup of the leading ratio-class density coefficients.
pub fn derive_cn(
    f: &Family,
    phi: &str,
    residues: &[u32],
) -> Result<Vec<BigRational>, ConstantsError> {
    let subgroup = normalize_subgroup(f, residues)?;
    if !f.isogeny_rows.iter().any(|r| r.phi == phi) {
        return Err(ConstantsError::Family(FamilyError::UnknownKernel {
            family: f.label.clone(),
            phi: phi.to_string(),
            available: {
                let mut v: Vec<&str> = f.isogeny_rows.iter().map(|r| r.phi.as_str()).collect();
                v.dedup();
                v.join(", ")
            },
        }));
    }
    let labels = alphabet(phi).len();
    let mut sums = vec![BigRational::zero(); labels];
    for &a in &subgroup {
        let row = f
            .isogeny_rows
            .iter()
            .find(|r| r.phi == phi && r.classes.contains(&a))
            .ok_or_else(|| ConstantsError::MissingClass {
                family: f.label.clone(),
                phi: phi.to_string(),
                class: a,
            })?;
        for (s, lead) in sums.iter_mut().zip(&row.leads) {
            *s += lead;
        }
    }
    let size = BigRational::from_integer(BigInt::from(subgroup.len() as u32));
    Ok(sums.into_iter().map(|s| s / &size).collect())
}

/// Mean/variance/θ constants: exact rationals when every ratio label is a
/// rational log_d value, exact coefficient vectors in λ = log_6(2) (constant
/// term first) for degree-six chains.
#[derive(Debug, Clone, PartialEq)]
pub enum Moments {
    Rational {
        c_e: BigRational,
        c_v: BigRational,
        theta: BigRational,
    },
    LogSix {
        c_e: Vec<BigRational>,
        c_v: Vec<BigRational>,
        theta: Vec<BigRational>,
    },
}

#[derive(Debug, Clone)]
pub struct ConstantsRow {
    pub family: String,
    pub phi: String,
    pub subgroup: Vec<u32>,
    /// Per-class coefficients in alphabet order.
    pub c_n: Vec<BigRational>,
    pub moments: Moments,
}

/// Drop trailing zero coefficients (for comparing λ-polynomials).
pub fn trim_zeros(mut v: Vec<BigRational>) -> Vec<BigRational> {
    while v.last().map(|c| c.is_zero()).unwrap_or(false) {
        v.pop();
    }
    v
}

fn half() -> BigRational {
    BigRational::new(BigInt::from(1), BigInt::from(2))
}

/// Derive c_n for a subgroup and fold the alphabet values into mean,
/// variance, and θ.
pub fn assemble(f: &Family, phi: &str, residues: &[u32]) -> Result<ConstantsRow, ConstantsError> {
    let subgroup = normalize_subgroup(f, residues)?;
    let c_n = derive_cn(f, phi, residues)?;
    let labels = alphabet(phi);
    let moments = if labels
        .iter()
        .all(|l| matches!(l, IsoLabel::Value(_)))
    {
        let mut c_e = BigRational::zero();
        let mut c_v = BigRational::zero();
        for (label, c) in labels.iter().zip(&c_n) {
            let IsoLabel::Value(v) = label else { unreachable!() };
            c_e += v * c;
            c_v += v * v * c;
        }
        let theta = &c_e + &c_v * half();
        Moments::Rational { c_e, c_v, theta }
    } else {
        // label value n2 log_6 2 + n3 log_6 3 = n3 + (n2 - n3) λ
        let mut e = vec![BigRational::zero(); 2];
        let mut v = vec![BigRational::zero(); 3];
        for (label, c) in labels.iter().zip(&c_n) {
            let IsoLabel::Log6Pair { two, three } = label else {
                unreachable!("mixed ratio alphabet")
            };
            let v0 = BigRational::from_integer(BigInt::from(*three));
            let v1 = BigRational::from_integer(BigInt::from(*two - *three));
            e[0] += &v0 * c;
            e[1] += &v1 * c;
            v[0] += &v0 * &v0 * c;
            v[1] += BigRational::from_integer(BigInt::from(2)) * &v0 * &v1 * c;
            v[2] += &v1 * &v1 * c;
        }
        let theta = vec![
            &e[0] + &v[0] * half(),
            &e[1] + &v[1] * half(),
            &v[2] * half(),
        ];
        Moments::LogSix {
            c_e: trim_zeros(e),
            c_v: trim_zeros(v),
            theta: trim_zeros(theta),
        }
    };
    Ok(ConstantsRow {
        family: f.label.clone(),
        phi: phi.to_string(),
        subgroup,
        c_n,
        moments,
    })
}

// --- audit ----------------------------------------------------------------------

/// One stored cell whose re-derivation disagrees with the stored value.
#[derive(Debug, Clone)]
pub struct AuditFinding {
    pub family: String,
    pub phi: String,
    pub subgroup: Vec<u32>,
    pub table: String,
    pub stored: String,
    pub derived: String,
    /// The data file already annotates this row as inconsistent.
    pub annotated: bool,
}

#[derive(Debug, Clone, Default)]
pub struct AuditReport {
    pub rows_checked: usize,
    pub findings: Vec<AuditFinding>,
    /// Rows annotated inconsistent in the data for which the derivation
    /// nevertheless matches (should be empty).
    pub stale_annotations: Vec<String>,
}

impl AuditReport {
    pub fn unannotated(&self) -> Vec<&AuditFinding> {
        self.findings.iter().filter(|f| !f.annotated).collect()
    }

    pub fn has_finding(&self, family: &str, phi: &str, subgroup: &[u32]) -> bool {
        self.findings
            .iter()
            .any(|f| f.family == family && f.phi == phi && f.subgroup == subgroup)
    }
}

fn fmt_rationals(v: &[BigRational]) -> String {
    let parts: Vec<String> = v.iter().map(|c| c.to_string()).collect();
    format!("({})", parts.join(", "))
}

/// Re-derive every stored constants row from the density coefficients and
/// report each mismatching cell.  Stored values are never modified.
pub fn audit_tables() -> AuditReport {
    let mut report = AuditReport::default();
    for f in registry() {
        for row in &f.mean_rows {
            report.rows_checked += 1;
            let derived = assemble(f, &row.phi, &row.subgroup).expect("stored subgroup");
            let (dm, dp) = (derived.c_n[0].clone(), derived.c_n[2].clone());
            let matches = dm == row.c_minus && dp == row.c_plus;
            record(
                &mut report,
                matches,
                row.inconsistent,
                AuditFinding {
                    family: f.label.clone(),
                    phi: row.phi.clone(),
                    subgroup: row.subgroup.clone(),
                    table: "mean-variance-I".to_string(),
                    stored: fmt_rationals(&[row.c_minus.clone(), row.c_plus.clone()]),
                    derived: fmt_rationals(&[dm, dp]),
                    annotated: row.inconsistent,
                },
            );
        }
        for row in &f.selmer_rows {
            report.rows_checked += 1;
            let derived = assemble(f, &row.phi, &row.subgroup).expect("stored subgroup");
            let Moments::Rational { c_e, c_v, theta } = &derived.moments else {
                panic!("{} {}: rational table with log-six alphabet", f.label, row.phi)
            };
            let matches = *c_e == row.c_e && *c_v == row.c_v && *theta == row.theta;
            record(
                &mut report,
                matches,
                row.inconsistent,
                AuditFinding {
                    family: f.label.clone(),
                    phi: row.phi.clone(),
                    subgroup: row.subgroup.clone(),
                    table: "mean-variance-II".to_string(),
                    stored: fmt_rationals(&[
                        row.c_e.clone(),
                        row.c_v.clone(),
                        row.theta.clone(),
                    ]),
                    derived: fmt_rationals(&[c_e.clone(), c_v.clone(), theta.clone()]),
                    annotated: row.inconsistent,
                },
            );
        }
        for row in &f.distribution_rows {
            report.rows_checked += 1;
            let derived = derive_cn(f, &row.phi, &row.subgroup).expect("stored subgroup");
            let matches = derived == row.c_n;
            record(
                &mut report,
                matches,
                row.inconsistent,
                AuditFinding {
                    family: f.label.clone(),
                    phi: row.phi.clone(),
                    subgroup: row.subgroup.clone(),
                    table: "ratio-distribution".to_string(),
                    stored: fmt_rationals(&row.c_n),
                    derived: fmt_rationals(&derived),
                    annotated: row.inconsistent,
                },
            );
        }
        for row in &f.composite_selmer_rows {
            report.rows_checked += 1;
            let derived = assemble(f, &row.phi, &row.subgroup).expect("stored subgroup");
            let (de, dv, dt) = match &derived.moments {
                Moments::Rational { c_e, c_v, theta } => (
                    trim_zeros(vec![c_e.clone()]),
                    trim_zeros(vec![c_v.clone()]),
                    trim_zeros(vec![theta.clone()]),
                ),
                Moments::LogSix { c_e, c_v, theta } => (c_e.clone(), c_v.clone(), theta.clone()),
            };
            let matches = de == trim_zeros(row.c_e.clone())
                && dv == trim_zeros(row.c_v.clone())
                && dt == trim_zeros(row.theta.clone());
            record(
                &mut report,
                matches,
                false,
                AuditFinding {
                    family: f.label.clone(),
                    phi: row.phi.clone(),
                    subgroup: row.subgroup.clone(),
                    table: "composite-selmer".to_string(),
                    stored: format!(
                        "e{} v{} th{}",
                        fmt_rationals(&row.c_e),
                        fmt_rationals(&row.c_v),
                        fmt_rationals(&row.theta)
                    ),
                    derived: format!(
                        "e{} v{} th{}",
                        fmt_rationals(&de),
                        fmt_rationals(&dv),
                        fmt_rationals(&dt)
                    ),
                    annotated: false,
                },
            );
        }
    }
    report
}

fn record(report: &mut AuditReport, matches: bool, annotated: bool, finding: AuditFinding) {
    if !matches {
        report.findings.push(finding);
    } else if annotated {
        report.stale_annotations.push(format!(
            "{} {} {:?} ({})",
            finding.family, finding.phi, finding.subgroup, finding.table
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::by_label;

    fn fam(label: &str) -> &'static Family {
        by_label(label).unwrap()
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn averaged_coefficients_over_full_unit_group() {
        // degree-3 kernel of the 9-torsion family, full unit group mod 9:
        // leading +1 coefficients (5,0,0,2,2,0)/6 = 3/2
        let c_n = derive_cn(fam("G(1,9)"), "C3", &[1, 2, 4, 5, 7, 8]).unwrap();
        assert_eq!(c_n[2], rat(3, 2));
        let row = fam("G(1,9)")
            .mean_rows
            .iter()
            .find(|r| r.phi == "C3" && r.subgroup == [1, 2, 4, 5, 7, 8])
            .expect("full-subgroup row");
        assert_eq!(c_n[0], row.c_minus);
        assert_eq!(c_n[2], row.c_plus);
    }

    #[test]
    fn class_coefficients_sum_to_multiplicative_lead() {
        for f in registry() {
            for row in &f.mean_rows {
                let c_n = derive_cn(f, &row.phi, &row.subgroup).unwrap();
                let total: BigRational = c_n.iter().sum();
                let mult_avg: BigRational = row
                    .subgroup
                    .iter()
                    .map(|&a| {
                        f.local_rows
                            .iter()
                            .find(|r| r.classes.contains(&a))
                            .expect("local row")
                            .mult_lead
                            .clone()
                    })
                    .sum::<BigRational>()
                    / BigRational::from_integer(BigInt::from(row.subgroup.len() as u32));
                assert_eq!(total, mult_avg, "{} {} {:?}", f.label, row.phi, row.subgroup);
            }
        }
    }

    #[test]
    fn seven_isogeny_full_subgroup_moments() {
        let row = assemble(fam("G(1,7)"), "C7", &[1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(
            row.moments,
            Moments::Rational {
                c_e: rat(-5, 2),
                c_v: rat(7, 2),
                theta: rat(-3, 4),
            }
        );
    }

    #[test]
    fn nine_isogeny_trivial_subgroup_moments() {
        let row = assemble(fam("G(1,9)"), "C9", &[1]).unwrap();
        assert_eq!(
            row.moments,
            Moments::Rational {
                c_e: rat(0, 1),
                c_v: rat(6, 1),
                theta: rat(3, 1),
            }
        );
    }

    #[test]
    fn six_isogeny_lambda_vectors() {
        let row = assemble(fam("G(1,6)"), "C6", &[1]).unwrap();
        let Moments::LogSix { c_e, c_v, theta } = row.moments else {
            panic!("expected log-six moments")
        };
        assert!(c_e.is_empty()); // zero polynomial
        assert_eq!(c_v, vec![rat(4, 1), rat(-8, 1), rat(8, 1)]);
        assert_eq!(theta, vec![rat(2, 1), rat(-4, 1), rat(4, 1)]);
    }

    #[test]
    fn subgroup_validation() {
        let f = fam("G(1,9)");
        assert!(matches!(
            derive_cn(f, "C3", &[1, 5]),
            Err(ConstantsError::NotSubgroup { .. })
        )); // 5·5 = 7 mod 9 missing
        assert!(matches!(
            derive_cn(f, "C3", &[1, 3]),
            Err(ConstantsError::NotSubgroup { .. })
        )); // 3 not a unit mod 9
        assert!(matches!(
            derive_cn(f, "C3", &[2, 4, 8, 7, 5]),
            Err(ConstantsError::NotSubgroup { .. })
        )); // missing identity
        assert!(matches!(
            derive_cn(f, "C3", &[]),
            Err(ConstantsError::NotSubgroup { .. })
        ));
        assert!(derive_cn(f, "C3", &[1, 8]).is_ok());
        assert!(matches!(
            derive_cn(f, "C5", &[1]),
            Err(ConstantsError::Family(FamilyError::UnknownKernel { .. }))
        ));
    }

    #[test]
    fn derived_moments_satisfy_theta_identity() {
        for f in registry() {
            for row in &f.selmer_rows {
                let derived = assemble(f, &row.phi, &row.subgroup).unwrap();
                let Moments::Rational { c_e, c_v, theta } = derived.moments else {
                    panic!("rational expected")
                };
                assert_eq!(theta, &c_e + &c_v * half());
            }
        }
    }

    #[test]
    fn audit_flags_exactly_the_annotated_rows() {
        let report = audit_tables();
        assert!(report.rows_checked > 100, "rows: {}", report.rows_checked);
        assert!(
            report.unannotated().is_empty(),
            "unexpected mismatches: {:?}",
            report.unannotated()
        );
        assert!(
            report.stale_annotations.is_empty(),
            "stale: {:?}",
            report.stale_annotations
        );
        assert_eq!(report.findings.len(), 8, "{:#?}", report.findings);

        // variance cell of the (4,4) two-isogeny trivial-subgroup row
        let f44 = report
            .findings
            .iter()
            .find(|f| {
                f.family == "G(4,4)"
                    && f.phi == "C2"
                    && f.subgroup == [1]
                    && f.table == "mean-variance-II"
            })
            .expect("flagged variance row");
        assert!(f44.derived.contains('6'), "{:?}", f44);

        // healthy rows must not be flagged
        assert!(!report.has_finding("G(1,7)", "C7", &[1, 2, 3, 4, 5, 6]));
        assert!(!report.has_finding("G(1,9)", "C9", &[1]));

        // the 9-isogeny distribution slip is caught
        assert!(report
            .findings
            .iter()
            .any(|f| f.family == "G(1,9)"
                && f.phi == "C9"
                && f.subgroup == [1, 4, 7]
                && f.table == "ratio-distribution"));
    }
}
