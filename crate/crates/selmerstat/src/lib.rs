//! Workbench for arithmetic statistics of Selmer ratios in the genus-zero
//! torsion families of elliptic curves over Q.
//!
//! The crate is organized bottom-up: exact integer utilities (`arith`), the
//! static family registry with its density and constants tables (`families`),
//! Weierstrass model arithmetic (`curves`), Velu quotients (`isogeny`),
//! reduction classification and Tamagawa ratio rules (`reduction`), finite
//! field censuses validating the density tables (`densities`), closed-form
//! mean/variance constants (`constants`), and height-box enumeration with
//! per-curve Selmer ratio accounting (`statistics`).

pub mod arith;
pub mod constants;
pub mod curves;
pub mod densities;
pub mod families;
pub mod isogeny;
pub mod reduction;
