//! Decentralized scheduling of Earth-observation constellations.
//!
//! Satellites hold target-allocation vectors (the columns of an allocation
//! matrix). At every step of a time-varying communication graph, the members
//! of each connected component price each other's allocations with a local
//! 0-1 program and then permute the allocations among themselves so that the
//! component's total cost is minimal. Since the identity permutation is always
//! available, the global cost never increases, and the allocation matrix never
//! leaves the orbit of the initial one under column permutation.
//!
//! Module map:
//! - [`permgroup`]: permutations of satellite indices acting on allocation matrices.
//! - [`model`]: scenario data and the per-satellite / centralized 0-1 programs.
//! - [`ilp`]: exact branch-and-bound solver plus an enumeration oracle.
//! - [`robust`]: uncertainty model, constraint tightening and the bound pair.
//! - [`orbits`]: Walker constellations, repeat-track sun-synchronous design, ISL graphs.
//! - [`dcn`]: dynamic communication networks and connected components.
//! - [`engine`]: the allocation exchange / permutation iteration.
//! - [`cli`]: command-line front end.

pub mod cli;
pub mod dcn;
pub mod engine;
pub mod error;
pub mod ilp;
pub mod model;
pub mod orbits;
pub mod permgroup;
pub mod robust;

pub use error::{Error, Result};
