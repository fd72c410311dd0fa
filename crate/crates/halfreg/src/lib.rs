//! Edge-colored factorizations of complete bipartite graphs realizing
//! half-regular degree matrices: existence checking, deterministic
//! construction, transformation paths touching at most three rows, and a
//! Metropolis-Hastings sampler with exactly replayable proposal
//! probabilities.
//!
//! Instances prescribe, per color, one shared degree for every row vertex
//! and individual degrees per column vertex. Realizations are dense color
//! matrices over the full grid (after the non-edge color extension). The
//! `oracle` and `stats` modules provide the brute-force enumeration and the
//! goodness-of-fit machinery used to validate the sampler.

pub mod connect;
pub mod construct;
pub mod instances;
pub mod io;
pub mod kernel;
pub mod model;
pub mod oracle;
pub mod stats;
pub mod trails;

pub use construct::{construct, construct_realization};
pub use model::{
    check_realization, deficiencies, extend_with_nonedge_color, validate, ColoredRealization,
    DegreeMatrix,
};
