//! Four atoms on an interacting coupled-resonator ring in the
//! two-excitation sector: spectra, bound states in the doublon continuum,
//! the pair–doublon effective model, the Markovian master equation, and the
//! preparation and transfer protocols built on them.

// Index loops mirror the matrix formulas; `!(x > 0.0)` rejects NaN too.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod effective;
pub mod error;
pub mod hilbert;
pub mod io;
pub mod linalg;
pub mod model;
pub mod open_system;
pub mod protocols;
pub mod spectral;

pub use error::{Error, Result};
pub use model::{ModelParams, OmegaConvention};

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    pub mod model {}
    #[doc = include_str!("../../../book/src/hilbert.md")]
    pub mod hilbert {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    pub mod spectral {}
    #[doc = include_str!("../../../book/src/effective.md")]
    pub mod effective {}
    #[doc = include_str!("../../../book/src/open_system.md")]
    pub mod open_system {}
    #[doc = include_str!("../../../book/src/protocols.md")]
    pub mod protocols {}
}
