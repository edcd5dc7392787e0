pub mod cli;
pub mod config;
pub mod conversion;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod net;
mod seeds;
pub mod synth;
pub mod training;
pub mod verify;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/signals.md")]
    mod chapter1 {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod chapter2 {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod chapter3 {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod chapter4 {}
    #[doc = include_str!("../../../book/src/conversion.md")]
    mod chapter5 {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod chapter6 {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod chapter7 {}
}
