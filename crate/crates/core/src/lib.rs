//! Coalition influence over product measures.
//!
//! [`measures`] and [`functions`] describe the random input and the protocol,
//! [`influence`] computes how far a coalition can steer one round,
//! [`adversary`] solves the rushing game over several rounds, and [`search`]
//! looks for small winning coalitions with independently certified results.
//! [`cli`] is the experiment harness behind the `coinflip` binary.

pub mod adversary;
pub mod cli;
pub mod error;
pub mod functions;
pub mod influence;
pub mod measures;
pub mod search;

mod bits;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/measures.md")]
    mod measures {}
    #[doc = include_str!("../../../book/src/functions.md")]
    mod functions {}
    #[doc = include_str!("../../../book/src/influence.md")]
    mod influence {}
    #[doc = include_str!("../../../book/src/adversary.md")]
    mod adversary {}
    #[doc = include_str!("../../../book/src/search.md")]
    mod search {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
