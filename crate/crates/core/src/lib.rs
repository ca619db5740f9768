//! Mixture-of-experts resource allocation for joint communication and
//! computing networks, with a language-model gate that picks and weights
//! experts from an operator's natural-language request.

pub mod bench;
pub mod cli;
pub mod config;
pub mod experts;
pub mod gate;
pub mod netmodel;
pub mod objectives;
pub mod seeding;
pub mod uncertainty;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/network-model.md")]
    mod network_model {}
    #[doc = include_str!("../../../book/src/uncertainty.md")]
    mod uncertainty {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/experts.md")]
    mod experts {}
    #[doc = include_str!("../../../book/src/gate.md")]
    mod gate {}
    #[doc = include_str!("../../../book/src/bench.md")]
    mod bench {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
