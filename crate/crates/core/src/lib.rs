pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod grf;
pub mod layers;
pub mod network;
pub mod pipeline;
pub mod train;
pub mod uq;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/permeability.md")]
    mod permeability {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/uncertainty.md")]
    mod uncertainty {}
    #[doc = include_str!("../../../book/src/storage.md")]
    mod storage {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
