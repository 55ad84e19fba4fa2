pub mod cli;
pub mod convergence;
pub mod error;
pub mod fem;
pub mod forms;
pub mod invariance;
pub mod linalg;
pub mod mr;
pub mod presets;
pub mod propagator;
pub mod space;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/spaces.md")]
    pub struct Spaces;
    #[doc = include_str!("../../../book/src/forms.md")]
    pub struct Forms;
    #[doc = include_str!("../../../book/src/propagation.md")]
    pub struct Propagation;
    #[doc = include_str!("../../../book/src/mr.md")]
    pub struct Mr;
    #[doc = include_str!("../../../book/src/convergence.md")]
    pub struct Convergence;
    #[doc = include_str!("../../../book/src/invariance.md")]
    pub struct Invariance;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
