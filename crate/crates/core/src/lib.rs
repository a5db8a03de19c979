//! Safe sliding mode control for uncertain control-affine systems.
//!
//! The guide under `book/` walks through the modules in order.

// Guards like `!(x > 0.0)` are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod control;
pub mod energy;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod model;
pub mod numdiff;
pub mod planner;
pub mod presets;
pub mod sampling;
pub mod sim;
pub mod sliding;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident) => {
            #[doc = include_str!(concat!("../../../book/src/", stringify!($name), ".md"))]
            mod $name {}
        };
    }
    chapter!(introduction);
    chapter!(energy);
    chapter!(regions);
    chapter!(sliding);
    chapter!(controllers);
    chapter!(plans);
    chapter!(simulation);
    chapter!(cli);

    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
