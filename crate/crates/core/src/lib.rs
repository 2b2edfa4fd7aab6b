#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::large_enum_variant,
    clippy::type_complexity
)]

pub mod adaptation;
pub mod error;
pub mod harness;
pub mod langmodel;
pub mod lattice;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod topology;
pub mod training;

pub use error::{Error, Result};
