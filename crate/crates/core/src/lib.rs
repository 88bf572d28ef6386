//! Direct-method toolkit for optimal control of controlled sweeping processes
//! over smooth, possibly nonconvex, level-set constraints.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod geometry;
pub mod instance;
pub mod linalg;
pub mod schedule;
pub mod controls;
pub mod dynamics;
pub mod optimizer;
pub mod certificate;
pub mod experiments;
pub mod io;

pub use error::{Error, Result};
