//! Probabilistic ego-motion correction of scanning-lidar point clouds and their
//! projection into fisheye camera images.

pub mod camera;
pub mod consistency;
pub mod correction;
pub mod ego_motion;
mod error;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod simulation;
pub mod unscented;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/unscented.md")]
    mod unscented {}
    #[doc = include_str!("../../../book/src/ego_motion.md")]
    mod ego_motion {}
    #[doc = include_str!("../../../book/src/correction.md")]
    mod correction {}
    #[doc = include_str!("../../../book/src/projection.md")]
    mod projection {}
    #[doc = include_str!("../../../book/src/consistency.md")]
    mod consistency {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
