//! The guide in `book/` is plain mdbook, which cannot run Rust listings
//! against a workspace crate. Each chapter is included here as the docs of a
//! module so `cargo test --doc` compiles and runs every listing.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/problems.md")]
pub mod problems {}
#[doc = include_str!("../../../book/src/schedules.md")]
pub mod schedules {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/transform.md")]
pub mod transform {}
#[doc = include_str!("../../../book/src/tikhonov.md")]
pub mod tikhonov {}
#[doc = include_str!("../../../book/src/analysis.md")]
pub mod analysis {}
#[doc = include_str!("../../../book/src/running.md")]
pub mod running {}
