// mdbook cannot run listings that depend on a workspace crate, so each chapter
// is pulled into its own module here and `cargo test --doc` runs the code
// blocks. One module per chapter keeps failures traceable to a file.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/views.md")]
pub mod views {}
#[doc = include_str!("src/banding.md")]
pub mod banding {}
#[doc = include_str!("src/weights.md")]
pub mod weights {}
#[doc = include_str!("src/pipeline.md")]
pub mod pipeline {}
#[doc = include_str!("src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
