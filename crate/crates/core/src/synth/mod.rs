//! Synthetic benchmark with planted ground truth and a mock enhancer.
//!
//! Image documents expose only scene tokens shared across a cluster, so an
//! un-enhanced retriever can match little beyond scene. The mock enhancer
//! reads the hidden attributes from the answer file and puts them into text.

pub mod emit;
pub mod mock;
pub mod server;
pub mod world;

pub use emit::{build_benchmark, emit_benchmark, AnswerFile, ImageAnswer, SynthBenchmark};
pub use mock::MockVlm;
pub use server::{serve_mock, serve_mock_with, MockServer, ServeOptions};
pub use world::{generate_world, Entity, EntityCategory, SynthConfig, SynthWorld};
