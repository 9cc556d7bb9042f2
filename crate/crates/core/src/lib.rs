pub mod grounding;
pub mod providers;
pub mod qa;
pub mod tree;
pub mod synth;
pub mod debias;
pub mod harness;
