pub mod group;
pub mod rng;
pub mod dyadic;
pub mod wavelets;
pub mod maps;
pub mod pansu;
pub mod decomposer;
pub mod dimension;
pub mod cantor;
pub mod counterexamples;
pub mod cli;
