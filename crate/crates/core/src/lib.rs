pub mod analysis;
pub mod fusion;
pub mod harness;
pub mod kv;
pub mod numerics;
pub mod protocol;
pub mod rng;
pub mod actuation;
pub mod ssl;
pub mod stimulus;
