pub mod attack;
pub mod batch;
pub mod imageio;
pub mod labels;
pub mod nes;
pub mod oracle;
pub mod rng;
pub mod service;
pub mod synth;
pub mod tensor;
pub mod transform;
