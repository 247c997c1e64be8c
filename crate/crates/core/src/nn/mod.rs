//! Neural building blocks: the masked autoregressive network, the evidence
//! tree encoder and the training loop.

pub mod fit;
pub mod made;
pub mod tree;
