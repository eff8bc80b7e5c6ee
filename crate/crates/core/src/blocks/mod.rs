//! The three sub-blocks of a hybrid module. All map (B,C,H,W) to (B,C,H,W).

mod ffn;
mod mamba;
mod positional;
mod srsa;

pub use ffn::{CbfnConfig, Gdfn};
pub use mamba::{ActivationOrder, MambaBlock, MambaBlockConfig};
pub use positional::positional_embedding;
pub use srsa::{QkScale, Srsa, SrsaConfig, SrsaOutput};
