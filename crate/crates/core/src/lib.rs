//! Adversarial camouflage textures for clothed meshes.

pub mod attack;
pub mod calibrate;
pub mod detect;
pub mod error;
pub mod fixtures;
pub mod imageio;
pub mod mesh;
pub mod render;
pub mod scene;
pub mod texture;
pub mod topoproj;
pub mod warp;

pub use error::{Error, Result};
