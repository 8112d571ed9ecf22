//! Multi-speaker sequence-to-sequence speech synthesis toolkit.

pub mod acoustic;
pub mod audio;
pub mod blends;
pub mod container;
pub mod error;
pub mod manifest;
pub mod melspec;
pub mod mushra;
pub mod nn;
pub mod stability;
pub mod textfront;
pub mod toy;
pub mod vocoder;

pub use error::{Error, Result};
