//! Stack-augmented recurrent language models and the formal-language
//! machinery used to train and verify them.

pub mod autodiff;
pub mod controller;
pub mod error;
pub mod grammar;
pub mod harness;
pub mod languages;

pub use error::{Error, Result};
pub mod model;
pub mod oracle;
pub mod stack;
