//! Finite scalar quantization: bounded rounding of low-rank vectors onto an
//! odd-level lattice, with codes read off positionally in base `2K+1`.

mod audio;
mod codes;
mod stream;

pub use audio::AudioTokenizer;
pub use codes::*;
pub use stream::{read_codes, read_codes_file, write_codes, write_codes_file};
