//! Raw video ingest, BT.709 color conversion, and seeded synthetic
//! sequences.

pub mod color;
pub mod synth;
pub mod y4m;

pub use color::{to_rgb_bt709, FrameRgb};
pub use synth::{gen_synthetic, Motion};
pub use y4m::{read_y4m, read_yuv420, write_y4m, RawVideo};
