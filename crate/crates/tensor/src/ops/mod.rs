mod conv;
mod elementwise;
mod norm;
mod pool;
mod resize;

pub use conv::ConvSpec;
pub use elementwise::sigmoid;
pub use norm::BatchStats;
pub use resize::{bilinear_taps, resize_bilinear, resize_plane};
