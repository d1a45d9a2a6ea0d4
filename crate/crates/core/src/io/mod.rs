//! File formats and other external surfaces: Middlebury `.flo`, the weights
//! container, image loading, flow colouring and synthetic training pairs.

pub mod flo;
pub mod image;
pub mod synthetic;
pub mod viz;
pub mod weights;

pub use self::flo::{read_flo, write_flo};
pub use self::image::{load_image, pad_to_multiple, save_image, save_rgb};
pub use self::synthetic::{make_synthetic_pair, Motion, SyntheticPair};
pub use self::viz::visualize_flow;
pub use self::weights::{load_model, load_weights, save_model, save_weights};
