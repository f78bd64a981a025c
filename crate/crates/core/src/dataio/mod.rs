//! Image decoding, color conversion, resizing, manifests and seeded splits.

mod image;
mod manifest;
mod split;

pub(crate) use self::image::lerp;
pub use self::image::{load_image, resize_bilinear, to_gray, GrayImage, RgbImage};
pub use manifest::{Manifest, ManifestEntry, MANIFEST_SCHEMA_VERSION};
pub use split::{split_manifest, DatasetSplit, SplitRatios, SPLIT_SCHEMA_VERSION};

/// Default working resolution of the classification streams.
pub const CANONICAL_DIMS: (usize, usize) = (128, 128);
