//! Image files, irregular masks, synthetic samples and batching.

mod dataset;
mod image_io;
mod masks;

pub use dataset::{
    image_dir_dataset, stack_batch, synthetic_dataset, synthetic_image, Batcher, ImageSample,
};
pub use image_io::{
    decode_pgm, decode_ppm, encode_pgm, encode_ppm, quantize, read_image, read_mask, write_image,
    write_mask,
};
pub use masks::{
    generate_irregular_mask, hole_ratio, GeneratedMask, MaskBucket, MaskSpec, StrokeParams,
    MAX_ATTEMPTS,
};

/// Deterministic seed derivation (splitmix64 over the parts).
pub fn sub_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}
