//! Truncated path signatures, augmentations and signature distances.

mod augment;
mod diff;
mod distance;
mod signature;

pub use augment::{augment, augmentation_map, augmented_shape, parse_chain, AugmentedPath, Augmentation};
pub use diff::{augment_rows_map, expected_signature_on_tape, sig_mmd_on_tape, signature_rows};
pub use distance::{expected_signature, sig_mmd, sig_w1};
pub use signature::{sig_len, signature, SignatureFile, TruncatedSig};

/// Augmentation chain used by signature penalties unless configured otherwise.
pub const DEFAULT_CHAIN: [Augmentation; 2] = [Augmentation::LeadLag, Augmentation::Time];

/// Signature depth used by signature penalties unless configured otherwise.
pub const DEFAULT_DEPTH: usize = 2;
