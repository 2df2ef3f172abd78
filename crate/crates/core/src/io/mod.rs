//! File formats: the raw tensor container, kernel fixtures and PGM/PPM
//! images.

pub mod fixture;
pub mod pnm;
pub mod raw;

pub use fixture::{load_kernel, save_kernel, sidecar_path, KernelMeta};
pub use pnm::{encode_pnm, parse_pnm, read_pnm, write_pnm, PnmImage};
pub use raw::{decode_tensor, encode_tensor, load_tensor, save_tensor, RAW_MAGIC, RAW_VERSION};
