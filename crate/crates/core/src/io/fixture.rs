//! Kernel fixtures: a raw `(k, k, C, C)` tensor next to a JSON sidecar.
//!
//! The sidecar of `kernel.bin` is `kernel.bin.json`:
//!
//! ```json
//! { "k": 3, "C": 2, "variant": "masked" }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::raw::{load_tensor, save_tensor};
use crate::invconv::{ConvKernel, Variant};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelMeta {
    pub k: usize,
    #[serde(rename = "C")]
    pub channels: usize,
    pub variant: Variant,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn load_kernel(path: impl AsRef<Path>) -> Result<ConvKernel> {
    let path = path.as_ref();
    let meta_path = sidecar_path(path);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: KernelMeta = serde_json::from_str(&text).map_err(|e| Error::format(&meta_path, e.to_string()))?;
    let t = load_tensor(path)?;
    if t.shape() != [meta.k, meta.k, meta.channels, meta.channels] {
        return Err(Error::format(
            path,
            format!(
                "tensor shape {:?} does not match sidecar k = {}, C = {}",
                t.shape(),
                meta.k,
                meta.channels
            ),
        ));
    }
    ConvKernel::from_tensor(&t, meta.variant).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_kernel(path: impl AsRef<Path>, kernel: &ConvKernel) -> Result<()> {
    let path = path.as_ref();
    save_tensor(path, &kernel.to_tensor())?;
    let meta = KernelMeta {
        k: kernel.k(),
        channels: kernel.channels(),
        variant: kernel.variant(),
    };
    let meta_path = sidecar_path(path);
    let json = serde_json::to_string(&meta).expect("plain struct serializes");
    std::fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn roundtrip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.bin");
        let k = ConvKernel::random(3, 2, Variant::BlockTriangular, 0.3, 0.5, &mut seeded(1));
        save_kernel(&p, &k).unwrap();
        assert_eq!(load_kernel(&p).unwrap(), k);

        std::fs::write(sidecar_path(&p), r#"{"k": 3, "C": 3, "variant": "block"}"#).unwrap();
        assert!(matches!(load_kernel(&p), Err(Error::Format { .. })));
        std::fs::write(sidecar_path(&p), r#"{"k": 3, "C": 2, "variant": "diagonal"}"#).unwrap();
        assert!(matches!(load_kernel(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn masked_fixture_with_masked_weight_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.bin");
        let k = ConvKernel::random(3, 2, Variant::BlockTriangular, 0.3, 0.5, &mut seeded(2));
        save_kernel(&p, &k).unwrap();
        std::fs::write(sidecar_path(&p), r#"{"k": 3, "C": 2, "variant": "masked"}"#).unwrap();
        assert!(matches!(load_kernel(&p), Err(Error::Format { .. })));
    }
}
