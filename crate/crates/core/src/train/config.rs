//! Line-oriented `key = value` training configuration.
//!
//! Blank lines and text after `#` are ignored. Unknown keys, repeated keys
//! and unparsable values are errors that name the offending line.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::data::{DatasetKind, DatasetSpec};
use crate::flow::{CouplingKind, InitMode, ModelConfig, Permutation};
use crate::invconv::Variant;
use crate::{Error, Real, Result};

/// Every recognized key with its default and meaning.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("height", "8", "image height"),
    ("width", "8", "image width"),
    ("channels", "1", "image channels"),
    ("levels", "2", "number of levels L"),
    ("depth", "4", "flow steps per level D"),
    ("kernel_size", "3", "odd window size of the invertible convolution"),
    ("variant", "masked", "masked | block center tap"),
    ("coupling", "quad", "affine | quad"),
    ("permutation", "invconv", "invconv | conv1x1 channel mixing"),
    ("hidden", "64", "hidden width of coupling networks"),
    ("scale_bound", "2.0", "coupling log-scale bound s_max in s_max·tanh"),
    ("squeeze", "true", "squeeze at the start of every level"),
    ("conv_init_std", "0.05", "std of off-center convolution weights at init"),
    ("dataset", "checkerboard", "gaussian-blobs | checkerboard | bars | image-folder | uniform | gaussian-iid"),
    ("dataset_size", "512", "number of generated images"),
    ("data_seed", "0", "seed of the dataset generator"),
    ("data_path", "", "directory of PGM/PPM files for image-folder"),
    ("noise_mean", "128", "gaussian-iid pixel mean (8-bit units)"),
    ("noise_std", "16", "gaussian-iid pixel std (8-bit units)"),
    ("epochs", "50", "training epochs"),
    ("batch_size", "64", "minibatch size"),
    ("lr", "0.001", "Adam learning rate"),
    ("clip_norm", "50", "global gradient-norm clip"),
    ("seed", "0", "seed for initialization, shuffling and dequantization"),
    ("eval_seed", "1", "dequantization seed of every evaluation"),
    ("init", "random", "random | identity convolution initialization"),
    ("actnorm_init", "true", "data-dependent actnorm initialization on the first batch"),
    ("checkpoint", "model.ckpt", "checkpoint output path"),
    ("metrics", "metrics.csv", "metrics CSV output path"),
    ("wall_clock", "true", "record wall seconds in the metrics (false writes 0 for reproducible files)"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub data: DatasetSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: Real,
    pub clip_norm: Real,
    pub seed: u64,
    pub eval_seed: u64,
    pub init: InitMode,
    pub actnorm_init: bool,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let data = DatasetSpec {
            height: model.height,
            width: model.width,
            channels: model.channels,
            ..DatasetSpec::default()
        };
        Self {
            model,
            data,
            epochs: 50,
            batch_size: 64,
            lr: 0.001,
            clip_norm: 50.0,
            seed: 0,
            eval_seed: 1,
            init: InitMode::Random,
            actnorm_init: true,
            checkpoint: PathBuf::from("model.ckpt"),
            metrics: PathBuf::from("metrics.csv"),
            wall_clock: true,
        }
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("expected a boolean, got {v:?}")),
    }
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
}

fn named<T: FromStr<Err = Error>>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|e| e.to_string())
}

impl TrainConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value;
        match key {
            "height" => self.model.height = num(v)?,
            "width" => self.model.width = num(v)?,
            "channels" => self.model.channels = num(v)?,
            "levels" => self.model.levels = num(v)?,
            "depth" => self.model.depth = num(v)?,
            "kernel_size" => self.model.kernel_size = num(v)?,
            "variant" => self.model.variant = named::<Variant>(v)?,
            "coupling" => self.model.coupling = named::<CouplingKind>(v)?,
            "permutation" => self.model.permutation = named::<Permutation>(v)?,
            "hidden" => self.model.hidden = num(v)?,
            "scale_bound" => self.model.scale_bound = num(v)?,
            "squeeze" => self.model.squeeze = parse_bool(v)?,
            "conv_init_std" => self.model.conv_init_std = num(v)?,
            "dataset" => self.data.kind = named::<DatasetKind>(v)?,
            "dataset_size" => self.data.size = num(v)?,
            "data_seed" => self.data.seed = num(v)?,
            "data_path" => self.data.path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "noise_mean" => self.data.noise_mean = num(v)?,
            "noise_std" => self.data.noise_std = num(v)?,
            "epochs" => self.epochs = num(v)?,
            "batch_size" => self.batch_size = num(v)?,
            "lr" => self.lr = num(v)?,
            "clip_norm" => self.clip_norm = num(v)?,
            "seed" => self.seed = num(v)?,
            "eval_seed" => self.eval_seed = num(v)?,
            "init" => self.init = named::<InitMode>(v)?,
            "actnorm_init" => self.actnorm_init = parse_bool(v)?,
            "checkpoint" => self.checkpoint = PathBuf::from(v),
            "metrics" => self.metrics = PathBuf::from(v),
            "wall_clock" => self.wall_clock = parse_bool(v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        self.data.height = self.model.height;
        self.data.width = self.model.width;
        self.data.channels = self.model.channels;
        Ok(())
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Config(format!("{}:{}: {msg}", source.display(), n + 1));
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(err(format!("key {k:?} given twice")));
            }
            cfg.set(k, v).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("lr and clip_norm must be positive".into()));
        }
        if !(self.model.scale_bound > 0.0) || self.model.hidden == 0 {
            return Err(Error::Config("scale_bound and hidden must be positive".into()));
        }
        if self.data.kind != DatasetKind::ImageFolder && self.data.size == 0 {
            return Err(Error::Config("dataset_size must be positive".into()));
        }
        crate::flow::FlowModel::new(self.model.clone(), self.init, &mut crate::rng::seeded(0))
            .map(|_| ())
            .map_err(|e| match e {
                Error::Config(m) => Error::Config(m),
                other => Error::Config(other.to_string()),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_defaults_match() {
        let mut cfg = TrainConfig::default();
        for (k, v, _) in KEYS {
            cfg.set(k, v).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
        assert_eq!(cfg, TrainConfig::default());
    }

    #[test]
    fn parses_and_reports_lines() {
        let text = "# tiny run\nepochs = 3\nvariant=block  # trailing\n\ndataset = gaussian-iid\n";
        let cfg = TrainConfig::parse(text, Path::new("t.cfg")).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.model.variant, Variant::BlockTriangular);
        assert_eq!(cfg.data.kind, DatasetKind::GaussianIid);

        let e = TrainConfig::parse("epochs = 3\nbogus = 1\n", Path::new("t.cfg")).unwrap_err();
        assert!(e.to_string().contains("t.cfg:2"), "{e}");
        assert!(TrainConfig::parse("epochs = x", Path::new("t")).is_err());
        assert!(TrainConfig::parse("epochs = 2\nepochs = 3", Path::new("t")).is_err());
        assert!(TrainConfig::parse("height = 6", Path::new("t")).is_err());
    }
}
