//! Line-based key=value training configuration.
//!
//! Relative paths are resolved against the directory of the config file,
//! so a run is reproducible from any working directory. The identity blob
//! (and its digest) covers only the keys that define the optimization
//! trajectory; `epochs` and the paths stay out so a run can be resumed for
//! more epochs or from a different directory without a digest mismatch.

use crate::{Error, Result};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Dsvdd,
    Aae,
    AaeDsvdd,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Dsvdd => "dsvdd",
            ModelKind::Aae => "aae",
            ModelKind::AaeDsvdd => "aae_dsvdd",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        match s {
            "dsvdd" => Some(ModelKind::Dsvdd),
            "aae" => Some(ModelKind::Aae),
            "aae_dsvdd" => Some(ModelKind::AaeDsvdd),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ModelKind::Dsvdd => 0,
            ModelKind::Aae => 1,
            ModelKind::AaeDsvdd => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<ModelKind> {
        match c {
            0 => Some(ModelKind::Dsvdd),
            1 => Some(ModelKind::Aae),
            2 => Some(ModelKind::AaeDsvdd),
            _ => None,
        }
    }

    /// Whether this kind maintains a hypersphere (C, R).
    pub fn uses_sphere(self) -> bool {
        !matches!(self, ModelKind::Aae)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub latent_dim: usize,
    pub nu_svdd: f32,
    pub nu_prior: f32,
    pub w_rec: f32,
    pub w_adv: f32,
    pub w_svdd: f32,
    pub weight_decay: f32,
    pub seed: u64,
    pub train_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub log_path: Option<PathBuf>,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("key {key}: cannot parse {v:?}")))
}

impl TrainConfig {
    /// Parses config text. `base` anchors relative paths (the config file's
    /// directory); pass the working directory for in-memory configs.
    pub fn parse(text: &str, base: &Path) -> Result<TrainConfig> {
        let mut seen: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if seen.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!("duplicate key {key}")));
            }
        }

        let mut take = |k: &str| seen.remove(k);
        let model_raw = take("model")
            .ok_or_else(|| Error::Config("missing required key model".into()))?;
        let model = ModelKind::parse(&model_raw)
            .ok_or_else(|| Error::Config(format!("unknown model {model_raw:?}")))?;
        let train_raw = take("train_path")
            .ok_or_else(|| Error::Config("missing required key train_path".into()))?;
        let ckpt_raw = take("checkpoint_path")
            .ok_or_else(|| Error::Config("missing required key checkpoint_path".into()))?;

        let cfg = TrainConfig {
            model,
            epochs: match take("epochs") {
                Some(v) => parse_num("epochs", &v)?,
                None => 30,
            },
            batch_size: match take("batch_size") {
                Some(v) => parse_num("batch_size", &v)?,
                None => 128,
            },
            learning_rate: match take("learning_rate") {
                Some(v) => parse_num("learning_rate", &v)?,
                None => 1e-4,
            },
            latent_dim: match take("latent_dim") {
                Some(v) => parse_num("latent_dim", &v)?,
                None => 32,
            },
            nu_svdd: match take("nu_svdd") {
                Some(v) => parse_num("nu_svdd", &v)?,
                None => 0.1,
            },
            nu_prior: match take("nu_prior") {
                Some(v) => parse_num("nu_prior", &v)?,
                None => 1.0,
            },
            w_rec: match take("w_rec") {
                Some(v) => parse_num("w_rec", &v)?,
                None => 1.0,
            },
            w_adv: match take("w_adv") {
                Some(v) => parse_num("w_adv", &v)?,
                None => 1.0,
            },
            w_svdd: match take("w_svdd") {
                Some(v) => parse_num("w_svdd", &v)?,
                None => 1.0,
            },
            weight_decay: match take("weight_decay") {
                Some(v) => parse_num("weight_decay", &v)?,
                None => 1e-6,
            },
            seed: match take("seed") {
                Some(v) => parse_num("seed", &v)?,
                None => 0,
            },
            train_path: base.join(train_raw),
            checkpoint_path: base.join(ckpt_raw),
            log_path: take("log_path").map(|v| base.join(v)),
        };

        if let Some((key, _)) = seen.into_iter().next() {
            return Err(Error::Config(format!("unknown key {key}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        TrainConfig::parse(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.latent_dim < 1 {
            return bad("latent_dim must be >= 1".into());
        }
        if !(self.nu_svdd > 0.0 && self.nu_svdd <= 1.0) {
            return bad(format!("nu_svdd must be in (0, 1], got {}", self.nu_svdd));
        }
        if !(self.nu_prior > 0.0 && self.nu_prior.is_finite()) {
            return bad(format!("nu_prior must be positive, got {}", self.nu_prior));
        }
        for (name, v) in [
            ("w_rec", self.w_rec),
            ("w_adv", self.w_adv),
            ("w_svdd", self.w_svdd),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }

    /// Canonical blob of the trajectory-defining keys, sorted by key.
    /// Epochs and paths are deliberately absent; see module docs.
    pub fn identity_blob(&self) -> String {
        let mut lines = vec![
            format!("batch_size={}", self.batch_size),
            format!("latent_dim={}", self.latent_dim),
            format!("learning_rate={}", self.learning_rate),
            format!("model={}", self.model.as_str()),
            format!("nu_prior={}", self.nu_prior),
            format!("nu_svdd={}", self.nu_svdd),
            format!("seed={}", self.seed),
            format!("w_adv={}", self.w_adv),
            format!("w_rec={}", self.w_rec),
            format!("w_svdd={}", self.w_svdd),
            format!("weight_decay={}", self.weight_decay),
        ];
        lines.sort();
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }

    pub fn identity_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.identity_blob().as_bytes());
        h.finalize().into()
    }

    /// Parses just the value of `key` out of an identity blob.
    pub fn blob_value(blob: &str, key: &str) -> Option<String> {
        blob.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "model=dsvdd\ntrain_path=t.wmd\ncheckpoint_path=c.wmck\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = TrainConfig::parse(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!(c.model, ModelKind::Dsvdd);
        assert_eq!(c.epochs, 30);
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.latent_dim, 32);
        assert_eq!(c.nu_svdd, 0.1);
        assert_eq!(c.nu_prior, 1.0);
        assert_eq!(c.weight_decay, 1e-6);
        assert_eq!(c.train_path, Path::new("/base/t.wmd"));
        assert!(c.log_path.is_none());
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        let bad = format!("{MINIMAL}frobnicate=1\n");
        assert!(matches!(
            TrainConfig::parse(&bad, Path::new(".")),
            Err(Error::Config(m)) if m.contains("frobnicate")
        ));
        let dup = format!("{MINIMAL}epochs=2\nepochs=3\n");
        assert!(TrainConfig::parse(&dup, Path::new(".")).is_err());
    }

    #[test]
    fn invariants_enforced() {
        for (k, v) in [
            ("epochs", "0"),
            ("nu_svdd", "0"),
            ("nu_svdd", "1.5"),
            ("nu_prior", "-1"),
            ("w_rec", "-0.5"),
            ("learning_rate", "0"),
        ] {
            let text = format!("{MINIMAL}{k}={v}\n");
            assert!(TrainConfig::parse(&text, Path::new(".")).is_err(), "{k}={v}");
        }
    }

    #[test]
    fn comments_blanks_and_spacing_accepted() {
        let text = "# a comment\n\n  model = aae \n train_path=a\ncheckpoint_path=b\n";
        let c = TrainConfig::parse(text, Path::new(".")).unwrap();
        assert_eq!(c.model, ModelKind::Aae);
    }

    #[test]
    fn digest_ignores_epochs_and_paths() {
        let a = TrainConfig::parse(MINIMAL, Path::new("/x")).unwrap();
        let b_text = format!("{MINIMAL}epochs=7\n").replace("t.wmd", "other.wmd");
        let b = TrainConfig::parse(&b_text, Path::new("/y")).unwrap();
        assert_eq!(a.identity_digest(), b.identity_digest());

        let c_text = format!("{MINIMAL}seed=9\n");
        let c = TrainConfig::parse(&c_text, Path::new("/x")).unwrap();
        assert_ne!(a.identity_digest(), c.identity_digest());
    }

    #[test]
    fn blob_value_roundtrip() {
        let text = format!("{MINIMAL}w_svdd=0.25\n");
        let c = TrainConfig::parse(&text, Path::new(".")).unwrap();
        let blob = c.identity_blob();
        assert_eq!(TrainConfig::blob_value(&blob, "w_svdd").unwrap(), "0.25");
        assert_eq!(TrainConfig::blob_value(&blob, "model").unwrap(), "dsvdd");
        assert!(TrainConfig::blob_value(&blob, "epochs").is_none());
    }
}
