//! Plain-text `key = value` run configuration.
//!
//! Resolution order: built-in defaults, then the preset (which fixes the loss
//! weights and update schedule), then keys from the config file, then
//! command-line overrides. Blank lines and `#` comments are ignored; unknown
//! keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::features::FeatureConfig;
use crate::net::{ModelKind, NetConfig};
use crate::trainer::{Preset, TrainConfig};
use crate::{Error, Result};

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("preset", "fashion", "fashion | volleyball | custom; sets alpha, beta, gamma, g_steps, d_steps"),
    ("seed", "0", "parameter-initialization and batch-order seed"),
    ("resolution", "64", "image side length; must match the dataset"),
    ("model", "adaptive", "adaptive (Ada-R) | concat (baseline)"),
    ("geometry", "default", "default | compact; channel widths before per-list overrides"),
    ("encoder_channels", "64,128,256,256", "stride-2 encoder widths; last is the bottleneck C"),
    ("kernel_size", "3", "adaptive filter size k (odd)"),
    ("fcn_channels", "32,64,128,128,32", "appearance FCN block widths"),
    ("disc_channels", "64,128,256", "discriminator block widths"),
    ("batch_size", "16", "pairs per update"),
    ("cycles", "2000", "training cycles (one cycle = g_steps + d_steps updates)"),
    ("learning_rate", "0.001", "Adam step size"),
    ("alpha", "100", "L1 weight"),
    ("beta", "0.0001", "content-loss weight"),
    ("gamma", "1e-14", "style-loss weight"),
    ("g_steps", "3", "generator updates per cycle"),
    ("d_steps", "1", "discriminator updates per cycle"),
    ("grad_clip", "10", "global gradient-norm bound per parameter set, or `off`"),
    ("feature_channels", "32,64,64,128,128", "widths of the random fixed feature extractor"),
    ("feature_seed", "1592651789", "seed of the random fixed feature extractor"),
    ("feature_file", "", "load extractor weights from this file instead"),
    ("sample_every", "100", "write a sample grid every N cycles (0 = never)"),
    ("checkpoint_every", "100", "write a checkpoint every N cycles (0 = only at the end)"),
];

fn is_known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

/// Parses `key = value` lines. Duplicate keys keep the last value.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub sample_every: usize,
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::resolve(&[]).expect("defaults are valid")
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

fn list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|p| parse(key, p.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies `pairs` (file entries followed by overrides) on top of the
    /// defaults.
    pub fn resolve(pairs: &[(String, String)]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, v) in pairs {
            if !is_known(k) {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
            map.insert(k.as_str(), v.as_str());
        }
        let get = |k: &str| map.get(k).copied();

        let preset: Preset = get("preset").map(str::parse).transpose()?.unwrap_or(Preset::Fashion);
        let mut t = TrainConfig::preset(preset);
        if let Some(v) = get("seed") {
            t.seed = parse("seed", v)?;
        }
        if let Some(v) = get("resolution") {
            t.resolution = parse("resolution", v)?;
        }
        t.net = match get("geometry").unwrap_or("default") {
            "default" => NetConfig::for_resolution(t.resolution),
            "compact" => NetConfig::compact(t.resolution),
            other => return Err(Error::Config(format!("geometry: unknown value `{other}` (default|compact)"))),
        };
        if let Some(v) = get("model") {
            t.model = parse::<ModelKind>("model", v)?;
        }
        if let Some(v) = get("encoder_channels") {
            t.net.encoder_channels = list("encoder_channels", v)?;
        }
        if let Some(v) = get("kernel_size") {
            t.net.kernel_size = parse("kernel_size", v)?;
        }
        if let Some(v) = get("fcn_channels") {
            t.net.fcn_channels = list("fcn_channels", v)?;
        }
        if let Some(v) = get("disc_channels") {
            t.net.disc_channels = list("disc_channels", v)?;
        }
        if let Some(v) = get("batch_size") {
            t.batch_size = parse("batch_size", v)?;
        }
        if let Some(v) = get("cycles") {
            t.total_cycles = parse("cycles", v)?;
        }
        if let Some(v) = get("learning_rate") {
            t.learning_rate = parse("learning_rate", v)?;
        }
        if let Some(v) = get("alpha") {
            t.loss_weights.alpha = parse("alpha", v)?;
        }
        if let Some(v) = get("beta") {
            t.loss_weights.beta = parse("beta", v)?;
        }
        if let Some(v) = get("gamma") {
            t.loss_weights.gamma = parse("gamma", v)?;
        }
        if let Some(v) = get("g_steps") {
            t.g_steps_per_cycle = parse("g_steps", v)?;
        }
        if let Some(v) = get("d_steps") {
            t.d_steps_per_cycle = parse("d_steps", v)?;
        }
        if let Some(v) = get("grad_clip") {
            t.grad_clip = match v {
                "off" | "none" => None,
                v => Some(parse("grad_clip", v)?),
            };
        }
        let mut features = FeatureConfig::default();
        if let Some(v) = get("feature_channels") {
            features.channels = list("feature_channels", v)?;
        }
        if let Some(v) = get("feature_seed") {
            features.seed = parse("feature_seed", v)?;
        }
        if let Some(v) = get("feature_file") {
            features.file = (!v.is_empty()).then(|| PathBuf::from(v));
        }
        t.features = features;
        t.validate()?;
        let sample_every = get("sample_every").map(|v| parse("sample_every", v)).transpose()?.unwrap_or(100);
        let checkpoint_every = get("checkpoint_every")
            .map(|v| parse("checkpoint_every", v))
            .transpose()?
            .unwrap_or(100);
        Ok(RunConfig {
            train: t,
            sample_every,
            checkpoint_every,
        })
    }

    /// Reads `path` (if any) and applies `overrides` after it.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = match path {
            Some(p) => parse_pairs(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
            None => Vec::new(),
        };
        pairs.extend(overrides.iter().cloned());
        Self::resolve(&pairs)
    }

    /// Every key with its effective value, in [`KEYS`] order. Parsing this
    /// text back yields the same configuration.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let w = t.loss_weights;
        let preset = match t.preset {
            Preset::Fashion => "fashion",
            Preset::Volleyball => "volleyball",
            Preset::Custom => "custom",
        };
        let model = match t.model {
            ModelKind::Adaptive => "adaptive",
            ModelKind::Concat => "concat",
        };
        let values: Vec<(&str, String)> = vec![
            ("preset", preset.into()),
            ("seed", t.seed.to_string()),
            ("resolution", t.resolution.to_string()),
            ("model", model.into()),
            ("geometry", "default".into()),
            ("encoder_channels", join(&t.net.encoder_channels)),
            ("kernel_size", t.net.kernel_size.to_string()),
            ("fcn_channels", join(&t.net.fcn_channels)),
            ("disc_channels", join(&t.net.disc_channels)),
            ("batch_size", t.batch_size.to_string()),
            ("cycles", t.total_cycles.to_string()),
            ("learning_rate", format!("{:?}", t.learning_rate)),
            ("alpha", format!("{:?}", w.alpha)),
            ("beta", format!("{:?}", w.beta)),
            ("gamma", format!("{:?}", w.gamma)),
            ("g_steps", t.g_steps_per_cycle.to_string()),
            ("d_steps", t.d_steps_per_cycle.to_string()),
            ("grad_clip", t.grad_clip.map_or("off".into(), |c| format!("{c:?}"))),
            ("feature_channels", join(&t.features.channels)),
            ("feature_seed", t.features.seed.to_string()),
            (
                "feature_file",
                t.features.file.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            ("sample_every", self.sample_every.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ];
        values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// The key table with defaults, for `--help` style output.
    pub fn schema() -> String {
        KEYS.iter().map(|(k, d, doc)| format!("{k:<18} {d:<20} {doc}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_match_schema_table() {
        let text = RunConfig::default().to_text();
        for (k, d, _) in KEYS {
            let line = text.lines().find(|l| l.starts_with(&format!("{k} ="))).unwrap();
            let v = line.split_once('=').unwrap().1.trim();
            let same = v == *d || v.parse::<f64>().ok().zip(d.parse::<f64>().ok()).is_some_and(|(a, b)| a == b);
            assert!(same, "{k}: {v} vs {d}");
        }
    }

    #[test]
    fn presets_and_overrides() {
        let c = RunConfig::resolve(&pairs(&[("preset", "volleyball")])).unwrap();
        assert_eq!((c.train.g_steps_per_cycle, c.train.d_steps_per_cycle), (2, 1));
        assert_eq!(c.train.loss_weights.gamma, 1e-12);
        let c = RunConfig::resolve(&pairs(&[("preset", "volleyball"), ("gamma", "0")])).unwrap();
        assert_eq!(c.train.loss_weights.gamma, 0.0);
        assert_eq!(c.train.loss_weights.beta, 0.1);
    }

    #[test]
    fn text_round_trips() {
        let c = RunConfig::resolve(&pairs(&[
            ("geometry", "compact"),
            ("grad_clip", "off"),
            ("model", "concat"),
            ("learning_rate", "0.0003"),
        ]))
        .unwrap();
        let back = RunConfig::resolve(&parse_pairs(&c.to_text()).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(RunConfig::resolve(&pairs(&[("alpah", "1")])), Err(Error::Config(m)) if m.contains("alpah")));
        assert!(RunConfig::resolve(&pairs(&[("batch_size", "x")])).is_err());
        assert!(parse_pairs("just words").is_err());
        assert_eq!(parse_pairs("# c\n\n a = 1 # tail\n").unwrap(), pairs(&[("a", "1")]));
    }
}
