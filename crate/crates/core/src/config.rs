//! Flat `key = value` configuration text, shared by training config files
//! and checkpoint sidecars (which use `key: value`).

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::{SrnConfig, Variant};
use crate::train::TrainConfig;

pub const MODEL_KEYS: [&str; 5] = [
    "variant",
    "n_scales",
    "num_resblocks",
    "kernel_size",
    "base_channels",
];
pub const TRAIN_KEYS: [&str; 8] = [
    "batch",
    "patch",
    "epochs",
    "lr0",
    "lr_end",
    "power",
    "clip_norm",
    "seed",
];

/// Parses one `key <sep> value` pair per line. Blank lines and lines
/// starting with `#` are skipped; repeated keys are errors.
pub fn parse_pairs(text: &str, sep: char) -> Result<IndexMap<String, String>> {
    let mut out = IndexMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once(sep)
            .ok_or_else(|| Error::Config(format!("line {}: expected `key {sep} value`", i + 1)))?;
        let key = k.trim().to_string();
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!(
                "line {}: duplicate key `{key}`",
                i + 1
            )));
        }
    }
    Ok(out)
}

fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

/// Builds both configs from parsed pairs. Keys listed in `extra` are left
/// for the caller; any other unknown key is an error. Missing keys take the
/// full-scale defaults.
pub fn configs_from_pairs(
    pairs: &IndexMap<String, String>,
    extra: &[&str],
) -> Result<(SrnConfig, TrainConfig)> {
    for key in pairs.keys() {
        let k = key.as_str();
        if !MODEL_KEYS.contains(&k) && !TRAIN_KEYS.contains(&k) && !extra.contains(&k) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
    }
    let variant: Variant = match pairs.get("variant") {
        Some(v) => v.parse()?,
        None => Variant::SrEdrb(3),
    };
    let mut model = SrnConfig::new(variant);
    let mut train = TrainConfig::default();
    for (key, value) in pairs {
        match key.as_str() {
            "n_scales" => model.n_scales = parse_value(key, value)?,
            "num_resblocks" => model.num_resblocks = parse_value(key, value)?,
            "kernel_size" => model.kernel_size = parse_value(key, value)?,
            "base_channels" => model.base_channels = parse_value(key, value)?,
            "batch" => train.batch = parse_value(key, value)?,
            "patch" => train.patch = parse_value(key, value)?,
            "epochs" => train.epochs = parse_value(key, value)?,
            "lr0" => train.lr0 = parse_value(key, value)?,
            "lr_end" => train.lr_end = parse_value(key, value)?,
            "power" => train.power = parse_value(key, value)?,
            "clip_norm" => train.clip_norm = parse_value(key, value)?,
            "seed" => train.seed = parse_value(key, value)?,
            _ => {}
        }
    }
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}

pub fn parse_config(text: &str) -> Result<(SrnConfig, TrainConfig)> {
    configs_from_pairs(&parse_pairs(text, '=')?, &[])
}

/// Every key of both configs, in the canonical order.
pub fn config_pairs(model: &SrnConfig, train: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("variant", model.variant.to_string()),
        ("n_scales", model.n_scales.to_string()),
        ("num_resblocks", model.num_resblocks.to_string()),
        ("kernel_size", model.kernel_size.to_string()),
        ("base_channels", model.base_channels.to_string()),
        ("batch", train.batch.to_string()),
        ("patch", train.patch.to_string()),
        ("epochs", train.epochs.to_string()),
        ("lr0", train.lr0.to_string()),
        ("lr_end", train.lr_end.to_string()),
        ("power", train.power.to_string()),
        ("clip_norm", train.clip_norm.to_string()),
        ("seed", train.seed.to_string()),
    ]
}

pub fn format_config(model: &SrnConfig, train: &TrainConfig) -> String {
    config_pairs(model, train)
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}
