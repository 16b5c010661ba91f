//! Experiment config files.
//!
//! Grammar: one `key: value` pair per line, `#` starts a comment, blank
//! lines are ignored. Values are JSON scalars or arrays (`0.5`, `true`,
//! `[16, 32]`); anything that does not parse as JSON is taken as a bare
//! string. A document whose first non-blank character is `{` is read as a
//! JSON object with the same flat keys. Omitted keys keep the defaults of
//! the chosen `profile` (desk unless given).

use serde_json::{Map, Value};

use crate::engine::{ExperimentConfig, Profile};
use crate::error::{Error, Result};
use crate::vision::ConvBlock;

/// Flat key to its location in the serialised config.
const KEYS: &[(&str, &[&str])] = &[
    ("variant", &["variant"]),
    ("regime", &["extractor", "regime"]),
    ("unfreeze_epoch", &["extractor", "unfreeze_epoch"]),
    ("embed_dim", &["agents", "embed_dim"]),
    ("hidden_dim", &["agents", "hidden_dim"]),
    ("vocab_size", &["channel", "vocab_size"]),
    ("max_len", &["channel", "max_len"]),
    ("temperature", &["channel", "temperature"]),
    ("eos_id", &["channel", "eos_id"]),
    ("jitter_brightness", &["augment", "jitter", "brightness"]),
    ("jitter_contrast", &["augment", "jitter", "contrast"]),
    ("jitter_saturation", &["augment", "jitter", "saturation"]),
    ("jitter_hue", &["augment", "jitter", "hue"]),
    ("jitter_prob", &["augment", "jitter_prob"]),
    ("grayscale_prob", &["augment", "grayscale_prob"]),
    ("hflip_prob", &["augment", "hflip_prob"]),
    ("noise_variance", &["augment", "noise_variance"]),
    ("lambda_game", &["loss_weights", "lambda_game"]),
    ("lambda_rot", &["loss_weights", "lambda_rot"]),
    ("rotation_tap", &["rotation_tap"]),
    ("rotation_hidden", &["rotation_hidden"]),
    ("batch_size", &["batch_size"]),
    ("epochs", &["epochs"]),
    ("learning_rate", &["optimizer", "learning_rate"]),
    ("seed", &["seed"]),
    ("eval_runs", &["eval_runs"]),
    ("eval_every", &["eval_every"]),
    ("train_size", &["train_size"]),
    ("val_size", &["val_size"]),
    ("record_wall_time", &["record_wall_time"]),
    ("pretrain_epochs", &["contrastive", "epochs"]),
    ("pretrain_batch_size", &["contrastive", "batch_size"]),
    ("pretrain_temperature", &["contrastive", "temperature"]),
    ("pretrain_learning_rate", &["contrastive", "optimizer", "learning_rate"]),
    ("pretrain_projection_hidden", &["contrastive", "projection_hidden"]),
    ("pretrain_projection_dim", &["contrastive", "projection_dim"]),
    ("supervised_epochs", &["supervised", "epochs"]),
    ("supervised_batch_size", &["supervised", "batch_size"]),
    ("supervised_learning_rate", &["supervised", "optimizer", "learning_rate"]),
];

/// Keys handled outside the table.
const SPECIAL: &[&str] = &["profile", "channels"];

/// Every accepted key, in documentation order.
pub fn config_keys() -> Vec<&'static str> {
    SPECIAL.iter().copied().chain(KEYS.iter().map(|(k, _)| *k)).collect()
}

fn scalar(raw: &str) -> Value {
    let raw = raw.trim();
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn pairs(text: &str) -> Result<Vec<(String, Value)>> {
    if text.trim_start().starts_with('{') {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        let Value::Object(map) = v else {
            return Err(Error::config("<document>", "top level must be an object"));
        };
        return Ok(map.into_iter().collect());
    }
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once(':') else {
            return Err(Error::config(
                format!("<line {}>", n + 1),
                "expected `key: value`",
            ));
        };
        out.push((k.trim().to_string(), scalar(v)));
    }
    Ok(out)
}

fn slot<'a>(root: &'a mut Value, path: &[&str]) -> &'a mut Value {
    path.iter().fold(root, |v, p| &mut v[*p])
}

fn same_kind(old: &Value, new: &Value) -> bool {
    match (old, new) {
        (Value::Null, _) => true,
        (_, Value::Null) => false,
        (Value::Number(a), Value::Number(b)) => a.is_f64() || !b.is_f64(),
        (a, b) => std::mem::discriminant(a) == std::mem::discriminant(b),
    }
}

fn describe(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(n) if n.is_f64() => "a float",
        Value::Number(_) => "an integer",
        Value::String(_) => "a string",
        Value::Array(_) => "a list",
        Value::Object(_) => "an object",
    }
}

/// Parse a config document into a validated [`ExperimentConfig`].
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with(text, None)
}

/// As [`parse_config`], with `profile` (when given) replacing the
/// document's own `profile` key.
pub fn parse_config_with(text: &str, profile: Option<Profile>) -> Result<ExperimentConfig> {
    let pairs = pairs(text)?;
    let mut seen = std::collections::BTreeSet::new();
    for (k, _) in &pairs {
        if !seen.insert(k.as_str()) {
            return Err(Error::config(k.clone(), "given more than once"));
        }
    }
    let profile = match (profile, pairs.iter().find(|(k, _)| k == "profile")) {
        (Some(p), _) => p,
        (None, None) => Profile::Desk,
        (None, Some((_, Value::String(s)))) => {
            Profile::parse(s).ok_or_else(|| Error::config("profile", format!("unknown profile `{s}` (desk, paper)")))?
        }
        (None, Some((_, v))) => {
            return Err(Error::config("profile", format!("expected a string, got {}", describe(v))))
        }
    };
    let mut tree = serde_json::to_value(ExperimentConfig::for_profile(profile))?;
    for (key, value) in &pairs {
        match key.as_str() {
            "profile" => {}
            "channels" => {
                let chans: Vec<usize> = serde_json::from_value(value.clone())
                    .map_err(|_| Error::config("channels", "expected a list of positive integers"))?;
                let blocks: Vec<ConvBlock> = chans.iter().map(|&c| ConvBlock::standard(c)).collect();
                let last = chans.last().copied().unwrap_or(0);
                tree["extractor"]["blocks"] = serde_json::to_value(blocks)?;
                tree["extractor"]["feature_dim"] = last.into();
                tree["agents"]["feature_dim"] = last.into();
            }
            _ => {
                let Some((_, path)) = KEYS.iter().find(|(k, _)| k == key) else {
                    return Err(Error::config(key.clone(), "unknown key"));
                };
                let target = slot(&mut tree, path);
                if !same_kind(target, value) {
                    return Err(Error::config(
                        key.clone(),
                        format!("expected {}, got {}", describe(target), describe(value)),
                    ));
                }
                *target = value.clone();
                serde_json::from_value::<ExperimentConfig>(tree.clone())
                    .map_err(|e| Error::config(key.clone(), e.to_string()))?;
            }
        }
    }
    let mut config: ExperimentConfig =
        serde_json::from_value(tree).map_err(|e| Error::config("<document>", e.to_string()))?;
    config.sync_variant_flags();
    config.validate()?;
    Ok(config)
}

/// Render `config` in the line grammar; [`parse_config`] reads it back to an
/// equal value when the extractor uses standard blocks.
pub fn render_config(config: &ExperimentConfig) -> Result<String> {
    let tree = serde_json::to_value(config)?;
    let mut out = String::new();
    let chans: Vec<usize> = config.extractor.blocks.iter().map(|b| b.out_channels).collect();
    out.push_str(&format!("channels: {}\n", serde_json::to_string(&chans)?));
    for (key, path) in KEYS {
        let mut v = &tree;
        for p in *path {
            v = &v[*p];
        }
        out.push_str(&format!("{key}: {v}\n"));
    }
    Ok(out)
}

/// Object form of the flat keys, used as the config echo in summaries.
pub fn flat_config(config: &ExperimentConfig) -> Result<Map<String, Value>> {
    let text = render_config(config)?;
    Ok(pairs(&text)?.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Variant;
    use crate::tasks::RotationTap;
    use crate::vision::Regime;

    #[test]
    fn empty_document_is_desk_profile() {
        let c = parse_config("").unwrap();
        assert_eq!(c, ExperimentConfig::desk());
        assert_eq!((c.batch_size, c.channel.vocab_size, c.epochs), (32, 20, 30));
        let c = parse_config("# nothing\n\n{}".trim_start_matches("# nothing\n\n")).unwrap();
        assert_eq!(c, ExperimentConfig::desk());
    }

    #[test]
    fn multi_task_protocol() {
        let c = parse_config("variant: sender_predicts_rotation\nlambda_rot: 0.5\n").unwrap();
        assert_eq!(c.variant, Variant::SenderPredictsRotation);
        assert_eq!(c.loss_weights.lambda_rot, 0.5);
        assert_eq!(c.loss_weights.lambda_game, 1.0);
        assert_eq!(c.rotation_tap(), Some(RotationTap::SenderHidden));
        assert!(c.augment.noise_enabled && c.augment.rotation_enabled);
    }

    #[test]
    fn errors_name_the_key() {
        let cases = [
            ("batch_size: 1", "batch_size"),
            ("bogus: 3", "bogus"),
            ("epochs: \"ten\"", "epochs"),
            ("epochs: 2.5", "epochs"),
            ("variant: nope", "variant"),
            ("regime: ss_pretrained_frozen", "regime"),
            ("channels: [8, -1]", "channels"),
            ("profile: huge", "profile"),
            ("seed: 1\nseed: 2", "seed"),
        ];
        for (text, key) in cases {
            match parse_config(text) {
                Err(Error::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn json_and_lines_agree() {
        let a = parse_config("profile: paper\nseed: 7\nchannels: [8, 16]\nregime: random_frozen\ntemperature: 1").unwrap();
        let b = parse_config(r#"{"profile": "paper", "seed": 7, "channels": [8, 16], "regime": "random_frozen", "temperature": 1.0}"#)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.batch_size, 128);
        assert_eq!(a.extractor.regime, Regime::RandomFrozen);
        assert_eq!(a.agents.feature_dim, 16);
        let c = parse_config_with("profile: paper\nseed: 7", Some(Profile::Desk)).unwrap();
        assert_eq!((c.batch_size, c.seed), (32, 7));
    }

    #[test]
    fn render_round_trips() {
        let mut c = ExperimentConfig::paper();
        c.variant = Variant::SenderPredictsRotationSimclr;
        c.extractor.regime = Regime::SsPretrainedFinetuned;
        c.rotation_tap = Some(RotationTap::SenderFeatures);
        c.sync_variant_flags();
        let text = render_config(&c).unwrap();
        assert_eq!(parse_config(&text).unwrap(), c);
        assert_eq!(config_keys().len(), KEYS.len() + 2);
    }
}
