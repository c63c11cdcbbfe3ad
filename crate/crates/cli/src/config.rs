//! Layered run configuration: built-in defaults, then an optional TOML file,
//! then command-line flags. Keys are flat dotted names (`predictor.epochs`);
//! in the file they may be written dotted or as `[section]` tables.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde_json::json;
use skl_core::eval::RolloutConfig;
use skl_core::expert::runner::IkParamsConfig;
use skl_core::expert::ExpertParams;
use skl_core::learner::{AeTrainConfig, PredictorTrainConfig};
use skl_core::perception::PerceptionParams;
use skl_core::sim::scene::Variant;
use toml::Value;

use crate::UsageError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Flag => "flag",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub value: Value,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, Entry>,
}

fn defaults() -> Vec<(&'static str, Value)> {
    let e = ExpertParams::for_variant(Variant::Long);
    let p = PerceptionParams::default();
    let ae = AeTrainConfig::default();
    let pr = PredictorTrainConfig::default();
    vec![
        ("jobs", Value::Integer(1)),
        ("scene.variant", Value::String("short".into())),
        ("scene.depth_noise", Value::Float(0.002)),
        ("collect.episodes", Value::Integer(10)),
        ("collect.seed", Value::Integer(0)),
        ("perception.voxel_leaf", Value::Float(p.leaf)),
        ("perception.sor_k", Value::Integer(p.k_neighbors as i64)),
        ("perception.sor_alpha", Value::Float(p.alpha)),
        ("perception.color_threshold", Value::Float(p.color_threshold)),
        ("expert.ik_tol", Value::Float(e.ik.tol)),
        ("expert.ik_max_iter", Value::Integer(e.ik.max_iter as i64)),
        ("expert.ik_damping", Value::Float(e.ik.damping)),
        ("expert.lookahead", Value::Float(e.lookahead)),
        ("expert.goal_tol", Value::Float(e.goal_tol)),
        ("expert.standoff", Value::Float(e.standoff)),
        ("expert.pregrasp_offset", Value::Float(e.pregrasp_offset)),
        ("expert.lift_height", Value::Float(e.lift_height)),
        ("expert.marker_noise", Value::Float(e.marker_noise)),
        ("expert.approach_jitter_long", Value::Float(e.approach_jitter.unwrap_or(0.0))),
        ("expert.approach_jitter_short", Value::Float(0.0)),
        ("autoencoder.epochs", Value::Integer(ae.epochs as i64)),
        ("autoencoder.lr", Value::Float(ae.lr)),
        ("autoencoder.batch_size", Value::Integer(ae.batch_size as i64)),
        ("autoencoder.frames_per_episode", Value::Integer(ae.frames_per_episode as i64)),
        ("autoencoder.clip", Value::Float(ae.clip)),
        ("autoencoder.seed", Value::Integer(ae.seed as i64)),
        ("autoencoder.downscale", Value::Integer(2)),
        ("predictor.epochs", Value::Integer(pr.epochs as i64)),
        ("predictor.lr", Value::Float(pr.lr)),
        ("predictor.tbptt", Value::Integer(pr.tbptt as i64)),
        ("predictor.clip", Value::Float(pr.clip)),
        ("predictor.hidden", Value::Integer(pr.hidden as i64)),
        ("predictor.seed", Value::Integer(pr.seed as i64)),
        ("predictor.fine_tune_encoders", Value::Boolean(pr.fine_tune_encoders)),
        ("eval.max_steps", Value::Integer(RolloutConfig::default().max_steps as i64)),
    ]
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

/// Coerces `v` to the type of `like`; integers are accepted for floats.
fn coerce(key: &str, like: &Value, v: Value) -> Result<Value, UsageError> {
    match (like, v) {
        (Value::Integer(_), Value::Integer(i)) => Ok(Value::Integer(i)),
        (Value::Float(_), Value::Float(f)) => Ok(Value::Float(f)),
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Value::Boolean(_), Value::Boolean(b)) => Ok(Value::Boolean(b)),
        (Value::String(_), Value::String(s)) => Ok(Value::String(s)),
        (like, v) => Err(UsageError(format!(
            "config key {key}: expected {}, got {}",
            like.type_str(),
            v.type_str()
        ))),
    }
}

fn parse_flag(key: &str, like: &Value, raw: &str) -> Result<Value, UsageError> {
    let bad = || UsageError(format!("config key {key}: cannot parse {raw:?} as {}", like.type_str()));
    Ok(match like {
        Value::Integer(_) => Value::Integer(raw.parse().map_err(|_| bad())?),
        Value::Float(_) => Value::Float(raw.parse().map_err(|_| bad())?),
        Value::Boolean(_) => Value::Boolean(raw.parse().map_err(|_| bad())?),
        _ => Value::String(raw.to_string()),
    })
}

impl RunConfig {
    pub fn defaults() -> Self {
        RunConfig {
            entries: defaults()
                .into_iter()
                .map(|(k, v)| {
                    (
                        k.to_string(),
                        Entry {
                            value: v,
                            source: Source::Default,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Defaults, overlaid by `file` (if any), overlaid by `flags`.
    pub fn resolve(file: Option<&Path>, flags: &[(String, String)]) -> anyhow::Result<Self> {
        let mut cfg = Self::defaults();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)
                .map_err(|e| UsageError(format!("{}: {}", path.display(), e.0)))?;
        }
        for (k, v) in flags {
            cfg.set_flag(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), UsageError> {
        let table: toml::Table = text.parse().map_err(|e| UsageError(format!("invalid config: {e}")))?;
        let mut flat = Vec::new();
        flatten("", &table, &mut flat);
        for (k, v) in flat {
            let like = &self.lookup(&k)?.value;
            let value = coerce(&k, like, v)?;
            self.entries.insert(k, Entry { value, source: Source::File });
        }
        Ok(())
    }

    pub fn set_flag(&mut self, key: &str, raw: &str) -> Result<(), UsageError> {
        let like = &self.lookup(key)?.value;
        let value = parse_flag(key, like, raw)?;
        self.entries.insert(key.to_string(), Entry { value, source: Source::Flag });
        Ok(())
    }

    fn lookup(&self, key: &str) -> Result<&Entry, UsageError> {
        self.entries
            .get(key)
            .ok_or_else(|| UsageError(format!("unknown config key {key:?}")))
    }

    pub fn entry(&self, key: &str) -> &Entry {
        self.entries.get(key).unwrap_or_else(|| panic!("config key {key} is not defined"))
    }

    pub fn int(&self, key: &str) -> i64 {
        self.entry(key).value.as_integer().expect("integer key")
    }

    pub fn usize(&self, key: &str) -> usize {
        self.int(key) as usize
    }

    pub fn u64(&self, key: &str) -> u64 {
        self.int(key) as u64
    }

    pub fn float(&self, key: &str) -> f64 {
        self.entry(key).value.as_float().expect("float key")
    }

    pub fn bool(&self, key: &str) -> bool {
        self.entry(key).value.as_bool().expect("bool key")
    }

    pub fn str(&self, key: &str) -> &str {
        self.entry(key).value.as_str().expect("string key")
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        for (k, e) in &self.entries {
            let bad = match &e.value {
                Value::Integer(i) => *i < 0 || (*i == 0 && !k.ends_with(".seed") && k != "collect.seed"),
                Value::Float(f) => !f.is_finite() || *f < 0.0,
                _ => false,
            };
            if bad {
                return Err(UsageError(format!("config key {k}: invalid value {}", e.value)));
            }
        }
        self.variant()?;
        Ok(())
    }

    pub fn variant(&self) -> Result<Variant, UsageError> {
        self.str("scene.variant").parse().map_err(|_| {
            UsageError(format!(
                "invalid variant {:?} (expected long or short)",
                self.str("scene.variant")
            ))
        })
    }

    pub fn perception(&self) -> PerceptionParams {
        PerceptionParams {
            leaf: self.float("perception.voxel_leaf"),
            k_neighbors: self.usize("perception.sor_k"),
            alpha: self.float("perception.sor_alpha"),
            color_threshold: self.float("perception.color_threshold"),
        }
    }

    pub fn expert(&self, variant: Variant) -> ExpertParams {
        let jitter = match variant {
            Variant::Long => self.float("expert.approach_jitter_long"),
            Variant::Short => self.float("expert.approach_jitter_short"),
        };
        ExpertParams {
            perception: self.perception(),
            ik: IkParamsConfig {
                tol: self.float("expert.ik_tol"),
                max_iter: self.usize("expert.ik_max_iter"),
                damping: self.float("expert.ik_damping"),
            },
            lookahead: self.float("expert.lookahead"),
            goal_tol: self.float("expert.goal_tol"),
            standoff: self.float("expert.standoff"),
            pregrasp_offset: self.float("expert.pregrasp_offset"),
            lift_height: self.float("expert.lift_height"),
            marker_noise: self.float("expert.marker_noise"),
            approach_jitter: (jitter > 0.0).then_some(jitter),
            ..ExpertParams::for_variant(variant)
        }
    }

    pub fn autoencoder(&self) -> AeTrainConfig {
        AeTrainConfig {
            epochs: self.usize("autoencoder.epochs"),
            lr: self.float("autoencoder.lr"),
            batch_size: self.usize("autoencoder.batch_size"),
            frames_per_episode: self.usize("autoencoder.frames_per_episode"),
            clip: self.float("autoencoder.clip"),
            seed: self.u64("autoencoder.seed"),
        }
    }

    pub fn predictor(&self) -> PredictorTrainConfig {
        PredictorTrainConfig {
            epochs: self.usize("predictor.epochs"),
            lr: self.float("predictor.lr"),
            tbptt: self.usize("predictor.tbptt"),
            clip: self.float("predictor.clip"),
            hidden: self.usize("predictor.hidden"),
            seed: self.u64("predictor.seed"),
            fine_tune_encoders: self.bool("predictor.fine_tune_encoders"),
        }
    }

    pub fn rollout(&self) -> RolloutConfig {
        RolloutConfig {
            max_steps: self.usize("eval.max_steps"),
        }
    }

    /// `{key: {"value": v, "source": s}}` for manifests.
    pub fn to_json(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        for (k, e) in &self.entries {
            let v = match &e.value {
                Value::Integer(i) => json!(i),
                Value::Float(f) => json!(f),
                Value::Boolean(b) => json!(b),
                Value::String(s) => json!(s),
                other => json!(other.to_string()),
            };
            m.insert(k.clone(), json!({"value": v, "source": e.source.to_string()}));
        }
        serde_json::Value::Object(m)
    }

    pub fn keys(&self) -> impl Iterator<Item = (&String, &Entry)> {
        self.entries.iter()
    }
}
