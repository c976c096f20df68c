//! Flat key=value run configuration: defaults, then config-file values,
//! then flag overrides. The fully resolved map is echoed into every output
//! artifact.

use anyhow::{bail, Context, Result};
use narkit::nnet::ModelConfig;
use narkit::trainer::TrainConfig;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct Settings {
    map: BTreeMap<String, String>,
}

impl Settings {
    pub fn from_defaults() -> Self {
        let mut s = Settings::default();
        let mc = ModelConfig::default();
        s.put("d_model", mc.d_model);
        s.put("n_heads", mc.n_heads);
        s.put("encoder_layers", mc.encoder_layers);
        s.put("decoder_layers", mc.decoder_layers);
        s.put("decoder_split", mc.decoder_split);
        s.put("conv_kernel", mc.conv_kernel);
        s.put("max_repair_length", mc.max_repair_length);
        s.put("confidence_threshold", mc.confidence_threshold);
        s.put("alpha", mc.alpha);
        s.put("lambda", mc.lambda);
        s.put("max_seq_len", mc.max_seq_len);
        s.put("dropout", mc.dropout);
        let tc = TrainConfig::default();
        s.put("batch_size", tc.batch_size);
        s.put("epochs", tc.epochs);
        s.put("peak_lr", tc.peak_lr);
        s.put("warmup_frac", tc.warmup_frac);
        s.put("seed", tc.seed);
        s.put("validation_fraction", tc.validation_fraction);
        s.put("clip_norm", tc.clip_norm);
        s.put("min_freq", 1);
        s
    }

    pub fn put(&mut self, key: &str, value: impl Display) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn put_opt(&mut self, key: &str, value: Option<impl Display>) {
        if let Some(v) = value {
            self.put(key, v);
        }
    }

    /// Merges `key=value` lines; `#` starts a comment.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected key=value", path.display(), lineno + 1);
            };
            self.map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.map.get(key).with_context(|| format!("missing setting {key}"))?;
        raw.parse().map_err(|e| anyhow::anyhow!("setting {key}={raw}: {e}"))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let config = ModelConfig {
            d_model: self.parse("d_model")?,
            n_heads: self.parse("n_heads")?,
            encoder_layers: self.parse("encoder_layers")?,
            decoder_layers: self.parse("decoder_layers")?,
            decoder_split: self.parse("decoder_split")?,
            conv_kernel: self.parse("conv_kernel")?,
            max_repair_length: self.parse("max_repair_length")?,
            confidence_threshold: self.parse("confidence_threshold")?,
            alpha: self.parse("alpha")?,
            lambda: self.parse("lambda")?,
            max_seq_len: self.parse("max_seq_len")?,
            dropout: self.parse("dropout")?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            batch_size: self.parse("batch_size")?,
            epochs: self.parse("epochs")?,
            peak_lr: self.parse("peak_lr")?,
            warmup_frac: self.parse("warmup_frac")?,
            seed: self.parse("seed")?,
            validation_fraction: self.parse("validation_fraction")?,
            clip_norm: self.parse("clip_norm")?,
            stop_at_val_exact: match self.map.get("stop_at_val_exact") {
                Some(v) => Some(v.parse().map_err(|e| anyhow::anyhow!("stop_at_val_exact: {e}"))?),
                None => None,
            },
        })
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.parse(key)
    }

    /// Sorted `key=value` lines; the echo format written into artifacts.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn as_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.map
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect(),
        )
    }
}
