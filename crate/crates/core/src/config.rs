// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration: `key = value` text merged from profile defaults, an
//! optional file, and command-line overrides, with a stable content hash.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{GlpError, Result};
use crate::experiments::{Profile, Sizes};

/// Every recognized key. Anything else is rejected.
pub const KEYS: &[&str] = &[
    "profile",
    "seed",
    "vocab",
    "corpus_docs",
    "doc_len",
    "heldout_docs",
    "lm_steps",
    "glp_blocks",
    "glp_steps",
    "batch",
    "lr",
    "sae_steps",
    "samples",
    "sample_steps",
    "t_start",
    "num_steps",
    "pca_k",
    "probe_t",
    "probe_k",
    "probe_train",
    "probe_val",
    "probe_test",
    "steer_prefixes",
    "steer_prefix_len",
    "steer_new_tokens",
    "steer_coefficients",
    "bootstrap_resamples",
    "layer_id",
    "ema_half_life",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn defaults(profile: Profile) -> Vec<(&'static str, String)> {
    let s = Sizes::of(profile);
    let coefs = s.steer_coefficients.iter().map(|c| format!("{c:?}")).collect::<Vec<_>>().join(",");
    vec![
        ("profile", if profile == Profile::Desk { "desk" } else { "smoke" }.into()),
        ("seed", "0".into()),
        ("vocab", s.vocab.to_string()),
        ("corpus_docs", s.corpus_docs.to_string()),
        ("doc_len", s.doc_len.to_string()),
        ("heldout_docs", s.heldout_docs.to_string()),
        ("lm_steps", s.lm_steps.to_string()),
        ("glp_blocks", s.glp_blocks.to_string()),
        ("glp_steps", s.glp_steps.to_string()),
        ("batch", s.batch.to_string()),
        ("lr", "0.001".into()),
        ("sae_steps", s.sae_steps.to_string()),
        ("samples", s.convergence_samples.to_string()),
        ("sample_steps", "20".into()),
        ("t_start", "0.5".into()),
        ("num_steps", "20".into()),
        ("pca_k", "2".into()),
        ("probe_t", "0.1".into()),
        ("probe_k", "512".into()),
        ("probe_train", s.probe_sizes.0.to_string()),
        ("probe_val", s.probe_sizes.1.to_string()),
        ("probe_test", s.probe_sizes.2.to_string()),
        ("steer_prefixes", s.steer_prefixes.to_string()),
        ("steer_prefix_len", s.steer_prefix_len.to_string()),
        ("steer_new_tokens", s.steer_new_tokens.to_string()),
        ("steer_coefficients", coefs),
        ("bootstrap_resamples", s.bootstrap_resamples.to_string()),
        ("layer_id", "0".into()),
        ("ema_half_life", "50".into()),
    ]
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| GlpError::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(GlpError::Config(format!("line {}: empty key or value", i + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn check_key(k: &str) -> Result<()> {
    if KEYS.contains(&k) {
        Ok(())
    } else {
        Err(GlpError::Config(format!("unknown config key {k:?}")))
    }
}

impl RunConfig {
    /// Defaults for the chosen profile, then `file` entries, then
    /// `overrides`. The profile itself is taken from the highest layer that
    /// sets it.
    pub fn resolve(file: &[(String, String)], overrides: &[(String, String)]) -> Result<Self> {
        for (k, _) in file.iter().chain(overrides) {
            check_key(k)?;
        }
        // Later entries win, overrides before the file.
        let profile = overrides
            .iter()
            .rev()
            .chain(file.iter().rev())
            .find(|(k, _)| k == "profile")
            .map_or(Ok(Profile::Desk), |(_, v)| v.parse())?;
        let mut values: BTreeMap<String, String> =
            defaults(profile).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        for (k, v) in file.iter().chain(overrides) {
            values.insert(k.clone(), v.clone());
        }
        let cfg = Self { values };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| GlpError::io(p, e))?;
                parse_config_text(&text)?
            }
            None => Vec::new(),
        };
        Self::resolve(&file, overrides)
    }

    fn validate(&self) -> Result<()> {
        for k in KEYS {
            match *k {
                "profile" => {
                    self.profile()?;
                }
                "steer_coefficients" => {
                    self.f64_list(k)?;
                }
                "lr" | "t_start" | "probe_t" | "ema_half_life" => {
                    self.f64(k)?;
                }
                _ => {
                    self.u64(k)?;
                }
            }
        }
        for k in ["t_start", "probe_t"] {
            if !(0.0..=1.0).contains(&self.f64(k)?) {
                return Err(GlpError::Config(format!("{k} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| GlpError::Config(format!("missing key {key:?}")))
    }

    pub fn profile(&self) -> Result<Profile> {
        self.raw("profile")?.parse()
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        let v = self.raw(key)?;
        v.parse()
            .map_err(|_| GlpError::Config(format!("{key} = {v:?} is not a non-negative integer")))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        Ok(self.u64(key)? as usize)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v = self.raw(key)?;
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(GlpError::Config(format!("{key} = {v:?} is not a finite number"))),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.raw(key)?;
        v.split(',')
            .map(|s| match s.trim().parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(GlpError::Config(format!("{key} = {v:?} is not a list of numbers"))),
            })
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.u64("seed")
    }

    /// Profile sizes with every configured size field applied.
    pub fn sizes(&self) -> Result<Sizes> {
        let mut s = Sizes::of(self.profile()?);
        s.vocab = self.usize("vocab")?;
        s.corpus_docs = self.usize("corpus_docs")?;
        s.doc_len = self.usize("doc_len")?;
        s.heldout_docs = self.usize("heldout_docs")?;
        s.lm_steps = self.usize("lm_steps")?;
        s.glp_blocks = self.usize("glp_blocks")?;
        s.glp_steps = self.usize("glp_steps")?;
        s.batch = self.usize("batch")?;
        s.sae_steps = self.usize("sae_steps")?;
        s.probe_sizes = (self.usize("probe_train")?, self.usize("probe_val")?, self.usize("probe_test")?);
        s.steer_prefixes = self.usize("steer_prefixes")?;
        s.steer_prefix_len = self.usize("steer_prefix_len")?;
        s.steer_new_tokens = self.usize("steer_new_tokens")?;
        s.steer_coefficients = self.f64_list("steer_coefficients")?;
        s.bootstrap_resamples = self.usize("bootstrap_resamples")?;
        Ok(s)
    }

    /// Sorted `key = value` lines.
    pub fn canonical_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// The text written as `config.resolved`; parses back to the same
    /// config.
    pub fn resolved_text(&self) -> String {
        format!("# config hash {}\n{}", self.hash(), self.canonical_text())
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.resolved");
        std::fs::write(&path, self.resolved_text()).map_err(|e| GlpError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn layers_merge_in_order() {
        let file = parse_config_text("# comment\nseed = 3\nbatch = 32  # trailing\n\nprofile = smoke\n").unwrap();
        let cfg = RunConfig::resolve(&file, &[kv("seed", "9")]).unwrap();
        assert_eq!(cfg.seed().unwrap(), 9);
        assert_eq!(cfg.usize("batch").unwrap(), 32);
        assert_eq!(cfg.profile().unwrap(), Profile::Smoke);
        assert_eq!(cfg.usize("glp_steps").unwrap(), Sizes::of(Profile::Smoke).glp_steps);
    }

    #[test]
    fn unknown_and_malformed_rejected() {
        assert!(RunConfig::resolve(&[kv("nope", "1")], &[]).is_err());
        assert!(RunConfig::resolve(&[], &[kv("seed", "-1")]).is_err());
        assert!(RunConfig::resolve(&[], &[kv("t_start", "1.5")]).is_err());
        assert!(parse_config_text("seed 3").is_err());
    }

    #[test]
    fn resolved_text_roundtrips_and_hash_is_stable() {
        let cfg = RunConfig::resolve(&[], &[kv("profile", "smoke"), kv("seed", "4")]).unwrap();
        let back = RunConfig::resolve(&parse_config_text(&cfg.resolved_text()).unwrap(), &[]).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let other = RunConfig::resolve(&[], &[kv("profile", "smoke"), kv("seed", "5")]).unwrap();
        assert_ne!(other.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 16);
    }
}
