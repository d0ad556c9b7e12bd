//! `key = value` configuration files for `nsr train`.

use std::collections::BTreeMap;
use std::path::Path;

use nsr_core::consistency::LossKind;
use nsr_core::trainer::TrainConfig;

/// Parsed `key = value` pairs. Blank lines and `#` comments are skipped and
/// values may be wrapped in double quotes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
            let key = k.trim().replace('-', "_");
            let value = v.trim().trim_matches('"').to_string();
            if key.is_empty() {
                return Err(format!("line {}: empty key", i + 1));
            }
            entries.insert(key, value);
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| format!("{key}: cannot parse '{value}': {e}"))
}

/// Loss selection; `None` is the color-only baseline.
pub fn parse_loss(value: &str) -> Result<Option<LossKind>, String> {
    if value == "none" {
        Ok(None)
    } else {
        value.parse().map(Some)
    }
}

/// Named starting configuration.
pub fn preset(name: &str) -> Result<TrainConfig, String> {
    match name {
        "desk" => Ok(TrainConfig::desk()),
        "paper" | "full" => Ok(TrainConfig::paper()),
        other => Err(format!("unknown preset '{other}' (expected desk or paper)")),
    }
}

/// Applies one setting to `cfg`. Unknown keys are errors.
pub fn apply(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<(), String> {
    match key {
        "preset" => {}
        "steps" => cfg.steps = parse(key, value)?,
        "warmup_steps" => cfg.warmup_steps = parse(key, value)?,
        "rays" | "rays_per_batch" => cfg.rays_per_batch = parse(key, value)?,
        "eikonal_points" => cfg.eikonal_points = parse(key, value)?,
        "samples_coarse" => cfg.samples.coarse = parse(key, value)?,
        "samples_fine" => cfg.samples.fine = parse(key, value)?,
        "lambda1" => cfg.lambda1 = parse(key, value)?,
        "lambda2" => cfg.lambda2 = parse(key, value)?,
        "lr_peak" => cfg.lr_peak = parse(key, value)?,
        "lr_final" => cfg.lr_final = parse(key, value)?,
        "beta1" => cfg.beta1 = parse(key, value)?,
        "beta2" => cfg.beta2 = parse(key, value)?,
        "adam_eps" => cfg.adam_eps = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        "checkpoint_every" => cfg.checkpoint_every = parse(key, value)?,
        "loss" => match parse_loss(value)? {
            Some(kind) => cfg.consistency.loss_kind = kind,
            None => cfg.lambda2 = 0.0,
        },
        "patch" | "patch_size" => cfg.consistency.patch_size = parse(key, value)?,
        "topk" | "top_k" => cfg.consistency.top_k = parse(key, value)?,
        "candidates" | "n_candidates" => cfg.consistency.n_candidates = parse(key, value)?,
        "min_view_cos" => cfg.consistency.min_view_cos = parse(key, value)?,
        "c1" => cfg.consistency.c1 = parse(key, value)?,
        "c2" => cfg.consistency.c2 = parse(key, value)?,
        "eps_var" => cfg.consistency.eps_var = parse(key, value)?,
        other => return Err(format!("unknown config key '{other}'")),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_quotes_and_dashes() {
        let f = ConfigFile::parse("# run\nsteps = 10\nloss=\"patch-ssim\"  # trailing\n\nlr-peak = 1e-3\n").unwrap();
        assert_eq!(f.get("steps"), Some("10"));
        assert_eq!(f.get("loss"), Some("patch-ssim"));
        assert_eq!(f.get("lr_peak"), Some("1e-3"));
        assert!(ConfigFile::parse("steps 10").is_err());
    }

    #[test]
    fn applies_known_keys() {
        let mut c = TrainConfig::desk();
        apply(&mut c, "topk", "3").unwrap();
        apply(&mut c, "loss", "pixel-sim").unwrap();
        assert_eq!(c.consistency.top_k, 3);
        assert_eq!(c.consistency.loss_kind, LossKind::PixelSim);
        apply(&mut c, "loss", "none").unwrap();
        assert_eq!(c.lambda2, 0.0);
        assert!(apply(&mut c, "bogus", "1").is_err());
        assert!(apply(&mut c, "steps", "many").is_err());
    }
}
