//! Flat `key = value` configuration. Every tunable has a key; unknown keys
//! are errors. `#` starts a comment.

use std::fmt::Write as _;
use std::str::FromStr;

use bacf_unroll::trainer::{ParamScaling, SgdConfig};
use bacf_unroll::{FeatureRecipe, TrackerConfig};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tracker: TrackerConfig,
    /// Number of unrolled stages K.
    pub stages: usize,
    pub stagewise: SgdConfig,
    /// Joint finetuning is skipped when `joint.epochs == 0`.
    pub joint: SgdConfig,
    /// Training crop center jitter, in target sizes per axis.
    pub train_jitter: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let stagewise = SgdConfig {
            batch_size: 8,
            epochs: 6,
            initial_rate: 0.05,
            final_rate: 0.005,
            scaling: ParamScaling::default(),
            seed: 0,
        };
        let joint = SgdConfig { epochs: 0, initial_rate: 0.01, final_rate: 0.001, ..stagewise.clone() };
        Self { tracker: TrackerConfig::default(), stages: 2, stagewise, joint, train_jitter: 0.25 }
    }
}

pub const KEYS: &[&str] = &[
    "grid_size",
    "cell_size",
    "padding",
    "features",
    "learnable",
    "kernel_size",
    "out_channels",
    "window_features",
    "window_response",
    "subcell_refine",
    "scales",
    "scale_penalty",
    "label_sigma",
    "init_iterations",
    "init_tolerance",
    "stages",
    "seed",
    "batch_size",
    "epochs",
    "initial_rate",
    "final_rate",
    "lr_scale_lambda",
    "lr_scale_rho",
    "lr_scale_eta",
    "lr_scale_mask",
    "lr_scale_layer",
    "joint_batch_size",
    "joint_epochs",
    "joint_initial_rate",
    "joint_final_rate",
    "train_jitter",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| HarnessError::Config { key: key.to_string(), message: format!("`{value}`: {e}") })
}

fn recipe_name(r: FeatureRecipe) -> &'static str {
    match r {
        FeatureRecipe::Gray => "gray",
        FeatureRecipe::GrayGradients => "gray+gradients",
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.tracker;
        match key {
            "grid_size" => t.grid_size = parse(key, value)?,
            "cell_size" => t.features.cell_size = parse(key, value)?,
            "padding" => t.padding = parse(key, value)?,
            "features" => {
                t.features.recipe = match value {
                    "gray" => FeatureRecipe::Gray,
                    "gray+gradients" => FeatureRecipe::GrayGradients,
                    _ => {
                        return Err(HarnessError::Config {
                            key: key.into(),
                            message: format!("`{value}` is not one of gray, gray+gradients"),
                        });
                    }
                }
            }
            "learnable" => t.features.learnable = parse(key, value)?,
            "kernel_size" => t.features.kernel_size = parse(key, value)?,
            "out_channels" => t.features.out_channels = parse(key, value)?,
            "window_features" => t.features.window_features = parse(key, value)?,
            "window_response" => t.window_response = parse(key, value)?,
            "subcell_refine" => t.subcell_refine = parse(key, value)?,
            "scales" => t.scales = value.split(',').map(|s| parse(key, s.trim())).collect::<Result<_>>()?,
            "scale_penalty" => t.scale_penalty = parse(key, value)?,
            "label_sigma" => t.label_sigma = if value == "auto" { None } else { Some(parse(key, value)?) },
            "init_iterations" => t.init_iterations = parse(key, value)?,
            "init_tolerance" => t.init_tolerance = parse(key, value)?,
            "stages" => self.stages = parse(key, value)?,
            "seed" => {
                self.stagewise.seed = parse(key, value)?;
                self.joint.seed = self.stagewise.seed;
            }
            "batch_size" => self.stagewise.batch_size = parse(key, value)?,
            "epochs" => self.stagewise.epochs = parse(key, value)?,
            "initial_rate" => self.stagewise.initial_rate = parse(key, value)?,
            "final_rate" => self.stagewise.final_rate = parse(key, value)?,
            "lr_scale_lambda" => self.set_scaling(|s| &mut s.lambda, key, value)?,
            "lr_scale_rho" => self.set_scaling(|s| &mut s.rho, key, value)?,
            "lr_scale_eta" => self.set_scaling(|s| &mut s.eta, key, value)?,
            "lr_scale_mask" => self.set_scaling(|s| &mut s.mask, key, value)?,
            "lr_scale_layer" => self.set_scaling(|s| &mut s.layer, key, value)?,
            "joint_batch_size" => self.joint.batch_size = parse(key, value)?,
            "joint_epochs" => self.joint.epochs = parse(key, value)?,
            "joint_initial_rate" => self.joint.initial_rate = parse(key, value)?,
            "joint_final_rate" => self.joint.final_rate = parse(key, value)?,
            "train_jitter" => self.train_jitter = parse(key, value)?,
            _ => return Err(HarnessError::Config { key: key.into(), message: "unknown key".into() }),
        }
        Ok(())
    }

    fn set_scaling(&mut self, slot: fn(&mut ParamScaling) -> &mut f64, key: &str, value: &str) -> Result<()> {
        let v: f64 = parse(key, value)?;
        *slot(&mut self.stagewise.scaling) = v;
        *slot(&mut self.joint.scaling) = v;
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.tracker;
        let s = &self.stagewise;
        Some(match key {
            "grid_size" => t.grid_size.to_string(),
            "cell_size" => t.features.cell_size.to_string(),
            "padding" => t.padding.to_string(),
            "features" => recipe_name(t.features.recipe).to_string(),
            "learnable" => t.features.learnable.to_string(),
            "kernel_size" => t.features.kernel_size.to_string(),
            "out_channels" => t.features.out_channels.to_string(),
            "window_features" => t.features.window_features.to_string(),
            "window_response" => t.window_response.to_string(),
            "subcell_refine" => t.subcell_refine.to_string(),
            "scales" => t.scales.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
            "scale_penalty" => t.scale_penalty.to_string(),
            "label_sigma" => t.label_sigma.map_or_else(|| "auto".to_string(), |v| v.to_string()),
            "init_iterations" => t.init_iterations.to_string(),
            "init_tolerance" => t.init_tolerance.to_string(),
            "stages" => self.stages.to_string(),
            "seed" => s.seed.to_string(),
            "batch_size" => s.batch_size.to_string(),
            "epochs" => s.epochs.to_string(),
            "initial_rate" => s.initial_rate.to_string(),
            "final_rate" => s.final_rate.to_string(),
            "lr_scale_lambda" => s.scaling.lambda.to_string(),
            "lr_scale_rho" => s.scaling.rho.to_string(),
            "lr_scale_eta" => s.scaling.eta.to_string(),
            "lr_scale_mask" => s.scaling.mask.to_string(),
            "lr_scale_layer" => s.scaling.layer.to_string(),
            "joint_batch_size" => self.joint.batch_size.to_string(),
            "joint_epochs" => self.joint.epochs.to_string(),
            "joint_initial_rate" => self.joint.initial_rate.to_string(),
            "joint_final_rate" => self.joint.final_rate.to_string(),
            "train_jitter" => self.train_jitter.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| HarnessError::Parse {
                path: "<config>".into(),
                line: i + 1,
                message: "expected key = value".into(),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Applies a `key=value` override such as a `--set` flag.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| HarnessError::Config { key: pair.into(), message: "expected key=value".into() })?;
        self.set(k.trim(), v)
    }

    /// Every key, one per line; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.tracker.validate()?;
        if self.stages == 0 {
            return Err(HarnessError::Config { key: "stages".into(), message: "must be at least 1".into() });
        }
        self.stagewise.validate()?;
        if !(self.train_jitter >= 0.0 && self.train_jitter.is_finite()) {
            return Err(HarnessError::Config { key: "train_jitter".into(), message: "must be finite and non-negative".into() });
        }
        if self.joint.epochs > 0 {
            self.joint.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("label_sigma", "1.25").unwrap();
        c.set("features", "gray").unwrap();
        c.set("scales", "0.95, 1, 1.05").unwrap();
        c.set("lr_scale_mask", "0.5").unwrap();
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
        assert_eq!(RunConfig::from_text(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
    }

    #[test]
    fn every_key_is_readable() {
        let c = RunConfig::default();
        for key in KEYS {
            assert!(c.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn bad_input() {
        assert!(RunConfig::from_text("no_such_key = 1").is_err());
        assert!(RunConfig::from_text("grid_size = many").is_err());
        assert!(matches!(RunConfig::from_text("# c\n\ngrid_size 3"), Err(HarnessError::Parse { line: 3, .. })));
        assert!(RunConfig::from_text("stages = 0").is_err());
    }
}
