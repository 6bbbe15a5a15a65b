//! Line-oriented text checkpoints holding the run configuration, the
//! updater parameters and the representor weights.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use bacf_unroll::tracker::TrackerModel;
use bacf_unroll::{ConvLayerParams, CropOperator, StageParams, UpdaterParams};

use crate::config::RunConfig;
use crate::error::{io_err, HarnessError, Result};

pub const MAGIC: &str = "bacf-unroll checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub updater: UpdaterParams,
    pub layer: Option<ConvLayerParams>,
}

impl Checkpoint {
    /// Untrained parameters for targets of the given size.
    pub fn fresh(config: RunConfig, target_width: f64, target_height: f64) -> Result<Self> {
        config.validate()?;
        let model = TrackerModel::initial(config.tracker.clone(), target_width, target_height, config.stages)?;
        Ok(Self { config, updater: model.updater, layer: model.layer })
    }

    pub fn model(&self) -> TrackerModel {
        TrackerModel { config: self.config.tracker.clone(), updater: self.updater.clone(), layer: self.layer.clone() }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC}\nversion {FORMAT_VERSION}\n");
        for line in self.config.to_text().lines() {
            let _ = writeln!(out, "config {line}");
        }
        let mask = &self.updater.stages[0].mask;
        let full = mask.full_shape(1);
        let crop = mask.crop_shape(1);
        let (top, left) = mask.offset();
        let _ = writeln!(out, "grid {} {}", full.height, full.width);
        let _ = writeln!(out, "crop {} {} {} {}", crop.height, crop.width, top, left);
        let _ = writeln!(out, "stages {}", self.updater.len());
        for (k, s) in self.updater.stages.iter().enumerate() {
            let _ = writeln!(out, "stage {} {} {} {}", k + 1, s.lambda, s.rho, s.eta);
            let _ = writeln!(out, "mask {}", join(s.mask.weights()));
        }
        match &self.layer {
            None => out.push_str("layer none\n"),
            Some(l) => {
                let _ = writeln!(out, "layer {} {} {}", l.kernel_size, l.in_channels, l.out_channels);
                let _ = writeln!(out, "weights {}", join(&l.weights));
                let _ = writeln!(out, "bias {}", join(&l.bias));
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines { inner: text.lines().enumerate() };
        let (_, magic) = lines.next_line()?;
        if magic != MAGIC {
            return Err(HarnessError::Checkpoint("not a checkpoint file".into()));
        }
        let version: u32 = lines.expect("version")?.parse_one()?;
        if version != FORMAT_VERSION {
            return Err(HarnessError::UnknownVersion(version));
        }
        let mut config = RunConfig::default();
        let (grid, line) = loop {
            let (n, line) = lines.next_line()?;
            match line.strip_prefix("config ") {
                Some(kv) => config.apply_text(kv).map_err(|e| fail(n, e.to_string()))?,
                None => break (Fields::new(n, line, "grid")?.parse_all::<usize>(2)?, n),
            }
        };
        config.validate().map_err(|e| fail(line, e.to_string()))?;
        let crop: Vec<usize> = lines.expect("crop")?.parse_all(4)?;
        let geometry = CropOperator::new(grid[0], grid[1], crop[0], crop[1], crop[2], crop[3])?;
        let count: usize = lines.expect("stages")?.parse_one()?;
        let mut stages = Vec::with_capacity(count);
        for k in 0..count {
            let f = lines.expect("stage")?;
            let v: Vec<f64> = f.parse_all(4)?;
            if v[0] != (k + 1) as f64 {
                return Err(fail(f.line, format!("expected stage {}", k + 1)));
            }
            let weights: Vec<f64> = lines.expect("mask")?.parse_all(crop[0] * crop[1])?;
            let mask = geometry.clone().with_weights(weights)?;
            stages.push(StageParams { lambda: v[1], rho: v[2], eta: v[3], mask });
        }
        let updater = UpdaterParams::new(stages)?;
        let f = lines.expect("layer")?;
        let layer = if f.rest == ["none"] {
            None
        } else {
            let dims: Vec<usize> = f.parse_all(3)?;
            let mut l = ConvLayerParams::zeros(dims[0], dims[1], dims[2])?;
            l.weights = lines.expect("weights")?.parse_all(l.weights.len())?;
            l.bias = lines.expect("bias")?.parse_all(l.bias.len())?;
            l.validate()?;
            Some(l)
        };
        lines.expect("end")?;
        Ok(Self { config, updater, layer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path).map_err(io_err(path))?)
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn fail(line: usize, message: String) -> HarnessError {
    HarnessError::Checkpoint(format!("line {line}: {message}"))
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| HarnessError::Checkpoint("unexpected end of file".into()))
    }

    fn expect(&mut self, tag: &str) -> Result<Fields<'a>> {
        let (n, line) = self.next_line()?;
        Fields::new(n, line, tag)
    }
}

struct Fields<'a> {
    line: usize,
    rest: Vec<&'a str>,
}

impl<'a> Fields<'a> {
    fn new(line: usize, text: &'a str, tag: &str) -> Result<Self> {
        let mut parts = text.split_whitespace();
        if parts.next() != Some(tag) {
            return Err(fail(line, format!("expected `{tag}`")));
        }
        Ok(Self { line, rest: parts.collect() })
    }

    fn parse_all<T: std::str::FromStr>(&self, count: usize) -> Result<Vec<T>> {
        if self.rest.len() != count {
            return Err(fail(self.line, format!("expected {count} values, found {}", self.rest.len())));
        }
        self.rest.iter().map(|s| s.parse().map_err(|_| fail(self.line, format!("bad value `{s}`")))).collect()
    }

    fn parse_one<T: std::str::FromStr>(&self) -> Result<T> {
        Ok(self.parse_all(1)?.remove(0))
    }
}
