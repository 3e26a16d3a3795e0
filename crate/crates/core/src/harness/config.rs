//! Run configuration: a flat `key = value` text file plus `--set` overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{LossWeights, BUFFER_RESOLUTION};
use crate::synth::{BaseKind, GeneratorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Uil,
    Erm,
    UilNoGl,
    UilNoSem,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Uil, Mode::Erm, Mode::UilNoGl, Mode::UilNoSem];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Uil => "uil",
            Mode::Erm => "erm",
            Mode::UilNoGl => "uil_no_gl",
            Mode::UilNoSem => "uil_no_sem",
        }
    }

    pub fn uses_masks(self) -> bool {
        self != Mode::Erm
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| Error::Unknown {
            kind: "mode",
            value: s.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Training JSONL; when absent the data is generated from `generator`.
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub seed: u64,
    pub mode: Mode,
    pub epochs: usize,
    pub warmup: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rho_init: f64,
    pub envs: usize,
    pub resolution: usize,
    pub hidden: usize,
    pub layers: usize,
    pub num_classes: usize,
    /// Test metrics every this many epochs (and always after the last).
    pub eval_every: usize,
    /// Resolution of the evaluation distance tables.
    pub dis_resolution: usize,
    /// Checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: None,
            test: None,
            generator: GeneratorConfig::default(),
            seed: 0,
            mode: Mode::Uil,
            epochs: 100,
            warmup: 5,
            batch_size: 64,
            lr: 1e-3,
            alpha: 0.5,
            beta: 0.5,
            rho_init: 0.5,
            envs: 3,
            resolution: BUFFER_RESOLUTION,
            hidden: 32,
            layers: 3,
            num_classes: 4,
            eval_every: 1,
            dis_resolution: 6,
            checkpoint_every: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for key `{key}`")))
}

fn parse_range(key: &str, value: &str) -> Result<(usize, usize)> {
    let (a, b) = value
        .split_once("..")
        .ok_or_else(|| Error::Config(format!("`{key}` expects MIN..MAX, got `{value}`")))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "train",
        "test",
        "seed",
        "mode",
        "epochs",
        "warmup",
        "batch_size",
        "lr",
        "alpha",
        "beta",
        "rho_init",
        "envs",
        "resolution",
        "hidden",
        "layers",
        "classes",
        "eval_every",
        "dis_resolution",
        "checkpoint_every",
        "gen.mode",
        "gen.seed",
        "gen.bias",
        "gen.p_train",
        "gen.p_test",
        "gen.num_train",
        "gen.num_test",
        "gen.bases",
        "gen.base_size",
        "gen.motifs",
    ];

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let g = &mut self.generator;
        match key {
            "train" => self.train = Some(PathBuf::from(value)),
            "test" => self.test = Some(PathBuf::from(value)),
            "seed" => self.seed = parse(key, value)?,
            "mode" => self.mode = value.parse()?,
            "epochs" => self.epochs = parse(key, value)?,
            "warmup" => self.warmup = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "rho_init" => self.rho_init = parse(key, value)?,
            "envs" => self.envs = parse(key, value)?,
            "resolution" => self.resolution = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "classes" => {
                self.num_classes = parse(key, value)?;
                g.num_classes = self.num_classes;
            }
            "eval_every" => self.eval_every = parse(key, value)?,
            "dis_resolution" => self.dis_resolution = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "gen.mode" => g.mode = value.parse()?,
            "gen.seed" => g.seed = parse(key, value)?,
            "gen.bias" => g.bias = parse(key, value)?,
            "gen.p_train" => g.p_train = parse(key, value)?,
            "gen.p_test" => g.p_test = parse(key, value)?,
            "gen.num_train" => g.num_train = parse(key, value)?,
            "gen.num_test" => g.num_test = parse(key, value)?,
            "gen.bases" => {
                g.base_kinds = value
                    .split(',')
                    .map(|s| s.trim().parse::<BaseKind>())
                    .collect::<Result<_>>()?
            }
            "gen.base_size" => g.base_size = parse_range(key, value)?,
            "gen.motifs" => g.motifs_per_graph = parse_range(key, value)?,
            _ => {
                return Err(Error::Unknown {
                    kind: "config key",
                    value: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn set_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        self.set(k.trim(), v.trim())
    }

    /// Parses the flat text format: one `key = value` per line, `#` comments.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if seen.insert(k.to_string(), n + 1).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
            cfg.set(k, v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::parse_text(&text)?;
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.train, &mut cfg.test].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        for o in overrides {
            cfg.set_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if ![32, 64, 128, 256].contains(&self.batch_size) {
            return bad(format!("batch_size {} not in {{32,64,128,256}}", self.batch_size));
        }
        if ![1e-2, 1e-3, 1e-4].contains(&self.lr) {
            return bad(format!("lr {} not in {{1e-2,1e-3,1e-4}}", self.lr));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.1..=1.5).contains(&v) {
                return bad(format!("{name} {v} outside [0.1,1.5]"));
            }
        }
        if !(0.5..=1.0).contains(&self.rho_init) {
            return bad(format!("rho_init {} outside [0.5,1]", self.rho_init));
        }
        if !(2..=6).contains(&self.envs) {
            return bad(format!("envs {} outside [2,6]", self.envs));
        }
        if self.resolution < 1 || self.dis_resolution < 1 {
            return bad("resolutions must be positive".into());
        }
        if self.hidden == 0 || self.layers == 0 || self.num_classes < 2 {
            return bad("hidden, layers must be positive and classes >= 2".into());
        }
        if self.train.is_none() {
            self.generator.validate()?;
        }
        Ok(())
    }

    /// Loss weights after the mode's forced zeros.
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: if matches!(self.mode, Mode::UilNoGl | Mode::Erm) { 0.0 } else { self.alpha },
            beta: if matches!(self.mode, Mode::UilNoSem | Mode::Erm) { 0.0 } else { self.beta },
        }
    }

    /// Renders every key in the flat format; parses back to `self`.
    pub fn to_text(&self) -> String {
        let g = &self.generator;
        let mut out = String::new();
        let mut put = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        if let Some(p) = &self.train {
            put("train", p.display().to_string());
        }
        if let Some(p) = &self.test {
            put("test", p.display().to_string());
        }
        put("seed", self.seed.to_string());
        put("mode", self.mode.to_string());
        put("epochs", self.epochs.to_string());
        put("warmup", self.warmup.to_string());
        put("batch_size", self.batch_size.to_string());
        put("lr", self.lr.to_string());
        put("alpha", self.alpha.to_string());
        put("beta", self.beta.to_string());
        put("rho_init", self.rho_init.to_string());
        put("envs", self.envs.to_string());
        put("resolution", self.resolution.to_string());
        put("hidden", self.hidden.to_string());
        put("layers", self.layers.to_string());
        put("classes", self.num_classes.to_string());
        put("eval_every", self.eval_every.to_string());
        put("dis_resolution", self.dis_resolution.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("gen.mode", g.mode.to_string());
        put("gen.seed", g.seed.to_string());
        put("gen.bias", g.bias.to_string());
        put("gen.p_train", g.p_train.to_string());
        put("gen.p_test", g.p_test.to_string());
        put("gen.num_train", g.num_train.to_string());
        put("gen.num_test", g.num_test.to_string());
        put(
            "gen.bases",
            g.base_kinds.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(","),
        );
        put("gen.base_size", format!("{}..{}", g.base_size.0, g.base_size.1));
        put("gen.motifs", format!("{}..{}", g.motifs_per_graph.0, g.motifs_per_graph.1));
        out
    }
}
