//! Run configuration: sectioned `key = value` files plus flag overrides.
//!
//! Precedence, lowest first: built-in defaults, the named preset, the config
//! file, command-line flags. Every command writes the fully resolved
//! configuration next to its outputs; feeding that file back reproduces the run.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use framepred::data::{BimodalParams, BouncingParams, DataSource, DatasetSpec, DEFAULT_TAU};
use framepred::eval::DEFAULT_MOTION_THRESHOLD;
use framepred::kv::KvDoc;
use framepred::losses::LossWeights;
use framepred::model::ModelSpec;
use framepred::training::{LrSchedule, TrainConfig};
use framepred::{Error, Result};

pub const DEFAULT_MODEL: &str = "desk-4to1";
pub const DEFAULT_TRAIN_PRESET: &str = "l2";

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub preset: Option<String>,
}

pub fn read_doc(path: Option<&Path>) -> Result<KvDoc> {
    match path {
        None => Ok(KvDoc::new()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            KvDoc::parse(&text)
        }
    }
}

pub fn check_sections(doc: &KvDoc, allowed: &[&str]) -> Result<()> {
    for name in doc.section_names() {
        if !allowed.contains(&name) {
            let shown = if name.is_empty() { "(top level)" } else { name };
            return Err(Error::Config(format!(
                "unexpected section [{shown}] (this command reads {})",
                allowed
                    .iter()
                    .map(|s| format!("[{s}]"))
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
    }
    Ok(())
}

/// Reads keys of one section, recording every resolved value in `out`.
struct Section<'a> {
    doc: &'a KvDoc,
    out: &'a mut KvDoc,
    name: &'static str,
}

impl<'a> Section<'a> {
    fn new(doc: &'a KvDoc, out: &'a mut KvDoc, name: &'static str, keys: &[&str]) -> Result<Self> {
        doc.check_keys(name, keys)?;
        Ok(Self { doc, out, name })
    }

    fn get<V: FromStr + Display>(&mut self, key: &str, default: V) -> Result<V> {
        let v = self.doc.parse_or(self.name, key, default)?;
        self.out.set(self.name, key, &v);
        Ok(v)
    }

    fn opt<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        self.doc.parse_opt(self.name, key)
    }

    fn set(&mut self, key: &str, value: impl Display) {
        self.out.set(self.name, key, value);
    }
}

/// `[run] seed`, overridden by `--seed`.
pub fn resolve_seed(doc: &KvDoc, flags: &Overrides, out: &mut KvDoc) -> Result<u64> {
    let mut s = Section::new(doc, out, "run", &["seed"])?;
    let seed = match flags.seed {
        Some(v) => v,
        None => s.opt("seed")?.unwrap_or(0),
    };
    s.set("seed", seed);
    Ok(seed)
}

/// The `[model]` section: a preset (default `desk-4to1`) with optional
/// per-field overrides. The resolved form lists every field explicitly.
pub fn resolve_model(doc: &KvDoc, out: &mut KvDoc) -> Result<ModelSpec> {
    let mut d = doc.clone();
    if d.get("model", "preset").is_none() && d.get("model", "frames_in").is_none() {
        d.set("model", "preset", DEFAULT_MODEL);
    }
    let spec = ModelSpec::from_kv(&d, "model")?;
    spec.write_kv(out, "model");
    Ok(spec)
}

const TRAIN_KEYS: &[&str] = &[
    "preset",
    "lambda_adv",
    "lambda_lp",
    "lambda_gdl",
    "p",
    "alpha",
    "adversarial",
    "rho_g",
    "rho_g_final",
    "rho_d",
    "batch",
    "steps",
    "log_every",
    "checkpoint_every",
];

#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub config: TrainConfig,
    /// Save a checkpoint every this many steps (0: only the first and last).
    pub checkpoint_every: u64,
}

pub fn resolve_train(
    doc: &KvDoc,
    flags: &Overrides,
    seed: u64,
    out: &mut KvDoc,
) -> Result<TrainSettings> {
    let mut s = Section::new(doc, out, "train", TRAIN_KEYS)?;
    let preset = match &flags.preset {
        Some(p) => p.clone(),
        None => s
            .opt("preset")?
            .unwrap_or_else(|| DEFAULT_TRAIN_PRESET.to_string()),
    };
    let base = TrainConfig::preset(&preset)?;
    s.set("preset", &preset);
    let weights = LossWeights {
        lambda_adv: s.get("lambda_adv", base.weights.lambda_adv)?,
        lambda_lp: s.get("lambda_lp", base.weights.lambda_lp)?,
        lambda_gdl: s.get("lambda_gdl", base.weights.lambda_gdl)?,
        p: s.get("p", base.weights.p)?,
        alpha: s.get("alpha", base.weights.alpha)?,
    };
    let adversarial = s.get("adversarial", base.adversarial)?;
    let initial = s.get("rho_g", base.rho_g.initial)?;
    let final_rate = s.get("rho_g_final", base.rho_g.final_rate)?;
    let config = TrainConfig {
        weights,
        adversarial,
        rho_g: LrSchedule {
            initial,
            final_rate,
            ..base.rho_g
        },
        rho_d: s.get("rho_d", base.rho_d)?,
        batch: s.get("batch", base.batch)?,
        steps: s.get("steps", 1000u64)?,
        seed,
        log_every: s.get("log_every", 100u64)?,
    };
    let checkpoint_every = s.get("checkpoint_every", 1000u64)?;
    config.validate()?;
    Ok(TrainSettings {
        config,
        checkpoint_every,
    })
}

const DATA_KEYS: &[&str] = &[
    "source",
    "path",
    "clips",
    "patch",
    "tau",
    "seed",
    "max_retries",
    "bouncing.width",
    "bouncing.height",
    "bouncing.frames",
    "bouncing.shapes",
    "bouncing.size_min",
    "bouncing.size_max",
    "bouncing.speed_min",
    "bouncing.speed_max",
    "bouncing.background",
    "bouncing.color_min",
    "bouncing.color_max",
    "bimodal.canvas",
    "bimodal.dot",
    "bimodal.speed",
    "bimodal.frames_in",
    "bimodal.jitter",
    "bimodal.background",
    "bimodal.foreground",
];

/// Frame layout the data section must produce.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub frames_in: usize,
    pub frames_out: usize,
    pub channels: usize,
    /// Patch side used when the config gives none.
    pub patch: usize,
    pub clips: usize,
}

fn bouncing_params(s: &mut Section, channels: usize) -> Result<BouncingParams> {
    let d = BouncingParams::default();
    Ok(BouncingParams {
        width: s.get("bouncing.width", d.width)?,
        height: s.get("bouncing.height", d.height)?,
        frames: s.get("bouncing.frames", d.frames)?,
        shapes: s.get("bouncing.shapes", d.shapes)?,
        size_min: s.get("bouncing.size_min", d.size_min)?,
        size_max: s.get("bouncing.size_max", d.size_max)?,
        speed_min: s.get("bouncing.speed_min", d.speed_min)?,
        speed_max: s.get("bouncing.speed_max", d.speed_max)?,
        background: s.get("bouncing.background", d.background)?,
        color_min: s.get("bouncing.color_min", d.color_min)?,
        color_max: s.get("bouncing.color_max", d.color_max)?,
        channels,
    })
}

fn bimodal_params(s: &mut Section, frames_in: usize) -> Result<BimodalParams> {
    let d = BimodalParams::default();
    Ok(BimodalParams {
        canvas: s.get("bimodal.canvas", d.canvas)?,
        dot: s.get("bimodal.dot", d.dot)?,
        speed: s.get("bimodal.speed", d.speed)?,
        frames_in: s.get("bimodal.frames_in", frames_in)?,
        jitter: s.get("bimodal.jitter", d.jitter)?,
        background: s.get("bimodal.background", d.background)?,
        foreground: s.get("bimodal.foreground", d.foreground)?,
    })
}

/// The `[data]` section. `source` is `bouncing` (default), `bimodal` or
/// `dir` (with `path`). Only the keys of the chosen source are resolved.
pub fn resolve_data(
    doc: &KvDoc,
    seed: u64,
    layout: Layout,
    out: &mut KvDoc,
) -> Result<(DatasetSpec, usize)> {
    let mut s = Section::new(doc, out, "data", DATA_KEYS)?;
    let kind: String = s.get("source", "bouncing".to_string())?;
    let clips = s.get("clips", layout.clips)?;
    let source = match kind.as_str() {
        "bouncing" => DataSource::Bouncing {
            params: bouncing_params(&mut s, layout.channels)?,
            clips,
        },
        "bimodal" => DataSource::Bimodal(bimodal_params(&mut s, layout.frames_in)?),
        "dir" => {
            let path: String = s
                .opt("path")?
                .ok_or_else(|| Error::Config("[data] source = dir needs `path`".into()))?;
            s.set("path", &path);
            DataSource::Directory(PathBuf::from(path))
        }
        other => {
            return Err(Error::Config(format!(
                "[data] unknown source `{other}` (expected bouncing, bimodal or dir)"
            )))
        }
    };
    let spec = DatasetSpec {
        source,
        patch: s.get("patch", layout.patch)?,
        tau: s.get("tau", DEFAULT_TAU)?,
        seed: s.get("seed", seed)?,
        max_retries: s.get("max_retries", framepred::data::DEFAULT_MAX_RETRIES)?,
        channels: layout.channels,
        frames_in: layout.frames_in,
        frames_out: layout.frames_out,
    };
    Ok((spec, clips))
}

#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub threshold: f64,
    pub steps: usize,
    pub samples_per_clip: usize,
    /// Clips whose masked frames are exported as images.
    pub export: usize,
}

pub fn resolve_eval(doc: &KvDoc, out: &mut KvDoc) -> Result<EvalSettings> {
    let mut s = Section::new(
        doc,
        out,
        "eval",
        &["threshold", "steps", "samples_per_clip", "export"],
    )?;
    let e = EvalSettings {
        threshold: s.get("threshold", DEFAULT_MOTION_THRESHOLD)?,
        steps: s.get("steps", 2usize)?,
        samples_per_clip: s.get("samples_per_clip", 1usize)?,
        export: s.get("export", 4usize)?,
    };
    if e.steps == 0 || e.samples_per_clip == 0 {
        return Err(Error::Config(
            "[eval] steps and samples_per_clip must be positive".into(),
        ));
    }
    if e.threshold.is_nan() || e.threshold < 0.0 {
        return Err(Error::Config("[eval] threshold must be >= 0".into()));
    }
    Ok(e)
}

#[derive(Debug, Clone)]
pub struct PredictSettings {
    pub input: PathBuf,
    /// Index of the first input frame within the clip.
    pub start: usize,
    pub steps: usize,
}

pub fn resolve_predict(doc: &KvDoc, out: &mut KvDoc) -> Result<PredictSettings> {
    let mut s = Section::new(doc, out, "predict", &["input", "start", "steps"])?;
    let input: String = s
        .opt("input")?
        .ok_or_else(|| Error::Config("[predict] needs `input`, a clip directory".into()))?;
    s.set("input", &input);
    let p = PredictSettings {
        input: PathBuf::from(input),
        start: s.get("start", 0usize)?,
        steps: s.get("steps", 2usize)?,
    };
    if p.steps == 0 {
        return Err(Error::Config("[predict] steps must be positive".into()));
    }
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct SynthSettings {
    pub kind: String,
    pub clips: usize,
    pub channels: usize,
}

/// `[synth]`: `kind` (`bouncing` or `bimodal`, or `--preset`), `clips`,
/// `channels`. Generator parameters come from `[data]`.
pub fn resolve_synth(doc: &KvDoc, flags: &Overrides, out: &mut KvDoc) -> Result<SynthSettings> {
    let mut s = Section::new(doc, out, "synth", &["kind", "clips", "channels"])?;
    let kind = match &flags.preset {
        Some(p) => p.clone(),
        None => s.opt("kind")?.unwrap_or_else(|| "bouncing".to_string()),
    };
    if kind != "bouncing" && kind != "bimodal" {
        return Err(Error::Config(format!(
            "unknown synthetic dataset `{kind}` (expected bouncing or bimodal)"
        )));
    }
    s.set("kind", &kind);
    let settings = SynthSettings {
        kind,
        clips: s.get("clips", 16usize)?,
        channels: s.get("channels", 1usize)?,
    };
    if settings.clips == 0 {
        return Err(Error::Config("[synth] clips must be positive".into()));
    }
    Ok(settings)
}

/// Synthetic generator parameters from `[data]` for `cmd_synth`.
pub fn resolve_synth_params(
    doc: &KvDoc,
    synth: &SynthSettings,
    out: &mut KvDoc,
) -> Result<DataSource> {
    let mut s = Section::new(doc, out, "data", DATA_KEYS)?;
    if let Some(src) = s.opt::<String>("source")? {
        if src != synth.kind {
            return Err(Error::Config(format!(
                "[data] source = {src} conflicts with synthetic kind {}",
                synth.kind
            )));
        }
    }
    s.set("source", &synth.kind);
    Ok(if synth.kind == "bimodal" {
        DataSource::Bimodal(bimodal_params(&mut s, BimodalParams::default().frames_in)?)
    } else {
        DataSource::Bouncing {
            params: bouncing_params(&mut s, synth.channels)?,
            clips: synth.clips,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> KvDoc {
        KvDoc::parse(text).unwrap()
    }

    #[test]
    fn train_preset_then_file_then_flag() {
        let d = doc("[train]\npreset = gdl-l1\nsteps = 7\nrho_d = 0.5\n");
        let mut out = KvDoc::new();
        let t = resolve_train(&d, &Overrides::default(), 3, &mut out).unwrap();
        assert_eq!(t.config.weights.lambda_gdl, 1.0);
        assert_eq!(t.config.steps, 7);
        assert_eq!(t.config.rho_d, 0.5);
        assert_eq!(t.config.seed, 3);
        let flags = Overrides {
            preset: Some("adv".into()),
            ..Default::default()
        };
        let t = resolve_train(&d, &flags, 3, &mut KvDoc::new()).unwrap();
        assert!(t.config.adversarial);
        assert_eq!(t.config.weights.lambda_gdl, 0.0);
    }

    #[test]
    fn resolved_train_section_reproduces_itself() {
        let d = doc("[train]\npreset = adv-gdl\nrho_g = 0.001\nrho_g_final = 0.0001\n");
        let mut out = KvDoc::new();
        let a = resolve_train(&d, &Overrides::default(), 1, &mut out).unwrap();
        let mut again = KvDoc::new();
        let b = resolve_train(&out, &Overrides::default(), 1, &mut again).unwrap();
        assert_eq!(a.config, b.config);
        assert_eq!(out, again);
    }

    #[test]
    fn unknown_keys_and_sections_rejected() {
        let d = doc("[train]\nlearning_rate = 1\n");
        assert!(resolve_train(&d, &Overrides::default(), 0, &mut KvDoc::new()).is_err());
        let d = doc("[trian]\nsteps = 1\n");
        assert!(check_sections(&d, &["run", "train"]).is_err());
        let d = doc("[data]\nbouncing.colour = 3\n");
        let layout = Layout {
            frames_in: 4,
            frames_out: 1,
            channels: 1,
            patch: 16,
            clips: 4,
        };
        assert!(resolve_data(&d, 0, layout, &mut KvDoc::new()).is_err());
    }

    #[test]
    fn model_defaults_to_desk_preset() {
        let mut out = KvDoc::new();
        let spec = resolve_model(&KvDoc::new(), &mut out).unwrap();
        assert_eq!(spec, ModelSpec::preset(DEFAULT_MODEL).unwrap());
        assert_eq!(resolve_model(&out, &mut KvDoc::new()).unwrap(), spec);
    }
}
