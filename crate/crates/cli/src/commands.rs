//! The four subcommands. Each reads an optional config file, applies flag
//! overrides, writes `resolved.cfg` into the output directory, then its
//! outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use framepred::compute::Tensor;
use framepred::data::{
    denormalize, load_frame_sequence, normalize, sample_patches, stack_frames, stream_rng,
    synth_bimodal_dot, synth_bouncing_shapes, write_frame_sequence, write_pnm, ClipSample,
    DataSource, DatasetSpec, Frame, FrameSequence, Mode,
};
use framepred::eval::{evaluate_model_with, masked_visualization, Mask};
use framepred::kv::KvDoc;
use framepred::training::{load_checkpoint, save_checkpoint, Checkpoint, Trainer};
use framepred::{Error, Result};

use crate::config::{
    check_sections, read_doc, resolve_data, resolve_eval, resolve_model, resolve_predict,
    resolve_seed, resolve_synth, resolve_synth_params, resolve_train, Layout, Overrides,
};

pub const RESOLVED_CONFIG: &str = "resolved.cfg";
/// Width of the white bars between grid tiles.
pub const GRID_SEPARATOR: usize = 2;

fn write_resolved(out: &Path, doc: &KvDoc) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(RESOLVED_CONFIG), doc.to_string())?;
    Ok(())
}

fn clip_name(i: usize) -> String {
    format!("clip_{i:04}")
}

/// Frame `i` of a `(k * c, h, w)` stack.
fn frame_of(stack: &Tensor<f32>, c: usize, i: usize) -> Result<Frame> {
    let (h, w) = (stack.shape()[1], stack.shape()[2]);
    let n = c * h * w;
    Tensor::new(vec![c, h, w], stack.data()[i * n..(i + 1) * n].to_vec())
}

pub fn cmd_synth(config: Option<&Path>, flags: &Overrides, out: &Path) -> Result<()> {
    let doc = read_doc(config)?;
    check_sections(&doc, &["run", "synth", "data"])?;
    let mut resolved = KvDoc::new();
    let seed = resolve_seed(&doc, flags, &mut resolved)?;
    let synth = resolve_synth(&doc, flags, &mut resolved)?;
    let source = resolve_synth_params(&doc, &synth, &mut resolved)?;
    write_resolved(out, &resolved)?;
    match source {
        DataSource::Bouncing { params, clips } => {
            for i in 0..clips {
                let seq = synth_bouncing_shapes(&params, stream_rng(seed, i as u64).gen())?;
                write_frame_sequence(&out.join(clip_name(i)), &seq)?;
            }
        }
        DataSource::Bimodal(params) => {
            let mut labels = String::new();
            for (i, s) in synth_bimodal_dot(&params, synth.clips, seed)?
                .iter()
                .enumerate()
            {
                let mut frames = Vec::new();
                for t in 0..params.frames_in {
                    frames.push(denormalize(&frame_of(&s.clip.x, 1, t)?));
                }
                frames.push(denormalize(&s.clip.y));
                write_frame_sequence(&out.join(clip_name(i)), &FrameSequence::new(frames)?)?;
                let mode = match s.mode {
                    Mode::Up => "up",
                    Mode::Down => "down",
                };
                let _ = writeln!(labels, "{} {mode}", clip_name(i));
            }
            fs::write(out.join("labels.txt"), labels)?;
        }
        DataSource::Directory(_) => unreachable!("synth resolves generated sources only"),
    }
    Ok(())
}

fn checkpoint_path(out: &Path, step: u64) -> PathBuf {
    out.join(format!("checkpoint_{step:08}.ckpt"))
}

/// Trains from scratch. Writes the step-0 checkpoint, one every
/// `checkpoint_every` steps and one at the end, plus `train.log`. Returns the
/// path of the last checkpoint.
pub fn cmd_train(config: Option<&Path>, flags: &Overrides, out: &Path) -> Result<PathBuf> {
    let doc = read_doc(config)?;
    check_sections(&doc, &["run", "model", "train", "data"])?;
    let mut resolved = KvDoc::new();
    let seed = resolve_seed(&doc, flags, &mut resolved)?;
    let spec = resolve_model(&doc, &mut resolved)?;
    let train = resolve_train(&doc, flags, seed, &mut resolved)?;
    let g = &spec.generator;
    let layout = Layout {
        frames_in: g.frames_in,
        frames_out: g.frames_out,
        channels: g.channels,
        patch: spec.scales.top(),
        clips: 64,
    };
    let (data, _) = resolve_data(&doc, seed, layout, &mut resolved)?;
    data.validate(spec.scales.count())?;
    write_resolved(out, &resolved)?;

    let source = data.open()?;
    let steps = train.config.steps;
    let mut trainer = Trainer::new(spec, train.config)?;
    let mut last = checkpoint_path(out, 0);
    save_checkpoint(&trainer.checkpoint(), &last)?;
    let mut log = String::new();
    let result = (|| -> Result<()> {
        while trainer.step() < steps {
            trainer.run_one(source.as_ref(), &mut |r| {
                let _ = writeln!(log, "{}", r.to_line());
            })?;
            let step = trainer.step();
            let every = train.checkpoint_every;
            if step == steps || (every > 0 && step % every == 0) {
                last = checkpoint_path(out, step);
                save_checkpoint(&trainer.checkpoint(), &last)?;
            }
        }
        Ok(())
    })();
    fs::write(out.join("train.log"), &log)?;
    result?;
    Ok(last)
}

/// Lays frames side by side as one RGB image with white separators.
pub fn image_grid(tiles: &[Frame]) -> Result<Frame> {
    let first = tiles
        .first()
        .ok_or_else(|| Error::Data("no frames for the grid".into()))?;
    let (h, w) = (first.shape()[1], first.shape()[2]);
    let k = tiles.len();
    let width = k * w + (k - 1) * GRID_SEPARATOR;
    let mut grid = Tensor::full(&[3, h, width], 255.0f32);
    for (t, tile) in tiles.iter().enumerate() {
        let c = tile.shape()[0];
        if tile.shape()[1..] != [h, w] {
            return Err(Error::Shape("grid tiles differ in size".into()));
        }
        let x0 = t * (w + GRID_SEPARATOR);
        for ch in 0..3 {
            let src = if c == 3 { ch } else { 0 };
            for r in 0..h {
                for col in 0..w {
                    grid.data_mut()[(ch * h + r) * width + x0 + col] =
                        tile.data()[(src * h + r) * w + col];
                }
            }
        }
    }
    Ok(grid)
}

/// Rolls a checkpoint out from frames of one clip directory. Writes the
/// predicted frames and `grid.ppm` (inputs | ground truth | predictions).
pub fn cmd_predict(
    config: Option<&Path>,
    flags: &Overrides,
    out: &Path,
    checkpoint: &Path,
) -> Result<()> {
    let doc = read_doc(config)?;
    check_sections(&doc, &["run", "predict"])?;
    let mut resolved = KvDoc::new();
    resolve_seed(&doc, flags, &mut resolved)?;
    let settings = resolve_predict(&doc, &mut resolved)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let gen = ckpt.model();
    let (m, c) = (gen.spec.frames_in, gen.spec.channels);
    let seq = load_frame_sequence(&settings.input)?;
    if seq.channels() != c {
        return Err(Error::Data(format!(
            "clip has {} channels, model expects {c}",
            seq.channels()
        )));
    }
    if settings.start + m > seq.len() {
        return Err(Error::Data(format!(
            "clip has {} frames, need {m} input frames from index {}",
            seq.len(),
            settings.start
        )));
    }
    let factor = 1usize << (gen.spec.num_scales() - 1);
    let (h, w) = (seq.height(), seq.width());
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::Data(format!(
            "{h}x{w} frames are not divisible by {factor} (2^(scales-1))"
        )));
    }
    write_resolved(out, &resolved)?;

    let inputs = &seq.frames()[settings.start..settings.start + m];
    let normalized: Vec<Frame> = inputs.iter().map(normalize).collect();
    let x = stack_frames(&normalized)?.reshape(vec![1, m * c, h, w])?;
    let k = settings.steps * gen.spec.frames_out;
    let pred = gen
        .recursive_predict(&x, settings.steps)?
        .reshape(vec![k * c, h, w])?;
    let ext = if c == 3 { "ppm" } else { "pgm" };
    let mut preds = Vec::new();
    for i in 0..k {
        let f = denormalize(&frame_of(&pred, c, i)?);
        write_pnm(&out.join(format!("pred_{i:04}.{ext}")), &f)?;
        preds.push(f);
    }
    let truth_end = (settings.start + m + k).min(seq.len());
    let mut tiles: Vec<Frame> = inputs.to_vec();
    tiles.extend_from_slice(&seq.frames()[settings.start + m..truth_end]);
    tiles.extend(preds);
    write_pnm(&out.join("grid.ppm"), &image_grid(&tiles)?)?;
    Ok(())
}

fn eval_samples(data: &DatasetSpec, clips: usize, per_clip: usize) -> Result<Vec<ClipSample>> {
    match &data.source {
        DataSource::Bimodal(p) => {
            if data.frames_out != 1 {
                return Err(Error::Config(
                    "the bimodal source has one target frame; use [eval] steps = 1".into(),
                ));
            }
            Ok(synth_bimodal_dot(p, clips * per_clip, data.seed)?
                .into_iter()
                .map(|s| s.clip)
                .collect())
        }
        _ => {
            let mut out = Vec::new();
            for (i, seq) in data.load_sequences()?.iter().enumerate() {
                let spec = DatasetSpec {
                    seed: stream_rng(data.seed, i as u64).gen(),
                    ..data.clone()
                };
                out.extend(sample_patches(seq, &spec, per_clip)?);
            }
            Ok(out)
        }
    }
}

fn mask_image(mask: &Mask, h: usize, w: usize) -> Result<Frame> {
    let data = mask
        .bits()
        .iter()
        .map(|&b| if b { 255.0 } else { 0.0 })
        .collect();
    Tensor::new(vec![1, h, w], data)
}

/// Scores a checkpoint and the last-input baseline. Writes `report.txt`
/// (one record per method, frame, metric and variant), `summary.txt` and
/// masked frames of the first clips under `masked/`.
pub fn cmd_eval(
    config: Option<&Path>,
    flags: &Overrides,
    out: &Path,
    checkpoint: &Path,
) -> Result<String> {
    let doc = read_doc(config)?;
    check_sections(&doc, &["run", "data", "eval"])?;
    let mut resolved = KvDoc::new();
    let seed = resolve_seed(&doc, flags, &mut resolved)?;
    let settings = resolve_eval(&doc, &mut resolved)?;
    let ckpt: Checkpoint = load_checkpoint(checkpoint)?;
    let gen = ckpt.model();
    let layout = Layout {
        frames_in: gen.spec.frames_in,
        frames_out: settings.steps * gen.spec.frames_out,
        channels: gen.spec.channels,
        patch: ckpt.spec.scales.top(),
        clips: 100,
    };
    let (data, clips) = resolve_data(&doc, seed, layout, &mut resolved)?;
    data.validate(gen.spec.num_scales())?;
    write_resolved(out, &resolved)?;

    let samples = eval_samples(&data, clips, settings.samples_per_clip)?;
    let masked_dir = out.join("masked");
    let export = settings.export;
    let report = evaluate_model_with(
        &gen,
        &samples,
        settings.steps,
        settings.threshold,
        |ci, ev| {
            if ci >= export {
                return Ok(());
            }
            fs::create_dir_all(&masked_dir)?;
            for (t, mask) in ev.masks.iter().enumerate() {
                let (h, w) = (ev.truth[t].shape()[1], ev.truth[t].shape()[2]);
                let stem = format!("{}_frame_{}", clip_name(ci), t + 1);
                let ext = if ev.truth[t].shape()[0] == 3 {
                    "ppm"
                } else {
                    "pgm"
                };
                write_pnm(
                    &masked_dir.join(format!("{stem}_truth.{ext}")),
                    &masked_visualization(&ev.truth[t], mask)?,
                )?;
                write_pnm(
                    &masked_dir.join(format!("{stem}_pred.{ext}")),
                    &masked_visualization(&ev.prediction[t], mask)?,
                )?;
                write_pnm(
                    &masked_dir.join(format!("{stem}_mask.pgm")),
                    &mask_image(mask, h, w)?,
                )?;
            }
            Ok(())
        },
    )?;
    fs::write(out.join("report.txt"), report.to_records())?;
    let summary = report.to_string();
    fs::write(out.join("summary.txt"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_layout_arithmetic() {
        let tiles: Vec<Frame> = (0..5)
            .map(|i| Tensor::full(&[1, 4, 6], i as f32 * 10.0))
            .collect();
        let g = image_grid(&tiles).unwrap();
        assert_eq!(g.shape(), &[3, 4, 5 * 6 + 4 * GRID_SEPARATOR]);
        // second tile starts after one tile and one separator
        let width = g.shape()[2];
        assert_eq!(g.data()[6], 255.0);
        assert_eq!(g.data()[6 + GRID_SEPARATOR], 10.0);
        assert_eq!(g.data()[2 * 4 * width + width - 1], 40.0);
    }

    #[test]
    fn grid_rejects_mixed_sizes() {
        let tiles = vec![Tensor::zeros(&[1, 4, 4]), Tensor::zeros(&[1, 4, 5])];
        assert!(image_grid(&tiles).is_err());
    }
}
