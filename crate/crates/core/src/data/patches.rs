use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    load_clip_tree, normalize, stack_frames, stream_rng, synth_bouncing_shapes, BimodalParams,
    BimodalSource, BouncingParams, ClipSample, ClipSource, Frame, FrameSequence,
};
use crate::error::{Error, Result};

/// Where clips come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// One subdirectory of numbered frames per clip.
    Directory(PathBuf),
    /// `clips` independently seeded bouncing-shape sequences.
    Bouncing {
        params: BouncingParams,
        clips: usize,
    },
    Bimodal(BimodalParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub patch: usize,
    /// Minimum motion score of an accepted patch, in normalized units.
    pub tau: f64,
    pub channels: usize,
    pub seed: u64,
    pub frames_in: usize,
    pub frames_out: usize,
    /// Draws per patch before giving up.
    pub max_retries: usize,
}

pub const DEFAULT_TAU: f64 = 0.01;
pub const DEFAULT_MAX_RETRIES: usize = 1000;

impl DatasetSpec {
    pub fn new(source: DataSource, patch: usize, frames_in: usize, frames_out: usize) -> Self {
        Self {
            source,
            patch,
            tau: DEFAULT_TAU,
            channels: 1,
            seed: 0,
            frames_in,
            frames_out,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }

    pub fn window(&self) -> usize {
        self.frames_in + self.frames_out
    }

    /// Checks the patch size against the number of model scales.
    pub fn validate(&self, num_scales: usize) -> Result<()> {
        if self.tau.is_nan() || self.tau < 0.0 {
            return Err(Error::Config(format!(
                "motion threshold must be >= 0, got {}",
                self.tau
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        if self.frames_in == 0 || self.frames_out == 0 {
            return Err(Error::Config(
                "frames_in and frames_out must be positive".into(),
            ));
        }
        if self.max_retries == 0 {
            return Err(Error::Config("max_retries must be positive".into()));
        }
        let factor = 1usize << num_scales.saturating_sub(1);
        let size = match &self.source {
            DataSource::Bimodal(p) => p.canvas,
            _ => self.patch,
        };
        if size == 0 || size % factor != 0 {
            return Err(Error::Config(format!(
                "patch size {size} not divisible by 2^{} = {factor}",
                num_scales.saturating_sub(1)
            )));
        }
        Ok(())
    }

    /// Sequences in byte scale for sequence-backed sources.
    pub fn load_sequences(&self) -> Result<Vec<FrameSequence>> {
        match &self.source {
            DataSource::Directory(dir) => {
                Ok(load_clip_tree(dir)?.into_iter().map(|(_, s)| s).collect())
            }
            DataSource::Bouncing { params, clips } => {
                if *clips == 0 {
                    return Err(Error::Data("bouncing source with zero clips".into()));
                }
                (0..*clips as u64)
                    .map(|i| {
                        let seed = stream_rng(self.seed, 1000 + i).gen::<u64>();
                        synth_bouncing_shapes(params, seed)
                    })
                    .collect()
            }
            DataSource::Bimodal(_) => Err(Error::Data(
                "the bimodal source is generated per sample".into(),
            )),
        }
    }

    /// A sampler over this dataset.
    pub fn open(&self) -> Result<Box<dyn ClipSource + Send + Sync>> {
        match &self.source {
            DataSource::Bimodal(p) => {
                if self.frames_in != p.frames_in || self.frames_out != 1 || self.channels != 1 {
                    return Err(Error::Config(
                        "the bimodal source emits grayscale clips with one target frame".into(),
                    ));
                }
                Ok(Box::new(BimodalSource { params: p.clone() }))
            }
            _ => Ok(Box::new(PatchSource::new(
                self.load_sequences()?,
                self.clone(),
            )?)),
        }
    }
}

/// Mean over pixels, channels and consecutive frame pairs of the squared
/// temporal difference.
pub fn motion_score(frames: &[Frame]) -> f64 {
    if frames.len() < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for pair in frames.windows(2) {
        for (a, b) in pair[0].data().iter().zip(pair[1].data()) {
            let d = (*b - *a) as f64;
            sum += d * d;
        }
    }
    sum / ((frames.len() - 1) * frames[0].len()) as f64
}

fn check_sequence(seq: &FrameSequence, spec: &DatasetSpec) -> Result<()> {
    if seq.channels() != spec.channels {
        return Err(Error::Data(format!(
            "sequence has {} channels, dataset expects {}",
            seq.channels(),
            spec.channels
        )));
    }
    if seq.len() < spec.window() {
        return Err(Error::Data(format!(
            "sequence of {} frames is shorter than the {}-frame window",
            seq.len(),
            spec.window()
        )));
    }
    if seq.height() < spec.patch || seq.width() < spec.patch {
        return Err(Error::Data(format!(
            "{}x{} frames are smaller than the {} patch",
            seq.height(),
            seq.width(),
            spec.patch
        )));
    }
    Ok(())
}

fn draw_patch(
    seq: &FrameSequence,
    source: usize,
    spec: &DatasetSpec,
    rng: &mut ChaCha8Rng,
) -> Result<ClipSample> {
    let p = spec.patch;
    for _ in 0..spec.max_retries {
        let t0 = rng.gen_range(0..=seq.len() - spec.window());
        let y0 = rng.gen_range(0..=seq.height() - p);
        let x0 = rng.gen_range(0..=seq.width() - p);
        let frames: Vec<Frame> = seq
            .crop(t0, spec.window(), y0, x0, p)?
            .iter()
            .map(normalize)
            .collect();
        if motion_score(&frames) >= spec.tau {
            let x = stack_frames(&frames[..spec.frames_in])?;
            let y = stack_frames(&frames[spec.frames_in..])?;
            return Ok(ClipSample {
                x,
                y,
                source,
                origin: (t0, y0, x0),
            });
        }
    }
    Err(Error::RetryExhausted {
        attempts: spec.max_retries,
        threshold: spec.tau,
    })
}

/// `count` random spatio-temporal patches of a byte-scale sequence whose
/// motion score reaches `spec.tau`. Deterministic in `spec.seed`.
pub fn sample_patches(
    sequence: &FrameSequence,
    spec: &DatasetSpec,
    count: usize,
) -> Result<Vec<ClipSample>> {
    check_sequence(sequence, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..count)
        .map(|_| draw_patch(sequence, 0, spec, &mut rng))
        .collect()
}

/// Draws a sequence uniformly, then a patch from it.
#[derive(Debug, Clone)]
pub struct PatchSource {
    sequences: Vec<FrameSequence>,
    spec: DatasetSpec,
}

impl PatchSource {
    pub fn new(sequences: Vec<FrameSequence>, spec: DatasetSpec) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        for s in &sequences {
            check_sequence(s, &spec)?;
        }
        Ok(Self { sequences, spec })
    }

    pub fn sequences(&self) -> &[FrameSequence] {
        &self.sequences
    }
}

impl ClipSource for PatchSource {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<ClipSample> {
        let i = rng.gen_range(0..self.sequences.len());
        draw_patch(&self.sequences[i], i, &self.spec, rng)
    }
}
