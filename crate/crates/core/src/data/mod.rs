//! Frame sequences, synthetic video, patch sampling and normalization.

mod patches;
pub mod pnm;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compute::Tensor;
use crate::error::{Error, Result};

pub use patches::{
    motion_score, sample_patches, DataSource, DatasetSpec, PatchSource, DEFAULT_MAX_RETRIES,
    DEFAULT_TAU,
};
pub use pnm::{decode_pnm, encode_pnm, read_pnm, to_byte, write_pnm, Frame};
pub use synth::{
    render_shapes, stack_frames, synth_bimodal_dot, synth_bouncing_shapes, BimodalParams,
    BimodalSample, BouncingParams, Mode, MovingShape, ShapeKind,
};

/// Ordered frames of identical shape `(c, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Data("empty frame sequence".into()))?;
        if first.shape().len() != 3 {
            return Err(Error::Shape(format!(
                "frames must be (c, h, w), got {:?}",
                first.shape()
            )));
        }
        if let Some((i, f)) = frames
            .iter()
            .enumerate()
            .find(|(_, f)| f.shape() != first.shape())
        {
            return Err(Error::Data(format!(
                "frame {i} has shape {:?}, expected {:?}",
                f.shape(),
                first.shape()
            )));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames[0].shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames[0].shape()[2]
    }

    pub fn normalized(&self) -> Self {
        Self {
            frames: self.frames.iter().map(normalize).collect(),
        }
    }

    pub fn denormalized(&self) -> Self {
        Self {
            frames: self.frames.iter().map(denormalize).collect(),
        }
    }

    /// Frames `t0..t0 + len` cropped to a `size`-square at `(y0, x0)`.
    pub fn crop(
        &self,
        t0: usize,
        len: usize,
        y0: usize,
        x0: usize,
        size: usize,
    ) -> Result<Vec<Frame>> {
        if t0 + len > self.len() || y0 + size > self.height() || x0 + size > self.width() {
            return Err(Error::Shape(format!(
                "crop t={t0}+{len} at ({y0},{x0}) size {size} outside {}x{}x{}",
                self.len(),
                self.height(),
                self.width()
            )));
        }
        let (c, w) = (self.channels(), self.width());
        let plane = self.height() * w;
        Ok(self.frames[t0..t0 + len]
            .iter()
            .map(|f| {
                let mut data = Vec::with_capacity(c * size * size);
                for ch in 0..c {
                    for r in y0..y0 + size {
                        let base = ch * plane + r * w;
                        data.extend_from_slice(&f.data()[base + x0..base + x0 + size]);
                    }
                }
                Tensor::new(vec![c, size, size], data).expect("crop shape")
            })
            .collect())
    }
}

fn is_frame_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("pgm" | "ppm")
    )
}

/// Reads every `.pgm`/`.ppm` file of `dir` in lexicographic order.
pub fn load_frame_sequence(dir: &Path) -> Result<FrameSequence> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.is_file() && is_frame_file(p));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!(
            "{}: no .pgm or .ppm frames",
            dir.display()
        )));
    }
    let frames = paths
        .iter()
        .map(|p| read_pnm(p))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", dir.display())),
        other => other,
    })
}

/// One sequence per subdirectory of `root`, in lexicographic order. A root
/// that holds frames directly is treated as a single clip.
pub fn load_clip_tree(root: &Path) -> Result<Vec<(String, FrameSequence)>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    dirs.retain(|p| p.is_dir());
    dirs.sort();
    if dirs.is_empty() {
        let name = root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        return Ok(vec![(name, load_frame_sequence(root)?)]);
    }
    dirs.iter()
        .map(|d| {
            let name = d
                .file_name()
                .expect("entry has a name")
                .to_string_lossy()
                .into_owned();
            Ok((name, load_frame_sequence(d)?))
        })
        .collect()
}

/// Writes `frame_0000.pgm`, `frame_0001.pgm`, ... (`.ppm` for RGB).
pub fn write_frame_sequence(dir: &Path, seq: &FrameSequence) -> Result<()> {
    fs::create_dir_all(dir)?;
    let ext = if seq.channels() == 3 { "ppm" } else { "pgm" };
    for (i, f) in seq.frames().iter().enumerate() {
        write_pnm(&dir.join(format!("frame_{i:04}.{ext}")), f)?;
    }
    Ok(())
}

/// `x / 127.5 - 1`: bytes to `[-1, 1]`.
pub fn normalize(frame: &Frame) -> Frame {
    frame.map(|v| v / 127.5 - 1.0)
}

/// Inverse of [`normalize`], clamped to `[0, 255]` and rounded half up.
pub fn denormalize(frame: &Frame) -> Frame {
    frame.map(|v| to_byte((v + 1.0) * 127.5) as f32)
}

/// Input and target frames of one training example, stacked along channels
/// and normalized to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    /// `(m * c, h, w)`
    pub x: Tensor<f32>,
    /// `(n * c, h, w)`
    pub y: Tensor<f32>,
    pub source: usize,
    /// `(t, y, x)` of the patch within its source.
    pub origin: (usize, usize, usize),
}

/// Stacks samples into `(batch, m * c, h, w)` inputs and `(batch, n * c, h, w)` targets.
pub fn make_batch(samples: &[ClipSample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if samples.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let stack = |get: fn(&ClipSample) -> &Tensor<f32>| -> Result<Tensor<f32>> {
        let first = get(&samples[0]).shape();
        let mut data = Vec::with_capacity(samples.len() * get(&samples[0]).len());
        for s in samples {
            if get(s).shape() != first {
                return Err(Error::Shape(format!(
                    "cannot batch {:?} with {:?}",
                    first,
                    get(s).shape()
                )));
            }
            data.extend_from_slice(get(s).data());
        }
        let mut shape = vec![samples.len()];
        shape.extend_from_slice(first);
        Tensor::new(shape, data)
    };
    Ok((stack(|s| &s.x)?, stack(|s| &s.y)?))
}

/// Anything that can draw training examples from an RNG.
pub trait ClipSource {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<ClipSample>;

    fn draw_batch(&self, rng: &mut ChaCha8Rng, size: usize) -> Result<Vec<ClipSample>> {
        (0..size).map(|_| self.draw(rng)).collect()
    }
}

/// A fixed list of samples drawn uniformly with replacement.
#[derive(Debug, Clone)]
pub struct ClipSet {
    samples: Vec<ClipSample>,
}

impl ClipSet {
    pub fn new(samples: Vec<ClipSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[ClipSample] {
        &self.samples
    }
}

impl ClipSource for ClipSet {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<ClipSample> {
        Ok(self.samples[rng.gen_range(0..self.samples.len())].clone())
    }
}

/// Fresh two-mode dot samples on every draw.
#[derive(Debug, Clone)]
pub struct BimodalSource {
    pub params: BimodalParams,
}

impl ClipSource for BimodalSource {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<ClipSample> {
        Ok(synth::bimodal_sample(&self.params, rng, 0)?.clip)
    }
}

/// Independent generator for stream `stream` of a master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_endpoints_and_round_trip() {
        let bytes = Tensor::from_fn(&[1, 1, 256], |i| i as f32);
        let n = normalize(&bytes);
        assert_eq!(n.data()[0], -1.0);
        assert_eq!(n.data()[255], 1.0);
        assert!(n.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(denormalize(&n), bytes);
    }

    #[test]
    fn denormalize_clamps() {
        let t = Tensor::new(vec![1, 1, 2], vec![-3.0f32, 4.0]).unwrap();
        assert_eq!(denormalize(&t).data(), &[0.0, 255.0]);
    }

    #[test]
    fn sequence_rejects_mixed_shapes() {
        let a = Tensor::<f32>::zeros(&[1, 2, 2]);
        let b = Tensor::<f32>::zeros(&[1, 3, 2]);
        assert!(FrameSequence::new(vec![a.clone(), b]).is_err());
        assert!(FrameSequence::new(vec![]).is_err());
        assert_eq!(FrameSequence::new(vec![a.clone(), a]).unwrap().len(), 2);
    }

    #[test]
    fn crop_picks_window() {
        let f = Tensor::from_fn(&[1, 4, 4], |i| i as f32);
        let seq = FrameSequence::new(vec![f.clone(), f]).unwrap();
        let c = seq.crop(1, 1, 1, 2, 2).unwrap();
        assert_eq!(c[0].data(), &[6.0, 7.0, 10.0, 11.0]);
        assert!(seq.crop(0, 3, 0, 0, 2).is_err());
    }

    #[test]
    fn streams_differ() {
        let mut a = stream_rng(5, 0);
        let mut b = stream_rng(5, 1);
        assert_ne!(a.gen::<u64>(), b.gen::<u64>());
    }
}
