//! Synthetic video: bouncing shapes and the two-mode dot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compute::Tensor;
use crate::data::{ClipSample, Frame, FrameSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Rect,
    Disc,
}

/// One moving shape. Positions are the top-left corner of its bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingShape {
    pub kind: ShapeKind,
    pub size: usize,
    pub x: i64,
    pub y: i64,
    pub vx: i64,
    pub vy: i64,
    /// Intensity per channel, `0..=255`.
    pub color: [u8; 3],
}

impl MovingShape {
    fn covers(&self, row: usize, col: usize) -> bool {
        let (r, c) = (row as i64 - self.y, col as i64 - self.x);
        let s = self.size as i64;
        if r < 0 || c < 0 || r >= s || c >= s {
            return false;
        }
        match self.kind {
            ShapeKind::Rect => true,
            ShapeKind::Disc => {
                let half = self.size as f64 / 2.0;
                let (dy, dx) = (r as f64 + 0.5 - half, c as f64 + 0.5 - half);
                dy * dy + dx * dx <= half * half
            }
        }
    }

    /// One frame of motion with elastic reflection off the canvas border.
    fn advance(&mut self, width: usize, height: usize) {
        fn reflect(pos: &mut i64, vel: &mut i64, max: i64) {
            *pos += *vel;
            if *pos < 0 {
                *pos = -*pos;
                *vel = -*vel;
            } else if *pos > max {
                *pos = 2 * max - *pos;
                *vel = -*vel;
            }
            *pos = (*pos).clamp(0, max);
        }
        reflect(&mut self.x, &mut self.vx, (width - self.size) as i64);
        reflect(&mut self.y, &mut self.vy, (height - self.size) as i64);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BouncingParams {
    pub width: usize,
    pub height: usize,
    pub shapes: usize,
    pub size_min: usize,
    pub size_max: usize,
    /// Per-axis speed range in pixels per frame; the sign is drawn separately.
    pub speed_min: usize,
    pub speed_max: usize,
    pub frames: usize,
    pub channels: usize,
    pub background: u8,
    /// Shape intensities are drawn per channel from this inclusive range.
    pub color_min: u8,
    pub color_max: u8,
}

impl Default for BouncingParams {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            shapes: 2,
            size_min: 4,
            size_max: 8,
            speed_min: 1,
            speed_max: 3,
            frames: 16,
            channels: 1,
            background: 40,
            color_min: 120,
            color_max: 220,
        }
    }
}

/// Renders `shapes` over a uniform `background` for `frames` frames, starting
/// from their current positions. Later shapes paint over earlier ones; no
/// anti-aliasing.
pub fn render_shapes(
    mut shapes: Vec<MovingShape>,
    width: usize,
    height: usize,
    frames: usize,
    channels: usize,
    background: u8,
) -> Result<FrameSequence> {
    if channels != 1 && channels != 3 {
        return Err(Error::Config(format!(
            "channels must be 1 or 3, got {channels}"
        )));
    }
    for s in &shapes {
        if s.size == 0 || s.size > width || s.size > height {
            return Err(Error::Config(format!(
                "shape of size {} does not fit a {width}x{height} canvas",
                s.size
            )));
        }
        if s.x < 0 || s.y < 0 || s.x as usize + s.size > width || s.y as usize + s.size > height {
            return Err(Error::Config("shape starts outside the canvas".into()));
        }
    }
    let plane = width * height;
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut data = vec![background as f32; channels * plane];
        for s in &shapes {
            let (y0, x0) = (s.y as usize, s.x as usize);
            for row in y0..y0 + s.size {
                for col in x0..x0 + s.size {
                    if s.covers(row, col) {
                        for ch in 0..channels {
                            data[ch * plane + row * width + col] = s.color[ch] as f32;
                        }
                    }
                }
            }
        }
        out.push(Tensor::new(vec![channels, height, width], data)?);
        for s in shapes.iter_mut() {
            s.advance(width, height);
        }
    }
    FrameSequence::new(out)
}

/// Random rectangles and discs bouncing inside the canvas. Deterministic in `seed`.
pub fn synth_bouncing_shapes(params: &BouncingParams, seed: u64) -> Result<FrameSequence> {
    let p = params;
    if p.size_min == 0 || p.size_min > p.size_max {
        return Err(Error::Config("shape size range is empty".into()));
    }
    if p.size_max > p.width || p.size_max > p.height {
        return Err(Error::Config(format!(
            "shape size {} larger than the {}x{} canvas",
            p.size_max, p.width, p.height
        )));
    }
    if p.speed_min > p.speed_max {
        return Err(Error::Config("speed range is empty".into()));
    }
    if p.color_min > p.color_max {
        return Err(Error::Config("color range is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shapes = Vec::with_capacity(p.shapes);
    for _ in 0..p.shapes {
        let size = rng.gen_range(p.size_min..=p.size_max);
        let kind = if rng.gen_bool(0.5) {
            ShapeKind::Rect
        } else {
            ShapeKind::Disc
        };
        let x = rng.gen_range(0..=(p.width - size)) as i64;
        let y = rng.gen_range(0..=(p.height - size)) as i64;
        let mut speed = || {
            let v = rng.gen_range(p.speed_min..=p.speed_max) as i64;
            if rng.gen_bool(0.5) {
                -v
            } else {
                v
            }
        };
        let (vx, vy) = (speed(), speed());
        let color = if p.channels == 1 {
            let v = rng.gen_range(p.color_min..=p.color_max);
            [v, v, v]
        } else {
            [
                rng.gen_range(p.color_min..=p.color_max),
                rng.gen_range(p.color_min..=p.color_max),
                rng.gen_range(p.color_min..=p.color_max),
            ]
        };
        shapes.push(MovingShape {
            kind,
            size,
            x,
            y,
            vx,
            vy,
            color,
        });
    }
    render_shapes(
        shapes,
        p.width,
        p.height,
        p.frames,
        p.channels,
        p.background,
    )
}

/// A dot approaching from the left along a row, then continuing either up-right
/// or down-right with equal probability.
#[derive(Debug, Clone, PartialEq)]
pub struct BimodalParams {
    pub canvas: usize,
    pub dot: usize,
    /// Pixels per frame along each axis.
    pub speed: usize,
    pub frames_in: usize,
    /// Maximum random offset of the starting position, in pixels.
    pub jitter: usize,
    /// Normalized intensities of the background and the dot.
    pub background: f32,
    pub foreground: f32,
}

impl Default for BimodalParams {
    fn default() -> Self {
        Self {
            canvas: 8,
            dot: 1,
            speed: 1,
            frames_in: 3,
            jitter: 0,
            background: -0.5,
            foreground: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BimodalSample {
    pub clip: ClipSample,
    pub mode: Mode,
}

impl BimodalParams {
    fn validate(&self) -> Result<()> {
        let travel = (self.frames_in + 1) * self.speed + self.dot + self.jitter;
        let range = -1.0..=1.0;
        if !range.contains(&self.background) || !range.contains(&self.foreground) {
            return Err(Error::Config(
                "bimodal intensities must lie in [-1, 1]".into(),
            ));
        }
        if self.dot == 0 || self.speed == 0 || self.frames_in == 0 {
            return Err(Error::Config(
                "dot size, speed and frame count must be positive".into(),
            ));
        }
        if travel > self.canvas || 2 * self.speed + self.dot + self.jitter > self.canvas {
            return Err(Error::Config(format!(
                "bimodal trajectory does not fit a {} canvas",
                self.canvas
            )));
        }
        Ok(())
    }

    /// Start column and row before jitter: trajectory centred on the canvas.
    fn base_origin(&self) -> (usize, usize) {
        let travel = (self.frames_in + 1) * self.speed + self.dot + self.jitter;
        let col = (self.canvas - travel) / 2;
        let row = (self.canvas - self.dot - self.jitter) / 2;
        (col, row)
    }

    fn dot_frame(&self, col: usize, row: usize) -> Frame {
        let n = self.canvas;
        let mut f = Tensor::full(&[1, n, n], self.background);
        for r in row..row + self.dot {
            for c in col..col + self.dot {
                f.data_mut()[r * n + c] = self.foreground;
            }
        }
        f
    }

    /// Input frames and both possible continuations for a start offset,
    /// on the normalized scale.
    pub fn clip_for(&self, dx: usize, dy: usize) -> Result<(Tensor<f32>, Frame, Frame)> {
        self.validate()?;
        if dx > self.jitter || dy > self.jitter {
            return Err(Error::Config("offset exceeds jitter".into()));
        }
        let (c0, r0) = self.base_origin();
        let (c0, r0) = (c0 + dx, r0 + dy);
        let frames: Vec<Frame> = (0..self.frames_in)
            .map(|t| self.dot_frame(c0 + t * self.speed, r0))
            .collect();
        let x = stack_frames(&frames)?;
        let col = c0 + self.frames_in * self.speed;
        let up = self.dot_frame(col, r0 - self.speed.min(r0));
        let down = self.dot_frame(col, r0 + self.speed);
        Ok((x, up, down))
    }
}

/// Concatenates `(c, h, w)` frames along the channel axis.
pub fn stack_frames(frames: &[Frame]) -> Result<Tensor<f32>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Data("no frames to stack".into()))?;
    let (c, h, w) = match first.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::Shape(format!("frame must be (c, h, w), got {s:?}"))),
    };
    let mut data = Vec::with_capacity(frames.len() * c * h * w);
    for f in frames {
        if f.shape() != first.shape() {
            return Err(Error::Shape("frames differ in shape".into()));
        }
        data.extend_from_slice(f.data());
    }
    Tensor::new(vec![frames.len() * c, h, w], data)
}

/// Draws `count` samples; each picks a mode with probability 1/2.
pub fn synth_bimodal_dot(
    params: &BimodalParams,
    count: usize,
    seed: u64,
) -> Result<Vec<BimodalSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| bimodal_sample(params, &mut rng, i))
        .collect()
}

pub(crate) fn bimodal_sample(
    params: &BimodalParams,
    rng: &mut ChaCha8Rng,
    index: usize,
) -> Result<BimodalSample> {
    let dx = rng.gen_range(0..=params.jitter);
    let dy = rng.gen_range(0..=params.jitter);
    let (x, up, down) = params.clip_for(dx, dy)?;
    let mode = if rng.gen_bool(0.5) {
        Mode::Up
    } else {
        Mode::Down
    };
    let y = if mode == Mode::Up { up } else { down };
    Ok(BimodalSample {
        clip: ClipSample {
            x,
            y,
            source: index,
            origin: (0, dy, dx),
        },
        mode,
    })
}
