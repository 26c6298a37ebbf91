//! Image quality metrics, motion masks and model evaluation.
//!
//! All metrics work on byte-scale frames `(c, h, w)` with values in `[0, 255]`.

use std::fmt::{self, Write as _};

use crate::compute::Tensor;
use crate::data::{denormalize, ClipSample, Frame};
use crate::error::{Error, Result};
use crate::model::Generator;

pub const MAX_VALUE: f64 = 255.0;
/// Floor of the PSNR error and sharpness denominator; caps perfect scores.
pub const ERROR_FLOOR: f64 = 1e-10;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const DEFAULT_MOTION_THRESHOLD: f64 = 0.2;

/// Score of a perfect match for PSNR and sharpness difference.
pub fn capped_db() -> f64 {
    10.0 * (MAX_VALUE * MAX_VALUE / ERROR_FLOOR).log10()
}

/// Per-pixel selection shared by all channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Shape(format!(
                "mask of {} bits for {height}x{width}",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn coverage(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.bits.len() as f64
        }
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}

fn dims(f: &Frame) -> Result<(usize, usize, usize)> {
    match f.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(Error::Shape(format!("frame must be (c, h, w), got {s:?}"))),
    }
}

fn check_pair(target: &Frame, pred: &Frame, mask: Option<&Mask>) -> Result<(usize, usize, usize)> {
    let d = dims(target)?;
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "target {:?} and prediction {:?} differ",
            target.shape(),
            pred.shape()
        )));
    }
    if let Some(m) = mask {
        if (m.height, m.width) != (d.1, d.2) {
            return Err(Error::Shape(format!(
                "{}x{} mask for {}x{} frames",
                m.height, m.width, d.1, d.2
            )));
        }
    }
    Ok(d)
}

fn selected(mask: Option<&Mask>, idx: usize) -> bool {
    mask.is_none_or(|m| m.bits[idx])
}

/// `10 log10(255² / MSE)` over the selected pixels of every channel.
pub fn psnr(target: &Frame, pred: &Frame, mask: Option<&Mask>) -> Result<f64> {
    let (c, h, w) = check_pair(target, pred, mask)?;
    let plane = h * w;
    let (mut sum, mut n) = (0.0f64, 0usize);
    for ch in 0..c {
        for i in 0..plane {
            if selected(mask, i) {
                let d = target.data()[ch * plane + i] as f64 - pred.data()[ch * plane + i] as f64;
                sum += d * d;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Data("empty mask".into()));
    }
    let mse = (sum / n as f64).max(ERROR_FLOOR);
    Ok(10.0 * (MAX_VALUE * MAX_VALUE / mse).log10())
}

/// Luma `0.299 R + 0.587 G + 0.114 B` for RGB, the single plane otherwise.
pub fn to_gray(frame: &Frame) -> Result<Vec<f64>> {
    let (c, h, w) = dims(frame)?;
    let plane = h * w;
    let d = frame.data();
    match c {
        1 => Ok(d.iter().map(|&v| v as f64).collect()),
        3 => Ok((0..plane)
            .map(|i| {
                0.299 * d[i] as f64 + 0.587 * d[plane + i] as f64 + 0.114 * d[2 * plane + i] as f64
            })
            .collect()),
        _ => Err(Error::Shape(format!("expected 1 or 3 channels, got {c}"))),
    }
}

/// Normalized 11x11 Gaussian window, row-major.
pub fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g1: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let mut w: Vec<f64> = g1
        .iter()
        .flat_map(|a| g1.iter().map(move |b| a * b))
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Mean SSIM index over the valid 11x11 windows whose center pixel is selected.
pub fn ssim(target: &Frame, pred: &Frame, mask: Option<&Mask>) -> Result<f64> {
    let (_, h, w) = check_pair(target, pred, mask)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let (x, y) = (to_gray(target)?, to_gray(pred)?);
    let win = gaussian_window();
    let c1 = (0.01 * MAX_VALUE).powi(2);
    let c2 = (0.03 * MAX_VALUE).powi(2);
    let half = SSIM_WINDOW / 2;
    let (mut sum, mut n) = (0.0f64, 0usize);
    for i in 0..=h - SSIM_WINDOW {
        for j in 0..=w - SSIM_WINDOW {
            if !selected(mask, (i + half) * w + j + half) {
                continue;
            }
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for a in 0..SSIM_WINDOW {
                for b in 0..SSIM_WINDOW {
                    let k = win[a * SSIM_WINDOW + b];
                    let idx = (i + a) * w + j + b;
                    let (xv, yv) = (x[idx], y[idx]);
                    mx += k * xv;
                    my += k * yv;
                    sxx += k * (xv * xv);
                    syy += k * (yv * yv);
                    sxy += k * (xv * yv);
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Data("empty mask".into()));
    }
    Ok(sum / n as f64)
}

/// `10 log10(255² / mean |(∇i Y + ∇j Y) − (∇i Ŷ + ∇j Ŷ)|)` with absolute
/// backward differences; the first row and column are excluded.
pub fn sharp_diff(target: &Frame, pred: &Frame, mask: Option<&Mask>) -> Result<f64> {
    let (c, h, w) = check_pair(target, pred, mask)?;
    let plane = h * w;
    let grad = |d: &[f32], base: usize, r: usize, col: usize| -> f64 {
        let v = d[base + r * w + col] as f64;
        (v - d[base + (r - 1) * w + col] as f64).abs()
            + (v - d[base + r * w + col - 1] as f64).abs()
    };
    let (mut sum, mut n) = (0.0f64, 0usize);
    for ch in 0..c {
        let base = ch * plane;
        for r in 1..h {
            for col in 1..w {
                if selected(mask, r * w + col) {
                    sum +=
                        (grad(target.data(), base, r, col) - grad(pred.data(), base, r, col)).abs();
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::Data(
            "no valid positions for sharpness difference".into(),
        ));
    }
    let den = (sum / n as f64).max(ERROR_FLOOR);
    Ok(10.0 * (MAX_VALUE * MAX_VALUE / den).log10())
}

/// Pixels whose largest per-channel change exceeds `threshold` on the `[0, 1]` scale.
pub fn motion_mask(frame: &Frame, prev: &Frame, threshold: f64) -> Result<Mask> {
    let (c, h, w) = dims(frame)?;
    if prev.shape() != frame.shape() {
        return Err(Error::Shape(format!(
            "frames {:?} and {:?} differ",
            frame.shape(),
            prev.shape()
        )));
    }
    let plane = h * w;
    let bits = (0..plane)
        .map(|i| {
            let m = (0..c)
                .map(|ch| {
                    (frame.data()[ch * plane + i] as f64 - prev.data()[ch * plane + i] as f64).abs()
                })
                .fold(0.0, f64::max);
            m / MAX_VALUE > threshold
        })
        .collect();
    Mask::new(h, w, bits)
}

/// Zeroes unselected pixels, for visual inspection of the evaluated regions.
pub fn masked_visualization(frame: &Frame, mask: &Mask) -> Result<Frame> {
    let (c, h, w) = dims(frame)?;
    if (mask.height, mask.width) != (h, w) {
        return Err(Error::Shape("mask does not match frame".into()));
    }
    let plane = h * w;
    let mut out = frame.clone();
    for ch in 0..c {
        for i in 0..plane {
            if !mask.bits[i] {
                out.data_mut()[ch * plane + i] = 0.0;
            }
        }
    }
    Ok(out)
}

/// Repeats the last `channels`-channel frame of `x` (`(m * c, h, w)`) `frames` times.
pub fn baseline_last_input(x: &Tensor<f32>, channels: usize, frames: usize) -> Result<Tensor<f32>> {
    let (mc, h, w) = match x.shape() {
        [mc, h, w] => (*mc, *h, *w),
        s => {
            return Err(Error::Shape(format!(
                "inputs must be (m * c, h, w), got {s:?}"
            )))
        }
    };
    if channels == 0 || mc < channels || mc % channels != 0 {
        return Err(Error::Shape(format!(
            "{mc} input channels are not whole {channels}-channel frames"
        )));
    }
    let last = &x.data()[(mc - channels) * h * w..];
    let data: Vec<f32> = (0..frames).flat_map(|_| last.iter().copied()).collect();
    Tensor::new(vec![frames * channels, h, w], data)
}

/// Frame `index` of a `(k * c, h, w)` stack.
fn frame_at(stack: &Tensor<f32>, channels: usize, index: usize) -> Result<Frame> {
    let (h, w) = (stack.shape()[1], stack.shape()[2]);
    let size = channels * h * w;
    let data = stack
        .data()
        .get(index * size..(index + 1) * size)
        .ok_or_else(|| Error::Shape(format!("frame {index} out of range")))?;
    Tensor::new(vec![channels, h, w], data.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Model,
    LastInput,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Model => "model",
            Method::LastInput => "last-input",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Psnr,
    Ssim,
    Sharpness,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Psnr, Metric::Ssim, Metric::Sharpness];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
            Metric::Sharpness => "sharpness",
        }
    }
}

/// Running mean with a fixed summation order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Mean {
    sum: f64,
    count: usize,
}

impl Mean {
    pub fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    pub fn value(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// Aggregates of one predicted frame index for one method.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameMetrics {
    pub psnr_full: Mean,
    pub psnr_masked: Mean,
    pub ssim_full: Mean,
    pub ssim_masked: Mean,
    pub sharp_full: Mean,
    pub sharp_masked: Mean,
    pub coverage: Mean,
}

impl FrameMetrics {
    pub fn get(&self, metric: Metric, masked: bool) -> &Mean {
        match (metric, masked) {
            (Metric::Psnr, false) => &self.psnr_full,
            (Metric::Psnr, true) => &self.psnr_masked,
            (Metric::Ssim, false) => &self.ssim_full,
            (Metric::Ssim, true) => &self.ssim_masked,
            (Metric::Sharpness, false) => &self.sharp_full,
            (Metric::Sharpness, true) => &self.sharp_masked,
        }
    }

    /// Adds one predicted frame. Masked metrics are skipped when the mask
    /// selects nothing; SSIM when the frame is smaller than its window.
    pub fn add(&mut self, target: &Frame, pred: &Frame, mask: &Mask) -> Result<()> {
        self.coverage.push(mask.coverage());
        self.psnr_full.push(psnr(target, pred, None)?);
        self.sharp_full.push(sharp_diff(target, pred, None)?);
        let (_, h, w) = dims(target)?;
        let ssim_ok = h >= SSIM_WINDOW && w >= SSIM_WINDOW;
        if ssim_ok {
            self.ssim_full.push(ssim(target, pred, None)?);
        }
        if !mask.is_empty() {
            self.psnr_masked.push(psnr(target, pred, Some(mask))?);
            if let Ok(v) = sharp_diff(target, pred, Some(mask)) {
                self.sharp_masked.push(v);
            }
            if ssim_ok {
                if let Ok(v) = ssim(target, pred, Some(mask)) {
                    self.ssim_masked.push(v);
                }
            }
        }
        Ok(())
    }
}

/// Per-frame metrics of the model and the last-input baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub samples: usize,
    pub threshold: f64,
    pub model: Vec<FrameMetrics>,
    pub baseline: Vec<FrameMetrics>,
}

impl MetricsReport {
    pub fn frames(&self, method: Method) -> &[FrameMetrics] {
        match method {
            Method::Model => &self.model,
            Method::LastInput => &self.baseline,
        }
    }

    /// One line per method, frame index, metric and variant:
    /// `method=model frame=1 metric=psnr variant=masked value=23.100000 samples=100`.
    /// A masked value with no moving pixels prints `value=none reason=no-moving-pixels`.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for method in [Method::Model, Method::LastInput] {
            for (i, fm) in self.frames(method).iter().enumerate() {
                for metric in Metric::ALL {
                    for masked in [false, true] {
                        let m = fm.get(metric, masked);
                        let variant = if masked { "masked" } else { "full" };
                        let _ = write!(
                            out,
                            "method={} frame={} metric={} variant={variant} ",
                            method.as_str(),
                            i + 1,
                            metric.as_str()
                        );
                        match m.value() {
                            Some(v) => {
                                let _ = writeln!(out, "value={v:.6} samples={}", m.count());
                            }
                            None if masked => {
                                let _ =
                                    writeln!(out, "value=none reason=no-moving-pixels samples=0");
                            }
                            None => {
                                let _ =
                                    writeln!(out, "value=none reason=image-too-small samples=0");
                            }
                        }
                    }
                }
                let _ = writeln!(
                    out,
                    "method={} frame={} metric=coverage variant=mask value={:.6} samples={}",
                    method.as_str(),
                    i + 1,
                    fm.coverage.value().unwrap_or(0.0),
                    fm.coverage.count()
                );
            }
        }
        out
    }
}

fn cell(m: &Mean) -> String {
    m.value()
        .map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} clips, motion threshold {}",
            self.samples, self.threshold
        )?;
        writeln!(
            f,
            "{:<11} {:>5} {:>9} {:>9} {:>8} {:>8} {:>9} {:>9} {:>8}",
            "method",
            "frame",
            "psnr-mask",
            "psnr",
            "ssim-mask",
            "ssim",
            "sharp-mask",
            "sharp",
            "coverage"
        )?;
        for method in [Method::Model, Method::LastInput] {
            for (i, fm) in self.frames(method).iter().enumerate() {
                writeln!(
                    f,
                    "{:<11} {:>5} {:>9} {:>9} {:>8} {:>8} {:>9} {:>9} {:>8}",
                    method.as_str(),
                    i + 1,
                    cell(&fm.psnr_masked),
                    cell(&fm.psnr_full),
                    cell(&fm.ssim_masked),
                    cell(&fm.ssim_full),
                    cell(&fm.sharp_masked),
                    cell(&fm.sharp_full),
                    cell(&fm.coverage),
                )?;
            }
        }
        if self
            .model
            .iter()
            .chain(&self.baseline)
            .any(|fm| fm.psnr_masked.count() == 0)
        {
            writeln!(
                f,
                "no moving pixels for some frames: masked columns marked -"
            )?;
        }
        Ok(())
    }
}

/// Byte-scale frames of one evaluated clip.
#[derive(Debug, Clone)]
pub struct EvaluatedClip {
    pub inputs: Vec<Frame>,
    pub truth: Vec<Frame>,
    pub prediction: Vec<Frame>,
    pub masks: Vec<Mask>,
}

/// Rolls the model out recursively for `steps` applications and scores
/// every predicted frame against the clip's targets, which must hold at
/// least `steps * frames_out` frames. The mask of frame `t` compares ground
/// truth `t` with ground truth `t - 1` (the last input for the first frame).
pub fn evaluate_model(
    generator: &Generator<f32>,
    clips: &[ClipSample],
    steps: usize,
    threshold: f64,
) -> Result<MetricsReport> {
    evaluate_model_with(generator, clips, steps, threshold, |_, _| Ok(()))
}

/// [`evaluate_model`] that hands every evaluated clip to `visit`.
pub fn evaluate_model_with(
    generator: &Generator<f32>,
    clips: &[ClipSample],
    steps: usize,
    threshold: f64,
    mut visit: impl FnMut(usize, &EvaluatedClip) -> Result<()>,
) -> Result<MetricsReport> {
    if clips.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let c = generator.spec.channels;
    let frames = steps * generator.spec.frames_out;
    let m = generator.spec.frames_in;
    let mut report = MetricsReport {
        samples: clips.len(),
        threshold,
        model: vec![FrameMetrics::default(); frames],
        baseline: vec![FrameMetrics::default(); frames],
    };
    for (ci, clip) in clips.iter().enumerate() {
        let n_truth = clip.y.shape()[0] / c;
        if n_truth < frames || clip.x.shape()[0] != m * c {
            return Err(Error::Data(format!(
                "clip {ci} has {} input and {n_truth} target frames, evaluation needs {m} and {frames}",
                clip.x.shape()[0] / c
            )));
        }
        let mut shape = vec![1];
        shape.extend_from_slice(clip.x.shape());
        let x4 = clip.x.clone().reshape(shape)?;
        let pred4 = generator.recursive_predict(&x4, steps)?;
        let pred = pred4.reshape(vec![frames * c, clip.x.shape()[1], clip.x.shape()[2]])?;
        let base = baseline_last_input(&clip.x, c, frames)?;
        let inputs: Vec<Frame> = (0..m)
            .map(|i| frame_at(&clip.x, c, i).map(|f| denormalize(&f)))
            .collect::<Result<_>>()?;
        let mut ev = EvaluatedClip {
            inputs,
            truth: vec![],
            prediction: vec![],
            masks: vec![],
        };
        for t in 0..frames {
            let truth = denormalize(&frame_at(&clip.y, c, t)?);
            let prev = if t == 0 {
                ev.inputs[m - 1].clone()
            } else {
                ev.truth[t - 1].clone()
            };
            let mask = motion_mask(&truth, &prev, threshold)?;
            let p = denormalize(&frame_at(&pred, c, t)?);
            let b = denormalize(&frame_at(&base, c, t)?);
            report.model[t].add(&truth, &p, &mask)?;
            report.baseline[t].add(&truth, &b, &mask)?;
            ev.truth.push(truth);
            ev.prediction.push(p);
            ev.masks.push(mask);
        }
        visit(ci, &ev)?;
    }
    Ok(report)
}
