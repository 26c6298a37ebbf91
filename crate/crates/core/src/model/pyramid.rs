use crate::compute::{kernels, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::model::ScaleConfig;

/// Inputs `X_k` and targets `Y_k` at every scale, coarsest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalePyramid<T> {
    pub inputs: Vec<Tensor<T>>,
    pub targets: Vec<Tensor<T>>,
}

impl<T: Scalar> ScalePyramid<T> {
    pub fn num_scales(&self) -> usize {
        self.inputs.len()
    }
}

/// Repeated 2x2 averaging: returns `count` levels, coarsest first, the last
/// being `top` itself.
pub fn downscale_levels<T: Scalar>(top: &Tensor<T>, count: usize) -> Result<Vec<Tensor<T>>> {
    if count == 0 {
        return Err(Error::Config("at least one scale is required".into()));
    }
    let (_, _, h, w) = top.dims4()?;
    let factor = 1usize << (count - 1);
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::Shape(format!(
            "{h}x{w} is not divisible by 2^{} = {factor} for {count} scales",
            count - 1
        )));
    }
    let mut levels = vec![top.clone()];
    for _ in 1..count {
        let next = kernels::downsample_avg2x(levels.last().expect("non-empty"))?;
        levels.push(next);
    }
    levels.reverse();
    Ok(levels)
}

/// Builds the per-scale pyramid of a training clip whose spatial size must
/// equal the top scale.
pub fn build_pyramid<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    scales: &ScaleConfig,
) -> Result<ScalePyramid<T>> {
    let (bx, _, hx, wx) = x.dims4()?;
    let (by, _, hy, wy) = y.dims4()?;
    if bx != by || (hx, wx) != (hy, wy) {
        return Err(Error::Shape(format!(
            "inputs {:?} and targets {:?} disagree",
            x.shape(),
            y.shape()
        )));
    }
    let inputs = downscale_levels(x, scales.count())?;
    if hx != scales.top() || wx != scales.top() {
        return Err(Error::Shape(format!(
            "clip is {hx}x{wx}, model scales expect {}x{}",
            scales.top(),
            scales.top()
        )));
    }
    let targets = downscale_levels(y, scales.count())?;
    Ok(ScalePyramid { inputs, targets })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_clip_is_constant_everywhere() {
        let scales = ScaleConfig::new(16, 3).unwrap();
        let x = Tensor::<f32>::full(&[2, 4, 16, 16], 0.25);
        let y = Tensor::<f32>::full(&[2, 1, 16, 16], -0.5);
        let p = build_pyramid(&x, &y, &scales).unwrap();
        for (k, (xi, yi)) in p.inputs.iter().zip(&p.targets).enumerate() {
            assert_eq!(xi.shape()[2], scales.size(k));
            assert!(xi.data().iter().all(|&v| v == 0.25));
            assert!(yi.data().iter().all(|&v| v == -0.5));
        }
    }

    #[test]
    fn single_scale_is_identity() {
        let scales = ScaleConfig::new(8, 1).unwrap();
        let x = Tensor::<f64>::from_fn(&[1, 2, 8, 8], |i| i as f64);
        let y = x.slice_channels(0, 1).unwrap();
        let p = build_pyramid(&x, &y, &scales).unwrap();
        assert_eq!(p.inputs, vec![x]);
        assert_eq!(p.targets, vec![y]);
    }

    #[test]
    fn rejects_wrong_sizes() {
        let scales = ScaleConfig::new(16, 3).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 4, 18, 18]);
        let y = Tensor::<f32>::zeros(&[1, 1, 18, 18]);
        assert!(build_pyramid(&x, &y, &scales).is_err());
        let x = Tensor::<f32>::zeros(&[1, 4, 8, 8]);
        let y = Tensor::<f32>::zeros(&[1, 1, 8, 8]);
        assert!(build_pyramid(&x, &y, &scales).is_err());
    }
}
