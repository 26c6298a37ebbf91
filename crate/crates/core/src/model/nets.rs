use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compute::{Bound, Graph, ParamStore, Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::pyramid::downscale_levels;
use crate::model::{DiscriminatorSpec, GeneratorSpec, ScaleConfig};

pub fn gen_conv_name(scale: usize, layer: usize, what: &str) -> String {
    format!("g{}.conv{}.{}", scale + 1, layer + 1, what)
}

pub fn disc_conv_name(scale: usize, layer: usize, what: &str) -> String {
    format!("d{}.conv{}.{}", scale + 1, layer + 1, what)
}

pub fn disc_fc_name(scale: usize, layer: usize, what: &str) -> String {
    format!("d{}.fc{}.{}", scale + 1, layer + 1, what)
}

fn uniform_weight<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| {
        T::from_f64((rng.gen::<f64>() * 2.0 - 1.0) * bound)
    })
}

/// Generator parameters: weights uniform in `±1/sqrt(fan_in)`, zero biases.
pub fn init_generator<T: Scalar>(spec: &GeneratorSpec, seed: u64) -> Result<ParamStore<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (k, stack) in spec.scales.iter().enumerate() {
        let mut chans = vec![spec.stack_in_channels(k)];
        chans.extend_from_slice(&stack.maps);
        chans.push(spec.out_channels());
        for (l, &ks) in stack.kernels.iter().enumerate() {
            let (cin, cout) = (chans[l], chans[l + 1]);
            store.insert(
                gen_conv_name(k, l, "weight"),
                uniform_weight(&mut rng, &[cout, cin, ks, ks], cin * ks * ks),
            )?;
            store.insert(gen_conv_name(k, l, "bias"), Tensor::zeros(&[cout]))?;
        }
    }
    Ok(store)
}

/// Discriminator parameters; the fully connected fan-in depends on the
/// input size of each scale.
pub fn init_discriminator<T: Scalar>(
    spec: &DiscriminatorSpec,
    sizes: &ScaleConfig,
    seed: u64,
) -> Result<ParamStore<T>> {
    spec.validate(sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (k, sc) in spec.scales.iter().enumerate() {
        let mut cin = spec.in_channels();
        for (l, (&maps, &ks)) in sc.maps.iter().zip(&sc.kernels).enumerate() {
            store.insert(
                disc_conv_name(k, l, "weight"),
                uniform_weight(&mut rng, &[maps, cin, ks, ks], cin * ks * ks),
            )?;
            store.insert(disc_conv_name(k, l, "bias"), Tensor::zeros(&[maps]))?;
            cin = maps;
        }
        let fs = sc.feature_size(sizes.size(k))?;
        let mut fin = cin * fs * fs;
        for (l, &fout) in sc.fc.iter().chain(std::iter::once(&1)).enumerate() {
            store.insert(
                disc_fc_name(k, l, "weight"),
                uniform_weight(&mut rng, &[fout, fin], fin),
            )?;
            store.insert(disc_fc_name(k, l, "bias"), Tensor::zeros(&[fout]))?;
            fin = fout;
        }
    }
    Ok(store)
}

/// Padded conv/ReLU stack of scale `k`, ending in Tanh.
fn generator_stack<T: Scalar>(
    g: &mut Graph<T>,
    spec: &GeneratorSpec,
    params: &Bound,
    k: usize,
    input: Var,
) -> Result<Var> {
    let stack = &spec.scales[k];
    let mut h = input;
    for (l, &ks) in stack.kernels.iter().enumerate() {
        let w = params.var(&gen_conv_name(k, l, "weight"))?;
        let b = params.var(&gen_conv_name(k, l, "bias"))?;
        h = g.conv2d(h, w, b, (ks - 1) / 2)?;
        h = if l + 1 == stack.kernels.len() {
            g.tanh(h)
        } else {
            g.relu(h)
        };
    }
    Ok(h)
}

/// Coarse-to-fine prediction. `inputs[k]` holds `X_k`; returns `Ŷ_k` for every scale.
///
/// Scale 0 sees only `X_0`. Every finer scale predicts a residual from
/// `X_k` stacked with the upsampled coarser prediction, and the sum is
/// clamped to `[-1, 1]`.
pub fn generator_forward<T: Scalar>(
    g: &mut Graph<T>,
    spec: &GeneratorSpec,
    params: &Bound,
    inputs: &[Var],
) -> Result<Vec<Var>> {
    if inputs.len() != spec.num_scales() {
        return Err(Error::Shape(format!(
            "generator has {} scales, got {} input levels",
            spec.num_scales(),
            inputs.len()
        )));
    }
    let mut preds: Vec<Var> = Vec::with_capacity(inputs.len());
    for (k, &x) in inputs.iter().enumerate() {
        let (_, c, h, w) = g.value(x).dims4()?;
        if c != spec.in_channels() {
            return Err(Error::Shape(format!(
                "generator expects {} input channels, got {}",
                spec.in_channels(),
                c
            )));
        }
        let pred = match preds.last() {
            None => generator_stack(g, spec, params, k, x)?,
            Some(&coarse) => {
                let up = g.upsample(coarse, h, w, spec.upsample)?;
                let joined = g.concat_channels(x, up)?;
                let residual = generator_stack(g, spec, params, k, joined)?;
                let sum = g.add(up, residual)?;
                g.clamp(sum, -T::one(), T::one())
            }
        };
        preds.push(pred);
    }
    Ok(preds)
}

/// `D_k(X_k, candidate)`: probability, per batch item, that the candidate
/// future frames are real. Output shape `(batch, 1)`.
pub fn discriminator_forward<T: Scalar>(
    g: &mut Graph<T>,
    spec: &DiscriminatorSpec,
    sizes: &ScaleConfig,
    params: &Bound,
    k: usize,
    x_k: Var,
    candidate_k: Var,
) -> Result<Var> {
    let z = discriminator_logits(g, spec, sizes, params, k, x_k, candidate_k)?;
    Ok(g.sigmoid(z))
}

/// [`discriminator_forward`] before the final sigmoid.
pub fn discriminator_logits<T: Scalar>(
    g: &mut Graph<T>,
    spec: &DiscriminatorSpec,
    sizes: &ScaleConfig,
    params: &Bound,
    k: usize,
    x_k: Var,
    candidate_k: Var,
) -> Result<Var> {
    let sc = spec
        .scales
        .get(k)
        .ok_or_else(|| Error::Shape(format!("discriminator has no scale {}", k + 1)))?;
    let expected = sizes.size(k);
    for v in [x_k, candidate_k] {
        let (_, _, h, w) = g.value(v).dims4()?;
        if h != expected || w != expected {
            return Err(Error::Shape(format!(
                "discriminator scale {} expects {expected}x{expected} inputs, got {h}x{w}",
                k + 1
            )));
        }
    }
    let mut h = g.concat_channels(x_k, candidate_k)?;
    if g.value(h).dims4()?.1 != spec.in_channels() {
        return Err(Error::Shape(format!(
            "discriminator expects {} channels, got {}",
            spec.in_channels(),
            g.value(h).dims4()?.1
        )));
    }
    for l in 0..sc.maps.len() {
        let w = params.var(&disc_conv_name(k, l, "weight"))?;
        let b = params.var(&disc_conv_name(k, l, "bias"))?;
        h = g.conv2d(h, w, b, 0)?;
        h = g.relu(h);
    }
    if sc.pool {
        h = g.maxpool2x2(h)?;
    }
    h = g.flatten(h)?;
    let n_fc = sc.fc.len() + 1;
    for l in 0..n_fc {
        let w = params.var(&disc_fc_name(k, l, "weight"))?;
        let b = params.var(&disc_fc_name(k, l, "bias"))?;
        h = g.linear(h, w, b)?;
        if l + 1 < n_fc {
            h = g.relu(h);
        }
    }
    Ok(h)
}

/// Generator spec bundled with its parameters, for inference on tensors.
#[derive(Debug, Clone)]
pub struct Generator<T> {
    pub spec: GeneratorSpec,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Generator<T> {
    pub fn new(spec: GeneratorSpec, params: ParamStore<T>) -> Self {
        Self { spec, params }
    }

    /// Predictions at every scale for already-built input levels.
    pub fn forward_levels(&self, levels: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new();
        let bound = g.bind(&self.params, false);
        let xs: Vec<Var> = levels.iter().map(|x| g.input(x.clone())).collect();
        let preds = generator_forward(&mut g, &self.spec, &bound, &xs)?;
        Ok(preds.into_iter().map(|v| g.value(v).clone()).collect())
    }

    /// Full-resolution prediction for input frames of any size divisible by
    /// `2^(scales-1)`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let levels = downscale_levels(x, self.spec.num_scales())?;
        let mut out = self.forward_levels(&levels)?;
        Ok(out.pop().expect("at least one scale"))
    }

    /// Applies the model `steps` times, sliding the input window forward over
    /// its own predictions. Returns the `steps * frames_out` predicted frames
    /// stacked along channels.
    pub fn recursive_predict(&self, seed_frames: &Tensor<T>, steps: usize) -> Result<Tensor<T>> {
        if steps < 1 {
            return Err(Error::Config(
                "recursive prediction needs at least one step".into(),
            ));
        }
        let (_, c, _, _) = seed_frames.dims4()?;
        let in_ch = self.spec.in_channels();
        if c != in_ch {
            return Err(Error::Shape(format!(
                "seed has {c} channels, model expects {in_ch}"
            )));
        }
        let mut window = seed_frames.clone();
        let mut outputs: Option<Tensor<T>> = None;
        for _ in 0..steps {
            let pred = self.predict(&window)?;
            let joined = crate::compute::kernels::concat_channels(&window, &pred)?;
            let total = joined.dims4()?.1;
            window = joined.slice_channels(total - in_ch, in_ch)?;
            outputs = Some(match outputs {
                None => pred,
                Some(acc) => crate::compute::kernels::concat_channels(&acc, &pred)?,
            });
        }
        Ok(outputs.expect("steps >= 1"))
    }
}
