//! Training objectives: ℓp, gradient difference, binary cross-entropy, the
//! two adversarial losses and their weighted combination.
//!
//! Every loss is recorded on a [`Graph`] so it can be differentiated. Sums
//! run over all elements of an item and are averaged over the batch (the
//! leading axis of tensors of rank two or more; a rank-1 tensor is one item).

use crate::compute::{Bound, CustomOp, Graph, Scalar, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::model::{discriminator_logits, DiscriminatorSpec, ScaleConfig};

/// Weights of the combined generator objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_lp: f64,
    pub lambda_gdl: f64,
    pub p: u32,
    pub alpha: u32,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.lambda_adv, self.lambda_lp, self.lambda_gdl];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if ws.iter().all(|&w| w == 0.0) {
            return Err(Error::Config(
                "at least one loss weight must be positive".into(),
            ));
        }
        if !(1..=2).contains(&self.p) {
            return Err(Error::Config(format!("p must be 1 or 2, got {}", self.p)));
        }
        if self.alpha < 1 {
            return Err(Error::Config("alpha must be at least 1".into()));
        }
        Ok(())
    }
}

const BCE_EPS: f64 = 1e-7;

fn batch_of<T: Scalar>(t: &Tensor<T>) -> usize {
    if t.shape().len() >= 2 {
        t.shape()[0].max(1)
    } else {
        1
    }
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!(
            "{what}: prediction {:?} and target {:?} differ",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn powi<T: Scalar>(v: T, e: u32) -> T {
    v.powi(e as i32)
}

// ---------------------------------------------------------------------------
// ℓp

struct LpOp {
    p: u32,
}

impl<T: Scalar> CustomOp<T> for LpOp {
    fn name(&self) -> &'static str {
        "lp_loss"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        g: &[T],
        needs: &[bool],
    ) -> Result<Vec<Option<Vec<T>>>> {
        let (pred, target) = (inputs[0], inputs[1]);
        let scale = g[0] / T::from_f64(batch_of(pred) as f64);
        let p = T::from_f64(self.p as f64);
        let d: Vec<T> = pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| {
                let diff = a - b;
                let local = if self.p == 1 {
                    sign(diff)
                } else {
                    p * powi(diff.abs(), self.p - 1) * sign(diff)
                };
                local * scale
            })
            .collect();
        let dt = needs[1].then(|| d.iter().map(|&v| -v).collect());
        Ok(vec![needs[0].then_some(d), dt])
    }

    fn kink_margin(&self, inputs: &[&Tensor<T>]) -> Option<f64> {
        (self.p == 1).then(|| {
            inputs[0]
                .data()
                .iter()
                .zip(inputs[1].data())
                .map(|(&a, &b)| (a - b).abs().as_f64())
                .fold(f64::INFINITY, f64::min)
        })
    }
}

/// `sum |pred - target|^p`, averaged over the batch.
pub fn lp_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var, p: u32) -> Result<Var> {
    if !(1..=2).contains(&p) {
        return Err(Error::Config(format!("p must be 1 or 2, got {p}")));
    }
    let (a, b) = (g.value(pred), g.value(target));
    same_shape(a, b, "lp_loss")?;
    let total: T = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| powi((x - y).abs(), p))
        .sum();
    let value = total / T::from_f64(batch_of(a) as f64);
    Ok(g.custom(&[pred, target], Tensor::scalar(value), Box::new(LpOp { p })))
}

// ---------------------------------------------------------------------------
// gradient difference

struct GdlOp {
    alpha: u32,
}

/// Visits every vertical then horizontal neighbour pair `(here, before)` of
/// each plane; flat indices.
fn for_each_pair(shape: &[usize], mut f: impl FnMut(usize, usize)) {
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let planes: usize = shape[..shape.len() - 2].iter().product();
    for plane in 0..planes {
        let base = plane * h * w;
        for i in 0..h {
            for j in 0..w {
                let here = base + i * w + j;
                if i > 0 {
                    f(here, here - w);
                }
                if j > 0 {
                    f(here, here - 1);
                }
            }
        }
    }
}

fn gdl_check<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    same_shape(a, b, "gdl_loss")?;
    let s = a.shape();
    if s.len() < 2 || s[s.len() - 1] < 2 || s[s.len() - 2] < 2 {
        return Err(shape_err!(
            "gdl_loss needs spatial dimensions of at least 2, got {:?}",
            s
        ));
    }
    Ok(())
}

impl<T: Scalar> CustomOp<T> for GdlOp {
    fn name(&self) -> &'static str {
        "gdl_loss"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        g: &[T],
        needs: &[bool],
    ) -> Result<Vec<Option<Vec<T>>>> {
        let (pred, target) = (inputs[0].data(), inputs[1].data());
        let scale = g[0] / T::from_f64(batch_of(inputs[0]) as f64);
        let alpha = T::from_f64(self.alpha as f64);
        let mut dp = vec![T::zero(); pred.len()];
        let mut dt = vec![T::zero(); target.len()];
        for_each_pair(inputs[0].shape(), |here, before| {
            let gt = target[here] - target[before];
            let gp = pred[here] - pred[before];
            let t = gt.abs() - gp.abs();
            // d|t|^a/dt
            let outer = if self.alpha == 1 {
                sign(t)
            } else {
                alpha * powi(t.abs(), self.alpha - 1) * sign(t)
            } * scale;
            let wp = -outer * sign(gp);
            dp[here] = dp[here] + wp;
            dp[before] = dp[before] - wp;
            let wt = outer * sign(gt);
            dt[here] = dt[here] + wt;
            dt[before] = dt[before] - wt;
        });
        Ok(vec![needs[0].then_some(dp), needs[1].then_some(dt)])
    }

    /// Neighbour differences near zero, and for alpha = 1 also the two
    /// gradient magnitudes being nearly equal.
    fn kink_margin(&self, inputs: &[&Tensor<T>]) -> Option<f64> {
        let (pred, target) = (inputs[0].data(), inputs[1].data());
        let mut best = f64::INFINITY;
        for_each_pair(inputs[0].shape(), |here, before| {
            let gp = (pred[here] - pred[before]).as_f64();
            let gt = (target[here] - target[before]).as_f64();
            best = best.min(gp.abs()).min(gt.abs());
            if self.alpha == 1 {
                best = best.min((gt.abs() - gp.abs()).abs());
            }
        });
        Some(best)
    }
}

/// Sum over vertical and horizontal neighbour pairs of
/// `| |ΔY| - |ΔŶ| |^alpha`, averaged over the batch. No padding: only pairs
/// where both pixels exist contribute.
pub fn gdl_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var, alpha: u32) -> Result<Var> {
    if alpha < 1 {
        return Err(Error::Config("alpha must be at least 1".into()));
    }
    let (a, b) = (g.value(pred), g.value(target));
    gdl_check(a, b)?;
    let (pd, td) = (a.data(), b.data());
    let mut total = T::zero();
    for_each_pair(a.shape(), |here, before| {
        let t = (td[here] - td[before]).abs() - (pd[here] - pd[before]).abs();
        total = total + powi(t.abs(), alpha);
    });
    let value = total / T::from_f64(batch_of(a) as f64);
    Ok(g.custom(
        &[pred, target],
        Tensor::scalar(value),
        Box::new(GdlOp { alpha }),
    ))
}

// ---------------------------------------------------------------------------
// binary cross-entropy

struct BceOp<T> {
    targets: Vec<T>,
}

impl<T: Scalar> CustomOp<T> for BceOp<T> {
    fn name(&self) -> &'static str {
        "bce_loss"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        g: &[T],
        _: &[bool],
    ) -> Result<Vec<Option<Vec<T>>>> {
        let n = T::from_f64(self.targets.len() as f64);
        let (lo, hi) = (T::from_f64(BCE_EPS), T::one() - T::from_f64(BCE_EPS));
        let d = inputs[0]
            .data()
            .iter()
            .zip(&self.targets)
            .map(|(&p, &t)| {
                if p < lo || p > hi {
                    T::zero()
                } else {
                    (-t / p + (T::one() - t) / (T::one() - p)) * g[0] / n
                }
            })
            .collect();
        Ok(vec![Some(d)])
    }

    fn kink_margin(&self, inputs: &[&Tensor<T>]) -> Option<f64> {
        let (lo, hi) = (BCE_EPS, 1.0 - BCE_EPS);
        inputs[0]
            .data()
            .iter()
            .map(|v| {
                let v = v.as_f64();
                (v - lo).abs().min((v - hi).abs())
            })
            .reduce(f64::min)
    }
}

/// `-mean_i [t_i log p_i + (1 - t_i) log(1 - p_i)]` with `p` clamped to
/// `[1e-7, 1 - 1e-7]`. One probability per batch item.
pub fn bce_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, targets: &[T]) -> Result<Var> {
    let p = g.value(pred);
    if p.len() != targets.len() || targets.is_empty() {
        return Err(shape_err!(
            "bce_loss: {} predictions for {} targets",
            p.len(),
            targets.len()
        ));
    }
    if let Some(bad) = targets.iter().find(|&&t| t != T::zero() && t != T::one()) {
        return Err(Error::Config(format!(
            "bce target must be 0 or 1, got {bad}"
        )));
    }
    let (lo, hi) = (T::from_f64(BCE_EPS), T::one() - T::from_f64(BCE_EPS));
    let total: T = p
        .data()
        .iter()
        .zip(targets)
        .map(|(&v, &t)| {
            let v = v.max(lo).min(hi);
            -(t * v.ln() + (T::one() - t) * (T::one() - v).ln())
        })
        .sum();
    let value = total / T::from_f64(targets.len() as f64);
    Ok(g.custom(
        &[pred],
        Tensor::scalar(value),
        Box::new(BceOp {
            targets: targets.to_vec(),
        }),
    ))
}

/// `ln(1 + e^x)` without overflow.
fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

struct BceLogitsOp<T> {
    targets: Vec<T>,
}

impl<T: Scalar> CustomOp<T> for BceLogitsOp<T> {
    fn name(&self) -> &'static str {
        "bce_logits_loss"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        g: &[T],
        _: &[bool],
    ) -> Result<Vec<Option<Vec<T>>>> {
        let n = T::from_f64(self.targets.len() as f64);
        let d = inputs[0]
            .data()
            .iter()
            .zip(&self.targets)
            .map(|(&z, &t)| (T::one() / (T::one() + (-z).exp()) - t) * g[0] / n)
            .collect();
        Ok(vec![Some(d)])
    }
}

/// [`bce_loss`] of `sigmoid(logits)`, evaluated in logit space: no clamp,
/// and the gradient does not vanish when the sigmoid saturates.
pub fn bce_logits_loss<T: Scalar>(g: &mut Graph<T>, logits: Var, targets: &[T]) -> Result<Var> {
    let z = g.value(logits);
    if z.len() != targets.len() || targets.is_empty() {
        return Err(shape_err!(
            "bce_logits_loss: {} logits for {} targets",
            z.len(),
            targets.len()
        ));
    }
    if let Some(bad) = targets.iter().find(|&&t| t != T::zero() && t != T::one()) {
        return Err(Error::Config(format!(
            "bce target must be 0 or 1, got {bad}"
        )));
    }
    // -log σ(z) = softplus(-z), -log(1 - σ(z)) = softplus(z)
    let total: T = z
        .data()
        .iter()
        .zip(targets)
        .map(|(&v, &t)| {
            if t == T::one() {
                softplus(-v)
            } else {
                softplus(v)
            }
        })
        .sum();
    let value = total / T::from_f64(targets.len() as f64);
    Ok(g.custom(
        &[logits],
        Tensor::scalar(value),
        Box::new(BceLogitsOp {
            targets: targets.to_vec(),
        }),
    ))
}

// ---------------------------------------------------------------------------
// adversarial

/// Discriminator spec, its scale sizes, and bound parameters.
#[derive(Clone, Copy)]
pub struct DiscriminatorRef<'a> {
    pub spec: &'a DiscriminatorSpec,
    pub sizes: &'a ScaleConfig,
    pub params: &'a Bound,
}

fn check_levels(d: &DiscriminatorRef<'_>, lens: &[usize]) -> Result<()> {
    let n = d.spec.scales.len();
    if lens.iter().any(|&l| l != n) {
        return Err(shape_err!(
            "discriminator has {} scales, got levels {:?}",
            n,
            lens
        ));
    }
    Ok(())
}

fn batch_targets<T: Scalar>(g: &Graph<T>, v: Var, value: T) -> Result<Vec<T>> {
    Ok(vec![value; g.value(v).dims4()?.0])
}

/// `sum_k bce(D_k(X_k, Y_k), 1) + bce(D_k(X_k, Ŷ_k), 0)`.
///
/// The generated levels are copied into fresh constants so no gradient can
/// reach the generator.
pub fn adv_d_loss<T: Scalar>(
    g: &mut Graph<T>,
    d: DiscriminatorRef<'_>,
    inputs: &[Var],
    targets: &[Var],
    generated: &[Var],
) -> Result<Var> {
    check_levels(&d, &[inputs.len(), targets.len(), generated.len()])?;
    let mut terms = Vec::with_capacity(2 * inputs.len());
    for k in 0..inputs.len() {
        let fake = g.input(g.value(generated[k]).clone());
        let real_p = discriminator_logits(g, d.spec, d.sizes, d.params, k, inputs[k], targets[k])?;
        let ones = batch_targets(g, inputs[k], T::one())?;
        terms.push((bce_logits_loss(g, real_p, &ones)?, T::one()));
        let fake_p = discriminator_logits(g, d.spec, d.sizes, d.params, k, inputs[k], fake)?;
        let zeros = batch_targets(g, inputs[k], T::zero())?;
        terms.push((bce_logits_loss(g, fake_p, &zeros)?, T::one()));
    }
    g.weighted_sum(&terms)
}

/// `sum_k bce(D_k(X_k, Ŷ_k), 1)` with the discriminator frozen.
pub fn adv_g_loss<T: Scalar>(
    g: &mut Graph<T>,
    d: DiscriminatorRef<'_>,
    inputs: &[Var],
    generated: &[Var],
) -> Result<Var> {
    if d.params.is_trainable() {
        return Err(Error::Config(
            "adv_g_loss needs a frozen discriminator binding".into(),
        ));
    }
    check_levels(&d, &[inputs.len(), generated.len()])?;
    let mut terms = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let p = discriminator_logits(g, d.spec, d.sizes, d.params, k, inputs[k], generated[k])?;
        let ones = batch_targets(g, inputs[k], T::one())?;
        terms.push((bce_logits_loss(g, p, &ones)?, T::one()));
    }
    g.weighted_sum(&terms)
}

/// Nodes of the combined generator objective.
#[derive(Debug, Clone, Copy)]
pub struct CombinedLoss {
    pub total: Var,
    pub adv: Option<Var>,
    pub lp: Var,
    pub gdl: Var,
}

/// `λ_adv L_adv + λ_lp Σ_k lp(Ŷ_k, Y_k) + λ_gdl Σ_k gdl(Ŷ_k, Y_k)`.
///
/// The adversarial term is only built when `λ_adv > 0`; `disc` may then not
/// be `None`.
pub fn combined_loss<T: Scalar>(
    g: &mut Graph<T>,
    weights: &LossWeights,
    disc: Option<DiscriminatorRef<'_>>,
    inputs: &[Var],
    targets: &[Var],
    generated: &[Var],
) -> Result<CombinedLoss> {
    weights.validate()?;
    if targets.len() != generated.len() {
        return Err(shape_err!(
            "{} target levels for {} predictions",
            targets.len(),
            generated.len()
        ));
    }
    let mut lp_terms = Vec::with_capacity(generated.len());
    let mut gdl_terms = Vec::with_capacity(generated.len());
    for (&pred, &target) in generated.iter().zip(targets) {
        lp_terms.push((lp_loss(g, pred, target, weights.p)?, T::one()));
        if weights.lambda_gdl > 0.0 {
            gdl_terms.push((gdl_loss(g, pred, target, weights.alpha)?, T::one()));
        }
    }
    let lp = g.weighted_sum(&lp_terms)?;
    let gdl = g.weighted_sum(&gdl_terms)?;
    let mut terms = vec![(lp, T::from_f64(weights.lambda_lp))];
    if weights.lambda_gdl > 0.0 {
        terms.push((gdl, T::from_f64(weights.lambda_gdl)));
    }
    let adv = if weights.lambda_adv > 0.0 {
        let d = disc.ok_or_else(|| Error::Config("λ_adv > 0 needs a discriminator".into()))?;
        let adv = adv_g_loss(g, d, inputs, generated)?;
        terms.push((adv, T::from_f64(weights.lambda_adv)));
        Some(adv)
    } else {
        None
    };
    let total = g.weighted_sum(&terms)?;
    Ok(CombinedLoss {
        total,
        adv,
        lp,
        gdl,
    })
}
