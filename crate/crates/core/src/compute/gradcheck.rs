use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::compute::{Bound, Graph, ParamStore, Scalar, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|a - n| / max(1e-8, |a| + |n|)` over the checked coordinates.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn evaluate<T, F>(params: &ParamStore<T>, f: &mut F) -> Result<T>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = g.bind(params, false);
    let out = f(&mut g, &bound)?;
    let v = g.value(out).item()?;
    if !v.is_finite() {
        return Err(Error::Divergence(format!("objective evaluated to {v}")));
    }
    Ok(v)
}

/// Checks every coordinate of every parameter.
///
/// `f` builds a scalar objective from the bound parameters; it is called once
/// with a trainable binding for the analytic gradient and twice per
/// coordinate for `(f(w + eps) - f(w - eps)) / 2 eps`.
pub fn grad_check<T, F>(params: &ParamStore<T>, epsilon: T, f: F) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &Bound) -> Result<Var>,
{
    grad_check_subset(params, epsilon, usize::MAX, 0, f)
}

/// Like [`grad_check`], but checks at most `per_param` randomly chosen
/// coordinates of each parameter.
pub fn grad_check_subset<T, F>(
    params: &ParamStore<T>,
    epsilon: T,
    per_param: usize,
    seed: u64,
    mut f: F,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = g.bind(params, true);
    let out = f(&mut g, &bound)?;
    if !g.value(out).item()?.is_finite() {
        return Err(Error::Divergence("objective is not finite".into()));
    }
    g.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coordinates: 0,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut probe = params.clone();
    for name in names {
        let var = bound.var(&name)?;
        let n = params.get(&name)?.len();
        let analytic: Vec<f64> = match g.grad(var) {
            Some(gr) => gr.iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; n],
        };
        let coords: Vec<usize> = if per_param >= n {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, per_param).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let orig = probe.get(&name)?.data()[i];
            probe.get_mut(&name)?.data_mut()[i] = orig + epsilon;
            let plus = evaluate(&probe, &mut f)?;
            probe.get_mut(&name)?.data_mut()[i] = orig - epsilon;
            let minus = evaluate(&probe, &mut f)?;
            probe.get_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus.as_f64() - minus.as_f64()) / (2.0 * epsilon.as_f64());
            let err = relative_error(analytic[i], numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
                report.analytic_at_worst = analytic[i];
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}
