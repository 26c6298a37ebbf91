use indexmap::IndexMap;

use crate::compute::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Named trainable tensors, each carrying a gradient buffer of its own shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: IndexMap<String, Tensor<T>>,
    updates: u64,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
            updates: 0,
        }
    }

    /// Adds a parameter with a zeroed gradient. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, mut value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        value.clear_grad();
        value.ensure_grad();
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn set_updates(&mut self, updates: u64) {
        self.updates = updates;
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.clear_grad();
            p.ensure_grad();
        }
    }

    /// Adds `grad` into the stored gradient of `name`.
    pub fn accumulate_grad(&mut self, name: &str, grad: &[T]) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.len() != grad.len() {
            return Err(Error::Shape(format!(
                "gradient for `{name}` has {} elements, parameter has {}",
                grad.len(),
                p.len()
            )));
        }
        for (g, &d) in p.ensure_grad().iter_mut().zip(grad) {
            *g = *g + d;
        }
        Ok(())
    }

    /// Plain SGD: `w -= lr * grad`, then zero the gradients and bump the update counter.
    pub fn sgd_step(&mut self, lr: T) -> Result<()> {
        for (name, p) in self.params.iter() {
            if p.grad().is_none() {
                return Err(Error::MissingGradient(name.clone()));
            }
        }
        for p in self.params.values_mut() {
            let (data, grad) = p.data_and_grad_mut();
            let grad = grad.expect("checked above");
            for (w, g) in data.iter_mut().zip(grad.iter_mut()) {
                *w = *w - lr * *g;
                *g = T::zero();
            }
        }
        self.updates += 1;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, p) in self.iter() {
            out.insert(name, p.cast()).expect("names already unique");
        }
        out.updates = self.updates;
        out
    }

    /// True when names, shapes and values agree bit for bit.
    pub fn same_values(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(other.params.iter())
                .all(|((na, a), (nb, b))| {
                    na == nb
                        && a.shape() == b.shape()
                        && a.data()
                            .iter()
                            .zip(b.data())
                            .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
                })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(w: f64, g: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(w)).unwrap();
        s.accumulate_grad("w", &[g]).unwrap();
        s
    }

    #[test]
    fn sgd_single_step() {
        let mut s = store(1.0, 0.5);
        s.sgd_step(0.1).unwrap();
        assert!((s.get("w").unwrap().data()[0] - 0.95).abs() < 1e-15);
        assert_eq!(s.get("w").unwrap().grad().unwrap(), &[0.0]);
        assert_eq!(s.updates(), 1);
    }

    #[test]
    fn sgd_zero_rate_keeps_values() {
        let mut s = store(1.0, 0.5);
        s.sgd_step(0.0).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[1.0]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = store(1.0, 0.0);
        assert!(s.insert("w", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = store(1.0, 0.5);
        s.get_mut("w").unwrap().clear_grad();
        assert!(matches!(s.sgd_step(0.1), Err(Error::MissingGradient(_))));
    }

    #[test]
    fn sgd_is_deterministic() {
        let mut a = ParamStore::<f32>::new();
        a.insert("w", Tensor::from_fn(&[16], |i| (i as f32).sin()))
            .unwrap();
        a.accumulate_grad(
            "w",
            &(0..16).map(|i| (i as f32 * 0.7).cos()).collect::<Vec<_>>(),
        )
        .unwrap();
        let mut b = a.clone();
        a.sgd_step(0.013).unwrap();
        b.sgd_step(0.013).unwrap();
        assert!(a.same_values(&b));
    }

    #[test]
    fn two_steps_match_summed_gradient_on_linear_model() {
        // f(w) = c . w has a constant gradient c, so two steps with lr equal
        // one step with gradient 2c.
        let c = [0.25, -1.5, 3.0];
        let mut two = ParamStore::<f64>::new();
        two.insert("w", Tensor::new(vec![3], vec![1.0, 2.0, -1.0]).unwrap())
            .unwrap();
        let mut one = two.clone();
        for _ in 0..2 {
            two.accumulate_grad("w", &c).unwrap();
            two.sgd_step(0.1).unwrap();
        }
        let summed: Vec<f64> = c.iter().map(|v| 2.0 * v).collect();
        one.accumulate_grad("w", &summed).unwrap();
        one.sgd_step(0.1).unwrap();
        for (a, b) in two
            .get("w")
            .unwrap()
            .data()
            .iter()
            .zip(one.get("w").unwrap().data())
        {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
