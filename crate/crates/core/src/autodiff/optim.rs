use std::collections::HashMap;

use super::{GraphError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable tensor together with its Adam moment estimates.
#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    tensor: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        let n = tensor.len();
        Parameter {
            name: name.into(),
            tensor,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.tensor
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }
}

/// Named, ordered collection of parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId, GraphError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(GraphError::DuplicateParam(name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter::new(name, tensor));
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub(crate) fn ensure_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.grad_mut();
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.tensor.set_grad(None);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.tensor.grad())
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their joint L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for p in &mut self.params {
                if let Some(g) = p.tensor.take_grad() {
                    p.tensor.set_grad(Some(g.into_iter().map(|x| x * scale).collect()));
                }
            }
        }
        norm
    }
}

/// Adam with bias correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam {
            lr,
            ..Adam::default()
        }
    }

    /// Updates every parameter in place and clears the gradients. Fails
    /// without touching anything if some parameter has no gradient.
    pub fn step(&self, store: &mut ParamStore) -> Result<(), GraphError> {
        if let Some(p) = store.params.iter().find(|p| p.tensor.grad().is_none()) {
            return Err(GraphError::MissingGrad(p.name.clone()));
        }
        for p in &mut store.params {
            let grad = p.tensor.take_grad().expect("checked above");
            p.step += 1;
            let t = p.step as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let values = p.tensor.values_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g;
                p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = p.m[i] / bc1;
                let v_hat = p.v[i] / bc2;
                values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: Vec<f64>, grad: Option<Vec<f64>>) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(values)).unwrap();
        store.get_mut(id).tensor_mut().set_grad(grad);
        (store, id)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2 on step one, so the update is lr * g / (|g| + eps).
        let (mut store, id) = store_with(vec![1.0], Some(vec![2.0]));
        Adam::default().step(&mut store).unwrap();
        let delta = 1.0 - store.get(id).tensor().values()[0];
        let expected = 0.001 * 2.0 / (2.0 + 1e-8);
        assert!((delta - expected).abs() < 1e-15);
        assert!((0.00099..=0.001).contains(&delta));
        assert_eq!(store.get(id).step(), 1);
        assert!(store.get(id).tensor().grad().is_none());
    }

    #[test]
    fn zero_grad_leaves_value() {
        let (mut store, id) = store_with(vec![0.5, -0.5], Some(vec![0.0, 0.0]));
        Adam::default().step(&mut store).unwrap();
        assert_eq!(store.get(id).tensor().values(), &[0.5, -0.5]);
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::vector(vec![0.3, 0.7])).unwrap();
        let b = store.add("b", Tensor::vector(vec![0.3, 0.7])).unwrap();
        for _ in 0..5 {
            for id in [a, b] {
                store.get_mut(id).tensor_mut().set_grad(Some(vec![0.1, -0.4]));
            }
            Adam::default().step(&mut store).unwrap();
        }
        assert_eq!(store.get(a).tensor().values(), store.get(b).tensor().values());
    }

    #[test]
    fn missing_grad_names_parameter() {
        let (mut store, _) = store_with(vec![1.0], None);
        let err = Adam::default().step(&mut store).unwrap_err();
        assert_eq!(err, GraphError::MissingGrad("w".into()));
    }

    #[test]
    fn duplicate_names_rejected() {
        let (mut store, _) = store_with(vec![1.0], None);
        assert!(store.add("w", Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn clipping_caps_norm() {
        let (mut store, _) = store_with(vec![0.0, 0.0], Some(vec![3.0, 4.0]));
        let before = store.clip_grad_norm(1.0);
        assert!((before - 5.0).abs() < 1e-12);
        assert!((store.grad_norm() - 1.0).abs() < 1e-12);
    }
}
