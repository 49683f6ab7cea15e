use rand::Rng;

use super::tensor::{Real, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub frozen: bool,
    velocity: Tensor<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>, frozen: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        let velocity = grad.clone();
        Parameter {
            name: name.into(),
            value,
            grad,
            frozen,
            velocity,
        }
    }
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, frozen: bool) -> ParamId {
        self.params.push(Parameter::new(name, value, frozen));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(T::zero());
        }
    }

    /// Clears optimizer state as well as gradients.
    pub fn reset_velocity(&mut self) {
        for p in &mut self.params {
            p.velocity.data_mut().fill(T::zero());
        }
    }

    /// `grad += scale·g` for every parameter `g` covers.
    pub fn accumulate(&mut self, grads: &[(ParamId, Tensor<T>)], scale: T) {
        for (id, g) in grads {
            self.params[id.0].grad.add_scaled(g, scale);
        }
    }

    /// L2 norm of the trainable gradients taken together.
    pub fn grad_norm(&self) -> T {
        let mut sq = T::zero();
        for p in self.params.iter().filter(|p| !p.frozen) {
            for &g in p.grad.data() {
                sq = sq + g * g;
            }
        }
        sq.sqrt()
    }

    /// Rescales trainable gradients so their joint norm is at most
    /// `max_norm`. Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: T) -> T {
        let norm = self.grad_norm();
        if norm > max_norm && norm > T::zero() {
            let s = max_norm / norm;
            for p in self.params.iter_mut().filter(|p| !p.frozen) {
                p.grad.data_mut().iter_mut().for_each(|g| *g = *g * s);
            }
        }
        norm
    }

    /// SGD with momentum: `v ← μ·v + g; p ← p − η·v`. Frozen parameters and
    /// their velocity are left untouched.
    pub fn sgd_step(&mut self, learning_rate: T, momentum: T) {
        for p in self.params.iter_mut().filter(|p| !p.frozen) {
            for ((v, &g), w) in p
                .velocity
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(p.value.data_mut())
            {
                *v = momentum * *v + g;
                *w = *w - learning_rate * *v;
            }
        }
    }

    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter::new(p.name.clone(), p.value.cast(), p.frozen))
                .collect(),
        }
    }
}

/// Uniform weights in `±sqrt(6/(fan_in+fan_out))`.
pub fn glorot_uniform<T: Real, R: Rng>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.random_range(-limit..=limit)))
        .collect();
    Tensor::new(shape, data).expect("consistent shape")
}
