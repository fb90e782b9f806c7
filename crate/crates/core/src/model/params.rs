use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Standard deviation of the random weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Every learnable tensor, in a fixed order: name, shape, initializer.
pub fn inventory(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (h, f) = (config.hidden, config.feature_dim());
    let mut out = vec![
        ("wte".to_string(), vec![config.vocab_size, h], Init::Normal),
        ("wpe".to_string(), vec![config.max_positions, h], Init::Normal),
        ("video.w".to_string(), vec![f, h], Init::Normal),
        ("video.b".to_string(), vec![h], Init::Zeros),
    ];
    for l in 0..config.n_layers {
        let p = |s: &str| format!("h{l}.{s}");
        out.extend([
            (p("ln1.g"), vec![h], Init::Ones),
            (p("ln1.b"), vec![h], Init::Zeros),
            (p("attn.q.w"), vec![h, h], Init::Normal),
            (p("attn.q.b"), vec![h], Init::Zeros),
            (p("attn.k.w"), vec![h, h], Init::Normal),
            (p("attn.v.w"), vec![h, h], Init::Normal),
            (p("attn.v.b"), vec![h], Init::Zeros),
            (p("attn.proj.w"), vec![h, h], Init::Normal),
            (p("attn.proj.b"), vec![h], Init::Zeros),
            (p("ln2.g"), vec![h], Init::Ones),
            (p("ln2.b"), vec![h], Init::Zeros),
            (p("mlp.fc.w"), vec![h, 4 * h], Init::Normal),
            (p("mlp.fc.b"), vec![4 * h], Init::Zeros),
            (p("mlp.proj.w"), vec![4 * h, h], Init::Normal),
            (p("mlp.proj.b"), vec![h], Init::Zeros),
        ]);
    }
    out.extend([
        ("ln_f.g".to_string(), vec![h], Init::Ones),
        ("ln_f.b".to_string(), vec![h], Init::Zeros),
        ("reg.w".to_string(), vec![h, f], Init::Normal),
        ("reg.b".to_string(), vec![f], Init::Zeros),
    ]);
    out
}

/// All learnable tensors of the model, addressable by name. The language
/// model head reuses `wte`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F> {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> ModelParams<F> {
    /// Seeded initialization: normal weights with std [`INIT_STD`], zero biases,
    /// unit layer-norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::init_with_std(config, seed, INIT_STD)
    }

    pub fn init_with_std(config: &ModelConfig, seed: u64, std: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let mut named = Vec::new();
        for (name, shape, init) in inventory(config) {
            let t = match init {
                Init::Normal => Tensor::from_fn(&shape, |_| F::from_f64(normal.sample(&mut rng))),
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::full(&shape, F::one()),
            };
            named.push((name, t));
        }
        Self::from_named(config.clone(), named)
    }

    /// Builds parameters from named tensors, requiring exactly the declared
    /// inventory with matching shapes.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor<F>)>) -> Result<Self> {
        config.validate()?;
        let mut by_name: HashMap<String, Tensor<F>> = named.into_iter().collect();
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, _) in inventory(&config) {
            let t = by_name
                .remove(&name)
                .ok_or_else(|| Error::Format(format!("missing parameter tensor {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "load parameter",
                    lhs: shape,
                    rhs: t.shape().to_vec(),
                });
            }
            names.push(name);
            tensors.push(t);
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Format(format!("unexpected parameter tensor {extra}")));
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self {
            config,
            names,
            tensors,
            index,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.index.get(name).map(|i| &self.tensors[*i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.index.get(name).map(|i| &mut self.tensors[*i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}
