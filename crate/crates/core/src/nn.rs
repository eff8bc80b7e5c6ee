//! Parameter containers and the small layers shared by every block.

use mxt_tensor::{Conv2dSpec, Real, Result, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Named, ordered access to the trainable tensors of a module tree.
pub trait Params {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>);
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>);

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.params("", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.params_mut("", &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Params for Tensor {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((prefix.to_string(), self));
    }
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((prefix.to_string(), self));
    }
}

impl<T: Params> Params for Option<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        if let Some(m) = self {
            m.params(prefix, out);
        }
    }
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        if let Some(m) = self {
            m.params_mut(prefix, out);
        }
    }
}

impl<T: Params> Params for Vec<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, m) in self.iter().enumerate() {
            m.params(&join(prefix, &i.to_string()), out);
        }
    }
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, m) in self.iter_mut().enumerate() {
            m.params_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

/// Implements [`Params`] by visiting the listed fields in order.
macro_rules! impl_params {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::nn::Params for $ty {
            fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a mxt_tensor::Tensor)>) {
                $( $crate::nn::Params::params(&self.$field, &$crate::nn::join(prefix, stringify!($field)), out); )*
            }
            fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut mxt_tensor::Tensor)>) {
                $( $crate::nn::Params::params_mut(&mut self.$field, &$crate::nn::join(prefix, stringify!($field)), out); )*
            }
        }
    };
}
pub(crate) use impl_params;

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.gen_range(-bound..=bound) as Real)
        .collect();
    Tensor::param(data, shape).expect("shape matches data")
}

pub fn constant(shape: &[usize], value: f64) -> Tensor {
    Tensor::full(shape, value as Real).requires_grad_()
}

/// `y = x·W + b` over the last axis; `W` is (in, out).
#[derive(Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}
impl_params!(Linear { weight, bias });

impl Linear {
    pub fn new(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize, bias: bool) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        Linear {
            weight: uniform(rng, &[d_in, d_out], bound),
            bias: bias.then(|| constant(&[d_out], 0.0)),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight)?;
        match &self.bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}

#[derive(Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    spec: Conv2dSpec,
}
impl_params!(Conv2d { weight, bias });

impl Conv2d {
    pub fn new(
        rng: &mut ChaCha8Rng,
        cin: usize,
        cout: usize,
        kernel: usize,
        spec: Conv2dSpec,
    ) -> Self {
        let per_group = cin / spec.groups;
        let fan_in = per_group * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Conv2d {
            weight: uniform(rng, &[cout, per_group, kernel, kernel], bound),
            bias: Some(constant(&[cout], 0.0)),
            spec,
        }
    }

    pub fn pointwise(rng: &mut ChaCha8Rng, cin: usize, cout: usize) -> Self {
        Self::new(
            rng,
            cin,
            cout,
            1,
            Conv2dSpec {
                stride: 1,
                padding: 0,
                groups: 1,
            },
        )
    }

    pub fn same3x3(rng: &mut ChaCha8Rng, cin: usize, cout: usize) -> Self {
        Self::new(rng, cin, cout, 3, Conv2dSpec::same(3))
    }

    pub fn depthwise3x3(rng: &mut ChaCha8Rng, channels: usize) -> Self {
        Self::new(
            rng,
            channels,
            channels,
            3,
            Conv2dSpec::depthwise(3, channels),
        )
    }

    pub fn strided3x3(rng: &mut ChaCha8Rng, cin: usize, cout: usize) -> Self {
        Self::new(
            rng,
            cin,
            cout,
            3,
            Conv2dSpec {
                stride: 2,
                padding: 1,
                groups: 1,
            },
        )
    }

    /// A convolution over fixed tensors that are never trained.
    pub fn frozen(weight: Tensor, bias: Option<Tensor>, spec: Conv2dSpec) -> Self {
        Conv2d { weight, bias, spec }
    }

    pub fn spec(&self) -> Conv2dSpec {
        self.spec
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.weight, self.bias.as_ref(), self.spec)
    }
}

pub const LN_EPS: Real = 1e-6;

/// Layer norm over one axis with learnable scale and shift.
#[derive(Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}
impl_params!(LayerNorm { gamma, beta });

impl LayerNorm {
    pub fn new(channels: usize) -> Self {
        LayerNorm {
            gamma: constant(&[channels], 1.0),
            beta: constant(&[channels], 0.0),
        }
    }

    pub fn forward(&self, x: &Tensor, axis: usize) -> Result<Tensor> {
        x.layer_norm(axis, &self.gamma, &self.beta, LN_EPS)
    }
}
