use crate::error::{dim_err, Result, TensorError};
use crate::shape::{broadcast_shapes, broadcast_strides, for_each_offset};
use crate::tensor::Tensor;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryKind {
    Exp,
    Log,
    Neg,
    Silu,
    /// tanh approximation.
    Gelu,
    Softplus,
    Sqrt,
    Relu,
    LeakyRelu(Real),
    Tanh,
    Sigmoid,
    Abs,
    Square,
    Scale(Real),
    Shift(Real),
}

const GELU_K: Real = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: Real = 0.044715;

pub(crate) fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: Real) -> Real {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl UnaryKind {
    pub fn apply(self, x: Real) -> Real {
        match self {
            UnaryKind::Exp => x.exp(),
            UnaryKind::Log => x.ln(),
            UnaryKind::Neg => -x,
            UnaryKind::Silu => x * sigmoid(x),
            UnaryKind::Gelu => {
                let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
                0.5 * x * (1.0 + t)
            }
            UnaryKind::Softplus => softplus(x),
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Relu => x.max(0.0),
            UnaryKind::LeakyRelu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x
                }
            }
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Abs => x.abs(),
            UnaryKind::Square => x * x,
            UnaryKind::Scale(s) => s * x,
            UnaryKind::Shift(s) => x + s,
        }
    }

    /// d/dx given input `x` and output `y`.
    pub fn derivative(self, x: Real, y: Real) -> Real {
        match self {
            UnaryKind::Exp => y,
            UnaryKind::Log => 1.0 / x,
            UnaryKind::Neg => -1.0,
            UnaryKind::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            UnaryKind::Gelu => {
                let u = GELU_K * (x + GELU_C * x * x * x);
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
            }
            UnaryKind::Softplus => sigmoid(x),
            UnaryKind::Sqrt => 0.5 / y,
            UnaryKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryKind::LeakyRelu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            UnaryKind::Tanh => 1.0 - y * y,
            UnaryKind::Sigmoid => y * (1.0 - y),
            UnaryKind::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Square => 2.0 * x,
            UnaryKind::Scale(s) => s,
            UnaryKind::Shift(_) => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
            UnaryKind::Neg => "neg",
            UnaryKind::Silu => "silu",
            UnaryKind::Gelu => "gelu",
            UnaryKind::Softplus => "softplus",
            UnaryKind::Sqrt => "sqrt",
            UnaryKind::Relu => "relu",
            UnaryKind::LeakyRelu(_) => "leaky_relu",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Abs => "abs",
            UnaryKind::Square => "square",
            UnaryKind::Scale(_) => "scale",
            UnaryKind::Shift(_) => "shift",
        }
    }
}

impl BinaryKind {
    #[inline]
    fn apply(self, a: Real, b: Real) -> Real {
        match self {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
            BinaryKind::Div => a / b,
        }
    }

    /// (d/da, d/db)
    #[inline]
    fn partials(self, a: Real, b: Real) -> (Real, Real) {
        match self {
            BinaryKind::Add => (1.0, 1.0),
            BinaryKind::Sub => (1.0, -1.0),
            BinaryKind::Mul => (b, a),
            BinaryKind::Div => (1.0 / b, -a / (b * b)),
        }
    }

    fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }
}

impl Tensor {
    pub fn unary(&self, kind: UnaryKind) -> Result<Tensor> {
        let data: Vec<Real> = self.data().iter().map(|&x| kind.apply(x)).collect();
        Tensor::from_op(
            kind.name(),
            data,
            self.shape(),
            &[self],
            Box::new(move |ctx| {
                let x = ctx.inputs[0].data();
                let y = ctx.output.data();
                let g = x
                    .iter()
                    .zip(y)
                    .zip(ctx.grad)
                    .map(|((&x, &y), &g)| g * kind.derivative(x, y))
                    .collect();
                Ok(vec![Some(g)])
            }),
        )
    }

    pub fn binary(&self, kind: BinaryKind, other: &Tensor) -> Result<Tensor> {
        if self.shape() == other.shape() {
            let data = self
                .data()
                .iter()
                .zip(other.data())
                .map(|(&a, &b)| kind.apply(a, b))
                .collect();
            return Tensor::from_op(
                kind.name(),
                data,
                self.shape(),
                &[self, other],
                Box::new(move |ctx| {
                    let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                    let mut ga = ctx.needs(0).then(|| vec![0.0; a.len()]);
                    let mut gb = ctx.needs(1).then(|| vec![0.0; b.len()]);
                    for i in 0..a.len() {
                        let (da, db) = kind.partials(a[i], b[i]);
                        if let Some(ga) = ga.as_mut() {
                            ga[i] = ctx.grad[i] * da;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[i] = ctx.grad[i] * db;
                        }
                    }
                    Ok(vec![ga, gb])
                }),
            );
        }
        let out_shape = broadcast_shapes(self.shape(), other.shape())?;
        if self.shape() == out_shape.as_slice() {
            if let Some((mid, inner)) =
                block_broadcast(other.shape(), &out_shape).filter(|(m, i)| m * i > 0)
            {
                return self.binary_blocked(kind, other, mid, inner);
            }
        }
        let sa = broadcast_strides(self.shape(), &out_shape);
        let sb = broadcast_strides(other.shape(), &out_shape);
        let (a, b) = (self.data(), other.data());
        let mut offs_b = Vec::with_capacity(crate::shape::numel(&out_shape));
        for_each_offset(&out_shape, &sb, |_, ob| offs_b.push(ob));
        let mut data = vec![0.0; offs_b.len()];
        for_each_offset(&out_shape, &sa, |lin, oa| {
            data[lin] = kind.apply(a[oa], b[offs_b[lin]]);
        });
        let shape_for_bw = out_shape.clone();
        Tensor::from_op(
            kind.name(),
            data,
            &out_shape,
            &[self, other],
            Box::new(move |ctx| {
                let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let mut ga = vec![0.0; a.len()];
                let mut gb = vec![0.0; b.len()];
                let mut offs_b = Vec::with_capacity(ctx.grad.len());
                for_each_offset(&shape_for_bw, &sb, |_, ob| offs_b.push(ob));
                for_each_offset(&shape_for_bw, &sa, |lin, oa| {
                    let ob = offs_b[lin];
                    let (da, db) = kind.partials(a[oa], b[ob]);
                    ga[oa] += ctx.grad[lin] * da;
                    gb[ob] += ctx.grad[lin] * db;
                });
                Ok(vec![Some(ga), Some(gb)])
            }),
        )
    }

    /// `self` full-size, `other` repeating as `(outer, mid, inner)` with
    /// `other[j]` applied to every element of block `j`.
    fn binary_blocked(
        &self,
        kind: BinaryKind,
        other: &Tensor,
        mid: usize,
        inner: usize,
    ) -> Result<Tensor> {
        let (a, b) = (self.data(), other.data());
        let mut data = Vec::with_capacity(a.len());
        for block in a.chunks_exact(mid * inner) {
            for (j, seg) in block.chunks_exact(inner).enumerate() {
                let bv = b[j];
                data.extend(seg.iter().map(|&x| kind.apply(x, bv)));
            }
        }
        Tensor::from_op(
            kind.name(),
            data,
            self.shape(),
            &[self, other],
            Box::new(move |ctx| {
                let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let mut ga = ctx.needs(0).then(|| vec![0.0; a.len()]);
                let mut gb = ctx.needs(1).then(|| vec![0.0; b.len()]);
                for (o, (block, gblock)) in a
                    .chunks_exact(mid * inner)
                    .zip(ctx.grad.chunks_exact(mid * inner))
                    .enumerate()
                {
                    for j in 0..mid {
                        let bv = b[j];
                        let base = o * mid * inner + j * inner;
                        let mut acc = 0.0;
                        for t in 0..inner {
                            let (da, db) = kind.partials(block[j * inner + t], bv);
                            let g = gblock[j * inner + t];
                            if let Some(ga) = ga.as_mut() {
                                ga[base + t] = g * da;
                            }
                            acc += g * db;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[j] += acc;
                        }
                    }
                }
                Ok(vec![ga, gb])
            }),
        )
    }

    pub fn add(&self, o: &Tensor) -> Result<Tensor> {
        self.binary(BinaryKind::Add, o)
    }
    pub fn sub(&self, o: &Tensor) -> Result<Tensor> {
        self.binary(BinaryKind::Sub, o)
    }
    pub fn mul(&self, o: &Tensor) -> Result<Tensor> {
        self.binary(BinaryKind::Mul, o)
    }
    pub fn div(&self, o: &Tensor) -> Result<Tensor> {
        self.binary(BinaryKind::Div, o)
    }
    pub fn exp(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Exp)
    }
    pub fn log(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Log)
    }
    pub fn neg(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Neg)
    }
    pub fn silu(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Silu)
    }
    pub fn gelu(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Gelu)
    }
    pub fn softplus(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Softplus)
    }
    pub fn sqrt(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Sqrt)
    }
    pub fn relu(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Relu)
    }
    pub fn leaky_relu(&self, slope: Real) -> Result<Tensor> {
        self.unary(UnaryKind::LeakyRelu(slope))
    }
    pub fn tanh(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Tanh)
    }
    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Sigmoid)
    }
    pub fn abs(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Abs)
    }
    pub fn square(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Square)
    }
    pub fn scale(&self, s: Real) -> Result<Tensor> {
        self.unary(UnaryKind::Scale(s))
    }
    pub fn shift(&self, s: Real) -> Result<Tensor> {
        self.unary(UnaryKind::Shift(s))
    }

    /// Fails with a numeric error if any element is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data().iter().position(|x| !x.is_finite()) {
            Some(i) => Err(TensorError::Numeric(format!(
                "{what}: non-finite value at linear index {i}"
            ))),
            None => Ok(()),
        }
    }

    pub fn expect_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(dim_err!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(),
                other.shape()
            ));
        }
        Ok(())
    }
}

/// When `small` (left-padded to the rank of `out`) is 1 everywhere except
/// one contiguous run of axes where it equals `out`, returns the run's
/// element count and the element count of the axes after it.
fn block_broadcast(small: &[usize], out: &[usize]) -> Option<(usize, usize)> {
    if small.len() > out.len() {
        return None;
    }
    let mut padded = vec![1; out.len() - small.len()];
    padded.extend_from_slice(small);
    let kept: Vec<usize> = (0..out.len()).filter(|&i| padded[i] != 1).collect();
    let (first, last) = match (kept.first(), kept.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Some((1, out.iter().product())),
    };
    if (first..=last).any(|i| padded[i] != out[i]) {
        return None;
    }
    Some((
        out[first..=last].iter().product(),
        out[last + 1..].iter().product(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(d: &[f64], s: &[usize]) -> Tensor {
        Tensor::from_f64(d, s).unwrap()
    }

    #[test]
    fn add_and_silu_examples() {
        let y = t(&[1., 2.], &[2]).add(&t(&[3., 4.], &[2])).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0]);
        assert_eq!(t(&[0.], &[1]).silu().unwrap().data(), &[0.0]);
    }

    #[test]
    fn broadcast_mul_shape() {
        let a = t(&[1., 2.], &[2, 1]);
        let b = t(&[1., 10., 100.], &[1, 3]);
        let y = a.mul(&b).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert_eq!(y.data(), &[1., 10., 100., 2., 20., 200.]);
    }

    #[test]
    fn incompatible_shapes_rejected() {
        let e = t(&[1., 2.], &[2]).add(&t(&[1., 2., 3.], &[3])).unwrap_err();
        assert!(matches!(e, TensorError::Dimension(_)));
    }

    #[test]
    fn broadcast_backward_sums_over_expanded_axes() {
        let a = Tensor::param(vec![1.0, 2.0], &[2, 1]).unwrap();
        let b = Tensor::param(vec![1.0, 10.0, 100.0], &[1, 3]).unwrap();
        a.mul(&b).unwrap().sum_all().unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![111.0, 111.0]);
        assert_eq!(b.grad().unwrap(), vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - (2.0 as Real).ln()).abs() < 1e-12);
    }
}
