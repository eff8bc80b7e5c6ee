use crate::error::{contract_err, dim_err, Result};
use crate::shape::{broadcast_strides, check_axis, for_each_offset, numel};
use crate::tensor::Tensor;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

impl Tensor {
    /// Reduces over `axes`. Max ties route the gradient to the lowest linear index.
    pub fn reduce(&self, kind: ReduceKind, axes: &[usize], keepdims: bool) -> Result<Tensor> {
        let in_shape = self.shape().to_vec();
        let mut reduced = vec![false; in_shape.len()];
        for &ax in axes {
            check_axis(ax, in_shape.len())?;
            reduced[ax] = true;
        }
        let keep_shape: Vec<usize> = in_shape
            .iter()
            .zip(&reduced)
            .map(|(&d, &r)| if r { 1 } else { d })
            .collect();
        let out_shape: Vec<usize> = if keepdims {
            keep_shape.clone()
        } else {
            in_shape
                .iter()
                .zip(&reduced)
                .filter(|(_, &r)| !r)
                .map(|(&d, _)| d)
                .collect()
        };
        let count: usize = in_shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| r)
            .map(|(&d, _)| d)
            .product();
        let n_out = numel(&keep_shape);
        let strides = broadcast_strides(&keep_shape, &in_shape);
        let x = self.data();
        let mut out_index = Vec::with_capacity(x.len());
        for_each_offset(&in_shape, &strides, |_, o| out_index.push(o));

        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                if kind == ReduceKind::Mean && count == 0 && n_out > 0 {
                    return Err(contract_err!("mean over an empty axis"));
                }
                let mut out = vec![0.0; n_out];
                for (i, &o) in out_index.iter().enumerate() {
                    out[o] += x[i];
                }
                let factor = if kind == ReduceKind::Mean {
                    1.0 / count as Real
                } else {
                    1.0
                };
                if kind == ReduceKind::Mean {
                    out.iter_mut().for_each(|v| *v *= factor);
                }
                Tensor::from_op(
                    if kind == ReduceKind::Sum {
                        "sum"
                    } else {
                        "mean"
                    },
                    out,
                    &out_shape,
                    &[self],
                    Box::new(move |ctx| {
                        let g = out_index.iter().map(|&o| ctx.grad[o] * factor).collect();
                        Ok(vec![Some(g)])
                    }),
                )
            }
            ReduceKind::Max => {
                if count == 0 && n_out > 0 {
                    return Err(dim_err!("max over an empty axis"));
                }
                let mut out = vec![Real::NEG_INFINITY; n_out];
                let mut arg = vec![usize::MAX; n_out];
                for (i, &o) in out_index.iter().enumerate() {
                    if arg[o] == usize::MAX || x[i] > out[o] {
                        out[o] = x[i];
                        arg[o] = i;
                    }
                }
                let n_in = x.len();
                Tensor::from_op(
                    "max",
                    out,
                    &out_shape,
                    &[self],
                    Box::new(move |ctx| {
                        let mut g = vec![0.0; n_in];
                        for (o, &i) in arg.iter().enumerate() {
                            g[i] += ctx.grad[o];
                        }
                        Ok(vec![Some(g)])
                    }),
                )
            }
        }
    }

    pub fn sum_all(&self) -> Result<Tensor> {
        let axes: Vec<usize> = (0..self.rank()).collect();
        self.reduce(ReduceKind::Sum, &axes, false)
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        let axes: Vec<usize> = (0..self.rank()).collect();
        self.reduce(ReduceKind::Mean, &axes, false)
    }

    pub fn sum_axes(&self, axes: &[usize], keepdims: bool) -> Result<Tensor> {
        self.reduce(ReduceKind::Sum, axes, keepdims)
    }

    pub fn mean_axes(&self, axes: &[usize], keepdims: bool) -> Result<Tensor> {
        self.reduce(ReduceKind::Mean, axes, keepdims)
    }

    pub fn max_axes(&self, axes: &[usize], keepdims: bool) -> Result<Tensor> {
        self.reduce(ReduceKind::Max, axes, keepdims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_all() {
        let x = Tensor::from_f64(&[2., 4., 6., 8.], &[2, 2]).unwrap();
        assert_eq!(x.mean_all().unwrap().item().unwrap(), 5.0);
    }

    #[test]
    fn empty_axis_sums_to_zero() {
        let x = Tensor::zeros(&[3, 0]);
        let s = x.sum_axes(&[1], false).unwrap();
        assert_eq!(s.shape(), &[3]);
        assert_eq!(s.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn axis_out_of_range() {
        assert!(Tensor::zeros(&[2]).sum_axes(&[1], false).is_err());
    }

    #[test]
    fn keepdims_and_partial_axes() {
        let x = Tensor::from_f64(&[1., 2., 3., 4., 5., 6.], &[2, 3]).unwrap();
        let s = x.sum_axes(&[1], true).unwrap();
        assert_eq!(s.shape(), &[2, 1]);
        assert_eq!(s.data(), &[6.0, 15.0]);
        let m = x.max_axes(&[0], false).unwrap();
        assert_eq!(m.data(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn max_tie_goes_to_lowest_index() {
        let x = Tensor::param(vec![1.0, 3.0, 3.0, 2.0], &[4]).unwrap();
        x.max_axes(&[0], false).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn mean_backward_distributes_inverse_count() {
        let x = Tensor::param(vec![1.0; 4], &[2, 2]).unwrap();
        x.mean_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25; 4]);
    }
}
