//! Pure index remappings. Every op here copies into a fresh row-major buffer.

use crate::error::{dim_err, Result};
use crate::shape::{check_axis, for_each_offset, numel, split_at_axis, strides};
use crate::tensor::Tensor;
use crate::Real;

fn gather(src: &[Real], map: &[usize]) -> Vec<Real> {
    map.iter().map(|&i| src[i]).collect()
}

fn scatter_add(g: &[Real], map: &[usize], n: usize) -> Vec<Real> {
    let mut out = vec![0.0; n];
    for (&gi, &i) in g.iter().zip(map) {
        out[i] += gi;
    }
    out
}

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(dim_err!(
                "cannot reshape {:?} ({} elements) into {:?}",
                self.shape(),
                self.numel(),
                shape
            ));
        }
        Tensor::from_op(
            "reshape",
            self.to_vec(),
            shape,
            &[self],
            Box::new(|ctx| Ok(vec![Some(ctx.grad.to_vec())])),
        )
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank
            || perm
                .iter()
                .any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
        {
            return Err(dim_err!("invalid permutation {perm:?} for rank {rank}"));
        }
        let in_strides = strides(self.shape());
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let st: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut map = Vec::with_capacity(self.numel());
        for_each_offset(&out_shape, &st, |_, o| map.push(o));
        let data = gather(self.data(), &map);
        let n = self.numel();
        Tensor::from_op(
            "permute",
            data,
            &out_shape,
            &[self],
            Box::new(move |ctx| Ok(vec![Some(scatter_add(ctx.grad, &map, n))])),
        )
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor> {
        check_axis(a, self.rank())?;
        check_axis(b, self.rank())?;
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// Contiguous range `[start, start+len)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        check_axis(axis, self.rank())?;
        let (outer, extent, inner) = split_at_axis(self.shape(), axis);
        if start + len > extent {
            return Err(dim_err!(
                "slice [{start}, {}) exceeds extent {extent} on axis {axis}",
                start + len
            ));
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let x = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&x[base..base + len * inner]);
        }
        let n = self.numel();
        Tensor::from_op(
            "slice",
            data,
            &shape,
            &[self],
            Box::new(move |ctx| {
                let mut g = vec![0.0; n];
                for o in 0..outer {
                    let base = (o * extent + start) * inner;
                    g[base..base + len * inner]
                        .copy_from_slice(&ctx.grad[o * len * inner..(o + 1) * len * inner]);
                }
                Ok(vec![Some(g)])
            }),
        )
    }

    /// Splits `axis` into consecutive parts with the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor>> {
        check_axis(axis, self.rank())?;
        if sizes.iter().sum::<usize>() != self.shape()[axis] {
            return Err(dim_err!(
                "split sizes {sizes:?} do not sum to extent {} of axis {axis}",
                self.shape()[axis]
            ));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&s| {
                let part = self.slice(axis, start, s);
                start += s;
                part
            })
            .collect()
    }

    pub fn chunk(&self, axis: usize, parts: usize) -> Result<Vec<Tensor>> {
        check_axis(axis, self.rank())?;
        let d = self.shape()[axis];
        if parts == 0 || d % parts != 0 {
            return Err(dim_err!("cannot chunk extent {d} into {parts} equal parts"));
        }
        self.split(axis, &vec![d / parts; parts])
    }

    pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| dim_err!("concat of zero tensors"))?;
        check_axis(axis, first.rank())?;
        for t in tensors {
            let ok = t.rank() == first.rank()
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(dim_err!(
                    "concat along {axis}: {:?} vs {:?}",
                    first.shape(),
                    t.shape()
                ));
            }
        }
        let (outer, _, inner) = split_at_axis(first.shape(), axis);
        let extents: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (t, &e) in tensors.iter().zip(&extents) {
                data.extend_from_slice(&t.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        Tensor::from_op(
            "concat",
            data,
            &shape,
            tensors,
            Box::new(move |ctx| {
                let mut grads: Vec<Vec<Real>> = extents
                    .iter()
                    .map(|&e| Vec::with_capacity(outer * e * inner))
                    .collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (g, &e) in grads.iter_mut().zip(&extents) {
                        g.extend_from_slice(&ctx.grad[pos..pos + e * inner]);
                        pos += e * inner;
                    }
                }
                Ok(grads.into_iter().map(Some).collect())
            }),
        )
    }

    /// Zero padding; `pads[i] = (before, after)` for axis `i`.
    pub fn pad(&self, pads: &[(usize, usize)]) -> Result<Tensor> {
        if pads.len() != self.rank() {
            return Err(dim_err!(
                "pad needs {} (before, after) pairs, got {}",
                self.rank(),
                pads.len()
            ));
        }
        let out_shape: Vec<usize> = self
            .shape()
            .iter()
            .zip(pads)
            .map(|(&d, &(b, a))| d + b + a)
            .collect();
        let out_strides = strides(&out_shape);
        let base: usize = pads
            .iter()
            .zip(&out_strides)
            .map(|(&(b, _), &s)| b * s)
            .sum();
        let mut map = Vec::with_capacity(self.numel());
        for_each_offset(self.shape(), &out_strides, |_, o| map.push(base + o));
        let mut data = vec![0.0; numel(&out_shape)];
        for (&x, &o) in self.data().iter().zip(&map) {
            data[o] = x;
        }
        Tensor::from_op(
            "pad",
            data,
            &out_shape,
            &[self],
            Box::new(move |ctx| Ok(vec![Some(gather(ctx.grad, &map))])),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize]) -> Tensor {
        let n = numel(shape);
        Tensor::new((0..n).map(|i| i as Real).collect(), shape).unwrap()
    }

    #[test]
    fn reshape_round_trip() {
        let x = seq(&[2, 3]);
        let y = x.reshape(&[3, 2]).unwrap().reshape(&[2, 3]).unwrap();
        assert!(y.bit_eq(&x));
        assert!(x.reshape(&[4, 2]).is_err());
    }

    #[test]
    fn transpose_matches_definition() {
        let x = seq(&[2, 3]);
        let t = x.transpose(0, 1).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[0., 3., 1., 4., 2., 5.]);
    }

    #[test]
    fn split_then_concat_reassembles() {
        let x = seq(&[2, 6, 2]);
        let parts = x.chunk(1, 3).unwrap();
        assert_eq!(parts[1].shape(), &[2, 2, 2]);
        let refs: Vec<&Tensor> = parts.iter().collect();
        assert!(Tensor::concat(&refs, 1).unwrap().bit_eq(&x));
        assert!(x.split(1, &[2, 2]).is_err());
    }

    #[test]
    fn pad_then_slice_is_identity() {
        let x = seq(&[2, 3]);
        let p = x.pad(&[(1, 2), (0, 1)]).unwrap();
        assert_eq!(p.shape(), &[5, 4]);
        let back = p.slice(0, 1, 2).unwrap().slice(1, 0, 3).unwrap();
        assert!(back.bit_eq(&x));
    }

    #[test]
    fn concat_backward_splits_gradient() {
        let a = Tensor::param(vec![1.0, 2.0], &[1, 2]).unwrap();
        let b = Tensor::param(vec![3.0, 4.0, 5.0], &[1, 3]).unwrap();
        let w = Tensor::from_f64(&[1., 2., 3., 4., 5.], &[1, 5]).unwrap();
        Tensor::concat(&[&a, &b], 1)
            .unwrap()
            .mul(&w)
            .unwrap()
            .sum_all()
            .unwrap()
            .backward()
            .unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 2.0]);
        assert_eq!(b.grad().unwrap(), vec![3.0, 4.0, 5.0]);
    }
}
