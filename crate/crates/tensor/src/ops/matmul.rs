use crate::error::{dim_err, Result};
use crate::shape::{broadcast_shapes, broadcast_strides, for_each_offset, numel};
use crate::tensor::Tensor;
use crate::Real;

#[cfg(not(feature = "f32"))]
use matrixmultiply::dgemm as gemm;
#[cfg(feature = "f32")]
use matrixmultiply::sgemm as gemm;

/// `c += a · b` for an (m×k)·(k×n) product; each operand is described by its
/// row and column strides, so transposed views cost nothing.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[Real],
    (rsa, csa): (isize, isize),
    b: &[Real],
    (rsb, csb): (isize, isize),
    c: &mut [Real],
    rsc: isize,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices are at least as long as the strided (m×k), (k×n) and
    // (m×n) views requested here, and `c` does not alias `a` or `b`.
    unsafe {
        gemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            rsc,
            1,
        );
    }
}

/// c (m×n) += a (m×k) · b (k×n)
pub(crate) fn mm_nn(a: &[Real], b: &[Real], c: &mut [Real], m: usize, k: usize, n: usize) {
    gemm_acc(
        m,
        k,
        n,
        a,
        (k as isize, 1),
        b,
        (n as isize, 1),
        c,
        n as isize,
    );
}

/// c (m×k) += g (m×n) · bᵀ where b is (k×n)
pub(crate) fn mm_nt(g: &[Real], b: &[Real], c: &mut [Real], m: usize, k: usize, n: usize) {
    gemm_acc(
        m,
        n,
        k,
        g,
        (n as isize, 1),
        b,
        (1, n as isize),
        c,
        k as isize,
    );
}

/// c (k×n) += aᵀ · g where a is (m×k), g is (m×n)
pub(crate) fn mm_tn(a: &[Real], g: &[Real], c: &mut [Real], m: usize, k: usize, n: usize) {
    gemm_acc(
        k,
        m,
        n,
        a,
        (1, k as isize),
        g,
        (n as isize, 1),
        c,
        n as isize,
    );
}

struct BatchPlan {
    out_batch: Vec<usize>,
    a_offsets: Vec<usize>,
    b_offsets: Vec<usize>,
}

fn plan(a_batch: &[usize], b_batch: &[usize], a_mat: usize, b_mat: usize) -> Result<BatchPlan> {
    let out_batch = broadcast_shapes(a_batch, b_batch)?;
    let sa: Vec<usize> = broadcast_strides(a_batch, &out_batch)
        .iter()
        .map(|s| s * a_mat)
        .collect();
    let sb: Vec<usize> = broadcast_strides(b_batch, &out_batch)
        .iter()
        .map(|s| s * b_mat)
        .collect();
    let mut a_offsets = Vec::with_capacity(numel(&out_batch));
    let mut b_offsets = Vec::with_capacity(numel(&out_batch));
    for_each_offset(&out_batch, &sa, |_, o| a_offsets.push(o));
    for_each_offset(&out_batch, &sb, |_, o| b_offsets.push(o));
    Ok(BatchPlan {
        out_batch,
        a_offsets,
        b_offsets,
    })
}

impl Tensor {
    /// Batched matrix product over the trailing two axes; leading axes broadcast.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() < 2 || other.rank() < 2 {
            return Err(dim_err!(
                "matmul needs rank >= 2, got {:?} and {:?}",
                self.shape(),
                other.shape()
            ));
        }
        let (ra, rb) = (self.rank(), other.rank());
        let (m, k) = (self.shape()[ra - 2], self.shape()[ra - 1]);
        let (k2, n) = (other.shape()[rb - 2], other.shape()[rb - 1]);
        if k != k2 {
            return Err(dim_err!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape(),
                other.shape()
            ));
        }
        let p = plan(
            &self.shape()[..ra - 2],
            &other.shape()[..rb - 2],
            m * k,
            k * n,
        )?;
        let batches = p.a_offsets.len();
        let mut out = vec![0.0; batches * m * n];
        let (a, b) = (self.data(), other.data());
        for bi in 0..batches {
            let (oa, ob) = (p.a_offsets[bi], p.b_offsets[bi]);
            mm_nn(
                &a[oa..oa + m * k],
                &b[ob..ob + k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = p.out_batch.clone();
        shape.extend([m, n]);
        let (a_off, b_off) = (p.a_offsets, p.b_offsets);
        Tensor::from_op(
            "matmul",
            out,
            &shape,
            &[self, other],
            Box::new(move |ctx| {
                let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let mut ga = ctx.needs(0).then(|| vec![0.0; a.len()]);
                let mut gb = ctx.needs(1).then(|| vec![0.0; b.len()]);
                for bi in 0..a_off.len() {
                    let g = &ctx.grad[bi * m * n..(bi + 1) * m * n];
                    let (oa, ob) = (a_off[bi], b_off[bi]);
                    if let Some(ga) = ga.as_mut() {
                        mm_nt(g, &b[ob..ob + k * n], &mut ga[oa..oa + m * k], m, k, n);
                    }
                    if let Some(gb) = gb.as_mut() {
                        mm_tn(&a[oa..oa + m * k], g, &mut gb[ob..ob + k * n], m, k, n);
                    }
                }
                Ok(vec![ga, gb])
            }),
        )
    }
}
