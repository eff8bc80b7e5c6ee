//! Selective state-space model: zero-order-hold discretization of a diagonal
//! continuous system, the discrete linear recurrence
//! `h_t = Ā_t h_{t-1} + B̄_t x_t`, `y_t = C_t h_t`, and the input-dependent
//! parameterization of Δ, B and C.
//!
//! Two forward kernels share one backward: a plain sequential loop (the
//! reference) and a chunked kernel that composes per-chunk affine maps and
//! carries the hidden state across chunk boundaries.

use mxt_tensor::{Real, Result, Tensor, TensorError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{impl_params, uniform, Linear};

/// Below this `|Δ·a|` the hold integral `(e^{Δa} − 1)/a` is evaluated by its
/// Taylor series around zero.
pub const SERIES_THRESHOLD: Real = 1e-8;

/// `(Ā, B̄/B)` for one diagonal entry without argument checks; `delta = 0`
/// gives the empty hold `(1, 0)`.
#[inline]
pub fn zoh_step(a: Real, delta: Real) -> (Real, Real) {
    let x = delta * a;
    let em1 = x.exp_m1();
    let phi = if x.abs() < SERIES_THRESHOLD {
        delta * (1.0 + x / 2.0 + x * x / 6.0)
    } else {
        em1 / a
    };
    (1.0 + em1, phi)
}

/// d(phi)/da divided by Δ², i.e. `(x e^x − e^x + 1)/x²` at `x = Δa`, given
/// `e^x` and `e^x − 1` already evaluated.
#[inline]
fn dphi_da_scaled(x: Real, exp_x: Real, exp_m1_x: Real) -> Real {
    if x.abs() < 1e-3 {
        0.5 + x / 3.0 + x * x / 8.0 + x * x * x / 30.0 + x * x * x * x / 144.0
    } else {
        (x * exp_x - exp_m1_x) / (x * x)
    }
}

/// Exact zero-order hold for a scalar (diagonal) system:
/// `Ā = exp(Δa)`, `B̄ = ((exp(Δa) − 1)/a)·b`.
pub fn discretize_zoh(a: Real, b: Real, delta: Real) -> Result<(Real, Real)> {
    if !(delta > 0.0) {
        return Err(TensorError::Contract(format!(
            "discretization step must be > 0, got {delta}"
        )));
    }
    if !a.is_finite() {
        return Err(TensorError::Contract(format!(
            "state coefficient must be finite, got {a}"
        )));
    }
    let (a_bar, phi) = zoh_step(a, delta);
    Ok((a_bar, phi * b))
}

/// An affine map `h ↦ a·h + b`; composition is associative, which is what
/// lets the recurrence be evaluated chunk by chunk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineStep {
    pub a: Real,
    pub b: Real,
}

impl AffineStep {
    pub const IDENTITY: AffineStep = AffineStep { a: 1.0, b: 0.0 };

    /// `next ∘ self`: apply `self` first.
    #[inline]
    pub fn then(self, next: AffineStep) -> AffineStep {
        AffineStep {
            a: next.a * self.a,
            b: next.a * self.b + next.b,
        }
    }

    #[inline]
    pub fn apply(self, h: Real) -> Real {
        self.a * h + self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanMode {
    Sequential,
    Chunked(usize),
}

/// Hidden state `h` of shape (batch, channels, state), zero at t = 0.
#[derive(Debug, Clone)]
pub struct SsmState {
    pub batch: usize,
    pub channels: usize,
    pub state_dim: usize,
    pub h: Vec<Real>,
}

impl SsmState {
    pub fn zeros(batch: usize, channels: usize, state_dim: usize) -> Self {
        SsmState {
            batch,
            channels,
            state_dim,
            h: vec![0.0; batch * channels * state_dim],
        }
    }

    /// Advances one timestep with explicit discrete parameters for one batch
    /// element and returns `y_t` per channel. `a_bar`/`b_bar` are
    /// (channels, state), `c` is (state).
    pub fn step(
        &mut self,
        batch: usize,
        a_bar: &[Real],
        b_bar: &[Real],
        x: &[Real],
        c: &[Real],
    ) -> Vec<Real> {
        let (e, n) = (self.channels, self.state_dim);
        let h = &mut self.h[batch * e * n..(batch + 1) * e * n];
        (0..e)
            .map(|ch| {
                let mut y = 0.0;
                for s in 0..n {
                    let i = ch * n + s;
                    h[i] = a_bar[i] * h[i] + b_bar[i] * x[ch];
                    y += c[s] * h[i];
                }
                y
            })
            .collect()
    }
}

/// Dimensions of one scan call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanDims {
    pub batch: usize,
    pub len: usize,
    pub channels: usize,
    pub state: usize,
}

/// Raw inputs of the selective scan kernel.
/// `u`, `delta`: (B,L,E); `a`: (E,N); `b`, `c`: (B,L,N); `skip`: (E).
#[derive(Debug, Clone, Copy)]
pub struct ScanInputs<'a> {
    pub dims: ScanDims,
    pub u: &'a [Real],
    pub delta: &'a [Real],
    pub a: &'a [Real],
    pub b: &'a [Real],
    pub c: &'a [Real],
    pub skip: Option<&'a [Real]>,
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SavedScan {
    pub dims: ScanDims,
    /// Hidden states (B,L,E,N) after each step, when saved.
    pub states: Option<Vec<Real>>,
    /// Per-step `(Ā, B̄/B)` laid out like `states`, when saved.
    pub holds: Option<Holds>,
}

/// Discretized decays and hold integrals for every (b, t, e, n).
#[derive(Debug, Clone)]
pub struct Holds {
    pub a_bar: Vec<Real>,
    pub phi: Vec<Real>,
}

impl Holds {
    fn compute(inp: &ScanInputs<'_>) -> Self {
        let ScanDims {
            batch,
            len,
            channels: e,
            state: n,
        } = inp.dims;
        let total = batch * len * e * n;
        let mut a_bar = Vec::with_capacity(total);
        let mut phi = Vec::with_capacity(total);
        for bte in 0..batch * len * e {
            let dt = inp.delta[bte];
            let ch = bte % e;
            for &a in &inp.a[ch * n..(ch + 1) * n] {
                let (ab, p) = zoh_step(a, dt);
                a_bar.push(ab);
                phi.push(p);
            }
        }
        Holds { a_bar, phi }
    }
}

#[derive(Debug, Clone)]
pub struct ScanGrads {
    pub u: Vec<Real>,
    pub delta: Vec<Real>,
    pub a: Vec<Real>,
    pub b: Vec<Real>,
    pub c: Vec<Real>,
    pub skip: Option<Vec<Real>>,
}

impl ScanInputs<'_> {
    fn validate(&self) -> Result<()> {
        let ScanDims {
            batch,
            len,
            channels,
            state,
        } = self.dims;
        let ble = batch * len * channels;
        let bln = batch * len * state;
        let ok = self.u.len() == ble
            && self.delta.len() == ble
            && self.a.len() == channels * state
            && self.b.len() == bln
            && self.c.len() == bln
            && self.skip.is_none_or(|s| s.len() == channels);
        if !ok {
            return Err(TensorError::Dimension(format!(
                "scan buffers do not match dims {:?}",
                self.dims
            )));
        }
        if len == 0 {
            return Err(TensorError::Contract(
                "scan needs at least one timestep".into(),
            ));
        }
        Ok(())
    }
}

fn first_non_finite(buf: &[Real], per_step: usize, len: usize) -> Option<usize> {
    buf.iter()
        .position(|v| !v.is_finite())
        .map(|i| (i / per_step) % len)
}

/// Sequential recurrence holding only the current (E,N) state. Same
/// arithmetic, in the same order, as the saving path.
fn streaming_forward(inp: &ScanInputs<'_>) -> Result<Vec<Real>> {
    let ScanDims {
        batch,
        len,
        channels: e,
        state: n,
    } = inp.dims;
    let mut y = vec![0.0; batch * len * e];
    let mut h = vec![0.0; e * n];
    let mut bad: Option<usize> = None;
    for bi in 0..batch {
        h.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..len {
            let bt = bi * len + t;
            let bvec = &inp.b[bt * n..(bt + 1) * n];
            let c = &inp.c[bt * n..(bt + 1) * n];
            for ch in 0..e {
                let x = inp.u[bt * e + ch];
                let dt = inp.delta[bt * e + ch];
                let hs = &mut h[ch * n..(ch + 1) * n];
                for ((hv, &a), &bv) in hs.iter_mut().zip(&inp.a[ch * n..(ch + 1) * n]).zip(bvec) {
                    let (a_bar, phi) = zoh_step(a, dt);
                    *hv = a_bar * *hv + phi * bv * x;
                }
                let mut acc: Real = hs.iter().zip(c).map(|(h, c)| h * c).sum();
                if let Some(d) = inp.skip {
                    acc += d[ch] * x;
                }
                if bad.is_none_or(|b| t < b)
                    && !(acc.is_finite() && hs.iter().all(|v| v.is_finite()))
                {
                    bad = Some(t);
                }
                y[bt * e + ch] = acc;
            }
        }
    }
    match bad {
        Some(t) => Err(TensorError::Numeric(format!(
            "selective scan produced a non-finite value at timestep {t}"
        ))),
        None => Ok(y),
    }
}

/// Runs the recurrence and returns `y` (B,L,E) plus the saved activations.
pub fn scan_forward(
    inp: &ScanInputs<'_>,
    mode: ScanMode,
    save: bool,
) -> Result<(Vec<Real>, SavedScan)> {
    inp.validate()?;
    let ScanDims {
        batch,
        len,
        channels: e,
        state: n,
    } = inp.dims;
    if mode == ScanMode::Sequential && !save {
        return streaming_forward(inp).map(|y| {
            let saved = SavedScan {
                dims: inp.dims,
                states: None,
                holds: None,
            };
            (y, saved)
        });
    }
    let mut states = vec![0.0; batch * len * e * n];
    let holds = Holds::compute(inp);
    match mode {
        ScanMode::Sequential => sequential_states(inp, &holds, &mut states),
        ScanMode::Chunked(chunk) => {
            if chunk == 0 {
                return Err(TensorError::Contract("chunk length must be >= 1".into()));
            }
            chunked_states(inp, &holds, chunk, &mut states)
        }
    }
    let mut y = vec![0.0; batch * len * e];
    for bt in 0..batch * len {
        let c = &inp.c[bt * n..(bt + 1) * n];
        for ch in 0..e {
            let h = &states[(bt * e + ch) * n..][..n];
            let mut acc: Real = h.iter().zip(c).map(|(h, c)| h * c).sum();
            if let Some(d) = inp.skip {
                acc += d[ch] * inp.u[bt * e + ch];
            }
            y[bt * e + ch] = acc;
        }
    }
    let bad = [
        first_non_finite(&states, e * n, len),
        first_non_finite(&y, e, len),
    ]
    .into_iter()
    .flatten()
    .min();
    if let Some(t) = bad {
        return Err(TensorError::Numeric(format!(
            "selective scan produced a non-finite value at timestep {t}"
        )));
    }
    let (states, holds) = if save {
        (Some(states), Some(holds))
    } else {
        (None, None)
    };
    Ok((
        y,
        SavedScan {
            dims: inp.dims,
            states,
            holds,
        },
    ))
}

fn sequential_states(inp: &ScanInputs<'_>, holds: &Holds, states: &mut [Real]) {
    let ScanDims {
        batch,
        len,
        channels: e,
        state: n,
    } = inp.dims;
    let mut h = vec![0.0; e * n];
    for bi in 0..batch {
        h.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..len {
            let bt = bi * len + t;
            let bvec = &inp.b[bt * n..(bt + 1) * n];
            for ch in 0..e {
                let x = inp.u[bt * e + ch];
                for s in 0..n {
                    let i = ch * n + s;
                    let j = bt * e * n + i;
                    h[i] = holds.a_bar[j] * h[i] + holds.phi[j] * bvec[s] * x;
                }
            }
            states[bt * e * n..(bt + 1) * e * n].copy_from_slice(&h);
        }
    }
}

/// Three passes per batch element: (1) each chunk scanned from a zero state
/// while accumulating the product of its decays, giving the chunk's composed
/// affine map; (2) the carry is threaded through the composed maps in
/// sequence order; (3) each step's state is corrected by `P_t · carry_in`.
fn chunked_states(inp: &ScanInputs<'_>, holds: &Holds, chunk: usize, states: &mut [Real]) {
    let ScanDims {
        batch,
        len,
        channels: e,
        state: n,
    } = inp.dims;
    let en = e * n;
    let mut decay = vec![0.0; len * en];
    let n_chunks = len.div_ceil(chunk);
    for bi in 0..batch {
        let base = bi * len * en;
        // pass 1
        for ck in 0..n_chunks {
            let (t0, t1) = (ck * chunk, ((ck + 1) * chunk).min(len));
            let mut local = vec![0.0; en];
            let mut prod = vec![1.0; en];
            for t in t0..t1 {
                let bt = bi * len + t;
                let bvec = &inp.b[bt * n..(bt + 1) * n];
                for ch in 0..e {
                    let x = inp.u[bt * e + ch];
                    for s in 0..n {
                        let i = ch * n + s;
                        let j = bt * en + i;
                        let step = AffineStep {
                            a: holds.a_bar[j],
                            b: holds.phi[j] * bvec[s] * x,
                        };
                        let acc = AffineStep {
                            a: prod[i],
                            b: local[i],
                        }
                        .then(step);
                        prod[i] = acc.a;
                        local[i] = acc.b;
                    }
                }
                states[base + t * en..base + (t + 1) * en].copy_from_slice(&local);
                decay[t * en..(t + 1) * en].copy_from_slice(&prod);
            }
        }
        // pass 2: carry_in for each chunk
        let mut carries = vec![vec![0.0; en]; n_chunks];
        for ck in 1..n_chunks {
            let last = ck * chunk - 1;
            for i in 0..en {
                let map = AffineStep {
                    a: decay[last * en + i],
                    b: states[base + last * en + i],
                };
                carries[ck][i] = map.apply(carries[ck - 1][i]);
            }
        }
        // pass 3
        for (ck, carry) in carries.iter().enumerate().skip(1) {
            let (t0, t1) = (ck * chunk, ((ck + 1) * chunk).min(len));
            for t in t0..t1 {
                for i in 0..en {
                    states[base + t * en + i] += decay[t * en + i] * carry[i];
                }
            }
        }
    }
}

impl SavedScan {
    /// Gradients of `Σ upstream·y` with respect to every scan input.
    pub fn backward(&self, inp: &ScanInputs<'_>, upstream: &[Real]) -> Result<ScanGrads> {
        let states = self.states.as_ref().ok_or_else(|| {
            TensorError::Contract("scan backward needs saved hidden states".into())
        })?;
        let holds = self.holds.as_ref().ok_or_else(|| {
            TensorError::Contract("scan backward needs saved discretization".into())
        })?;
        inp.validate()?;
        if inp.dims != self.dims {
            return Err(TensorError::Contract(
                "scan backward called with different dims".into(),
            ));
        }
        let ScanDims {
            batch,
            len,
            channels: e,
            state: n,
        } = self.dims;
        if upstream.len() != batch * len * e {
            return Err(TensorError::Dimension(
                "scan upstream gradient has wrong length".into(),
            ));
        }
        let en = e * n;
        let mut g = ScanGrads {
            u: vec![0.0; inp.u.len()],
            delta: vec![0.0; inp.delta.len()],
            a: vec![0.0; inp.a.len()],
            b: vec![0.0; inp.b.len()],
            c: vec![0.0; inp.c.len()],
            skip: inp.skip.map(|_| vec![0.0; e]),
        };
        let mut dh = vec![0.0; en];
        for bi in 0..batch {
            dh.iter_mut().for_each(|v| *v = 0.0);
            for t in (0..len).rev() {
                let bt = bi * len + t;
                let h_t = &states[bt * en..(bt + 1) * en];
                let h_prev = (t > 0).then(|| &states[(bt - 1) * en..bt * en]);
                let c = &inp.c[bt * n..(bt + 1) * n];
                let bvec = &inp.b[bt * n..(bt + 1) * n];
                for ch in 0..e {
                    let gy = upstream[bt * e + ch];
                    let x = inp.u[bt * e + ch];
                    let dt = inp.delta[bt * e + ch];
                    if let (Some(ds), Some(d)) = (g.skip.as_mut(), inp.skip) {
                        ds[ch] += gy * x;
                        g.u[bt * e + ch] += gy * d[ch];
                    }
                    let mut du = 0.0;
                    let mut ddt = 0.0;
                    for s in 0..n {
                        let i = ch * n + s;
                        g.c[bt * n + s] += gy * h_t[i];
                        let dhi = dh[i] + gy * c[s];
                        let a = inp.a[i];
                        let xa = dt * a;
                        let (a_bar, phi) = (holds.a_bar[bt * en + i], holds.phi[bt * en + i]);
                        let hp = h_prev.map_or(0.0, |hp| hp[i]);
                        let d_abar = dhi * hp;
                        let d_phi = dhi * bvec[s] * x;
                        du += dhi * phi * bvec[s];
                        g.b[bt * n + s] += dhi * phi * x;
                        ddt += d_abar * a * a_bar + d_phi * a_bar;
                        g.a[i] += d_abar * dt * a_bar
                            + d_phi * dt * dt * dphi_da_scaled(xa, a_bar, a * phi);
                        dh[i] = dhi * a_bar;
                    }
                    g.u[bt * e + ch] += du;
                    g.delta[bt * e + ch] += ddt;
                }
            }
        }
        Ok(g)
    }
}

fn expect_shape(t: &Tensor, want: &[usize], what: &str) -> Result<()> {
    if t.shape() != want {
        return Err(TensorError::Dimension(format!(
            "{what}: expected {want:?}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Differentiable selective scan over explicit per-step Δ, B, C.
/// `u`, `delta`: (B,L,E); `a`: (E,N); `b`, `c`: (B,L,N); `skip`: (E).
pub fn selective_scan(
    u: &Tensor,
    delta: &Tensor,
    a: &Tensor,
    b: &Tensor,
    c: &Tensor,
    skip: Option<&Tensor>,
    mode: ScanMode,
) -> Result<Tensor> {
    if u.rank() != 3 || a.rank() != 2 {
        return Err(TensorError::Dimension(format!(
            "selective_scan expects (B,L,E) input and (E,N) state matrix, got {:?} and {:?}",
            u.shape(),
            a.shape()
        )));
    }
    let dims = ScanDims {
        batch: u.dim(0),
        len: u.dim(1),
        channels: u.dim(2),
        state: a.dim(1),
    };
    expect_shape(delta, u.shape(), "delta")?;
    expect_shape(a, &[dims.channels, dims.state], "A")?;
    expect_shape(b, &[dims.batch, dims.len, dims.state], "B")?;
    expect_shape(c, &[dims.batch, dims.len, dims.state], "C")?;
    if let Some(d) = skip {
        expect_shape(d, &[dims.channels], "D")?;
    }
    let inp = ScanInputs {
        dims,
        u: u.data(),
        delta: delta.data(),
        a: a.data(),
        b: b.data(),
        c: c.data(),
        skip: skip.map(|d| d.data()),
    };
    let tracked = [u, delta, a, b, c].iter().any(|t| t.requires_grad())
        || skip.is_some_and(|d| d.requires_grad());
    let (y, saved) = scan_forward(&inp, mode, tracked)?;
    let mut inputs = vec![u, delta, a, b, c];
    if let Some(d) = skip {
        inputs.push(d);
    }
    Tensor::from_op(
        "selective_scan",
        y,
        u.shape(),
        &inputs,
        Box::new(move |ctx| {
            let t = ctx.inputs;
            let inp = ScanInputs {
                dims: saved.dims,
                u: t[0].data(),
                delta: t[1].data(),
                a: t[2].data(),
                b: t[3].data(),
                c: t[4].data(),
                skip: t.get(5).map(|d| d.data()),
            };
            let g = saved.backward(&inp, ctx.grad)?;
            let mut out = vec![Some(g.u), Some(g.delta), Some(g.a), Some(g.b), Some(g.c)];
            if let Some(s) = g.skip {
                out.push(Some(s));
            }
            Ok(out)
        }),
    )
}

/// Per-step discrete parameters produced from an input sequence.
#[derive(Debug, Clone)]
pub struct DiscreteParams {
    /// Δ_t per (batch, step, channel).
    pub delta: Tensor,
    /// Ā per (batch, step, channel, state).
    pub a_bar: Tensor,
    /// B̄ per (batch, step, channel, state), not multiplied by x_t.
    pub b_bar: Tensor,
    /// C_t per (batch, step, state).
    pub c: Tensor,
}

/// Learnable parameters of a selective SSM over `channels` inputs.
#[derive(Clone)]
pub struct SsmParams {
    pub state_dim: usize,
    /// Diagonal `A = −exp(a_log)`, shape (channels, state).
    pub a_log: Tensor,
    pub delta_proj: Linear,
    pub delta_bias: Tensor,
    pub b_proj: Linear,
    pub c_proj: Linear,
    pub skip_d: Option<Tensor>,
}
impl_params!(SsmParams {
    a_log,
    delta_proj,
    delta_bias,
    b_proj,
    c_proj,
    skip_d
});

impl SsmParams {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize, state_dim: usize, skip: bool) -> Self {
        let a_log: Vec<Real> = (0..channels * state_dim)
            .map(|_| rng.gen_range(1.0f64..=16.0).ln() as Real)
            .collect();
        // softplus(delta_bias) log-uniform in [1e-3, 1e-1]
        let delta_bias: Vec<Real> = (0..channels)
            .map(|_| {
                let dt = (rng.gen_range((1e-3f64).ln()..=(1e-1f64).ln())).exp();
                (dt + (-(-dt).exp_m1()).ln()) as Real
            })
            .collect();
        let delta_proj = Linear {
            weight: uniform(rng, &[channels, channels], 0.1 / (channels as f64).sqrt()),
            bias: None,
        };
        SsmParams {
            state_dim,
            a_log: Tensor::param(a_log, &[channels, state_dim]).expect("a_log shape"),
            delta_proj,
            delta_bias: Tensor::param(delta_bias, &[channels]).expect("bias shape"),
            b_proj: Linear::new(rng, channels, state_dim, false),
            c_proj: Linear::new(rng, channels, state_dim, false),
            skip_d: skip.then(|| Tensor::full(&[channels], 1.0).requires_grad_()),
        }
    }

    pub fn channels(&self) -> usize {
        self.a_log.dim(0)
    }

    pub fn a(&self) -> Result<Tensor> {
        self.a_log.exp()?.neg()
    }

    /// Δ_t = softplus(delta_proj(x_t) + delta_bias), B_t = b_proj(x_t), C_t = c_proj(x_t).
    pub fn project(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        if x.rank() != 3 || x.dim(2) != self.channels() {
            return Err(TensorError::Dimension(format!(
                "SSM input must be (B,L,{}), got {:?}",
                self.channels(),
                x.shape()
            )));
        }
        if x.dim(1) == 0 {
            return Err(TensorError::Contract("SSM input needs L >= 1".into()));
        }
        let delta = self
            .delta_proj
            .forward(x)?
            .add(&self.delta_bias)?
            .softplus()?;
        Ok((delta, self.b_proj.forward(x)?, self.c_proj.forward(x)?))
    }

    /// y = SSM(x) over (B,L,E).
    pub fn forward(&self, x: &Tensor, mode: ScanMode) -> Result<Tensor> {
        let (delta, b, c) = self.project(x)?;
        selective_scan(x, &delta, &self.a()?, &b, &c, self.skip_d.as_ref(), mode)
    }

    pub fn scan_sequential(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x, ScanMode::Sequential)
    }

    pub fn scan_chunked(&self, x: &Tensor, chunk_len: usize) -> Result<Tensor> {
        self.forward(x, ScanMode::Chunked(chunk_len))
    }

    /// Discrete parameters for every timestep (no gradient tracking).
    pub fn selective_params(&self, x: &Tensor) -> Result<DiscreteParams> {
        let (delta, b, c) = mxt_tensor::no_grad(|| self.project(x))?;
        let a = mxt_tensor::no_grad(|| self.a())?;
        let (bsz, len, e, n) = (x.dim(0), x.dim(1), self.channels(), self.state_dim);
        let mut a_bar = vec![0.0; bsz * len * e * n];
        let mut b_bar = vec![0.0; bsz * len * e * n];
        for bt in 0..bsz * len {
            for ch in 0..e {
                let dt = delta.data()[bt * e + ch];
                for s in 0..n {
                    let (ab, bb) = discretize_zoh(a.data()[ch * n + s], b.data()[bt * n + s], dt)?;
                    a_bar[(bt * e + ch) * n + s] = ab;
                    b_bar[(bt * e + ch) * n + s] = bb;
                }
            }
        }
        Ok(DiscreteParams {
            delta,
            a_bar: Tensor::new(a_bar, &[bsz, len, e, n])?,
            b_bar: Tensor::new(b_bar, &[bsz, len, e, n])?,
            c,
        })
    }
}
