//! Scan timing: sequential vs chunked kernels over a grid of sequence
//! lengths, state sizes and chunk lengths.

use std::time::Instant;

use mxt_tensor::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::sub_seed;
use crate::error::{Error, Result};
use crate::ssm::{scan_forward, ScanDims, ScanInputs, ScanMode};

/// Owned buffers for one scan call.
#[derive(Debug, Clone)]
pub struct ScanBuffers {
    pub dims: ScanDims,
    pub u: Vec<Real>,
    pub delta: Vec<Real>,
    pub a: Vec<Real>,
    pub b: Vec<Real>,
    pub c: Vec<Real>,
    pub skip: Vec<Real>,
}

impl ScanBuffers {
    /// Inputs in the ranges the Mamba block produces at initialization:
    /// Δ in [1e-3, 0.1], `a` in [-16, -1].
    pub fn random(rng: &mut ChaCha8Rng, dims: ScanDims) -> Self {
        let ScanDims {
            batch,
            len,
            channels: e,
            state: n,
        } = dims;
        let mut draw = |count: usize, lo: f64, hi: f64| -> Vec<Real> {
            (0..count).map(|_| rng.gen_range(lo..hi) as Real).collect()
        };
        ScanBuffers {
            dims,
            u: draw(batch * len * e, -1.0, 1.0),
            delta: draw(batch * len * e, 1e-3, 0.1),
            a: draw(e * n, -16.0, -1.0),
            b: draw(batch * len * n, -1.0, 1.0),
            c: draw(batch * len * n, -1.0, 1.0),
            skip: draw(e, -1.0, 1.0),
        }
    }

    pub fn inputs(&self) -> ScanInputs<'_> {
        ScanInputs {
            dims: self.dims,
            u: &self.u,
            delta: &self.delta,
            a: &self.a,
            b: &self.b,
            c: &self.c,
            skip: Some(&self.skip),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub lens: Vec<usize>,
    pub states: Vec<usize>,
    /// Chunk lengths to time besides the sequential kernel.
    pub chunks: Vec<usize>,
    pub repeats: usize,
    pub channels: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            lens: vec![1024, 2048, 4096],
            states: vec![8, 16],
            chunks: vec![64],
            repeats: 9,
            channels: 16,
            seed: 0,
        }
    }
}

/// Largest tolerated difference between chunked and sequential outputs.
pub const EQUALITY_TOLERANCE: f64 = if mxt_tensor::WIDEST { 1e-10 } else { 1e-4 };

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub len: usize,
    pub state: usize,
    /// `None` for the sequential kernel.
    pub chunk: Option<usize>,
    /// Median over the timed repeats.
    pub ms_per_iter: f64,
    /// Fastest timed repeat.
    pub ms_best: f64,
    /// Max |chunked − sequential| measured just before timing this row.
    pub max_abs_diff: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// `(median, min)` in milliseconds.
fn time_repeats(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<(f64, f64)> {
    f()?; // warm-up
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        f()?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let best = samples.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((median(&mut samples), best))
}

fn max_abs_diff(a: &[Real], b: &[Real]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .fold(0.0, f64::max)
}

/// Runs every (L, N) pair with the sequential kernel and each chunk length.
/// Each row's output is compared against the sequential result before it is
/// timed; a mismatch aborts the benchmark.
pub fn run_scan_bench(
    cfg: &BenchConfig,
    mut on_row: impl FnMut(&BenchRow),
) -> Result<Vec<BenchRow>> {
    if cfg.repeats == 0 || cfg.channels == 0 {
        return Err(Error::Config("repeats and channels must be >= 1".into()));
    }
    if cfg
        .lens
        .iter()
        .chain(&cfg.states)
        .chain(&cfg.chunks)
        .any(|&v| v == 0)
    {
        return Err(Error::Config(
            "sequence lengths, state sizes and chunk lengths must be >= 1".into(),
        ));
    }
    let mut rows = Vec::new();
    for &len in &cfg.lens {
        for &state in &cfg.states {
            let dims = ScanDims {
                batch: 1,
                len,
                channels: cfg.channels,
                state,
            };
            let mut rng =
                ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, &[len as u64, state as u64]));
            let buf = ScanBuffers::random(&mut rng, dims);
            let inp = buf.inputs();
            let (reference, _) = scan_forward(&inp, ScanMode::Sequential, false)?;
            let modes = std::iter::once(None).chain(cfg.chunks.iter().map(|&c| Some(c)));
            for chunk in modes {
                let mode = chunk.map_or(ScanMode::Sequential, ScanMode::Chunked);
                let (y, _) = scan_forward(&inp, mode, false)?;
                let diff = max_abs_diff(&y, &reference);
                if !(diff <= EQUALITY_TOLERANCE) {
                    return Err(Error::Numeric(format!(
                        "chunked scan (L={len}, N={state}, chunk={}) differs from sequential by {diff:e}",
                        chunk.unwrap_or(0)
                    )));
                }
                let (ms, best) = time_repeats(cfg.repeats, || {
                    scan_forward(&inp, mode, false)
                        .map(|_| ())
                        .map_err(Error::from)
                })?;
                let row = BenchRow {
                    len,
                    state,
                    chunk,
                    ms_per_iter: ms,
                    ms_best: best,
                    max_abs_diff: diff,
                };
                on_row(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// `(N, L, t(2L)/t(L))` for every sequential pair whose lengths differ by 2×,
/// from the fastest repeat of each (noise on a busy machine only adds time).
pub fn doubling_ratios(rows: &[BenchRow]) -> Vec<(usize, usize, f64)> {
    let seq: Vec<&BenchRow> = rows.iter().filter(|r| r.chunk.is_none()).collect();
    let mut out = Vec::new();
    for r in &seq {
        if let Some(d) = seq
            .iter()
            .find(|d| d.state == r.state && d.len == 2 * r.len)
        {
            out.push((r.state, r.len, d.ms_best / r.ms_best));
        }
    }
    out
}

pub fn table_header() -> String {
    format!(
        "{:>8} {:>4} {:>12} {:>12} {:>12}",
        "L", "N", "chunk", "ms/iter", "best"
    )
}

pub fn table_row(r: &BenchRow) -> String {
    let chunk = r.chunk.map_or("sequential".to_string(), |c| c.to_string());
    format!(
        "{:>8} {:>4} {:>12} {:>12.4} {:>12.4}",
        r.len, r.state, chunk, r.ms_per_iter, r.ms_best
    )
}

pub fn render_table(rows: &[BenchRow]) -> String {
    let mut s = table_header();
    for r in rows {
        s.push('\n');
        s.push_str(&table_row(r));
    }
    s
}
