//! Free-form brush-stroke masks whose hole ratio lands in a chosen bucket.

use mxt_tensor::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sub_seed;
use crate::error::{Error, Result};

pub const MAX_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MaskBucket {
    Low,
    Mid,
    High,
}

impl MaskBucket {
    pub const ALL: [MaskBucket; 3] = [MaskBucket::Low, MaskBucket::Mid, MaskBucket::High];

    /// Half-open hole-ratio range `(lo, hi]`.
    pub fn range(self) -> (f64, f64) {
        match self {
            MaskBucket::Low => (0.0001, 0.2),
            MaskBucket::Mid => (0.2, 0.4),
            MaskBucket::High => (0.4, 0.6),
        }
    }

    pub fn contains(self, ratio: f64) -> bool {
        let (lo, hi) = self.range();
        ratio > lo && ratio <= hi
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskBucket::Low => "low",
            MaskBucket::Mid => "mid",
            MaskBucket::High => "high",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MaskBucket::Low => "0.01-20%",
            MaskBucket::Mid => "20-40%",
            MaskBucket::High => "40-60%",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == s)
    }

    pub fn of_ratio(ratio: f64) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.contains(ratio))
    }
}

/// Stroke shape parameters, as fractions of the shorter image side where
/// noted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrokeParams {
    pub vertices: (usize, usize),
    /// Brush width range as fractions of the shorter side.
    pub width: (f64, f64),
    /// Segment length range as fractions of the shorter side.
    pub segment: (f64, f64),
    pub max_strokes: usize,
}

impl Default for StrokeParams {
    fn default() -> Self {
        StrokeParams {
            vertices: (4, 12),
            width: (0.04, 0.12),
            segment: (0.05, 0.2),
            max_strokes: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    pub bucket: MaskBucket,
    pub seed: u64,
    pub strokes: StrokeParams,
}

impl MaskSpec {
    pub fn new(bucket: MaskBucket, seed: u64) -> Self {
        MaskSpec {
            bucket,
            seed,
            strokes: StrokeParams::default(),
        }
    }
}

pub struct GeneratedMask {
    /// (1,H,W), 1 = hole.
    pub mask: Tensor,
    pub ratio: f64,
    pub attempts: usize,
    /// Set when no attempt landed in the bucket and the closest one was kept.
    pub fallback_warning: bool,
}

pub fn hole_ratio(mask: &Tensor) -> f64 {
    let holes = mask.data().iter().filter(|&&v| v > 0.5).count();
    holes as f64 / mask.numel().max(1) as f64
}

struct Canvas {
    h: usize,
    w: usize,
    px: Vec<bool>,
    holes: usize,
}

impl Canvas {
    fn ratio(&self) -> f64 {
        self.holes as f64 / (self.h * self.w) as f64
    }

    fn disk(&mut self, cy: f64, cx: f64, r: f64) {
        let y0 = (cy - r).floor().max(0.0) as usize;
        let x0 = (cx - r).floor().max(0.0) as usize;
        let y1 = ((cy + r).ceil() as isize).min(self.h as isize - 1);
        let x1 = ((cx + r).ceil() as isize).min(self.w as isize - 1);
        for y in y0 as isize..=y1 {
            for x in x0 as isize..=x1 {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                if dy * dy + dx * dx <= r * r {
                    let i = y as usize * self.w + x as usize;
                    if !self.px[i] {
                        self.px[i] = true;
                        self.holes += 1;
                    }
                }
            }
        }
    }

    fn segment(&mut self, (ya, xa): (f64, f64), (yb, xb): (f64, f64), r: f64) {
        let len = ((yb - ya).powi(2) + (xb - xa).powi(2)).sqrt();
        let steps = len.ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            self.disk(ya + t * (yb - ya), xa + t * (xb - xa), r);
        }
    }
}

/// Paints random-walk strokes until the hole ratio reaches `target`,
/// checking after every segment.
fn paint(rng: &mut ChaCha8Rng, h: usize, w: usize, p: &StrokeParams, target: f64) -> Canvas {
    let mut cv = Canvas {
        h,
        w,
        px: vec![false; h * w],
        holes: 0,
    };
    let side = h.min(w) as f64;
    'strokes: for _ in 0..p.max_strokes {
        let r = (rng.gen_range(p.width.0..=p.width.1) * side / 2.0).max(0.5);
        let mut pt = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
        let mut angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let verts = rng.gen_range(p.vertices.0..=p.vertices.1.max(p.vertices.0));
        for _ in 0..verts {
            angle += rng.gen_range(-1.2..1.2);
            let len = rng.gen_range(p.segment.0..=p.segment.1) * side;
            let next = (
                (pt.0 + len * angle.sin()).clamp(0.0, (h - 1) as f64),
                (pt.1 + len * angle.cos()).clamp(0.0, (w - 1) as f64),
            );
            cv.segment(pt, next, r);
            pt = next;
            if cv.ratio() >= target {
                break 'strokes;
            }
        }
    }
    cv
}

/// Regenerates with successive sub-seeds until the ratio lands in the
/// bucket; after [`MAX_ATTEMPTS`] the attempt closest to the bucket is
/// returned with `fallback_warning` set.
pub fn generate_irregular_mask(spec: &MaskSpec, h: usize, w: usize) -> Result<GeneratedMask> {
    if h < 16 || w < 16 {
        return Err(Error::Data(format!("masks need H,W >= 16, got {h}x{w}")));
    }
    let (lo, hi) = spec.bucket.range();
    let margin = 0.1 * (hi - lo);
    let mut best: Option<(f64, Canvas, usize)> = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng =
            ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, &[spec.bucket as u64, attempt as u64]));
        let target = rng.gen_range(lo + margin..=hi - margin);
        let cv = paint(&mut rng, h, w, &spec.strokes, target);
        let ratio = cv.ratio();
        if spec.bucket.contains(ratio) {
            return Ok(finish(cv, attempt + 1, false));
        }
        let dist = if ratio <= lo { lo - ratio } else { ratio - hi };
        if best.as_ref().is_none_or(|(d, _, _)| dist < *d) {
            best = Some((dist, cv, attempt + 1));
        }
    }
    let (_, cv, _) = best.expect("at least one attempt");
    log::warn!(
        "mask generation fell back to the nearest attempt for bucket {}",
        spec.bucket.name()
    );
    Ok(finish(cv, MAX_ATTEMPTS, true))
}

fn finish(cv: Canvas, attempts: usize, fallback_warning: bool) -> GeneratedMask {
    let ratio = cv.ratio();
    let data = cv
        .px
        .iter()
        .map(|&b| if b { 1.0 } else { 0.0 as Real })
        .collect();
    let mask = Tensor::new(data, &[1, cv.h, cv.w]).expect("mask shape");
    GeneratedMask {
        mask,
        ratio,
        attempts,
        fallback_warning,
    }
}
