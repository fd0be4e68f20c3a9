//! GCC-PHAT and steered-response-power localization.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::scene::{CellGrid, Point, SceneConfig, SPEED_OF_SOUND};
use crate::synth::MultichannelRecording;

/// Stochastic region contraction parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SrcParams {
    /// Random points evaluated per iteration.
    pub samples: usize,
    /// Region shrink factor per iteration, in (0, 1).
    pub contraction: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for SrcParams {
    fn default() -> Self {
        SrcParams {
            samples: 200,
            contraction: 0.7,
            iterations: 8,
            seed: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SearchMode {
    /// Evaluate every cell centroid.
    Exhaustive,
    /// Continuous search over the grid area.
    Contraction(SrcParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SrpConfig {
    pub frame_length: usize,
    pub frame_shift: usize,
    pub fft_size: usize,
    /// Microphone index pairs (array-major numbering).
    pub pairs: Vec<(usize, usize)>,
    pub mode: SearchMode,
}

impl SrpConfig {
    /// Every microphone pair across all arrays, 64 ms frames.
    pub fn for_scene(scene: &SceneConfig) -> Self {
        let m = scene.n_mics();
        let pairs = (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect();
        SrpConfig {
            frame_length: 1024,
            frame_shift: 320,
            fft_size: 2048,
            pairs,
            mode: SearchMode::Contraction(SrcParams::default()),
        }
    }

    pub fn validate(&self, scene: &SceneConfig) -> Result<()> {
        let mics = scene.mic_positions();
        if self.frame_length == 0 || self.frame_shift == 0 || self.fft_size < self.frame_length {
            return Err(Error::Config("SRP frames must be nonempty and fit the FFT".into()));
        }
        if self.pairs.is_empty() || self.pairs.iter().any(|&(a, b)| a >= mics.len() || b >= mics.len() || a == b) {
            return Err(Error::Config("SRP needs valid microphone pairs".into()));
        }
        let max_lag = self
            .pairs
            .iter()
            .map(|&(a, b)| mics[a].distance(mics[b]) / SPEED_OF_SOUND * scene.sample_rate)
            .fold(0.0, f64::max);
        if (self.fft_size as f64) < 2.0 * max_lag {
            return Err(Error::Config(format!(
                "FFT size {} is below twice the largest pair delay ({max_lag:.1} samples)",
                self.fft_size
            )));
        }
        if let SearchMode::Contraction(p) = self.mode {
            if !(p.contraction > 0.0 && p.contraction < 1.0) || p.samples == 0 {
                return Err(Error::Config("SRC contraction must lie in (0, 1) with samples > 0".into()));
            }
        }
        Ok(())
    }
}

/// Circular PHAT-weighted cross-correlation; index `d` holds lag `d` (negative
/// lags wrap to the end). `b` delayed by `d` samples against `a` peaks at `d`.
pub fn gcc_phat<T: Real>(a: &[T], b: &[T], fft_size: usize) -> Result<Vec<T>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() > fft_size {
        return Err(Error::Config(format!("signal of {} samples exceeds FFT size {fft_size}", a.len())));
    }
    let mut planner = FftPlanner::<T>::new();
    let fwd = planner.plan_fft_forward(fft_size);
    let inv = planner.plan_fft_inverse(fft_size);
    let sa = spectrum(a, &fwd, fft_size);
    let sb = spectrum(b, &fwd, fft_size);
    phat_correlate(&sa, &sb, &inv)
}

fn spectrum<T: Real>(x: &[T], fft: &Arc<dyn Fft<T>>, n: usize) -> Vec<Complex<T>> {
    let mut buf: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
    buf.resize(n, Complex::new(T::zero(), T::zero()));
    fft.process(&mut buf);
    buf
}

fn phat_correlate<T: Real>(sa: &[Complex<T>], sb: &[Complex<T>], inv: &Arc<dyn Fft<T>>) -> Result<Vec<T>> {
    let mut cross: Vec<Complex<T>> = sb.iter().zip(sa).map(|(&b, &a)| b * a.conj()).collect();
    let peak = cross.iter().map(|c| c.norm()).fold(T::zero(), T::max);
    if !(peak > T::zero()) {
        return Err(Error::ZeroEnergy);
    }
    let eps = peak * T::lit(1e-12);
    for c in &mut cross {
        let m = c.norm();
        *c = *c / (m + eps);
    }
    inv.process(&mut cross);
    let n = T::lit(cross.len() as f64);
    Ok(cross.into_iter().map(|c| c.re / n).collect())
}

/// Correlation value at a fractional lag, linearly interpolated.
pub fn value_at_lag<T: Real>(r: &[T], lag: f64) -> T {
    let n = r.len() as isize;
    let lo = lag.floor();
    let frac = T::lit(lag - lo);
    let i = (lo as isize).rem_euclid(n) as usize;
    let j = (lo as isize + 1).rem_euclid(n) as usize;
    r[i] * (T::one() - frac) + r[j] * frac
}

/// Integer lag of the correlation maximum, in `(-n/2, n/2]`.
pub fn peak_lag<T: Real>(r: &[T]) -> isize {
    let n = r.len() as isize;
    let (idx, _) = r
        .iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let idx = idx as isize;
    if idx > n / 2 {
        idx - n
    } else {
        idx
    }
}

/// Pair geometry for fast steering.
struct Steering {
    mics: Vec<Point>,
    pairs: Vec<(usize, usize)>,
    samples_per_metre: f64,
}

impl Steering {
    fn lag(&self, pair: usize, p: Point) -> f64 {
        let (a, b) = self.pairs[pair];
        (p.distance(self.mics[b]) - p.distance(self.mics[a])) * self.samples_per_metre
    }

    fn power<T: Real>(&self, corr: &[Vec<T>], p: Point) -> f64 {
        corr.iter()
            .enumerate()
            .map(|(q, r)| value_at_lag(r, self.lag(q, p)).as_f64())
            .sum()
    }
}

/// SRP map of one frame of all channels: power per cell centroid.
pub fn srp_map<T: Real>(scene: &SceneConfig, frame: &[&[T]], cfg: &SrpConfig) -> Result<Vec<f64>> {
    let corr = frame_correlations(frame, cfg)?;
    let st = steering(scene, cfg);
    Ok(scene.grid.centroids().into_iter().map(|c| st.power(&corr, c)).collect())
}

fn steering(scene: &SceneConfig, cfg: &SrpConfig) -> Steering {
    Steering {
        mics: scene.mic_positions(),
        pairs: cfg.pairs.clone(),
        samples_per_metre: scene.sample_rate / SPEED_OF_SOUND,
    }
}

fn frame_correlations<T: Real>(frame: &[&[T]], cfg: &SrpConfig) -> Result<Vec<Vec<T>>> {
    let mut planner = FftPlanner::<T>::new();
    let fwd = planner.plan_fft_forward(cfg.fft_size);
    let inv = planner.plan_fft_inverse(cfg.fft_size);
    let len = frame.first().map_or(0, |f| f.len());
    let window: Vec<T> = (0..len)
        .map(|n| T::lit(0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / len as f64).cos()))
        .collect();
    let spectra: Vec<Vec<Complex<T>>> = frame
        .iter()
        .map(|x| {
            let w: Vec<T> = x.iter().zip(&window).map(|(&v, &h)| v * h).collect();
            spectrum(&w, &fwd, cfg.fft_size)
        })
        .collect();
    cfg.pairs
        .iter()
        .map(|&(a, b)| phat_correlate(&spectra[a], &spectra[b], &inv))
        .collect()
}

/// Per-frame SRP results for a whole recording.
#[derive(Clone, Debug, PartialEq)]
pub struct SrpAnalysis {
    pub frame_length: usize,
    pub frame_shift: usize,
    /// Power per cell centroid, per frame; `None` for silent frames.
    pub maps: Vec<Option<Vec<f64>>>,
    /// Best position per frame under the configured search mode.
    pub peaks: Vec<Option<Point>>,
}

impl SrpAnalysis {
    /// Frames whose centre lies in `[start, end)` (samples).
    pub fn frames_in(&self, start: usize, end: usize) -> std::ops::Range<usize> {
        let half = self.frame_length / 2;
        let first = start.saturating_sub(half).div_ceil(self.frame_shift);
        let last = end.saturating_sub(half).div_ceil(self.frame_shift);
        first.min(self.maps.len())..last.min(self.maps.len())
    }

    /// Map averaged over the frames of an interval.
    pub fn average_map(&self, start: usize, end: usize) -> Option<Vec<f64>> {
        let maps: Vec<&Vec<f64>> = self.frames_in(start, end).filter_map(|t| self.maps[t].as_ref()).collect();
        let first = maps.first()?;
        let mut acc = vec![0.0; first.len()];
        for m in &maps {
            for (a, v) in acc.iter_mut().zip(m.iter()) {
                *a += v;
            }
        }
        let n = maps.len() as f64;
        Some(acc.into_iter().map(|v| v / n).collect())
    }
}

fn contraction_search(st: &Steering, corr: &[Vec<impl Real>], scene: &SceneConfig, p: &SrcParams, frame: usize) -> Point {
    let (x0, y0) = (scene.grid.origin.x, scene.grid.origin.y);
    let (mut lo, mut hi) = ((x0, y0), (x0 + scene.grid.width(), y0 + scene.grid.height()));
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ (frame as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut best = (f64::NEG_INFINITY, scene.grid.centroid(0));
    for c in scene.grid.centroids() {
        let v = st.power(corr, c);
        if v > best.0 {
            best = (v, c);
        }
    }
    let (full_w, full_h) = (hi.0 - lo.0, hi.1 - lo.1);
    let mut scale = 1.0;
    for _ in 0..p.iterations {
        for _ in 0..p.samples {
            let q = Point::new(rng.random_range(lo.0..=hi.0), rng.random_range(lo.1..=hi.1));
            let v = st.power(corr, q);
            if v > best.0 {
                best = (v, q);
            }
        }
        scale *= p.contraction;
        let (hw, hh) = (0.5 * scale * full_w, 0.5 * scale * full_h);
        let c = best.1;
        lo = ((c.x - hw).max(x0), (c.y - hh).max(y0));
        hi = ((c.x + hw).min(x0 + full_w), (c.y + hh).min(y0 + full_h));
    }
    best.1
}

/// Frame-by-frame SRP maps and peaks of a recording.
pub fn analyze<T: Real>(scene: &SceneConfig, recording: &MultichannelRecording<T>, cfg: &SrpConfig) -> Result<SrpAnalysis> {
    cfg.validate(scene)?;
    if recording.n_channels() != scene.n_mics() {
        return Err(Error::LengthMismatch {
            expected: scene.n_mics(),
            actual: recording.n_channels(),
        });
    }
    let n = recording.n_samples();
    let n_frames = if n < cfg.frame_length {
        0
    } else {
        (n - cfg.frame_length) / cfg.frame_shift + 1
    };
    let st = steering(scene, cfg);
    let centroids = scene.grid.centroids();
    let results: Vec<(Option<Vec<f64>>, Option<Point>)> = (0..n_frames)
        .into_par_iter()
        .map(|t| {
            let s = t * cfg.frame_shift;
            let frame: Vec<&[T]> = recording.channels.iter().map(|c| &c[s..s + cfg.frame_length]).collect();
            let corr = match frame_correlations(&frame, cfg) {
                Ok(c) => c,
                Err(Error::ZeroEnergy) => return Ok((None, None)),
                Err(e) => return Err(e),
            };
            let map: Vec<f64> = centroids.iter().map(|&c| st.power(&corr, c)).collect();
            let peak = match cfg.mode {
                SearchMode::Exhaustive => {
                    let j = argmax(&map);
                    centroids[j]
                }
                SearchMode::Contraction(p) => contraction_search(&st, &corr, scene, &p, t),
            };
            Ok((Some(map), Some(peak)))
        })
        .collect::<Result<_>>()?;
    let (maps, peaks) = results.into_iter().unzip();
    Ok(SrpAnalysis {
        frame_length: cfg.frame_length,
        frame_shift: cfg.frame_shift,
        maps,
        peaks,
    })
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Cells for one event interval `[start, end)` in samples. One source: the
/// per-frame peak coordinates are averaged and mapped to a cell. Two
/// sources: the two strongest non-adjacent peaks of the interval-averaged map.
pub fn srp_event_localize(
    scene: &SceneConfig,
    analysis: &SrpAnalysis,
    start: usize,
    end: usize,
    n_sources: usize,
) -> Result<Vec<usize>> {
    let frames = analysis.frames_in(start, end);
    if frames.is_empty() {
        return Err(Error::SegmentTooShort { frames: 0, required: 1 });
    }
    match n_sources {
        1 => {
            let pts: Vec<Point> = frames.filter_map(|t| analysis.peaks[t]).collect();
            if pts.is_empty() {
                return Err(Error::ZeroEnergy);
            }
            let n = pts.len() as f64;
            let mean = Point::new(pts.iter().map(|p| p.x).sum::<f64>() / n, pts.iter().map(|p| p.y).sum::<f64>() / n);
            Ok(vec![scene.grid.cell_of(mean)?])
        }
        2 => {
            let map = analysis.average_map(start, end).ok_or(Error::ZeroEnergy)?;
            Ok(two_peaks(&scene.grid, &map).to_vec())
        }
        n => Err(Error::Config(format!("n_sources must be 1 or 2, got {n}"))),
    }
}

fn adjacent(grid: &CellGrid, a: usize, b: usize) -> bool {
    let (ax, ay) = ((a % grid.nx) as isize, (a / grid.nx) as isize);
    let (bx, by) = ((b % grid.nx) as isize, (b / grid.nx) as isize);
    (ax - bx).abs() <= 1 && (ay - by).abs() <= 1
}

/// Strongest cell, then the strongest cell not touching it (8-neighbourhood).
/// Ties go to the lower index.
pub(crate) fn two_peaks(grid: &CellGrid, map: &[f64]) -> [usize; 2] {
    let best_where = |ok: &dyn Fn(usize) -> bool| {
        (0..map.len())
            .filter(|&j| ok(j))
            .fold(None, |acc: Option<usize>, j| match acc {
                Some(b) if map[b] >= map[j] => Some(b),
                _ => Some(j),
            })
    };
    let first = best_where(&|_| true).unwrap_or(0);
    let second = best_where(&|j| !adjacent(grid, first, j))
        .or_else(|| best_where(&|j| j != first))
        .unwrap_or(first);
    [first, second]
}
