//! Frequency-filtered log filter-bank energies with temporal derivatives.
//!
//! Per frame: Hamming window, power spectrum, 16 mel-spaced triangular band
//! energies, log, then the `z - z^-1` filter along frequency (zeros beyond
//! both ends, all 16 outputs kept). Regression deltas of those 16 values over
//! +-2 frames complete the 32-dimensional vector.

use std::io::{Read, Write};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::real::Real;

pub const N_BANDS: usize = 16;
pub const FEATURE_DIM: usize = 2 * N_BANDS;
/// Floor applied to band energies before the log.
pub const ENERGY_FLOOR: f64 = 1e-10;
/// Half-width of the regression window for temporal deltas.
pub const DELTA_WINDOW: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameConfig {
    pub frame_length: usize,
    pub frame_shift: usize,
    pub sample_rate: f64,
}

impl FrameConfig {
    /// 30 ms frames every 20 ms.
    pub fn standard(sample_rate: f64) -> Self {
        FrameConfig {
            frame_length: (0.030 * sample_rate).round() as usize,
            frame_shift: (0.020 * sample_rate).round() as usize,
            sample_rate,
        }
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.frame_length {
            0
        } else {
            (n_samples - self.frame_length) / self.frame_shift + 1
        }
    }

    /// Samples a frame is credited with: a `frame_shift`-wide tile centred on
    /// the frame centre. Frame intervals `[a, b)` map to contiguous sample
    /// intervals.
    fn tile_offset(&self) -> f64 {
        0.5 * (self.frame_length as f64 - self.frame_shift as f64)
    }

    pub fn frame_to_seconds(&self, frame: usize) -> f64 {
        (frame as f64 * self.frame_shift as f64 + self.tile_offset()) / self.sample_rate
    }

    /// Nearest frame boundary to a time instant.
    pub fn seconds_to_frame(&self, t: f64) -> usize {
        let f = (t * self.sample_rate - self.tile_offset()) / self.frame_shift as f64;
        f.round().max(0.0) as usize
    }
}

/// Sequence of feature vectors for one beamformer channel `(array, cell)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence<T> {
    pub dim: usize,
    pub data: Vec<T>,
    pub channel: (usize, usize),
}

impl<T: Real> FeatureSequence<T> {
    pub fn new(dim: usize, channel: (usize, usize)) -> Self {
        FeatureSequence {
            dim,
            data: Vec::new(),
            channel,
        }
    }

    pub fn from_frames(frames: &[Vec<T>], channel: (usize, usize)) -> Self {
        let dim = frames.first().map_or(0, |f| f.len());
        let mut s = FeatureSequence::new(dim, channel);
        for f in frames {
            s.push(f);
        }
        s
    }

    pub fn push(&mut self, frame: &[T]) {
        assert_eq!(frame.len(), self.dim, "frame dimension");
        self.data.extend_from_slice(frame);
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame(&self, t: usize) -> &[T] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    /// Frames `[start, end)` as a borrowed view.
    pub fn slice(&self, start: usize, end: usize) -> FeatureView<'_, T> {
        FeatureView {
            dim: self.dim,
            data: &self.data[start * self.dim..end * self.dim],
        }
    }

    pub fn view(&self) -> FeatureView<'_, T> {
        self.slice(0, self.len())
    }

    /// Little-endian float32 matrix: `u32 T`, `u32 dim`, then `T * dim` values.
    pub fn write_binary(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read, channel: (usize, usize)) -> std::io::Result<Self> {
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let t = u32::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let dim = u32::from_le_bytes(word) as usize;
        let mut data = Vec::with_capacity(t * dim);
        for _ in 0..t * dim {
            r.read_exact(&mut word)?;
            data.push(T::lit(f32::from_le_bytes(word) as f64));
        }
        Ok(FeatureSequence { dim, data, channel })
    }
}

/// Borrowed run of consecutive frames.
#[derive(Clone, Copy, Debug)]
pub struct FeatureView<'a, T> {
    pub dim: usize,
    pub data: &'a [T],
}

impl<'a, T: Real> FeatureView<'a, T> {
    pub fn new(dim: usize, data: &'a [T]) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "ragged feature data");
        FeatureView { dim, data }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, t: usize) -> &'a [T] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &'a [T]> + 'a {
        self.data.chunks_exact(self.dim)
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Hamming window, FFT plan and mel triangles for one frame length.
pub struct MelFilterbank<T: Real> {
    frame_length: usize,
    fft_size: usize,
    sample_rate: f64,
    window: Vec<T>,
    /// Per band: first FFT bin and its weights.
    bands: Vec<(usize, Vec<T>)>,
    fft: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for MelFilterbank<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelFilterbank")
            .field("frame_length", &self.frame_length)
            .field("fft_size", &self.fft_size)
            .field("sample_rate", &self.sample_rate)
            .finish()
    }
}

impl<T: Real> MelFilterbank<T> {
    pub fn new(frame_length: usize, sample_rate: f64) -> Self {
        let fft_size = frame_length.next_power_of_two();
        let window = (0..frame_length)
            .map(|n| {
                T::lit(
                    0.54 - 0.46
                        * (std::f64::consts::TAU * n as f64 / (frame_length as f64 - 1.0)).cos(),
                )
            })
            .collect();
        let edges = Self::band_edges_hz(sample_rate);
        let bin_hz = sample_rate / fft_size as f64;
        let bands = (0..N_BANDS)
            .map(|b| {
                let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
                let first = (lo / bin_hz).ceil() as usize;
                let last = ((hi / bin_hz).floor() as usize).min(fft_size / 2);
                let weights = (first..=last)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f <= mid {
                            (f - lo) / (mid - lo)
                        } else {
                            (hi - f) / (hi - mid)
                        };
                        T::lit(w.max(0.0))
                    })
                    .collect();
                (first, weights)
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        MelFilterbank {
            frame_length,
            fft_size,
            sample_rate,
            window,
            bands,
            fft,
        }
    }

    /// `N_BANDS + 2` mel-equidistant edge frequencies over `[0, sr / 2]`.
    pub fn band_edges_hz(sample_rate: f64) -> Vec<f64> {
        let top = hz_to_mel(0.5 * sample_rate);
        (0..N_BANDS + 2)
            .map(|i| mel_to_hz(top * i as f64 / (N_BANDS + 1) as f64))
            .collect()
    }

    /// Peak frequency of band `b`.
    pub fn band_center_hz(&self, b: usize) -> f64 {
        Self::band_edges_hz(self.sample_rate)[b + 1]
    }

    pub fn frame_length(&self) -> usize {
        self.frame_length
    }

    /// Floored log energies of the 16 bands for one frame.
    pub fn log_energies(&self, frame: &[T]) -> Result<[T; N_BANDS]> {
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); self.fft_size];
        self.log_energies_with(frame, &mut scratch)
    }

    fn log_energies_with(&self, frame: &[T], buf: &mut [Complex<T>]) -> Result<[T; N_BANDS]> {
        if frame.len() != self.frame_length {
            return Err(Error::LengthMismatch {
                expected: self.frame_length,
                actual: frame.len(),
            });
        }
        for (b, (&x, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
            *b = Complex::new(x * w, T::zero());
        }
        for b in buf[self.frame_length..].iter_mut() {
            *b = Complex::new(T::zero(), T::zero());
        }
        self.fft.process(buf);
        let floor = T::lit(ENERGY_FLOOR);
        let mut out = [T::zero(); N_BANDS];
        for (o, (first, weights)) in out.iter_mut().zip(&self.bands) {
            let e: T = weights
                .iter()
                .zip(&buf[*first..*first + weights.len()])
                .map(|(&w, c)| w * c.norm_sqr())
                .sum();
            *o = e.max(floor).ln();
        }
        Ok(out)
    }
}

/// `o[m] = e[m + 1] - e[m - 1]` with zeros beyond both ends.
pub fn frequency_filter<T: Real>(e: &[T; N_BANDS]) -> [T; N_BANDS] {
    let mut o = [T::zero(); N_BANDS];
    for m in 0..N_BANDS {
        let next = if m + 1 < N_BANDS { e[m + 1] } else { T::zero() };
        let prev = if m > 0 { e[m - 1] } else { T::zero() };
        o[m] = next - prev;
    }
    o
}

/// Regression deltas over +-`DELTA_WINDOW` frames, replicating edge frames.
pub fn temporal_derivative<T: Real>(seq: &[[T; N_BANDS]]) -> Result<Vec<[T; N_BANDS]>> {
    if seq.is_empty() {
        return Err(Error::EmptyData("temporal derivative of an empty sequence".into()));
    }
    let n = DELTA_WINDOW as isize;
    let last = seq.len() as isize - 1;
    let norm = T::lit(2.0 * (1..=DELTA_WINDOW).map(|d| (d * d) as f64).sum::<f64>());
    let at = |t: isize| &seq[t.clamp(0, last) as usize];
    Ok((0..seq.len() as isize)
        .map(|t| {
            let mut d = [T::zero(); N_BANDS];
            for lag in 1..=n {
                let (fwd, back) = (at(t + lag), at(t - lag));
                let w = T::lit(lag as f64);
                for (dm, (&f, &b)) in d.iter_mut().zip(fwd.iter().zip(back.iter())) {
                    *dm = *dm + w * (f - b);
                }
            }
            d.iter_mut().for_each(|v| *v = *v / norm);
            d
        })
        .collect())
}

/// Whole-signal feature pipeline.
#[derive(Debug)]
pub struct FeatureExtractor<T: Real> {
    pub frames: FrameConfig,
    filterbank: MelFilterbank<T>,
}

impl<T: Real> FeatureExtractor<T> {
    pub fn new(frames: FrameConfig) -> Self {
        FeatureExtractor {
            filterbank: MelFilterbank::new(frames.frame_length, frames.sample_rate),
            frames,
        }
    }

    pub fn standard(sample_rate: f64) -> Self {
        Self::new(FrameConfig::standard(sample_rate))
    }

    pub fn filterbank(&self) -> &MelFilterbank<T> {
        &self.filterbank
    }

    /// FF-LFBE vectors (no deltas) of every full frame.
    pub fn ff_lfbe(&self, signal: &[T]) -> Vec<[T; N_BANDS]> {
        let cfg = &self.frames;
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.filterbank.fft_size];
        (0..cfg.n_frames(signal.len()))
            .map(|t| {
                let s = t * cfg.frame_shift;
                let e = self
                    .filterbank
                    .log_energies_with(&signal[s..s + cfg.frame_length], &mut buf)
                    .expect("frame length fixed by the framing");
                frequency_filter(&e)
            })
            .collect()
    }

    /// Full 32-dimensional features; columns `[0, 16)` are FF-LFBE, `[16, 32)`
    /// their temporal deltas.
    pub fn extract(&self, signal: &[T], channel: (usize, usize)) -> FeatureSequence<T> {
        let ff = self.ff_lfbe(signal);
        let mut seq = FeatureSequence::new(FEATURE_DIM, channel);
        if ff.is_empty() {
            return seq;
        }
        let deltas = temporal_derivative(&ff).expect("non-empty");
        seq.data.reserve(ff.len() * FEATURE_DIM);
        for (f, d) in ff.iter().zip(&deltas) {
            seq.data.extend_from_slice(f);
            seq.data.extend_from_slice(d);
        }
        seq
    }
}
