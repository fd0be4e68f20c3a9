//! Synthetic multichannel recordings with ground truth.
//!
//! Sources are class-specific surrogate waveforms placed in the room and
//! propagated to every microphone under a free-field model: a pure delay of
//! `distance / c` and a `1 / distance` amplitude law. White noise is added per
//! channel to reach a target SNR.

mod dataset;

pub use dataset::{generate_dataset, generate_session, DatasetConfig, Placement, Session};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::{mean_power, FractionalDelay};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::scene::{Point, SceneConfig, SPEED_OF_SOUND};

/// Distances below this are clamped in the `1 / r` law (meters).
pub const MIN_DISTANCE: f64 = 0.1;

/// Spectro-temporal recipe for one surrogate event class.
#[derive(Clone, Debug, PartialEq)]
pub enum Template {
    /// Low band noise cut into decaying bursts (door knock).
    Knock,
    /// High band noise with fast random amplitude modulation (key jingle).
    Jingle,
    /// Two-tone complex gated at a ringing rate (phone).
    Ring,
    /// Mid band noise made of dense random claps (applause).
    Applause,
    /// Harmonic complex with a wandering pitch plus wideband noise and a
    /// syllabic envelope.
    Speech,
    /// Band noise with sinusoidal amplitude modulation.
    Band { lo: f64, hi: f64, am_hz: f64 },
}

/// Template per class id; `None` for classes without a waveform (silence).
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateBank {
    templates: Vec<Option<Template>>,
}

impl TemplateBank {
    pub fn new(templates: Vec<Option<Template>>) -> Self {
        TemplateBank { templates }
    }

    /// Assigns templates by label; unknown labels get distinct noise bands.
    pub fn for_scene(scene: &SceneConfig) -> Self {
        let silence = scene.silence_class();
        let mut spare = 0usize;
        let templates = scene
            .classes
            .iter()
            .enumerate()
            .map(|(c, label)| {
                if Some(c) == silence {
                    return None;
                }
                Some(match label.as_str() {
                    "knock" => Template::Knock,
                    "keys" | "jingle" => Template::Jingle,
                    "phone" | "ring" => Template::Ring,
                    "applause" => Template::Applause,
                    crate::scene::SPEECH_LABEL => Template::Speech,
                    _ => {
                        let lo = 250.0 * 1.35f64.powi(spare as i32 * 2);
                        spare += 1;
                        Template::Band {
                            lo,
                            hi: (lo * 1.8).min(0.45 * scene.sample_rate),
                            am_hz: 3.0 + 2.0 * spare as f64,
                        }
                    }
                })
            })
            .collect();
        TemplateBank { templates }
    }

    pub fn get(&self, class: usize) -> Option<&Template> {
        self.templates.get(class).and_then(|t| t.as_ref())
    }
}

/// Zero-mean Gaussian noise restricted to `[lo, hi]` Hz, unit RMS.
pub fn band_noise(n: usize, lo: f64, hi: f64, sample_rate: f64, seed: u64) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let kk = k.min(n - k);
        let f = kk as f64 * sample_rate / n as f64;
        if f < lo || f > hi {
            *v = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    normalize_rms(&mut out, 1.0);
    out
}

fn normalize_rms(x: &mut [f64], target: f64) {
    let p = mean_power(x);
    if p > 0.0 {
        let g = target / p.sqrt();
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// Deterministic unit-RMS waveform of `duration` seconds for `class`.
pub fn synth_class_waveform(
    bank: &TemplateBank,
    class: usize,
    duration: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let template = bank.get(class).ok_or(Error::UnknownClass(class))?;
    let n = (duration * sample_rate).round() as usize;
    let sr = sample_rate;
    let nyq = 0.5 * sr;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_0000 ^ class as u64);
    let t = |i: usize| i as f64 / sr;
    let mut out: Vec<f64> = match template {
        Template::Knock => {
            let base = band_noise(n, 300.0, 1000.0_f64.min(nyq), sr, rng.random());
            let period = 0.16 + 0.06 * rng.random::<f64>();
            let phase = 0.03 * rng.random::<f64>();
            base.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let since = (t(i) - phase).rem_euclid(period);
                    v * (0.05 + (-since / 0.03).exp())
                })
                .collect()
        }
        Template::Jingle => {
            let base = band_noise(n, 3500.0_f64.min(0.8 * nyq), 6500.0_f64.min(nyq), sr, rng.random());
            let mods = band_noise(n, 5.0, 25.0, sr, rng.random());
            base.iter()
                .zip(&mods)
                .map(|(&v, &m)| v * (0.35 + 0.25 * m).max(0.05))
                .collect()
        }
        Template::Ring => {
            let f1 = 1800.0_f64.min(0.4 * nyq);
            let phi: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let hiss = band_noise(n, 200.0, nyq, sr, rng.random());
            (0..n)
                .map(|i| {
                    let tt = t(i);
                    let w = std::f64::consts::TAU * f1 * tt;
                    let gate = 0.55 + 0.45 * (std::f64::consts::TAU * 16.0 * tt + phi).sin();
                    gate * ((w + phi).sin() + 0.5 * (2.0 * w).sin()) + 0.05 * hiss[i]
                })
                .collect()
        }
        Template::Applause => {
            let base = band_noise(n, 800.0, 2500.0_f64.min(nyq), sr, rng.random());
            let mut env = vec![0.2; n];
            let gaps = Exp::new(25.0).expect("positive rate");
            let mut at = 0.0;
            loop {
                at += gaps.sample(&mut rng);
                let start = (at * sr) as usize;
                if start >= n {
                    break;
                }
                for (i, e) in env[start..].iter_mut().enumerate().take((0.06 * sr) as usize) {
                    *e += (-(i as f64 / sr) / 0.01).exp();
                }
            }
            base.iter().zip(&env).map(|(&v, &e)| v * e).collect()
        }
        Template::Speech => {
            let hiss = band_noise(n, 150.0, 4000.0_f64.min(nyq), sr, rng.random());
            let syll_phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let pitch_phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let mut phase = 0.0;
            (0..n)
                .map(|i| {
                    let tt = t(i);
                    let f0 = 125.0 + 25.0 * (std::f64::consts::TAU * 1.3 * tt + pitch_phase).sin();
                    phase += std::f64::consts::TAU * f0 / sr;
                    let mut v = 0.0;
                    let mut h = 1;
                    while h as f64 * f0 < 4000.0_f64.min(nyq) {
                        v += (h as f64 * phase).sin() / h as f64;
                        h += 1;
                    }
                    let syll = (std::f64::consts::TAU * 4.0 * tt + syll_phase).sin().max(0.0);
                    (0.15 + 0.85 * syll) * (0.7 * v + 0.6 * hiss[i])
                })
                .collect()
        }
        Template::Band { lo, hi, am_hz } => {
            let base = band_noise(n, *lo, hi.min(nyq), sr, rng.random());
            let phi: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            base.iter()
                .enumerate()
                .map(|(i, &v)| v * (0.6 + 0.4 * (std::f64::consts::TAU * am_hz * t(i) + phi).sin()))
                .collect()
        }
    };
    normalize_rms(&mut out, 1.0);
    Ok(out)
}

/// One dry source instance placed in the room.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceEvent {
    pub class: usize,
    pub cell: usize,
    pub position: Point,
    pub start_sample: usize,
    pub sample_rate: f64,
    pub waveform: Vec<f64>,
}

impl SourceEvent {
    pub fn duration(&self) -> f64 {
        self.waveform.len() as f64 / self.sample_rate
    }

    pub fn end_sample(&self) -> usize {
        self.start_sample + self.waveform.len()
    }

    pub fn truth(&self) -> GroundTruth {
        GroundTruth {
            class: self.class,
            cell: self.cell,
            start_sample: self.start_sample,
            end_sample: self.end_sample(),
        }
    }
}

/// Ground-truth annotation of one event, in samples `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    pub class: usize,
    pub cell: usize,
    pub start_sample: usize,
    pub end_sample: usize,
}

impl GroundTruth {
    pub fn start_seconds(&self, sample_rate: f64) -> f64 {
        self.start_sample as f64 / sample_rate
    }

    pub fn end_seconds(&self, sample_rate: f64) -> f64 {
        self.end_sample as f64 / sample_rate
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultichannelRecording<T> {
    /// One signal per microphone, array-major, equal lengths.
    pub channels: Vec<Vec<T>>,
    pub sample_rate: f64,
    pub truth: Vec<GroundTruth>,
    /// Realised per-channel SNR in dB (`inf` without noise).
    pub snr_db: f64,
}

impl<T: Real> MultichannelRecording<T> {
    pub fn n_samples(&self) -> usize {
        self.channels.first().map_or(0, |c| c.len())
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn cast<U: Real>(&self) -> MultichannelRecording<U> {
        MultichannelRecording {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|&v| U::lit(v.as_f64())).collect())
                .collect(),
            sample_rate: self.sample_rate,
            truth: self.truth.clone(),
            snr_db: self.snr_db,
        }
    }

    /// Channels of array `k`.
    pub fn array_channels(&self, scene: &SceneConfig, k: usize) -> Vec<&[T]> {
        self.channels[scene.channel_range(k)]
            .iter()
            .map(|c| c.as_slice())
            .collect()
    }

    /// Largest number of simultaneously active ground-truth events.
    pub fn max_overlap(&self) -> usize {
        let mut marks: Vec<(usize, i32)> = self
            .truth
            .iter()
            .flat_map(|g| [(g.start_sample, 1), (g.end_sample, -1)])
            .collect();
        // ends sort before starts at the same instant
        marks.sort_by_key(|&(s, d)| (s, d));
        let mut active = 0i32;
        let mut best = 0i32;
        for (_, d) in marks {
            active += d;
            best = best.max(active);
        }
        best as usize
    }
}

/// Mirror-image reflections off the four walls, gain `coefficient^order`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reflections {
    pub coefficient: f64,
    pub max_order: usize,
}

fn image_sources(p: Point, room: (f64, f64), refl: Option<Reflections>) -> Vec<(Point, f64)> {
    let Some(r) = refl else {
        return vec![(p, 1.0)];
    };
    let order = r.max_order as i64;
    let mirror = |i: i64, v: f64, size: f64| -> f64 {
        i as f64 * size + if i.rem_euclid(2) == 0 { v } else { size - v }
    };
    let mut out = Vec::new();
    for i in -order..=order {
        for j in -order..=order {
            let o = (i.abs() + j.abs()) as usize;
            if o > r.max_order {
                continue;
            }
            let q = Point::new(mirror(i, p.x, room.0), mirror(j, p.y, room.1));
            out.push((q, r.coefficient.powi(o as i32)));
        }
    }
    out
}

/// Signals received at every microphone (array-major) from one event, each
/// `len` samples long.
pub fn propagate(
    event: &SourceEvent,
    scene: &SceneConfig,
    len: usize,
    reflections: Option<Reflections>,
) -> Result<Vec<Vec<f64>>> {
    if !scene.contains(event.position) {
        return Err(Error::OutOfDomain {
            x: event.position.x,
            y: event.position.y,
        });
    }
    if event.sample_rate != scene.sample_rate {
        return Err(Error::SampleRate(event.sample_rate, scene.sample_rate));
    }
    let images = image_sources(event.position, scene.room_size, reflections);
    let mics = scene.mic_positions();
    Ok(mics
        .iter()
        .map(|&m| {
            let mut out = vec![0.0; len];
            for &(src, g) in &images {
                let d = src.distance(m);
                let delay = FractionalDelay::<f64>::new(d / SPEED_OF_SOUND * scene.sample_rate);
                delay.accumulate(
                    &event.waveform,
                    &mut out,
                    g / d.max(MIN_DISTANCE),
                    event.start_sample as isize,
                );
            }
            out
        })
        .collect())
}

/// Noise level used when a recording has no active events.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseLevel {
    /// Per-channel SNR over the samples where ground-truth events are active;
    /// `inf` adds no noise.
    Snr(f64),
    /// Fixed per-channel noise power.
    Power(f64),
}

/// Renders events into a noisy multichannel recording of `len` samples.
pub fn render(
    events: &[SourceEvent],
    scene: &SceneConfig,
    len: usize,
    noise: NoiseLevel,
    reflections: Option<Reflections>,
    seed: u64,
) -> Result<MultichannelRecording<f64>> {
    let n_ch = scene.n_mics();
    let mut channels = vec![vec![0.0; len]; n_ch];
    let mut truth = Vec::with_capacity(events.len());
    for ev in events {
        if ev.end_sample() > len {
            return Err(Error::Config(format!(
                "event ends at sample {} past the recording length {len}",
                ev.end_sample()
            )));
        }
        for (acc, sig) in channels.iter_mut().zip(propagate(ev, scene, len, reflections)?) {
            acc.iter_mut().zip(&sig).for_each(|(a, s)| *a += s);
        }
        truth.push(ev.truth());
    }
    truth.sort_by_key(|g| (g.start_sample, g.class));

    let mut active = vec![false; len];
    for g in &truth {
        active[g.start_sample..g.end_sample].iter_mut().for_each(|a| *a = true);
    }
    let n_active = active.iter().filter(|&&a| a).count();

    let snr_db = match noise {
        NoiseLevel::Snr(s) => s,
        NoiseLevel::Power(_) => f64::NAN,
    };
    for (ch, signal) in channels.iter_mut().enumerate() {
        let noise_power = match noise {
            NoiseLevel::Snr(s) if s.is_infinite() => 0.0,
            NoiseLevel::Snr(s) => {
                if n_active == 0 {
                    return Err(Error::Config(
                        "an SNR target needs at least one active event; use a fixed noise power".into(),
                    ));
                }
                let p_sig = signal
                    .iter()
                    .zip(&active)
                    .filter(|(_, &a)| a)
                    .map(|(&v, _)| v * v)
                    .sum::<f64>()
                    / n_active as f64;
                p_sig / 10f64.powf(s / 10.0)
            }
            NoiseLevel::Power(p) => p,
        };
        if noise_power == 0.0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(ch as u64));
        let mut w: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize_rms(&mut w, noise_power.sqrt());
        signal.iter_mut().zip(&w).for_each(|(s, n)| *s += n);
    }
    Ok(MultichannelRecording {
        channels,
        sample_rate: scene.sample_rate,
        truth,
        snr_db,
    })
}

/// Cuts an interferer from `material` with the same start and length as `ae`
/// and scales it to the same mean power.
pub fn speech_interferer(
    ae: &SourceEvent,
    material: &SourceEvent,
    rng: &mut impl Rng,
) -> Result<SourceEvent> {
    if ae.sample_rate != material.sample_rate {
        return Err(Error::SampleRate(ae.sample_rate, material.sample_rate));
    }
    let n = ae.waveform.len();
    if material.waveform.len() < n {
        return Err(Error::Config("speech material shorter than the event".into()));
    }
    let offset = rng.random_range(0..=material.waveform.len() - n);
    let mut seg = material.waveform[offset..offset + n].to_vec();
    normalize_rms(&mut seg, mean_power(&ae.waveform).sqrt());
    Ok(SourceEvent {
        class: material.class,
        cell: material.cell,
        position: material.position,
        start_sample: ae.start_sample,
        sample_rate: ae.sample_rate,
        waveform: seg,
    })
}

/// Overlaps an event with a matched-power speech segment and adds noise at
/// `snr_db` per channel.
pub fn mix_two_source(
    ae: &SourceEvent,
    speech_like: &SourceEvent,
    scene: &SceneConfig,
    snr_db: f64,
    seed: u64,
) -> Result<MultichannelRecording<f64>> {
    if ae.sample_rate != scene.sample_rate {
        return Err(Error::SampleRate(ae.sample_rate, scene.sample_rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speech = speech_interferer(ae, speech_like, &mut rng)?;
    let tail = tail_samples(scene);
    let len = ae.end_sample() + tail;
    render(&[ae.clone(), speech], scene, len, NoiseLevel::Snr(snr_db), None, seed ^ 0xa5a5)
}

/// Samples needed after the last event for the longest propagation delay to
/// settle.
pub fn tail_samples(scene: &SceneConfig) -> usize {
    let diag = scene.room_size.0.hypot(scene.room_size.1);
    (diag / SPEED_OF_SOUND * scene.sample_rate).ceil() as usize + crate::dsp::DELAY_TAPS
}
