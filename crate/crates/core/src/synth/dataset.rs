//! Session generator: the synthetic stand-in for a database of isolated and
//! speech-overlapped event recordings.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    render, speech_interferer, synth_class_waveform, tail_samples, MultichannelRecording, NoiseLevel,
    Reflections, SourceEvent, TemplateBank,
};
use crate::error::{Error, Result};
use crate::scene::{Point, SceneConfig};

/// How event sources are spread over the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Placement {
    Uniform,
    /// Each event class has `homes_per_class` favourite cells that receive a
    /// `concentration` share of its instances.
    Clustered {
        homes_per_class: usize,
        concentration: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub n_sessions: usize,
    pub instances_per_class: usize,
    /// Isolated speech segments per session, for training the speech model.
    pub speech_segments: usize,
    /// Event duration range, seconds.
    pub event_duration: (f64, f64),
    /// Silence between consecutive events, seconds.
    pub gap: (f64, f64),
    pub lead_silence: f64,
    pub snr_single_db: f64,
    pub snr_overlap_db: f64,
    pub placement: Placement,
    /// Random source offset from the cell centroid, as a fraction of the
    /// cell size. Speech always sits on its centroid.
    pub jitter: f64,
    /// Fixed speaker cell; `None` puts it on the left side of the grid.
    pub speaker_cell: Option<usize>,
    /// Draw a new interferer cell for every overlapped event.
    pub random_speaker: bool,
    /// Per-instance level spread (uniform, +- dB).
    pub level_spread_db: f64,
    /// Source RMS before propagation.
    pub source_rms: f64,
    pub reflections: Option<Reflections>,
    /// Also build the speech-overlapped recording of every session.
    pub two_source: bool,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_sessions: 8,
            instances_per_class: 3,
            speech_segments: 3,
            event_duration: (0.45, 0.75),
            gap: (0.35, 0.6),
            lead_silence: 0.4,
            snr_single_db: 18.7,
            snr_overlap_db: 17.5,
            placement: Placement::Clustered {
                homes_per_class: 2,
                concentration: 0.85,
            },
            jitter: 0.0,
            speaker_cell: None,
            random_speaker: false,
            level_spread_db: 3.0,
            source_rms: 0.1,
            reflections: None,
            two_source: true,
            seed: 1,
        }
    }
}

impl DatasetConfig {
    pub fn speaker_cell(&self, scene: &SceneConfig) -> usize {
        self.speaker_cell.unwrap_or_else(|| {
            let g = &scene.grid;
            let iy = g.ny.saturating_sub(1) / 2;
            iy * g.nx
        })
    }

    /// Home cells per event class (indexed by class id); empty for uniform
    /// placement. Depends on the dataset seed only.
    pub fn home_cells(&self, scene: &SceneConfig) -> Vec<Vec<usize>> {
        let mut homes = vec![Vec::new(); scene.n_classes()];
        let Placement::Clustered { homes_per_class, .. } = self.placement else {
            return homes;
        };
        let speaker = self.speaker_cell(scene);
        let mut cells: Vec<usize> = (0..scene.n_cells()).filter(|&c| c != speaker).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x4853_4f4d);
        cells.shuffle(&mut rng);
        let mut it = cells.iter().cycle();
        for c in scene.ae_classes() {
            homes[c] = (0..homes_per_class).map(|_| *it.next().expect("cycle")).collect();
        }
        homes
    }
}

/// One recording session.
#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub index: usize,
    /// Isolated events (all classes, including speech segments).
    pub one_source: MultichannelRecording<f64>,
    /// The same acoustic events, each overlapped with speech.
    pub two_source: Option<MultichannelRecording<f64>>,
}

fn jittered(scene: &SceneConfig, cell: usize, jitter: f64, rng: &mut impl Rng) -> Point {
    let c = scene.grid.centroid(cell);
    let dx = jitter * scene.grid.cell_width * (2.0 * rng.random::<f64>() - 1.0);
    let dy = jitter * scene.grid.cell_height * (2.0 * rng.random::<f64>() - 1.0);
    let p = Point::new(c.x + dx, c.y + dy);
    if scene.contains(p) {
        p
    } else {
        c
    }
}

pub fn generate_session(scene: &SceneConfig, cfg: &DatasetConfig, index: usize) -> Result<Session> {
    scene.validate()?;
    let speech = scene
        .speech_class()
        .ok_or_else(|| Error::Config("the class list needs a speech class".into()))?;
    if cfg.two_source && scene.max_simultaneous < 2 {
        return Err(Error::Config("two-source sessions need max_simultaneous = 2".into()));
    }
    let sr = scene.sample_rate;
    let bank = TemplateBank::for_scene(scene);
    let homes = cfg.home_cells(scene);
    let speaker_cell = cfg.speaker_cell(scene);
    let ae_cells: Vec<usize> = (0..scene.n_cells()).filter(|&c| c != speaker_cell).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(
        cfg.seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(index as u64 + 1),
    );

    // (class, cell) for every instance, in random order
    let mut plan: Vec<(usize, usize)> = Vec::new();
    for c in scene.ae_classes() {
        for _ in 0..cfg.instances_per_class {
            let cell = match cfg.placement {
                Placement::Clustered { concentration, .. } if rng.random::<f64>() < concentration => {
                    homes[c][rng.random_range(0..homes[c].len())]
                }
                _ => ae_cells[rng.random_range(0..ae_cells.len())],
            };
            plan.push((c, cell));
        }
    }
    plan.extend((0..cfg.speech_segments).map(|_| (speech, speaker_cell)));
    plan.shuffle(&mut rng);

    let mut events = Vec::with_capacity(plan.len());
    let mut cursor = (cfg.lead_silence * sr).round() as usize;
    for (class, cell) in plan {
        let dur = rng.random_range(cfg.event_duration.0..=cfg.event_duration.1);
        let mut wave = synth_class_waveform(&bank, class, dur, sr, rng.random())?;
        let level_db = rng.random_range(-cfg.level_spread_db..=cfg.level_spread_db);
        let gain = cfg.source_rms * 10f64.powf(level_db / 20.0);
        wave.iter_mut().for_each(|v| *v *= gain);
        let position = if class == speech {
            scene.grid.centroid(cell)
        } else {
            jittered(scene, cell, cfg.jitter, &mut rng)
        };
        let ev = SourceEvent {
            class,
            cell,
            position,
            start_sample: cursor,
            sample_rate: sr,
            waveform: wave,
        };
        cursor = ev.end_sample() + (rng.random_range(cfg.gap.0..=cfg.gap.1) * sr).round() as usize;
        events.push(ev);
    }
    let len = cursor + tail_samples(scene);
    let noise_seed: u64 = rng.random();
    let one_source = render(&events, scene, len, NoiseLevel::Snr(cfg.snr_single_db), cfg.reflections, noise_seed)?;

    let two_source = if cfg.two_source {
        let material_len = 8.0_f64.max(2.0 * cfg.event_duration.1);
        let material = SourceEvent {
            class: speech,
            cell: speaker_cell,
            position: scene.grid.centroid(speaker_cell),
            start_sample: 0,
            sample_rate: sr,
            waveform: synth_class_waveform(&bank, speech, material_len, sr, rng.random())?,
        };
        let mut mixed = Vec::new();
        for ev in events.iter().filter(|e| e.class != speech) {
            let mut src = material.clone();
            if cfg.random_speaker {
                let free: Vec<usize> = ae_cells.iter().copied().filter(|&c| c != ev.cell).collect();
                src.cell = free[rng.random_range(0..free.len())];
                src.position = scene.grid.centroid(src.cell);
            }
            let interferer = speech_interferer(ev, &src, &mut rng)?;
            mixed.push(ev.clone());
            mixed.push(interferer);
        }
        let noise_seed: u64 = rng.random();
        Some(render(&mixed, scene, len, NoiseLevel::Snr(cfg.snr_overlap_db), cfg.reflections, noise_seed)?)
    } else {
        None
    };

    Ok(Session {
        index,
        one_source,
        two_source,
    })
}

/// All sessions of a dataset; sessions are independent and built in parallel.
pub fn generate_dataset(scene: &SceneConfig, cfg: &DatasetConfig) -> Result<Vec<Session>> {
    (0..cfg.n_sessions)
        .into_par_iter()
        .map(|i| generate_session(scene, cfg, i))
        .collect()
}
