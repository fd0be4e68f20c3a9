//! Delay-and-sum steering beamformers, one per (array, cell).
//!
//! Each beamformer time-aligns the wavefront of a point source at the cell
//! centroid across the array's microphones (near-field steering) and averages
//! the aligned channels. Delays are chosen as `(d_max - d_m) / c`, so every
//! steered channel is causal.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dsp::FractionalDelay;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::scene::{Point, SceneConfig, SPEED_OF_SOUND};

/// Spatial filter seam: anything that turns one array's channels into a
/// single signal focused on one cell.
pub trait Beamformer<T: Real>: Send + Sync {
    fn array(&self) -> usize;
    fn cell(&self) -> usize;
    fn apply(&self, channels: &[&[T]]) -> Result<Vec<T>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct SteeringBeamformer<T> {
    pub array: usize,
    pub cell: usize,
    /// Per-microphone delay in samples.
    pub delays: Vec<f64>,
    pub gains: Vec<T>,
    filters: Vec<FractionalDelay<T>>,
}

/// Steering delays (samples) that align a source at `target` across the
/// microphones `mics`.
pub fn steering_delays(mics: &[Point], target: Point, sample_rate: f64) -> Vec<f64> {
    let dist: Vec<f64> = mics.iter().map(|m| m.distance(target)).collect();
    let max = dist.iter().copied().fold(f64::MIN, f64::max);
    dist.iter()
        .map(|d| (max - d) / SPEED_OF_SOUND * sample_rate)
        .collect()
}

impl<T: Real> SteeringBeamformer<T> {
    pub fn new(array: usize, cell: usize, mics: &[Point], target: Point, sample_rate: f64) -> Self {
        let delays = steering_delays(mics, target, sample_rate);
        let m = T::lit(mics.len() as f64);
        SteeringBeamformer {
            array,
            cell,
            gains: vec![T::one() / m; mics.len()],
            filters: delays.iter().map(|&d| FractionalDelay::new(d)).collect(),
            delays,
        }
    }
}

impl<T: Real> Beamformer<T> for SteeringBeamformer<T> {
    fn array(&self) -> usize {
        self.array
    }

    fn cell(&self) -> usize {
        self.cell
    }

    fn apply(&self, channels: &[&[T]]) -> Result<Vec<T>> {
        if channels.len() != self.filters.len() {
            return Err(Error::LengthMismatch {
                expected: self.filters.len(),
                actual: channels.len(),
            });
        }
        let n = channels.first().map_or(0, |c| c.len());
        if let Some(bad) = channels.iter().find(|c| c.len() != n) {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: bad.len(),
            });
        }
        let mut out = vec![T::zero(); n];
        for ((ch, filt), &g) in channels.iter().zip(&self.filters).zip(&self.gains) {
            filt.accumulate(ch, &mut out, g, 0);
        }
        Ok(out)
    }
}

/// All `K x P` beamformers of a scene, array-major.
#[derive(Clone, Debug)]
pub struct BeamformerBank<T> {
    n_cells: usize,
    beams: Vec<SteeringBeamformer<T>>,
}

pub fn design_beamformers<T: Real>(scene: &SceneConfig) -> BeamformerBank<T> {
    let n_cells = scene.n_cells();
    let beams = scene
        .arrays
        .iter()
        .enumerate()
        .flat_map(|(k, a)| {
            (0..n_cells).map(move |j| {
                SteeringBeamformer::new(k, j, &a.mic_positions, scene.grid.centroid(j), scene.sample_rate)
            })
        })
        .collect();
    BeamformerBank { n_cells, beams }
}

impl<T: Real> BeamformerBank<T> {
    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_arrays(&self) -> usize {
        self.beams.len() / self.n_cells.max(1)
    }

    pub fn get(&self, k: usize, j: usize) -> &SteeringBeamformer<T> {
        &self.beams[k * self.n_cells + j]
    }

    pub fn iter(&self) -> impl Iterator<Item = &SteeringBeamformer<T>> {
        self.beams.iter()
    }

    /// Every beamformer output for a recording's channels (array-major
    /// microphones), in `(k, j)` order.
    pub fn apply_all(&self, scene: &SceneConfig, channels: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        if channels.len() != scene.n_mics() {
            return Err(Error::LengthMismatch {
                expected: scene.n_mics(),
                actual: channels.len(),
            });
        }
        self.beams
            .par_iter()
            .map(|b| {
                let chans: Vec<&[T]> = channels[scene.channel_range(b.array)]
                    .iter()
                    .map(|c| c.as_slice())
                    .collect();
                b.apply(&chans)
            })
            .collect()
    }

    /// Text dump: one line per (array, cell, microphone) with delay and gain.
    pub fn delay_table(&self) -> String {
        let mut out = String::from("# array cell mic delay_samples gain\n");
        for b in &self.beams {
            for (m, (d, g)) in b.delays.iter().zip(&b.gains).enumerate() {
                let _ = writeln!(out, "{} {} {} {} {}", b.array, b.cell, m, d, g);
            }
        }
        out
    }
}
