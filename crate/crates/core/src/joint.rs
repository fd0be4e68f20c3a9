//! Two-step joint recognition and localization.
//!
//! Step 1 decodes every `(array, cell)` channel with the loop grammar and
//! keeps the end-points of the best-scoring channel. Step 2 scores each
//! detected interval with every class model on every channel and picks the
//! `(class, cell)` pair with the highest fused log-posterior.

use rayon::prelude::*;

use crate::beamform::BeamformerBank;
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureSequence, FrameConfig};
use crate::hmm::{viterbi_decode, DecodedSegment, EmissionTable, LoopGrammar, ModelInventory};
use crate::real::{safe_ln, Real};
use crate::scene::{PriorTable, SceneConfig};
use crate::synth::{GroundTruth, MultichannelRecording};

/// Feature sequences of all `K x P` beamformer outputs, array-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelFeatures<T> {
    n_arrays: usize,
    n_cells: usize,
    seqs: Vec<FeatureSequence<T>>,
}

impl<T: Real> ChannelFeatures<T> {
    pub fn new(n_arrays: usize, n_cells: usize, seqs: Vec<FeatureSequence<T>>) -> Result<Self> {
        if seqs.len() != n_arrays * n_cells {
            return Err(Error::LengthMismatch {
                expected: n_arrays * n_cells,
                actual: seqs.len(),
            });
        }
        let n = seqs.first().map_or(0, |s| s.len());
        if seqs.iter().any(|s| s.len() != n) {
            return Err(Error::Config("channel feature sequences differ in length".into()));
        }
        Ok(ChannelFeatures {
            n_arrays,
            n_cells,
            seqs,
        })
    }

    pub fn n_arrays(&self) -> usize {
        self.n_arrays
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_frames(&self) -> usize {
        self.seqs.first().map_or(0, |s| s.len())
    }

    pub fn get(&self, k: usize, j: usize) -> &FeatureSequence<T> {
        &self.seqs[k * self.n_cells + j]
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeatureSequence<T>> {
        self.seqs.iter()
    }
}

/// Beamforms a recording towards every cell and extracts features from each output.
pub fn extract_channel_features<T: Real>(
    scene: &SceneConfig,
    beams: &BeamformerBank<T>,
    extractor: &FeatureExtractor<T>,
    recording: &MultichannelRecording<T>,
) -> Result<ChannelFeatures<T>> {
    if (recording.sample_rate - scene.sample_rate).abs() > 1e-9 {
        return Err(Error::SampleRate(recording.sample_rate, scene.sample_rate));
    }
    let outputs = beams.apply_all(scene, &recording.channels)?;
    let n_cells = scene.n_cells();
    let seqs = outputs
        .par_iter()
        .enumerate()
        .map(|(idx, y)| extractor.extract(y, (idx / n_cells, idx % n_cells)))
        .collect();
    ChannelFeatures::new(scene.arrays.len(), n_cells, seqs)
}

/// Emission tables of every channel under the matching array's models.
#[derive(Clone, Debug)]
pub struct ScoredChannels<T> {
    n_cells: usize,
    tables: Vec<EmissionTable<T>>,
}

impl<T: Real> ScoredChannels<T> {
    pub fn new(inventory: &ModelInventory<T>, features: &ChannelFeatures<T>) -> Result<Self> {
        if inventory.n_arrays() != features.n_arrays() {
            return Err(Error::LengthMismatch {
                expected: features.n_arrays(),
                actual: inventory.n_arrays(),
            });
        }
        let dim = inventory.array(0).dim();
        if let Some(s) = features.iter().find(|s| s.dim != dim && !s.is_empty()) {
            return Err(Error::LengthMismatch {
                expected: dim,
                actual: s.dim,
            });
        }
        let n_cells = features.n_cells();
        let tables = features
            .seqs
            .par_iter()
            .enumerate()
            .map(|(idx, s)| EmissionTable::new(inventory.array(idx / n_cells), &s.view()))
            .collect();
        Ok(ScoredChannels { n_cells, tables })
    }

    pub fn n_arrays(&self) -> usize {
        self.tables.len() / self.n_cells
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_frames(&self) -> usize {
        self.tables.first().map_or(0, |t| t.n_frames())
    }

    pub fn table(&self, k: usize, j: usize) -> &EmissionTable<T> {
        &self.tables[k * self.n_cells + j]
    }
}

/// Viterbi decoding of one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedSequence<T> {
    pub channel: (usize, usize),
    pub segments: Vec<DecodedSegment>,
    pub score: T,
}

/// Decodes every channel and returns them best first (ties: lowest `(k, j)`).
/// `n_best` bounds the length of the result.
pub fn step1_detect<T: Real>(
    inventory: &ModelInventory<T>,
    scored: &ScoredChannels<T>,
    grammar: &LoopGrammar<T>,
    n_best: usize,
) -> Result<Vec<DecodedSequence<T>>> {
    let n_cells = scored.n_cells();
    let mut all: Vec<DecodedSequence<T>> = scored
        .tables
        .par_iter()
        .enumerate()
        .map(|(idx, table)| {
            let k = idx / n_cells;
            let d = viterbi_decode(inventory.array(k), table, grammar)?;
            Ok(DecodedSequence {
                channel: (k, idx % n_cells),
                segments: d.segments,
                score: d.score,
            })
        })
        .collect::<Result<_>>()?;
    // stable sort keeps (k, j) order among equal scores
    all.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
    all.truncate(n_best.max(1));
    Ok(all)
}

/// Non-silence segments of a decoding as `(start, end)` frame intervals.
pub fn event_intervals(seq: &DecodedSequence<impl Real>, silence: Option<usize>) -> Vec<(usize, usize)> {
    seq.segments
        .iter()
        .filter(|s| Some(s.label) != silence)
        .map(|s| (s.start, s.end))
        .collect()
}

/// Log-likelihoods of one interval, indexed `[array][cell][class]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodTensor<T> {
    pub start: usize,
    pub end: usize,
    n_arrays: usize,
    n_cells: usize,
    /// Scene class id of each entry on the class axis.
    classes: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> LikelihoodTensor<T> {
    pub fn from_fn(
        start: usize,
        end: usize,
        n_arrays: usize,
        n_cells: usize,
        classes: Vec<usize>,
        f: impl Fn(usize, usize, usize) -> T,
    ) -> Self {
        let c = classes.len();
        let mut data = Vec::with_capacity(n_arrays * n_cells * c);
        for k in 0..n_arrays {
            for j in 0..n_cells {
                for i in 0..c {
                    data.push(f(k, j, i));
                }
            }
        }
        LikelihoodTensor {
            start,
            end,
            n_arrays,
            n_cells,
            classes,
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_arrays, self.n_cells, self.classes.len())
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    #[inline]
    pub fn get(&self, k: usize, j: usize, i: usize) -> T {
        self.data[(k * self.n_cells + j) * self.classes.len() + i]
    }
}

/// Scores `start..end` with the model of every class in `classes` on every channel.
pub fn build_likelihood_tensor<T: Real>(
    inventory: &ModelInventory<T>,
    scored: &ScoredChannels<T>,
    start: usize,
    end: usize,
    classes: &[usize],
) -> Result<LikelihoodTensor<T>> {
    if end > scored.n_frames() || start >= end {
        return Err(Error::LengthMismatch {
            expected: scored.n_frames(),
            actual: end,
        });
    }
    let model_idx: Vec<usize> = classes
        .iter()
        .map(|&c| inventory.array(0).index_of(c).ok_or(Error::UnknownClass(c)))
        .collect::<Result<_>>()?;
    let (n_arrays, n_cells) = (scored.n_arrays(), scored.n_cells());
    let mut data = Vec::with_capacity(n_arrays * n_cells * classes.len());
    for k in 0..n_arrays {
        let set = inventory.array(k);
        for j in 0..n_cells {
            let table = scored.table(k, j);
            for &m in &model_idx {
                data.push(table.segment_loglik(set, m, start, end)?);
            }
        }
    }
    if data.iter().any(|v| !v.is_finite()) {
        log::warn!("non-finite likelihood in interval {start}..{end}");
    }
    Ok(LikelihoodTensor {
        start,
        end,
        n_arrays,
        n_cells,
        classes: classes.to_vec(),
        data,
    })
}

/// How priors enter the fused score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PriorWeight {
    /// Summed array log-likelihoods plus the log priors once.
    #[default]
    Once,
    /// Literal product of per-array posteriors: log priors counted `K` times.
    PerArray,
}

/// Restrictions on the MAP search domain.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchDomain {
    pub excluded_classes: Vec<usize>,
    pub excluded_cells: Vec<usize>,
    /// If set, only these cells are considered.
    pub allowed_cells: Option<Vec<usize>>,
}

impl SearchDomain {
    fn admits(&self, class: usize, cell: usize) -> bool {
        !self.excluded_classes.contains(&class)
            && !self.excluded_cells.contains(&cell)
            && self.allowed_cells.as_ref().is_none_or(|a| a.contains(&cell))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventHypothesis<T> {
    /// Scene class id.
    pub class: usize,
    pub cell: usize,
    /// Frame interval, end exclusive.
    pub start: usize,
    pub end: usize,
    /// Fused log-posterior (up to a constant).
    pub score: T,
    /// 1 for the first MAP pass on the interval, 2 for the second.
    pub pass: u8,
}

/// Fused `(class, cell)` decision. Ties go to the lowest class axis index, then the lowest cell.
pub fn map_decide<T: Real>(
    tensor: &LikelihoodTensor<T>,
    priors: &PriorTable,
    weight: PriorWeight,
    domain: &SearchDomain,
) -> Result<EventHypothesis<T>> {
    let (n_arrays, n_cells, n_classes) = tensor.shape();
    if priors.n_cells() != n_cells {
        return Err(Error::LengthMismatch {
            expected: n_cells,
            actual: priors.n_cells(),
        });
    }
    if let Some(&c) = tensor.classes.iter().find(|&&c| c >= priors.n_classes()) {
        return Err(Error::UnknownClass(c));
    }
    let times = T::lit(match weight {
        PriorWeight::Once => 1.0,
        PriorWeight::PerArray => n_arrays as f64,
    });
    let mut best: Option<(T, usize, usize)> = None;
    let mut any_admissible = false;
    for i in 0..n_classes {
        let class = tensor.classes[i];
        let class_prior = priors.class_priors[class];
        for j in 0..n_cells {
            if !domain.admits(class, j) {
                continue;
            }
            any_admissible = true;
            if class_prior <= 0.0 || priors.position_priors[j] <= 0.0 {
                continue;
            }
            let prior = safe_ln(T::lit(class_prior)) + safe_ln(T::lit(priors.position_priors[j]));
            let lik: T = (0..n_arrays).map(|k| tensor.get(k, j, i)).sum();
            let score = lik + times * prior;
            if best.is_none_or(|(b, _, _)| score > b) {
                best = Some((score, i, j));
            }
        }
    }
    if !any_admissible {
        return Err(Error::Config("the MAP search domain is empty".into()));
    }
    let (score, i, j) = best.ok_or(Error::ZeroPrior)?;
    Ok(EventHypothesis {
        class: tensor.classes[i],
        cell: j,
        start: tensor.start,
        end: tensor.end,
        score,
        pass: 1,
    })
}

/// Where the event intervals for Step 2 come from.
#[derive(Clone, Debug, PartialEq)]
pub enum Endpoints {
    /// Step 1 on all channels; intervals of the best channel.
    Estimated,
    /// Given frame intervals (skips Step 1). Optional per-interval allowed cells.
    Known(Vec<KnownInterval>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnownInterval {
    pub start: usize,
    pub end: usize,
    pub allowed_cells: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointConfig<T> {
    pub n_sources: usize,
    pub grammar: LoopGrammar<T>,
    pub prior_weight: PriorWeight,
    /// Take the second source's interval from the second-best Step-1 channel
    /// when it overlaps the first one.
    pub second_best_intervals: bool,
}

impl<T: Real> Default for JointConfig<T> {
    fn default() -> Self {
        JointConfig {
            n_sources: 1,
            grammar: LoopGrammar::default(),
            prior_weight: PriorWeight::default(),
            second_best_intervals: false,
        }
    }
}

/// Everything produced for one recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Recognition<T> {
    /// Best Step-1 channel (absent with known end-points).
    pub step1: Option<DecodedSequence<T>>,
    pub hypotheses: Vec<EventHypothesis<T>>,
}

fn overlap(a: (usize, usize), b: (usize, usize)) -> usize {
    a.1.min(b.1).saturating_sub(a.0.max(b.0))
}

/// Step 1 (or given intervals) followed by one or two MAP passes per interval.
/// `classes` lists the scene class ids that Step 2 may output.
pub fn recognize_localize<T: Real>(
    inventory: &ModelInventory<T>,
    scored: &ScoredChannels<T>,
    classes: &[usize],
    silence: Option<usize>,
    priors: &PriorTable,
    endpoints: &Endpoints,
    cfg: &JointConfig<T>,
) -> Result<Recognition<T>> {
    if !(1..=2).contains(&cfg.n_sources) {
        return Err(Error::Config(format!("n_sources must be 1 or 2, got {}", cfg.n_sources)));
    }
    let min_len = inventory
        .array(0)
        .models()
        .iter()
        .filter(|m| classes.contains(&m.label))
        .map(|m| m.min_frames())
        .max()
        .unwrap_or(1);
    let (step1, intervals, alt) = match endpoints {
        Endpoints::Estimated => {
            let n_best = if cfg.second_best_intervals { 2 } else { 1 };
            let ranked = step1_detect(inventory, scored, &cfg.grammar, n_best)?;
            let ivs: Vec<KnownInterval> = event_intervals(&ranked[0], silence)
                .into_iter()
                .map(|(start, end)| KnownInterval {
                    start,
                    end,
                    allowed_cells: None,
                })
                .collect();
            let alt = ranked.get(1).map(|r| event_intervals(r, silence)).unwrap_or_default();
            (ranked.into_iter().next(), ivs, alt)
        }
        Endpoints::Known(ivs) => (None, ivs.clone(), Vec::new()),
    };

    let mut hyps = Vec::new();
    for iv in &intervals {
        let (start, end) = widen(iv.start, iv.end, min_len, scored.n_frames());
        let tensor = build_likelihood_tensor(inventory, scored, start, end, classes)?;
        let mut domain = SearchDomain {
            allowed_cells: iv.allowed_cells.clone(),
            ..Default::default()
        };
        let first = map_decide(&tensor, priors, cfg.prior_weight, &domain)?;
        if cfg.n_sources == 2 {
            domain.excluded_classes.push(first.class);
            domain.excluded_cells.push(first.cell);
            let second_tensor = match alt.iter().max_by_key(|&&a| overlap(a, (start, end))) {
                Some(&a) if overlap(a, (start, end)) > 0 => {
                    let (s, e) = widen(a.0, a.1, min_len, scored.n_frames());
                    Some(build_likelihood_tensor(inventory, scored, s, e, classes)?)
                }
                _ => None,
            };
            let t2 = second_tensor.as_ref().unwrap_or(&tensor);
            hyps.push(first);
            match map_decide(t2, priors, cfg.prior_weight, &domain) {
                Ok(mut h) => {
                    h.pass = 2;
                    hyps.push(h);
                }
                Err(e) => log::debug!("no second source for {start}..{end}: {e}"),
            }
        } else {
            hyps.push(first);
        }
    }
    Ok(Recognition { step1, hypotheses: hyps })
}

/// Grows a too-short interval symmetrically (clamped to the sequence).
fn widen(start: usize, end: usize, min_len: usize, n_frames: usize) -> (usize, usize) {
    let (mut s, mut e) = (start.min(n_frames), end.min(n_frames));
    while e - s < min_len && (s > 0 || e < n_frames) {
        if e < n_frames {
            e += 1;
        }
        if e - s < min_len && s > 0 {
            s -= 1;
        }
    }
    (s, e)
}

/// Ground-truth events grouped by identical extent, as frame intervals. With
/// `restrict_to_truth` each interval only admits the cells of its true sources.
pub fn truth_intervals(
    truth: &[GroundTruth],
    frames: &FrameConfig,
    n_frames: usize,
    restrict_to_truth: bool,
) -> Vec<KnownInterval> {
    let mut groups: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    for g in truth {
        match groups
            .iter_mut()
            .find(|(s, e, _)| *s == g.start_sample && *e == g.end_sample)
        {
            Some((_, _, cells)) => cells.push(g.cell),
            None => groups.push((g.start_sample, g.end_sample, vec![g.cell])),
        }
    }
    groups.sort_by_key(|g| (g.0, g.1));
    groups
        .into_iter()
        .map(|(s, e, cells)| {
            let sr = frames.sample_rate;
            let start = frames.seconds_to_frame(s as f64 / sr).min(n_frames);
            let end = frames.seconds_to_frame(e as f64 / sr).min(n_frames).max(start + 1);
            KnownInterval {
                start,
                end,
                allowed_cells: restrict_to_truth.then_some(cells),
            }
        })
        .collect()
}
