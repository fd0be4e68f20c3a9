//! Single-channel recognizer with one model per combination of
//! simultaneous classes (isolated events and events overlapped with speech).

use crate::error::{Error, Result};
use crate::features::{FeatureSequence, FeatureView};
use crate::hmm::{train_model_set, EmissionTable, ModelSet, TrainConfig, TrainReport};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Combination {
    Silence,
    Isolated(usize),
    WithSpeech(usize),
}

impl Combination {
    /// Class reported for this combination (the non-speech member when overlapped).
    pub fn class(&self) -> Option<usize> {
        match *self {
            Combination::Silence => None,
            Combination::Isolated(c) | Combination::WithSpeech(c) => Some(c),
        }
    }
}

/// Non-silence model count: every non-speech class alone and overlapped
/// with speech, plus optionally speech alone.
pub fn combination_count(n_ae_classes: usize, with_speech_alone: bool) -> usize {
    2 * n_ae_classes + usize::from(with_speech_alone)
}

/// Training material, already reduced to one channel's features.
#[derive(Clone, Debug, Default)]
pub struct CombinationData<T> {
    /// Isolated segments per class id (speech included if it should be modelled).
    pub isolated: Vec<(usize, Vec<FeatureSequence<T>>)>,
    /// Segments of each non-speech class overlapped with speech.
    pub with_speech: Vec<(usize, Vec<FeatureSequence<T>>)>,
    pub silence: Vec<FeatureSequence<T>>,
}

#[derive(Clone, Debug)]
pub struct CombinationModels<T> {
    /// Model labels index into `combos`.
    pub set: ModelSet<T>,
    pub combos: Vec<Combination>,
}

pub fn train_all_combinations<T: Real>(
    data: &CombinationData<T>,
    ae_classes: &[usize],
    cfg: &TrainConfig,
) -> Result<(CombinationModels<T>, Vec<TrainReport>)> {
    let mut combos = vec![Combination::Silence];
    let mut segs: Vec<(usize, Vec<FeatureView<'_, T>>)> = vec![(0, data.silence.iter().map(|s| s.view()).collect())];
    for (class, s) in &data.isolated {
        segs.push((combos.len(), s.iter().map(|x| x.view()).collect()));
        combos.push(Combination::Isolated(*class));
    }
    for &c in ae_classes {
        let mixed = data
            .with_speech
            .iter()
            .find(|(class, s)| *class == c && !s.is_empty())
            .ok_or_else(|| Error::EmptyData(format!("overlapped training segments for class {c}")))?;
        segs.push((combos.len(), mixed.1.iter().map(|x| x.view()).collect()));
        combos.push(Combination::WithSpeech(c));
    }
    let (set, reports) = train_model_set(0, &segs, cfg)?;
    Ok((CombinationModels { set, combos }, reports))
}

impl<T: Real> CombinationModels<T> {
    /// Best combination for one segment by forward likelihood (ties: first).
    pub fn classify(&self, table: &EmissionTable<T>, start: usize, end: usize) -> Result<(Combination, T)> {
        let mut best: Option<(Combination, T)> = None;
        for (mi, m) in self.set.models().iter().enumerate() {
            let combo = self.combos[m.label];
            if combo == Combination::Silence {
                continue;
            }
            let s = table.segment_loglik(&self.set, mi, start, end)?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((combo, s));
            }
        }
        best.ok_or_else(|| Error::EmptyData("combination models".into()))
    }

    pub fn silence_label(&self) -> usize {
        0
    }
}
