//! Left-to-right HMM-GMM event models.
//!
//! A model is entered in its first state and left from its last one; each
//! state either stays or advances. Scores are natural-log likelihoods.

mod gmm;
mod io;
mod train;
mod viterbi;

pub use gmm::GmmState;
pub use io::{read_inventory, read_model_set, write_inventory, write_model_set};
pub use train::{train_model, train_model_set, TrainConfig, TrainReport};
pub use viterbi::{viterbi_decode, DecodedSegment, Decoding, LoopGrammar};

use crate::error::{Error, Result};
use crate::features::FeatureView;
use crate::real::{log_add, safe_ln, Real};

/// Default number of emitting states per model.
pub const DEFAULT_STATES: usize = 3;
/// Default number of Gaussians per state.
pub const DEFAULT_COMPONENTS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct EventModel<T> {
    /// Class id from the scene's class list.
    pub label: usize,
    /// Array whose beamformer outputs trained this model.
    pub array: usize,
    states: Vec<GmmState<T>>,
    /// Self-loop probability per state; the remainder advances (or exits).
    stay: Vec<T>,
}

impl<T: Real> EventModel<T> {
    pub fn new(label: usize, array: usize, states: Vec<GmmState<T>>, stay: Vec<T>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Config("a model needs at least one state".into()));
        }
        if stay.len() != states.len() {
            return Err(Error::LengthMismatch {
                expected: states.len(),
                actual: stay.len(),
            });
        }
        if stay.iter().any(|&p| !(p >= T::zero() && p < T::one())) {
            return Err(Error::Config("self-loop probabilities must lie in [0, 1)".into()));
        }
        let dim = states[0].dim();
        if states.iter().any(|s| s.dim() != dim) {
            return Err(Error::Config("all states of a model must share one feature dimension".into()));
        }
        Ok(EventModel {
            label,
            array,
            states,
            stay,
        })
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    pub fn states(&self) -> &[GmmState<T>] {
        &self.states
    }

    pub fn stay(&self) -> &[T] {
        &self.stay
    }

    pub fn log_stay(&self, i: usize) -> T {
        safe_ln(self.stay[i])
    }

    /// Log probability of leaving state `i` (advance, or exit for the last state).
    pub fn log_leave(&self, i: usize) -> T {
        safe_ln(T::one() - self.stay[i])
    }

    /// Full transition matrix including the non-emitting entry (row 0) and
    /// exit (last column) states.
    pub fn transition_matrix(&self) -> Vec<Vec<T>> {
        let n = self.n_states();
        let mut a = vec![vec![T::zero(); n + 2]; n + 2];
        a[0][1] = T::one();
        for i in 0..n {
            a[i + 1][i + 1] = self.stay[i];
            a[i + 1][i + 2] = T::one() - self.stay[i];
        }
        a
    }

    /// Shortest segment the model can emit.
    pub fn min_frames(&self) -> usize {
        self.n_states()
    }

    /// Per-frame state log-densities, `len x n_states` row-major.
    pub fn emissions(&self, obs: &FeatureView<'_, T>) -> Vec<T> {
        let n = self.n_states();
        let mut out = Vec::with_capacity(obs.len() * n);
        for x in obs.frames() {
            out.extend(self.states.iter().map(|s| s.log_density(x)));
        }
        out
    }

    /// `log p(obs | model)` with the sequence required to end by exiting the
    /// last state.
    pub fn forward_loglik(&self, obs: &FeatureView<'_, T>) -> Result<T> {
        if obs.len() < self.min_frames() {
            return Err(Error::SegmentTooShort {
                frames: obs.len(),
                required: self.min_frames(),
            });
        }
        let em = self.emissions(obs);
        Ok(self.forward_from(obs.len(), |t, i| em[t * self.n_states() + i]))
    }

    /// Forward recursion over `len` frames with emission lookup `em(t, state)`.
    pub(crate) fn forward_from(&self, len: usize, em: impl Fn(usize, usize) -> T) -> T {
        let n = self.n_states();
        let ninf = T::neg_infinity();
        if len < n {
            return ninf;
        }
        let stay: Vec<T> = (0..n).map(|i| self.log_stay(i)).collect();
        let leave: Vec<T> = (0..n).map(|i| self.log_leave(i)).collect();
        let mut alpha = vec![ninf; n];
        alpha[0] = em(0, 0);
        let mut next = vec![ninf; n];
        for t in 1..len {
            for i in 0..n {
                let mut a = alpha[i] + stay[i];
                if i > 0 {
                    a = log_add(a, alpha[i - 1] + leave[i - 1]);
                }
                next[i] = a + em(t, i);
            }
            std::mem::swap(&mut alpha, &mut next);
        }
        alpha[n - 1] + leave[n - 1]
    }
}

/// Models of every class for one array.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSet<T> {
    pub array: usize,
    models: Vec<EventModel<T>>,
}

impl<T: Real> ModelSet<T> {
    pub fn new(array: usize, models: Vec<EventModel<T>>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::EmptyData("model set".into()));
        }
        let dim = models[0].dim();
        if models.iter().any(|m| m.dim() != dim) {
            return Err(Error::Config("models of one set must share a feature dimension".into()));
        }
        let mut labels: Vec<usize> = models.iter().map(|m| m.label).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != models.len() {
            return Err(Error::Config("duplicate class label in model set".into()));
        }
        Ok(ModelSet { array, models })
    }

    pub fn models(&self) -> &[EventModel<T>] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.models[0].dim()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.models.iter().map(|m| m.label).collect()
    }

    pub fn by_label(&self, label: usize) -> Option<&EventModel<T>> {
        self.models.iter().find(|m| m.label == label)
    }

    pub fn index_of(&self, label: usize) -> Option<usize> {
        self.models.iter().position(|m| m.label == label)
    }
}

/// One [`ModelSet`] per array.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInventory<T> {
    sets: Vec<ModelSet<T>>,
}

impl<T: Real> ModelInventory<T> {
    pub fn new(sets: Vec<ModelSet<T>>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::EmptyData("model inventory".into()));
        }
        let labels = sets[0].labels();
        for (k, s) in sets.iter().enumerate() {
            if s.array != k {
                return Err(Error::Config(format!("model set {k} is tagged with array {}", s.array)));
            }
            if s.labels() != labels {
                return Err(Error::Config("every array needs the same class models".into()));
            }
        }
        Ok(ModelInventory { sets })
    }

    pub fn sets(&self) -> &[ModelSet<T>] {
        &self.sets
    }

    pub fn n_arrays(&self) -> usize {
        self.sets.len()
    }

    pub fn array(&self, k: usize) -> &ModelSet<T> {
        &self.sets[k]
    }

    pub fn labels(&self) -> Vec<usize> {
        self.sets[0].labels()
    }
}

/// State log-densities of every model of a set on every frame of one
/// observation sequence. Shared by loop-grammar decoding and segment scoring.
#[derive(Clone, Debug)]
pub struct EmissionTable<T> {
    n_frames: usize,
    width: usize,
    offsets: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> EmissionTable<T> {
    pub fn new(set: &ModelSet<T>, obs: &FeatureView<'_, T>) -> Self {
        let mut offsets = Vec::with_capacity(set.len());
        let mut width = 0;
        for m in set.models() {
            offsets.push(width);
            width += m.n_states();
        }
        let mut data = Vec::with_capacity(obs.len() * width);
        for x in obs.frames() {
            for m in set.models() {
                data.extend(m.states().iter().map(|s| s.log_density(x)));
            }
        }
        EmissionTable {
            n_frames: obs.len(),
            width,
            offsets,
            data,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    /// Total number of emitting states over all models.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn offset(&self, model: usize) -> usize {
        self.offsets[model]
    }

    #[inline]
    pub fn get(&self, t: usize, model: usize, state: usize) -> T {
        self.data[t * self.width + self.offsets[model] + state]
    }

    #[inline]
    pub(crate) fn row(&self, t: usize) -> &[T] {
        &self.data[t * self.width..(t + 1) * self.width]
    }

    /// Forward log-likelihood of model `model` on frames `start..end`.
    pub fn segment_loglik(&self, set: &ModelSet<T>, model: usize, start: usize, end: usize) -> Result<T> {
        let m = &set.models()[model];
        if end > self.n_frames || start > end {
            return Err(Error::LengthMismatch {
                expected: self.n_frames,
                actual: end,
            });
        }
        if end - start < m.min_frames() {
            return Err(Error::SegmentTooShort {
                frames: end - start,
                required: m.min_frames(),
            });
        }
        Ok(m.forward_from(end - start, |t, i| self.get(start + t, model, i)))
    }
}

#[cfg(test)]
mod tests;
