use super::{EmissionTable, ModelSet};
use crate::error::{Error, Result};
use crate::real::Real;

/// Loop grammar over all models of a set: any model may follow any other
/// with probability `1 / n_models`, times an optional insertion penalty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopGrammar<T> {
    /// Log-domain penalty added at every model entry (usually <= 0).
    pub insertion_penalty: T,
}

impl<T: Real> Default for LoopGrammar<T> {
    fn default() -> Self {
        LoopGrammar {
            insertion_penalty: T::zero(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodedSegment {
    pub label: usize,
    /// Frame range, end exclusive.
    pub start: usize,
    pub end: usize,
}

impl DecodedSegment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoding<T> {
    pub segments: Vec<DecodedSegment>,
    /// Log probability of the best path.
    pub score: T,
}

const START: u32 = u32::MAX;
const ENTRY_FLAG: u32 = 1 << 31;

/// Best segmentation of the whole sequence into consecutive model
/// instances.
pub fn viterbi_decode<T: Real>(
    set: &ModelSet<T>,
    table: &EmissionTable<T>,
    grammar: &LoopGrammar<T>,
) -> Result<Decoding<T>> {
    let n_frames = table.n_frames();
    let min_len = set.models().iter().map(|m| m.min_frames()).min().unwrap_or(1);
    if n_frames < min_len {
        return Err(Error::SegmentTooShort {
            frames: n_frames,
            required: min_len,
        });
    }
    let width = table.width();
    let ninf = T::neg_infinity();
    let enter = -T::lit(set.len() as f64).ln() + grammar.insertion_penalty;

    // flattened state bookkeeping
    let mut stay = Vec::with_capacity(width);
    let mut leave = Vec::with_capacity(width);
    let mut is_entry = Vec::with_capacity(width);
    let mut model_of = Vec::with_capacity(width);
    let mut lasts = Vec::with_capacity(set.len());
    for (mi, m) in set.models().iter().enumerate() {
        for i in 0..m.n_states() {
            stay.push(m.log_stay(i));
            leave.push(m.log_leave(i));
            is_entry.push(i == 0);
            model_of.push(mi);
        }
        lasts.push(table.offset(mi) + m.n_states() - 1);
    }

    let mut delta: Vec<T> = (0..width)
        .map(|s| if is_entry[s] { enter + table.row(0)[s] } else { ninf })
        .collect();
    let mut next = vec![ninf; width];
    // back[t * width + s]: predecessor at t-1, with ENTRY_FLAG if reached by a model entry
    let mut back = vec![START; n_frames * width];

    for t in 1..n_frames {
        let mut best_exit = ninf;
        let mut best_from = 0usize;
        for &l in &lasts {
            let v = delta[l] + leave[l];
            if v > best_exit {
                best_exit = v;
                best_from = l;
            }
        }
        let em = table.row(t);
        let bp = &mut back[t * width..(t + 1) * width];
        for s in 0..width {
            let mut v = delta[s] + stay[s];
            let mut from = s as u32;
            if is_entry[s] {
                let e = best_exit + enter;
                if e > v {
                    v = e;
                    from = best_from as u32 | ENTRY_FLAG;
                }
            } else {
                let a = delta[s - 1] + leave[s - 1];
                if a > v {
                    v = a;
                    from = (s - 1) as u32;
                }
            }
            next[s] = v + em[s];
            bp[s] = from;
        }
        std::mem::swap(&mut delta, &mut next);
    }

    let mut score = ninf;
    let mut state = usize::MAX;
    for &l in &lasts {
        let v = delta[l] + leave[l];
        if v > score {
            score = v;
            state = l;
        }
    }
    if state == usize::MAX {
        return Err(Error::SegmentTooShort {
            frames: n_frames,
            required: min_len,
        });
    }

    let mut segments = Vec::new();
    let mut end = n_frames;
    for t in (0..n_frames).rev() {
        let b = back[t * width + state];
        let new_segment = t == 0 || b & ENTRY_FLAG != 0;
        if new_segment {
            segments.push(DecodedSegment {
                label: set.models()[model_of[state]].label,
                start: t,
                end,
            });
            end = t;
        }
        if t > 0 {
            state = (b & !ENTRY_FLAG) as usize;
        }
    }
    segments.reverse();
    Ok(Decoding { segments, score })
}
