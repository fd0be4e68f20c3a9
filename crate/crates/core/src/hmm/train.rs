//! Baum-Welch training of a single left-to-right model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{EventModel, GmmState, ModelSet, DEFAULT_COMPONENTS, DEFAULT_STATES};
use crate::error::{Error, Result};
use crate::features::FeatureView;
use crate::real::{log_add, log_sum_exp, Real};

/// Variance used when the training data has (almost) no spread at all.
const MIN_VARIANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub n_states: usize,
    pub n_components: usize,
    pub max_iter: usize,
    /// Stop once the relative log-likelihood gain drops below this.
    pub tol: f64,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub var_floor: f64,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_states: DEFAULT_STATES,
            n_components: DEFAULT_COMPONENTS,
            max_iter: 15,
            tol: 1e-4,
            var_floor: 1e-3,
            kmeans_iters: 10,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub label: usize,
    /// Total training log-likelihood before each re-estimation, plus the
    /// final value.
    pub loglik: Vec<f64>,
    pub converged: bool,
    pub n_segments: usize,
    pub n_frames: usize,
}

impl TrainReport {
    pub fn iterations(&self) -> usize {
        self.loglik.len().saturating_sub(1)
    }

    /// True if no iteration lowered the log-likelihood by more than `slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.loglik.windows(2).all(|w| w[1] >= w[0] - slack)
    }
}

struct Stats<T> {
    occ: Vec<Vec<T>>,
    sum: Vec<Vec<T>>,
    sum_sq: Vec<Vec<T>>,
    stay: Vec<T>,
    leave: Vec<T>,
    loglik: f64,
}

impl<T: Real> Stats<T> {
    fn new(model: &EventModel<T>) -> Self {
        let d = model.dim();
        let m = |s: &GmmState<T>| s.n_components();
        Stats {
            occ: model.states().iter().map(|s| vec![T::zero(); m(s)]).collect(),
            sum: model.states().iter().map(|s| vec![T::zero(); m(s) * d]).collect(),
            sum_sq: model.states().iter().map(|s| vec![T::zero(); m(s) * d]).collect(),
            stay: vec![T::zero(); model.n_states()],
            leave: vec![T::zero(); model.n_states()],
            loglik: 0.0,
        }
    }
}

fn accumulate<T: Real>(model: &EventModel<T>, obs: &FeatureView<'_, T>, st: &mut Stats<T>) {
    let n = model.n_states();
    let len = obs.len();
    let d = model.dim();
    let ninf = T::neg_infinity();
    let stay: Vec<T> = (0..n).map(|i| model.log_stay(i)).collect();
    let leave: Vec<T> = (0..n).map(|i| model.log_leave(i)).collect();

    // per-frame, per-state component terms and their log-sum
    let mut comp: Vec<Vec<Vec<T>>> = Vec::with_capacity(len);
    let mut b = vec![vec![ninf; n]; len];
    for (t, x) in obs.frames().enumerate() {
        let row: Vec<Vec<T>> = model
            .states()
            .iter()
            .map(|s| {
                let mut c = vec![T::zero(); s.n_components()];
                s.component_log_densities(x, &mut c);
                c
            })
            .collect();
        for i in 0..n {
            b[t][i] = log_sum_exp(&row[i]);
        }
        comp.push(row);
    }

    let mut alpha = vec![vec![ninf; n]; len];
    alpha[0][0] = b[0][0];
    for t in 1..len {
        for i in 0..n {
            let mut a = alpha[t - 1][i] + stay[i];
            if i > 0 {
                a = log_add(a, alpha[t - 1][i - 1] + leave[i - 1]);
            }
            alpha[t][i] = a + b[t][i];
        }
    }
    let mut beta = vec![vec![ninf; n]; len];
    beta[len - 1][n - 1] = leave[n - 1];
    for t in (0..len - 1).rev() {
        for i in 0..n {
            let mut v = stay[i] + b[t + 1][i] + beta[t + 1][i];
            if i + 1 < n {
                v = log_add(v, leave[i] + b[t + 1][i + 1] + beta[t + 1][i + 1]);
            }
            beta[t][i] = v;
        }
    }
    let total = alpha[len - 1][n - 1] + leave[n - 1];
    st.loglik += total.as_f64();

    for t in 0..len {
        let x = obs.frame(t);
        for i in 0..n {
            let g = alpha[t][i] + beta[t][i] - total;
            if g == ninf {
                continue;
            }
            for (m, &c) in comp[t][i].iter().enumerate() {
                let w = (g + c - b[t][i]).exp();
                if w == T::zero() {
                    continue;
                }
                st.occ[i][m] = st.occ[i][m] + w;
                let sum = &mut st.sum[i][m * d..(m + 1) * d];
                let sq = &mut st.sum_sq[i][m * d..(m + 1) * d];
                for ((s, q), &xd) in sum.iter_mut().zip(sq.iter_mut()).zip(x) {
                    *s = *s + w * xd;
                    *q = *q + w * xd * xd;
                }
            }
            if t + 1 < len {
                let s = (alpha[t][i] + stay[i] + b[t + 1][i] + beta[t + 1][i] - total).exp();
                st.stay[i] = st.stay[i] + s;
                if i + 1 < n {
                    let a = (alpha[t][i] + leave[i] + b[t + 1][i + 1] + beta[t + 1][i + 1] - total).exp();
                    st.leave[i] = st.leave[i] + a;
                }
            }
        }
    }
    // every path exits the last state exactly once
    st.leave[n - 1] = st.leave[n - 1] + T::one();
}

fn reestimate<T: Real>(model: &EventModel<T>, st: &Stats<T>, floor: &[T]) -> Result<EventModel<T>> {
    let d = model.dim();
    let mut states = Vec::with_capacity(model.n_states());
    let mut stay = Vec::with_capacity(model.n_states());
    for (i, old) in model.states().iter().enumerate() {
        let occ_state: T = st.occ[i].iter().copied().sum();
        let tiny = occ_state * T::lit(1e-10);
        let mut weights = Vec::with_capacity(old.n_components());
        let mut means = Vec::with_capacity(old.n_components() * d);
        let mut vars = Vec::with_capacity(old.n_components() * d);
        for m in 0..old.n_components() {
            let occ = st.occ[i][m];
            weights.push(occ / occ_state);
            if occ > tiny && occ > T::zero() {
                let sum = &st.sum[i][m * d..(m + 1) * d];
                let sq = &st.sum_sq[i][m * d..(m + 1) * d];
                for k in 0..d {
                    let mu = sum[k] / occ;
                    means.push(mu);
                    vars.push((sq[k] / occ - mu * mu).max(floor[k]));
                }
            } else {
                means.extend_from_slice(old.mean(m));
                vars.extend_from_slice(old.variance(m));
            }
        }
        // renormalise against rounding
        let wsum: T = weights.iter().copied().sum();
        weights.iter_mut().for_each(|w| *w = *w / wsum);
        states.push(GmmState::new(d, weights, means, vars)?);
        stay.push(st.stay[i] / (st.stay[i] + st.leave[i]));
    }
    EventModel::new(model.label, model.array, states, stay)
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// k-means initialisation of one state's mixture.
fn init_state<T: Real>(frames: &[&[T]], cfg: &TrainConfig, floor: &[T], rng: &mut ChaCha8Rng) -> Result<GmmState<T>> {
    let d = floor.len();
    let k = cfg.n_components.min(frames.len()).max(1);
    let picks = rand::seq::index::sample(rng, frames.len(), k);
    let mut centers: Vec<Vec<T>> = picks.iter().map(|i| frames[i].to_vec()).collect();
    let mut assign = vec![0usize; frames.len()];
    for _ in 0..cfg.kmeans_iters.max(1) {
        for (a, x) in assign.iter_mut().zip(frames) {
            let mut best = T::infinity();
            for (c, center) in centers.iter().enumerate() {
                let dist = sq_dist(x, center);
                if dist < best {
                    best = dist;
                    *a = c;
                }
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&&[T]> = frames.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(x, _)| x).collect();
            if members.is_empty() {
                continue;
            }
            let cnt = T::lit(members.len() as f64);
            for (kd, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|x| x[kd]).sum::<T>() / cnt;
            }
        }
    }
    let pooled_var: Vec<T> = {
        let n = T::lit(frames.len() as f64);
        (0..d)
            .map(|kd| {
                let mu = frames.iter().map(|x| x[kd]).sum::<T>() / n;
                (frames.iter().map(|x| (x[kd] - mu) * (x[kd] - mu)).sum::<T>() / n).max(floor[kd])
            })
            .collect()
    };
    let mut counts = vec![0usize; k];
    let mut vars = vec![T::zero(); k * d];
    for (x, &a) in frames.iter().zip(&assign) {
        counts[a] += 1;
        for kd in 0..d {
            let diff = x[kd] - centers[a][kd];
            vars[a * d + kd] = vars[a * d + kd] + diff * diff;
        }
    }
    for c in 0..k {
        for kd in 0..d {
            let v = &mut vars[c * d + kd];
            *v = if counts[c] > 1 {
                (*v / T::lit(counts[c] as f64)).max(floor[kd])
            } else {
                pooled_var[kd]
            };
        }
    }
    let total: usize = counts.iter().map(|&c| c.max(1)).sum();
    let weights = counts.iter().map(|&c| T::lit(c.max(1) as f64 / total as f64)).collect();
    GmmState::new(d, weights, centers.concat(), vars)
}

fn variance_floor<T: Real>(segments: &[FeatureView<'_, T>], dim: usize, frac: f64, label: usize) -> Vec<T> {
    let n: usize = segments.iter().map(|s| s.len()).sum();
    let nf = n as f64;
    let mut mean = vec![0.0f64; dim];
    let mut sq = vec![0.0f64; dim];
    for x in segments.iter().flat_map(|s| s.frames()) {
        for k in 0..dim {
            let v = x[k].as_f64();
            mean[k] += v;
            sq[k] += v * v;
        }
    }
    (0..dim)
        .map(|k| {
            let mu = mean[k] / nf;
            let var = (sq[k] / nf - mu * mu).max(0.0);
            let f = frac * var;
            if f < MIN_VARIANCE {
                log::warn!("class {label}: dimension {k} has almost no variance; flooring at {MIN_VARIANCE}");
                T::lit(MIN_VARIANCE)
            } else {
                T::lit(f)
            }
        })
        .collect()
}

/// Trains one model on the given segments (one observation sequence each).
pub fn train_model<T: Real>(
    label: usize,
    array: usize,
    segments: &[FeatureView<'_, T>],
    cfg: &TrainConfig,
) -> Result<(EventModel<T>, TrainReport)> {
    if cfg.n_states == 0 || cfg.n_components == 0 {
        return Err(Error::Config("models need at least one state and one component".into()));
    }
    let usable: Vec<FeatureView<'_, T>> = segments.iter().filter(|s| s.len() >= cfg.n_states).copied().collect();
    if usable.len() < segments.len() {
        log::warn!(
            "class {label}: skipped {} segments shorter than {} frames",
            segments.len() - usable.len(),
            cfg.n_states
        );
    }
    if usable.is_empty() {
        return Err(Error::EmptyData(format!("training segments for class {label}")));
    }
    let dim = usable[0].dim;
    if usable.iter().any(|s| s.dim != dim) {
        return Err(Error::Config("training segments disagree on feature dimension".into()));
    }
    let floor = variance_floor(&usable, dim, cfg.var_floor, label);

    // uniform segmentation into states
    let n = cfg.n_states;
    let mut pools: Vec<Vec<&[T]>> = vec![Vec::new(); n];
    for s in &usable {
        let len = s.len();
        for (t, x) in s.frames().enumerate() {
            pools[(t * n / len).min(n - 1)].push(x);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(
        cfg.seed ^ (label as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (array as u64).wrapping_mul(0xc2b2_ae3d),
    );
    let states = pools
        .iter()
        .map(|p| init_state(p, cfg, &floor, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let segs = T::lit(usable.len() as f64);
    let stay = pools
        .iter()
        .map(|p| {
            let dur = T::lit(p.len() as f64) / segs;
            (T::one() - T::one() / dur).max(T::lit(0.5)).min(T::lit(0.98))
        })
        .collect();
    let mut model = EventModel::new(label, array, states, stay)?;

    let mut trace = Vec::new();
    let mut converged = false;
    for it in 0..=cfg.max_iter {
        let mut st = Stats::new(&model);
        for s in &usable {
            accumulate(&model, s, &mut st);
        }
        trace.push(st.loglik);
        if it > 0 {
            let prev = trace[it - 1];
            if (st.loglik - prev) <= cfg.tol * prev.abs() {
                converged = true;
                break;
            }
        }
        if it == cfg.max_iter {
            break;
        }
        model = reestimate(&model, &st, &floor)?;
    }
    let n_frames = usable.iter().map(|s| s.len()).sum();
    log::debug!(
        "trained class {label} array {array}: {} iterations, loglik {:.3}",
        trace.len() - 1,
        trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok((
        model,
        TrainReport {
            label,
            loglik: trace,
            converged,
            n_segments: usable.len(),
            n_frames,
        },
    ))
}

/// Trains one model per `(label, segments)` entry for array `array`.
pub fn train_model_set<T: Real>(
    array: usize,
    data: &[(usize, Vec<FeatureView<'_, T>>)],
    cfg: &TrainConfig,
) -> Result<(ModelSet<T>, Vec<TrainReport>)> {
    let trained: Vec<(EventModel<T>, TrainReport)> = data
        .par_iter()
        .map(|(label, segs)| train_model(*label, array, segs, cfg))
        .collect::<Result<_>>()?;
    let (models, reports) = trained.into_iter().unzip();
    Ok((ModelSet::new(array, models)?, reports))
}
