use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::features::FeatureSequence;

fn random_state(rng: &mut ChaCha8Rng, dim: usize, n_comp: usize) -> GmmState<f64> {
    let raw: Vec<f64> = (0..n_comp).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let means = (0..n_comp * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let vars = (0..n_comp * dim).map(|_| rng.random_range(0.3..1.5)).collect();
    GmmState::new(dim, weights, means, vars).unwrap()
}

fn random_model(rng: &mut ChaCha8Rng, label: usize, n_states: usize, dim: usize) -> EventModel<f64> {
    let states = (0..n_states).map(|_| random_state(rng, dim, 2)).collect();
    let stay = (0..n_states).map(|_| rng.random_range(0.2..0.8)).collect();
    EventModel::new(label, 0, states, stay).unwrap()
}

fn random_obs(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> FeatureSequence<f64> {
    let frames: Vec<Vec<f64>> = (0..len)
        .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    FeatureSequence::from_frames(&frames, (0, 0))
}

/// Sum over every state path, in the linear domain.
fn brute_force_forward(model: &EventModel<f64>, obs: &FeatureSequence<f64>) -> f64 {
    let n = model.n_states();
    let len = obs.len();
    let a = model.transition_matrix();
    let b: Vec<Vec<f64>> = obs
        .frames()
        .map(|x| model.states().iter().map(|s| s.log_density(x).exp()).collect())
        .collect();
    let mut total = 0.0;
    for code in 0..n.pow(len as u32) {
        let path: Vec<usize> = (0..len).map(|t| code / n.pow(t as u32) % n).collect();
        // matrix rows/cols are offset by the non-emitting entry state
        let mut p = a[0][path[0] + 1] * b[0][path[0]];
        for t in 1..len {
            p *= a[path[t - 1] + 1][path[t] + 1] * b[t][path[t]];
        }
        p *= a[path[len - 1] + 1][n + 1];
        total += p;
    }
    total.ln()
}

#[test]
fn forward_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..5 {
        let model = random_model(&mut rng, 0, 3, 2);
        let obs = random_obs(&mut rng, 6 + trial % 2, 2);
        let fast = model.forward_loglik(&obs.view()).unwrap();
        let slow = brute_force_forward(&model, &obs);
        assert!((fast - slow).abs() < 1e-8, "{fast} vs {slow}");
    }
}

#[test]
fn single_state_single_gaussian_by_hand() {
    let g = GmmState::new(1, vec![1.0], vec![0.0], vec![1.0]).unwrap();
    let model = EventModel::new(0, 0, vec![g], vec![0.75]).unwrap();
    let xs = [0.0, 1.0, -2.0];
    let obs = FeatureSequence::from_frames(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>(), (0, 0));
    let log_n = |x: f64| -0.5 * (std::f64::consts::TAU).ln() - 0.5 * x * x;
    let expected = xs.iter().map(|&x| log_n(x)).sum::<f64>() + 2.0 * 0.75f64.ln() + 0.25f64.ln();
    let got = model.forward_loglik(&obs.view()).unwrap();
    assert!((got - expected).abs() < 1e-12);
}

#[test]
fn splitting_components_leaves_likelihood_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = random_model(&mut rng, 0, 3, 3);
    let split = EventModel::new(
        0,
        0,
        model.states().iter().map(|s| s.with_split_components()).collect(),
        model.stay().to_vec(),
    )
    .unwrap();
    let obs = random_obs(&mut rng, 12, 3);
    let a = model.forward_loglik(&obs.view()).unwrap();
    let b = split.forward_loglik(&obs.view()).unwrap();
    assert!((a - b).abs() < 1e-9);
}

#[test]
fn short_segments_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = random_model(&mut rng, 0, 3, 2);
    let obs = random_obs(&mut rng, 2, 2);
    assert!(matches!(
        model.forward_loglik(&obs.view()),
        Err(Error::SegmentTooShort { frames: 2, required: 3 })
    ));
}

#[test]
fn emission_table_scores_match_direct_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let set = ModelSet::new(0, vec![random_model(&mut rng, 0, 3, 2), random_model(&mut rng, 4, 2, 2)]).unwrap();
    let obs = random_obs(&mut rng, 20, 2);
    let table = EmissionTable::new(&set, &obs.view());
    for (mi, m) in set.models().iter().enumerate() {
        let direct = m.forward_loglik(&obs.slice(4, 15)).unwrap();
        let cached = table.segment_loglik(&set, mi, 4, 15).unwrap();
        assert!((direct - cached).abs() < 1e-12);
    }
}

#[test]
fn f32_and_f64_forward_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let m64 = random_model(&mut rng, 0, 3, 4);
    let obs64 = random_obs(&mut rng, 30, 4);
    let cast = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    let states = m64
        .states()
        .iter()
        .map(|s| {
            let n = s.n_components();
            let means: Vec<f32> = (0..n).flat_map(|c| cast(s.mean(c))).collect();
            let vars: Vec<f32> = (0..n).flat_map(|c| cast(s.variance(c))).collect();
            GmmState::new(4, cast(s.weights()), means, vars).unwrap()
        })
        .collect();
    let m32 = EventModel::new(0, 0, states, cast(m64.stay())).unwrap();
    let obs32 = FeatureSequence::<f32> {
        dim: 4,
        data: cast(&obs64.data),
        channel: (0, 0),
    };
    let a = m64.forward_loglik(&obs64.view()).unwrap();
    let b = m32.forward_loglik(&obs32.view()).unwrap() as f64;
    assert!((a - b).abs() < 1e-3 * a.abs(), "{a} vs {b}");
}

/// Best composite-state path by exhaustive search. Returns the score and
/// the segments `(label, start, end)` of the argmax path.
fn brute_force_viterbi(set: &ModelSet<f64>, obs: &FeatureSequence<f64>) -> (f64, Vec<(usize, usize, usize)>) {
    let mut states = Vec::new(); // (model, state)
    for (mi, m) in set.models().iter().enumerate() {
        for i in 0..m.n_states() {
            states.push((mi, i));
        }
    }
    let w = states.len();
    let len = obs.len();
    let enter = -(set.len() as f64).ln();
    let em = |t: usize, s: usize| {
        let (mi, i) = states[s];
        set.models()[mi].states()[i].log_density(obs.frame(t))
    };
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for code in 0..w.pow(len as u32) {
        let path: Vec<usize> = (0..len).map(|t| code / w.pow(t as u32) % w).collect();
        let (m0, i0) = states[path[0]];
        if i0 != 0 {
            continue;
        }
        let mut score = enter + em(0, path[0]);
        let mut segs = vec![(set.models()[m0].label, 0, 0)];
        let mut ok = true;
        for t in 1..len {
            let (pm, pi) = states[path[t - 1]];
            let (cm, ci) = states[path[t]];
            let prev = &set.models()[pm];
            let step = if pm == cm && pi == ci {
                prev.log_stay(pi)
            } else if pm == cm && ci == pi + 1 {
                prev.log_leave(pi)
            } else if pi == prev.n_states() - 1 && ci == 0 {
                segs.last_mut().unwrap().2 = t;
                segs.push((set.models()[cm].label, t, 0));
                prev.log_leave(pi) + enter
            } else {
                ok = false;
                break;
            };
            score += step + em(t, path[t]);
        }
        let (lm, li) = states[path[len - 1]];
        if !ok || li != set.models()[lm].n_states() - 1 {
            continue;
        }
        score += set.models()[lm].log_leave(li);
        segs.last_mut().unwrap().2 = len;
        if score > best.0 {
            best = (score, segs);
        }
    }
    best
}

#[test]
fn viterbi_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..4 {
        let set = ModelSet::new(0, vec![random_model(&mut rng, 2, 2, 2), random_model(&mut rng, 5, 2, 2)]).unwrap();
        let obs = random_obs(&mut rng, 6 + trial % 2, 2);
        let table = EmissionTable::new(&set, &obs.view());
        let dec = viterbi_decode(&set, &table, &LoopGrammar::default()).unwrap();
        let (score, segs) = brute_force_viterbi(&set, &obs);
        assert!((dec.score - score).abs() < 1e-8, "{} vs {score}", dec.score);
        let got: Vec<_> = dec.segments.iter().map(|s| (s.label, s.start, s.end)).collect();
        assert_eq!(got, segs);
    }
}

#[test]
fn viterbi_with_three_state_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let set = ModelSet::new(0, vec![random_model(&mut rng, 0, 3, 1), random_model(&mut rng, 1, 3, 1)]).unwrap();
    let obs = random_obs(&mut rng, 7, 1);
    let table = EmissionTable::new(&set, &obs.view());
    let dec = viterbi_decode(&set, &table, &LoopGrammar::default()).unwrap();
    let (score, _) = brute_force_viterbi(&set, &obs);
    assert!((dec.score - score).abs() < 1e-8);
    // segments tile the sequence
    assert_eq!(dec.segments.first().unwrap().start, 0);
    assert_eq!(dec.segments.last().unwrap().end, 7);
    for w in dec.segments.windows(2) {
        assert_eq!(w[0].end, w[1].start);
    }
}

#[test]
fn viterbi_never_beats_the_forward_sum_of_a_single_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = random_model(&mut rng, 0, 3, 2);
    let set = ModelSet::new(0, vec![m.clone()]).unwrap();
    let obs = random_obs(&mut rng, 15, 2);
    let table = EmissionTable::new(&set, &obs.view());
    let dec = viterbi_decode(&set, &table, &LoopGrammar::default()).unwrap();
    // one model in the loop: entering costs nothing, but re-entries may split the sequence
    let fwd = m.forward_loglik(&obs.view()).unwrap();
    if dec.segments.len() == 1 {
        assert!(dec.score <= fwd + 1e-12);
    }
}

#[test]
fn insertion_penalty_reduces_segment_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let set = ModelSet::new(0, vec![random_model(&mut rng, 0, 2, 2), random_model(&mut rng, 1, 2, 2)]).unwrap();
    let obs = random_obs(&mut rng, 60, 2);
    let table = EmissionTable::new(&set, &obs.view());
    let free = viterbi_decode(&set, &table, &LoopGrammar::default()).unwrap();
    let strict = viterbi_decode(&set, &table, &LoopGrammar { insertion_penalty: -50.0 }).unwrap();
    assert!(strict.segments.len() <= free.segments.len());
    assert_eq!(strict.segments.len(), 1);
}

fn gaussian_segments(rng: &mut ChaCha8Rng, n: usize, len: usize, mean: f64, sd: f64) -> Vec<FeatureSequence<f64>> {
    (0..n)
        .map(|_| {
            let frames: Vec<Vec<f64>> = (0..len)
                .map(|_| vec![mean + sd * rng.sample::<f64, _>(StandardNormal)])
                .collect();
            FeatureSequence::from_frames(&frames, (0, 0))
        })
        .collect()
}

#[test]
fn one_state_one_gaussian_training_recovers_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let segs = gaussian_segments(&mut rng, 20, 50, 3.0, 0.5);
    let views: Vec<_> = segs.iter().map(|s| s.view()).collect();
    let cfg = TrainConfig {
        n_states: 1,
        n_components: 1,
        ..Default::default()
    };
    let (model, report) = train_model(0, 0, &views, &cfg).unwrap();
    let all: Vec<f64> = segs.iter().flat_map(|s| s.data.iter().copied()).collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / all.len() as f64;
    let s = &model.states()[0];
    assert!((s.mean(0)[0] - mean).abs() < 1e-9);
    assert!((s.variance(0)[0] - var).abs() < 1e-9);
    // stay probability: (frames - segments) / frames
    assert!((model.stay()[0] - 980.0 / 1000.0).abs() < 1e-9);
    assert!(report.is_monotone(1e-6));
}

#[test]
fn training_is_monotone_and_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let segs: Vec<FeatureSequence<f64>> = (0..12)
        .map(|_| {
            let len = rng.random_range(15..30);
            let frames: Vec<Vec<f64>> = (0..len)
                .map(|t| {
                    let base = if t < len / 2 { -1.0 } else { 2.0 };
                    (0..3).map(|_| base + rng.sample::<f64, _>(StandardNormal)).collect()
                })
                .collect();
            FeatureSequence::from_frames(&frames, (0, 0))
        })
        .collect();
    let views: Vec<_> = segs.iter().map(|s| s.view()).collect();
    let cfg = TrainConfig {
        max_iter: 25,
        tol: 0.0,
        ..Default::default()
    };
    let (m1, r1) = train_model(1, 0, &views, &cfg).unwrap();
    let (m2, r2) = train_model(1, 0, &views, &cfg).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(r1, r2);
    assert!(r1.loglik.len() > 5);
    assert!(r1.is_monotone(1e-6), "{:?}", r1.loglik);
}

#[test]
fn degenerate_training_data_is_floored() {
    let frames = vec![vec![1.0, 2.0]; 40];
    let seq = FeatureSequence::from_frames(&frames, (0, 0));
    let (model, report) = train_model(0, 0, &[seq.view()], &TrainConfig::default()).unwrap();
    assert!(report.loglik.iter().all(|l| l.is_finite()));
    for s in model.states() {
        for c in 0..s.n_components() {
            assert!(s.variance(c).iter().all(|&v| v > 0.0));
        }
    }
}

#[test]
fn training_without_usable_segments_fails() {
    let seq = FeatureSequence::from_frames(&[vec![0.0], vec![1.0]], (0, 0));
    assert!(matches!(
        train_model(0, 0, &[seq.view()], &TrainConfig::default()),
        Err(Error::EmptyData(_))
    ));
}

#[test]
fn model_text_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let sets: Vec<ModelSet<f64>> = (0..2)
        .map(|k| {
            let models = (0..3)
                .map(|l| {
                    let m = random_model(&mut rng, l, 3, 4);
                    EventModel::new(l, k, m.states().to_vec(), m.stay().to_vec()).unwrap()
                })
                .collect();
            ModelSet::new(k, models).unwrap()
        })
        .collect();
    let inv = ModelInventory::new(sets).unwrap();
    let text = write_inventory(&inv);
    let back: ModelInventory<f64> = read_inventory(&text, Path::new("m.txt")).unwrap();
    assert_eq!(back, inv);
    let one = write_model_set(inv.array(1));
    assert_eq!(&read_model_set::<f64>(&one, Path::new("s.txt")).unwrap(), inv.array(1));
}

#[test]
fn unknown_model_file_version_is_rejected() {
    let err = read_model_set::<f64>("aeloc-models 9\n", Path::new("x")).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }));
    let err = read_model_set::<f64>("garbage\n", Path::new("x")).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }));
}

#[test]
fn inventory_requires_matching_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = ModelSet::new(0, vec![random_model(&mut rng, 0, 2, 2)]).unwrap();
    let m = random_model(&mut rng, 1, 2, 2);
    let b = ModelSet::new(1, vec![EventModel::new(1, 1, m.states().to_vec(), m.stay().to_vec()).unwrap()]).unwrap();
    assert!(ModelInventory::new(vec![a, b]).is_err());
}

fn flat_model(label: usize, mean: f64) -> EventModel<f64> {
    let states = (0..3)
        .map(|_| GmmState::new(1, vec![1.0], vec![mean], vec![1.0]).unwrap())
        .collect();
    EventModel::new(label, 0, states, vec![0.85; 3]).unwrap()
}

#[test]
fn decodes_silence_event_silence_from_generated_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let set = ModelSet::new(0, vec![flat_model(0, 0.0), flat_model(3, 5.0)]).unwrap();
    for _ in 0..10 {
        let lead = rng.random_range(10..25);
        let body = rng.random_range(8..20);
        let tail = rng.random_range(10..25);
        let frames: Vec<Vec<f64>> = (0..lead + body + tail)
            .map(|t| {
                let m = if (lead..lead + body).contains(&t) { 5.0 } else { 0.0 };
                vec![m + rng.sample::<f64, _>(StandardNormal)]
            })
            .collect();
        let obs = FeatureSequence::from_frames(&frames, (0, 0));
        let table = EmissionTable::new(&set, &obs.view());
        let dec = viterbi_decode(&set, &table, &LoopGrammar::default()).unwrap();
        let labels: Vec<usize> = dec.segments.iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![0, 3, 0]);
        assert!(dec.segments[1].start.abs_diff(lead) <= 2);
        assert!(dec.segments[1].end.abs_diff(lead + body) <= 2);
    }
}

#[test]
fn all_silence_decodes_to_one_segment() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let set = ModelSet::new(0, vec![flat_model(0, 0.0), flat_model(3, 5.0)]).unwrap();
    let frames: Vec<Vec<f64>> = (0..50).map(|_| vec![0.3 * rng.sample::<f64, _>(StandardNormal)]).collect();
    let obs = FeatureSequence::from_frames(&frames, (0, 0));
    let table = EmissionTable::new(&set, &obs.view());
    let dec = viterbi_decode(&set, &table, &LoopGrammar::default()).unwrap();
    assert_eq!(dec.segments, vec![DecodedSegment { label: 0, start: 0, end: 50 }]);
}

#[test]
fn viterbi_path_score_is_below_the_forward_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..5 {
        let set = ModelSet::new(0, vec![random_model(&mut rng, 0, 3, 2), random_model(&mut rng, 1, 3, 2)]).unwrap();
        let obs = random_obs(&mut rng, 12, 2);
        let table = EmissionTable::new(&set, &obs.view());
        let dec = viterbi_decode(&set, &table, &LoopGrammar::default()).unwrap();
        // sum over alignments of the decoded label sequence, segment by segment
        let enter = -(2f64).ln();
        let fixed_boundaries: f64 = dec
            .segments
            .iter()
            .map(|s| {
                let mi = set.index_of(s.label).unwrap();
                enter + table.segment_loglik(&set, mi, s.start, s.end).unwrap()
            })
            .sum();
        assert!(dec.score <= fixed_boundaries + 1e-9);
    }
}

#[test]
fn single_gaussian_estimate_is_close_to_the_true_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let segs = gaussian_segments(&mut rng, 10, 40, -1.5, 2.0);
    let views: Vec<_> = segs.iter().map(|s| s.view()).collect();
    let cfg = TrainConfig {
        n_states: 1,
        n_components: 1,
        ..Default::default()
    };
    let (model, _) = train_model(0, 0, &views, &cfg).unwrap();
    let n = 400.0f64;
    assert!((model.states()[0].mean(0)[0] + 1.5).abs() < 3.0 * 2.0 / n.sqrt());
}
