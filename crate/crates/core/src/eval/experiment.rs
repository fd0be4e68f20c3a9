use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::metrics::{
    classification_accuracy, Detection, Localization, MatchRule, MetricReport, TimedEvent,
};
use crate::baselines::{
    analyze, srp_event_localize, train_all_combinations, CombinationData, CombinationModels, SrpAnalysis, SrpConfig,
};
use crate::beamform::{design_beamformers, BeamformerBank};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureSequence, FeatureView, FrameConfig};
use crate::hmm::{
    train_model_set, viterbi_decode, EmissionTable, LoopGrammar, ModelInventory, ModelSet, TrainConfig, TrainReport,
};
use crate::io::{HypothesisFile, HypothesisRow, HypothesisSet};
use crate::joint::{
    extract_channel_features, recognize_localize, truth_intervals, ChannelFeatures, Endpoints, JointConfig,
    ScoredChannels,
};
use crate::real::Real;
use crate::scene::{estimate_position_priors, PriorTable, SceneConfig, Smoothing};
use crate::synth::Session;
use crate::synth::{GroundTruth, MultichannelRecording};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Two-step system with flat priors.
    ProposedFlat,
    /// Two-step system with position priors counted on the training folds.
    ProposedPriors,
    /// Flat priors, MAP search limited to the true source cells.
    KnownPosition,
    /// Flat priors, Step 1 skipped in favour of the annotated intervals.
    KnownEndpoints,
    SrpPhat,
    AllCombinations,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::ProposedFlat,
        Variant::ProposedPriors,
        Variant::KnownPosition,
        Variant::KnownEndpoints,
        Variant::SrpPhat,
        Variant::AllCombinations,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::ProposedFlat => "proposed-flat",
            Variant::ProposedPriors => "proposed-priors",
            Variant::KnownPosition => "known-position",
            Variant::KnownEndpoints => "known-endpoints",
            Variant::SrpPhat => "srp-phat",
            Variant::AllCombinations => "all-combinations",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Log-domain Step 1 insertion penalty of the reference configuration, picked
/// on a held-out development seed: 0 splits events into runs of short
/// same-class segments, below about -500 events start to disappear.
pub const REFERENCE_INSERTION_PENALTY: f64 = -200.0;

/// Everything configurable about the systems under test.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig<T> {
    pub train: TrainConfig,
    pub joint: JointConfig<T>,
    pub smoothing: Smoothing,
    pub srp: SrpConfig,
    /// Microphone used by the all-combinations recognizer.
    pub mono_channel: usize,
    pub min_overlap: f64,
}

impl<T: Real> SystemConfig<T> {
    pub fn for_scene(scene: &SceneConfig) -> Self {
        SystemConfig {
            train: TrainConfig::default(),
            joint: JointConfig {
                grammar: LoopGrammar {
                    insertion_penalty: T::lit(REFERENCE_INSERTION_PENALTY),
                },
                ..JointConfig::default()
            },
            smoothing: Smoothing::AddOne,
            srp: SrpConfig::for_scene(scene),
            mono_channel: 0,
            min_overlap: 0.0,
        }
    }
}

/// Beamformers and feature extractor for a scene.
#[derive(Debug)]
pub struct Frontend<T: Real> {
    pub beams: BeamformerBank<T>,
    pub extractor: FeatureExtractor<T>,
}

impl<T: Real> Frontend<T> {
    pub fn new(scene: &SceneConfig) -> Self {
        Frontend {
            beams: design_beamformers(scene),
            extractor: FeatureExtractor::standard(scene.sample_rate),
        }
    }

    pub fn frames(&self) -> FrameConfig {
        self.extractor.frames
    }
}

/// Per-recording analysis results reused by every fold and variant.
#[derive(Clone, Debug)]
pub struct SuiteData<T> {
    pub n_sources: usize,
    pub truth: Vec<GroundTruth>,
    pub n_samples: usize,
    pub features: ChannelFeatures<T>,
    pub mono: FeatureSequence<T>,
    pub srp: Option<SrpAnalysis>,
}

#[derive(Clone, Debug)]
pub struct SessionData<T> {
    pub index: usize,
    pub one_source: SuiteData<T>,
    pub two_source: Option<SuiteData<T>>,
}

impl<T: Real> SessionData<T> {
    pub fn suite(&self, n_sources: usize) -> Result<&SuiteData<T>> {
        match n_sources {
            1 => Ok(&self.one_source),
            2 => self
                .two_source
                .as_ref()
                .ok_or_else(|| Error::EmptyData(format!("two-source recording of session {}", self.index))),
            n => Err(Error::Config(format!("n_sources must be 1 or 2, got {n}"))),
        }
    }
}

/// Beamforming, features and (optionally) SRP analysis of one recording.
pub fn prepare_suite<T: Real>(
    scene: &SceneConfig,
    frontend: &Frontend<T>,
    rec: &MultichannelRecording<f64>,
    n_sources: usize,
    cfg: &SystemConfig<T>,
    with_srp: bool,
) -> Result<SuiteData<T>> {
    let cast: MultichannelRecording<T> = rec.cast();
    let features = extract_channel_features(scene, &frontend.beams, &frontend.extractor, &cast)?;
    let mono_ch = cast
        .channels
        .get(cfg.mono_channel)
        .ok_or_else(|| Error::Config(format!("no microphone {}", cfg.mono_channel)))?;
    let mono = frontend.extractor.extract(mono_ch, (usize::MAX, cfg.mono_channel));
    let srp = if with_srp { Some(analyze(scene, rec, &cfg.srp)?) } else { None };
    Ok(SuiteData {
        n_sources,
        truth: rec.truth.clone(),
        n_samples: rec.n_samples(),
        features,
        mono,
        srp,
    })
}

pub fn prepare_session<T: Real>(
    scene: &SceneConfig,
    frontend: &Frontend<T>,
    session: &Session,
    cfg: &SystemConfig<T>,
    with_srp: bool,
) -> Result<SessionData<T>> {
    let one_source = prepare_suite(scene, frontend, &session.one_source, 1, cfg, with_srp)?;
    let two_source = session
        .two_source
        .as_ref()
        .map(|r| prepare_suite(scene, frontend, r, 2, cfg, with_srp))
        .transpose()?;
    Ok(SessionData {
        index: session.index,
        one_source,
        two_source,
    })
}

/// Frame interval of an annotation.
fn frame_span(frames: &FrameConfig, g: &GroundTruth, n_frames: usize) -> (usize, usize) {
    let sr = frames.sample_rate;
    let s = frames.seconds_to_frame(g.start_sample as f64 / sr).min(n_frames);
    let e = frames.seconds_to_frame(g.end_sample as f64 / sr).min(n_frames);
    (s, e.max(s))
}

/// Silence stretches between annotated events, shrunk by `guard` frames on each side.
fn gaps(truth: &[GroundTruth], frames: &FrameConfig, n_frames: usize, guard: usize) -> Vec<(usize, usize)> {
    let mut spans: Vec<(usize, usize)> = truth.iter().map(|g| frame_span(frames, g, n_frames)).collect();
    spans.sort_unstable();
    let mut out = Vec::new();
    let mut cursor = 0;
    for (s, e) in spans.into_iter().chain(std::iter::once((n_frames, n_frames))) {
        if s > cursor + 2 * guard {
            out.push((cursor + guard, s - guard));
        }
        cursor = cursor.max(e);
    }
    out
}

/// Models and priors learned from the training sessions of one fold.
#[derive(Clone, Debug)]
pub struct FoldModels<T> {
    pub inventory: ModelInventory<T>,
    pub combinations: Option<CombinationModels<T>>,
    pub priors: PriorTable,
    pub reports: Vec<TrainReport>,
}

/// Trains per-array models on matched beamformer outputs of the training
/// sessions' isolated-event recordings, and counts position priors there.
pub fn train_fold<T: Real>(
    scene: &SceneConfig,
    frames: &FrameConfig,
    train: &[&SessionData<T>],
    cfg: &SystemConfig<T>,
    with_combinations: bool,
) -> Result<FoldModels<T>> {
    if train.is_empty() {
        return Err(Error::EmptyData("training sessions".into()));
    }
    let silence = scene.silence_class();
    let n_cells = scene.n_cells();
    let labels: Vec<usize> = (0..scene.n_classes()).collect();
    let guard = 1;

    let mut sets = Vec::with_capacity(scene.arrays.len());
    let mut reports = Vec::new();
    for k in 0..scene.arrays.len() {
        let mut data: Vec<(usize, Vec<FeatureView<'_, T>>)> = labels
            .iter()
            .filter(|&&l| Some(l) != silence)
            .map(|&l| (l, Vec::new()))
            .collect();
        let mut sil = Vec::new();
        for s in train {
            let suite = &s.one_source;
            let n = suite.features.n_frames();
            for g in &suite.truth {
                let (a, b) = frame_span(frames, g, n);
                if b > a {
                    if let Some(slot) = data.iter_mut().find(|(l, _)| *l == g.class) {
                        slot.1.push(suite.features.get(k, g.cell).slice(a, b));
                    }
                }
            }
            for (i, (a, b)) in gaps(&suite.truth, frames, n, guard).into_iter().enumerate() {
                sil.push(suite.features.get(k, (i + s.index) % n_cells).slice(a, b));
            }
        }
        if let Some(sl) = silence {
            data.push((sl, sil));
        }
        data.sort_by_key(|(l, _)| *l);
        if let Some((l, _)) = data.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::EmptyData(format!("training data for class `{}`", scene.classes[*l])));
        }
        let (set, rep): (ModelSet<T>, _) = train_model_set(k, &data, &cfg.train)?;
        sets.push(set);
        reports.extend(rep);
    }
    let inventory = ModelInventory::new(sets)?;

    let events: Vec<(usize, usize)> = train
        .iter()
        .flat_map(|s| s.one_source.truth.iter().map(|g| (g.class, g.cell)))
        .collect();
    let priors = estimate_position_priors(&events, &scene.grid, scene.n_classes(), cfg.smoothing)?;

    let combinations = if with_combinations {
        let (m, rep) = train_combinations(scene, frames, train, cfg)?;
        reports.extend(rep);
        Some(m)
    } else {
        None
    };
    Ok(FoldModels {
        inventory,
        combinations,
        priors,
        reports,
    })
}

fn train_combinations<T: Real>(
    scene: &SceneConfig,
    frames: &FrameConfig,
    train: &[&SessionData<T>],
    cfg: &SystemConfig<T>,
) -> Result<(CombinationModels<T>, Vec<TrainReport>)> {
    let speech = scene.speech_class();
    let ae = scene.ae_classes();
    let slice = |suite: &SuiteData<T>, g: &GroundTruth| {
        let (a, b) = frame_span(frames, g, suite.mono.len());
        FeatureSequence::from_frames(
            &(a..b).map(|t| suite.mono.frame(t).to_vec()).collect::<Vec<_>>(),
            suite.mono.channel,
        )
    };
    let mut data = CombinationData {
        isolated: scene.event_classes().into_iter().map(|c| (c, Vec::new())).collect(),
        with_speech: ae.iter().map(|&c| (c, Vec::new())).collect(),
        silence: Vec::new(),
    };
    for s in train {
        let one = &s.one_source;
        for g in &one.truth {
            if let Some(slot) = data.isolated.iter_mut().find(|(c, _)| *c == g.class) {
                slot.1.push(slice(one, g));
            }
        }
        for (a, b) in gaps(&one.truth, frames, one.mono.len(), 1) {
            let frames_ab: Vec<Vec<T>> = (a..b).map(|t| one.mono.frame(t).to_vec()).collect();
            data.silence.push(FeatureSequence::from_frames(&frames_ab, one.mono.channel));
        }
        let two = s.suite(2)?;
        for g in two.truth.iter().filter(|g| Some(g.class) != speech) {
            if let Some(slot) = data.with_speech.iter_mut().find(|(c, _)| *c == g.class) {
                slot.1.push(slice(two, g));
            }
        }
    }
    train_all_combinations(&data, &ae, &cfg.train)
}

fn priors_for(variant: Variant, scene: &SceneConfig, models: &FoldModels<impl Real>) -> PriorTable {
    match variant {
        Variant::ProposedPriors => models.priors.clone(),
        _ => PriorTable::flat(scene.n_classes(), scene.n_cells()),
    }
}

/// Runs one system on one recording.
pub fn run_variant<T: Real>(
    scene: &SceneConfig,
    frames: &FrameConfig,
    variant: Variant,
    models: &FoldModels<T>,
    suite: &SuiteData<T>,
    session: usize,
    cfg: &SystemConfig<T>,
) -> Result<HypothesisFile> {
    let n_frames = suite.features.n_frames();
    let secs = |f: usize| frames.frame_to_seconds(f);
    let mut rows = Vec::new();
    let known = |restrict: bool| truth_intervals(&suite.truth, frames, n_frames, restrict);
    let classes = scene.event_classes();
    let silence = scene.silence_class();
    let joint = JointConfig {
        n_sources: suite.n_sources,
        ..cfg.joint.clone()
    };

    match variant {
        Variant::ProposedFlat | Variant::ProposedPriors | Variant::KnownPosition | Variant::KnownEndpoints => {
            let priors = priors_for(variant, scene, models);
            let scored = ScoredChannels::new(&models.inventory, &suite.features)?;
            let restrict = variant == Variant::KnownPosition;
            let known_run = recognize_localize(
                &models.inventory,
                &scored,
                &classes,
                silence,
                &priors,
                &Endpoints::Known(known(restrict)),
                &joint,
            )?;
            for h in known_run.hypotheses {
                rows.push(HypothesisRow {
                    set: HypothesisSet::Known,
                    class: Some(h.class),
                    cell: Some(h.cell),
                    start: secs(h.start),
                    end: secs(h.end),
                    score: h.score.as_f64(),
                    pass: h.pass,
                });
            }
            if matches!(variant, Variant::ProposedFlat | Variant::ProposedPriors) {
                let est = recognize_localize(
                    &models.inventory,
                    &scored,
                    &classes,
                    silence,
                    &priors,
                    &Endpoints::Estimated,
                    &joint,
                )?;
                for h in est.hypotheses {
                    rows.push(HypothesisRow {
                        set: HypothesisSet::Estimated,
                        class: Some(h.class),
                        cell: Some(h.cell),
                        start: secs(h.start),
                        end: secs(h.end),
                        score: h.score.as_f64(),
                        pass: h.pass,
                    });
                }
                if let Some(s1) = est.step1 {
                    for seg in s1.segments.iter().filter(|s| Some(s.label) != silence) {
                        rows.push(HypothesisRow {
                            set: HypothesisSet::Step1,
                            class: Some(seg.label),
                            cell: Some(s1.channel.1),
                            start: secs(seg.start),
                            end: secs(seg.end),
                            score: s1.score.as_f64(),
                            pass: 1,
                        });
                    }
                }
            }
        }
        Variant::SrpPhat => {
            let srp = suite
                .srp
                .as_ref()
                .ok_or_else(|| Error::EmptyData("SRP analysis of the recording".into()))?;
            for iv in known(false) {
                let (a, b) = (secs(iv.start), secs(iv.end));
                let sr = scene.sample_rate;
                let cells = srp_event_localize(scene, srp, (a * sr) as usize, (b * sr) as usize, suite.n_sources)?;
                for (p, c) in cells.into_iter().enumerate() {
                    rows.push(HypothesisRow {
                        set: HypothesisSet::Known,
                        class: None,
                        cell: Some(c),
                        start: a,
                        end: b,
                        score: 0.0,
                        pass: p as u8 + 1,
                    });
                }
            }
        }
        Variant::AllCombinations => {
            let combos = models
                .combinations
                .as_ref()
                .ok_or_else(|| Error::EmptyData("all-combinations models".into()))?;
            let table = EmissionTable::new(&combos.set, &suite.mono.view());
            let min_len = cfg.train.n_states;
            for iv in known(false) {
                let (s, e) = (iv.start, iv.end.max(iv.start + min_len).min(n_frames));
                let (combo, score) = combos.classify(&table, s.min(e.saturating_sub(min_len)), e)?;
                rows.push(HypothesisRow {
                    set: HypothesisSet::Known,
                    class: combo.class(),
                    cell: None,
                    start: secs(iv.start),
                    end: secs(iv.end),
                    score: score.as_f64(),
                    pass: 1,
                });
            }
            let dec = viterbi_decode(&combos.set, &table, &cfg.joint.grammar)?;
            for seg in &dec.segments {
                let combo = combos.combos[seg.label];
                if let Some(c) = combo.class() {
                    rows.push(HypothesisRow {
                        set: HypothesisSet::Estimated,
                        class: Some(c),
                        cell: None,
                        start: secs(seg.start),
                        end: secs(seg.end),
                        score: dec.score.as_f64(),
                        pass: 1,
                    });
                }
            }
        }
    }
    Ok(HypothesisFile {
        variant: variant.name().to_string(),
        session,
        n_sources: suite.n_sources,
        rows,
    })
}

fn to_timed(r: &HypothesisRow) -> TimedEvent {
    TimedEvent {
        class: r.class,
        cell: r.cell,
        start: r.start,
        end: r.end,
    }
}

/// Scores a hypothesis file against ground truth. Speech and silence are
/// ignored on both sides.
pub fn evaluate(scene: &SceneConfig, hyps: &HypothesisFile, truth: &[GroundTruth], min_overlap: f64) -> MetricReport {
    let sr = scene.sample_rate;
    let ignored = |c: Option<usize>| c.is_some() && (c == scene.speech_class() || c == scene.silence_class());
    let refs: Vec<TimedEvent> = truth
        .iter()
        .filter(|g| !ignored(Some(g.class)))
        .map(|g| TimedEvent {
            class: Some(g.class),
            cell: Some(g.cell),
            start: g.start_seconds(sr),
            end: g.end_seconds(sr),
        })
        .collect();
    let mut report = MetricReport {
        system: hyps.variant.clone(),
        condition: condition_name(hyps.n_sources).to_string(),
        ..Default::default()
    };
    let plain = MatchRule {
        require_cell: false,
        min_overlap,
    };
    let with_cell = MatchRule {
        require_cell: true,
        min_overlap,
    };

    let known: Vec<&HypothesisRow> = hyps.rows_in(HypothesisSet::Known).collect();
    if !known.is_empty() {
        let has_class = known.iter().any(|r| r.class.is_some());
        let has_cell = known.iter().any(|r| r.cell.is_some());
        let mut decisions = Vec::new();
        let mut loc = Vec::new();
        for t in &refs {
            // rows decided on this event's interval, in pass order
            let mut on: Vec<&&HypothesisRow> = known
                .iter()
                .filter(|r| to_timed(r).overlap(t) >= 0.5 * t.duration())
                .collect();
            on.sort_by_key(|r| r.pass);
            let class = t.class.expect("reference class");
            if has_class {
                let first = on.iter().find(|r| !ignored(r.class));
                decisions.push((first.and_then(|r| r.class), class));
                if has_cell {
                    loc.push((class, first.is_some_and(|r| r.cell == t.cell)));
                }
            } else if has_cell {
                loc.push((class, on.iter().any(|r| r.cell == t.cell)));
            }
        }
        if has_class {
            report.classification = Some(classification_accuracy(&decisions));
        }
        if has_cell {
            report.localization = Some(Localization::from_decisions(&loc));
        }
        if has_class && has_cell {
            let h: Vec<TimedEvent> = known.iter().filter(|r| r.class.is_some() && !ignored(r.class)).map(|r| to_timed(r)).collect();
            report.localization_f_known = Some(Detection::score(&h, &refs, &with_cell));
        }
    }

    let est: Vec<TimedEvent> = hyps
        .rows_in(HypothesisSet::Estimated)
        .filter(|r| r.class.is_some() && !ignored(r.class))
        .map(to_timed)
        .collect();
    let any_est = hyps.rows_in(HypothesisSet::Estimated).next().is_some();
    if any_est || matches!(hyps.variant.as_str(), "proposed-flat" | "proposed-priors" | "all-combinations") {
        report.aed = Some(Detection::score(&est, &refs, &plain));
        if est.iter().any(|e| e.cell.is_some()) || hyps.variant.starts_with("proposed") {
            report.localization_f = Some(Detection::score(&est, &refs, &with_cell));
        }
    }
    let s1: Vec<TimedEvent> = hyps
        .rows_in(HypothesisSet::Step1)
        .filter(|r| !ignored(r.class))
        .map(to_timed)
        .collect();
    if !s1.is_empty() || hyps.variant.starts_with("proposed") {
        report.aed_step1 = Some(Detection::score(&s1, &refs, &plain));
    }
    report
}

pub fn condition_name(n_sources: usize) -> &'static str {
    if n_sources == 2 {
        "two-source"
    } else {
        "one-source"
    }
}

/// Leave-one-session-out evaluation of several variants on the `n_sources`
/// recordings. Folds run in parallel; counts are pooled over folds.
pub fn run_leave_one_out<T: Real>(
    scene: &SceneConfig,
    frames: &FrameConfig,
    sessions: &[SessionData<T>],
    variants: &[Variant],
    n_sources: usize,
    cfg: &SystemConfig<T>,
) -> Result<Vec<MetricReport>> {
    if sessions.len() < 2 {
        return Err(Error::Config(format!("leave-one-out needs at least 2 sessions, got {}", sessions.len())));
    }
    let with_combos = variants.contains(&Variant::AllCombinations);
    let per_fold: Vec<Vec<MetricReport>> = (0..sessions.len())
        .into_par_iter()
        .map(|f| {
            let train: Vec<&SessionData<T>> = sessions.iter().filter(|s| s.index != sessions[f].index).collect();
            let models = train_fold(scene, frames, &train, cfg, with_combos)?;
            let test = sessions[f].suite(n_sources)?;
            variants
                .iter()
                .map(|&v| {
                    let hyps = run_variant(scene, frames, v, &models, test, sessions[f].index, cfg)?;
                    Ok(evaluate(scene, &hyps, &test.truth, cfg.min_overlap))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<MetricReport> = variants
        .iter()
        .map(|v| MetricReport {
            system: v.name().to_string(),
            condition: condition_name(n_sources).to_string(),
            ..Default::default()
        })
        .collect();
    for fold in &per_fold {
        for (acc, r) in out.iter_mut().zip(fold) {
            acc.merge(r);
        }
    }
    Ok(out)
}
