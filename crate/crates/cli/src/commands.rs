//! Subcommand implementations. Dataset layout under the data directory:
//!
//! ```text
//! scene.toml
//! manifest.tsv
//! session_00/one_source.f32   session_00/one_source.gt
//! session_00/two_source.f32   session_00/two_source.gt
//! ```
//!
//! Models go to `<models>/fold_XX.*` (fold named after its test session),
//! hypotheses to `<hyps>/<variant>/sources_N/session_XX.hyp`.

use std::path::{Path, PathBuf};

use aeloc_core::eval::{
    evaluate, prepare_session, render_table, render_tsv, run_variant, train_fold, FoldModels, Frontend,
    MetricReport, SessionData, SystemConfig, Variant,
};
use aeloc_core::hmm::{read_inventory, read_model_set, write_inventory, write_model_set};
use aeloc_core::io::{self, HypothesisFile, Manifest, ManifestEntry};
use aeloc_core::synth::{generate_dataset, MultichannelRecording, Session};
use aeloc_core::baselines::CombinationModels;
use aeloc_core::{Error, Result, SceneConfig};
use log::info;

const SCENE_FILE: &str = "scene.toml";
const MANIFEST_FILE: &str = "manifest.tsv";

fn suite_name(n_sources: usize) -> &'static str {
    if n_sources == 2 {
        "two_source"
    } else {
        "one_source"
    }
}

fn fold_path(models: &Path, session: usize, ext: &str) -> PathBuf {
    models.join(format!("fold_{session:02}.{ext}"))
}

pub fn hyp_path(hyps: &Path, variant: Variant, n_sources: usize, session: usize) -> PathBuf {
    hyps.join(variant.name())
        .join(format!("sources_{n_sources}"))
        .join(format!("session_{session:02}.hyp"))
}

pub fn generate(scene: &SceneConfig, cfg: &aeloc_core::synth::DatasetConfig, out: &Path) -> Result<()> {
    let sessions = generate_dataset(scene, cfg)?;
    io::write_string(&out.join(SCENE_FILE), &scene.to_toml_string())?;
    let mut manifest = Manifest {
        seed: cfg.seed,
        entries: Vec::new(),
    };
    for s in &sessions {
        let recs = std::iter::once((1, &s.one_source)).chain(s.two_source.as_ref().map(|r| (2, r)));
        for (n, rec) in recs {
            let dir = PathBuf::from(format!("session_{:02}", s.index));
            let audio = dir.join(format!("{}.f32", suite_name(n)));
            let truth = dir.join(format!("{}.gt", suite_name(n)));
            io::write_raw(&out.join(&audio), rec)?;
            io::write_string(&out.join(&truth), &io::truth_to_text(scene, &rec.truth))?;
            manifest.entries.push(ManifestEntry {
                session: s.index,
                n_sources: n,
                sha256: io::sha256_file(&out.join(&audio))?,
                audio,
                truth,
                n_samples: rec.n_samples(),
                n_events: rec.truth.len(),
            });
        }
    }
    io::write_string(&out.join(MANIFEST_FILE), &manifest.to_text())?;
    info!("wrote {} sessions to {}", sessions.len(), out.display());
    Ok(())
}

/// A generated dataset read back from disk.
pub struct Dataset {
    pub scene: SceneConfig,
    pub sessions: Vec<Session>,
}

fn read_recording(root: &Path, scene: &SceneConfig, e: &ManifestEntry) -> Result<MultichannelRecording<f64>> {
    let audio = root.join(&e.audio);
    let digest = io::sha256_file(&audio)?;
    if digest != e.sha256 {
        return Err(Error::Parse {
            path: audio,
            message: "checksum differs from the manifest".into(),
        });
    }
    let mut rec = io::read_raw(&audio)?;
    let gt = root.join(&e.truth);
    rec.truth = io::truth_from_text(scene, &io::read_to_string(&gt)?, &gt)?;
    if rec.n_samples() != e.n_samples || rec.truth.len() != e.n_events {
        return Err(Error::Parse {
            path: root.join(MANIFEST_FILE),
            message: format!("session {} does not match its files", e.session),
        });
    }
    Ok(rec)
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let scene = SceneConfig::load(&root.join(SCENE_FILE))?;
    let mpath = root.join(MANIFEST_FILE);
    let manifest = Manifest::from_text(&io::read_to_string(&mpath)?, &mpath)?;
    let sessions = manifest
        .sessions()
        .into_iter()
        .map(|index| {
            let one = manifest.entry(index, 1).ok_or_else(|| Error::Parse {
                path: mpath.clone(),
                message: format!("session {index} has no one-source recording"),
            })?;
            Ok(Session {
                index,
                one_source: read_recording(root, &scene, one)?,
                two_source: manifest
                    .entry(index, 2)
                    .map(|e| read_recording(root, &scene, e))
                    .transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { scene, sessions })
}

fn prepare(ds: &Dataset, cfg: &SystemConfig<f64>, with_srp: bool) -> Result<(Frontend<f64>, Vec<SessionData<f64>>)> {
    use rayon::prelude::*;
    let fe = Frontend::new(&ds.scene);
    let data = ds
        .sessions
        .par_iter()
        .map(|s| prepare_session(&ds.scene, &fe, s, cfg, with_srp))
        .collect::<Result<Vec<_>>>()?;
    Ok((fe, data))
}

pub fn train(data: &Path, models: &Path, cfg: &SystemConfig<f64>) -> Result<()> {
    use rayon::prelude::*;
    let ds = load_dataset(data)?;
    if ds.sessions.len() < 2 {
        return Err(Error::Config("leave-one-out training needs at least 2 sessions".into()));
    }
    let (fe, sessions) = prepare(&ds, cfg, false)?;
    let frames = fe.frames();
    let with_combos = sessions.iter().all(|s| s.two_source.is_some());
    let folds = sessions
        .par_iter()
        .map(|test| {
            let train: Vec<&SessionData<f64>> = sessions.iter().filter(|s| s.index != test.index).collect();
            train_fold(&ds.scene, &frames, &train, cfg, with_combos).map(|m| (test.index, m))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut log = String::from("fold\tlabel\titerations\tfinal_loglik\tconverged\n");
    for (f, m) in &folds {
        io::write_string(&fold_path(models, *f, "models"), &write_inventory(&m.inventory))?;
        io::write_string(&fold_path(models, *f, "priors"), &io::priors_to_text(&ds.scene, &m.priors))?;
        if let Some(c) = &m.combinations {
            io::write_string(&fold_path(models, *f, "combos"), &io::combinations_to_text(&ds.scene, &c.combos))?;
            io::write_string(&fold_path(models, *f, "combo-models"), &write_model_set(&c.set))?;
        }
        for r in &m.reports {
            log.push_str(&format!(
                "{f}\t{}\t{}\t{:.6}\t{}\n",
                r.label,
                r.iterations(),
                r.loglik.last().copied().unwrap_or(f64::NAN),
                r.converged
            ));
        }
    }
    io::write_string(&models.join("training.tsv"), &log)?;
    info!("trained {} folds into {}", folds.len(), models.display());
    Ok(())
}

fn load_fold(scene: &SceneConfig, models: &Path, session: usize, need_combos: bool) -> Result<FoldModels<f64>> {
    let read = |ext: &str| {
        let p = fold_path(models, session, ext);
        io::read_to_string(&p).map(|t| (t, p))
    };
    let (t, p) = read("models")?;
    let inventory = read_inventory(&t, &p)?;
    let (t, p) = read("priors")?;
    let priors = io::priors_from_text(scene, &t, &p)?;
    let combinations = if need_combos {
        let (t, p) = read("combos")?;
        let combos = io::combinations_from_text(scene, &t, &p)?;
        let (t, p) = read("combo-models")?;
        let set = read_model_set(&t, &p)?;
        Some(CombinationModels { set, combos })
    } else {
        None
    };
    Ok(FoldModels {
        inventory,
        combinations,
        priors,
        reports: Vec::new(),
    })
}

pub fn run(
    data: &Path,
    models: &Path,
    hyps: &Path,
    variant: Variant,
    n_sources: usize,
    cfg: &SystemConfig<f64>,
) -> Result<()> {
    use rayon::prelude::*;
    let ds = load_dataset(data)?;
    let (fe, sessions) = prepare(&ds, cfg, variant == Variant::SrpPhat)?;
    let frames = fe.frames();
    let files = sessions
        .par_iter()
        .map(|s| {
            let m = load_fold(&ds.scene, models, s.index, variant == Variant::AllCombinations)?;
            run_variant(&ds.scene, &frames, variant, &m, s.suite(n_sources)?, s.index, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    for f in &files {
        io::write_string(&hyp_path(hyps, variant, n_sources, f.session), &f.to_text(&ds.scene))?;
    }
    info!("{}: wrote {} hypothesis files", variant, files.len());
    Ok(())
}

pub fn eval(
    data: &Path,
    hyps: &Path,
    out: &Path,
    variants: &[Variant],
    n_sources: usize,
    min_overlap: f64,
) -> Result<Vec<MetricReport>> {
    let root = data;
    let scene = SceneConfig::load(&root.join(SCENE_FILE))?;
    let mpath = root.join(MANIFEST_FILE);
    let manifest = Manifest::from_text(&io::read_to_string(&mpath)?, &mpath)?;
    let mut reports = Vec::new();
    for &v in variants {
        let mut acc = MetricReport {
            system: v.name().to_string(),
            condition: aeloc_core::eval::condition_name(n_sources).to_string(),
            ..Default::default()
        };
        for session in manifest.sessions() {
            let entry = manifest.entry(session, n_sources).ok_or_else(|| Error::Parse {
                path: mpath.clone(),
                message: format!("session {session} has no {}-source recording", n_sources),
            })?;
            let gt = root.join(&entry.truth);
            let truth = io::truth_from_text(&scene, &io::read_to_string(&gt)?, &gt)?;
            let hp = hyp_path(hyps, v, n_sources, session);
            let h = HypothesisFile::from_text(&scene, &io::read_to_string(&hp)?, &hp)?;
            if h.variant != v.name() || h.session != session || h.n_sources != n_sources {
                return Err(Error::Parse {
                    path: hp,
                    message: format!(
                        "header says {} session {} sources {}, expected {} session {} sources {}",
                        h.variant,
                        h.session,
                        h.n_sources,
                        v.name(),
                        session,
                        n_sources
                    ),
                });
            }
            acc.merge(&evaluate(&scene, &h, &truth, min_overlap));
        }
        reports.push(acc);
    }
    io::write_string(&out.join("report.txt"), &render_table(&reports))?;
    io::write_string(&out.join("report.tsv"), &render_tsv(&reports))?;
    Ok(reports)
}

/// Plot data: position-prior heatmaps per fold and per-event SRP maps.
pub fn report(data: &Path, models: &Path, out: &Path, cfg: &SystemConfig<f64>) -> Result<usize> {
    let ds = load_dataset(data)?;
    let scene = &ds.scene;
    let mut written = 0;
    for s in &ds.sessions {
        let p = fold_path(models, s.index, "priors");
        let priors = io::priors_from_text(scene, &io::read_to_string(&p)?, &p)?;
        let title = format!("position priors, fold {:02}", s.index);
        io::write_string(
            &out.join(format!("priors_fold_{:02}.grid", s.index)),
            &io::grid_to_text(&scene.grid, &title, &priors.position_priors),
        )?;
        written += 1;

        let rec = &s.one_source;
        let analysis = aeloc_core::baselines::analyze(scene, rec, &cfg.srp)?;
        for (i, g) in rec.truth.iter().enumerate() {
            if let Some(map) = analysis.average_map(g.start_sample, g.end_sample) {
                let title = format!(
                    "SRP map, session {:02} event {i} ({} in cell {})",
                    s.index, scene.classes[g.class], g.cell
                );
                io::write_string(
                    &out.join(format!("srp_session_{:02}_event_{i:02}.grid", s.index)),
                    &io::grid_to_text(&scene.grid, &title, &map),
                )?;
                written += 1;
            }
        }
    }
    Ok(written)
}
