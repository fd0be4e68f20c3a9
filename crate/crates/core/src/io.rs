//! On-disk formats: raw recordings, ground-truth sidecars, hypothesis files
//! the dataset manifest, priors and plot grids.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::baselines::Combination;
use crate::error::{Error, Result};
use crate::scene::{CellGrid, PriorTable, SceneConfig};
use crate::synth::{GroundTruth, MultichannelRecording};

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn make_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

pub fn write_string(path: &Path, text: &str) -> Result<()> {
    make_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

/// Raw planar recording: `u32 channels`, `u32 samples`, `u32 sample_rate`
/// (little-endian), then every channel in turn as float32 samples.
pub fn write_raw(path: &Path, rec: &MultichannelRecording<f64>) -> Result<()> {
    make_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = [rec.n_channels() as u32, rec.n_samples() as u32, rec.sample_rate.round() as u32];
    let mut write = || -> std::io::Result<()> {
        for h in header {
            w.write_all(&h.to_le_bytes())?;
        }
        for ch in &rec.channels {
            for &v in ch {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Reads a raw planar recording; truth is attached separately.
pub fn read_raw(path: &Path) -> Result<MultichannelRecording<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(Error::parse(path, "truncated header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let (n_ch, n, sr) = (word(0), word(1), word(2));
    if bytes.len() != 12 + 4 * n_ch * n {
        return Err(Error::parse(path, format!("expected {n_ch} x {n} samples")));
    }
    let channels = (0..n_ch)
        .map(|c| {
            let base = 12 + 4 * c * n;
            bytes[base..base + 4 * n]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect()
        })
        .collect();
    Ok(MultichannelRecording {
        channels,
        sample_rate: sr as f64,
        truth: Vec::new(),
        snr_db: f64::NAN,
    })
}

/// Multichannel 32-bit float WAV.
pub fn write_wav(path: &Path, rec: &MultichannelRecording<f64>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: rec.n_channels() as u16,
        sample_rate: rec.sample_rate.round() as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::parse(path, other.to_string()),
    };
    make_parent(path)?;
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for t in 0..rec.n_samples() {
        for ch in &rec.channels {
            w.write_sample(ch[t] as f32).map_err(wav_err)?;
        }
    }
    w.finalize().map_err(wav_err)
}

pub fn read_wav(path: &Path) -> Result<MultichannelRecording<f64>> {
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::parse(path, other.to_string()),
    };
    let mut r = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = r.spec();
    let n_ch = spec.channels as usize;
    let samples: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => r.samples::<f32>().collect::<std::result::Result<_, _>>().map_err(wav_err)?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            r.samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    let mut channels = vec![Vec::with_capacity(samples.len() / n_ch.max(1)); n_ch];
    for (i, s) in samples.into_iter().enumerate() {
        channels[i % n_ch].push(s as f64);
    }
    Ok(MultichannelRecording {
        channels,
        sample_rate: spec.sample_rate as f64,
        truth: Vec::new(),
        snr_db: f64::NAN,
    })
}

/// Ground-truth sidecar: `class_label cell start_sample end_sample` per line.
pub fn truth_to_text(scene: &SceneConfig, truth: &[GroundTruth]) -> String {
    let mut s = format!("# sample_rate {}\n# class cell start_sample end_sample\n", scene.sample_rate);
    for g in truth {
        let _ = writeln!(s, "{} {} {} {}", scene.classes[g.class], g.cell, g.start_sample, g.end_sample);
    }
    s
}

pub fn truth_from_text(scene: &SceneConfig, text: &str, path: &Path) -> Result<Vec<GroundTruth>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| Error::parse(path, format!("line {}: {m}", i + 1));
        let w: Vec<&str> = line.split_whitespace().collect();
        if w.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        let class = scene.class_id(w[0]).ok_or_else(|| bad("unknown class"))?;
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
        let g = GroundTruth {
            class,
            cell: num(w[1])?,
            start_sample: num(w[2])?,
            end_sample: num(w[3])?,
        };
        if g.cell >= scene.n_cells() || g.end_sample <= g.start_sample {
            return Err(bad("cell out of range or empty interval"));
        }
        out.push(g);
    }
    Ok(out)
}

/// Which decision set a hypothesis row belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum HypothesisSet {
    /// Decisions on ground-truth intervals.
    Known,
    /// Full system output with estimated end-points.
    Estimated,
    /// Best-channel Step 1 labels.
    Step1,
}

impl HypothesisSet {
    pub fn name(&self) -> &'static str {
        match self {
            HypothesisSet::Known => "known",
            HypothesisSet::Estimated => "estimated",
            HypothesisSet::Step1 => "step1",
        }
    }
}

impl FromStr for HypothesisSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "known" => Ok(HypothesisSet::Known),
            "estimated" => Ok(HypothesisSet::Estimated),
            "step1" => Ok(HypothesisSet::Step1),
            _ => Err(format!("unknown hypothesis set `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisRow {
    pub set: HypothesisSet,
    pub class: Option<usize>,
    pub cell: Option<usize>,
    /// Seconds.
    pub start: f64,
    pub end: f64,
    pub score: f64,
    pub pass: u8,
}

/// System output for one recording.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisFile {
    pub variant: String,
    pub session: usize,
    pub n_sources: usize,
    pub rows: Vec<HypothesisRow>,
}

const HYP_HEADER: &str = "set class cell x y start end score pass";

impl HypothesisFile {
    pub fn rows_in(&self, set: HypothesisSet) -> impl Iterator<Item = &HypothesisRow> {
        self.rows.iter().filter(move |r| r.set == set)
    }

    /// One line per hypothesis: `set class cell x y start end score pass`,
    /// with `-` for an unknown class or cell.
    pub fn to_text(&self, scene: &SceneConfig) -> String {
        let mut s = format!(
            "# variant {}\n# session {}\n# sources {}\n# {HYP_HEADER}\n",
            self.variant, self.session, self.n_sources
        );
        for r in &self.rows {
            let class = r.class.map_or("-".to_string(), |c| scene.classes[c].clone());
            let (cell, x, y) = match r.cell {
                Some(j) => {
                    let c = scene.grid.centroid(j);
                    (j.to_string(), format!("{:.3}", c.x), format!("{:.3}", c.y))
                }
                None => ("-".into(), "-".into(), "-".into()),
            };
            let _ = writeln!(
                s,
                "{} {class} {cell} {x} {y} {:.3} {:.3} {:.4} {}",
                r.set.name(),
                r.start,
                r.end,
                r.score,
                r.pass
            );
        }
        s
    }

    pub fn from_text(scene: &SceneConfig, text: &str, path: &Path) -> Result<Self> {
        let mut variant = None;
        let mut session = None;
        let mut n_sources = None;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            let bad = |m: String| Error::parse(path, format!("line {}: {m}", i + 1));
            if let Some(meta) = line.strip_prefix('#') {
                let w: Vec<&str> = meta.split_whitespace().collect();
                match w.as_slice() {
                    ["variant", v] => variant = Some(v.to_string()),
                    ["session", v] => session = Some(v.parse().map_err(|_| bad("bad session".into()))?),
                    ["sources", v] => n_sources = Some(v.parse().map_err(|_| bad("bad source count".into()))?),
                    _ => {}
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let w: Vec<&str> = line.split_whitespace().collect();
            if w.len() != 9 {
                return Err(bad(format!("expected 9 columns, found {}", w.len())));
            }
            let set = w[0].parse().map_err(bad)?;
            let class = match w[1] {
                "-" => None,
                l => Some(scene.class_id(l).ok_or_else(|| bad(format!("unknown class `{l}`")))?),
            };
            let cell = match w[2] {
                "-" => None,
                c => {
                    let j: usize = c.parse().map_err(|_| bad(format!("bad cell `{c}`")))?;
                    if j >= scene.n_cells() {
                        return Err(bad(format!("cell {j} out of range")));
                    }
                    Some(j)
                }
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));
            rows.push(HypothesisRow {
                set,
                class,
                cell,
                start: num(w[5])?,
                end: num(w[6])?,
                score: num(w[7])?,
                pass: w[8].parse().map_err(|_| bad("bad pass".into()))?,
            });
        }
        Ok(HypothesisFile {
            variant: variant.ok_or_else(|| Error::parse(path, "missing `# variant` header"))?,
            session: session.ok_or_else(|| Error::parse(path, "missing `# session` header"))?,
            n_sources: n_sources.ok_or_else(|| Error::parse(path, "missing `# sources` header"))?,
            rows,
        })
    }
}

/// One recording listed in a dataset manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub session: usize,
    pub n_sources: usize,
    /// Path relative to the dataset root.
    pub audio: PathBuf,
    pub truth: PathBuf,
    pub sha256: String,
    pub n_samples: usize,
    pub n_events: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("# seed {}\nsession\tsources\taudio\ttruth\tsha256\tsamples\tevents\n", self.seed);
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                e.session,
                e.n_sources,
                e.audio.display(),
                e.truth.display(),
                e.sha256,
                e.n_samples,
                e.n_events
            );
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut m = Manifest::default();
        for (i, line) in text.lines().enumerate() {
            let bad = |msg: &str| Error::parse(path, format!("line {}: {msg}", i + 1));
            if let Some(rest) = line.strip_prefix("# seed ") {
                m.seed = rest.trim().parse().map_err(|_| bad("bad seed"))?;
                continue;
            }
            if line.starts_with('#') || line.starts_with("session\t") || line.trim().is_empty() {
                continue;
            }
            let w: Vec<&str> = line.split('\t').collect();
            if w.len() != 7 {
                return Err(bad("expected 7 tab-separated columns"));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
            m.entries.push(ManifestEntry {
                session: num(w[0])?,
                n_sources: num(w[1])?,
                audio: PathBuf::from(w[2]),
                truth: PathBuf::from(w[3]),
                sha256: w[4].to_string(),
                n_samples: num(w[5])?,
                n_events: num(w[6])?,
            });
        }
        Ok(m)
    }

    pub fn sessions(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.entries.iter().map(|e| e.session).collect();
        s.dedup();
        s
    }

    pub fn entry(&self, session: usize, n_sources: usize) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.session == session && e.n_sources == n_sources)
    }
}

/// Priors as text: one `class <label> <p>` line per class, one
/// `cell <j> <p>` line per cell. Values use shortest round-trip formatting.
pub fn priors_to_text(scene: &SceneConfig, priors: &PriorTable) -> String {
    let mut s = String::from("# aeloc-priors 1\n");
    for (c, p) in priors.class_priors.iter().enumerate() {
        let _ = writeln!(s, "class {} {p:?}", scene.classes[c]);
    }
    for (j, p) in priors.position_priors.iter().enumerate() {
        let _ = writeln!(s, "cell {j} {p:?}");
    }
    s
}

pub fn priors_from_text(scene: &SceneConfig, text: &str, path: &Path) -> Result<PriorTable> {
    let mut t = PriorTable {
        class_priors: vec![f64::NAN; scene.n_classes()],
        position_priors: vec![f64::NAN; scene.n_cells()],
    };
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| Error::parse(path, format!("line {}: {m}", i + 1));
        let w: Vec<&str> = line.split_whitespace().collect();
        if w.len() != 3 {
            return Err(bad("expected 3 columns"));
        }
        let p: f64 = w[2].parse().map_err(|_| bad("bad probability"))?;
        let slot = match w[0] {
            "class" => scene.class_id(w[1]).and_then(|c| t.class_priors.get_mut(c)),
            "cell" => w[1].parse::<usize>().ok().and_then(|j| t.position_priors.get_mut(j)),
            _ => return Err(bad("expected `class` or `cell`")),
        };
        *slot.ok_or_else(|| bad("unknown class or cell"))? = p;
    }
    if t.class_priors.iter().chain(&t.position_priors).any(|p| p.is_nan()) {
        return Err(Error::parse(path, "incomplete prior table"));
    }
    Ok(t)
}

/// Per-cell values laid out as the floor grid: one text row per grid row,
/// highest `y` first, so the output reads like a floor plan.
pub fn grid_to_text(grid: &CellGrid, title: &str, values: &[f64]) -> String {
    let mut s = format!("# {title}\n# {} x {} cells, top row is the largest y\n", grid.nx, grid.ny);
    for iy in (0..grid.ny).rev() {
        let row: Vec<String> = (0..grid.nx).map(|ix| format!("{:.6}", values[iy * grid.nx + ix])).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

/// Label list of an all-combinations model set, one line per model label.
pub fn combinations_to_text(scene: &SceneConfig, combos: &[Combination]) -> String {
    let mut s = String::from("# aeloc-combinations 1\n");
    for (i, c) in combos.iter().enumerate() {
        let _ = match *c {
            Combination::Silence => writeln!(s, "{i} silence"),
            Combination::Isolated(k) => writeln!(s, "{i} isolated {}", scene.classes[k]),
            Combination::WithSpeech(k) => writeln!(s, "{i} with-speech {}", scene.classes[k]),
        };
    }
    s
}

pub fn combinations_from_text(scene: &SceneConfig, text: &str, path: &Path) -> Result<Vec<Combination>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| Error::parse(path, format!("line {}: {m}", i + 1));
        let w: Vec<&str> = line.split_whitespace().collect();
        if w.first().and_then(|x| x.parse::<usize>().ok()) != Some(out.len()) {
            return Err(bad("labels must be consecutive from 0"));
        }
        let class = |k: Option<&&str>| k.and_then(|l| scene.class_id(l)).ok_or_else(|| bad("unknown class"));
        out.push(match w.get(1).copied() {
            Some("silence") => Combination::Silence,
            Some("isolated") => Combination::Isolated(class(w.get(2))?),
            Some("with-speech") => Combination::WithSpeech(class(w.get(2))?),
            _ => return Err(bad("unknown combination kind")),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::GroundTruth;

    fn rec() -> MultichannelRecording<f64> {
        MultichannelRecording {
            channels: vec![vec![0.5, -0.25, 0.125], vec![1.0, 0.0, -1.0]],
            sample_rate: 16_000.0,
            truth: vec![],
            snr_db: f64::NAN,
        }
    }

    #[test]
    fn raw_and_wav_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let r = rec();
        let raw = dir.path().join("a.f32");
        write_raw(&raw, &r).unwrap();
        let back = read_raw(&raw).unwrap();
        assert_eq!(back.channels, r.channels);
        assert_eq!(back.sample_rate, 16_000.0);
        let wav = dir.path().join("a.wav");
        write_wav(&wav, &r).unwrap();
        assert_eq!(read_wav(&wav).unwrap().channels, r.channels);
        assert_eq!(sha256_file(&raw).unwrap().len(), 64);
    }

    #[test]
    fn missing_files_are_named() {
        let err = read_raw(Path::new("/nonexistent/x.f32")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(ref p) if p.ends_with("x.f32")));
    }

    #[test]
    fn truth_sidecar_round_trip() {
        let scene = SceneConfig::reference();
        let truth = vec![
            GroundTruth { class: 0, cell: 3, start_sample: 10, end_sample: 900 },
            GroundTruth { class: 4, cell: 4, start_sample: 10, end_sample: 900 },
        ];
        let text = truth_to_text(&scene, &truth);
        assert_eq!(truth_from_text(&scene, &text, Path::new("t")).unwrap(), truth);
        assert!(truth_from_text(&scene, "bogus 1 2 3\n", Path::new("t")).is_err());
    }

    #[test]
    fn hypothesis_file_round_trip() {
        let scene = SceneConfig::reference();
        let f = HypothesisFile {
            variant: "srp-phat".into(),
            session: 3,
            n_sources: 2,
            rows: vec![
                HypothesisRow { set: HypothesisSet::Known, class: None, cell: Some(5), start: 0.5, end: 1.25, score: 0.0, pass: 1 },
                HypothesisRow { set: HypothesisSet::Estimated, class: Some(2), cell: None, start: 2.0, end: 2.5, score: -12.5, pass: 2 },
            ],
        };
        let text = f.to_text(&scene);
        assert!(text.contains("known - 5 1.500 1.500 0.500 1.250"));
        assert_eq!(HypothesisFile::from_text(&scene, &text, Path::new("h")).unwrap(), f);
        assert!(HypothesisFile::from_text(&scene, "known - 1\n", Path::new("h")).is_err());
    }

    #[test]
    fn priors_and_combinations_round_trip() {
        let scene = SceneConfig::reference();
        let mut p = PriorTable::flat(scene.n_classes(), scene.n_cells());
        p.position_priors[3] = 0.1 + 0.2;
        let back = priors_from_text(&scene, &priors_to_text(&scene, &p), Path::new("p")).unwrap();
        assert_eq!(back, p);
        assert!(priors_from_text(&scene, "cell 0 1.0\n", Path::new("p")).is_err());

        let combos = vec![Combination::Silence, Combination::Isolated(2), Combination::WithSpeech(0)];
        let text = combinations_to_text(&scene, &combos);
        assert_eq!(combinations_from_text(&scene, &text, Path::new("c")).unwrap(), combos);
    }

    #[test]
    fn grid_text_is_a_floor_plan() {
        let grid = SceneConfig::reference().grid;
        let v: Vec<f64> = (0..grid.n_cells()).map(|j| j as f64).collect();
        let text = grid_to_text(&grid, "cells", &v);
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), grid.ny);
        assert!(rows[0].starts_with("12.000000"));
        assert!(rows[grid.ny - 1].starts_with("0.000000 1.000000"));
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest {
            seed: 4,
            entries: vec![ManifestEntry {
                session: 0,
                n_sources: 1,
                audio: "session_00/one_source.f32".into(),
                truth: "session_00/one_source.gt".into(),
                sha256: "ab".repeat(32),
                n_samples: 100,
                n_events: 2,
            }],
        };
        assert_eq!(Manifest::from_text(&m.to_text(), Path::new("m")).unwrap(), m);
        assert_eq!(m.sessions(), vec![0]);
    }
}
