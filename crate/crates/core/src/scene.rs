//! Room geometry, microphone arrays, the cell grid, class inventory and priors.
//!
//! Geometry is always expressed in meters as `f64`; it is configuration, not
//! part of the generic numeric core.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of sound used for every propagation and steering computation (m/s).
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Reserved class label for the speech event.
pub const SPEECH_LABEL: &str = "speech";
/// Reserved class label for the silence model.
pub const SILENCE_LABEL: &str = "silence";

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrayGeometry {
    pub array_id: usize,
    pub mic_positions: Vec<Point>,
}

impl ArrayGeometry {
    pub fn n_mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn center(&self) -> Point {
        let n = self.mic_positions.len() as f64;
        let (sx, sy) = self
            .mic_positions
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point::new(sx / n, sy / n)
    }

    fn validate(&self) -> Result<()> {
        if self.mic_positions.len() < 2 {
            return Err(Error::Config(format!(
                "array {} needs at least 2 microphones",
                self.array_id
            )));
        }
        for (a, pa) in self.mic_positions.iter().enumerate() {
            for pb in &self.mic_positions[a + 1..] {
                if pa.distance(*pb) < 1e-9 {
                    return Err(Error::Config(format!(
                        "array {} has coincident microphones",
                        self.array_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Row-major partition of the floor into `nx * ny` rectangles; cell
/// `j = iy * nx + ix`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellGrid {
    pub nx: usize,
    pub ny: usize,
    pub cell_width: f64,
    pub cell_height: f64,
    pub origin: Point,
}

impl CellGrid {
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.cell_width
    }

    pub fn height(&self) -> f64 {
        self.ny as f64 * self.cell_height
    }

    fn x_edge(&self, i: usize) -> f64 {
        self.origin.x + i as f64 * self.cell_width
    }

    fn y_edge(&self, i: usize) -> f64 {
        self.origin.y + i as f64 * self.cell_height
    }

    /// `(x_min, y_min, x_max, y_max)` of cell `j`.
    pub fn cell_rect(&self, j: usize) -> (f64, f64, f64, f64) {
        let (ix, iy) = (j % self.nx, j / self.nx);
        (
            self.x_edge(ix),
            self.y_edge(iy),
            self.x_edge(ix + 1),
            self.y_edge(iy + 1),
        )
    }

    pub fn centroid(&self, j: usize) -> Point {
        let (x0, y0, x1, y1) = self.cell_rect(j);
        Point::new(0.5 * (x0 + x1), 0.5 * (y0 + y1))
    }

    pub fn centroids(&self) -> Vec<Point> {
        (0..self.n_cells()).map(|j| self.centroid(j)).collect()
    }

    /// Cell containing `p`. Points on a shared edge go to the lower index.
    pub fn cell_of(&self, p: Point) -> Result<usize> {
        if !(p.x >= self.x_edge(0)
            && p.x <= self.x_edge(self.nx)
            && p.y >= self.y_edge(0)
            && p.y <= self.y_edge(self.ny))
        {
            return Err(Error::OutOfDomain { x: p.x, y: p.y });
        }
        let ix = Self::axis_index(p.x, self.nx, |i| self.x_edge(i), self.cell_width, self.origin.x);
        let iy = Self::axis_index(p.y, self.ny, |i| self.y_edge(i), self.cell_height, self.origin.y);
        Ok(iy * self.nx + ix)
    }

    fn axis_index(v: f64, n: usize, edge: impl Fn(usize) -> f64, size: f64, origin: f64) -> usize {
        let mut i = (((v - origin) / size).floor().max(0.0) as usize).min(n - 1);
        // settle rounding so that edge(i) < v <= edge(i + 1), or i == 0
        while i > 0 && v <= edge(i) {
            i -= 1;
        }
        while i + 1 < n && v > edge(i + 1) {
            i += 1;
        }
        i
    }

    /// Cells sharing an edge or a corner with `j`.
    pub fn neighbours(&self, j: usize) -> Vec<usize> {
        let (ix, iy) = ((j % self.nx) as isize, (j / self.nx) as isize);
        let mut out = Vec::with_capacity(8);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (ix + dx, iy + dy);
                if (dx, dy) != (0, 0)
                    && x >= 0
                    && y >= 0
                    && (x as usize) < self.nx
                    && (y as usize) < self.ny
                {
                    out.push(y as usize * self.nx + x as usize);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    /// Room extent (width along x, depth along y), meters; the room spans
    /// `[0, w] x [0, d]`.
    pub room_size: (f64, f64),
    pub arrays: Vec<ArrayGeometry>,
    pub grid: CellGrid,
    pub classes: Vec<String>,
    pub max_simultaneous: usize,
    pub sample_rate: f64,
}

impl SceneConfig {
    /// Smart-room sized scene: 6x6 grid of 0.661 m x 0.874 m cells watched
    /// by six three-microphone arrays on the walls.
    pub fn meeting_room() -> Self {
        let grid = CellGrid {
            nx: 6,
            ny: 6,
            cell_width: 0.661,
            cell_height: 0.874,
            origin: Point::new(0.0, 0.0),
        };
        let (w, d) = (grid.width(), grid.height());
        let inset = 0.05;
        let spacing = 0.2;
        let arrays = vec![
            horizontal_array(0, Point::new(w * 0.3, d - inset), spacing),
            horizontal_array(1, Point::new(w * 0.7, d - inset), spacing),
            vertical_array(2, Point::new(w - inset, d * 0.5), spacing),
            horizontal_array(3, Point::new(w * 0.7, inset), spacing),
            horizontal_array(4, Point::new(w * 0.3, inset), spacing),
            vertical_array(5, Point::new(inset, d * 0.5), spacing),
        ];
        let classes = [
            "applause", "cup", "chair", "cough", "door", "keys", "knock", "keyboard", "phone",
            "paper", "steps",
        ]
        .iter()
        .map(|s| s.to_string())
        .chain([SPEECH_LABEL.to_string(), SILENCE_LABEL.to_string()])
        .collect();
        SceneConfig {
            room_size: (w, d),
            arrays,
            grid,
            classes,
            max_simultaneous: 2,
            sample_rate: 16_000.0,
        }
    }

    /// Desk-scale scene used by the acceptance suite: 4 m x 4 m room, 4x4 grid,
    /// three 3-mic arrays on three walls, four event classes plus speech and
    /// silence.
    pub fn reference() -> Self {
        let grid = CellGrid {
            nx: 4,
            ny: 4,
            cell_width: 1.0,
            cell_height: 1.0,
            origin: Point::new(0.0, 0.0),
        };
        let inset = 0.05;
        let spacing = 0.25;
        let arrays = vec![
            vertical_array(0, Point::new(inset, 2.0), spacing),
            horizontal_array(1, Point::new(2.0, 4.0 - inset), spacing),
            vertical_array(2, Point::new(4.0 - inset, 2.0), spacing),
        ];
        let classes = ["knock", "keys", "phone", "applause", SPEECH_LABEL, SILENCE_LABEL]
            .iter()
            .map(|s| s.to_string())
            .collect();
        SceneConfig {
            room_size: (4.0, 4.0),
            arrays,
            grid,
            classes,
            max_simultaneous: 2,
            sample_rate: 16_000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, d) = self.room_size;
        if !(w > 0.0 && d > 0.0) {
            return Err(Error::Config("room size must be positive".into()));
        }
        if self.arrays.is_empty() {
            return Err(Error::Config("at least one microphone array is required".into()));
        }
        if self.classes.len() < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if !(1..=2).contains(&self.max_simultaneous) {
            return Err(Error::Config("max_simultaneous must be 1 or 2".into()));
        }
        if self.grid.nx == 0 || self.grid.ny == 0 || !(self.grid.cell_width > 0.0 && self.grid.cell_height > 0.0) {
            return Err(Error::Config("grid must have positive size".into()));
        }
        let tol = 1e-9;
        let g = &self.grid;
        if g.origin.x > tol || g.origin.y > tol || g.origin.x + g.width() < w - tol || g.origin.y + g.height() < d - tol {
            return Err(Error::Config("cell grid does not cover the room".into()));
        }
        for (k, a) in self.arrays.iter().enumerate() {
            if a.array_id != k {
                return Err(Error::Config(format!("array {k} has id {}", a.array_id)));
            }
            a.validate()?;
            for p in &a.mic_positions {
                if !(p.x >= 0.0 && p.x <= w && p.y >= 0.0 && p.y <= d) {
                    return Err(Error::Config(format!(
                        "microphone ({}, {}) of array {k} is outside the room",
                        p.x, p.y
                    )));
                }
            }
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].contains(c) {
                return Err(Error::Config(format!("duplicate class label {c:?}")));
            }
        }
        if self.silence_class().is_none() {
            return Err(Error::Config(format!("class list must contain {SILENCE_LABEL:?}")));
        }
        Ok(())
    }

    pub fn n_arrays(&self) -> usize {
        self.arrays.len()
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n_cells()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_id(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn speech_class(&self) -> Option<usize> {
        self.class_id(SPEECH_LABEL)
    }

    pub fn silence_class(&self) -> Option<usize> {
        self.class_id(SILENCE_LABEL)
    }

    /// Every class that can be emitted as an event (all but silence).
    pub fn event_classes(&self) -> Vec<usize> {
        let silence = self.silence_class();
        (0..self.classes.len()).filter(|&c| Some(c) != silence).collect()
    }

    /// Scored acoustic events: neither speech nor silence.
    pub fn ae_classes(&self) -> Vec<usize> {
        let (speech, silence) = (self.speech_class(), self.silence_class());
        (0..self.classes.len())
            .filter(|&c| Some(c) != silence && Some(c) != speech)
            .collect()
    }

    pub fn n_mics(&self) -> usize {
        self.arrays.iter().map(|a| a.n_mics()).sum()
    }

    /// All microphone positions, array-major.
    pub fn mic_positions(&self) -> Vec<Point> {
        self.arrays
            .iter()
            .flat_map(|a| a.mic_positions.iter().copied())
            .collect()
    }

    /// Range of flat channel indices belonging to array `k`.
    pub fn channel_range(&self, k: usize) -> std::ops::Range<usize> {
        let start: usize = self.arrays[..k].iter().map(|a| a.n_mics()).sum();
        start..start + self.arrays[k].n_mics()
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.x <= self.room_size.0 && p.y >= 0.0 && p.y <= self.room_size.1
    }

    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let file: SceneFile = toml::from_str(text).map_err(|e| Error::parse(path, e.to_string()))?;
        let scene = file.into_scene();
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(&SceneFile::from_scene(self)).expect("scene serializes")
    }
}

fn horizontal_array(id: usize, center: Point, spacing: f64) -> ArrayGeometry {
    ArrayGeometry {
        array_id: id,
        mic_positions: (-1..=1)
            .map(|i| Point::new(center.x + i as f64 * spacing, center.y))
            .collect(),
    }
}

fn vertical_array(id: usize, center: Point, spacing: f64) -> ArrayGeometry {
    ArrayGeometry {
        array_id: id,
        mic_positions: (-1..=1)
            .map(|i| Point::new(center.x, center.y + i as f64 * spacing))
            .collect(),
    }
}

/// On-disk scene description (TOML).
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    sample_rate: f64,
    room: [f64; 2],
    #[serde(default = "default_max_simultaneous")]
    max_simultaneous: usize,
    classes: Vec<String>,
    grid: GridFile,
    arrays: Vec<ArrayFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    nx: usize,
    ny: usize,
    cell: [f64; 2],
    #[serde(default)]
    origin: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayFile {
    mics: Vec<[f64; 2]>,
}

fn default_max_simultaneous() -> usize {
    2
}

impl SceneFile {
    fn into_scene(self) -> SceneConfig {
        SceneConfig {
            room_size: (self.room[0], self.room[1]),
            arrays: self
                .arrays
                .into_iter()
                .enumerate()
                .map(|(k, a)| ArrayGeometry {
                    array_id: k,
                    mic_positions: a.mics.iter().map(|m| Point::new(m[0], m[1])).collect(),
                })
                .collect(),
            grid: CellGrid {
                nx: self.grid.nx,
                ny: self.grid.ny,
                cell_width: self.grid.cell[0],
                cell_height: self.grid.cell[1],
                origin: Point::new(self.grid.origin[0], self.grid.origin[1]),
            },
            classes: self.classes,
            max_simultaneous: self.max_simultaneous,
            sample_rate: self.sample_rate,
        }
    }

    fn from_scene(s: &SceneConfig) -> Self {
        SceneFile {
            sample_rate: s.sample_rate,
            room: [s.room_size.0, s.room_size.1],
            max_simultaneous: s.max_simultaneous,
            classes: s.classes.clone(),
            grid: GridFile {
                nx: s.grid.nx,
                ny: s.grid.ny,
                cell: [s.grid.cell_width, s.grid.cell_height],
                origin: [s.grid.origin.x, s.grid.origin.y],
            },
            arrays: s
                .arrays
                .iter()
                .map(|a| ArrayFile {
                    mics: a.mic_positions.iter().map(|p| [p.x, p.y]).collect(),
                })
                .collect(),
        }
    }
}

/// Class and position prior probabilities used by the MAP decision.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorTable {
    pub class_priors: Vec<f64>,
    pub position_priors: Vec<f64>,
}

impl PriorTable {
    pub fn flat(n_classes: usize, n_cells: usize) -> Self {
        PriorTable {
            class_priors: vec![1.0 / n_classes as f64; n_classes],
            position_priors: vec![1.0 / n_cells as f64; n_cells],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_priors.len()
    }

    pub fn n_cells(&self) -> usize {
        self.position_priors.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Smoothing {
    /// Add one pseudo-count to every cell.
    #[default]
    AddOne,
    None,
}

/// Position priors from event counts per cell; class priors stay flat.
pub fn estimate_position_priors(
    events: &[(usize, usize)],
    grid: &CellGrid,
    n_classes: usize,
    smoothing: Smoothing,
) -> Result<PriorTable> {
    if events.is_empty() {
        return Err(Error::EmptyData("no training events to count".into()));
    }
    let p = grid.n_cells();
    let mut counts = vec![0usize; p];
    for &(_, cell) in events {
        if cell >= p {
            return Err(Error::Config(format!("cell {cell} out of range (P = {p})")));
        }
        counts[cell] += 1;
    }
    let pseudo = match smoothing {
        Smoothing::AddOne => 1,
        Smoothing::None => 0,
    };
    let total = (events.len() + pseudo * p) as f64;
    let position_priors = counts
        .iter()
        .map(|&c| (c + pseudo) as f64 / total)
        .collect();
    Ok(PriorTable {
        class_priors: vec![1.0 / n_classes as f64; n_classes],
        position_priors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn paper_grid() -> CellGrid {
        SceneConfig::meeting_room().grid
    }

    fn brute_force_cell(grid: &CellGrid, p: Point) -> Option<usize> {
        (0..grid.n_cells()).find(|&j| {
            let (x0, y0, x1, y1) = grid.cell_rect(j);
            p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1
        })
    }

    #[test]
    fn centroid_round_trip() {
        let grid = paper_grid();
        assert_eq!(grid.cell_of(grid.centroid(0)).unwrap(), 0);
        for j in 0..grid.n_cells() {
            assert_eq!(grid.cell_of(grid.centroid(j)).unwrap(), j);
        }
    }

    #[test]
    fn shared_edge_goes_to_lower_index() {
        let grid = paper_grid();
        let (_, y0, x1, y1) = grid.cell_rect(3);
        let p = Point::new(x1, 0.5 * (y0 + y1));
        assert_eq!(grid.cell_rect(4).0, x1);
        assert_eq!(grid.cell_of(p).unwrap(), 3);
        // horizontal edge between rows 0 and 1
        let c = grid.centroid(2);
        assert_eq!(grid.cell_of(Point::new(c.x, grid.cell_rect(2).3)).unwrap(), 2);
    }

    #[test]
    fn outside_points_are_rejected() {
        let grid = paper_grid();
        assert!(matches!(
            grid.cell_of(Point::new(-0.01, 1.0)),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(grid.cell_of(Point::new(1.0, grid.height() + 0.01)).is_err());
        assert!(grid.cell_of(Point::new(f64::NAN, 1.0)).is_err());
    }

    #[test]
    fn random_points_match_rectangle_scan() {
        use rand::{Rng, SeedableRng};
        let grid = paper_grid();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = Point::new(
                rng.random_range(0.0..=grid.width()),
                rng.random_range(0.0..=grid.height()),
            );
            assert_eq!(grid.cell_of(p).ok(), brute_force_cell(&grid, p));
        }
        // every grid vertex as well
        for iy in 0..=grid.ny {
            for ix in 0..=grid.nx {
                let p = Point::new(grid.x_edge(ix), grid.y_edge(iy));
                assert_eq!(grid.cell_of(p).ok(), brute_force_cell(&grid, p));
            }
        }
    }

    #[test]
    fn prior_counting() {
        let grid = CellGrid {
            nx: 4,
            ny: 4,
            cell_width: 1.0,
            cell_height: 1.0,
            origin: Point::default(),
        };
        let events: Vec<_> = (0..10).map(|_| (0, 5)).collect();
        let pt = estimate_position_priors(&events, &grid, 3, Smoothing::None).unwrap();
        assert_eq!(pt.position_priors[5], 1.0);
        assert!(pt.position_priors.iter().enumerate().all(|(j, &p)| j == 5 || p == 0.0));

        let mut events: Vec<_> = (0..7).map(|_| (1, 0)).collect();
        events.extend((0..3).map(|_| (1, 2)));
        let pt = estimate_position_priors(&events, &grid, 3, Smoothing::None).unwrap();
        assert!((pt.position_priors[2] - 0.3).abs() < 1e-12);
        assert!(pt.class_priors.iter().all(|&c| (c - 1.0 / 3.0).abs() < 1e-15));

        assert!(estimate_position_priors(&[], &grid, 3, Smoothing::AddOne).is_err());
    }

    #[test]
    fn laplace_smoothing_small_grid() {
        let grid = CellGrid {
            nx: 2,
            ny: 2,
            cell_width: 1.0,
            cell_height: 1.0,
            origin: Point::default(),
        };
        let pt = estimate_position_priors(&[(0, 0), (1, 0)], &grid, 2, Smoothing::AddOne).unwrap();
        let expected = [3.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0];
        for (a, b) in pt.position_priors.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_priors() {
        let pt = PriorTable::flat(6, 36);
        assert!(pt.class_priors.iter().all(|&p| p == 1.0 / 6.0));
        assert!((pt.position_priors.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reference_scenes_validate() {
        SceneConfig::meeting_room().validate().unwrap();
        SceneConfig::reference().validate().unwrap();
        assert_eq!(SceneConfig::meeting_room().n_cells(), 36);
    }

    #[test]
    fn invalid_scenes() {
        let mut s = SceneConfig::reference();
        s.arrays[0].mic_positions[0] = Point::new(-1.0, 0.0);
        assert!(s.validate().is_err());
        let mut s = SceneConfig::reference();
        s.arrays[1].mic_positions[1] = s.arrays[1].mic_positions[0];
        assert!(s.validate().is_err());
        let mut s = SceneConfig::reference();
        s.arrays.clear();
        assert!(s.validate().is_err());
        let mut s = SceneConfig::reference();
        s.classes = vec![SILENCE_LABEL.into()];
        assert!(s.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let s = SceneConfig::reference();
        let text = s.to_toml_string();
        let back = SceneConfig::from_toml_str(&text, Path::new("scene.toml")).unwrap();
        assert_eq!(s, back);
    }

    proptest! {
        #[test]
        fn priors_sum_to_one(cells in proptest::collection::vec(0usize..16, 1..60), smooth in any::<bool>()) {
            let grid = SceneConfig::reference().grid;
            let events: Vec<_> = cells.iter().map(|&c| (0, c)).collect();
            let mode = if smooth { Smoothing::AddOne } else { Smoothing::None };
            let pt = estimate_position_priors(&events, &grid, 5, mode).unwrap();
            prop_assert!((pt.position_priors.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!((pt.class_priors.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            if smooth {
                prop_assert!(pt.position_priors.iter().all(|&p| p > 0.0));
            }
            let mut rev = events.clone();
            rev.reverse();
            let pt2 = estimate_position_priors(&rev, &grid, 5, mode).unwrap();
            prop_assert_eq!(pt, pt2);
        }
    }
}
