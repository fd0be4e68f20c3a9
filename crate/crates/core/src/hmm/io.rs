//! Plain-text model files. Values are written with their shortest exact
//! decimal representation, so a write/read cycle is lossless.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{EventModel, GmmState, ModelInventory, ModelSet};
use crate::error::{Error, Result};
use crate::real::Real;

const MAGIC: &str = "aeloc-models";
const VERSION: u32 = 1;

fn join<T: Real>(xs: &[T]) -> String {
    let mut s = String::new();
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{x}").expect("string write");
    }
    s
}

fn push_set<T: Real>(out: &mut String, set: &ModelSet<T>) {
    writeln!(out, "set array {} models {}", set.array, set.len()).unwrap();
    for m in set.models() {
        writeln!(out, "model label {} states {} dim {}", m.label, m.n_states(), m.dim()).unwrap();
        for (i, s) in m.states().iter().enumerate() {
            writeln!(out, "state {i} stay {} components {}", m.stay()[i], s.n_components()).unwrap();
            for c in 0..s.n_components() {
                writeln!(out, "weight {}", s.weights()[c]).unwrap();
                writeln!(out, "mean {}", join(s.mean(c))).unwrap();
                writeln!(out, "var {}", join(s.variance(c))).unwrap();
            }
        }
    }
}

pub fn write_model_set<T: Real>(set: &ModelSet<T>) -> String {
    let mut out = format!("{MAGIC} {VERSION}\n");
    push_set(&mut out, set);
    out
}

pub fn write_inventory<T: Real>(inv: &ModelInventory<T>) -> String {
    let mut out = format!("{MAGIC} {VERSION}\ninventory arrays {}\n", inv.n_arrays());
    for set in inv.sets() {
        push_set(&mut out, set);
    }
    out
}

struct Lines<'a> {
    path: &'a Path,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::parse(self.path, format!("line {}: {msg}", self.line))
    }

    fn next(&mut self) -> Result<Vec<&'a str>> {
        for (i, l) in self.iter.by_ref() {
            let l = l.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            self.line = i + 1;
            return Ok(l.split_whitespace().collect());
        }
        Err(Error::parse(self.path, "unexpected end of file"))
    }

    /// Next line, which must start with `key`; returns the remaining words.
    fn expect(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let words = self.next()?;
        if words.first() != Some(&key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        Ok(words[1..].to_vec())
    }

    /// Values of `name` in a `name value name value ...` list.
    fn field<V: FromStr>(&self, words: &[&str], name: &str) -> Result<V> {
        let pos = words
            .iter()
            .position(|w| *w == name)
            .ok_or_else(|| self.err(format!("missing `{name}`")))?;
        let raw = words.get(pos + 1).ok_or_else(|| self.err(format!("`{name}` has no value")))?;
        raw.parse().map_err(|_| self.err(format!("bad value `{raw}` for `{name}`")))
    }

    fn values<T: Real>(&self, words: &[&str], n: usize) -> Result<Vec<T>> {
        if words.len() != n {
            return Err(self.err(format!("expected {n} values, found {}", words.len())));
        }
        words
            .iter()
            .map(|w| w.parse::<T>().map_err(|_| self.err(format!("bad number `{w}`"))))
            .collect()
    }
}

fn header(lines: &mut Lines<'_>) -> Result<()> {
    let words = lines.next()?;
    match words.as_slice() {
        [m, v] if *m == MAGIC => match v.parse::<u32>() {
            Ok(VERSION) => Ok(()),
            _ => Err(lines.err(format!("unsupported model file version `{v}`"))),
        },
        _ => Err(lines.err("not a model file")),
    }
}

fn read_set<T: Real>(lines: &mut Lines<'_>) -> Result<ModelSet<T>> {
    let w = lines.expect("set")?;
    let array: usize = lines.field(&w, "array")?;
    let n_models: usize = lines.field(&w, "models")?;
    let mut models = Vec::with_capacity(n_models);
    for _ in 0..n_models {
        let w = lines.expect("model")?;
        let label: usize = lines.field(&w, "label")?;
        let n_states: usize = lines.field(&w, "states")?;
        let dim: usize = lines.field(&w, "dim")?;
        let mut states = Vec::with_capacity(n_states);
        let mut stay = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            let w = lines.expect("state")?;
            stay.push(lines.field::<T>(&w, "stay")?);
            let n_comp: usize = lines.field(&w, "components")?;
            let (mut weights, mut means, mut vars) = (Vec::new(), Vec::new(), Vec::new());
            for _ in 0..n_comp {
                let w = lines.expect("weight")?;
                weights.extend(lines.values::<T>(&w, 1)?);
                let w = lines.expect("mean")?;
                means.extend(lines.values::<T>(&w, dim)?);
                let w = lines.expect("var")?;
                vars.extend(lines.values::<T>(&w, dim)?);
            }
            states.push(GmmState::new(dim, weights, means, vars).map_err(|e| lines.err(e))?);
        }
        models.push(EventModel::new(label, array, states, stay).map_err(|e| lines.err(e))?);
    }
    ModelSet::new(array, models)
}

/// Parses a single model set. `path` is only used in error messages.
pub fn read_model_set<T: Real>(text: &str, path: &Path) -> Result<ModelSet<T>> {
    let mut lines = Lines {
        path,
        iter: text.lines().enumerate(),
        line: 0,
    };
    header(&mut lines)?;
    read_set(&mut lines)
}

pub fn read_inventory<T: Real>(text: &str, path: &Path) -> Result<ModelInventory<T>> {
    let mut lines = Lines {
        path,
        iter: text.lines().enumerate(),
        line: 0,
    };
    header(&mut lines)?;
    let w = lines.expect("inventory")?;
    let n: usize = lines.field(&w, "arrays")?;
    let sets = (0..n).map(|_| read_set(&mut lines)).collect::<Result<Vec<_>>>()?;
    ModelInventory::new(sets)
}
