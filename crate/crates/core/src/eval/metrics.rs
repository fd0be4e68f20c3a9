use std::collections::BTreeMap;
use std::fmt::Write as _;

/// An event with a time extent in seconds; `class` or `cell` may be unknown.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimedEvent {
    pub class: Option<usize>,
    pub cell: Option<usize>,
    pub start: f64,
    pub end: f64,
}

impl TimedEvent {
    pub fn overlap(&self, other: &TimedEvent) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchRule {
    pub require_cell: bool,
    /// Minimum overlap as a fraction of the reference event's duration; any
    /// positive overlap counts at 0.
    pub min_overlap: f64,
}

impl Default for MatchRule {
    fn default() -> Self {
        MatchRule {
            require_cell: false,
            min_overlap: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Matching {
    /// `(hypothesis, reference)` index pairs.
    pub pairs: Vec<(usize, usize)>,
    pub insertions: Vec<usize>,
    pub deletions: Vec<usize>,
}

/// One-to-one greedy matching by overlap length. Candidate pairs must agree
/// on class (and cell if required) and overlap in time.
pub fn match_events(hyps: &[TimedEvent], refs: &[TimedEvent], rule: &MatchRule) -> Matching {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (h, hy) in hyps.iter().enumerate() {
        for (r, re) in refs.iter().enumerate() {
            if hy.class != re.class || (rule.require_cell && hy.cell != re.cell) {
                continue;
            }
            let ov = hy.overlap(re);
            if ov > 0.0 && ov >= rule.min_overlap * re.duration() {
                cands.push((ov, h, r));
            }
        }
    }
    // longest overlap first; ties resolved by event content so the result
    // does not depend on list order
    let key = |e: &TimedEvent| (e.start.to_bits(), e.end.to_bits(), e.class, e.cell);
    cands.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| key(&refs[a.2]).cmp(&key(&refs[b.2])))
            .then_with(|| key(&hyps[a.1]).cmp(&key(&hyps[b.1])))
    });
    let mut used_h = vec![false; hyps.len()];
    let mut used_r = vec![false; refs.len()];
    let mut m = Matching::default();
    for (_, h, r) in cands {
        if !used_h[h] && !used_r[r] {
            used_h[h] = true;
            used_r[r] = true;
            m.pairs.push((h, r));
        }
    }
    m.insertions = (0..hyps.len()).filter(|&h| !used_h[h]).collect();
    m.deletions = (0..refs.len()).filter(|&r| !used_r[r]).collect();
    m
}

/// Precision / recall / F-score counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Detection {
    pub correct: usize,
    pub hypotheses: usize,
    pub references: usize,
}

impl Detection {
    pub fn from_matching(m: &Matching, n_hyp: usize, n_ref: usize) -> Self {
        Detection {
            correct: m.pairs.len(),
            hypotheses: n_hyp,
            references: n_ref,
        }
    }

    pub fn score(hyps: &[TimedEvent], refs: &[TimedEvent], rule: &MatchRule) -> Self {
        Detection::from_matching(&match_events(hyps, refs, rule), hyps.len(), refs.len())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.hypotheses)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.references)
    }

    pub fn f_score(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    pub fn insertions(&self) -> usize {
        self.hypotheses - self.correct
    }

    pub fn deletions(&self) -> usize {
        self.references - self.correct
    }

    pub fn merge(&mut self, o: &Detection) {
        self.correct += o.correct;
        self.hypotheses += o.hypotheses;
        self.references += o.references;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Rate {
    pub correct: usize,
    pub total: usize,
}

impl Rate {
    pub fn value(&self) -> f64 {
        ratio(self.correct, self.total)
    }

    pub fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += usize::from(ok);
    }

    pub fn merge(&mut self, o: &Rate) {
        self.correct += o.correct;
        self.total += o.total;
    }
}

/// Fraction of correct `(predicted, truth)` decisions.
pub fn classification_accuracy(decisions: &[(Option<usize>, usize)]) -> Rate {
    let mut r = Rate::default();
    for &(p, t) in decisions {
        r.add(p == Some(t));
    }
    r
}

/// Per-class localization rates; the headline figure is their plain mean.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Localization {
    pub per_class: BTreeMap<usize, Rate>,
}

impl Localization {
    /// `(class, correct)` per event.
    pub fn from_decisions(decisions: &[(usize, bool)]) -> Self {
        let mut l = Localization::default();
        for &(c, ok) in decisions {
            l.per_class.entry(c).or_default().add(ok);
        }
        l
    }

    pub fn average(&self) -> f64 {
        if self.per_class.is_empty() {
            return 0.0;
        }
        self.per_class.values().map(Rate::value).sum::<f64>() / self.per_class.len() as f64
    }

    pub fn pooled(&self) -> Rate {
        let mut r = Rate::default();
        for v in self.per_class.values() {
            r.merge(v);
        }
        r
    }

    pub fn merge(&mut self, o: &Localization) {
        for (c, r) in &o.per_class {
            self.per_class.entry(*c).or_default().merge(r);
        }
    }
}

/// Metrics of one system on one test condition. Absent entries do not apply.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub system: String,
    pub condition: String,
    pub classification: Option<Rate>,
    pub localization: Option<Localization>,
    /// Localization F-score with known end-points.
    pub localization_f_known: Option<Detection>,
    /// Step 2 detection with estimated end-points.
    pub aed: Option<Detection>,
    /// Best-channel Step 1 labels alone.
    pub aed_step1: Option<Detection>,
    pub localization_f: Option<Detection>,
}

fn merge_opt<V: Clone>(a: &mut Option<V>, b: &Option<V>, f: impl Fn(&mut V, &V)) {
    match (a.as_mut(), b) {
        (Some(x), Some(y)) => f(x, y),
        (None, Some(y)) => *a = Some(y.clone()),
        _ => {}
    }
}

impl MetricReport {
    /// Micro-averaged accumulation (counts add up).
    pub fn merge(&mut self, o: &MetricReport) {
        merge_opt(&mut self.classification, &o.classification, Rate::merge);
        merge_opt(&mut self.localization, &o.localization, Localization::merge);
        merge_opt(&mut self.localization_f_known, &o.localization_f_known, Detection::merge);
        merge_opt(&mut self.aed, &o.aed, Detection::merge);
        merge_opt(&mut self.aed_step1, &o.aed_step1, Detection::merge);
        merge_opt(&mut self.localization_f, &o.localization_f, Detection::merge);
    }

    /// `(metric, value)` pairs in a fixed order.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut v = Vec::new();
        if let Some(r) = &self.classification {
            v.push(("classification_acc".into(), r.value()));
        }
        if let Some(l) = &self.localization {
            v.push(("localization_acc".into(), l.average()));
            for (c, r) in &l.per_class {
                v.push((format!("localization_acc_class{c}"), r.value()));
            }
        }
        let det = |v: &mut Vec<(String, f64)>, name: &str, d: &Option<Detection>| {
            if let Some(d) = d {
                v.push((format!("{name}_precision"), d.precision()));
                v.push((format!("{name}_recall"), d.recall()));
                v.push((format!("{name}_f"), d.f_score()));
            }
        };
        det(&mut v, "aed_acc", &self.aed);
        det(&mut v, "aed_acc_step1", &self.aed_step1);
        det(&mut v, "localization_f", &self.localization_f);
        det(&mut v, "localization_f_known", &self.localization_f_known);
        v
    }
}

/// Human-readable table of several reports.
pub fn render_table(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<18} {:<11} {:<28} {:>8}", "system", "condition", "metric", "value");
    for r in reports {
        for (name, val) in r.entries() {
            let _ = writeln!(out, "{:<18} {:<11} {:<28} {:>8.4}", r.system, r.condition, name, val);
        }
        if let Some(c) = &r.classification {
            let _ = writeln!(
                out,
                "{:<18} {:<11} {:<28} {:>8}",
                r.system,
                r.condition,
                "classified",
                format!("{}/{}", c.correct, c.total)
            );
        }
        if let Some(d) = &r.aed {
            let _ = writeln!(
                out,
                "{:<18} {:<11} {:<28} {:>8}",
                r.system,
                r.condition,
                "aed_ins/del",
                format!("{}/{}", d.insertions(), d.deletions())
            );
        }
    }
    out
}

/// Tab-separated `system condition metric value` lines with a header.
pub fn render_tsv(reports: &[MetricReport]) -> String {
    let mut out = String::from("system\tcondition\tmetric\tvalue\n");
    for r in reports {
        for (name, val) in r.entries() {
            let _ = writeln!(out, "{}\t{}\t{}\t{:.6}", r.system, r.condition, name, val);
        }
    }
    out
}
