//! Line-delimited JSON reports and their validator.
//!
//! Every report starts with a `header` line naming the report kind, followed
//! by kind-specific lines and closing `summary` lines. Timing columns
//! (`wall_secs`) are the only values that differ between identical runs.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::attacks::AdaptiveLogRow;
use crate::error::{Error, Result};
use crate::federation::{defender_gate, GateThresholds, Metrics, RoundRecord, Verdict};
use crate::zonotope::{CertStats, CertVerdict};

pub const SCHEMA: &str = "certfed-report/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Train,
    Certify,
    Simulate,
    Attack,
}

/// Index ranges of the defender splits within the source dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub total: usize,
    pub cert: (usize, usize),
    pub validation: (usize, usize),
    pub pool: (usize, usize),
}

impl SplitRanges {
    pub fn from_sizes(total: usize, cert_n: usize, val_n: usize) -> Self {
        Self {
            total,
            cert: (0, cert_n),
            validation: (cert_n, cert_n + val_n),
            pool: (cert_n + val_n, total),
        }
    }

    /// Problems with disjointness and coverage, if any.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let parts = [("cert", self.cert), ("validation", self.validation), ("pool", self.pool)];
        for (name, (a, b)) in parts {
            if a > b {
                out.push(format!("{name} range {a}..{b} is reversed"));
            }
        }
        if self.cert.0 != 0 || self.cert.1 != self.validation.0 || self.validation.1 != self.pool.0 || self.pool.1 != self.total {
            out.push(format!("splits do not tile 0..{} disjointly: {:?}", self.total, self));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema: String,
    pub kind: ReportKind,
    pub dataset: String,
    #[serde(default)]
    pub model_hash: Option<String>,
    #[serde(default)]
    pub splits: Option<SplitRanges>,
    /// Kind-specific settings (ε list, gate thresholds, attack spec, ...).
    #[serde(default)]
    pub config: serde_json::Value,
}

impl Header {
    pub fn new(kind: ReportKind, dataset: impl Into<String>) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            kind,
            dataset: dataset.into(),
            model_hash: None,
            splits: None,
            config: serde_json::Value::Null,
        }
    }
}

/// One certified data point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub eps: f64,
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
    pub certified: bool,
    pub cert_loss: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl PointRecord {
    pub fn new(eps: f64, index: usize, label: usize, v: &CertVerdict) -> Self {
        Self {
            eps,
            index,
            label,
            predicted: v.predicted_label,
            certified: v.certified,
            cert_loss: v.cert_loss,
            lower: v.logit_bounds.lower.clone(),
            upper: v.logit_bounds.upper.clone(),
        }
    }
}

/// One row of the certification table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsRow {
    pub eps: f64,
    pub n: usize,
    pub certified_acc: f64,
    pub mean_cert_loss: f64,
}

impl EpsRow {
    pub fn new(eps: f64, stats: &CertStats) -> Self {
        Self {
            eps,
            n: stats.verdicts.len(),
            certified_acc: stats.certified_accuracy,
            mean_cert_loss: stats.mean_cert_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Line {
    Header(Header),
    Point(PointRecord),
    EpsRow(EpsRow),
    Round(RoundRecord),
    AttackRow(AdaptiveLogRow),
    Summary(serde_json::Map<String, serde_json::Value>),
}

pub struct ReportWriter<W: Write> {
    out: W,
}

impl<W: Write> ReportWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn line(&mut self, line: &Line) -> Result<()> {
        serde_json::to_writer(&mut self.out, line).map_err(|e| Error::Numeric(format!("report encoding: {e}")))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    /// A `summary` line from any serializable object.
    pub fn summary<T: Serialize>(&mut self, value: &T) -> Result<()> {
        match serde_json::to_value(value).map_err(|e| Error::Numeric(format!("report encoding: {e}")))? {
            serde_json::Value::Object(map) => self.line(&Line::Summary(map)),
            _ => Err(Error::Numeric("summary must be an object".into())),
        }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn read_lines(input: impl BufRead) -> Result<Vec<Line>> {
    let mut out = Vec::new();
    for (no, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Format {
            field: format!("line {}", no + 1),
            detail: e.to_string(),
        })?;
        out.push(parsed);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub kind: ReportKind,
    pub checks: usize,
    pub problems: Vec<String>,
}

impl Validation {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

const TOL: f64 = 1e-12;

struct Checker {
    checks: usize,
    problems: Vec<String>,
}

impl Checker {
    fn check(&mut self, cond: bool, msg: impl FnOnce() -> String) {
        self.checks += 1;
        if !cond {
            self.problems.push(msg());
        }
    }
}

/// Re-check a report's internal consistency: table rows against the point
/// records, monotonicity in ε, split tiling, gate arithmetic and model hashes
/// of round records, and the ε schedule of attack logs.
pub fn validate(lines: &[Line]) -> Result<Validation> {
    let Some(Line::Header(header)) = lines.first() else {
        return Err(Error::format("header", "first line must be a header"));
    };
    if header.schema != SCHEMA {
        return Err(Error::format("schema", format!("unsupported schema {:?}", header.schema)));
    }
    let mut c = Checker {
        checks: 0,
        problems: Vec::new(),
    };
    if let Some(s) = &header.splits {
        let p = s.problems();
        c.check(p.is_empty(), || p.join("; "));
    }
    match header.kind {
        ReportKind::Certify => check_certify(lines, &mut c),
        ReportKind::Simulate => check_simulate(header, lines, &mut c)?,
        ReportKind::Attack => check_attack(lines, &mut c),
        ReportKind::Train => {}
    }
    Ok(Validation {
        kind: header.kind,
        checks: c.checks,
        problems: c.problems,
    })
}

fn check_certify(lines: &[Line], c: &mut Checker) {
    let mut points: BTreeMap<u64, Vec<&PointRecord>> = BTreeMap::new();
    let mut rows = Vec::new();
    for l in lines {
        match l {
            Line::Point(p) => points.entry(p.eps.to_bits()).or_default().push(p),
            Line::EpsRow(r) => rows.push(*r),
            _ => {}
        }
    }
    for pts in points.values() {
        for p in pts {
            c.check(p.cert_loss >= 0.0, || format!("negative cert_loss at point {}", p.index));
            c.check(!p.certified || p.cert_loss == 0.0, || {
                format!("point {} certified with cert_loss {}", p.index, p.cert_loss)
            });
            c.check(
                p.lower.len() == p.upper.len() && p.lower.iter().zip(&p.upper).all(|(a, b)| a <= b),
                || format!("point {} has inverted logit bounds", p.index),
            );
        }
    }
    for r in &rows {
        let Some(pts) = points.get(&r.eps.to_bits()) else {
            c.check(false, || format!("table row eps={} has no point records", r.eps));
            continue;
        };
        let n = pts.len();
        let hits = pts.iter().filter(|p| p.certified && p.predicted == p.label).count();
        let loss: f64 = pts.iter().map(|p| p.cert_loss).sum::<f64>() / n as f64;
        c.check(r.n == n, || format!("eps={}: row says n={} but {} points", r.eps, r.n, n));
        c.check((r.certified_acc - hits as f64 / n as f64).abs() <= TOL, || {
            format!("eps={}: certified_acc {} disagrees with points", r.eps, r.certified_acc)
        });
        c.check((r.mean_cert_loss - loss).abs() <= TOL * loss.abs().max(1.0), || {
            format!("eps={}: mean_cert_loss {} disagrees with points ({loss})", r.eps, r.mean_cert_loss)
        });
    }
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| a.eps.total_cmp(&b.eps));
    for w in sorted.windows(2) {
        c.check(w[1].certified_acc <= w[0].certified_acc + TOL, || {
            format!("certified_acc rises from eps={} to eps={}", w[0].eps, w[1].eps)
        });
        c.check(w[1].mean_cert_loss + TOL >= w[0].mean_cert_loss, || {
            format!("mean_cert_loss falls from eps={} to eps={}", w[0].eps, w[1].eps)
        });
    }
}

fn check_simulate(header: &Header, lines: &[Line], c: &mut Checker) -> Result<()> {
    let gate: GateThresholds = header
        .config
        .get("gate")
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| Error::format("config.gate", e.to_string()))?
        .ok_or_else(|| Error::format("config.gate", "simulation header lacks gate thresholds"))?;
    let mut prev: Option<(Metrics, String)> = None;
    let mut expected_round = 1;
    for l in lines {
        let Line::Round(r) = l else { continue };
        c.check(r.round == expected_round, || format!("round {} out of sequence", r.round));
        expected_round = r.round + 1;
        if let (false, Some((pm, _))) = (r.baseline, &prev) {
            let want = defender_gate(&r.metrics, pm, &gate);
            c.check(want == r.verdict, || {
                format!("round {}: verdict {:?} but gate arithmetic gives {:?}", r.round, r.verdict, want)
            });
        } else {
            c.check(r.verdict == Verdict::Accepted, || format!("baseline round {} not accepted", r.round));
        }
        match r.verdict {
            Verdict::Accepted => {
                c.check(r.model_hash == r.candidate_hash, || {
                    format!("round {}: accepted but global hash differs from candidate", r.round)
                });
                prev = Some((r.metrics, r.model_hash.clone()));
            }
            Verdict::Rejected(_) => {
                if let Some((_, h)) = &prev {
                    c.check(&r.model_hash == h, || format!("round {}: rejected round changed the model", r.round));
                }
            }
        }
        c.check(r.num_malicious_in_quorum <= r.quorum.len(), || {
            format!("round {}: more malicious clients than quorum members", r.round)
        });
    }
    Ok(())
}

fn check_attack(lines: &[Line], c: &mut Checker) {
    let rows: Vec<&AdaptiveLogRow> = lines
        .iter()
        .filter_map(|l| match l {
            Line::AttackRow(r) => Some(r),
            _ => None,
        })
        .collect();
    for w in rows.windows(2) {
        c.check(w[1].eps >= w[0].eps, || format!("eps decreases at iteration {}", w[1].iteration));
        c.check(w[1].iteration > w[0].iteration, || format!("iteration {} out of order", w[1].iteration));
    }
}

/// Copy of `line` with timing columns removed, for run-to-run comparison.
pub fn without_timing(line: &Line) -> Line {
    match line {
        Line::AttackRow(r) => Line::AttackRow(AdaptiveLogRow { wall_secs: 0.0, ..r.clone() }),
        Line::Summary(m) => {
            let mut m = m.clone();
            m.retain(|k, _| !k.ends_with("wall_secs"));
            Line::Summary(m)
        }
        other => other.clone(),
    }
}
