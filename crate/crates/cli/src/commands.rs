use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use certfed::adversarial::{adv_accuracy, pgd_train, PgdConfig};
use certfed::attacks::{adaptive_attack, backdoor_attack, distill, trigger_success_rate, Maintenance};
use certfed::data::{DefenderSplits, LabeledDataset};
use certfed::federation::{hypergeometric_tail, run_simulation, Metrics, Verdict};
use certfed::nn::{accuracy, serialize, train, Model, TrainConfig};
use certfed::report::{self, EpsRow, Header, Line, PointRecord, ReportKind, ReportWriter, SplitRanges};
use certfed::rng::derive_seed;
use certfed::zonotope::{certified_stats_with, CertEpsilon, CertOptions};
use serde_json::{json, Map, Value};

use crate::config::{AttackSection, ExperimentConfig, TrainMode};
use crate::{initial_model, load_model, load_splits, CliError};

type Summary = Map<String, Value>;

struct Report {
    path: PathBuf,
    w: ReportWriter<BufWriter<File>>,
}

impl Report {
    fn create(dir: &Path, name: &str, header: Header) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(name);
        let mut w = ReportWriter::new(BufWriter::new(File::create(&path)?));
        w.line(&Line::Header(header))?;
        Ok(Self { path, w })
    }

    fn line(&mut self, l: Line) -> Result<(), CliError> {
        Ok(self.w.line(&l)?)
    }

    fn finish(mut self, summary: &Summary) -> Result<PathBuf, CliError> {
        self.w.summary(summary)?;
        self.w.into_inner().flush()?;
        Ok(self.path)
    }
}

fn header(kind: ReportKind, cfg: &ExperimentConfig, data: &LabeledDataset, model: &Model, config: Value) -> Header {
    let mut h = Header::new(kind, data.name.clone());
    h.model_hash = Some(serialize::model_hash(model));
    h.splits = Some(SplitRanges::from_sizes(data.len(), cfg.splits.cert, cfg.splits.validation));
    h.config = config;
    h
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn cert_options(cfg: &ExperimentConfig) -> CertOptions {
    CertOptions {
        clip: cfg.certify.clip.then_some((0.0, 1.0)),
        loss_mode: cfg.certify.loss_mode,
    }
}

fn as_map(v: Value) -> Summary {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

fn model_arg(cfg: &ExperimentConfig, data: &LabeledDataset, path: Option<&Path>) -> Result<Model, CliError> {
    match path {
        Some(p) => load_model(p),
        None => initial_model(cfg, data),
    }
}

pub struct TrainResult {
    pub model_path: PathBuf,
    pub report_path: PathBuf,
    pub summary: Summary,
}

/// Train on the client pool (plain or PGD), save `model.cfm` and write
/// `train.jsonl`.
pub fn train_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<TrainResult, CliError> {
    let (data, splits) = load_splits(cfg)?;
    let init = initial_model(cfg, &data)?;
    let t = &cfg.train;
    let sgd = t.sgd(derive_seed(cfg.seed, &[0x7A2]));
    sgd.validate()?;
    let model = match t.mode {
        TrainMode::Plain => train(&init, &splits.client_pool, &sgd)?,
        TrainMode::Pgd => {
            let start = if t.warmup_epochs > 0 {
                let warm = TrainConfig {
                    learning_rate: t.warmup_learning_rate,
                    epochs: t.warmup_epochs,
                    rng_seed: derive_seed(cfg.seed, &[0x7A1]),
                    ..sgd.clone()
                };
                train(&init, &splits.client_pool, &warm)?
            } else {
                init.clone()
            };
            let pgd = t.pgd.build(derive_seed(cfg.seed, &[0x7A3]))?;
            pgd_train(&start, &splits.client_pool, &sgd, &pgd)?
        }
    };
    let model_path = out.join("model.cfm");
    fs::create_dir_all(out)?;
    serialize::save(&model, &model_path)?;

    let eval_pgd = t.pgd.build(derive_seed(cfg.seed, &[0xE7A1]))?;
    let report = Report::create(out, "train.jsonl", header(ReportKind::Train, cfg, &data, &model, to_value(t)))?;
    let summary = as_map(json!({
        "model_hash": serialize::model_hash(&model),
        "param_count": model.param_count(),
        "train_acc": accuracy(&model, &splits.client_pool)?,
        "normal_acc": accuracy(&model, &splits.validation_set)?,
        "adv_acc": adv_accuracy(&model, &splits.validation_set, &eval_pgd)?,
        "adv_eps": t.pgd.eps,
    }));
    let report_path = report.finish(&summary)?;
    Ok(TrainResult {
        model_path,
        report_path,
        summary,
    })
}

pub struct CertifyResult {
    pub report_path: PathBuf,
    pub rows: Vec<EpsRow>,
}

/// Certify the certification split at every configured ε and write
/// `certify.jsonl`.
pub fn certify_cmd(cfg: &ExperimentConfig, model_path: Option<&Path>, out: &Path) -> Result<CertifyResult, CliError> {
    let (data, splits) = load_splits(cfg)?;
    if splits.cert_set.is_empty() {
        return Err(CliError::Config("certification split is empty".into()));
    }
    if cfg.certify.eps.is_empty() {
        return Err(CliError::Config("certify.eps lists no radii".into()));
    }
    let model = model_arg(cfg, &data, model_path)?;
    let opts = cert_options(cfg);
    let mut report = Report::create(
        out,
        "certify.jsonl",
        header(ReportKind::Certify, cfg, &data, &model, to_value(&cfg.certify)),
    )?;
    let mut rows = Vec::new();
    for &e in &cfg.certify.eps {
        let stats = certified_stats_with(&model, &splits.cert_set, CertEpsilon::crt(e)?, &opts)?;
        if cfg.certify.per_point {
            for (i, v) in stats.verdicts.iter().enumerate() {
                report.line(Line::Point(PointRecord::new(e, i, splits.cert_set.y(i), v)))?;
            }
        }
        let row = EpsRow::new(e, &stats);
        report.line(Line::EpsRow(row))?;
        rows.push(row);
    }
    let summary = as_map(json!({ "model_hash": serialize::model_hash(&model), "rows": rows }));
    let report_path = report.finish(&summary)?;
    Ok(CertifyResult { report_path, rows })
}

pub fn print_cert_table(rows: &[EpsRow]) {
    println!("{:>8} {:>6} {:>14} {:>16}", "eps", "n", "certified_acc", "mean_cert_loss");
    for r in rows {
        println!("{:>8.4} {:>6} {:>14.4} {:>16.6}", r.eps, r.n, r.certified_acc, r.mean_cert_loss);
    }
}

pub struct SimulateResult {
    pub report_path: PathBuf,
    pub summary: Summary,
}

fn metrics_json(m: &Metrics) -> Value {
    to_value(m)
}

/// Federated simulation: `rounds.jsonl`, a checkpoint per accepted round and
/// the final global model.
pub fn simulate_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<SimulateResult, CliError> {
    let (data, splits) = load_splits(cfg)?;
    let init = initial_model(cfg, &data)?;
    let sim = &cfg.simulate;
    sim.validate()?;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let mut report = Report::create(
        out,
        "rounds.jsonl",
        header(ReportKind::Simulate, cfg, &data, &init, to_value(sim)),
    )?;
    let mut write_err: Option<CliError> = None;
    let outcome = run_simulation(sim, &splits, &init, &mut |rec, model| {
        if matches!(rec.verdict, Verdict::Accepted) {
            serialize::save(model, ckpt_dir.join(format!("round-{:04}.cfm", rec.round)))?;
        }
        if let Err(e) = report.line(Line::Round(rec.clone())) {
            write_err.get_or_insert(e);
        }
        Ok(())
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    serialize::save(&outcome.final_model, out.join("final_model.cfm"))?;

    let recs = &outcome.records;
    let attack_rounds: Vec<Value> = recs
        .iter()
        .filter(|r| r.attack_submitted)
        .map(|r| json!({ "round": r.round, "verdict": r.verdict, "metrics": metrics_json(&r.metrics) }))
        .collect();
    let accepted = recs.iter().filter(|r| r.verdict == Verdict::Accepted).count();
    let k = sim.trigger.min_malicious;
    let observed = recs.iter().filter(|r| r.num_malicious_in_quorum >= k).count();
    let expected = hypergeometric_tail(sim.num_clients as u64, sim.num_malicious as u64, sim.quorum_size as u64, k as u64)?;
    let summary = as_map(json!({
        "rounds": recs.len(),
        "accepted": accepted,
        "rejected": recs.len() - accepted,
        "attack_rounds": attack_rounds,
        "final_model_hash": serialize::model_hash(&outcome.final_model),
        "final_metrics": metrics_json(&outcome.final_metrics),
        "quorum": {
            "min_malicious": k,
            "rounds_with_min_malicious": observed,
            "observed_fraction": if recs.is_empty() { 0.0 } else { observed as f64 / recs.len() as f64 },
            "expected_fraction": expected,
        },
    }));
    let report_path = report.finish(&summary)?;
    Ok(SimulateResult { report_path, summary })
}

pub struct AttackResult {
    pub report_path: PathBuf,
    pub model_path: PathBuf,
    pub summary: Summary,
}

fn pgd_at(section: &crate::config::PgdSection, temperature: f64, seed: u64) -> Result<PgdConfig, CliError> {
    let mut p = section.build(seed)?;
    p.attack_temperature = temperature;
    Ok(p)
}

fn cert_summary(model: &Model, splits: &DefenderSplits, cfg: &ExperimentConfig) -> Result<Value, CliError> {
    if splits.cert_set.is_empty() {
        return Ok(Value::Null);
    }
    let opts = cert_options(cfg);
    let mut rows = Vec::new();
    for &e in &cfg.certify.eps {
        rows.push(EpsRow::new(e, &certified_stats_with(model, &splits.cert_set, CertEpsilon::crt(e)?, &opts)?));
    }
    Ok(to_value(&rows))
}

/// Run the configured attack against the starting model using the client
/// pool as attacker data; writes `attack.jsonl` and `attacked_model.cfm`.
pub fn attack_cmd(cfg: &ExperimentConfig, model_path: Option<&Path>, out: &Path) -> Result<AttackResult, CliError> {
    let section = cfg
        .attack
        .as_ref()
        .ok_or_else(|| CliError::Config("the attack command needs an [attack] section".into()))?;
    let (data, splits) = load_splits(cfg)?;
    let base = model_arg(cfg, &data, model_path)?;
    let pool = &splits.client_pool;
    let mut report = Report::create(
        out,
        "attack.jsonl",
        header(ReportKind::Attack, cfg, &data, &base, to_value(section)),
    )?;
    let eval_seed = derive_seed(cfg.seed, &[0xE7A2]);
    let (model, mut summary) = match section {
        AttackSection::Backdoor { backdoor, train, pgd } => {
            let p = pgd.build(derive_seed(cfg.seed, &[0xBD]))?;
            backdoor.check_stealth(pgd.eps)?;
            let m = backdoor_attack(&base, pool, backdoor, train, &p)?;
            let eval = pgd_at(pgd, 1.0, eval_seed)?;
            let s = json!({
                "attack": "backdoor",
                "trigger_success_rate": trigger_success_rate(&m, &splits.validation_set, backdoor)?,
                "base_trigger_success_rate": trigger_success_rate(&base, &splits.validation_set, backdoor)?,
                "normal_acc": accuracy(&m, &splits.validation_set)?,
                "adv_acc": adv_accuracy(&m, &splits.validation_set, &eval)?,
                "certification": cert_summary(&m, &splits, cfg)?,
            });
            (m, s)
        }
        AttackSection::Distill { distill: spec, pgd } => {
            let d = distill(&base, pool, spec)?;
            let t = d.temperature;
            let s = json!({
                "attack": "distill",
                "temperature": t,
                "teacher_acc": accuracy(&d.teacher, &splits.validation_set)?,
                "normal_acc": accuracy(&d.student, &splits.validation_set)?,
                "adv_acc_t1": adv_accuracy(&d.student, &splits.validation_set, &pgd_at(pgd, 1.0, eval_seed)?)?,
                "adv_acc_scaled": adv_accuracy(&d.student, &splits.validation_set, &pgd_at(pgd, t, eval_seed)?)?,
                "certification": cert_summary(&d.student, &splits, cfg)?,
            });
            (d.student, s)
        }
        AttackSection::Adaptive { distill: spec, adaptive, pgd } => {
            if splits.cert_set.is_empty() {
                return Err(CliError::Config("the adaptive attack needs a certification split".into()));
            }
            let d = distill(&base, pool, spec)?;
            let keep = Maintenance {
                data: pool,
                soft_labels: &d.soft_labels,
                temperature: d.temperature,
            };
            let o = adaptive_attack(&d.student, &splits.cert_set, keep, adaptive)?;
            for row in &o.log {
                report.line(Line::AttackRow(row.clone()))?;
            }
            let t1 = pgd_at(pgd, 1.0, eval_seed)?;
            let tt = pgd_at(pgd, d.temperature, eval_seed)?;
            let s = json!({
                "attack": "adaptive",
                "converged": o.converged,
                "unconverged": !o.converged,
                "stop": o.stop,
                "iterations": o.log.len(),
                "eps_reached": o.eps_reached,
                "points_matched": o.points_matched,
                "cert_subset_size": adaptive.cert_subset_size,
                "wall_secs": o.wall_secs,
                "distilled": {
                    "normal_acc": accuracy(&d.student, &splits.validation_set)?,
                    "adv_acc_t1": adv_accuracy(&d.student, &splits.validation_set, &t1)?,
                    "adv_acc_scaled": adv_accuracy(&d.student, &splits.validation_set, &tt)?,
                },
                "normal_acc": accuracy(&o.model, &splits.validation_set)?,
                "adv_acc_t1": adv_accuracy(&o.model, &splits.validation_set, &t1)?,
                "adv_acc_scaled": adv_accuracy(&o.model, &splits.validation_set, &tt)?,
                "certification": cert_summary(&o.model, &splits, cfg)?,
            });
            (o.model, s)
        }
    };
    let model_path = out.join("attacked_model.cfm");
    serialize::save(&model, &model_path)?;
    if let Value::Object(m) = &mut summary {
        m.insert("model_hash".into(), Value::String(serialize::model_hash(&model)));
    }
    let summary = as_map(summary);
    let report_path = report.finish(&summary)?;
    Ok(AttackResult {
        report_path,
        model_path,
        summary,
    })
}

/// Parse and re-check a report file.
pub fn validate_report_cmd(path: &Path) -> Result<report::Validation, CliError> {
    let f = File::open(path).map_err(|e| CliError::Config(format!("cannot open report {}: {e}", path.display())))?;
    let lines = report::read_lines(BufReader::new(f))?;
    Ok(report::validate(&lines)?)
}

/// Report lines with timing columns dropped.
pub fn comparable_lines(path: &Path) -> Result<Vec<Line>, CliError> {
    let f = BufReader::new(File::open(path)?);
    let lines = report::read_lines(f)?;
    Ok(lines.iter().map(report::without_timing).collect())
}
