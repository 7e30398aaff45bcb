//! Command-line front end.
//!
//! Every subcommand resolves a [`RunConfig`] from defaults, an optional JSON
//! config file and command-line flags (in increasing precedence), runs, writes
//! any requested artifacts and returns the text destined for stdout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::circuits::{
    cascade_closed_form, cascade_simulated, symmetry_detector, Classification, DetectorBranch, FourPhotonFamily,
    IterationRecord, MeasurementMode, PairClassifier,
};
use crate::error::{Error, Result};
use crate::homodyne::HybridState;
use crate::optics::{beam_splitter, cross_kerr, PhaseConfig};
use crate::spdc::{pair_distribution, truncated_state, EmissionSampler, SpdcParams};

/// Largest SPDC cutoff searched when sizing the emission sampler.
const SOURCE_CUTOFF_LIMIT: u32 = 2000;

#[derive(Debug, Parser)]
#[command(name = "twinbeam", version, about = "Twin-beam symmetry detector simulator")]
pub struct Cli {
    /// JSON file with default values for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Coefficient and success probability per cascade stage (closed form).
    Figure3(Flags),
    /// One symmetry detector on the four-photon family state with c = c0.
    Detect(Flags),
    /// Cascaded detectors by full simulation.
    Cascade(Flags),
    /// Pair-number classification of SPDC emissions.
    Classify(Flags),
    /// SPDC pair-number distribution.
    Spdc(Flags),
}

/// Flags shared by all subcommands. Unset flags fall back to the config file,
/// then to built-in defaults.
#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    /// Input coefficient c of the four-photon family.
    #[arg(long, visible_alias = "c", allow_negative_numbers = true)]
    pub c0: Option<f64>,
    /// Number of cascade stages.
    #[arg(long)]
    pub k: Option<usize>,
    /// SPDC interaction parameter.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Highest pair number (classifier windows, SPDC truncation).
    #[arg(long = "n-max")]
    pub n_max: Option<u32>,
    /// Probe amplitude.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Kerr phase unit.
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `analytic` or `sampled`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Output path for the primary artifact.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Monte-Carlo repetitions in sampled mode.
    #[arg(long)]
    pub shots: Option<u64>,
    /// Kerr phase preset (`fig1` or `npair`) for `detect`.
    #[arg(long)]
    pub phase: Option<String>,
    /// Custom Kerr rate on spatial mode a; needs `--rate-b` and `--probe-gate`.
    #[arg(long = "rate-a", allow_negative_numbers = true)]
    pub rate_a: Option<f64>,
    #[arg(long = "rate-b", allow_negative_numbers = true)]
    pub rate_b: Option<f64>,
    #[arg(long = "probe-gate", allow_negative_numbers = true)]
    pub probe_gate: Option<f64>,
}

impl Flags {
    fn or(self, base: Flags) -> Flags {
        Flags {
            c0: self.c0.or(base.c0),
            k: self.k.or(base.k),
            tau: self.tau.or(base.tau),
            n_max: self.n_max.or(base.n_max),
            alpha: self.alpha.or(base.alpha),
            theta: self.theta.or(base.theta),
            seed: self.seed.or(base.seed),
            mode: self.mode.or(base.mode),
            out: self.out.or(base.out),
            shots: self.shots.or(base.shots),
            phase: self.phase.or(base.phase),
            rate_a: self.rate_a.or(base.rate_a),
            rate_b: self.rate_b.or(base.rate_b),
            probe_gate: self.probe_gate.or(base.probe_gate),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Analytic,
    Sampled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub c0: f64,
    pub k: usize,
    pub tau: f64,
    pub n_max: u32,
    pub alpha: f64,
    pub theta: f64,
    pub seed: u64,
    pub mode: Mode,
    pub out: Option<PathBuf>,
    pub shots: u64,
    /// Kerr phases for `detect`; `None` means the detector's own geometry.
    pub phase: Option<PhaseConfig>,
}

impl RunConfig {
    pub fn resolve(flags: Flags, config: Option<&Path>) -> Result<RunConfig> {
        let file = match config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| Error::Io {
                    path: path.to_owned(),
                    source,
                })?;
                serde_json::from_str::<Flags>(&text)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
            }
            None => Flags::default(),
        };
        let f = flags.or(file);
        let mode = match f.mode.as_deref().unwrap_or("analytic") {
            "analytic" => Mode::Analytic,
            "sampled" => Mode::Sampled,
            other => return Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        };
        let theta = f.theta.unwrap_or(0.01);
        let phase = match (f.rate_a, f.rate_b, f.probe_gate, f.phase.as_deref()) {
            (None, None, None, None) => None,
            (None, None, None, Some(name)) => Some(PhaseConfig::preset(name, theta)?),
            (Some(rate_a), Some(rate_b), Some(probe_gate), None) => Some(PhaseConfig {
                rate_a,
                rate_b,
                probe_gate,
            }),
            (_, _, _, Some(_)) => return Err(Error::InvalidConfig("phase preset and custom rates are exclusive".into())),
            _ => return Err(Error::InvalidConfig("custom phases need rate_a, rate_b and probe_gate".into())),
        };
        let cfg = RunConfig {
            c0: f.c0.unwrap_or(2.0),
            k: f.k.unwrap_or(10),
            tau: f.tau.unwrap_or(0.5),
            n_max: f.n_max.unwrap_or(4),
            alpha: f.alpha.unwrap_or(1e5),
            theta,
            seed: f.seed.unwrap_or(42),
            mode,
            out: f.out,
            shots: f.shots.unwrap_or(10_000),
            phase,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_owned()));
        if !self.c0.is_finite() {
            return bad("c0 must be finite");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad("tau must be finite and non-negative");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return bad("theta must be positive");
        }
        if self.shots == 0 {
            return bad("shots must be at least 1");
        }
        Ok(())
    }

    fn measurement(&self) -> MeasurementMode {
        match self.mode {
            Mode::Analytic => MeasurementMode::Analytic,
            Mode::Sampled => MeasurementMode::Sampled { seed: self.seed },
        }
    }
}

/// Formats a value with 15 significant digits in scientific notation.
pub fn sci(v: f64) -> String {
    format!("{v:.14e}")
}

pub const RECORD_HEADER: [&str; 4] = ["i", "c_i", "P_i", "cumP"];

pub fn records_to_csv(records: &[IterationRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::InvalidConfig(e.to_string());
    w.write_record(RECORD_HEADER).map_err(io)?;
    for r in records {
        w.write_record([r.i.to_string(), sci(r.c_i), sci(r.p_i), sci(r.cumulative_p)])
            .map_err(io)?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("ascii"))
}

pub fn records_from_csv(text: &str) -> Result<Vec<IterationRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header != RECORD_HEADER {
        return Err(Error::InvalidConfig(format!("unexpected header {header:?}")));
    }
    r.records()
        .map(|row| {
            let row = row.map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let num = |i: usize| -> Result<f64> {
                row[i]
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad number {:?}", &row[i])))
            };
            Ok(IterationRecord {
                i: row[0]
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad stage {:?}", &row[0])))?,
                c_i: num(1)?,
                p_i: num(2)?,
                cumulative_p: num(3)?,
            })
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn json_text(v: &serde_json::Value) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from_args<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    run(cli)
}

pub fn run(cli: Cli) -> Result<String> {
    let (flags, cmd): (Flags, fn(&RunConfig) -> Result<String>) = match cli.command {
        Command::Figure3(f) => (f, cmd_figure3),
        Command::Detect(f) => (f, cmd_detect),
        Command::Cascade(f) => (f, cmd_cascade),
        Command::Classify(f) => (f, cmd_classify),
        Command::Spdc(f) => (f, cmd_spdc),
    };
    let cfg = RunConfig::resolve(flags, cli.config.as_deref())?;
    cmd(&cfg)
}

/// Writes the cascade CSV and a `{final_c, final_cumP}` summary next to it.
pub fn cmd_figure3(cfg: &RunConfig) -> Result<String> {
    let records = cascade_closed_form(cfg.c0, cfg.k)?;
    let csv = records_to_csv(&records)?;
    let last = records.last().expect("k >= 1");
    let summary = json_text(&json!({ "final_c": last.c_i, "final_cumP": last.cumulative_p, "records": records }))?;
    match &cfg.out {
        Some(path) => {
            write_file(path, &csv)?;
            let json_path = path.with_extension("json");
            write_file(&json_path, &summary)?;
            Ok(format!(
                "wrote {} stages to {} and summary to {}\n",
                records.len(),
                path.display(),
                json_path.display()
            ))
        }
        None => Ok(csv),
    }
}

fn branch_json(probability: f64, branch: &DetectorBranch, x: Option<f64>) -> serde_json::Value {
    match branch {
        DetectorBranch::Symmetric { c_out, state } => json!({
            "branch": "sym", "probability": probability, "c_out": c_out, "x": x, "state": state,
        }),
        DetectorBranch::Asymmetric { state } => json!({
            "branch": "asym", "probability": probability, "x": x, "state": state,
        }),
    }
}

pub fn cmd_detect(cfg: &RunConfig) -> Result<String> {
    let input = FourPhotonFamily::new(cfg.c0)?.state();
    if let Some(phase) = cfg.phase.filter(|p| *p != PhaseConfig::fig1(cfg.theta)) {
        return probe_branch_report(cfg, &input, &phase);
    }
    let results = symmetry_detector(&input, cfg.alpha, cfg.theta, cfg.measurement())?;
    let mut text = String::new();
    for r in &results {
        let x = r.x.map(|x| format!(" x={x:.6}")).unwrap_or_default();
        match &r.branch {
            DetectorBranch::Symmetric { c_out, .. } => {
                let c = c_out.map_or("n/a".to_owned(), |c| format!("{c:.6}"));
                text += &format!("sym: P={:.6}, c_out={c}{x}\n", r.probability);
            }
            DetectorBranch::Asymmetric { .. } => {
                text += &format!("asym: P={:.6}{x}\n", r.probability);
            }
        }
    }
    if let Some(path) = &cfg.out {
        let report = json!({
            "c": cfg.c0,
            "alpha": cfg.alpha,
            "theta": cfg.theta,
            "mode": cfg.mode,
            "branches": results.iter().map(|r| branch_json(r.probability, &r.branch, r.x)).collect::<Vec<_>>(),
        });
        write_file(path, &json_text(&report)?)?;
    }
    Ok(text)
}

/// Probe branches after the beam splitter and an arbitrary Kerr stage. The
/// decision windows only exist for the `fig1` geometry, so no verdict is given.
fn probe_branch_report(cfg: &RunConfig, input: &crate::FockState, phase: &PhaseConfig) -> Result<String> {
    let hybrid = cross_kerr(&HybridState::coherent(cfg.alpha, beam_splitter(input)?), phase);
    let mut text = String::from("label_re,label_im,mean,weight\n");
    let mut rows = Vec::new();
    for b in hybrid.branches() {
        text += &format!("{},{},{},{}\n", sci(b.label.re), sci(b.label.im), sci(b.mean()), sci(b.weight()));
        rows.push(json!({"label_re": b.label.re, "label_im": b.label.im, "weight": b.weight(), "state": b.signal}));
    }
    if let Some(path) = &cfg.out {
        write_file(path, &json_text(&json!({ "phase": phase, "branches": rows }))?)?;
    }
    Ok(text)
}

pub fn cmd_cascade(cfg: &RunConfig) -> Result<String> {
    match cfg.mode {
        Mode::Analytic => {
            let run = cascade_simulated(cfg.c0, cfg.k, cfg.alpha, cfg.theta, MeasurementMode::Analytic)?;
            let csv = records_to_csv(&run.records)?;
            match &cfg.out {
                Some(path) => {
                    write_file(path, &csv)?;
                    let state_path = path.with_extension("json");
                    write_file(&state_path, &json_text(&serde_json::to_value(&run.final_state)?)?)?;
                    Ok(format!(
                        "wrote {} stages to {} and final state to {}\n",
                        run.records.len(),
                        path.display(),
                        state_path.display()
                    ))
                }
                None => Ok(csv),
            }
        }
        Mode::Sampled => {
            let outcomes: Vec<std::result::Result<f64, usize>> = (0..cfg.shots)
                .into_par_iter()
                .map(|i| {
                    let mode = MeasurementMode::Sampled {
                        seed: cfg.seed.wrapping_add(i),
                    };
                    match cascade_simulated(cfg.c0, cfg.k, cfg.alpha, cfg.theta, mode) {
                        Ok(run) => Ok(run.records.last().map_or(f64::NAN, |r| r.c_i)),
                        Err(Error::CascadeAborted { stage }) => Err(stage),
                        Err(e) => panic!("cascade failed after validation: {e}"),
                    }
                })
                .collect();
            let mut per_stage = vec![0u64; cfg.k];
            for o in &outcomes {
                if let Err(stage) = o {
                    per_stage[stage - 1] += 1;
                }
            }
            let aborted: u64 = per_stage.iter().sum();
            let closed = cascade_closed_form(cfg.c0, cfg.k)?;
            let expected = 1.0 - closed.last().expect("k >= 1").cumulative_p;
            let fraction = aborted as f64 / cfg.shots as f64;
            let mut text = format!(
                "runs={} aborted={} abort_fraction={} expected={}\n",
                cfg.shots,
                aborted,
                sci(fraction),
                sci(expected)
            );
            for (i, n) in per_stage.iter().enumerate() {
                text += &format!("stage {}: aborted {}\n", i + 1, n);
            }
            if let Some(path) = &cfg.out {
                let report = json!({
                    "runs": cfg.shots,
                    "aborted": aborted,
                    "abort_fraction": fraction,
                    "expected_abort_fraction": expected,
                    "aborted_per_stage": per_stage,
                });
                write_file(path, &json_text(&report)?)?;
            }
            Ok(text)
        }
    }
}

fn classification_json(c: &Classification) -> serde_json::Value {
    json!({
        "misclassification": c.misclassification,
        "classes": c.outcomes.iter().map(|o| json!({"class": o.class, "probability": o.probability})).collect::<Vec<_>>(),
    })
}

/// One sampled emission: true pair number, homodyne outcome (none for the
/// vacuum, which never reaches the probe windows) and declared class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub shot: u64,
    pub n: u32,
    pub x: Option<f64>,
    pub declared_class: u32,
}

/// Confusion counts, keyed by true pair number then declared class.
pub type Confusion = BTreeMap<u32, BTreeMap<u32, u64>>;

pub fn classify_shots(cfg: &RunConfig) -> Result<Vec<Shot>> {
    let classifier = PairClassifier::new(cfg.alpha, cfg.theta, cfg.n_max)?;
    let cutoff = SpdcParams::adequate_cutoff(cfg.tau, SOURCE_CUTOFF_LIMIT)?;
    let source = EmissionSampler::new(&SpdcParams::new(cfg.tau, cutoff)?)?;
    let samplers: Vec<_> = (0..=cutoff).map(|n| classifier.pure_sampler(n)).collect();
    let windows = classifier.windows();
    Ok((0..cfg.shots)
        .into_par_iter()
        .map(|shot| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(shot));
            let n = source.sample(&mut rng);
            let x = (n > 0).then(|| samplers[n as usize].sample(&mut rng));
            Shot {
                shot,
                n,
                x,
                declared_class: x.map_or(0, |x| windows.classify(x)),
            }
        })
        .collect())
}

pub fn confusion(shots: &[Shot]) -> Confusion {
    let mut c = Confusion::new();
    for s in shots {
        *c.entry(s.n).or_default().entry(s.declared_class).or_default() += 1;
    }
    c
}

pub fn accuracy(confusion: &Confusion) -> f64 {
    let total: u64 = confusion.values().flat_map(|r| r.values()).sum();
    let diag: u64 = confusion.iter().map(|(n, r)| r.get(n).copied().unwrap_or(0)).sum();
    diag as f64 / total as f64
}

pub const SHOT_HEADER: [&str; 4] = ["shot", "n", "x", "declared_class"];

pub fn shots_to_csv(shots: &[Shot]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::InvalidConfig(e.to_string());
    w.write_record(SHOT_HEADER).map_err(io)?;
    for s in shots {
        w.write_record([
            s.shot.to_string(),
            s.n.to_string(),
            s.x.map(sci).unwrap_or_default(),
            s.declared_class.to_string(),
        ])
        .map_err(io)?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("ascii"))
}

pub fn shots_from_csv(text: &str) -> Result<Vec<Shot>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let bad = |what: &str| Error::InvalidConfig(format!("bad shot row: {what}"));
    let header: Vec<&str> = r.headers().map_err(|e| bad(&e.to_string()))?.iter().collect();
    if header != SHOT_HEADER {
        return Err(bad(&format!("header {header:?}")));
    }
    r.records()
        .map(|row| {
            let row = row.map_err(|e| bad(&e.to_string()))?;
            Ok(Shot {
                shot: row[0].parse().map_err(|_| bad(&row[0]))?,
                n: row[1].parse().map_err(|_| bad(&row[1]))?,
                x: match &row[2] {
                    "" => None,
                    v => Some(v.parse().map_err(|_| bad(v))?),
                },
                declared_class: row[3].parse().map_err(|_| bad(&row[3]))?,
            })
        })
        .collect()
}

pub fn cmd_classify(cfg: &RunConfig) -> Result<String> {
    let classifier = PairClassifier::new(cfg.alpha, cfg.theta, cfg.n_max)?;
    match cfg.mode {
        Mode::Analytic => {
            let p = SpdcParams::new(cfg.tau, cfg.n_max)?;
            let input = truncated_state(&p).normalize()?;
            let c = classifier.classify(&input, MeasurementMode::Analytic)?;
            let mut text = String::from("class,probability\n");
            for o in &c.outcomes {
                text += &format!("{},{}\n", o.class, sci(o.probability));
            }
            text += &format!("# misclassification bound {}\n", sci(c.misclassification));
            text += &format!("# truncation loss {}\n", sci(p.truncation_loss()));
            if let Some(path) = &cfg.out {
                let mut report = classification_json(&c);
                report["truncation_loss"] = json!(p.truncation_loss());
                report["windows"] = serde_json::to_value(classifier.windows())?;
                write_file(path, &json_text(&report)?)?;
            }
            Ok(text)
        }
        Mode::Sampled => {
            let shots = classify_shots(cfg)?;
            let confusion = confusion(&shots);
            let acc = accuracy(&confusion);
            let mut text = format!("shots={} accuracy={}\n", cfg.shots, sci(acc));
            text += "true\\declared";
            for d in 0..=cfg.n_max {
                text += &format!(",{d}");
            }
            text += "\n";
            for (n, row) in &confusion {
                text += &n.to_string();
                for d in 0..=cfg.n_max {
                    text += &format!(",{}", row.get(&d).copied().unwrap_or(0));
                }
                text += "\n";
            }
            if let Some(path) = &cfg.out {
                write_file(path, &shots_to_csv(&shots)?)?;
                let rows: BTreeMap<String, &BTreeMap<u32, u64>> =
                    confusion.iter().map(|(n, r)| (n.to_string(), r)).collect();
                let report = json!({
                    "shots": cfg.shots,
                    "accuracy": acc,
                    "confusion": rows,
                    "windows": classifier.windows(),
                });
                write_file(&path.with_extension("json"), &json_text(&report)?)?;
            }
            Ok(text)
        }
    }
}

pub fn cmd_spdc(cfg: &RunConfig) -> Result<String> {
    let p = SpdcParams::new(cfg.tau, cfg.n_max)?;
    let dist = pair_distribution(&p);
    let empirical = match cfg.mode {
        Mode::Analytic => None,
        Mode::Sampled => {
            let sampler = EmissionSampler::new(&p)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut counts = vec![0u64; dist.len()];
            for _ in 0..cfg.shots {
                counts[sampler.sample(&mut rng) as usize] += 1;
            }
            Some(counts)
        }
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::InvalidConfig(e.to_string());
    match &empirical {
        None => w.write_record(["n", "p_n"]).map_err(io)?,
        Some(_) => w.write_record(["n", "p_n", "empirical"]).map_err(io)?,
    }
    for &(n, pn) in &dist {
        let mut row = vec![n.to_string(), sci(pn)];
        if let Some(counts) = &empirical {
            row.push(sci(counts[n as usize] as f64 / cfg.shots as f64));
        }
        w.write_record(row).map_err(io)?;
    }
    let csv = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("ascii");
    match &cfg.out {
        Some(path) => {
            write_file(path, &csv)?;
            let mean: f64 = dist.iter().map(|&(n, w)| n as f64 * w).sum();
            Ok(format!(
                "truncation_loss={} mean_pairs={}\n",
                sci(p.truncation_loss()),
                sci(mean)
            ))
        }
        None => Ok(csv),
    }
}
