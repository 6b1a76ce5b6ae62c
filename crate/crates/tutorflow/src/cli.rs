//! Command-line front end. Every command writes its artifacts plus a
//! `manifest.json` echoing the effective configuration into `--out`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use tutorflow_core::allocation::{
    demo_profiles, solve_allocation_with, solve_group_maximin_with, AllocationPlan, AllocationProblem, ObjectiveMode,
};
use tutorflow_core::bkt::{fit_parameters, skill_sequences, trace_student, BktParams, FitResult};
use tutorflow_core::event::{group_by_student, SignalEvent};
use tutorflow_core::flywheel::{FlywheelState, Recommendation};
use tutorflow_core::metrics::{evaluate_model, EvalConfig};
use tutorflow_core::synthetic::{generate_synthetic, SyntheticConfig};

use crate::canonical::{read_events_file, sort_events, write_events};
use crate::config::{Effective, Overrides};
use crate::error::{AppError, AppResult};
use crate::formats::{
    read_json, read_params, render_table, to_json_pretty, write_csv, write_hidden, write_json, write_plan, write_text,
    write_trajectories,
};
use crate::kt1::preprocess_kt1;
use crate::oj::ingest_oj;

#[derive(Debug, Parser)]
#[command(name = "tutorflow", version, about = "Knowledge tracing, curriculum allocation and tutoring-loop replay")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Objective {
    Sum,
    Terminal,
}

impl From<Objective> for ObjectiveMode {
    fn from(o: Objective) -> Self {
        match o {
            Objective::Sum => ObjectiveMode::SumSentiment,
            Objective::Terminal => ObjectiveMode::TerminalSentiment,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 or unset: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "tutorflow-out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub train_fraction: Option<f64>,
    /// Smoothing factor for the signal pipeline.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Aggregation window length.
    #[arg(long, global = true)]
    pub window: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub objective: Option<Objective>,
    /// Abort ingestion once more than this many rows are rejected.
    #[arg(long, global = true)]
    pub max_errors: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceKind {
    Oj,
    Kt1,
    Canonical,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert an OJ export, a KT1 log or a canonical file to canonical CSV.
    Ingest {
        #[arg(long, value_enum)]
        source: SourceKind,
        #[arg(long)]
        input: PathBuf,
        /// Item metadata (KT1 only).
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate students from known parameters.
    Simulate {
        #[arg(long)]
        students: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit per-skill parameters with EM.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Trace mastery over every event.
    Trace {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Chronological split, fit on the head, score the tail.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Solve an allocation problem (a JSON object, or a list for maximin).
    Allocate {
        #[arg(long, conflicts_with = "demo", required_unless_present = "demo")]
        problem: Option<PathBuf>,
        /// Solve the five built-in student profiles.
        #[arg(long)]
        demo: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Replay events through the tutoring loop.
    Flywheel {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        params: PathBuf,
        /// Continue from a previous `state.json`.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    inputs: BTreeMap<&'a str, String>,
    outputs: Vec<String>,
    config: &'a Effective,
}

struct Run<'a> {
    name: &'a str,
    out: &'a Path,
    config: Effective,
    inputs: BTreeMap<&'a str, String>,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    fn new(name: &'a str, common: &'a Common, extra: Overrides) -> AppResult<Self> {
        let flags = Overrides {
            seed: common.seed,
            threads: common.threads,
            train_fraction: common.train_fraction,
            alpha: common.alpha,
            window: common.window,
            objective: common.objective.map(Into::into),
            max_errors: common.max_errors,
            ..extra
        };
        let config = Effective::resolve(common.config.as_deref(), &flags)?;
        fs::create_dir_all(&common.out).map_err(|e| AppError::io(&common.out, e))?;
        let mut inputs = BTreeMap::new();
        if let Some(c) = &common.config {
            inputs.insert("config", c.display().to_string());
        }
        Ok(Self { name, out: &common.out, config, inputs, outputs: Vec::new() })
    }

    fn input(&mut self, key: &'a str, path: &Path) {
        self.inputs.insert(key, path.display().to_string());
    }

    fn path(&mut self, file: &str) -> PathBuf {
        self.outputs.push(file.to_string());
        self.out.join(file)
    }

    fn finish(mut self) -> AppResult<()> {
        let path = self.path("manifest.json");
        let manifest = Manifest {
            command: self.name,
            version: env!("CARGO_PKG_VERSION"),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            config: &self.config,
        };
        write_json(&path, &manifest)
    }
}

pub fn run(cli: Cli) -> AppResult<()> {
    let threads = match &cli.command {
        Command::Ingest { common, .. }
        | Command::Simulate { common, .. }
        | Command::Fit { common, .. }
        | Command::Trace { common, .. }
        | Command::Evaluate { common, .. }
        | Command::Allocate { common, .. }
        | Command::Flywheel { common, .. } => common.threads.unwrap_or(0),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| AppError::Validation(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(command: Command) -> AppResult<()> {
    match command {
        Command::Ingest { source, input, metadata, common } => cmd_ingest(source, &input, metadata.as_deref(), &common),
        Command::Simulate { students, steps, common } => cmd_simulate(students, steps, &common),
        Command::Fit { input, common } => cmd_fit(&input, &common),
        Command::Trace { input, params, common } => cmd_trace(&input, &params, &common),
        Command::Evaluate { input, common } => cmd_evaluate(&input, &common),
        Command::Allocate { problem, demo, common } => cmd_allocate(problem.as_deref(), demo, &common),
        Command::Flywheel { input, params, resume, common } => cmd_flywheel(&input, &params, resume.as_deref(), &common),
    }
}

fn open(path: &Path) -> AppResult<std::io::BufReader<fs::File>> {
    fs::File::open(path).map(std::io::BufReader::new).map_err(|e| AppError::io(path, e))
}

pub fn cmd_ingest(source: SourceKind, input: &Path, metadata: Option<&Path>, common: &Common) -> AppResult<()> {
    let mut run = Run::new("ingest", common, Overrides::default())?;
    run.input("input", input);
    let name = input.display().to_string();
    let max = run.config.max_errors;
    let (events, report) = match source {
        SourceKind::Oj => ingest_oj(open(input)?, &name, max)?,
        SourceKind::Kt1 => {
            let meta = metadata.ok_or_else(|| AppError::Validation("--metadata is required for kt1".into()))?;
            run.input("metadata", meta);
            let (events, q, report) = preprocess_kt1(open(input)?, &name, open(meta)?, &meta.display().to_string(), max)?;
            let path = run.path("qmatrix.csv");
            write_csv(&path, |b| q.write_csv(b))?;
            (events, report)
        }
        SourceKind::Canonical => {
            let mut events = read_events_file(input)?;
            sort_events(&mut events);
            let n = events.len();
            let report = crate::report::IngestReport {
                source: "canonical".into(),
                rows_in: n,
                rows_out: n,
                rows_rejected: 0,
                steps: None,
                errors: vec![],
            };
            (events, report)
        }
    };
    let path = run.path("events.csv");
    write_csv(&path, |b| write_events(b, &events))?;
    let path = run.path("report.json");
    write_json(&path, &report)?;
    run.finish()
}

pub fn cmd_simulate(students: Option<usize>, steps: Option<usize>, common: &Common) -> AppResult<()> {
    let extra = Overrides { students, steps, ..Overrides::default() };
    let mut run = Run::new("simulate", common, extra)?;
    let sim = &run.config.simulate;
    let cfg = SyntheticConfig {
        params: sim.params.clone(),
        students: sim.students,
        steps: sim.steps,
        seed: run.config.seed,
    };
    let data = generate_synthetic(&cfg)?;
    let path = run.path("events.csv");
    write_csv(&path, |b| write_events(b, &data.events))?;
    let path = run.path("hidden.csv");
    write_csv(&path, |b| write_hidden(b, &data.hidden))?;
    let path = run.path("truth.json");
    write_json(&path, &cfg.params)?;
    run.finish()
}

#[derive(Debug, Serialize)]
struct FitSummary {
    sequences: usize,
    observations: usize,
    log_likelihood: f64,
    iterations: usize,
}

fn fit_all(events: &[SignalEvent], cfg: &tutorflow_core::bkt::FitConfig) -> AppResult<Vec<(String, usize, usize, FitResult)>> {
    let seqs: Vec<(String, Vec<Vec<bool>>)> = skill_sequences(events).into_iter().collect();
    seqs.into_par_iter()
        .map(|(skill, s)| {
            let obs = s.iter().map(Vec::len).sum();
            let fit = fit_parameters(&s, cfg)?;
            Ok((skill, s.len(), obs, fit))
        })
        .collect()
}

pub fn cmd_fit(input: &Path, common: &Common) -> AppResult<()> {
    let mut run = Run::new("fit", common, Overrides::default())?;
    run.input("input", input);
    let events = read_events_file(input)?;
    let fits = fit_all(&events, &run.config.fit)?;
    let params: BTreeMap<&str, BktParams> = fits.iter().map(|(s, _, _, f)| (s.as_str(), f.params)).collect();
    let summary: BTreeMap<&str, FitSummary> = fits
        .iter()
        .map(|(s, n, obs, f)| {
            (
                s.as_str(),
                FitSummary {
                    sequences: *n,
                    observations: *obs,
                    log_likelihood: f.log_likelihood,
                    iterations: f.iterations,
                },
            )
        })
        .collect();
    let path = run.path("params.json");
    write_json(&path, &params)?;
    let path = run.path("fit.json");
    write_json(&path, &summary)?;
    run.finish()
}

pub fn cmd_trace(input: &Path, params: &Path, common: &Common) -> AppResult<()> {
    let mut run = Run::new("trace", common, Overrides::default())?;
    run.input("input", input);
    run.input("params", params);
    let events = read_events_file(input)?;
    let params = read_params(params)?;
    let groups: Vec<(&str, Vec<SignalEvent>)> = group_by_student(&events)
        .into_iter()
        .map(|(s, evs)| (s, evs.into_iter().cloned().collect()))
        .collect();
    let traces: Vec<(String, tutorflow_core::bkt::MasteryTrajectory)> = groups
        .par_iter()
        .map(|(s, evs)| Ok((s.to_string(), trace_student(evs, &params)?)))
        .collect::<AppResult<_>>()?;
    let path = run.path("trajectories.csv");
    write_csv(&path, |b| write_trajectories(b, &traces))?;
    run.finish()
}

pub fn cmd_evaluate(input: &Path, common: &Common) -> AppResult<()> {
    let mut run = Run::new("evaluate", common, Overrides::default())?;
    run.input("input", input);
    let events = read_events_file(input)?;
    let cfg = EvalConfig {
        train_fraction: run.config.train_fraction,
        fit: run.config.fit,
        fallback: run.config.fallback,
    };
    let eval = evaluate_model(&events, &cfg)?;
    let params: BTreeMap<&str, BktParams> = eval.fits.iter().map(|(s, f)| (s.as_str(), f.params)).collect();
    let table = render_table("BKT", &eval.report);
    let path = run.path("metrics.json");
    write_json(&path, &eval.report)?;
    let path = run.path("table.md");
    write_text(&path, &table)?;
    let path = run.path("params.json");
    write_json(&path, &params)?;
    print!("{table}");
    run.finish()
}

/// A problem file holds one problem or a list solved by maximin.
enum ProblemFile {
    One(AllocationProblem),
    Group(Vec<AllocationProblem>),
}

// Dispatch on the JSON shape so field errors are reported as-is.
fn read_problem_file(path: &Path) -> AppResult<ProblemFile> {
    let value: serde_json::Value = read_json(path)?;
    let parsed = if value.is_array() {
        serde_json::from_value(value).map(ProblemFile::Group)
    } else {
        serde_json::from_value(value).map(ProblemFile::One)
    };
    parsed.map_err(|e| AppError::json(path, e))
}

fn certified(plan: &AllocationPlan, what: &str) -> AppResult<()> {
    if plan.kkt.accepted {
        Ok(())
    } else {
        Err(AppError::Numerical(format!("{what}: KKT check failed {:?}", plan.kkt)))
    }
}

pub fn cmd_allocate(problem: Option<&Path>, demo: bool, common: &Common) -> AppResult<()> {
    let mut run = Run::new("allocate", common, Overrides::default())?;
    let objective = run.config.objective;
    let solver = run.config.solver;
    let apply = |mut p: AllocationProblem| {
        if let Some(o) = objective {
            p.objective = o;
        }
        p
    };
    if demo {
        let profiles = demo_profiles();
        let plans: Vec<(String, AllocationPlan)> = profiles
            .into_par_iter()
            .map(|d| Ok((d.name, solve_allocation_with(&apply(d.problem), &solver)?)))
            .collect::<AppResult<_>>()?;
        for (name, plan) in &plans {
            let path = run.path(&format!("{name}.csv"));
            write_csv(&path, |b| write_plan(b, plan))?;
        }
        let path = run.path("plans.json");
        let by_name: BTreeMap<&str, &AllocationPlan> = plans.iter().map(|(n, p)| (n.as_str(), p)).collect();
        write_json(&path, &by_name)?;
        run.finish()?;
        for (name, plan) in &plans {
            certified(plan, name)?;
        }
        return Ok(());
    }
    let file = problem.expect("clap requires --problem without --demo");
    run.input("problem", file);
    match read_problem_file(file)? {
        ProblemFile::One(p) => {
            let plan = solve_allocation_with(&apply(p), &solver)?;
            let path = run.path("plan.json");
            write_json(&path, &plan)?;
            let path = run.path("plan.csv");
            write_csv(&path, |b| write_plan(b, &plan))?;
            run.finish()?;
            certified(&plan, "plan")
        }
        ProblemFile::Group(ps) => {
            let ps: Vec<AllocationProblem> = ps.into_iter().map(apply).collect();
            let group = solve_group_maximin_with(&ps, &solver)?;
            let path = run.path("group.json");
            write_json(&path, &group)?;
            for (s, plan) in group.plans.iter().enumerate() {
                let path = run.path(&format!("plan_{s}.csv"));
                write_csv(&path, |b| write_plan(b, plan))?;
            }
            run.finish()?;
            if group.kkt.accepted {
                Ok(())
            } else {
                Err(AppError::Numerical(format!("group: KKT check failed {:?}", group.kkt)))
            }
        }
    }
}

pub fn cmd_flywheel(input: &Path, params: &Path, resume: Option<&Path>, common: &Common) -> AppResult<()> {
    let mut run = Run::new("flywheel", common, Overrides::default())?;
    run.input("input", input);
    run.input("params", params);
    let events = read_events_file(input)?;
    let params = read_params(params)?;
    let mut states: BTreeMap<String, FlywheelState> = match resume {
        Some(p) => {
            run.input("resume", p);
            read_json(p)?
        }
        None => BTreeMap::new(),
    };
    let cfg = run.config.flywheel;
    let groups = group_by_student(&events);
    let mut work: Vec<(FlywheelState, Vec<&SignalEvent>)> = Vec::with_capacity(groups.len());
    for (student, evs) in groups {
        let state = match states.remove(student) {
            Some(s) => s,
            None => FlywheelState::new(student, params.clone(), cfg)?,
        };
        work.push((state, evs));
    }
    let results: Vec<(FlywheelState, Vec<Recommendation>)> = work
        .into_par_iter()
        .map(|(mut state, evs)| {
            let mut recs = Vec::with_capacity(evs.len());
            for ev in evs {
                recs.push(state.step(ev)?.recommendation);
            }
            Ok((state, recs))
        })
        .collect::<AppResult<_>>()?;
    let mut lines = String::new();
    for (state, recs) in results {
        for r in &recs {
            lines.push_str(&serde_json::to_string(r).expect("recommendation serializes"));
            lines.push('\n');
        }
        states.insert(state.student_id.clone(), state);
    }
    let path = run.path("recommendations.jsonl");
    write_text(&path, &lines)?;
    let path = run.path("state.json");
    write_text(&path, &to_json_pretty(&states))?;
    run.finish()
}
