//! Command-line front-end: problem files, subcommands, CSV records.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bnb::{solve, Problem, RangeReduction, SolveReport, SolverConfig};
use crate::expr::{DagBuilder, NodeId, OpKind, ParseError};
use crate::interval::{Interval, IntervalBox};
use crate::mccormick::{propagate, PropagationContext};
use crate::tighten::{
    tighten_dag, BoundSource, PointPolicy, StartingBounds, TightenConfig,
};

#[derive(Debug)]
pub enum CliError {
    Io { path: PathBuf, err: std::io::Error },
    Format { line: usize, msg: String },
    Expr { what: String, err: ParseError },
    Invalid(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io { path, err } => write!(f, "{}: {err}", path.display()),
            CliError::Format { line, msg } => write!(f, "problem file line {line}: {msg}"),
            CliError::Expr { what, err } => write!(f, "{what}: {err}"),
            CliError::Invalid(msg) => f.write_str(msg),
        }
    }
}

impl std::error::Error for CliError {}

/// Variable names the expression grammar reserves for itself.
const RESERVED: [&str; 8] = ["pi", "exp", "log", "sqrt", "sqr", "xlog", "sin", "cos"];

/// A problem in the plain-text exchange format.
///
/// ```text
/// name sixhump          # optional; defaults to "problem"
/// vars
///   x -3 3
///   y -2 2
/// objective
///   (4 - 2.1*x^2 + x^4/3)*x^2 + x*y + (-4 + 4*y^2)*y^2
/// ineq                  # optional section: each line g(z) <= 0
///   x*y - 1
/// eq                    # optional section: each line h(z) = 0
///   x^2 + y^2 - 4
/// ```
///
/// `#` starts a comment anywhere on a line.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemFile {
    pub name: String,
    pub vars: Vec<(String, f64, f64)>,
    pub objective: String,
    pub ineqs: Vec<String>,
    pub eqs: Vec<String>,
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<ProblemFile, CliError> {
        enum Section {
            None,
            Vars,
            Objective,
            Ineq,
            Eq,
        }
        let mut section = Section::None;
        let mut name = "problem".to_string();
        let mut vars = Vec::new();
        let mut objective: Option<String> = None;
        let mut ineqs = Vec::new();
        let mut eqs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            match body {
                "vars" => {
                    section = Section::Vars;
                    continue;
                }
                "objective" => {
                    section = Section::Objective;
                    continue;
                }
                "ineq" => {
                    section = Section::Ineq;
                    continue;
                }
                "eq" => {
                    section = Section::Eq;
                    continue;
                }
                _ => {}
            }
            if let Some(rest) = body.strip_prefix("name ") {
                name = rest.trim().to_string();
                continue;
            }
            match section {
                Section::None => {
                    return Err(CliError::Format {
                        line,
                        msg: format!("'{body}' appears before any section header"),
                    })
                }
                Section::Vars => {
                    let parts: Vec<&str> = body.split_whitespace().collect();
                    let [n, lo, hi] = parts[..] else {
                        return Err(CliError::Format {
                            line,
                            msg: "expected 'name lo hi'".to_string(),
                        });
                    };
                    let lo: f64 = lo.parse().map_err(|_| CliError::Format {
                        line,
                        msg: format!("bad lower bound '{lo}'"),
                    })?;
                    let hi: f64 = hi.parse().map_err(|_| CliError::Format {
                        line,
                        msg: format!("bad upper bound '{hi}'"),
                    })?;
                    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                        return Err(CliError::Format {
                            line,
                            msg: format!("invalid range [{lo}, {hi}]"),
                        });
                    }
                    let ok = !n.is_empty()
                        && n.chars().next().unwrap().is_ascii_alphabetic()
                        && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
                    if !ok || RESERVED.contains(&n) {
                        return Err(CliError::Format {
                            line,
                            msg: format!("invalid variable name '{n}'"),
                        });
                    }
                    if vars.iter().any(|(v, _, _)| v == n) {
                        return Err(CliError::Format {
                            line,
                            msg: format!("duplicate variable '{n}'"),
                        });
                    }
                    vars.push((n.to_string(), lo, hi));
                }
                Section::Objective => {
                    if objective.is_some() {
                        return Err(CliError::Format {
                            line,
                            msg: "more than one objective".to_string(),
                        });
                    }
                    objective = Some(body.to_string());
                }
                Section::Ineq => ineqs.push(body.to_string()),
                Section::Eq => eqs.push(body.to_string()),
            }
        }
        if vars.is_empty() {
            return Err(CliError::Format {
                line: 0,
                msg: "no variables declared".to_string(),
            });
        }
        let Some(objective) = objective else {
            return Err(CliError::Format {
                line: 0,
                msg: "no objective".to_string(),
            });
        };
        Ok(ProblemFile {
            name,
            vars,
            objective,
            ineqs,
            eqs,
        })
    }

    pub fn load(path: &Path) -> Result<ProblemFile, CliError> {
        let text = fs::read_to_string(path).map_err(|err| CliError::Io {
            path: path.to_path_buf(),
            err,
        })?;
        let mut pf = ProblemFile::parse(&text)?;
        if pf.name == "problem" {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                pf.name = stem.to_string();
            }
        }
        Ok(pf)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("name {}\n", self.name));
        out.push_str("vars\n");
        for (n, lo, hi) in &self.vars {
            out.push_str(&format!("  {n} {lo} {hi}\n"));
        }
        out.push_str("objective\n");
        out.push_str(&format!("  {}\n", self.objective));
        if !self.ineqs.is_empty() {
            out.push_str("ineq\n");
            for g in &self.ineqs {
                out.push_str(&format!("  {g}\n"));
            }
        }
        if !self.eqs.is_empty() {
            out.push_str("eq\n");
            for h in &self.eqs {
                out.push_str(&format!("  {h}\n"));
            }
        }
        out
    }

    /// Parses every expression into one shared DAG.
    pub fn build(&self) -> Result<Problem, CliError> {
        let names: Vec<&str> = self.vars.iter().map(|(n, _, _)| n.as_str()).collect();
        let mut b = DagBuilder::new(&names);
        let expr = |b: &mut DagBuilder, what: &str, src: &str| {
            b.parse(src).map_err(|err| CliError::Expr {
                what: format!("{what} '{src}'"),
                err,
            })
        };
        let objective = expr(&mut b, "objective", &self.objective)?;
        let mut ineqs = Vec::new();
        for g in &self.ineqs {
            ineqs.push(expr(&mut b, "inequality", g)?);
        }
        let mut eqs = Vec::new();
        for h in &self.eqs {
            eqs.push(expr(&mut b, "equality", h)?);
        }
        Ok(Problem {
            name: self.name.clone(),
            dag: b.finish(),
            objective,
            ineqs,
            eqs,
            domain: IntervalBox::new(
                self.vars
                    .iter()
                    .map(|(_, lo, hi)| Interval::new(*lo, *hi))
                    .collect(),
            ),
        })
    }
}

/// The problems shipped with the binary: two classic 2-D minimization
/// surfaces, the two 1-D products exercised throughout the test suite, and
/// a small constrained model with closed-form optimum -sqrt(6).
pub fn builtins() -> Vec<ProblemFile> {
    let pf = |name: &str, vars: &[(&str, f64, f64)], obj: &str, ineqs: &[&str], eqs: &[&str]| {
        ProblemFile {
            name: name.to_string(),
            vars: vars
                .iter()
                .map(|(n, lo, hi)| (n.to_string(), *lo, *hi))
                .collect(),
            objective: obj.to_string(),
            ineqs: ineqs.iter().map(|s| s.to_string()).collect(),
            eqs: eqs.iter().map(|s| s.to_string()).collect(),
        }
    };
    vec![
        pf(
            "sixhump",
            &[("x", -3.0, 3.0), ("y", -2.0, 2.0)],
            "(4 - 2.1*x^2 + x^4/3)*x^2 + x*y + (-4 + 4*y^2)*y^2",
            &[],
            &[],
        ),
        pf(
            "ursem_waves",
            &[("x", -0.9, 1.2), ("y", -1.2, 1.2)],
            "-0.9*x^2 + (y^2 - 4.5*y^2)*x*y + 4.7*cos(3*x - y^2*(2 + x))*sin(2.5*pi*x)",
            &[],
            &[],
        ),
        pf(
            "difference",
            &[("z", -0.5, 1.0)],
            "(z - z^2)*(z^3 - exp(z))",
            &[],
            &[],
        ),
        pf(
            "logdiff",
            &[("z", -0.5, 1.0)],
            "(log(z + 1) - z^2)*(log(z + 1) - exp(z - 0.5))",
            &[],
            &[],
        ),
        pf(
            "ring",
            &[("x", -2.0, 2.0), ("y", -2.0, 2.0)],
            "x + y",
            &["x*y - 1"],
            &["x^2 + y^2 - 4"],
        ),
    ]
}

/// One solver run as a CSV row. The time column is the only field allowed
/// to differ between identical runs.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub problem: String,
    pub config: String,
    pub iters: usize,
    pub time_ms: u128,
    pub status: String,
    pub best_value: Option<f64>,
    pub final_lb: f64,
}

impl RunRecord {
    pub const HEADER: &'static str = "problem,config,iters,time_ms,status,best_value,final_lb";

    pub fn from_report(report: &SolveReport, config: String) -> RunRecord {
        RunRecord {
            problem: report.problem.clone(),
            config,
            iters: report.iterations,
            time_ms: report.wall_time.as_millis(),
            status: report.status.as_str().to_string(),
            best_value: report.best_value,
            final_lb: report.final_lb,
        }
    }

    pub fn csv_row(&self) -> String {
        let best = self.best_value.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.problem, self.config, self.iters, self.time_ms, self.status, best, self.final_lb
        )
    }
}

/// Compact config description embedded in every RunRecord (no commas: it
/// is one CSV field).
pub fn fingerprint(cfg: &SolverConfig) -> String {
    let heur = if cfg.tighten.max_iters == 0 {
        "off".to_string()
    } else {
        format!("N{}", cfg.tighten.max_iters)
    };
    format!(
        "heur={heur};point={};rr={};interval={};seed={}",
        match cfg.tighten.point_policy {
            PointPolicy::Midpoint => "midpoint",
            PointPolicy::Incumbent => "incumbent",
        },
        match cfg.range_reduction {
            RangeReduction::None => "none",
            RangeReduction::Full => "full",
        },
        match cfg.tighten.starting_bounds {
            StartingBounds::Natural => "natural",
            StartingBounds::TaylorForm => "taylor2",
        },
        cfg.seed
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PointArg {
    Midpoint,
    Incumbent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum RrArg {
    None,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum IntervalArg {
    Natural,
    Taylor2,
}

impl IntervalArg {
    fn starting_bounds(self) -> StartingBounds {
        match self {
            IntervalArg::Natural => StartingBounds::Natural,
            IntervalArg::Taylor2 => StartingBounds::TaylorForm,
        }
    }
}

#[derive(Args, Clone, Debug)]
struct SolveFlags {
    /// Bound-tightening heuristic: "off" or "N=<k>" iterations per factor.
    #[arg(long, default_value = "N=1")]
    heur: String,
    /// Linearization and tightening point.
    #[arg(long, value_enum, default_value_t = PointArg::Midpoint)]
    point: PointArg,
    /// Range reduction: bound probing plus reduced-cost tightening.
    #[arg(long, value_enum, default_value_t = RrArg::None)]
    rr: RrArg,
    /// Starting factor bounds: natural intervals, or intersected with a
    /// second-order Taylor enclosure (univariate problems).
    #[arg(long, value_enum, default_value_t = IntervalArg::Natural)]
    interval: IntervalArg,
    /// Time limit in seconds.
    #[arg(long, default_value_t = 3600.0)]
    timeout: f64,
    /// Seed for the local-search sampler.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SolveFlags {
    fn heur_iters(&self) -> Result<usize, CliError> {
        if self.heur == "off" {
            return Ok(0);
        }
        if let Some(k) = self.heur.strip_prefix("N=") {
            if let Ok(k) = k.parse::<usize>() {
                return Ok(k);
            }
        }
        Err(CliError::Invalid(format!(
            "--heur takes 'off' or 'N=<k>', got '{}'",
            self.heur
        )))
    }

    fn solver_config(&self) -> Result<SolverConfig, CliError> {
        if !(self.timeout > 0.0) {
            return Err(CliError::Invalid("--timeout must be positive".to_string()));
        }
        Ok(SolverConfig {
            tighten: TightenConfig {
                max_iters: self.heur_iters()?,
                point_policy: match self.point {
                    PointArg::Midpoint => PointPolicy::Midpoint,
                    PointArg::Incumbent => PointPolicy::Incumbent,
                },
                starting_bounds: self.interval.starting_bounds(),
                ..TightenConfig::default()
            },
            range_reduction: match self.rr {
                RrArg::None => RangeReduction::None,
                RrArg::Full => RangeReduction::Full,
            },
            time_limit: Duration::from_secs_f64(self.timeout),
            seed: self.seed,
            ..SolverConfig::default()
        })
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "mcrelax",
    about = "Deterministic global minimization via relaxation-based branch-and-bound",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Minimize the problem in FILE to global optimality.
    Solve {
        file: PathBuf,
        #[command(flatten)]
        flags: SolveFlags,
        /// Append the run record to this CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Show per-factor range bounds before and after tightening.
    Tighten {
        file: PathBuf,
        /// Tightening iterations per factor.
        #[arg(short = 'N', default_value_t = 1)]
        n: usize,
        /// Evaluation point, comma-separated coordinates (default: box
        /// midpoint).
        #[arg(long)]
        point: Option<String>,
        #[arg(long, value_enum, default_value_t = IntervalArg::Natural)]
        interval: IntervalArg,
        /// Only print the factor with this node id.
        #[arg(long)]
        factor: Option<usize>,
    },
    /// Sample the objective and its relaxations into a CSV table.
    Plot {
        file: PathBuf,
        /// Samples per axis.
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Plot range lo:hi overriding the variable bounds (1-D only).
        #[arg(long)]
        range: Option<String>,
        /// Tightening iterations used for the tightened columns.
        #[arg(short = 'N', default_value_t = 1)]
        n: usize,
        #[arg(long, value_enum, default_value_t = IntervalArg::Natural)]
        interval: IntervalArg,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in problems across solver configurations.
    Bench {
        /// Problem set; only "builtin" is available.
        #[arg(long, default_value = "builtin")]
        suite: String,
        /// Comma-separated subset of mc,heur,rr,heur-rr, or "all".
        #[arg(long, default_value = "all")]
        configs: String,
        /// Comma-separated heuristic iteration counts.
        #[arg(long = "N", default_value = "1")]
        n_list: String,
        #[command(flatten)]
        flags: SolveFlags,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match dispatch(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli, w: &mut dyn Write) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Solve { file, flags, out } => {
            let pf = ProblemFile::load(&file)?;
            let record = cmd_solve(&pf, &flags.solver_config()?, w)?;
            if let Some(path) = out {
                append_csv(&path, &record)?;
            }
            Ok(())
        }
        Cmd::Tighten {
            file,
            n,
            point,
            interval,
            factor,
        } => {
            let pf = ProblemFile::load(&file)?;
            let point = match point {
                Some(s) => Some(parse_point(&s, pf.vars.len())?),
                None => None,
            };
            cmd_tighten(&pf, n, point.as_deref(), interval.starting_bounds(), factor, w)
        }
        Cmd::Plot {
            file,
            samples,
            range,
            n,
            interval,
            out,
        } => {
            let pf = ProblemFile::load(&file)?;
            let range = match range {
                Some(s) => Some(parse_range(&s)?),
                None => None,
            };
            let csv = cmd_plot(&pf, samples, range, n, interval.starting_bounds())?;
            match out {
                Some(path) => fs::write(&path, csv).map_err(|err| CliError::Io { path, err }),
                None => w.write_all(csv.as_bytes()).map_err(|err| CliError::Io {
                    path: PathBuf::from("<stdout>"),
                    err,
                }),
            }
        }
        Cmd::Bench {
            suite,
            configs,
            n_list,
            flags,
            out,
        } => {
            if suite != "builtin" {
                return Err(CliError::Invalid(format!("unknown suite '{suite}'")));
            }
            let csv = cmd_bench(&configs, &n_list, &flags)?;
            match out {
                Some(path) => fs::write(&path, &csv).map_err(|err| CliError::Io { path, err }),
                None => w.write_all(csv.as_bytes()).map_err(|err| CliError::Io {
                    path: PathBuf::from("<stdout>"),
                    err,
                }),
            }
        }
    }
}

fn parse_point(s: &str, ndim: usize) -> Result<Vec<f64>, CliError> {
    let coords: Result<Vec<f64>, _> = s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let coords =
        coords.map_err(|_| CliError::Invalid(format!("--point needs numbers, got '{s}'")))?;
    if coords.len() != ndim {
        return Err(CliError::Invalid(format!(
            "--point has {} coordinates, problem has {ndim}",
            coords.len()
        )));
    }
    Ok(coords)
}

fn parse_range(s: &str) -> Result<Interval, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi] = parts[..] else {
        return Err(CliError::Invalid(format!("--range takes lo:hi, got '{s}'")));
    };
    let (lo, hi) = (lo.trim().parse::<f64>(), hi.trim().parse::<f64>());
    match (lo, hi) {
        (Ok(lo), Ok(hi)) if lo < hi && lo.is_finite() && hi.is_finite() => {
            Ok(Interval::new(lo, hi))
        }
        _ => Err(CliError::Invalid(format!("invalid --range '{s}'"))),
    }
}

fn append_csv(path: &Path, record: &RunRecord) -> Result<(), CliError> {
    let exists = path.exists();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|err| CliError::Io {
            path: path.to_path_buf(),
            err,
        })?;
    let io = |err| CliError::Io {
        path: path.to_path_buf(),
        err,
    };
    if !exists {
        writeln!(f, "{}", RunRecord::HEADER).map_err(io)?;
    }
    writeln!(f, "{}", record.csv_row()).map_err(io)
}

pub fn cmd_solve(
    pf: &ProblemFile,
    cfg: &SolverConfig,
    w: &mut dyn Write,
) -> Result<RunRecord, CliError> {
    let problem = pf.build()?;
    let report = solve(&problem, cfg);
    let record = RunRecord::from_report(&report, fingerprint(cfg));
    let io = |err| CliError::Io {
        path: PathBuf::from("<stdout>"),
        err,
    };
    writeln!(w, "problem: {}", report.problem).map_err(io)?;
    writeln!(w, "status: {}", report.status.as_str()).map_err(io)?;
    match (&report.best_value, &report.best_point) {
        (Some(v), Some(z)) => {
            writeln!(w, "best value: {v}").map_err(io)?;
            let coords: Vec<String> = problem
                .dag
                .var_names
                .iter()
                .zip(z)
                .map(|(n, x)| format!("{n}={x}"))
                .collect();
            writeln!(w, "best point: {}", coords.join(", ")).map_err(io)?;
        }
        _ => writeln!(w, "best value: none found").map_err(io)?,
    }
    writeln!(w, "lower bound: {}", report.final_lb).map_err(io)?;
    writeln!(
        w,
        "iterations: {} ({} nodes, {} bound-fathomed, {} infeasible)",
        report.iterations, report.nodes_created, report.fathomed_by_bound,
        report.fathomed_infeasible
    )
    .map_err(io)?;
    writeln!(w, "time: {:.3} s", report.wall_time.as_secs_f64()).map_err(io)?;
    writeln!(w, "convergence: {:.1}%", report.convergence_ratio).map_err(io)?;
    Ok(record)
}

fn describe(problem: &Problem, id: NodeId) -> String {
    let node = problem.dag.node(id);
    match node.op {
        OpKind::Var(i) => problem.dag.var_names[i].clone(),
        OpKind::Const(c) => format!("const {c}"),
        OpKind::Pow(k) => format!("pow[{k}](v{})", node.args[0].0),
        _ => {
            let args: Vec<String> = node.args.iter().map(|a| format!("v{}", a.0)).collect();
            format!("{}({})", node.op.name(), args.join(", "))
        }
    }
}

pub fn cmd_tighten(
    pf: &ProblemFile,
    n: usize,
    point: Option<&[f64]>,
    starting_bounds: StartingBounds,
    factor: Option<usize>,
    w: &mut dyn Write,
) -> Result<(), CliError> {
    let problem = pf.build()?;
    let cfg = TightenConfig {
        max_iters: n,
        point_policy: if point.is_some() {
            PointPolicy::Incumbent
        } else {
            PointPolicy::Midpoint
        },
        starting_bounds,
        ..TightenConfig::default()
    };
    let out = tighten_dag(&problem.dag, &problem.domain, &cfg, point)
        .map_err(|e| CliError::Invalid(format!("relaxation failed: {e}")))?;
    let io = |err| CliError::Io {
        path: PathBuf::from("<stdout>"),
        err,
    };
    let coords: Vec<String> = out.point.iter().map(|x| x.to_string()).collect();
    writeln!(w, "point: ({})", coords.join(", ")).map_err(io)?;
    for &id in &problem.dag.schedule {
        if factor.is_some_and(|f| f != id.0) {
            continue;
        }
        let nat = out.bounds.natural[id.0];
        let fin = out.bounds.intervals[id.0];
        let mut line = format!(
            "v{} = {:<14} natural [{}, {}]",
            id.0,
            describe(&problem, id),
            nat.lo,
            nat.hi
        );
        if let Some(taylor) = &out.bounds.taylor {
            let t = taylor[id.0];
            line.push_str(&format!("  taylor [{}, {}]", t.lo, t.hi));
        }
        line.push_str(&format!("  final [{}, {}]", fin.lo, fin.hi));
        line.push_str(match out.bounds.source[id.0] {
            BoundSource::Natural => "",
            BoundSource::TaylorForm => "  (taylor)",
            BoundSource::Heuristic => "  (heuristic)",
        });
        if nat.lo == nat.hi {
            line.push_str("  skipped (constant)");
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    Ok(())
}

/// Emits relaxation samples: the objective value, the convex/concave
/// envelope pair under natural bounds, and the pair under tightened
/// bounds. 1-D tables have `samples` rows; 2-D tables sample a grid with
/// `samples` points per axis.
pub fn cmd_plot(
    pf: &ProblemFile,
    samples: usize,
    range: Option<Interval>,
    n: usize,
    starting_bounds: StartingBounds,
) -> Result<String, CliError> {
    let problem = pf.build()?;
    let ndim = problem.domain.ndim();
    if ndim > 2 {
        return Err(CliError::Invalid(format!(
            "plot handles 1 or 2 variables, problem has {ndim}"
        )));
    }
    if samples < 2 {
        return Err(CliError::Invalid("--samples must be at least 2".to_string()));
    }
    let mut domain = problem.domain.clone();
    if let Some(r) = range {
        if ndim != 1 {
            return Err(CliError::Invalid(
                "--range applies to 1-D problems only".to_string(),
            ));
        }
        domain = IntervalBox::new(vec![r]);
    }
    let cfg = TightenConfig {
        max_iters: n,
        starting_bounds,
        ..TightenConfig::default()
    };
    let fail = |e| CliError::Invalid(format!("relaxation failed: {e}"));
    let out = tighten_dag(&problem.dag, &domain, &cfg, None).map_err(fail)?;
    let root = problem.objective.0;

    let mut csv = String::new();
    let grid = |d: Interval, k: usize| d.lo + (d.hi - d.lo) * k as f64 / (samples - 1) as f64;
    let emit = |z: &[f64], csv: &mut String| -> Result<(), CliError> {
        let vals = problem.dag.eval_real(z).map_err(fail)?;
        let nat = propagate(
            &problem.dag,
            &PropagationContext {
                domain: &domain,
                point: z,
                stored_bounds: Some(&out.bounds.natural),
            },
        )
        .map_err(fail)?;
        let alg = propagate(
            &problem.dag,
            &PropagationContext {
                domain: &domain,
                point: z,
                stored_bounds: Some(&out.bounds.intervals),
            },
        )
        .map_err(fail)?;
        let coords: Vec<String> = z.iter().map(|x| x.to_string()).collect();
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            coords.join(","),
            vals[root],
            nat[root].cv,
            nat[root].cc,
            alg[root].cv,
            alg[root].cc
        ));
        Ok(())
    };
    if ndim == 1 {
        csv.push_str("z,f,cv_nat,cc_nat,cv_alg,cc_alg\n");
        for k in 0..samples {
            let z = [grid(domain.dims[0], k).min(domain.dims[0].hi)];
            emit(&z, &mut csv)?;
        }
    } else {
        csv.push_str("x,y,f,cv_nat,cc_nat,cv_alg,cc_alg\n");
        for kx in 0..samples {
            for ky in 0..samples {
                let z = [
                    grid(domain.dims[0], kx).min(domain.dims[0].hi),
                    grid(domain.dims[1], ky).min(domain.dims[1].hi),
                ];
                emit(&z, &mut csv)?;
            }
        }
    }
    Ok(csv)
}

fn cmd_bench(configs: &str, n_list: &str, flags: &SolveFlags) -> Result<String, CliError> {
    let all = ["mc", "heur", "rr", "heur-rr"];
    let picked: Vec<&str> = if configs == "all" {
        all.to_vec()
    } else {
        let picked: Vec<&str> = configs.split(',').map(str::trim).collect();
        for c in &picked {
            if !all.contains(c) {
                return Err(CliError::Invalid(format!(
                    "unknown config '{c}' (choose from mc, heur, rr, heur-rr, all)"
                )));
            }
        }
        picked
    };
    let ns: Result<Vec<usize>, _> = n_list.split(',').map(|t| t.trim().parse::<usize>()).collect();
    let ns = ns.map_err(|_| CliError::Invalid(format!("bad --N list '{n_list}'")))?;
    if ns.is_empty() || ns.contains(&0) {
        return Err(CliError::Invalid(
            "--N needs positive iteration counts; use --configs mc,rr for the heuristic-off runs"
                .to_string(),
        ));
    }
    let base = flags.solver_config()?;
    let mut csv = String::new();
    csv.push_str(RunRecord::HEADER);
    csv.push('\n');
    for pf in builtins() {
        let problem = pf.build()?;
        for cname in &picked {
            let with_heur = matches!(*cname, "heur" | "heur-rr");
            let rr = if matches!(*cname, "rr" | "heur-rr") {
                RangeReduction::Full
            } else {
                RangeReduction::None
            };
            // Heuristic-off configs do not vary with N; run them once.
            let n_values: &[usize] = if with_heur { &ns } else { &[0] };
            for &n in n_values {
                let mut cfg = base.clone();
                cfg.tighten.max_iters = n;
                cfg.range_reduction = rr;
                let report = solve(&problem, &cfg);
                let record = RunRecord::from_report(&report, fingerprint(&cfg));
                csv.push_str(&record.csv_row());
                csv.push('\n');
            }
        }
    }
    Ok(csv)
}
