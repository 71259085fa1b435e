//! Command-line pipeline: read a matrix pair, run one command, render the
//! result as JSON (`classify`, `normal-form`, `covering`) or CSV (`probe`).

use std::fmt;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use dilequiv::coverings::{
    qn_orbit_check, subordination_check, weak_counts_check, weak_equivalence_counts, CoveringKind,
    ScaleCheck, ScaleLadder,
};
use dilequiv::equivalence::{
    boundedness_probe_with, classify_pair, decide_coarsely_equivalent, decide_equivalent, epsilon,
    expansive_normal_form_with, ClassifyConfig, NormalForm, ProbeSide, MIN_PROBE_KMAX,
};
use dilequiv::linalg::{from_rows, Mat};
use dilequiv::report::{fmt_f64, to_json};
use dilequiv::{Error, Tolerances};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Classify,
    NormalForm,
    Probe,
    Covering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Side {
    TwoSided,
    Positive,
}

impl From<Side> for ProbeSide {
    fn from(s: Side) -> Self {
        match s {
            Side::TwoSided => ProbeSide::TwoSided,
            Side::Positive => ProbeSide::PositiveOnly,
        }
    }
}

/// Classify expansive dilation matrices up to equivalence and coarse
/// equivalence.
#[derive(Debug, Clone, Parser)]
#[command(name = "dilequiv", version)]
pub struct JobConfig {
    /// JSON file `{"A": [[..]], "B": [[..]]}`.
    #[arg(
        long,
        value_name = "PATH",
        conflicts_with = "inline",
        required_unless_present = "inline"
    )]
    pub input: Option<PathBuf>,
    /// The same JSON given inline.
    #[arg(long, value_name = "JSON")]
    pub inline: Option<String>,
    #[arg(long, value_enum, default_value_t = Command::Classify)]
    pub command: Command,
    #[arg(long, default_value_t = 1e-7)]
    pub tol_verdict: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol_eig: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol_jordan: f64,
    #[arg(long, default_value_t = 100)]
    pub kmax: usize,
    /// Seed for every sampled verification.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Probe side for `probe`.
    #[arg(long, value_enum, default_value_t = Side::TwoSided)]
    pub side: Side,
    /// Norm thresholds `R` for the weak-equivalence counts.
    #[arg(long = "r", value_delimiter = ',', default_values_t = [2.0, 10.0, 100.0])]
    pub r_ladder: Vec<f64>,
    /// Base index range of the covering checks.
    #[arg(long, default_value_t = 50)]
    pub range: usize,
    /// Directions sampled per subordination check.
    #[arg(long, default_value_t = dilequiv::coverings::DEFAULT_DIRECTIONS)]
    pub directions: usize,
    /// CSV file for the count table of `covering` (`i,count,witness_j_list`).
    #[arg(long, value_name = "PATH")]
    pub table: Option<PathBuf>,
}

impl JobConfig {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            eig: self.tol_eig,
            jordan: self.tol_jordan,
            verdict: self.tol_verdict,
            ..Tolerances::default()
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        self.tolerances().validate().map_err(CliError::from)?;
        if self.kmax < MIN_PROBE_KMAX {
            return Err(CliError::Input(format!(
                "--kmax must be at least {MIN_PROBE_KMAX}"
            )));
        }
        if self.range < 50 {
            return Err(CliError::Input("--range must be at least 50".into()));
        }
        if self.directions == 0 {
            return Err(CliError::Input("--directions must be positive".into()));
        }
        if self.r_ladder.is_empty() || self.r_ladder.iter().any(|r| !(*r > 1.0)) {
            return Err(CliError::Input("every --r value must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Input(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "invalid input: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairInput {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B", default)]
    b: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct Pair {
    pub a: Mat,
    pub b: Option<Mat>,
}

impl Pair {
    fn both(&self) -> Result<(&Mat, &Mat), CliError> {
        self.b
            .as_ref()
            .map(|b| (&self.a, b))
            .ok_or_else(|| CliError::Input("this command needs both \"A\" and \"B\"".into()))
    }
}

/// Parses `{"A": .., "B": ..}`; syntax errors carry line and column.
pub fn parse_pair(text: &str) -> Result<Pair, CliError> {
    let raw: PairInput = serde_json::from_str(text).map_err(|e| CliError::Input(e.to_string()))?;
    let a = from_rows(&raw.a).map_err(|e| CliError::Input(format!("A: {e}")))?;
    let b = raw
        .b
        .map(|rows| from_rows(&rows).map_err(|e| CliError::Input(format!("B: {e}"))))
        .transpose()?;
    Ok(Pair { a, b })
}

fn read_pair(config: &JobConfig) -> Result<Pair, CliError> {
    let text = match (&config.input, &config.inline) {
        (_, Some(s)) => s.clone(),
        (Some(p), None) => fs::read_to_string(p)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", p.display())))?,
        (None, None) => {
            return Err(CliError::Input(
                "one of --input or --inline is required".into(),
            ))
        }
    };
    parse_pair(&text)
}

/// The main document of a run and, for `covering`, the count table.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub body: String,
    pub table: Option<String>,
}

pub fn run(config: &JobConfig) -> Result<Rendered, CliError> {
    config.validate()?;
    let pair = read_pair(config)?;
    let body = |body| Rendered { body, table: None };
    match config.command {
        Command::Classify => run_classify(config, &pair).map(body),
        Command::NormalForm => run_normal_form(config, &pair).map(body),
        Command::Probe => run_probe(config, &pair).map(body),
        Command::Covering => run_covering(config, &pair),
    }
}

pub fn run_classify(config: &JobConfig, pair: &Pair) -> Result<String, CliError> {
    let (a, b) = pair.both()?;
    let cfg = ClassifyConfig {
        tolerances: config.tolerances(),
        k_max: config.kmax,
    };
    Ok(to_json(&classify_pair(a, b, &cfg)?))
}

#[derive(Serialize)]
struct NormalFormReport {
    #[serde(rename = "A")]
    a: NormalForm,
    #[serde(rename = "B", skip_serializing_if = "Option::is_none")]
    b: Option<NormalForm>,
}

pub fn run_normal_form(config: &JobConfig, pair: &Pair) -> Result<String, CliError> {
    let tol = config.tolerances();
    let report = NormalFormReport {
        a: expansive_normal_form_with(&pair.a, &tol)?,
        b: pair
            .b
            .as_ref()
            .map(|b| expansive_normal_form_with(b, &tol))
            .transpose()?,
    };
    Ok(to_json(&report))
}

/// `k,log_norm` rows, then `#` lines with epsilon and the classification.
pub fn run_probe(config: &JobConfig, pair: &Pair) -> Result<String, CliError> {
    let (a, b) = pair.both()?;
    let series =
        boundedness_probe_with(a, b, config.kmax, config.side.into(), &config.tolerances())?;
    let mut out = String::from("k,log_norm\n");
    for (k, v) in series.ks.iter().zip(&series.log_norms) {
        out.push_str(&format!("{k},{}\n", fmt_f64(*v)));
    }
    out.push_str(&format!("# epsilon: {}\n", fmt_f64(series.epsilon)));
    for fit in &series.fits {
        out.push_str(&format!(
            "# fit direction={} window={}..{} slope_log_k={} slope_k={}: {}\n",
            fit.direction,
            fit.window.0,
            fit.window.1,
            fmt_f64(fit.slope_log_k),
            fmt_f64(fit.slope_k),
            fit.classification
        ));
    }
    out.push_str(&format!("# classification: {}\n", series.classification));
    Ok(out)
}

#[derive(Serialize)]
struct CountCheck {
    r: f64,
    side: ProbeSide,
    check: ScaleCheck,
}

#[derive(Serialize)]
struct CoveringReport {
    epsilon: f64,
    seed: u64,
    equivalent: bool,
    coarse_equivalent: bool,
    weak_counts: Vec<CountCheck>,
    subordination_homogeneous: ScaleCheck,
    subordination_inhomogeneous: ScaleCheck,
    quasi_norm_orbits: ScaleCheck,
    /// Two-sided counts, homogeneous subordination and the quasi-norm
    /// orbits all bounded exactly when `equivalent`; positive-side counts
    /// bounded exactly when `coarse_equivalent`.
    indicators_agree: bool,
}

/// Finite-scale covering indicators next to the normal-form verdicts.
pub fn run_covering(config: &JobConfig, pair: &Pair) -> Result<Rendered, CliError> {
    let (a, b) = pair.both()?;
    let tol = config.tolerances();
    let ladder = ScaleLadder {
        range: config.range,
        ..ScaleLadder::default()
    };
    let sub_ladder = ScaleLadder {
        range: 16,
        ..ladder
    };
    let equivalent = decide_equivalent(a, b, tol.verdict)?;
    let coarse_equivalent = decide_coarsely_equivalent(a, b, tol.verdict)?;
    let mut weak_counts = Vec::new();
    let mut table = String::new();
    for &r in &config.r_ladder {
        for side in [ProbeSide::TwoSided, ProbeSide::PositiveOnly] {
            weak_counts.push(CountCheck {
                r,
                side,
                check: weak_counts_check(a, b, r, &ladder, side)?,
            });
        }
        let counts = weak_equivalence_counts(a, b, r, config.range, ProbeSide::TwoSided)?;
        table.push_str(&format!("# R={}\n", fmt_f64(r)));
        table.push_str(&counts.to_csv());
    }
    let sub = |kind| subordination_check(a, b, kind, &sub_ladder, config.directions, config.seed);
    let subordination_homogeneous = sub(CoveringKind::Homogeneous)?;
    let subordination_inhomogeneous = sub(CoveringKind::Inhomogeneous)?;
    let quasi_norm_orbits = qn_orbit_check(a, b, 25, 2, 100, config.seed)?;
    let indicators_agree = weak_counts.iter().all(|c| {
        c.check.bounded
            == match c.side {
                ProbeSide::TwoSided => equivalent,
                ProbeSide::PositiveOnly => coarse_equivalent,
            }
    }) && subordination_homogeneous.bounded == equivalent
        && quasi_norm_orbits.bounded == equivalent;
    let report = CoveringReport {
        epsilon: epsilon(a, b)?,
        seed: config.seed,
        equivalent,
        coarse_equivalent,
        weak_counts,
        subordination_homogeneous,
        subordination_inhomogeneous,
        quasi_norm_orbits,
        indicators_agree,
    };
    Ok(Rendered {
        body: to_json(&report),
        table: Some(table),
    })
}

/// Runs a job and writes its outputs; returns the process exit code.
pub fn execute(config: &JobConfig) -> i32 {
    let result = run(config).and_then(|r| {
        if let (Some(path), Some(table)) = (&config.table, &r.table) {
            fs::write(path, table).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        }
        match &config.out {
            Some(path) => fs::write(path, &r.body)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
            None => {
                print!("{}", r.body);
                Ok(())
            }
        }
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
