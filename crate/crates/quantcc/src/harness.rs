//! Experiment harness: single solves, benchmark grids, portfolio optimality
//! gaps, and step-size sweeps, all emitting CSV rows with full seed
//! provenance so every number is reproducible from the command line.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::alm::{alm_solve, validate_solution, AlmConfig, Schedule};
use crate::error::{Error, Result};
use crate::problems::{make_joint_chance, make_nonconvex1d_with, make_portfolio, ProblemSpec};
use crate::sampling::derive_seed;
use crate::trust_region::{BetaMode, GradientEstimator, SampleSchedule, TrParams};

/// Quantile-gradient estimator selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Fd,
    Smoothing,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Fd => write!(f, "fd"),
            Method::Smoothing => write!(f, "smoothing"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fd" | "finite-difference" => Ok(Method::Fd),
            "smoothing" => Ok(Method::Smoothing),
            other => Err(Error::InvalidArgument(format!(
                "unknown method '{other}' (expected fd or smoothing)"
            ))),
        }
    }
}

/// Benchmark family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExampleId {
    Nonconvex1d,
    Portfolio,
    JointChance,
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExampleId::Nonconvex1d => write!(f, "nonconvex1d"),
            ExampleId::Portfolio => write!(f, "portfolio"),
            ExampleId::JointChance => write!(f, "joint-chance"),
        }
    }
}

impl FromStr for ExampleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nonconvex1d" => Ok(ExampleId::Nonconvex1d),
            "portfolio" => Ok(ExampleId::Portfolio),
            "joint-chance" | "jointchance" => Ok(ExampleId::JointChance),
            other => Err(Error::InvalidArgument(format!(
                "unknown example '{other}' (expected nonconvex1d, portfolio, or joint-chance)"
            ))),
        }
    }
}

/// Every tunable of a single solve, flat so it can round-trip through the
/// key=value config file and CLI overrides.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverSettings {
    pub alpha: f64,
    /// Batch size for the inner solver (and the multiplier update).
    pub n_samples: usize,
    /// Finite-difference step.
    pub beta: f64,
    /// Smoothing bandwidth; 0 selects the adaptive default.
    pub epsilon_smoothing: f64,
    /// Out-of-sample validation size.
    pub n_val: usize,
    pub eta1: f64,
    pub eta2: f64,
    pub gamma_inc: f64,
    pub gamma_dec: f64,
    pub delta_init: f64,
    /// Inner termination radius (fixed schedule).
    pub r_term: f64,
    /// Feasibility tolerance (fixed schedule).
    pub eta_tol: f64,
    pub rho_init: f64,
    /// Penalty ceiling.
    pub rho_max: f64,
    pub theta_rho: f64,
    pub mu_max: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Fit points for the model Hessian; 0 selects the dimension-based
    /// default.
    pub fit_points: usize,
    /// "fixed" or "growth" sampling.
    pub sample_mode: String,
    /// Initial size for growth-mode sampling.
    pub n_growth_init: usize,
    /// Joint-chance level U.
    pub big_u: f64,
    /// Number of constraint rows m in the joint-chance family.
    pub joint_m: usize,
    /// Noise variances of the univariate benchmark.
    pub nc1d_var1: f64,
    pub nc1d_var2: f64,
    /// Inert provenance knobs.
    pub epsilon_model: f64,
    pub theta_r: f64,
    pub theta_mu: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            alpha: 0.05,
            n_samples: 10_000,
            beta: 1e-3,
            epsilon_smoothing: 0.0,
            n_val: 100_000,
            eta1: 0.1,
            eta2: 0.25,
            gamma_inc: 2.0,
            gamma_dec: 0.5,
            delta_init: 1.0,
            r_term: 1e-5,
            eta_tol: 1e-5,
            rho_init: 10.0,
            rho_max: 1e4,
            theta_rho: 2.0,
            mu_max: 1e4,
            max_outer: 50,
            max_inner: 10_000,
            fit_points: 0,
            sample_mode: "fixed".into(),
            n_growth_init: 1_000,
            big_u: 100.0,
            joint_m: 5,
            nc1d_var1: 3.0,
            nc1d_var2: 144.0,
            epsilon_model: 0.1,
            theta_r: 0.5,
            theta_mu: 0.5,
        }
    }
}

impl SolverSettings {
    /// Parses a flat `key=value` config file (one pair per line, `#` starts
    /// a comment) on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut settings = SolverSettings::default();
        let text = fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("{}:{}: expected key=value", path.display(), lineno + 1))
            })?;
            settings.set(key.trim(), value.trim())?;
        }
        Ok(settings)
    }

    /// Sets one field by its config key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse::<T>().map_err(|_| {
                Error::InvalidArgument(format!("invalid value '{value}' for key '{key}'"))
            })
        }
        match key {
            "alpha" => self.alpha = num(key, value)?,
            "n_samples" => self.n_samples = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "epsilon_smoothing" => self.epsilon_smoothing = num(key, value)?,
            "n_val" => self.n_val = num(key, value)?,
            "eta1" => self.eta1 = num(key, value)?,
            "eta2" => self.eta2 = num(key, value)?,
            "gamma_inc" => self.gamma_inc = num(key, value)?,
            "gamma_dec" => self.gamma_dec = num(key, value)?,
            "delta_init" => self.delta_init = num(key, value)?,
            "r_term" => self.r_term = num(key, value)?,
            "eta_tol" => self.eta_tol = num(key, value)?,
            "rho_init" => self.rho_init = num(key, value)?,
            "rho_max" => self.rho_max = num(key, value)?,
            "theta_rho" => self.theta_rho = num(key, value)?,
            "mu_max" => self.mu_max = num(key, value)?,
            "max_outer" => self.max_outer = num(key, value)?,
            "max_inner" => self.max_inner = num(key, value)?,
            "fit_points" => self.fit_points = num(key, value)?,
            "sample_mode" => match value {
                "fixed" | "growth" => self.sample_mode = value.into(),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "invalid sample_mode '{other}' (expected fixed or growth)"
                    )))
                }
            },
            "n_growth_init" => self.n_growth_init = num(key, value)?,
            "big_u" => self.big_u = num(key, value)?,
            "joint_m" => self.joint_m = num(key, value)?,
            "nc1d_var1" => self.nc1d_var1 = num(key, value)?,
            "nc1d_var2" => self.nc1d_var2 = num(key, value)?,
            "epsilon_model" => self.epsilon_model = num(key, value)?,
            "theta_r" => self.theta_r = num(key, value)?,
            "theta_mu" => self.theta_mu = num(key, value)?,
            other => return Err(Error::InvalidArgument(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    fn sample_schedule(&self) -> SampleSchedule {
        if self.sample_mode == "growth" {
            SampleSchedule::Growth { initial: self.n_growth_init, max: self.n_samples }
        } else {
            SampleSchedule::Fixed(self.n_samples)
        }
    }

    /// Assembles the outer-loop configuration for the given estimator and
    /// seed.
    pub fn to_alm_config(&self, method: Method, seed: u64) -> AlmConfig {
        let estimator = match method {
            Method::Fd => GradientEstimator::FiniteDifference,
            Method::Smoothing => GradientEstimator::Smoothing {
                epsilon: (self.epsilon_smoothing > 0.0).then_some(self.epsilon_smoothing),
            },
        };
        AlmConfig {
            theta_rho: self.theta_rho,
            mu_max: self.mu_max,
            rho_init: self.rho_init,
            rho_max: self.rho_max,
            r_schedule: Schedule::Fixed(self.r_term),
            eta_schedule: Schedule::Fixed(self.eta_tol),
            validation_samples: self.n_samples,
            max_outer: self.max_outer,
            stall_tol: 1e-6,
            epsilon: self.epsilon_model,
            theta_r: self.theta_r,
            theta_mu: self.theta_mu,
            trust_region: TrParams {
                eta1: self.eta1,
                eta2: self.eta2,
                gamma_inc: self.gamma_inc,
                gamma_dec: self.gamma_dec,
                delta_init: self.delta_init,
                beta: BetaMode::Constant(self.beta),
                samples: self.sample_schedule(),
                estimator,
                fit_points: (self.fit_points > 0).then_some(self.fit_points),
                max_iterations: self.max_inner,
            },
            seed,
        }
    }

    /// Builds the benchmark instance this settings block describes.
    pub fn build_problem(&self, example: ExampleId, dim: usize) -> Result<ProblemSpec> {
        let (problem, _) = match example {
            ExampleId::Nonconvex1d => {
                make_nonconvex1d_with(self.alpha, self.nc1d_var1, self.nc1d_var2)?
            }
            ExampleId::Portfolio => make_portfolio(dim, self.alpha)?,
            ExampleId::JointChance => make_joint_chance(dim, self.joint_m, self.big_u, self.alpha)?,
        };
        Ok(problem)
    }
}

/// One result row; mirrors the benchmark-table columns plus provenance.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub example: String,
    pub dim: usize,
    pub alpha: f64,
    pub n_samples: usize,
    pub beta: f64,
    pub method: String,
    pub replication: usize,
    pub time_s: f64,
    pub objective: f64,
    pub violation: f64,
    pub sigma: f64,
    pub seed: u64,
    pub status: String,
}

impl RunReport {
    /// Stable CSV header; `time_s` is informational and excluded from any
    /// reproducibility comparison.
    pub const CSV_HEADER: &'static str =
        "example,dim,alpha,n_samples,beta,method,replication,time_s,objective,violation,sigma,seed,status";
}

/// Runs one instance end to end: outer solve plus out-of-sample validation.
pub fn solve_instance(
    example: ExampleId,
    dim: usize,
    settings: &SolverSettings,
    method: Method,
    seed: u64,
) -> Result<RunReport> {
    let started = Instant::now();
    let problem = settings.build_problem(example, dim)?;
    let config = settings.to_alm_config(method, seed);
    let result = alm_solve(&problem, &problem.x0, &config)?;
    let validation = validate_solution(
        &problem,
        &result.x,
        settings.n_val,
        settings.alpha,
        derive_seed(seed, u64::MAX),
    )?;
    Ok(RunReport {
        example: example.to_string(),
        dim: problem.dim,
        alpha: settings.alpha,
        n_samples: settings.n_samples,
        beta: settings.beta,
        method: method.to_string(),
        replication: 0,
        time_s: started.elapsed().as_secs_f64(),
        objective: validation.objective,
        violation: validation.violation,
        sigma: result.final_sigma(),
        seed,
        status: format!("{:?}", result.status).to_lowercase(),
    })
}

/// A full experiment grid. Cells are the cartesian product of the listed
/// axes; each cell runs `replications` times with seeds derived from the
/// master seed by cell index.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentPlan {
    pub examples: Vec<ExampleId>,
    pub dims: Vec<usize>,
    pub alphas: Vec<f64>,
    pub sample_sizes: Vec<usize>,
    pub betas: Vec<f64>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub master_seed: u64,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.examples.is_empty()
            || self.dims.is_empty()
            || self.alphas.is_empty()
            || self.sample_sizes.is_empty()
            || self.betas.is_empty()
            || self.methods.is_empty()
            || self.replications == 0
        {
            return Err(Error::InvalidArgument("experiment grid must be nonempty".into()));
        }
        Ok(())
    }

    fn cells(&self) -> Vec<(ExampleId, usize, f64, usize, f64, Method, usize)> {
        let mut cells = Vec::new();
        for &example in &self.examples {
            for &dim in &self.dims {
                for &alpha in &self.alphas {
                    for &n in &self.sample_sizes {
                        for &beta in &self.betas {
                            for &method in &self.methods {
                                for rep in 0..self.replications {
                                    cells.push((example, dim, alpha, n, beta, method, rep));
                                }
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}

/// Executes the grid (cells in parallel, each with an isolated derived seed)
/// and returns rows in plan order. Per-cell failures become rows with an
/// error status instead of aborting the run.
pub fn run_plan(plan: &ExperimentPlan, base: &SolverSettings) -> Result<Vec<RunReport>> {
    plan.validate()?;
    let cells = plan.cells();
    let rows: Vec<RunReport> = cells
        .par_iter()
        .enumerate()
        .map(|(index, &(example, dim, alpha, n, beta, method, rep))| {
            let mut settings = base.clone();
            settings.alpha = alpha;
            settings.n_samples = n;
            settings.beta = beta;
            let seed = derive_seed(plan.master_seed, index as u64);
            match solve_instance(example, dim, &settings, method, seed) {
                Ok(mut report) => {
                    report.replication = rep;
                    report
                }
                Err(err) => RunReport {
                    example: example.to_string(),
                    dim,
                    alpha,
                    n_samples: n,
                    beta,
                    method: method.to_string(),
                    replication: rep,
                    time_s: 0.0,
                    objective: f64::NAN,
                    violation: f64::NAN,
                    sigma: f64::NAN,
                    seed,
                    status: format!("error: {err}"),
                },
            }
        })
        .collect();
    Ok(rows)
}

/// Writes rows as CSV.
pub fn write_reports_csv<W: std::io::Write>(rows: &[RunReport], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes the companion metadata file (`<output>.meta.json`) recording the
/// full plan and settings.
pub fn write_plan_metadata(path: &Path, plan: &ExperimentPlan, settings: &SolverSettings) -> Result<()> {
    let meta = serde_json::json!({
        "plan": plan,
        "settings": settings,
    });
    let mut meta_path = path.as_os_str().to_owned();
    meta_path.push(".meta.json");
    fs::write(meta_path, serde_json::to_string_pretty(&meta).expect("serializable metadata"))?;
    Ok(())
}

/// One optimality-gap row for the portfolio family.
#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub dim: usize,
    pub alpha: f64,
    /// Optimum of the convex reformulation.
    pub opt_objective: f64,
    /// Objective found by the solver (reported sense).
    pub best_objective: f64,
    /// `(opt - best) / opt * 100`.
    pub gap_percent: f64,
    pub violation: f64,
    pub seed: u64,
}

/// Runs solver and convex oracle for each `(dim, alpha)` portfolio cell.
/// With `replications > 1` the best objective is the median across derived
/// seeds.
pub fn run_gapcheck(
    dims: &[usize],
    alphas: &[f64],
    base: &SolverSettings,
    method: Method,
    master_seed: u64,
    replications: usize,
) -> Result<Vec<GapReport>> {
    if dims.is_empty() || alphas.is_empty() || replications == 0 {
        return Err(Error::InvalidArgument("gapcheck grid must be nonempty".into()));
    }
    let mut cells = Vec::new();
    for &dim in dims {
        for &alpha in alphas {
            cells.push((dim, alpha));
        }
    }
    cells
        .par_iter()
        .enumerate()
        .map(|(index, &(dim, alpha))| {
            let mut settings = base.clone();
            settings.alpha = alpha;
            let (_, oracle) = make_portfolio(dim, alpha)?;
            let opt = oracle
                .optimal_objective
                .expect("portfolio oracle always carries an optimum");
            let mut runs: Vec<(f64, f64, u64)> = (0..replications)
                .map(|rep| {
                    let seed = derive_seed(master_seed, (index * replications + rep) as u64);
                    let report = solve_instance(ExampleId::Portfolio, dim, &settings, method, seed)?;
                    Ok((report.objective, report.violation, seed))
                })
                .collect::<Result<Vec<_>>>()?;
            runs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (best, violation, seed) = runs[runs.len() / 2];
            Ok(GapReport {
                dim,
                alpha,
                opt_objective: opt,
                best_objective: best,
                gap_percent: (opt - best) / opt * 100.0,
                violation,
                seed,
            })
        })
        .collect()
}

/// Writes gap rows as CSV.
pub fn write_gaps_csv<W: std::io::Write>(rows: &[GapReport], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Step-size sweep: one finite-difference solve per `(n_samples, beta)` pair
/// on a single instance. Returns rows grouped by sample size in input order.
pub fn run_beta_sweep(
    example: ExampleId,
    dim: usize,
    sample_sizes: &[usize],
    betas: &[f64],
    base: &SolverSettings,
    master_seed: u64,
) -> Result<Vec<RunReport>> {
    if sample_sizes.is_empty() || betas.is_empty() {
        return Err(Error::InvalidArgument("sweep grid must be nonempty".into()));
    }
    let plan = ExperimentPlan {
        examples: vec![example],
        dims: vec![dim],
        alphas: vec![base.alpha],
        sample_sizes: sample_sizes.to_vec(),
        betas: betas.to_vec(),
        methods: vec![Method::Fd],
        replications: 1,
        master_seed,
    };
    run_plan(&plan, base)
}

/// Groups sweep rows as `beta -> objective` per sample size, a convenience
/// for trend checks.
pub fn sweep_objectives(rows: &[RunReport]) -> BTreeMap<usize, Vec<(f64, f64)>> {
    let mut grouped: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for row in rows {
        grouped
            .entry(row.n_samples)
            .or_default()
            .push((row.beta, row.objective));
    }
    grouped
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn method_and_example_parsing() {
        assert_eq!("fd".parse::<Method>().unwrap(), Method::Fd);
        assert_eq!("smoothing".parse::<Method>().unwrap(), Method::Smoothing);
        assert!("explicit".parse::<Method>().is_err());
        assert_eq!("portfolio".parse::<ExampleId>().unwrap(), ExampleId::Portfolio);
        assert!("bogus".parse::<ExampleId>().is_err());
    }

    #[test]
    fn config_file_roundtrip() {
        let dir = std::env::temp_dir();
        let path = dir.join("quantcc-settings-test.conf");
        let mut file = fs::File::create(&path).unwrap();
        writeln!(file, "# comment\nalpha = 0.1\nn_samples=5000\nbeta=0.005  # inline").unwrap();
        drop(file);
        let settings = SolverSettings::from_file(&path).unwrap();
        assert_eq!(settings.alpha, 0.1);
        assert_eq!(settings.n_samples, 5000);
        assert_eq!(settings.beta, 0.005);
        fs::remove_file(&path).ok();
    }

    #[test]
    fn unknown_config_key_rejected() {
        let mut settings = SolverSettings::default();
        assert!(settings.set("not_a_key", "1").is_err());
        assert!(settings.set("alpha", "abc").is_err());
        assert!(settings.set("sample_mode", "magic").is_err());
    }

    #[test]
    fn empty_grid_rejected() {
        let plan = ExperimentPlan {
            examples: vec![],
            dims: vec![1],
            alphas: vec![0.1],
            sample_sizes: vec![100],
            betas: vec![1e-3],
            methods: vec![Method::Fd],
            replications: 1,
            master_seed: 0,
        };
        assert!(plan.validate().is_err());
    }

    #[test]
    fn tiny_plan_produces_expected_rows() {
        let plan = ExperimentPlan {
            examples: vec![ExampleId::Nonconvex1d],
            dims: vec![1],
            alphas: vec![0.1],
            sample_sizes: vec![500],
            betas: vec![1e-3],
            methods: vec![Method::Fd, Method::Smoothing],
            replications: 2,
            master_seed: 17,
        };
        let mut base = SolverSettings::default();
        base.n_val = 1_000;
        base.max_outer = 3;
        let rows = run_plan(&plan, &base).unwrap();
        assert_eq!(rows.len(), 4);
        let mut buf = Vec::new();
        write_reports_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(RunReport::CSV_HEADER));
        assert_eq!(text.lines().count(), 5);
    }
}
