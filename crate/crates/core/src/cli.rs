//! The `cogia` command line.
//!
//! Exit codes: `0` success, `1` I/O, configuration or usage error, `2`
//! infeasible allocation, failed verification or oracle disagreement.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::alignment::{
    align, effective_channels, interference_report, AlignmentError, InterferenceKind,
    PrecoderReceiverSet,
};
use crate::dof::{
    closed_form_feasible, enumerate_region, oracle_registry, DofError, OracleParams,
    DEFAULT_GRID_CAP, RETRIES_PER_TRIAL,
};
use crate::export::{self, RunManifest, VerifyRow};
use crate::numerics::TolerancePolicy;
use crate::rates::{
    pcell_sum_rate, rate_region_sweep, scell_sum_rate, solver_registry, RateError, SweepPlan,
    WaterLevelSolver, DEFAULT_SOLVER,
};
use crate::scenario::{generate_channels, ChannelSet, Scenario, Seed};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_FAILED: u8 = 2;

/// Tolerance on the water-filling KKT residuals reported by `verify`.
pub const KKT_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(
    name = "cogia",
    version,
    about = "Interference alignment for a two-cell cognitive downlink"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build precoders and receivers for the configured allocation and check
    /// residual interference and water-filling optimality.
    Verify(CommonArgs),
    /// Enumerate the achievable DoF region of the configured antenna quartet.
    DofRegion(DofRegionArgs),
    /// Monte Carlo sum rates over the configured splits and power budgets.
    Rates(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "./out")]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the scenario trial count.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Only print errors.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct DofRegionArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Also run the constructive oracle and diff it against the closed form.
    #[arg(long)]
    pub constructive: bool,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

pub fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Verify(args) => verify(args),
        Command::DofRegion(args) => dof_region(args),
        Command::Rates(args) => rates(args),
    }
}

struct Session<'a> {
    args: &'a CommonArgs,
    scenario: Scenario,
    pol: TolerancePolicy,
}

impl<'a> Session<'a> {
    fn open(args: &'a CommonArgs) -> Result<Self> {
        let mut scenario = Scenario::load(&args.config)?;
        if let Some(seed) = args.seed {
            scenario.seed = Seed(seed);
        }
        if let Some(trials) = args.trials {
            anyhow::ensure!(trials > 0, "--trials must be at least 1");
            scenario.trials = trials;
        }
        Ok(Self {
            args,
            scenario,
            pol: TolerancePolicy::default(),
        })
    }

    fn say(&self, line: impl AsRef<str>) {
        if !self.args.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn solver(&self) -> Result<Box<dyn WaterLevelSolver>> {
        let name = self.scenario.waterfill.as_deref().unwrap_or(DEFAULT_SOLVER);
        Ok(solver_registry().create(name, &())?)
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = export::write_output(&self.args.out, name, contents)
            .with_context(|| format!("writing {}", self.args.out.join(name).display()))?;
        self.say(format!("wrote {}", path.display()));
        Ok(())
    }

    fn write_manifest(&self, command: &str, outputs: &[&str]) -> Result<()> {
        let manifest = RunManifest::new(
            command,
            &self.scenario,
            outputs.iter().map(|s| s.to_string()).collect(),
        );
        self.write(&format!("{command}.manifest.json"), &manifest.to_json())
    }
}

fn out_name(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

/// Aligns the configured allocation on trial `t`, redrawing channels the
/// construction rejects as degenerate.
fn draw_trial(
    sc: &Scenario,
    t: usize,
    pol: &TolerancePolicy,
) -> Result<(ChannelSet, PrecoderReceiverSet), AlignmentError> {
    let base = sc.seed.derive(t as u64);
    let mut last = None;
    for attempt in 0..=RETRIES_PER_TRIAL as u64 {
        let draw = if attempt == 0 {
            base
        } else {
            base.derive(attempt)
        };
        let ch = generate_channels(sc.dims, draw);
        match align(&ch, &sc.alloc, draw, pol) {
            Ok(prs) => return Ok((ch, prs)),
            Err(e) if e.is_structural() => return Err(e),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

fn verify(args: &CommonArgs) -> Result<u8> {
    let s = Session::open(args)?;
    let sc = &s.scenario;
    let solver = s.solver()?;
    let verdict = closed_form_feasible(&sc.dims, &sc.alloc);
    if !verdict.feasible {
        eprintln!("allocation {} is infeasible for {}:", sc.alloc, sc.dims);
        for v in &verdict.violated {
            eprintln!("  {v}");
        }
        return Ok(EXIT_FAILED);
    }
    let np = sc.noise_and_power();
    let rows = (0..sc.trials)
        .into_par_iter()
        .map(|t| {
            let (ch, prs) = draw_trial(sc, t, &s.pol)?;
            let report = interference_report(&ch, &prs, &s.pol);
            let eff = effective_channels(&ch, &prs);
            let p = pcell_sum_rate(&prs, &eff, &np, solver.as_ref(), &s.pol)?;
            let r = scell_sum_rate(&prs, &eff, &np, solver.as_ref(), &s.pol)?;
            Ok(VerifyRow {
                trial: t,
                primary_intra: report.worst_of(InterferenceKind::PrimaryIntraCell),
                secondary_intra: report.worst_of(InterferenceKind::SecondaryIntraCell),
                inter_cell: report.worst_of(InterferenceKind::InterCell),
                cross_stream: report.worst_of(InterferenceKind::CrossStream),
                worst_case: report.worst_case,
                kkt_p: p.cell.kkt.holds(KKT_TOL),
                kkt_s: r.kkt.holds(KKT_TOL),
            })
        })
        .collect::<Result<Vec<_>, RateError>>();
    let rows = match rows {
        Ok(rows) => rows,
        Err(e) => {
            eprintln!("construction failed for {} on {}: {e}", sc.alloc, sc.dims);
            return Ok(EXIT_FAILED);
        }
    };

    let worst = |f: fn(&VerifyRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let worst_case = worst(|r| r.worst_case);
    let kkt_ok = rows.iter().all(|r| r.kkt_p && r.kkt_s);
    s.say(format!(
        "{} {} over {} trials (seed {})",
        sc.dims, sc.alloc, sc.trials, sc.seed.0
    ));
    s.say(format!(
        "  primary intra-cell   {:.3e}",
        worst(|r| r.primary_intra)
    ));
    s.say(format!(
        "  secondary intra-cell {:.3e}",
        worst(|r| r.secondary_intra)
    ));
    s.say(format!(
        "  inter-cell           {:.3e}",
        worst(|r| r.inter_cell)
    ));
    s.say(format!(
        "  cross-stream         {:.3e}",
        worst(|r| r.cross_stream)
    ));
    s.say(format!(
        "  worst case           {worst_case:.3e} (tolerance {:.0e})",
        s.pol.zero_tol
    ));
    s.say(format!(
        "  water-filling KKT    {}",
        if kkt_ok { "ok" } else { "VIOLATED" }
    ));

    s.write("verify.csv", &export::verify_csv(&rows))?;
    s.write_manifest("verify", &["verify.csv"])?;
    if worst_case <= s.pol.zero_tol && kkt_ok {
        s.say("verification passed");
        Ok(EXIT_OK)
    } else {
        eprintln!("verification failed");
        Ok(EXIT_FAILED)
    }
}

fn dof_region(args: &DofRegionArgs) -> Result<u8> {
    let s = Session::open(&args.common)?;
    let sc = &s.scenario;
    let registry = oracle_registry();
    let params = OracleParams {
        trials: sc.trials,
        seed: sc.seed,
        pol: s.pol,
    };
    let enumerate = |name: &str| {
        let oracle = registry.create(name, &params)?;
        Ok::<_, anyhow::Error>(enumerate_region(
            &sc.dims,
            oracle.as_ref(),
            DEFAULT_GRID_CAP,
        ))
    };

    let closed = match enumerate("closed-form")? {
        Ok(r) => r,
        Err(e) => return dof_failure(e),
    };
    s.say(format!(
        "{}: {} feasible tuples, {} on the frontier",
        sc.dims,
        closed.points.len(),
        closed.frontier.len()
    ));
    for (dsum, dpmax) in closed.projection() {
        s.say(format!("  d_S1+d_S2 = {dsum}: max d_P1+d_P2 = {dpmax}"));
    }
    s.write("region.csv", &export::region_csv(&closed))?;
    s.write("region_projection.csv", &export::projection_csv(&closed))?;
    let mut outputs = vec!["region.csv", "region_projection.csv"];

    let mut code = EXIT_OK;
    if args.constructive {
        let constructive = match enumerate("constructive")? {
            Ok(r) => r,
            Err(e) => return dof_failure(e),
        };
        let diff = export::region_diff(&closed, &constructive);
        s.write(
            "region_constructive.csv",
            &export::region_csv(&constructive),
        )?;
        s.write("region_diff.csv", &export::diff_csv(&diff))?;
        outputs.extend(["region_constructive.csv", "region_diff.csv"]);
        if diff.is_empty() {
            s.say(format!(
                "constructive oracle agrees ({} trials per tuple)",
                sc.trials
            ));
        } else {
            eprintln!(
                "closed form and constructive oracle disagree on {} tuples, see {}",
                diff.len(),
                out_name(&s.args.out, "region_diff.csv")
            );
            code = EXIT_FAILED;
        }
    }
    s.write_manifest("dof-region", &outputs)?;
    Ok(code)
}

fn dof_failure(e: DofError) -> Result<u8> {
    eprintln!("{e}");
    Ok(EXIT_FAILED)
}

fn rates(args: &CommonArgs) -> Result<u8> {
    let s = Session::open(args)?;
    let sc = &s.scenario;
    let solver = s.solver()?;
    let (splits, budgets) = sc.sweep_grid();
    let plan = SweepPlan {
        dims: sc.dims,
        splits: &splits,
        budgets: &budgets,
        noise: sc.noise_and_power(),
        trials: sc.trials,
        seed: sc.seed,
    };
    let points = match rate_region_sweep(&plan, solver.as_ref(), &s.pol) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{e}");
            return Ok(EXIT_FAILED);
        }
    };
    s.say(format!(
        "{}: {} splits x {} budgets, {} trials, solver {}",
        sc.dims,
        splits.len(),
        budgets.len(),
        sc.trials,
        solver.name()
    ));
    for p in &points {
        s.say(format!(
            "  Qav {:>8} {}  R_P {:.4} ± {:.4}  R_S {:.4} ± {:.4}  correction power {:.3e}",
            p.qav, p.alloc, p.r_p, p.r_p_stderr, p.r_s, p.r_s_stderr, p.correction_power
        ));
    }
    s.write("rates.csv", &export::rates_csv(&points, sc.seed))?;
    s.write_manifest("rates", &["rates.csv"])?;
    Ok(EXIT_OK)
}
