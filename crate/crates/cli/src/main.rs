//! Command-line front end for the quota-mechanism lab.
//!
//! Exit codes: 0 when every asserted bound holds, 2 when a bound check fails,
//! 1 on usage or domain errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use quotalab::dynamic::{traces_to_csv, DynamicReport};
use quotalab::lab::{self, reports_to_csv, FixtureParams, FIXTURE_NAMES};
use quotalab::mechanism::{error_report, scan_expost};
use quotalab::monotonicity::{ic_violation, interim_classes};
use quotalab::variants::js::js_scan;
use quotalab::*;

#[derive(Parser)]
#[command(name = "quotalab", version, about = "Quota mechanisms: equilibria, error bounds and experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Write the full result here (.csv where the command has a table, JSON otherwise)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Tolerance for bound and best-response checks
    #[arg(long, global = true, default_value_t = TOL.bound)]
    tol: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Check cyclical monotonicity of every agent's reduced cost matrix
    CheckCm { env: PathBuf },
    /// Rochet transfers that make truth-telling optimal in the one-shot problem
    Transfers { env: PathBuf },
    /// Solve a finite transport instance {cost, p, q[, set, direction]}
    SolveOt { instance: PathBuf },
    /// Play the equilibrium at one type profile
    Equilibrium {
        env: PathBuf,
        #[arg(long)]
        k: usize,
        /// Type labels per problem, agents separated by ';' (e.g. "H,L,H;L,L,H")
        #[arg(long)]
        theta: String,
    },
    /// Exhaustive ex-post bound check over all type vectors for K = 1..=k-max
    Scan {
        env: PathBuf,
        #[arg(long)]
        k_max: usize,
    },
    /// Monte Carlo expected error against the expected-error bound
    Simulate {
        env: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Zero the runtime column so CSV output is byte-reproducible
        #[arg(long)]
        no_timing: bool,
    },
    /// Distance to the misspecification-robust SCF as K grows
    Robustness {
        env: PathBuf,
        /// True type distributions, masses separated by ',' and agents by ';'
        #[arg(long)]
        pi: String,
        #[arg(long, value_delimiter = ',', default_value = "8,32,128")]
        k_list: Vec<usize>,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare with the JS variant: error bounds and interim utilities
    CompareJs {
        env: PathBuf,
        #[arg(long)]
        k: usize,
    },
    /// Check a finite type space and verify the equilibrium on it
    Typespace {
        ts: PathBuf,
        /// Report the exchangeability and independence flags
        #[arg(long, conflicts_with = "verify")]
        check: bool,
        /// Verify bounds and interim best responses (needs --env)
        #[arg(long)]
        verify: bool,
        /// Environment whose payoff types the type space refers to
        #[arg(long)]
        env: Option<PathBuf>,
    },
    /// Single-agent discounted dynamic mechanism
    Dynamic {
        env: PathBuf,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 32)]
        resolution: usize,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        /// Defaults to the smallest T with beta^T <= 0.01
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = PolicyArg::Greedy)]
        policy: PolicyArg,
        /// Write per-period traces of the first paths to this CSV
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        trace_paths: usize,
    },
    /// Build a named fixture environment
    Fixture {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(FIXTURE_NAMES))]
        name: String,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        theta_l: Option<f64>,
        #[arg(long)]
        theta_m: Option<f64>,
        #[arg(long)]
        theta_h: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        /// Print the environment JSON
        #[arg(long)]
        emit: bool,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, PartialEq, Eq, Debug)]
enum PolicyArg {
    Greedy,
    Truthful,
    Counterexample,
}

/// Did every asserted check hold.
type Verdict = anyhow::Result<bool>;

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_env(path: &Path) -> anyhow::Result<(Environment, SocialChoiceFunction)> {
    Ok(EnvFile::from_json(&read(path)?)?)
}

fn mechanism(path: &Path, k: usize) -> anyhow::Result<QuotaMechanism> {
    let (env, scf) = load_env(path)?;
    Ok(QuotaMechanism::from_env(env, scf, k)?)
}

fn write_out(common: &Common, value: &impl Serialize, table: Option<String>) -> anyhow::Result<()> {
    let Some(path) = &common.out else {
        return Ok(());
    };
    let is_csv = path.extension().is_some_and(|e| e == "csv");
    let text = match (is_csv, table) {
        (true, Some(t)) => t,
        (true, None) => bail!("this command has no CSV output; use a .json path"),
        (false, _) => serde_json::to_string_pretty(value)? + "\n",
    };
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_floats(s: &str) -> anyhow::Result<Vec<Vec<f64>>> {
    s.split(';')
        .map(|agent| {
            agent
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow!("bad number {v:?}: {e}")))
                .collect()
        })
        .collect()
}

fn parse_theta(s: &str, env: &Environment) -> anyhow::Result<Vec<TypeVector>> {
    let parts: Vec<&str> = s.split(';').collect();
    if parts.len() != env.n() {
        bail!("--theta has {} agents, the environment has {}", parts.len(), env.n());
    }
    parts
        .iter()
        .zip(&env.agents)
        .map(|(p, a)| {
            let labels: Vec<&str> = p.split(',').map(str::trim).collect();
            Ok(TypeVector::from_labels(&labels, &a.types)?)
        })
        .collect()
}

fn check_cm(c: &Common, path: &Path) -> Verdict {
    let (env, scf) = load_env(path)?;
    let q = env.quotas();
    let mut ok = true;
    let mut agents = Vec::new();
    for i in 0..env.n() {
        let cost = agent_cost_matrix(&env, &scf, &q, i)?;
        let weak = is_cyclically_monotone(&cost)?;
        let classes = interim_classes(&env, &scf, &q, i);
        let strict = is_strictly_cyclically_monotone(&cost, &classes)?;
        println!(
            "agent {i}: cyclically monotone: {}; strictly: {}",
            weak.holds, strict.holds
        );
        if let Some(w) = &weak.witness {
            println!("  violating cycle {:?} with slack {:.3e}", w.labels, w.slack);
        }
        ok &= weak.holds;
        agents.push(json!({ "agent": i, "weak": weak, "strict": strict }));
    }
    write_out(c, &agents, None)?;
    Ok(ok)
}

fn transfers(c: &Common, path: &Path) -> Verdict {
    let (env, scf) = load_env(path)?;
    let q = env.quotas();
    let mut ok = true;
    let mut out = Vec::new();
    for i in 0..env.n() {
        let cost = agent_cost_matrix(&env, &scf, &q, i)?;
        match rochet_transfers(&cost) {
            Ok(t) => {
                let gap = ic_violation(&cost, &t);
                println!("agent {i}:");
                for (l, v) in t.labels.iter().zip(&t.values) {
                    println!("  {l:>8} {:>12.6}", v + 0.0);
                }
                println!("  largest gain from misreporting: {gap:.3e}");
                ok &= gap <= c.tol;
                out.push(json!({ "agent": i, "transfers": t, "ic_violation": gap }));
            }
            Err(Error::NotMonotone { cycle, slack, .. }) => {
                println!("agent {i}: not cyclically monotone, cycle {cycle:?} slack {slack:.3e}");
                ok = false;
                out.push(json!({ "agent": i, "cycle": cycle, "slack": slack }));
            }
            Err(e) => return Err(e.into()),
        }
    }
    write_out(c, &out, None)?;
    Ok(ok)
}

#[derive(Deserialize)]
struct OtInstance {
    cost: Vec<Vec<f64>>,
    p: Vec<f64>,
    q: Vec<f64>,
    /// "diagonal" to extremize the diagonal among optimal couplings
    #[serde(default)]
    set: Option<String>,
    /// "max" (default) or "min"
    #[serde(default)]
    direction: Option<String>,
}

fn solve_ot_cmd(c: &Common, path: &Path) -> Verdict {
    let inst: OtInstance = serde_json::from_str(&read(path)?).context("transport instance JSON")?;
    let cost = CostMatrix::from_table(inst.cost)?;
    let (value, coupling) = match inst.set.as_deref() {
        None => {
            let s = solve_ot(&cost, &inst.p, &inst.q)?;
            (s.value, s.coupling)
        }
        Some("diagonal") => {
            if !cost.is_square() {
                bail!("the diagonal needs a square cost matrix");
            }
            let dir = match inst.direction.as_deref() {
                None | Some("max") => Extremum::Max,
                Some("min") => Extremum::Min,
                Some(d) => bail!("unknown direction {d:?}"),
            };
            let s = optimal_mass_on_set(&cost, &inst.p, &inst.q, &PairSet::diagonal(cost.nrows()), dir)?;
            (s.value, s.coupling)
        }
        Some(s) => bail!("unknown set {s:?}; only \"diagonal\" is supported"),
    };
    println!("value {value:.9}");
    for row in &coupling.joint {
        println!("  {}", row.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" "));
    }
    write_out(c, &json!({ "value": value, "coupling": coupling }), None)?;
    Ok(true)
}

fn equilibrium(c: &Common, path: &Path, k: usize, theta: &str) -> Verdict {
    let mech = mechanism(path, k)?;
    let theta = parse_theta(theta, &mech.env)?;
    let strat = EquilibriumStrategy::diagonal_max(&mech);
    let pl = play(&mech, &strat, &theta)?;
    let rep = error_report(&mech, &theta, &pl.outcomes);
    for (kk, o) in pl.outcomes.iter().enumerate() {
        let lot: Vec<String> = mech
            .env
            .decisions
            .iter()
            .zip(o)
            .filter(|(_, &p)| p > 1e-12)
            .map(|(d, p)| format!("{p:.4} {d}"))
            .collect();
        println!("problem {kk}: {}  (tv {:.4})", lot.join(" + "), rep.per_problem_tv[kk]);
    }
    println!("average error {:.6}, bound {:.6}", rep.average, rep.bound_rhs);
    if let Some(r) = rep.refined_rhs {
        println!("refined bound {r:.6}");
    }
    if !rep.guaranteed {
        println!("note: some agent's diagonal is not cyclically monotone; the bound is not guaranteed");
    }
    let ok = rep.within_bound(c.tol);
    write_out(c, &json!({ "play": pl, "error": rep }), None)?;
    Ok(ok)
}

fn scan(c: &Common, path: &Path, k_max: usize) -> Verdict {
    let (env, scf) = load_env(path)?;
    let mut ok = true;
    let mut reports = Vec::new();
    for k in 1..=k_max {
        let mech = QuotaMechanism::from_env(env.clone(), scf.clone(), k)?;
        let strat = EquilibriumStrategy::diagonal_max(&mech);
        let r = scan_expost(&mech, &strat, c.tol)?;
        println!(
            "K={k}: {} vectors, {} violations, worst slack {:.3e}",
            r.checked, r.violations, r.worst_slack
        );
        ok &= r.violations == 0;
        reports.push(r);
    }
    write_out(c, &reports, None)?;
    Ok(ok)
}

fn simulate(c: &Common, path: &Path, k: usize, samples: usize, seed: u64, no_timing: bool) -> Verdict {
    let mech = mechanism(path, k)?;
    let strat = EquilibriumStrategy::diagonal_max(&mech);
    let mut r = monte_carlo_expected_error(&mech, &strat, samples, seed)?;
    if no_timing {
        r.runtime_ms = 0;
    }
    println!(
        "K={k}: estimate {:.6} (se {:.6}), bound {:.6}",
        r.estimate, r.std_error, r.bound
    );
    if let Some(b) = r.refined_bound {
        println!("refined bound {b:.6}");
    }
    let ok = r.within_bound();
    let table = reports_to_csv(std::slice::from_ref(&r))?;
    write_out(c, &r, Some(table))?;
    Ok(ok)
}

fn robustness(c: &Common, path: &Path, pi: &str, k_list: &[usize], samples: usize, seed: u64) -> Verdict {
    let (env, scf) = load_env(path)?;
    let pi = parse_floats(pi)?;
    let q = env.quotas();
    let r = lab::robustness_experiment(&env, &scf, &q, &pi, k_list, samples, seed)?;
    println!("E|x_pi - x| = {:.6}, bound {:.6}", r.value, r.bound);
    for p in &r.series {
        println!("K={:>5}: distance to x_pi {:.6} (se {:.6})", p.k, p.distance, p.std_error);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["K", "distance", "std_error", "value", "bound"])?;
    for p in &r.series {
        w.write_record([
            p.k.to_string(),
            p.distance.to_string(),
            p.std_error.to_string(),
            r.value.to_string(),
            r.bound.to_string(),
        ])?;
    }
    let table = String::from_utf8(w.into_inner()?)?;
    let ok = r.value <= r.bound + c.tol;
    write_out(c, &r, Some(table))?;
    Ok(ok)
}

fn compare_js(c: &Common, path: &Path, k: usize) -> Verdict {
    let js = JSMechanism::new(mechanism(path, k)?)?;
    for (i, q) in js.quotas.iter().enumerate() {
        println!(
            "agent {i}: q_K {:?}, shrink factor {:.6}, replacement {:?}",
            q.q_k, q.epsilon, q.p_k
        );
    }
    let scan = js_scan(&js, c.tol)?;
    println!(
        "{} profiles: {} exceed the main bound (worst excess {:.4}), {} exceed the relaxed bound",
        scan.checked, scan.main_violations, scan.worst_excess, scan.relaxed_violations
    );
    let dom = js_utility_dominance(&js)?;
    println!(
        "interim utility dominance: {} over {} type counts (worst JS gap {:.3e})",
        dom.holds, dom.checked, dom.worst_gap
    );
    let ok = scan.relaxed_violations == 0 && dom.holds;
    write_out(c, &json!({ "quotas": js.quotas, "scan": scan, "dominance": dom }), None)?;
    Ok(ok)
}

fn typespace(c: &Common, path: &Path, verify: bool, env: Option<&Path>) -> Verdict {
    let ts = FiniteTypeSpace::from_json(&read(path)?)?;
    let flags = check_type_space(&ts)?;
    println!("exchangeable: {}; independent: {}", flags.exchangeable, flags.independent);
    if let Some(w) = &flags.witness {
        println!("  {w}");
    }
    if !verify {
        let ok = flags.exchangeable && flags.independent;
        write_out(c, &flags, None)?;
        return Ok(ok);
    }
    let env = env.ok_or_else(|| anyhow!("--verify needs --env"))?;
    let mech = mechanism(env, ts.k)?;
    let r = verify_robust_equilibrium(&ts, &mech)?;
    println!(
        "{} profiles: {} bound failures, worst slack {:.3e}",
        r.profiles_checked,
        r.bound_failures.len(),
        r.worst_bound_slack
    );
    for t in r.failing_types(c.tol) {
        println!(
            "  agent {} type {}: equilibrium {:.6}, best {:.6}, gain {:.3e}",
            t.agent, t.type_label, t.equilibrium_value, t.best_value, t.gain
        );
    }
    println!("largest best-response gain {:.3e}", r.max_gain);
    let ok = r.passes(c.tol);
    write_out(c, &r, None)?;
    Ok(ok)
}

#[allow(clippy::too_many_arguments)]
fn dynamic(
    c: &Common,
    path: &Path,
    beta: f64,
    resolution: usize,
    paths: usize,
    horizon: Option<usize>,
    seed: u64,
    policy: PolicyArg,
    trace: Option<&Path>,
    trace_paths: usize,
) -> Verdict {
    let (env, scf) = load_env(path)?;
    let mech = DynamicMechanism::new(env, scf, beta)?;
    let pol = match policy {
        PolicyArg::Greedy => {
            let (table, p) = value_iterate(&mech, resolution)?;
            println!(
                "value iteration: residual {:.2e} after {} improvement rounds",
                table.residual, table.improvements
            );
            p
        }
        PolicyArg::Truthful => truthful_when_feasible(&mech),
        PolicyArg::Counterexample => counterexample_policy(&mech),
    };
    let record = if trace.is_some() { trace_paths } else { 0 };
    let r: DynamicReport = simulate_discounted(&mech, &pol, horizon, paths, seed, record)?;
    println!(
        "beta {beta}, T={}, {} paths: error {:.6} (se {:.6}) + tail <= {:.4}",
        r.horizon, r.paths, r.error, r.std_error, r.tail_bound
    );
    println!(
        "truthful occupation mass {:.6} (se {:.6}); largest quota excess {:.2e}",
        r.occupation.diagonal, r.occupation.diagonal_se, r.max_quota_excess
    );
    if let Some(t) = trace {
        fs::write(t, traces_to_csv(&mech, &r.traces)?).with_context(|| format!("writing {}", t.display()))?;
    }
    let ok = r.max_quota_excess <= TOL.probability;
    let mut summary = r;
    summary.traces.clear();
    write_out(c, &summary, None)?;
    Ok(ok)
}

#[allow(clippy::too_many_arguments)]
fn fixture(
    c: &Common,
    name: &str,
    m: Option<usize>,
    k: Option<usize>,
    theta_l: Option<f64>,
    theta_m: Option<f64>,
    theta_h: Option<f64>,
    eta: Option<f64>,
    emit: bool,
) -> Verdict {
    let d = FixtureParams::default();
    let p = FixtureParams {
        m: m.unwrap_or(d.m),
        k: k.unwrap_or(d.k),
        theta_l: theta_l.unwrap_or(d.theta_l),
        theta_m: theta_m.unwrap_or(d.theta_m),
        theta_h: theta_h.unwrap_or(d.theta_h),
        eta: eta.unwrap_or(d.eta),
        ..d
    };
    let f = build_fixture(name, &p)?;
    let file = f.env_file();
    if emit {
        println!("{}", serde_json::to_string_pretty(&file)?);
    } else {
        println!(
            "{}: {} agents, type counts {:?}, {} decisions",
            f.name,
            f.env.n(),
            f.env.type_counts(),
            f.env.decisions.len()
        );
    }
    write_out(c, &file, None)?;
    Ok(true)
}

fn run(common: &Common, cmd: Command) -> Verdict {
    match cmd {
        Command::CheckCm { env } => check_cm(common, &env),
        Command::Transfers { env } => transfers(common, &env),
        Command::SolveOt { instance } => solve_ot_cmd(common, &instance),
        Command::Equilibrium { env, k, theta } => equilibrium(common, &env, k, &theta),
        Command::Scan { env, k_max } => scan(common, &env, k_max),
        Command::Simulate {
            env,
            k,
            samples,
            seed,
            no_timing,
        } => simulate(common, &env, k, samples, seed, no_timing),
        Command::Robustness {
            env,
            pi,
            k_list,
            samples,
            seed,
        } => robustness(common, &env, &pi, &k_list, samples, seed),
        Command::CompareJs { env, k } => compare_js(common, &env, k),
        Command::Typespace { ts, check: _, verify, env } => typespace(common, &ts, verify, env.as_deref()),
        Command::Dynamic {
            env,
            beta,
            resolution,
            paths,
            horizon,
            seed,
            policy,
            trace,
            trace_paths,
        } => dynamic(
            common,
            &env,
            beta,
            resolution,
            paths,
            horizon,
            seed,
            policy,
            trace.as_deref(),
            trace_paths,
        ),
        Command::Fixture {
            name,
            m,
            k,
            theta_l,
            theta_m,
            theta_h,
            eta,
            emit,
        } => fixture(common, &name, m, k, theta_l, theta_m, theta_h, eta, emit),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(r) => r,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli.common, cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        // a simulated policy broke the quota: that is a failed check, not bad input
        Err(e) if matches!(e.downcast_ref::<Error>(), Some(Error::Invariant(_))) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
