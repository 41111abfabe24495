//! Experiment harness: Monte Carlo error estimates, exact enumeration oracles,
//! robustness series and CSV output.

pub mod fixtures;

use std::time::Instant;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dist::pairwise_sum;
use crate::env::{Environment, SocialChoiceFunction, TypeVector};
use crate::error::{domain, Error, Result};
use crate::lp::{LinearProgram, Relation};
use crate::mechanism::{
    build_robust_scf, decode_profile, expost_error, num_joint_vectors, play, profile_weight,
    EquilibriumStrategy, KernelRule, QuotaMechanism,
};

pub use fixtures::{build_fixture, Fixture, FixtureParams, FIXTURE_NAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub run_id: String,
    pub k: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub bound: f64,
    pub refined_bound: Option<f64>,
    pub samples: usize,
    pub seed: u64,
    pub config_hash: String,
    pub runtime_ms: u64,
}

impl SimulationReport {
    /// estimate <= bound + 3 SE
    pub fn within_bound(&self) -> bool {
        self.estimate <= self.bound + 3.0 * self.std_error
    }
}

/// One row of the fixed CSV layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub run_id: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub samples: usize,
    pub seed: u64,
    pub estimate: f64,
    pub std_error: f64,
    pub bound: f64,
    pub refined_bound: Option<f64>,
    pub runtime_ms: u64,
}

impl From<&SimulationReport> for CsvRow {
    fn from(r: &SimulationReport) -> Self {
        CsvRow {
            run_id: r.run_id.clone(),
            k: r.k,
            samples: r.samples,
            seed: r.seed,
            estimate: r.estimate,
            std_error: r.std_error,
            bound: r.bound,
            refined_bound: r.refined_bound,
            runtime_ms: r.runtime_ms,
        }
    }
}

pub fn reports_to_csv(reports: &[SimulationReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(CsvRow::from(r))
            .map_err(|e| Error::Domain(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Domain(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Short hex digest of any serializable configuration.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let text = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Sample generator for stream `index` of `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draw one type vector per agent, K i.i.d. entries from each prior.
pub fn draw_types(rng: &mut ChaCha8Rng, priors: &[WeightedIndex<f64>], k: usize) -> Vec<TypeVector> {
    priors
        .iter()
        .map(|w| TypeVector::new((0..k).map(|_| w.sample(rng)).collect()))
        .collect()
}

fn samplers(pi: &[Vec<f64>]) -> Result<Vec<WeightedIndex<f64>>> {
    pi.iter()
        .map(|p| WeightedIndex::new(p).map_err(|e| Error::Domain(format!("prior: {e}"))))
        .collect()
}

/// Mean and standard error with a fixed reduction order.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, Serialize)]
struct McConfig<'a> {
    what: &'a str,
    env: &'a Environment,
    scf: &'a SocialChoiceFunction,
    quotas: &'a [Vec<f64>],
    k: usize,
    samples: usize,
    seed: u64,
}

/// Monte Carlo estimate of the expected ex-post error under the priors.
pub fn monte_carlo_expected_error(
    mech: &QuotaMechanism,
    strat: &EquilibriumStrategy,
    samples: usize,
    seed: u64,
) -> Result<SimulationReport> {
    if samples == 0 {
        return domain("need at least one sample");
    }
    let start = Instant::now();
    let priors = samplers(&mech.env.priors())?;
    let errors = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = substream(seed, s as u64);
            let theta = draw_types(&mut rng, &priors, mech.k);
            expost_error(mech, strat, &theta).map(|r| r.average)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (estimate, std_error) = mean_and_se(&errors);
    let cfg = McConfig {
        what: "expected-error",
        env: &mech.env,
        scf: &mech.scf,
        quotas: &mech.quotas,
        k: mech.k,
        samples,
        seed,
    };
    Ok(SimulationReport {
        run_id: format!("mc-K{}-s{}", mech.k, seed),
        k: mech.k,
        estimate,
        std_error,
        bound: mech.expected_bound(),
        refined_bound: mech.refined_expected_bound(),
        samples,
        seed,
        config_hash: config_hash(&cfg),
        runtime_ms: start.elapsed().as_millis() as u64,
    })
}

const EXACT_LIMIT: usize = 1_000_000;

fn ln_factorials(k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k + 1];
    for i in 1..=k {
        out[i] = out[i - 1] + (i as f64).ln();
    }
    out
}

/// All count vectors of length m summing to k, in lexicographic order.
pub fn compositions(k: usize, m: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, slots: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(left - c, slots - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if m > 0 {
        rec(k, m, &mut Vec::with_capacity(m), &mut out);
    }
    out
}

fn binomial(n: usize, k: usize) -> Option<usize> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return None;
        }
    }
    Some(acc as usize)
}

/// Expected ex-post error by exhaustive enumeration, weighted by the priors.
///
/// A single agent's error depends only on the type counts, so its expectation is
/// summed over count vectors with multinomial weights; several agents are
/// enumerated vector by vector.
pub fn exact_expected_error(mech: &QuotaMechanism, strat: &EquilibriumStrategy) -> Result<f64> {
    let pi = mech.env.priors();
    if mech.n() == 1 {
        let m = mech.m(0);
        let size = binomial(mech.k + m - 1, m - 1);
        if size.is_none_or(|s| s > EXACT_LIMIT) {
            return domain(format!("more than {EXACT_LIMIT} count vectors to enumerate"));
        }
        let lf = ln_factorials(mech.k);
        let comps = compositions(mech.k, m);
        let terms = comps
            .par_iter()
            .map(|c| {
                let mut ln_w = lf[mech.k];
                for (t, &n) in c.iter().enumerate() {
                    if n > 0 {
                        ln_w += n as f64 * pi[0][t].ln() - lf[n];
                    } else {
                        ln_w -= lf[0];
                    }
                }
                let entries: Vec<usize> = c.iter().enumerate().flat_map(|(t, &n)| std::iter::repeat_n(t, n)).collect();
                let r = expost_error(mech, strat, &[TypeVector::new(entries)])?;
                Ok(ln_w.exp() * r.average)
            })
            .collect::<Result<Vec<f64>>>()?;
        return Ok(pairwise_sum(&terms));
    }
    let total = match num_joint_vectors(mech) {
        Some(t) if t <= EXACT_LIMIT => t,
        _ => return domain(format!("more than {EXACT_LIMIT} type vectors to enumerate")),
    };
    let terms = (0..total)
        .into_par_iter()
        .map(|idx| {
            let theta = decode_profile(mech, idx);
            let w = profile_weight(&pi, &theta);
            if w == 0.0 {
                return Ok(0.0);
            }
            expost_error(mech, strat, &theta).map(|r| w * r.average)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&terms))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessPoint {
    pub k: usize,
    /// Mean over samples of (1/K) sum_k tv(g^k, x_pi(theta^k)).
    pub distance: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    /// Exact E^pi tv(x_pi, x).
    pub value: f64,
    pub bound: f64,
    pub series: Vec<RobustnessPoint>,
}

/// Play the (x, q)-quota mechanism with types drawn from `pi` and measure the
/// distance to x_pi, using kernels matched to the anchors of x_pi.
pub fn robustness_experiment(
    env: &Environment,
    x: &SocialChoiceFunction,
    q: &[Vec<f64>],
    pi: &[Vec<f64>],
    k_list: &[usize],
    samples: usize,
    seed: u64,
) -> Result<RobustnessReport> {
    if samples == 0 {
        return domain("need at least one sample");
    }
    let robust = build_robust_scf(env, x, q, pi)?;
    let draws = samplers(pi)?;
    let mut series = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let mech = QuotaMechanism::new(env.clone(), x.clone(), q.to_vec(), k)?;
        let strat = EquilibriumStrategy::new(&mech, KernelRule::Nearest(robust.couplings.clone()));
        let dists = (0..samples)
            .into_par_iter()
            .map(|s| {
                let mut rng = substream(seed, s as u64);
                let theta = draw_types(&mut rng, &draws, k);
                let pl = play(&mech, &strat, &theta)?;
                let per: Vec<f64> = (0..k)
                    .map(|kk| {
                        let prof: Vec<usize> = theta.iter().map(|v| v.entries[kk]).collect();
                        crate::dist::tv(&pl.outcomes[kk], robust.scf.row(env.profile_index(&prof)))
                    })
                    .collect();
                Ok(pairwise_sum(&per) / k as f64)
            })
            .collect::<Result<Vec<f64>>>()?;
        let (distance, std_error) = mean_and_se(&dists);
        series.push(RobustnessPoint {
            k,
            distance,
            std_error,
        });
    }
    Ok(RobustnessReport {
        value: robust.value,
        bound: robust.bound,
        series,
    })
}

/// Payoff comparison behind the tightness of the ex-post constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessReport {
    pub m: usize,
    pub k: usize,
    pub epsilon: f64,
    /// Equilibrium error at the shifted type vector.
    pub error: f64,
    pub bound_rhs: f64,
    /// Utility of the shifted type from copying the quota-matching type's reports.
    pub deviation_utility: f64,
    /// Utility in the constructed equilibrium.
    pub equilibrium_utility: f64,
    /// (m - 1 - eps)/K, the utility ceiling implied by an eps-sharper bound.
    pub eps_ceiling: f64,
    /// Best utility among report vectors whose error meets the eps-sharper bound.
    pub eps_constrained_best: f64,
}

impl TightnessReport {
    pub fn deviation_profitable(&self) -> bool {
        self.deviation_utility > self.eps_constrained_best + 1e-9
    }
}

pub fn tightness_check(m: usize, k: usize, epsilon: f64) -> Result<TightnessReport> {
    let fx = build_fixture(
        "tightness",
        &FixtureParams {
            m,
            k,
            ..Default::default()
        },
    )?;
    let mech = fx.mechanism(k)?;
    let strat = EquilibriumStrategy::diagonal_max(&mech);
    // theta' = (1, 1, 2, ..., m-1, m, ..., m), theta'' = (1, 2, ..., m, m, ..., m)
    let mut shifted = vec![0usize];
    shifted.extend(0..m - 1);
    shifted.extend(std::iter::repeat_n(m - 1, k - m));
    let mut matching: Vec<usize> = (0..m).collect();
    matching.extend(std::iter::repeat_n(m - 1, k - m));
    let theta = [TypeVector::new(shifted.clone())];
    let rep = expost_error(&mech, &strat, &theta)?;
    let pl = play(&mech, &strat, &theta)?;
    let agent = &mech.env.agents[0];
    let kf = k as f64;
    let equilibrium_utility = (0..k)
        .map(|kk| mech.env.lottery_utility(0, &pl.outcomes[kk], shifted[kk]))
        .sum::<f64>()
        / kf;
    let deviation_utility = (0..k).map(|kk| agent.u(matching[kk], shifted[kk])).sum::<f64>() / kf;

    // max utility over quota-feasible reports with (1/K) sum (1 - r^k(theta^k)) <= cap
    let marg = crate::dist::empirical_marginal(&shifted, m);
    let cap = (m as f64 - 1.0 - epsilon) * crate::dist::tv(&mech.quotas[0], &marg);
    let nv = k * m;
    let mut lp = LinearProgram::new(nv);
    let mut obj = vec![0.0; nv];
    for kk in 0..k {
        for t in 0..m {
            obj[kk * m + t] = agent.u(t, shifted[kk]) / kf;
        }
        let row: Vec<(usize, f64)> = (0..m).map(|t| (kk * m + t, 1.0)).collect();
        lp.constrain_sparse(&row, Relation::Eq, 1.0);
    }
    for t in 0..m {
        let row: Vec<(usize, f64)> = (0..k).map(|kk| (kk * m + t, 1.0 / kf)).collect();
        lp.constrain_sparse(&row, Relation::Eq, mech.quotas[0][t]);
    }
    let truthful: Vec<(usize, f64)> = (0..k).map(|kk| (kk * m + shifted[kk], 1.0 / kf)).collect();
    lp.constrain_sparse(&truthful, Relation::Ge, 1.0 - cap);
    lp.maximize(obj);
    let eps_constrained_best = lp.solve()?.objective;
    Ok(TightnessReport {
        m,
        k,
        epsilon,
        error: rep.average,
        bound_rhs: rep.bound_rhs,
        deviation_utility,
        equilibrium_utility,
        eps_ceiling: (m as f64 - 1.0 - epsilon) / kf,
        eps_constrained_best,
    })
}
