//! Named environments used by the tests, the acceptance suite and the CLI.

use serde::{Deserialize, Serialize};

use crate::env::{Agent, EnvFile, Environment, SocialChoiceFunction};
use crate::error::{domain, Result};
use crate::mechanism::QuotaMechanism;

pub const FIXTURE_NAMES: &[&str] = &[
    "allocation",
    "allocation2",
    "allocation3",
    "voting",
    "tightness",
    "js-counterexample",
    "weak-cm",
    "medication",
    "grading",
    "indifferent",
];

/// Knobs shared by the fixtures; each fixture reads only the ones it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureParams {
    /// Number of types (tightness, js-counterexample, weak-cm, indifferent).
    pub m: usize,
    /// Problem count the tightness quota is built for.
    pub k: usize,
    pub theta_l: f64,
    pub theta_m: f64,
    pub theta_h: f64,
    /// Shift of the js-counterexample quota away from uniform.
    pub eta: f64,
    /// Overrides for the single-agent quota and prior.
    pub quota: Option<Vec<f64>>,
    pub prior: Option<Vec<f64>>,
}

impl Default for FixtureParams {
    fn default() -> Self {
        FixtureParams {
            m: 3,
            k: 3,
            theta_l: 1.0,
            theta_m: 1.5,
            theta_h: 2.0,
            eta: 0.1,
            quota: None,
            prior: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub name: String,
    pub env: Environment,
    pub scf: SocialChoiceFunction,
}

impl Fixture {
    pub fn quotas(&self) -> Vec<Vec<f64>> {
        self.env.quotas()
    }

    pub fn mechanism(&self, k: usize) -> Result<QuotaMechanism> {
        QuotaMechanism::from_env(self.env.clone(), self.scf.clone(), k)
    }

    pub fn env_file(&self) -> EnvFile {
        EnvFile::new(&self.env, &self.scf)
    }
}

fn names(prefix: &str, m: usize) -> Vec<String> {
    (1..=m).map(|j| format!("{prefix}{j}")).collect()
}

fn uniform(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}

fn single(
    name: &str,
    decisions: Vec<String>,
    types: Vec<String>,
    utility: Vec<Vec<f64>>,
    choice: &[usize],
    prior: Vec<f64>,
    quota: Option<Vec<f64>>,
) -> Result<Fixture> {
    let nd = decisions.len();
    let env = Environment {
        decisions,
        agents: vec![Agent {
            types,
            utility,
            prior,
            quota,
        }],
    };
    let scf = SocialChoiceFunction::deterministic(choice, nd);
    env.validate()?;
    scf.validate(&env)?;
    Ok(Fixture {
        name: name.into(),
        env,
        scf,
    })
}

/// Two bidders, the good goes to the highest value with ties split evenly.
fn auction(name: &str, values: &[f64], labels: &[&str]) -> Result<Fixture> {
    let m = values.len();
    let types: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
    let agent = |own: usize| Agent {
        types: types.clone(),
        utility: (0..2)
            .map(|d| if d == own { values.to_vec() } else { vec![0.0; m] })
            .collect(),
        prior: uniform(m),
        quota: None,
    };
    let env = Environment {
        decisions: vec!["to1".into(), "to2".into()],
        agents: vec![agent(0), agent(1)],
    };
    let mut rows = Vec::with_capacity(m * m);
    for a in 0..m {
        for b in 0..m {
            rows.push(match values[a].partial_cmp(&values[b]) {
                Some(std::cmp::Ordering::Greater) => vec![1.0, 0.0],
                Some(std::cmp::Ordering::Less) => vec![0.0, 1.0],
                _ => vec![0.5, 0.5],
            });
        }
    }
    let scf = SocialChoiceFunction::new(rows);
    env.validate()?;
    scf.validate(&env)?;
    Ok(Fixture {
        name: name.into(),
        env,
        scf,
    })
}

/// -(m-1) below the own index, 0 at it, 1 above it.
fn staircase_utility(m: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|p| {
            (0..m)
                .map(|l| match p.cmp(&l) {
                    std::cmp::Ordering::Less => -(m as f64 - 1.0),
                    std::cmp::Ordering::Equal => 0.0,
                    std::cmp::Ordering::Greater => 1.0,
                })
                .collect()
        })
        .collect()
}

pub fn build_fixture(name: &str, params: &FixtureParams) -> Result<Fixture> {
    let p = params;
    match name {
        "allocation" => {
            if !(p.theta_l < p.theta_h) {
                return domain("allocation needs theta_l < theta_h");
            }
            single(
                name,
                vec!["keep".into(), "give".into()],
                vec!["L".into(), "H".into()],
                vec![vec![0.0, 0.0], vec![p.theta_l, p.theta_h]],
                &[0, 1],
                p.prior.clone().unwrap_or_else(|| uniform(2)),
                p.quota.clone(),
            )
        }
        "allocation2" => {
            if !(p.theta_l < p.theta_h) {
                return domain("allocation2 needs theta_l < theta_h");
            }
            auction(name, &[p.theta_l, p.theta_h], &["L", "H"])
        }
        "allocation3" => {
            if !(p.theta_l < p.theta_m && p.theta_m < p.theta_h) {
                return domain("allocation3 needs theta_l < theta_m < theta_h");
            }
            auction(name, &[p.theta_l, p.theta_m, p.theta_h], &["L", "M", "H"])
        }
        "voting" => {
            let agent = Agent {
                types: vec!["-1".into(), "0".into(), "+1".into()],
                // rows L, C, R; columns types -1, 0, +1
                utility: vec![vec![1.0, 0.0, 0.0], vec![0.5, 1.0, 0.5], vec![0.0, 0.0, 1.0]],
                prior: uniform(3),
                quota: None,
            };
            let env = Environment {
                decisions: vec!["L".into(), "C".into(), "R".into()],
                agents: vec![agent.clone(), agent],
            };
            let mut choice = Vec::with_capacity(9);
            for a in 0..3i32 {
                for b in 0..3i32 {
                    // sign of the vote sum picks L, C or R
                    choice.push((((a - 1) + (b - 1)).signum() + 1) as usize);
                }
            }
            let scf = SocialChoiceFunction::deterministic(&choice, 3);
            env.validate()?;
            scf.validate(&env)?;
            Ok(Fixture {
                name: name.into(),
                env,
                scf,
            })
        }
        "tightness" => {
            let (m, k) = (p.m, p.k);
            if m < 2 || k < m {
                return domain("tightness needs m >= 2 and K >= m");
            }
            let mut q = vec![1.0 / k as f64; m];
            q[m - 1] = (k - m + 1) as f64 / k as f64;
            single(
                name,
                names("x", m),
                names("t", m),
                staircase_utility(m),
                &(0..m).collect::<Vec<_>>(),
                p.prior.clone().unwrap_or_else(|| q.clone()),
                Some(p.quota.clone().unwrap_or(q)),
            )
        }
        "js-counterexample" => {
            let m = p.m;
            if m < 3 {
                return domain("js-counterexample needs m >= 3");
            }
            if !(p.eta > 0.0 && p.eta < 1.0 / ((m - 1) * m) as f64) {
                return domain(format!("eta must lie in (0, 1/((m-1)m)) = (0, {})", 1.0 / ((m - 1) * m) as f64));
            }
            let mut q = uniform(m);
            q[0] += p.eta;
            q[m - 1] -= p.eta;
            single(
                name,
                names("x", m),
                names("t", m),
                staircase_utility(m),
                &(0..m).collect::<Vec<_>>(),
                q.clone(),
                Some(q),
            )
        }
        "weak-cm" => {
            let m = p.m;
            if m < 3 {
                return domain("weak-cm needs m >= 3");
            }
            // type 1 ranks x1 > ... > xm; everyone else is indifferent
            let utility = (0..m)
                .map(|d| {
                    let mut row = vec![0.0; m];
                    row[0] = (m - 1 - d) as f64;
                    row
                })
                .collect();
            single(
                name,
                names("x", m),
                names("t", m),
                utility,
                &(0..m).collect::<Vec<_>>(),
                uniform(m),
                None,
            )
        }
        "medication" => {
            // own medication is worth 1; the third is a mild all-round option
            let utility = (0..3)
                .map(|d| (0..3).map(|t| if d == t { 1.0 } else { 0.0 } + if d == 2 { 0.5 } else { 0.0 }).collect())
                .collect();
            single(
                name,
                vec!["med1".into(), "med2".into(), "med3".into()],
                vec!["p1".into(), "p2".into(), "p3".into()],
                utility,
                &[0, 1, 2],
                p.prior.clone().unwrap_or_else(|| uniform(3)),
                p.quota.clone(),
            )
        }
        "grading" => single(
            name,
            vec!["B".into(), "A".into()],
            vec!["s1".into(), "s2".into(), "s3".into(), "s4".into()],
            vec![vec![0.0; 4], vec![1.0, 2.0, 3.0, 4.0]],
            &[0, 0, 1, 1],
            p.prior.clone().unwrap_or_else(|| uniform(4)),
            p.quota.clone(),
        ),
        "indifferent" => {
            let m = p.m.max(1);
            single(
                name,
                names("x", m),
                names("t", m),
                vec![vec![0.0; m]; m],
                &(0..m).collect::<Vec<_>>(),
                p.prior.clone().unwrap_or_else(|| uniform(m)),
                p.quota.clone(),
            )
        }
        other => domain(format!(
            "unknown fixture {other:?}; known: {}",
            FIXTURE_NAMES.join(", ")
        )),
    }
}
