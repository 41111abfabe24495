//! Environments, social choice functions and their JSON form.

use serde::{Deserialize, Serialize};

use crate::dist::{check_probability, product_masses, Dist};
use crate::error::{domain, Result};
use crate::tol::TOL;

/// One agent: ordered type labels, a utility table and a full-support prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub types: Vec<String>,
    /// `utility[d][t]`: utility of decision `d` to type `t`.
    pub utility: Vec<Vec<f64>>,
    pub prior: Vec<f64>,
    /// Optional quota; defaults to the prior when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quota: Option<Vec<f64>>,
}

impl Agent {
    pub fn m(&self) -> usize {
        self.types.len()
    }

    pub fn u(&self, decision: usize, ty: usize) -> f64 {
        self.utility[decision][ty]
    }

    pub fn quota_or_prior(&self) -> &[f64] {
        self.quota.as_deref().unwrap_or(&self.prior)
    }

    pub fn type_index(&self, label: &str) -> Option<usize> {
        self.types.iter().position(|t| t == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub decisions: Vec<String>,
    pub agents: Vec<Agent>,
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        if self.decisions.is_empty() {
            return domain("no decisions");
        }
        if self.agents.is_empty() {
            return domain("no agents");
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.types.is_empty() {
                return domain(format!("agent {i} has no types"));
            }
            if a.utility.len() != self.decisions.len()
                || a.utility.iter().any(|row| row.len() != a.m())
            {
                return domain(format!("agent {i}: utility table must be decisions x types"));
            }
            if a.utility.iter().flatten().any(|u| !u.is_finite()) {
                return domain(format!("agent {i}: non-finite utility"));
            }
            if a.prior.len() != a.m() {
                return domain(format!("agent {i}: prior length mismatch"));
            }
            check_probability(&a.prior)?;
            if a.prior.iter().any(|&p| p < TOL.support) {
                return domain(format!("agent {i}: prior lacks full support"));
            }
            if let Some(q) = &a.quota {
                if q.len() != a.m() {
                    return domain(format!("agent {i}: quota length mismatch"));
                }
                check_probability(q)?;
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn m(&self, i: usize) -> usize {
        self.agents[i].m()
    }

    pub fn type_counts(&self) -> Vec<usize> {
        self.agents.iter().map(Agent::m).collect()
    }

    pub fn num_profiles(&self) -> usize {
        self.agents.iter().map(Agent::m).product()
    }

    /// Lexicographic index of a type profile (agent 0 most significant).
    pub fn profile_index(&self, profile: &[usize]) -> usize {
        let mut idx = 0;
        for (a, &t) in self.agents.iter().zip(profile) {
            idx = idx * a.m() + t;
        }
        idx
    }

    pub fn profile(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.n()];
        for i in (0..self.n()).rev() {
            let m = self.m(i);
            out[i] = index % m;
            index /= m;
        }
        out
    }

    pub fn priors(&self) -> Vec<Vec<f64>> {
        self.agents.iter().map(|a| a.prior.clone()).collect()
    }

    pub fn quotas(&self) -> Vec<Vec<f64>> {
        self.agents.iter().map(|a| a.quota_or_prior().to_vec()).collect()
    }

    pub fn prior_dist(&self, i: usize) -> Dist {
        Dist::new(self.agents[i].types.clone(), self.agents[i].prior.clone())
            .expect("validated prior")
    }

    /// Expected utility of a decision lottery for agent `i` of type `t`.
    pub fn lottery_utility(&self, i: usize, lottery: &[f64], t: usize) -> f64 {
        let a = &self.agents[i];
        lottery.iter().enumerate().map(|(d, w)| w * a.u(d, t)).sum()
    }
}

/// A lottery over decisions for each type profile, rows in lexicographic profile order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SocialChoiceFunction {
    pub rows: Vec<Vec<f64>>,
}

impl SocialChoiceFunction {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        SocialChoiceFunction { rows }
    }

    /// Deterministic SCF from one decision index per profile.
    pub fn deterministic(choice: &[usize], num_decisions: usize) -> Self {
        let rows = choice
            .iter()
            .map(|&d| {
                let mut r = vec![0.0; num_decisions];
                r[d] = 1.0;
                r
            })
            .collect();
        SocialChoiceFunction { rows }
    }

    pub fn validate(&self, env: &Environment) -> Result<()> {
        if self.rows.len() != env.num_profiles() {
            return domain(format!(
                "scf has {} rows, expected one per type profile ({})",
                self.rows.len(),
                env.num_profiles()
            ));
        }
        for r in &self.rows {
            if r.len() != env.decisions.len() {
                return domain("scf row length differs from the number of decisions");
            }
            check_probability(r)?;
        }
        Ok(())
    }

    pub fn row(&self, profile: usize) -> &[f64] {
        &self.rows[profile]
    }

    pub fn num_decisions(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn is_deterministic(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.iter().all(|&w| w.abs() < TOL.probability || (w - 1.0).abs() < TOL.probability))
    }

    /// Decision chosen at each profile, if deterministic.
    pub fn choices(&self) -> Option<Vec<usize>> {
        self.rows
            .iter()
            .map(|r| r.iter().position(|&w| (w - 1.0).abs() < TOL.probability))
            .collect()
    }

    /// Rows have pairwise disjoint supports.
    pub fn is_injective(&self) -> bool {
        let d = self.num_decisions();
        let mut owner = vec![usize::MAX; d];
        for (p, r) in self.rows.iter().enumerate() {
            for (x, &w) in r.iter().enumerate() {
                if w > TOL.probability {
                    if owner[x] != usize::MAX && owner[x] != p {
                        return false;
                    }
                    owner[x] = p;
                }
            }
        }
        true
    }

    /// Whether two profiles are assigned the same lottery.
    pub fn same_decision(&self, a: usize, b: usize) -> bool {
        self.rows[a]
            .iter()
            .zip(&self.rows[b])
            .all(|(x, y)| (x - y).abs() <= TOL.support)
    }

    /// Equivalence classes of profiles with identical lotteries, as a class id per profile.
    pub fn decision_classes(&self) -> Vec<usize> {
        let mut class = vec![usize::MAX; self.rows.len()];
        let mut next = 0;
        for a in 0..self.rows.len() {
            if class[a] != usize::MAX {
                continue;
            }
            class[a] = next;
            for b in a + 1..self.rows.len() {
                if class[b] == usize::MAX && self.same_decision(a, b) {
                    class[b] = next;
                }
            }
            next += 1;
        }
        class
    }
}

/// Linear extension of the SCF to a measure over type profiles.
pub fn scf_extend(x: &SocialChoiceFunction, mu: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.num_decisions()];
    for (w, row) in mu.iter().zip(&x.rows) {
        if *w == 0.0 {
            continue;
        }
        for (o, r) in out.iter_mut().zip(row) {
            *o += w * r;
        }
    }
    out
}

/// Outcome of a profile of per-agent report distributions.
pub fn scf_extend_product(x: &SocialChoiceFunction, reports: &[&[f64]]) -> Vec<f64> {
    scf_extend(x, &product_masses(reports))
}

/// A length-K vector of type indices for one agent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeVector {
    pub entries: Vec<usize>,
}

impl TypeVector {
    pub fn new(entries: Vec<usize>) -> Self {
        TypeVector { entries }
    }

    pub fn from_labels(labels: &[&str], types: &[String]) -> Result<Self> {
        let entries = labels
            .iter()
            .map(|l| types.iter().position(|t| t == l))
            .collect::<Option<Vec<_>>>();
        match entries {
            Some(e) if !e.is_empty() => Ok(TypeVector { entries: e }),
            Some(_) => domain("empty type vector"),
            None => domain(format!("unknown type label in {labels:?}")),
        }
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.entries.is_empty() {
            return domain("type vector must have K >= 1 entries");
        }
        if self.entries.iter().any(|&e| e >= m) {
            return domain("type vector entry outside the type set");
        }
        Ok(())
    }
}

/// Payment per type label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRule {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

/// The environment JSON consumed by the lab and the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvFile {
    pub decisions: Vec<String>,
    pub agents: Vec<Agent>,
    pub scf: Vec<Vec<f64>>,
}

impl EnvFile {
    pub fn new(env: &Environment, scf: &SocialChoiceFunction) -> Self {
        EnvFile {
            decisions: env.decisions.clone(),
            agents: env.agents.clone(),
            scf: scf.rows.clone(),
        }
    }

    pub fn split(self) -> Result<(Environment, SocialChoiceFunction)> {
        let env = Environment {
            decisions: self.decisions,
            agents: self.agents,
        };
        env.validate()?;
        let scf = SocialChoiceFunction::new(self.scf);
        scf.validate(&env)?;
        Ok((env, scf))
    }

    pub fn from_json(text: &str) -> Result<(Environment, SocialChoiceFunction)> {
        let file: EnvFile = serde_json::from_str(text)
            .map_err(|e| crate::Error::Domain(format!("environment JSON: {e}")))?;
        file.split()
    }
}
