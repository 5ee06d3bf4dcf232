//! Monte Carlo value estimates, family envelopes and the KS uniformity test.
//!
//! Path `i` of every estimate is driven by `RngStream::new(master_seed, i)`,
//! so all members of a family see the same noise (common random numbers) and
//! results do not depend on thread scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::paths::{RngStream, TimeGrid};
use crate::sde::{payoff, simulate, ControlProblem, Policy, PolicyKind};

/// Normal quantile used for the reported intervals.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub clamps: usize,
    pub overflows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub ci95: (f64, f64),
    pub master_seed: u64,
    pub flags: Flags,
}

impl ValueEstimate {
    pub fn from_samples(samples: &[f64], master_seed: u64, flags: Flags) -> Result<Self> {
        if samples.len() < 2 {
            return Err(invalid("n_paths", "at least two samples are required"));
        }
        let (mean, stderr) = mean_and_stderr(samples);
        Ok(Self {
            mean,
            stderr,
            n_paths: samples.len(),
            ci95: (mean - Z95 * stderr, mean + Z95 * stderr),
            master_seed,
            flags,
        })
    }

    pub fn ci_overlaps(&self, other: &Self) -> bool {
        self.ci95.0 <= other.ci95.1 && other.ci95.0 <= self.ci95.1
    }
}

/// Pairwise summation in a fixed order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Sample mean and `sd / sqrt(n)` (two-pass, unbiased variance).
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo estimate of `J(alpha) = E[g(X)]` over streams `0..n_paths`.
pub fn estimate_value(
    problem: &ControlProblem,
    policy: &Policy,
    grid: &TimeGrid,
    n_paths: usize,
    master_seed: u64,
) -> Result<ValueEstimate> {
    if n_paths < 2 {
        return Err(invalid("n_paths", "at least two paths are required"));
    }
    let draws: Vec<(f64, usize)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let stream = RngStream::new(master_seed, i as u64);
            simulate(problem, policy, grid, stream)
                .and_then(|sol| Ok((payoff(problem, &sol)?, sol.clamp_violations)))
                .map_err(|e| Error::Path {
                    index: i,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let flags = Flags {
        clamps: draws.iter().map(|d| d.1).sum(),
        overflows: 0,
    };
    ValueEstimate::from_samples(&values, master_seed, flags)
}

#[derive(Debug, Clone)]
pub struct FamilyMember {
    pub descriptor: String,
    pub policy: Policy,
}

/// Finite set of policies of one kind whose best value is a lower bound on
/// the supremum over that kind.
#[derive(Debug, Clone)]
pub struct PolicyFamily {
    name: String,
    kind: PolicyKind,
    members: Vec<FamilyMember>,
}

impl PolicyFamily {
    pub fn new(name: impl Into<String>, members: Vec<(String, Policy)>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| invalid("family", "must contain at least one policy"))?;
        let kind = first.1.kind();
        if !matches!(kind, PolicyKind::OpenLoop | PolicyKind::ClosedLoop) {
            return Err(Error::PolicyKind {
                expected: "open-loop or closed-loop",
                got: kind.name(),
            });
        }
        if let Some((_, p)) = members.iter().find(|(_, p)| p.kind() != kind) {
            return Err(Error::PolicyKind {
                expected: kind.name(),
                got: p.kind().name(),
            });
        }
        Ok(Self {
            name: name.into(),
            kind,
            members: members
                .into_iter()
                .map(|(descriptor, policy)| FamilyMember { descriptor, policy })
                .collect(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn members(&self) -> &[FamilyMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn push(&mut self, descriptor: impl Into<String>, policy: Policy) -> Result<()> {
        if policy.kind() != self.kind {
            return Err(Error::PolicyKind {
                expected: self.kind.name(),
                got: policy.kind().name(),
            });
        }
        self.members.push(FamilyMember {
            descriptor: descriptor.into(),
            policy,
        });
        Ok(())
    }
}

/// Best member of a family, reported as a lower bound on the supremum.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub family: String,
    pub kind: PolicyKind,
    pub best_index: usize,
    pub best: ValueEstimate,
    pub per_member: Vec<(String, ValueEstimate)>,
}

impl Envelope {
    pub fn best_member(&self) -> &str {
        &self.per_member[self.best_index].0
    }

    pub fn label(&self) -> String {
        format!(
            "family envelope over {} {} policies: lower bound on the {} value, not the supremum",
            self.per_member.len(),
            self.kind,
            self.kind
        )
    }
}

/// Estimates every member with common random numbers and keeps the best mean
/// (first one on ties).
pub fn value_envelope(
    problem: &ControlProblem,
    family: &PolicyFamily,
    grid: &TimeGrid,
    n_paths: usize,
    master_seed: u64,
) -> Result<Envelope> {
    let per_member: Vec<(String, ValueEstimate)> = family
        .members()
        .iter()
        .map(|m| {
            estimate_value(problem, &m.policy, grid, n_paths, master_seed)
                .map(|e| (m.descriptor.clone(), e))
        })
        .collect::<Result<_>>()?;
    let mut best_index = 0;
    for (i, (_, e)) in per_member.iter().enumerate() {
        if e.mean > per_member[best_index].1.mean {
            best_index = i;
        }
    }
    Ok(Envelope {
        family: family.name().to_owned(),
        kind: family.kind(),
        best_index,
        best: per_member[best_index].1.clone(),
        per_member,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub critical: f64,
    pub reject_at_1pct: bool,
}

/// One-sample Kolmogorov–Smirnov test against Uniform[0, 1), rejecting at
/// the asymptotic 1% level `1.63 / sqrt(n)`.
pub fn ks_uniformity_test(samples: &[f64]) -> Result<KsResult> {
    if samples.len() < 100 {
        return Err(invalid(
            "samples",
            format!("need n >= 100, got {}", samples.len()),
        ));
    }
    if let Some(x) = samples.iter().find(|x| !(0.0..1.0).contains(*x)) {
        return Err(invalid("samples", format!("value {x} outside [0, 1)")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let statistic = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let above = (i + 1) as f64 / n - x;
            let below = x - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max);
    let critical = 1.63 / n.sqrt();
    Ok(KsResult {
        statistic,
        critical,
        reject_at_1pct: statistic > critical,
    })
}
