//! Multi-session resource allocation that maximizes a learner's sentiment
//! trajectory under per-session budgets and prerequisite constraints.
//!
//! Sentiment follows `s_i = theta * s_{i-1} + (1 - theta) * f(E_i)` where
//! `f` is linear or a power law in the session's allocations. A precedence
//! constraint `(a, b, scale, threshold)` requires, for every prefix of
//! sessions, `sum R_a <= scale * max(sum R_b - threshold, 0)`. That bound is
//! convex, not concave, so the feasible set is a union of convex pieces; see
//! [`solve_allocation`].

mod demo;
mod nnls;
mod program;
mod solve;

pub use demo::{demo_profiles, DemoProfile, APPLICATION, RESOURCE_NAMES, THEORY};
pub use program::BarrierOptions;
pub use solve::{
    check_kkt, check_kkt_with, solve_allocation, solve_allocation_with, solve_group_maximin,
    solve_group_maximin_with, AllocationPlan, GroupPlan, KktReport, KktTolerances, SolverOptions,
};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inverted-U engagement curve `w(p) = -sharpness * (p - target)^2 + peak`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngagementCurve {
    pub sharpness: f64,
    pub peak: f64,
    pub target: f64,
}

impl EngagementCurve {
    pub fn validate(&self) -> Result<()> {
        if !(self.sharpness > 0.0) || !self.peak.is_finite() {
            return Err(Error::InvalidProblem(format!(
                "engagement curve needs sharpness > 0 and finite peak, got {self:?}"
            )));
        }
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(Error::InvalidProblem(format!(
                "engagement target {} not in (0, 1)",
                self.target
            )));
        }
        Ok(())
    }
}

impl Default for EngagementCurve {
    fn default() -> Self {
        Self {
            sharpness: 2.0,
            peak: 1.0,
            target: 0.5,
        }
    }
}

/// Engagement weight of a resource at the given mastery level; maximal at
/// `curve.target`.
pub fn engagement_weight(p_mastery: f64, curve: &EngagementCurve) -> f64 {
    let d = p_mastery - curve.target;
    -curve.sharpness * d * d + curve.peak
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceKind {
    /// `f(E) = sum_j w_j R_j`
    Linear,
    /// `f(E) = sum_j w_j R_j^k`, `0 < k <= 1`
    Power,
}

/// Where the per-resource weights come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Weights {
    Fixed(Vec<f64>),
    /// One mastery level and one curve per resource.
    Engagement {
        mastery: Vec<f64>,
        curves: Vec<EngagementCurve>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfluenceModel {
    pub kind: InfluenceKind,
    /// Power-law exponent; ignored in linear mode.
    #[serde(default = "one")]
    pub exponent: f64,
    pub weights: Weights,
}

fn one() -> f64 {
    1.0
}

impl InfluenceModel {
    pub fn linear(weights: Vec<f64>) -> Self {
        Self {
            kind: InfluenceKind::Linear,
            exponent: 1.0,
            weights: Weights::Fixed(weights),
        }
    }

    pub fn power(weights: Vec<f64>, exponent: f64) -> Self {
        Self {
            kind: InfluenceKind::Power,
            exponent,
            weights: Weights::Fixed(weights),
        }
    }

    /// Concrete weights plus any warnings. Engagement-derived weights that
    /// come out negative are clamped to zero in power mode.
    pub fn resolve(&self, resources: usize) -> Result<(Vec<f64>, Vec<String>)> {
        let mut warnings = Vec::new();
        let weights = match &self.weights {
            Weights::Fixed(w) => w.clone(),
            Weights::Engagement { mastery, curves } => {
                if mastery.len() != resources || curves.len() != resources {
                    return Err(Error::InvalidProblem(format!(
                        "engagement weights need {resources} mastery levels and curves"
                    )));
                }
                let mut w = Vec::with_capacity(resources);
                for (j, (&p, c)) in mastery.iter().zip(curves).enumerate() {
                    c.validate()?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::InvalidProblem(format!("mastery {p} not in [0, 1]")));
                    }
                    let v = engagement_weight(p, c);
                    if self.kind == InfluenceKind::Power && v < 0.0 {
                        warnings.push(format!(
                            "resource {j}: engagement weight {v} clamped to 0 in power mode"
                        ));
                        w.push(0.0);
                    } else {
                        w.push(v);
                    }
                }
                w
            }
        };
        if weights.len() != resources {
            return Err(Error::InvalidProblem(format!(
                "{} weights for {resources} resources",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::InvalidProblem(format!("non-finite weight {w}")));
        }
        if self.kind == InfluenceKind::Power {
            if !(self.exponent > 0.0 && self.exponent <= 1.0) {
                return Err(Error::Model(format!(
                    "power exponent {} not in (0, 1]",
                    self.exponent
                )));
            }
            if let Some((j, w)) = weights.iter().enumerate().find(|(_, w)| **w < 0.0) {
                return Err(Error::Model(format!(
                    "power model needs non-negative weights; resource {j} has {w}"
                )));
            }
        }
        Ok((weights, warnings))
    }

    /// `f(E)` for one session's allocation column.
    pub fn session_value(&self, weights: &[f64], column: &[f64]) -> f64 {
        match self.kind {
            InfluenceKind::Linear => weights.iter().zip(column).map(|(w, r)| w * r).sum(),
            InfluenceKind::Power => weights
                .iter()
                .zip(column)
                .map(|(w, r)| w * r.max(0.0).powf(self.exponent))
                .sum(),
        }
    }
}

/// Resource `dependent` may only accumulate `scale` units per unit of
/// `prerequisite` accumulated beyond `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecedenceConstraint {
    /// Zero-based resource index.
    pub dependent: usize,
    /// Zero-based resource index.
    pub prerequisite: usize,
    pub scale: f64,
    pub threshold: f64,
}

impl PrecedenceConstraint {
    /// The precedence bound `scale * max(x - threshold, 0)`.
    pub fn bound(&self, prerequisite_total: f64) -> f64 {
        self.scale * (prerequisite_total - self.threshold).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Sum of the sentiment over all sessions.
    #[default]
    #[serde(alias = "sum")]
    SumSentiment,
    /// Sentiment after the last session.
    #[serde(alias = "terminal")]
    TerminalSentiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationProblem {
    pub sessions: usize,
    pub resources: usize,
    /// One budget per session.
    pub budgets: Vec<f64>,
    /// Emotional volatility `theta` in `[0, 1]`.
    pub volatility: f64,
    #[serde(default)]
    pub initial_sentiment: f64,
    pub influence: InfluenceModel,
    #[serde(default)]
    pub precedence: Vec<PrecedenceConstraint>,
    #[serde(default)]
    pub objective: ObjectiveMode,
}

/// Allocation matrix indexed `[resource][session]`.
pub type Allocation = Vec<Vec<f64>>;

impl AllocationProblem {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidProblem(m));
        if self.sessions == 0 || self.resources == 0 {
            return bad(format!(
                "need at least one session and one resource, got n={} m={}",
                self.sessions, self.resources
            ));
        }
        if self.budgets.len() != self.sessions {
            return bad(format!("{} budgets for {} sessions", self.budgets.len(), self.sessions));
        }
        if let Some(b) = self.budgets.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return bad(format!("budget {b} must be positive"));
        }
        if !(0.0..=1.0).contains(&self.volatility) {
            return bad(format!("volatility {} not in [0, 1]", self.volatility));
        }
        if !self.initial_sentiment.is_finite() {
            return bad("initial sentiment must be finite".into());
        }
        for (c, p) in self.precedence.iter().enumerate() {
            if p.dependent >= self.resources || p.prerequisite >= self.resources {
                return bad(format!("precedence {c}: resource index out of range"));
            }
            if p.dependent == p.prerequisite {
                return bad(format!("precedence {c}: resource depends on itself"));
            }
            if !(p.scale > 0.0 && p.scale.is_finite()) {
                return bad(format!("precedence {c}: scale {} must be positive", p.scale));
            }
            if !(p.threshold >= 0.0 && p.threshold.is_finite()) {
                return bad(format!("precedence {c}: threshold {} must be >= 0", p.threshold));
            }
        }
        self.influence.resolve(self.resources)?;
        Ok(())
    }

    fn check_shape(&self, r: &Allocation) -> Result<()> {
        if r.len() != self.resources {
            return Err(Error::Shape {
                expected: self.resources,
                actual: r.len(),
            });
        }
        if let Some(row) = r.iter().find(|row| row.len() != self.sessions) {
            return Err(Error::Shape {
                expected: self.sessions,
                actual: row.len(),
            });
        }
        Ok(())
    }

    pub fn zero_allocation(&self) -> Allocation {
        vec![vec![0.0; self.sessions]; self.resources]
    }
}

/// `s_1..s_n` under the problem's influence model.
pub fn sentiment_trajectory(r: &Allocation, problem: &AllocationProblem) -> Result<Vec<f64>> {
    problem.check_shape(r)?;
    let (weights, _) = problem.influence.resolve(problem.resources)?;
    let theta = problem.volatility;
    let mut s = problem.initial_sentiment;
    let mut column = vec![0.0; problem.resources];
    let mut out = Vec::with_capacity(problem.sessions);
    for i in 0..problem.sessions {
        for (c, row) in column.iter_mut().zip(r) {
            *c = row[i];
        }
        let f = problem.influence.session_value(&weights, &column);
        s = theta * s + (1.0 - theta) * f;
        out.push(s);
    }
    Ok(out)
}

/// Objective as an affine function of the session values `f(E_t)`:
/// returns `(constant, d)` with `objective = constant + sum_t d_t f(E_t)`.
///
/// Sum mode: `d_t = 1 - theta^(n-t+1)`, constant `s_0 * sum_{i=1..n} theta^i`.
/// Terminal mode: `d_t = (1 - theta) theta^(n-t)`, constant `theta^n s_0`.
pub fn objective_weights(problem: &AllocationProblem) -> (f64, Vec<f64>) {
    let n = problem.sessions;
    let theta = problem.volatility;
    let s0 = problem.initial_sentiment;
    // theta^j with 0^0 = 1
    let pw = |j: usize| theta.powi(j as i32);
    match problem.objective {
        ObjectiveMode::SumSentiment => {
            let d = (1..=n).map(|t| 1.0 - pw(n - t + 1)).collect();
            let c = s0 * (1..=n).map(pw).sum::<f64>();
            (c, d)
        }
        ObjectiveMode::TerminalSentiment => {
            let d = (1..=n).map(|t| (1.0 - theta) * pw(n - t)).collect();
            (pw(n) * s0, d)
        }
    }
}

/// Objective by running the sentiment recursion.
pub fn objective_value(r: &Allocation, problem: &AllocationProblem) -> Result<f64> {
    let s = sentiment_trajectory(r, problem)?;
    Ok(match problem.objective {
        ObjectiveMode::SumSentiment => s.iter().sum(),
        ObjectiveMode::TerminalSentiment => *s.last().expect("n >= 1"),
    })
}

fn prefix_sums(row: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    row.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Largest violation of the budget, non-negativity and precedence
/// constraints (0 when feasible).
pub fn primal_violation(r: &Allocation, problem: &AllocationProblem) -> Result<f64> {
    problem.check_shape(r)?;
    let mut worst = 0.0f64;
    for i in 0..problem.sessions {
        let used: f64 = r.iter().map(|row| row[i]).sum();
        worst = worst.max(used - problem.budgets[i]);
    }
    for v in r.iter().flatten() {
        worst = worst.max(-v);
    }
    for p in &problem.precedence {
        let dep = prefix_sums(&r[p.dependent]);
        let pre = prefix_sums(&r[p.prerequisite]);
        for (d, b) in dep.iter().zip(&pre) {
            worst = worst.max(d - p.bound(*b));
        }
    }
    Ok(worst)
}

/// Whether every prefix of sessions satisfies the precedence constraints.
pub fn precedence_feasible(r: &Allocation, problem: &AllocationProblem, tol: f64) -> bool {
    problem.precedence.iter().all(|p| {
        let dep = prefix_sums(&r[p.dependent]);
        let pre = prefix_sums(&r[p.prerequisite]);
        dep.iter().zip(&pre).all(|(d, b)| *d <= p.bound(*b) + tol)
    })
}

/// Membership in the convex piece selected by `activation`: for each
/// constraint `c`, the dependent resource is zero before session
/// `activation[c]`, and from there on its prefix sum is at most
/// `scale * (prerequisite prefix - threshold)`.
pub fn suffix_system_contains(r: &Allocation, problem: &AllocationProblem, activation: &[usize], tol: f64) -> bool {
    problem.precedence.iter().zip(activation).all(|(p, &start)| {
        let dep = prefix_sums(&r[p.dependent]);
        let pre = prefix_sums(&r[p.prerequisite]);
        (0..problem.sessions).all(|i| {
            if i < start {
                dep[i].abs() <= tol
            } else {
                dep[i] <= p.scale * (pre[i] - p.threshold) + tol
            }
        })
    })
}

/// Index of the first session where each constraint's dependent resource
/// has a positive prefix sum (`sessions` when it never does).
pub fn activation_of(r: &Allocation, problem: &AllocationProblem) -> Vec<usize> {
    problem
        .precedence
        .iter()
        .map(|p| {
            prefix_sums(&r[p.dependent])
                .iter()
                .position(|&d| d > 0.0)
                .unwrap_or(problem.sessions)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(n: usize, theta: f64, s0: f64, mode: ObjectiveMode) -> AllocationProblem {
        AllocationProblem {
            sessions: n,
            resources: 2,
            budgets: vec![1.0; n],
            volatility: theta,
            initial_sentiment: s0,
            influence: InfluenceModel::linear(vec![1.0, 0.0]),
            precedence: vec![],
            objective: mode,
        }
    }

    #[test]
    fn engagement_examples() {
        let c = EngagementCurve { sharpness: 3.0, peak: 1.0, target: 0.5 };
        assert_eq!(engagement_weight(0.5, &c), 1.0);
        assert!((engagement_weight(0.7, &c) - engagement_weight(0.3, &c)).abs() < 1e-12);
        let c = EngagementCurve { sharpness: 2.0, peak: 1.0, target: 0.5 };
        assert!((engagement_weight(0.9, &c) - 0.68).abs() < 1e-12);
    }

    #[test]
    fn trajectory_examples() {
        let p = problem(3, 1.0, 0.4, ObjectiveMode::SumSentiment);
        let r = vec![vec![0.3, 0.9, 0.1], vec![0.0; 3]];
        assert_eq!(sentiment_trajectory(&r, &p).unwrap(), vec![0.4; 3]);

        let p = problem(3, 0.0, 0.4, ObjectiveMode::SumSentiment);
        assert_eq!(sentiment_trajectory(&r, &p).unwrap(), vec![0.3, 0.9, 0.1]);

        let p = problem(2, 0.5, 0.0, ObjectiveMode::SumSentiment);
        let r = vec![vec![1.0, 1.0], vec![0.0; 2]];
        assert_eq!(sentiment_trajectory(&r, &p).unwrap(), vec![0.5, 0.75]);
    }

    #[test]
    fn trajectory_shape_errors() {
        let p = problem(2, 0.5, 0.0, ObjectiveMode::SumSentiment);
        assert!(matches!(sentiment_trajectory(&vec![vec![1.0, 1.0]], &p), Err(Error::Shape { .. })));
        assert!(matches!(
            sentiment_trajectory(&vec![vec![1.0], vec![1.0]], &p),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn objective_weight_examples() {
        let (_, d) = objective_weights(&problem(4, 0.0, 0.0, ObjectiveMode::SumSentiment));
        assert_eq!(d, vec![1.0; 4]);
        let p = problem(2, 0.5, 0.0, ObjectiveMode::SumSentiment);
        let (_, d) = objective_weights(&p);
        assert_eq!(d, vec![0.75, 0.5]);
        // cross-check against the recursion with unit f values
        let r = vec![vec![1.0, 1.0], vec![0.0; 2]];
        assert_eq!(objective_value(&r, &p).unwrap(), d.iter().sum::<f64>());
        let (_, d) = objective_weights(&problem(5, 0.0, 0.0, ObjectiveMode::TerminalSentiment));
        assert_eq!(d, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn power_model_rejects_negative_fixed_weights() {
        let m = InfluenceModel::power(vec![1.0, -0.5], 0.5);
        assert!(matches!(m.resolve(2), Err(Error::Model(_))));
        let m = InfluenceModel::power(vec![1.0, 1.0], 0.0);
        assert!(matches!(m.resolve(2), Err(Error::Model(_))));
        assert!(InfluenceModel::linear(vec![1.0, -0.5]).resolve(2).is_ok());
    }

    #[test]
    fn power_model_clamps_negative_engagement_weights() {
        let curve = EngagementCurve { sharpness: 10.0, peak: 0.5, target: 0.5 };
        let model = InfluenceModel {
            kind: InfluenceKind::Power,
            exponent: 0.5,
            weights: Weights::Engagement { mastery: vec![0.5, 0.95], curves: vec![curve, curve] },
        };
        let (w, warnings) = model.resolve(2).unwrap();
        assert_eq!(w, vec![0.5, 0.0]);
        assert_eq!(warnings.len(), 1);
        let linear = InfluenceModel { kind: InfluenceKind::Linear, ..model };
        let (w, warnings) = linear.resolve(2).unwrap();
        assert!(w[1] < 0.0 && warnings.is_empty());
    }

    #[test]
    fn validation_catches_bad_problems() {
        let mut p = problem(2, 0.5, 0.0, ObjectiveMode::SumSentiment);
        p.validate().unwrap();
        p.budgets[1] = 0.0;
        assert!(p.validate().is_err());
        let mut p = problem(2, 1.5, 0.0, ObjectiveMode::SumSentiment);
        assert!(p.validate().is_err());
        p.volatility = 0.5;
        p.precedence.push(PrecedenceConstraint { dependent: 1, prerequisite: 1, scale: 1.0, threshold: 0.0 });
        assert!(p.validate().is_err());
        p.precedence[0] = PrecedenceConstraint { dependent: 1, prerequisite: 0, scale: 0.0, threshold: 0.0 };
        assert!(p.validate().is_err());
    }

    #[test]
    fn precedence_membership() {
        let mut p = problem(3, 0.5, 0.0, ObjectiveMode::SumSentiment);
        p.precedence.push(PrecedenceConstraint { dependent: 1, prerequisite: 0, scale: 2.0, threshold: 0.5 });
        let r = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        assert!(precedence_feasible(&r, &p, 0.0));
        assert_eq!(activation_of(&r, &p), vec![1]);
        assert!(suffix_system_contains(&r, &p, &[1], 0.0));
        assert!(suffix_system_contains(&r, &p, &[0], 0.0));
        assert!(!suffix_system_contains(&r, &p, &[2], 0.0));
        let bad = vec![vec![0.4, 0.0, 0.0], vec![0.0, 0.1, 0.0]];
        assert!(!precedence_feasible(&bad, &p, 0.0));
        assert!(primal_violation(&bad, &p).unwrap() > 0.0);
    }
}
