//! Exact solution by enumerating activation suffixes.
//!
//! Because prefix sums of non-negative allocations never decrease, the set
//! of sessions where `max(x - threshold, 0)` takes its affine branch is a
//! suffix. Fixing the first session of that suffix for every constraint
//! turns the feasible set into a polytope, so each choice is a convex
//! program; the best of them is the global optimum.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::program::{kkt_residuals, phase_one, solve_from, BarrierOptions, Epigraph, Linear, Program, Separable, Term};
use super::{
    objective_value, objective_weights, primal_violation, sentiment_trajectory, Allocation, AllocationProblem,
    InfluenceKind,
};
use crate::error::{Error, Result};

/// Upper limit on the number of enumerated subproblems.
const MAX_SUBPROBLEMS: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KktTolerances {
    pub primal: f64,
    pub stationarity: f64,
    pub complementarity: f64,
}

impl Default for KktTolerances {
    fn default() -> Self {
        Self {
            primal: 1e-8,
            stationarity: 1e-6,
            complementarity: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub primal: f64,
    pub stationarity: f64,
    pub complementarity: f64,
    pub accepted: bool,
}

impl KktReport {
    fn new(primal: f64, stationarity: f64, complementarity: f64, tol: &KktTolerances) -> Self {
        Self {
            primal,
            stationarity,
            complementarity,
            accepted: primal <= tol.primal
                && stationarity <= tol.stationarity
                && complementarity <= tol.complementarity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub barrier: BarrierOptions,
    pub kkt: KktTolerances,
    /// Relative margin a later subproblem must win by to replace the
    /// incumbent, so near-ties go to the earliest activation.
    pub tie_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            barrier: BarrierOptions::default(),
            kkt: KktTolerances::default(),
            tie_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    /// `[resource][session]`
    pub allocation: Allocation,
    pub sentiment: Vec<f64>,
    pub objective: f64,
    /// First session of each precedence constraint's active suffix;
    /// `sessions` means the dependent resource is never used.
    pub activation: Vec<usize>,
    pub kkt: KktReport,
    /// Objective does not depend on the allocation (e.g. volatility 1).
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPlan {
    pub plans: Vec<AllocationPlan>,
    /// Common lower bound on every student's objective.
    pub lower_bound: f64,
    /// Residuals of the joint epigraph program.
    pub kkt: KktReport,
}

/// The convex piece of one problem for a fixed activation vector.
struct Subproblem {
    /// `[resource * sessions + session]` to program variable.
    map: Vec<Option<usize>>,
    vars: usize,
    objective: Separable,
    rows: Vec<Linear>,
    /// A variable-free row with negative right-hand side.
    infeasible: Option<usize>,
}

fn build_subproblem(problem: &AllocationProblem, weights: &[f64], activation: &[usize]) -> Subproblem {
    let n = problem.sessions;
    let m = problem.resources;
    let mut fixed = vec![false; m * n];
    for (p, &start) in problem.precedence.iter().zip(activation) {
        for i in 0..start.min(n) {
            fixed[p.dependent * n + i] = true;
        }
    }
    let mut vars = 0;
    let map: Vec<Option<usize>> = fixed
        .iter()
        .map(|&f| {
            (!f).then(|| {
                vars += 1;
                vars - 1
            })
        })
        .collect();

    let (constant, d) = objective_weights(problem);
    let exponent = match problem.influence.kind {
        InfluenceKind::Linear => 1.0,
        InfluenceKind::Power => problem.influence.exponent,
    };
    let mut terms = Vec::new();
    for j in 0..m {
        for i in 0..n {
            let c = d[i] * weights[j];
            if let (Some(var), true) = (map[j * n + i], c != 0.0) {
                terms.push(match problem.influence.kind {
                    InfluenceKind::Linear => Term { var, linear: c, power: 0.0 },
                    InfluenceKind::Power => Term { var, linear: 0.0, power: c },
                });
            }
        }
    }
    let objective = Separable { constant, exponent, terms };

    let mut rows = Vec::new();
    for v in 0..vars {
        rows.push(Linear { coeffs: vec![(v, -1.0)], rhs: 0.0 });
    }
    for i in 0..n {
        let coeffs: Vec<(usize, f64)> = (0..m).filter_map(|j| map[j * n + i].map(|v| (v, 1.0))).collect();
        if !coeffs.is_empty() {
            rows.push(Linear { coeffs, rhs: problem.budgets[i] });
        }
    }
    let mut infeasible = None;
    for (c, (p, &start)) in problem.precedence.iter().zip(activation).enumerate() {
        for i in start..n {
            let mut coeffs = Vec::new();
            for t in 0..=i {
                if let Some(v) = map[p.dependent * n + t] {
                    coeffs.push((v, 1.0));
                }
                if let Some(v) = map[p.prerequisite * n + t] {
                    coeffs.push((v, -p.scale));
                }
            }
            let rhs = -p.scale * p.threshold;
            if coeffs.is_empty() {
                if rhs < 0.0 && infeasible.is_none() {
                    infeasible = Some(c);
                }
            } else {
                rows.push(Linear { coeffs, rhs });
            }
        }
    }
    Subproblem { map, vars, objective, rows, infeasible }
}

impl Subproblem {
    fn program(&self) -> Program {
        Program {
            vars: self.vars,
            objective: self.objective.clone(),
            linear: self.rows.clone(),
            epigraph: vec![],
        }
    }

    fn to_allocation(&self, x: &[f64], problem: &AllocationProblem) -> Allocation {
        let n = problem.sessions;
        let mut r = problem.zero_allocation();
        for (k, slot) in self.map.iter().enumerate() {
            if let Some(v) = slot {
                r[k / n][k % n] = x[*v];
            }
        }
        r
    }

    /// Program variables read from an allocation, plus the largest
    /// magnitude of an entry the activation forces to zero.
    fn from_allocation(&self, r: &Allocation, problem: &AllocationProblem) -> (Vec<f64>, f64) {
        let n = problem.sessions;
        let mut x = vec![0.0; self.vars];
        let mut fixed_violation = 0.0f64;
        for (k, slot) in self.map.iter().enumerate() {
            let v = r[k / n][k % n];
            match slot {
                Some(i) => x[*i] = v,
                None => fixed_violation = fixed_violation.max(v.abs()),
            }
        }
        (x, fixed_violation)
    }
}

/// Solution of one convex piece, or `None` when its interior is empty.
fn solve_subproblem(sub: &Subproblem, opts: &BarrierOptions) -> Result<Option<(Vec<f64>, f64)>> {
    if sub.infeasible.is_some() {
        return Ok(None);
    }
    let prog = sub.program();
    if sub.vars == 0 {
        return Ok(Some((vec![], prog.objective.value(&[]))));
    }
    let Some(start) = phase_one(&prog.linear, prog.vars, opts)? else {
        return Ok(None);
    };
    let sol = solve_from(&prog, start, opts)?;
    Ok(Some((sol.x, sol.objective)))
}

/// Whether the prerequisite can clear the threshold by session `start`.
fn reachable(problem: &AllocationProblem, activation: &[usize]) -> bool {
    problem.precedence.iter().zip(activation).all(|(p, &start)| {
        start >= problem.sessions || problem.budgets[..=start].iter().sum::<f64>() > p.threshold
    })
}

/// All activation vectors in lexicographic order.
fn activations(problem: &AllocationProblem) -> Result<Vec<Vec<usize>>> {
    let k = problem.precedence.len();
    let base = problem.sessions + 1;
    let total = (0..k).try_fold(1usize, |acc, _| acc.checked_mul(base).filter(|t| *t <= MAX_SUBPROBLEMS));
    let Some(total) = total else {
        return Err(Error::InvalidProblem(format!(
            "{k} precedence constraints over {} sessions need more than {MAX_SUBPROBLEMS} subproblems",
            problem.sessions
        )));
    };
    let mut out = Vec::with_capacity(total);
    let mut cur = vec![0usize; k];
    for _ in 0..total {
        out.push(cur.clone());
        for slot in cur.iter_mut().rev() {
            *slot += 1;
            if *slot < base {
                break;
            }
            *slot = 0;
        }
    }
    Ok(out)
}

fn is_degenerate(problem: &AllocationProblem, weights: &[f64]) -> bool {
    let (_, d) = objective_weights(problem);
    d.iter().all(|&dt| weights.iter().all(|&w| dt * w == 0.0))
}

pub fn solve_allocation(problem: &AllocationProblem) -> Result<AllocationPlan> {
    solve_allocation_with(problem, &SolverOptions::default())
}

pub fn solve_allocation_with(problem: &AllocationProblem, opts: &SolverOptions) -> Result<AllocationPlan> {
    problem.validate()?;
    let (weights, warnings) = problem.influence.resolve(problem.resources)?;
    let never = vec![problem.sessions; problem.precedence.len()];

    if is_degenerate(problem, &weights) {
        return finish(problem, problem.zero_allocation(), never, true, warnings, opts);
    }

    let mut best: Option<(f64, Vec<usize>, Allocation)> = None;
    let mut first_blocker = None;
    for activation in activations(problem)? {
        if !reachable(problem, &activation) {
            continue;
        }
        let sub = build_subproblem(problem, &weights, &activation);
        if let Some(c) = sub.infeasible {
            first_blocker.get_or_insert(c);
        }
        let Some((x, value)) = solve_subproblem(&sub, &opts.barrier)? else {
            continue;
        };
        let better = match &best {
            None => true,
            Some((incumbent, _, _)) => value > incumbent + opts.tie_tolerance * incumbent.abs().max(1.0),
        };
        if better {
            best = Some((value, activation, sub.to_allocation(&x, problem)));
        }
    }
    match best {
        Some((_, activation, allocation)) => finish(problem, allocation, activation, false, warnings, opts),
        None => Err(Error::Infeasible(match first_blocker {
            Some(c) => format!("precedence constraint {c} cannot be met by any activation session"),
            None => "no activation session admits a feasible allocation".into(),
        })),
    }
}

fn finish(
    problem: &AllocationProblem,
    allocation: Allocation,
    activation: Vec<usize>,
    degenerate: bool,
    warnings: Vec<String>,
    opts: &SolverOptions,
) -> Result<AllocationPlan> {
    let sentiment = sentiment_trajectory(&allocation, problem)?;
    let objective = objective_value(&allocation, problem)?;
    let mut plan = AllocationPlan {
        allocation,
        sentiment,
        objective,
        activation,
        kkt: KktReport::new(0.0, 0.0, 0.0, &opts.kkt),
        degenerate,
        warnings,
    };
    plan.kkt = check_kkt_with(&plan, problem, &opts.kkt)?;
    Ok(plan)
}

pub fn check_kkt(plan: &AllocationPlan, problem: &AllocationProblem) -> Result<KktReport> {
    check_kkt_with(plan, problem, &KktTolerances::default())
}

/// Residuals of the plan against the convex piece selected by its
/// activation vector.
pub fn check_kkt_with(plan: &AllocationPlan, problem: &AllocationProblem, tol: &KktTolerances) -> Result<KktReport> {
    problem.validate()?;
    if plan.activation.len() != problem.precedence.len() {
        return Err(Error::Shape {
            expected: problem.precedence.len(),
            actual: plan.activation.len(),
        });
    }
    let (weights, _) = problem.influence.resolve(problem.resources)?;
    let original = primal_violation(&plan.allocation, problem)?;
    let sub = build_subproblem(problem, &weights, &plan.activation);
    let (x, fixed) = sub.from_allocation(&plan.allocation, problem);
    let res = kkt_residuals(&sub.program(), &x);
    let blocked = if sub.infeasible.is_some() { f64::INFINITY } else { 0.0 };
    let primal = original.max(res.violation).max(fixed).max(blocked);
    Ok(KktReport::new(primal, res.stationarity, res.complementarity, tol))
}

pub fn solve_group_maximin(problems: &[AllocationProblem]) -> Result<GroupPlan> {
    solve_group_maximin_with(problems, &SolverOptions::default())
}

/// Maximizes the smallest objective across students.
///
/// Each student has their own allocation matrix under the shared budget
/// schedule, so the students only interact through the common bound. The
/// best activation product is therefore each student's own best
/// activation, and the joint epigraph program is solved on that piece.
pub fn solve_group_maximin_with(problems: &[AllocationProblem], opts: &SolverOptions) -> Result<GroupPlan> {
    let Some(first) = problems.first() else {
        return Err(Error::InvalidProblem("group needs at least one student".into()));
    };
    for (s, p) in problems.iter().enumerate() {
        p.validate()?;
        if p.sessions != first.sessions || p.resources != first.resources || p.budgets != first.budgets {
            return Err(Error::InvalidProblem(format!(
                "student {s} does not share the group's sessions, resources and budgets"
            )));
        }
    }
    let individual: Vec<AllocationPlan> = problems
        .iter()
        .map(|p| solve_allocation_with(p, opts))
        .collect::<Result<_>>()?;
    if problems.len() == 1 {
        let plan = individual.into_iter().next().expect("one student");
        return Ok(GroupPlan { lower_bound: plan.objective, kkt: plan.kkt, plans: vec![plan] });
    }

    let mut subs = Vec::with_capacity(problems.len());
    let mut offsets = Vec::with_capacity(problems.len());
    let mut prog = Program {
        vars: 0,
        objective: Separable { constant: 0.0, exponent: 1.0, terms: vec![] },
        linear: vec![],
        epigraph: vec![],
    };
    for (p, plan) in problems.iter().zip(&individual) {
        let (weights, _) = p.influence.resolve(p.resources)?;
        let sub = build_subproblem(p, &weights, &plan.activation);
        let off = prog.vars;
        let shift = |coeffs: &[(usize, f64)]| coeffs.iter().map(|&(i, a)| (i + off, a)).collect();
        prog.linear.extend(sub.rows.iter().map(|r| Linear { coeffs: shift(&r.coeffs), rhs: r.rhs }));
        let mut f = sub.objective.clone();
        for t in &mut f.terms {
            t.var += off;
        }
        prog.epigraph.push(Epigraph { var: usize::MAX, f });
        prog.vars += sub.vars;
        offsets.push(off);
        subs.push(sub);
    }
    let tau = prog.vars;
    prog.vars += 1;
    for e in &mut prog.epigraph {
        e.var = tau;
    }
    prog.objective.terms.push(Term { var: tau, linear: 1.0, power: 0.0 });

    let Some(mut start) = phase_one(&prog.linear, prog.vars, &opts.barrier)? else {
        return Err(Error::Numerical("group program lost its interior".into()));
    };
    let floor = prog.epigraph.iter().map(|e| e.f.value(&start)).fold(f64::INFINITY, f64::min);
    start[tau] = floor - 1.0;
    let sol = solve_from(&prog, start, &opts.barrier)?;
    let res = kkt_residuals(&prog, &sol.x);

    let mut plans = Vec::with_capacity(problems.len());
    let mut primal = res.violation;
    for ((p, plan), (sub, off)) in problems.iter().zip(individual).zip(subs.iter().zip(&offsets)) {
        let x = &sol.x[*off..*off + sub.vars];
        let allocation = sub.to_allocation(x, p);
        primal = primal.max(primal_violation(&allocation, p)?);
        plans.push(AllocationPlan {
            sentiment: sentiment_trajectory(&allocation, p)?,
            objective: objective_value(&allocation, p)?,
            allocation,
            activation: plan.activation,
            kkt: plan.kkt,
            degenerate: plan.degenerate,
            warnings: plan.warnings,
        });
    }
    let kkt = KktReport::new(primal, res.stationarity, res.complementarity, &opts.kkt);
    for plan in &mut plans {
        plan.kkt = kkt;
    }
    Ok(GroupPlan { plans, lower_bound: sol.x[tau], kkt })
}

#[cfg(test)]
mod tests {
    use super::super::{InfluenceModel, ObjectiveMode, PrecedenceConstraint};
    use super::*;

    fn linear(n: usize, w: Vec<f64>, theta: f64) -> AllocationProblem {
        AllocationProblem {
            sessions: n,
            resources: w.len(),
            budgets: vec![1.0; n],
            volatility: theta,
            initial_sentiment: 0.0,
            influence: InfluenceModel::linear(w),
            precedence: vec![],
            objective: ObjectiveMode::SumSentiment,
        }
    }

    #[test]
    fn dominant_weight_takes_whole_budget() {
        let plan = solve_allocation(&linear(4, vec![1.0, 2.0], 0.5)).unwrap();
        for i in 0..4 {
            assert!((plan.allocation[1][i] - 1.0).abs() < 1e-7);
            assert!(plan.allocation[0][i].abs() < 1e-7);
        }
        assert!(plan.kkt.accepted, "{:?}", plan.kkt);
    }

    #[test]
    fn power_mode_splits_symmetric_budget() {
        let mut p = linear(1, vec![1.0, 1.0], 0.0);
        p.influence = InfluenceModel::power(vec![1.0, 1.0], 0.5);
        let plan = solve_allocation(&p).unwrap();
        assert!((plan.allocation[0][0] - 0.5).abs() < 1e-7);
        assert!((plan.allocation[1][0] - 0.5).abs() < 1e-7);
        assert!(plan.kkt.accepted);
    }

    #[test]
    fn unreachable_threshold_blocks_dependent() {
        let mut p = linear(3, vec![1.0, 3.0], 0.5);
        p.precedence.push(PrecedenceConstraint { dependent: 1, prerequisite: 0, scale: 2.0, threshold: 3.0 });
        let plan = solve_allocation(&p).unwrap();
        assert_eq!(plan.activation, vec![3]);
        assert!(plan.allocation[1].iter().all(|v| *v == 0.0));
        assert!(plan.kkt.accepted);
    }

    #[test]
    fn small_precedence_instance_beats_grid() {
        let mut p = linear(3, vec![1.0, 3.0], 0.5);
        p.precedence.push(PrecedenceConstraint { dependent: 1, prerequisite: 0, scale: 2.0, threshold: 0.5 });
        let plan = solve_allocation(&p).unwrap();
        assert!(plan.kkt.accepted, "{:?}", plan.kkt);
        // Linear weights saturate budgets, so the grid only needs the
        // theory share per session.
        let steps: Vec<f64> = (0..=20).map(|k| k as f64 * 0.05).collect();
        let mut grid_best = f64::NEG_INFINITY;
        for &a in &steps {
            for &b in &steps {
                for &c in &steps {
                    let r = vec![vec![a, b, c], vec![1.0 - a, 1.0 - b, 1.0 - c]];
                    if super::super::precedence_feasible(&r, &p, 1e-12) {
                        grid_best = grid_best.max(objective_value(&r, &p).unwrap());
                    }
                }
            }
        }
        assert!(plan.objective >= grid_best - 1e-3, "{} vs {grid_best}", plan.objective);
    }

    #[test]
    fn volatility_one_is_degenerate() {
        let plan = solve_allocation(&linear(3, vec![1.0, 2.0], 1.0)).unwrap();
        assert!(plan.degenerate);
        assert_eq!(plan.allocation, vec![vec![0.0; 3]; 2]);
    }

    #[test]
    fn kkt_flags_suboptimal_points() {
        let p = linear(2, vec![1.0, 2.0], 0.5);
        let mut plan = solve_allocation(&p).unwrap();
        plan.allocation = vec![vec![0.3, 0.3], vec![0.3, 0.3]];
        let report = check_kkt(&plan, &p).unwrap();
        assert!(report.primal <= 1e-8 && report.stationarity > 1e-6);
        plan.allocation = p.zero_allocation();
        assert!(!check_kkt(&plan, &p).unwrap().accepted);
    }

    #[test]
    fn group_of_one_matches_single() {
        let p = linear(3, vec![1.0, 2.0], 0.3);
        let g = solve_group_maximin(core::slice::from_ref(&p)).unwrap();
        assert_eq!(g.plans[0], solve_allocation(&p).unwrap());
    }

    #[test]
    fn mirrored_students_share_value() {
        let a = linear(2, vec![1.0, 2.0], 0.5);
        let b = linear(2, vec![2.0, 1.0], 0.5);
        let g = solve_group_maximin(&[a.clone(), b]).unwrap();
        let single = solve_allocation(&a).unwrap().objective;
        assert!(g.kkt.accepted, "{:?}", g.kkt);
        assert!((g.lower_bound - single).abs() < 1e-6);
        assert!((g.plans[0].objective - g.plans[1].objective).abs() < 1e-6);
    }

    #[test]
    fn identical_inputs_identical_plans() {
        let mut p = linear(4, vec![1.0, 3.0], 0.4);
        p.precedence.push(PrecedenceConstraint { dependent: 1, prerequisite: 0, scale: 1.5, threshold: 0.7 });
        assert_eq!(solve_allocation(&p).unwrap(), solve_allocation(&p).unwrap());
    }
}
