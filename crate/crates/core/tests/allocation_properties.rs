use proptest::prelude::*;
use tutorflow_core::allocation::{
    primal_violation, solve_allocation, AllocationProblem, InfluenceKind, InfluenceModel, ObjectiveMode,
    PrecedenceConstraint,
};

fn problem(n: usize, budget: f64, theta: f64, w: (f64, f64), prec: Option<(f64, f64)>) -> AllocationProblem {
    AllocationProblem {
        sessions: n,
        resources: 2,
        budgets: vec![budget; n],
        volatility: theta,
        initial_sentiment: 0.0,
        influence: InfluenceModel::linear(vec![w.0, w.1]),
        precedence: prec
            .map(|(scale, threshold)| vec![PrecedenceConstraint { dependent: 1, prerequisite: 0, scale, threshold }])
            .unwrap_or_default(),
        objective: ObjectiveMode::SumSentiment,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn more_budget_never_hurts(
        n in 2usize..5,
        budget in 0.2f64..2.0,
        extra in 0.0f64..1.0,
        theta in 0.0f64..0.95,
        w0 in 0.1f64..2.0,
        w1 in 0.1f64..2.0,
        scale in 0.5f64..2.0,
        thr in 0.0f64..2.0,
    ) {
        let small = solve_allocation(&problem(n, budget, theta, (w0, w1), Some((scale, thr)))).unwrap();
        let large = solve_allocation(&problem(n, budget + extra, theta, (w0, w1), Some((scale, thr)))).unwrap();
        prop_assert!(large.objective >= small.objective - 1e-7);
    }

    #[test]
    fn unit_power_matches_linear(
        n in 1usize..5,
        theta in 0.0f64..0.95,
        w0 in 0.1f64..2.0,
        w1 in 0.1f64..2.0,
        thr in 0.0f64..1.5,
    ) {
        let linear = problem(n, 1.0, theta, (w0, w1), Some((1.0, thr)));
        let mut power = linear.clone();
        power.influence.kind = InfluenceKind::Power;
        power.influence.exponent = 1.0;
        let a = solve_allocation(&linear).unwrap();
        let b = solve_allocation(&power).unwrap();
        prop_assert!((a.objective - b.objective).abs() <= 1e-6);
        prop_assert!(primal_violation(&b.allocation, &power).unwrap() <= 1e-8);
    }

    #[test]
    fn solves_are_deterministic(
        n in 1usize..5,
        theta in 0.0f64..0.95,
        w0 in 0.1f64..2.0,
        w1 in 0.1f64..2.0,
    ) {
        let mut p = problem(n, 1.0, theta, (w0, w1), Some((1.5, 0.5)));
        p.influence = InfluenceModel::power(vec![w0, w1], 0.5);
        let a = solve_allocation(&p).unwrap();
        let b = solve_allocation(&p).unwrap();
        prop_assert_eq!(a.allocation, b.allocation);
        prop_assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    }
}
