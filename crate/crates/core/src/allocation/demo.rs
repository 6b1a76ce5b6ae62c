//! Five named student profiles over 30 sessions and two resources
//! (0 = Theory, 1 = Application).

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{
    AllocationProblem, EngagementCurve, InfluenceKind, InfluenceModel, ObjectiveMode, PrecedenceConstraint, Weights,
};

pub const THEORY: usize = 0;
pub const APPLICATION: usize = 1;
pub const RESOURCE_NAMES: [&str; 2] = ["theory", "application"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoProfile {
    pub name: String,
    pub problem: AllocationProblem,
}

struct Spec {
    name: &'static str,
    volatility: f64,
    initial_sentiment: f64,
    mastery: [f64; 2],
    curves: [EngagementCurve; 2],
    scale: f64,
    threshold: f64,
}

fn curve(sharpness: f64, peak: f64, target: f64) -> EngagementCurve {
    EngagementCurve { sharpness, peak, target }
}

pub fn demo_profiles() -> Vec<DemoProfile> {
    const SESSIONS: usize = 30;
    let specs = [
        Spec {
            name: "steady-theorist",
            volatility: 0.8,
            initial_sentiment: 0.5,
            mastery: [0.5, 0.2],
            curves: [curve(2.0, 1.0, 0.5), curve(2.0, 1.0, 0.5)],
            scale: 1.0,
            threshold: 3.0,
        },
        Spec {
            name: "eager-practitioner",
            volatility: 0.5,
            initial_sentiment: 0.3,
            mastery: [0.8, 0.55],
            curves: [curve(2.0, 1.0, 0.5), curve(2.0, 1.0, 0.5)],
            scale: 2.0,
            threshold: 2.0,
        },
        Spec {
            name: "volatile-novice",
            volatility: 0.2,
            initial_sentiment: 0.1,
            mastery: [0.15, 0.05],
            curves: [curve(2.0, 1.0, 0.5), curve(2.0, 1.0, 0.3)],
            scale: 1.0,
            threshold: 5.0,
        },
        Spec {
            name: "balanced",
            volatility: 0.6,
            initial_sentiment: 0.4,
            mastery: [0.5, 0.5],
            curves: [curve(2.0, 1.0, 0.5), curve(2.0, 1.2, 0.5)],
            scale: 1.5,
            threshold: 4.0,
        },
        Spec {
            name: "late-bloomer",
            volatility: 0.9,
            initial_sentiment: 0.2,
            mastery: [0.3, 0.6],
            curves: [curve(2.0, 1.0, 0.5), curve(1.0, 1.0, 0.5)],
            scale: 0.5,
            threshold: 10.0,
        },
    ];
    specs
        .into_iter()
        .map(|s| DemoProfile {
            name: s.name.to_string(),
            problem: AllocationProblem {
                sessions: SESSIONS,
                resources: 2,
                budgets: vec![1.0; SESSIONS],
                volatility: s.volatility,
                initial_sentiment: s.initial_sentiment,
                influence: InfluenceModel {
                    kind: InfluenceKind::Linear,
                    exponent: 1.0,
                    weights: Weights::Engagement { mastery: s.mastery.to_vec(), curves: s.curves.to_vec() },
                },
                precedence: vec![PrecedenceConstraint {
                    dependent: APPLICATION,
                    prerequisite: THEORY,
                    scale: s.scale,
                    threshold: s.threshold,
                }],
                objective: ObjectiveMode::SumSentiment,
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::solve_allocation;

    #[test]
    fn five_profiles_of_thirty_sessions() {
        let profiles = demo_profiles();
        assert_eq!(profiles.len(), 5);
        for p in &profiles {
            assert_eq!((p.problem.sessions, p.problem.resources), (30, 2));
            p.problem.validate().unwrap();
        }
    }

    #[test]
    fn every_profile_solves_with_certificate() {
        for p in demo_profiles() {
            let plan = solve_allocation(&p.problem).unwrap();
            assert!(plan.kkt.accepted, "{}: {:?}", p.name, plan.kkt);
        }
    }
}
