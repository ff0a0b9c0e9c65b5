mod common;

use common::{audit_plan, trained_grid_mde};
use precond::env::*;
use precond::mde::{Mde, MdeConfig, PreconditionParams};
use precond::planner::*;
use precond::rng::{seeded, stream};

#[test]
fn plans_under_trained_estimator_pass_audit() {
    let (w, mde) = trained_grid_mde(4, 11);
    let params = PreconditionParams::new(0.1, 1.0).unwrap();
    let pre = Precondition::new(&w, &mde, params);
    let mut found = 0;
    for k in 0..40 {
        let p = w.sample_problem(&mut stream(11, "audit", &[k]));
        if let Some(t) = rrt_plan(&w, Some(&pre), &p, &PlannerConfig::default(), None, &mut seeded(k)).unwrap() {
            audit_plan(&w, Some(&mde), &params, &p, &t).unwrap();
            assert_eq!(t.step_mu.len(), t.actions.len());
            found += 1;
        }
    }
    assert!(found > 0);
}

#[test]
fn unconstrained_watering_plans_chain_and_reach_goal() {
    let w = WateringWorld::from_config(&WateringConfig::default()).unwrap();
    let params = PreconditionParams::new(0.1, 0.0).unwrap();
    for k in 0..10 {
        let p = w.sample_problem(&mut stream(5, "audit", &[k]));
        let t = rrt_plan(&w, None, &p, &PlannerConfig::default(), None, &mut seeded(k))
            .unwrap()
            .expect("unconstrained watering problem solvable");
        audit_plan(&w, None, &params, &p, &t).unwrap();
    }
}

#[test]
fn prior_precondition_blocks_everything_at_beta_two() {
    let w = GridWorld::from_config(&GridWorldConfig::default()).unwrap();
    let prior = Mde::prior(&w, &MdeConfig::default()).unwrap();
    let pre = Precondition::new(&w, &prior, PreconditionParams::new(0.1, 2.0).unwrap());
    let p = w.sample_problem(&mut seeded(1));
    let (plan, stats) =
        rrt_plan_with_stats(&w, Some(&pre), &p, &PlannerConfig::default(), None, &mut seeded(2)).unwrap();
    assert!(plan.is_none());
    assert_eq!(stats.tree_size, 1);
}

#[test]
fn candidates_deterministic_and_binned() {
    let w = WateringWorld::from_config(&WateringConfig::default()).unwrap();
    let p = w.sample_problem(&mut seeded(3));
    let cfg = PlannerConfig::default();
    let a = generate_candidates(&w, None, &p, 9, true, &cfg, None, 77).unwrap();
    let b = generate_candidates(&w, None, &p, 9, true, &cfg, None, 77).unwrap();
    assert_eq!(a, b);
    let bins = w.diversity_bin_edges().len() + 1;
    let cap = 9usize.div_ceil(bins);
    let mut counts = vec![0; bins];
    for t in &a {
        counts[diversity_key(&w, t)] += 1;
    }
    assert!(counts.iter().all(|&c| c <= cap), "{counts:?}");
}

#[test]
fn random_rollouts_respect_constraints() {
    let w = GridWorld::from_config(&GridWorldConfig::default()).unwrap();
    for k in 0..20 {
        let start = w.sample_state(&mut seeded(k));
        if let Some(t) = random_rollout(&w, &start, 12, &mut seeded(100 + k)).unwrap() {
            assert!(t.actions.len() <= 12);
            for (i, a) in t.actions.iter().enumerate() {
                assert_eq!(w.model_step(t.states[i], *a), t.states[i + 1]);
                assert!(w.transition_allowed(&t.states[i], a, &t.states[i + 1]));
            }
        }
    }
}
