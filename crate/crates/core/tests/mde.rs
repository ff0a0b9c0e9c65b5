use precond::env::*;
use precond::evaluation::confusion_rates;
use precond::mde::*;
use precond::rng::seeded;
use proptest::prelude::*;
use rand::Rng;

/// Φ⁻¹(0.975) to 16 significant digits.
const Z_975: f64 = 1.959963984540054;

fn grid() -> GridWorld {
    GridWorld::from_config(&GridWorldConfig::default()).unwrap()
}

/// Random single-step transitions over the whole grid, slips included.
fn random_grid_dataset(w: &GridWorld, n: usize, seed: u64) -> MdeDataset<Cell, Move> {
    let mut r = seeded(seed);
    let mut ds = MdeDataset::new(w);
    let free = w.free_cells().to_vec();
    for _ in 0..n {
        let s = free[r.random_range(0..free.len())];
        let a = Move::ALL[r.random_range(0..4)];
        ds.transitions
            .push(label_transition(w, &s, &a, &w.true_step(s, a)).unwrap());
    }
    ds
}

#[test]
fn beta_matches_reference_quantile() {
    assert!((beta_from_delta(0.025).unwrap() - Z_975).abs() < 1e-9);
    assert!(beta_from_delta(0.5).unwrap().abs() < 1e-12);
    assert!(beta_from_delta(0.0).is_err());
    assert!(beta_from_delta(1.0).is_err());
}

#[test]
fn deviation_recomputable_from_stored_states() {
    let w = grid();
    let ds = random_grid_dataset(&w, 200, 1);
    for t in &ds.transitions {
        assert_eq!(t.predicted_next, w.model_step(t.state, t.action));
        assert_eq!(t.deviation, w.distance(&t.predicted_next, &t.observed_next));
    }
}

#[test]
fn prior_admits_nothing_at_beta_two() {
    let w = grid();
    let prior = Mde::prior(&w, &MdeConfig::default()).unwrap();
    let params = PreconditionParams::new(0.1, 2.0).unwrap();
    for &c in w.free_cells() {
        for a in Move::ALL {
            let (mu, sigma) = mde_predict(&prior, &w, &c, &a).unwrap();
            assert_eq!(mu, 0.0);
            assert!(sigma >= 0.05);
            assert!(!in_precondition(&prior, &w, &c, &a, &params).unwrap());
        }
    }
    let cv = random_grid_dataset(&w, 300, 2);
    let (tpr, tnr) = confusion_rates(&w, &prior, &cv, &params).unwrap();
    assert_eq!(tpr, Some(0.0));
    assert_eq!(tnr, Some(1.0));
}

#[test]
fn trained_estimator_separates_slips() {
    let w = grid();
    let ds = random_grid_dataset(&w, 600, 3);
    let mde = train_mde(&w, &ds, &MdeConfig::default(), 3).unwrap();
    assert_eq!(mde.n_train(), 300);
    let (slip_mu, slip_sigma) = mde_predict(&mde, &w, &Cell::new(7, 4), &Move::Left).unwrap();
    let (safe_mu, safe_sigma) = mde_predict(&mde, &w, &Cell::new(1, 8), &Move::Up).unwrap();
    assert!(slip_mu + 2.0 * slip_sigma > safe_mu + 2.0 * safe_sigma);
    assert!(
        safe_mu + 2.0 * safe_sigma < 0.1,
        "open-floor move excluded: {safe_mu} {safe_sigma}"
    );
}

#[test]
fn snapshot_round_trip_predicts_identically() {
    let w = grid();
    let ds = random_grid_dataset(&w, 80, 4);
    let mde = train_mde(&w, &ds, &MdeConfig::default(), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    mde.save(&p).unwrap();
    let back = Mde::load(&p).unwrap();
    for &c in w.free_cells() {
        for a in Move::ALL {
            assert_eq!(mde.predict(&w, &c, &a).unwrap(), back.predict(&w, &c, &a).unwrap());
        }
    }
}

#[test]
fn dataset_jsonl_round_trip_and_corruption() {
    let w = grid();
    let ds = random_grid_dataset(&w, 50, 5);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.jsonl");
    ds.write_jsonl(&w, &p).unwrap();
    assert_eq!(MdeDataset::read_jsonl(&w, &p).unwrap(), ds);

    let mut text = std::fs::read_to_string(&p).unwrap();
    text.push_str("{not json\n");
    std::fs::write(&p, text).unwrap();
    assert!(matches!(
        MdeDataset::<Cell, Move>::read_jsonl(&w, &p),
        Err(precond::Error::Corrupt { .. })
    ));
}

#[test]
fn estimator_rejects_other_featurizer() {
    let w = grid();
    let water = WateringWorld::from_config(&WateringConfig::default()).unwrap();
    let prior = Mde::prior(&w, &MdeConfig::default()).unwrap();
    let s = water.sample_state(&mut seeded(0));
    assert!(prior.predict(&water, &s, &WaterAction::Rotate { theta: 10.0 }).is_err());
}

proptest! {
    #[test]
    fn beta_decreasing_and_antisymmetric(a in 0.001..0.999f64, b in 0.001..0.999f64) {
        prop_assume!(a < b);
        let (ba, bb) = (beta_from_delta(a).unwrap(), beta_from_delta(b).unwrap());
        prop_assert!(ba > bb);
        prop_assert!((ba + beta_from_delta(1.0 - a).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn precondition_shrinks_with_beta(mu in 0.0..0.3f64, sigma in 1e-4..0.3f64, b1 in -3.0..3.0f64, b2 in -3.0..3.0f64) {
        prop_assume!(b1 <= b2);
        let p1 = PreconditionParams::new(0.1, b1).unwrap();
        let p2 = PreconditionParams::new(0.1, b2).unwrap();
        prop_assert!(!p2.admits(mu, sigma) || p1.admits(mu, sigma));
    }
}
