use mdbench::bench::{
    decode, encode, grid_search, make_dataset, read_records, run_benchmark, run_cell, select_winner, split, split_sizes, Budget,
    Container, ConfigStatus, HyperGrid, Manifest, Method, SearchOptions, MIN_TIME_POINTS,
};
use mdbench::evalx::Verdict;

fn sindy_grid() -> HyperGrid {
    serde_json::from_str(r#"{"thresholds":[0.001,0.01,0.1,0.5],"bases":[["poly"]],"poly_orders":[2,3],"alphas":[0.05],"max_iters":[20]}"#)
        .unwrap()
}

#[test]
fn split_is_contiguous_and_covers_the_window() {
    for n in [MIN_TIME_POINTS, 11, 101, 201, 577, 1000] {
        let (a, b, c) = split_sizes(n).unwrap();
        assert_eq!(a + b + c, n);
        assert_eq!(a, n * 6 / 10);
        assert!(b >= 1 && c >= 1, "n={n}");
    }
    assert!(split_sizes(MIN_TIME_POINTS - 1).is_err());

    let ds = make_dataset("burgers", 0, 0.5, None).unwrap();
    let s = split(&ds).unwrap();
    let t = &ds.field.time;
    assert_eq!(s.train.field.time.start, t.start);
    let after = |x: &mdbench::tensorgrid::Axis| x.start + x.step * x.count as f64;
    assert!((after(&s.train.field.time) - s.validation.field.time.start).abs() < 1e-12);
    assert!((after(&s.validation.field.time) - s.test.field.time.start).abs() < 1e-12);
    assert_eq!(s.combined.field.time.count, s.train.field.time.count + s.validation.field.time.count);
    assert_eq!(
        s.train.field.time.count + s.validation.field.time.count + s.test.field.time.count,
        t.count
    );
    assert_eq!(s.test.field.values.shape()[2], ds.field.values.shape()[2]);
}

#[test]
fn recorded_winner_has_the_best_validation_fitness() {
    for snr in [None, Some(30.0)] {
        let ds = make_dataset("lotka_volterra", 2, 1.0, snr).unwrap();
        let r = grid_search(&ds, Method::Sindy, &sindy_grid(), &SearchOptions { seed: 2, ..Default::default() }).unwrap();
        let w = r.winner.expect("winner");
        assert_eq!(select_winner(&r.outcomes), Some(w));
        let best = r
            .outcomes
            .iter()
            .filter(|o| o.status == ConfigStatus::Ok)
            .map(|o| o.fitness)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.outcomes[w].fitness, best);
        assert_eq!(r.outcomes.len(), r.configs.len());
    }
}

#[test]
fn clean_ode_record_is_full_fidelity() {
    let ds = make_dataset("logistic", 0, 1.0, None).unwrap();
    let rec = run_cell(&ds, Method::Sindy, &sindy_grid(), Budget::default(), 0);
    assert!(rec.is_ok(), "{rec:?}");
    assert_eq!(rec.fidelity, Some(Verdict::Full));
    assert_eq!(rec.configs_total, 8);
    assert!(rec.nmse_test.unwrap() < 1e-8);
    assert!(rec.complexity.unwrap() > 0);
}

#[test]
fn unsupported_pairs_are_rejected() {
    let ode = make_dataset("logistic", 0, 1.0, None).unwrap();
    let rec = run_cell(&ode, Method::Pdefind, &Method::Pdefind.default_grid(ode.kind()), Budget::default(), 0);
    assert!(!rec.is_ok());
    assert!(rec.error.is_some());
}

#[test]
fn exhausted_budget_skips_remaining_configs() {
    let ds = make_dataset("burgers", 0, 0.5, None).unwrap();
    let budget = Budget { per_config_secs: 300.0, per_cell_secs: 0.0 };
    let rec = run_cell(&ds, Method::Pdefind, &Method::Pdefind.default_grid(ds.kind()), budget, 0);
    assert!(rec.budget_exceeded);
    assert!(rec.configs_skipped > 0);
}

#[test]
fn noisy_container_round_trips_bitwise() {
    let ds = make_dataset("advection_diffusion", 1, 0.5, Some(20.0)).unwrap();
    let c = Container::from(ds);
    let bytes = encode(&c).unwrap();
    let back = decode(&bytes).unwrap();
    assert_eq!(back, c);
    assert_eq!(encode(&back).unwrap(), bytes);
    assert_eq!(back.dataset.meta.snr_db, Some(20.0));

    assert!(decode(&bytes[..bytes.len() / 2]).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(decode(&bad).is_err());
}

#[test]
fn manifest_resume_appends_only_missing_cells() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.jsonl");
    let first: Manifest = serde_json::from_str(r#"{"systems":["logistic"],"methods":["sindy"],"seeds":[0]}"#).unwrap();
    let s = run_benchmark(&first, &out, 1).unwrap();
    assert_eq!((s.written, s.resumed), (1, 0));
    let wider: Manifest =
        serde_json::from_str(r#"{"systems":["logistic","rc_circuit"],"methods":["sindy","wsindy"],"seeds":[0]}"#).unwrap();
    let s = run_benchmark(&wider, &out, 1).unwrap();
    assert_eq!((s.written, s.resumed), (1, 1));
    let records = read_records(&out).unwrap();
    assert_eq!(records.len(), 2);
    assert!(records.iter().all(|r| r.method == "sindy"));
}

#[test]
fn manifest_rejects_unknown_fields() {
    assert!(serde_json::from_str::<Manifest>(r#"{"systems":["logistic"],"methods":["sindy"],"seeds":[0],"extra":1}"#).is_err());
}
