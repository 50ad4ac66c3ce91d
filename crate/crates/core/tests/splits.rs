mod common;

use common::{skewed_records, split_violations};
use cxray::data::split::{make_splits, official_split, SplitPlan, Subset, RESAMPLES, TOLERANCE_PP};
use proptest::prelude::*;

#[test]
fn thousand_skewed_patients() {
    let records = skewed_records(1000, 3);
    let plan = make_splits(&records, 42).unwrap();
    assert_eq!(plan.resamples.len(), RESAMPLES);
    let worst = split_violations(&plan, &records).unwrap();
    assert!(worst <= TOLERANCE_PP, "share off by {worst:.2} points");
    assert_eq!(make_splits(&records, 42).unwrap(), plan);
}

#[test]
fn resamples_differ() {
    let records = skewed_records(400, 5);
    let plan = make_splits(&records, 1).unwrap();
    for w in plan.resamples.windows(2) {
        assert_ne!(w[0].patients, w[1].patients);
    }
}

#[test]
fn plan_survives_json() {
    let records = skewed_records(200, 8);
    let plan = make_splits(&records, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("split.json");
    plan.save(&path).unwrap();
    assert_eq!(SplitPlan::load(&path).unwrap(), plan);
}

#[test]
fn official_lists_are_honoured() {
    let records = skewed_records(300, 4);
    let patients: Vec<&str> = {
        let mut p: Vec<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
        p.dedup();
        p
    };
    let test_patients: std::collections::HashSet<&str> = patients.iter().step_by(5).copied().collect();
    let (mut tv, mut te) = (String::new(), String::new());
    for r in &records {
        let list = if test_patients.contains(r.patient_id.as_str()) { &mut te } else { &mut tv };
        list.push_str(&r.image);
        list.push('\n');
    }
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("train_val_list.txt"), dir.path().join("test_list.txt"));
    std::fs::write(&a, tv).unwrap();
    std::fs::write(&b, te).unwrap();
    let plan = official_split(&records, &a, &b, 0).unwrap();
    let r = &plan.resamples[0];
    for i in r.indices(&records, Subset::Test) {
        assert!(test_patients.contains(records[i].patient_id.as_str()));
    }
    assert!(!r.indices(&records, Subset::Val).is_empty());
    split_violations(&plan, &records).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn any_seed_gives_valid_deterministic_plans(corpus in 0u64..1000, seed in any::<u64>()) {
        let records = skewed_records(300, corpus);
        let plan = make_splits(&records, seed).unwrap();
        let worst = split_violations(&plan, &records).map_err(TestCaseError::fail)?;
        prop_assert!(worst <= TOLERANCE_PP);
        prop_assert_eq!(make_splits(&records, seed).unwrap(), plan);
    }
}
