use dyadica::report::{content_hash, envelope, verify_envelope};
use dyadica::verify::{run_criterion, verify_all, VerifyConfig};

#[test]
fn cheap_criteria_pass_and_repeat() {
    let cfg = VerifyConfig { seed: 7, depth: 5, only: vec![2, 4, 6, 10] };
    let a = verify_all(&cfg);
    assert_eq!(a.criteria.len(), 4);
    assert!(a.passed(), "{}", a.table());
    let b = verify_all(&cfg);
    assert_eq!(a.hash(), b.hash());
}

#[test]
fn seeds_change_the_report() {
    let a = run_criterion(4, &VerifyConfig { seed: 1, depth: 5, only: vec![] });
    let b = run_criterion(4, &VerifyConfig { seed: 2, depth: 5, only: vec![] });
    assert!(a.passed && b.passed);
    assert_ne!(a.metrics, b.metrics);
}

#[test]
fn unknown_criterion_fails() {
    let r = run_criterion(11, &VerifyConfig::default());
    assert!(!r.passed);
    assert!(r.detail.contains("no criterion"));
}

#[test]
fn envelope_hash_skips_timestamp() {
    let cfg = serde_json::json!({"seed": 3});
    let res = serde_json::json!({"values": [1.0, 2.5]});
    let mut a = envelope("x", &cfg, &res);
    let b = envelope("x", &cfg, &res);
    assert_eq!(a["hash"], b["hash"]);
    a["timestamp"] = serde_json::json!(0);
    assert!(verify_envelope(&a));
    assert_eq!(content_hash(&serde_json::json!({"elapsed_ms": 1})), content_hash(&serde_json::json!({})));
}
