use std::collections::BTreeSet;

use serde_json::Value;
use sweepopt::certificate::{analytic_candidate, certify, CertificateReport, Tolerances, CHECK_NAMES};
use sweepopt::instance::{builtin, closed_form_solution, Params};

fn schema() -> Value {
    serde_json::from_str(include_str!("../schema/certificate.schema.json")).unwrap()
}

fn strings(v: &Value) -> BTreeSet<String> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap().to_string())
        .collect()
}

#[test]
fn report_keys_match_schema() {
    let schema = schema();
    let inst = builtin("annulus_example", &Params::new()).unwrap();
    let opt = closed_form_solution("annulus_example").unwrap();
    let report = certify(&inst, &analytic_candidate(&inst, opt.as_ref(), 200), &Tolerances::analytic());
    let json: Value = serde_json::from_str(&report.to_json()).unwrap();
    let top: BTreeSet<String> = json.as_object().unwrap().keys().cloned().collect();
    assert_eq!(top, strings(&schema["required"]));
    let checks: BTreeSet<String> = json["checks"].as_object().unwrap().keys().cloned().collect();
    assert_eq!(checks, strings(&schema["properties"]["checks"]["required"]));
    assert_eq!(checks, CHECK_NAMES.iter().map(|s| s.to_string()).collect());
    for c in json["checks"].as_object().unwrap().values() {
        let keys: BTreeSet<String> = c.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["pass", "residual", "tolerance"].iter().map(|s| s.to_string()).collect());
    }
    for atom in json["nu_atoms"].as_array().unwrap() {
        assert_eq!(atom.as_array().unwrap().len(), 2);
    }
}

#[test]
fn infinite_residual_roundtrips_as_null() {
    let inst = builtin("annulus_example", &Params::new()).unwrap();
    let opt = closed_form_solution("annulus_example").unwrap();
    let mut cand = analytic_candidate(&inst, opt.as_ref(), 200);
    cand.nu = None;
    let report = certify(&inst, &cand, &Tolerances::analytic());
    assert!(report.check("adjoint").residual.is_infinite());
    assert!(!report.overall_pass);
    let json = report.to_json();
    let v: Value = serde_json::from_str(&json).unwrap();
    assert!(v["checks"]["adjoint"]["residual"].is_null());
    let back: CertificateReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}
