use delaysched_web::{compare_json, decide_json, presets_json, recovery_json};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn presets_have_names() {
    let v = parse(&presets_json());
    let names: Vec<&str> = v.as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"doc") && names.contains(&"recovery"));
}

#[test]
fn compare_reports_four_strategies() {
    let v = parse(&compare_json("ml", 1, 0.8, 0.1, 5, 30.0).unwrap());
    assert_eq!(v["audit_ok"], true);
    let s = v["strategies"].as_array().unwrap();
    let labels: Vec<&str> = s.iter().map(|x| x["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["bs", "nls", "rds", "differentiated"]);
    assert!(v["invocations"].as_u64().unwrap() > 0);
    assert!(s.iter().all(|x| x["cdf"].as_array().unwrap().last().unwrap()[1] == 1.0));
}

#[test]
fn compare_rejects_bad_parameters() {
    assert!(compare_json("ml", 1, 1.5, 0.1, 1, 10.0).is_err());
    assert!(compare_json("ml", 1, 0.8, 0.1, 0, 10.0).is_err());
    assert!(compare_json("nope", 1, 0.8, 0.1, 1, 10.0).is_err());
}

#[test]
fn decide_follows_the_gate() {
    // Local node 0 is busy and faster; node 1 is a free fallback.
    let input = |alpha: f64| {
        format!(
            r#"{{"alpha":{alpha},"nodes":[
                {{"free_slots":0,"local_bytes":1000,"predicted_ms":500}},
                {{"free_slots":1,"predicted_ms":1000}}]}}"#
        )
    };
    let v = parse(&decide_json(&input(0.8)).unwrap());
    assert_eq!(v["action"], "delay");
    assert_eq!(v["node"], 0);
    assert_eq!(v["fallback"], serde_json::json!([1]));
    let v = parse(&decide_json(&input(0.4)).unwrap());
    assert_eq!(v["action"], "immediate");
    assert_eq!(v["node"], 1);
    assert_eq!(v["reason"], "benefit-insufficient");
    assert!(decide_json("{}").is_err());
    assert!(decide_json(r#"{"alpha":0.8,"nodes":[]}"#).is_err());
}

#[test]
fn recovery_curve_for_unseen_function() {
    let v = parse(&recovery_json(16, 0.1).unwrap());
    let f = v["functions"].as_array().unwrap();
    let resize = f.iter().find(|x| x["function"] == "image-resize").unwrap();
    assert!(!resize["curve"].as_array().unwrap().is_empty());
    assert!(resize["recovered_at"].as_u64().is_some());
}
