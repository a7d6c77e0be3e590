use std::collections::BTreeSet;

use qscn::qkd_rate::QkdDeviceParams;
use qscn::scenario::{EngineDef, RoutingDef, ScenarioFile, SECOQC_JSON};
use serde_json::Value;

fn schema() -> Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/scenario.schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn keys(v: &Value) -> BTreeSet<String> {
    v.as_object().unwrap().keys().cloned().collect()
}

#[test]
fn schema_lists_exactly_the_loader_fields() {
    let s = schema();
    let device = serde_json::to_value(QkdDeviceParams::default()).unwrap();
    assert_eq!(keys(&s["$defs"]["device"]["properties"]), keys(&device));
    let engine = serde_json::to_value(EngineDef::default()).unwrap();
    assert_eq!(keys(&s["properties"]["engine"]["properties"]), keys(&engine));
    let routing = serde_json::to_value(RoutingDef::default()).unwrap();
    assert_eq!(keys(&s["properties"]["routing"]["properties"]), keys(&routing));

    // every field the bundled scenario uses is declared
    let file: ScenarioFile = ScenarioFile::parse(SECOQC_JSON).unwrap();
    let doc = serde_json::to_value(&file).unwrap();
    assert!(keys(&doc).is_subset(&keys(&s["properties"])));
    let link_keys = keys(&s["$defs"]["link"]["properties"]);
    for l in doc["links"].as_array().unwrap() {
        assert!(keys(l).is_subset(&link_keys));
    }
    assert!(keys(&doc["traffic"]).is_subset(&keys(&s["properties"]["traffic"]["properties"])));
}

#[test]
fn schema_defaults_match_reference_device() {
    let s = schema();
    let device = serde_json::to_value(QkdDeviceParams::default()).unwrap();
    for (name, prop) in s["$defs"]["device"]["properties"].as_object().unwrap() {
        let (want, have) = (&prop["default"], &device[name]);
        match (want.as_f64(), have.as_f64()) {
            (Some(a), Some(b)) => assert_eq!(a, b, "default of {name}"),
            _ => assert_eq!(want, have, "default of {name}"),
        }
    }
}
