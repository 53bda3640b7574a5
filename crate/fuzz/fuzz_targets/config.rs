#![no_main]

use std::collections::BTreeMap;

use cstl::cli::{parse_config_str, RunConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(pairs) = parse_config_str(text) else {
        return;
    };
    let map: BTreeMap<String, String> = pairs.into_iter().collect();
    let Ok(cfg) = RunConfig::from_pairs(map) else {
        return;
    };
    // A manifest must describe the same run when read back.
    let manifest = cfg.to_manifest(None);
    let again: BTreeMap<String, String> = parse_config_str(&manifest)
        .expect("manifest parses")
        .into_iter()
        .collect();
    let cfg2 = RunConfig::from_pairs(again).expect("manifest validates");
    assert_eq!(cfg2.to_manifest(None), manifest);
});
