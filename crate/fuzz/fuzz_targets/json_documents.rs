#![no_main]

use libfuzzer_sys::fuzz_target;
use safeocc::control::Scenario;
use safeocc::detector::DetectorConfig;
use safeocc_cli::manifest::Manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = serde_json::from_slice::<Manifest>(data) {
        let _ = m.validate(std::path::Path::new("/nonexistent"));
    }
    if let Ok(c) = serde_json::from_slice::<DetectorConfig>(data) {
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<DetectorConfig>(&text).unwrap(), c);
    }
    let _ = serde_json::from_slice::<Scenario>(data);
});
