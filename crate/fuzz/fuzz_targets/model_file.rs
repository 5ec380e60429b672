#![no_main]

use libfuzzer_sys::fuzz_target;
use safeocc::io::{detector_from_file, sensor_from_file, ModelFile};

fuzz_target!(|data: &[u8]| {
    let Ok(file) = ModelFile::from_bytes(data) else { return };
    // Anything that parses must re-encode stably. Bytes are compared rather
    // than values because payloads may hold NaN.
    let again = file.to_bytes().expect("parsed files re-encode");
    let reparsed = ModelFile::from_bytes(&again).expect("re-encoded file parses");
    assert_eq!(reparsed.to_bytes().unwrap(), again);
    let _ = sensor_from_file(&file);
    let _ = detector_from_file(&file);
});
