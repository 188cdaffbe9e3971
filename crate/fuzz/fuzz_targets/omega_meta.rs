#![no_main]

use libfuzzer_sys::fuzz_target;
use nutf::io::OmegaMeta;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(meta) = OmegaMeta::from_json(text) {
        assert_eq!(OmegaMeta::from_json(&meta.to_json()).unwrap(), meta);
    }
});
