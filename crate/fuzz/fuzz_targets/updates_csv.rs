#![no_main]

use libfuzzer_sys::fuzz_target;
use nutf::ingest::{read_updates, SlotMode, SlotScheme};

fuzz_target!(|data: &[u8]| {
    if let Ok(updates) = read_updates(data) {
        for mode in [SlotMode::PaperBins, SlotMode::Hourly] {
            assert_eq!(SlotScheme::covering(mode, &updates).is_some(), !updates.is_empty());
        }
    }
});
