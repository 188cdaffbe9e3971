#![no_main]

use libfuzzer_sys::fuzz_target;
use nutf::ingest::{read_category_map, CategoryMap};

fuzz_target!(|data: &[u8]| {
    if let Ok(pairs) = read_category_map(data) {
        let _ = CategoryMap::from_pairs(pairs, Some("other"));
    }
});
