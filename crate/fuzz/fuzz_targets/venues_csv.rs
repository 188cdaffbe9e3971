#![no_main]

use libfuzzer_sys::fuzz_target;
use nutf::ingest::{read_venues, VenueIndex};

fuzz_target!(|data: &[u8]| {
    if let Ok(venues) = read_venues(data, 50.0) {
        // Every accepted catalog must be indexable.
        VenueIndex::new(venues).unwrap();
    }
});
