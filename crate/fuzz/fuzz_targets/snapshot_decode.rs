#![no_main]

use libfuzzer_sys::fuzz_target;
use nutf::snapshot::{self, DecodeLimits, Snapshot};

// Small limits keep allocations bounded; accepted inputs are canonical, so
// re-encoding must reproduce them byte for byte.
fuzz_target!(|data: &[u8]| {
    let limits = DecodeLimits { max_users: 1 << 12, max_cols: 1 << 16 };
    let Ok(snap) = snapshot::decode_with_limits(data, &limits) else {
        return;
    };
    let bytes = match &snap {
        Snapshot::X(x) => snapshot::encode_x(x),
        Snapshot::Model(m) => snapshot::encode_model(m),
    };
    assert_eq!(bytes, data);
});
