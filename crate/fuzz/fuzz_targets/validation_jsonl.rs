#![no_main]

use libfuzzer_sys::fuzz_target;
use nutf::harness::read_observations;
use nutf::ProblemDims;

fuzz_target!(|data: &[u8]| {
    let [n, t, c, rest @ ..] = data else {
        return;
    };
    let dim = |b: &u8| usize::from(*b % 64) + 1;
    let dims = ProblemDims::new(dim(n), dim(t), dim(c)).unwrap();
    if let Ok(obs) = read_observations(rest, Some(&dims)) {
        assert!(obs
            .iter()
            .all(|o| o.user < dims.n_users && o.slot < dims.n_slots && o.category < dims.n_categories));
    }
});
