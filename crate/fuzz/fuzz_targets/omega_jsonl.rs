#![no_main]

use libfuzzer_sys::fuzz_target;
use nutf::io::{read_omega, write_omega};
use nutf::ProblemDims;

// The first three bytes pick N, T, C in 1..=64; the rest is the file.
fuzz_target!(|data: &[u8]| {
    let [n, t, c, rest @ ..] = data else {
        return;
    };
    let dim = |b: &u8| usize::from(*b % 64) + 1;
    let dims = ProblemDims::new(dim(n), dim(t), dim(c)).unwrap();
    let Ok(omega) = read_omega(rest, dims) else {
        return;
    };
    let mut out = Vec::new();
    write_omega(&omega, &mut out).unwrap();
    assert_eq!(read_omega(out.as_slice(), dims).unwrap(), omega);
});
