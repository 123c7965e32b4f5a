#![no_main]

use libfuzzer_sys::fuzz_target;
use sc2dec::mutate;

fuzz_target!(|data: &str| {
    for r in mutate::deletable_statements(data) {
        assert!(r.start <= r.end && r.end <= data.len());
        assert!(data.is_char_boundary(r.start) && data.is_char_boundary(r.end));
    }
    let out = mutate::delete_one_statement(data, data.len() as u64);
    assert!(out.len() <= data.len());
});
