#![no_main]

use libfuzzer_sys::fuzz_target;
use sc2dec::retrieval;

fuzz_target!(|data: &str| {
    let tokens = retrieval::tokenize_asm(data);
    assert!(tokens.iter().all(|t| !t.is_empty()));
    if let Ok(index) = retrieval::build_index([("d".to_string(), data.to_string(), String::new())]) {
        let hits = index.query(data, 3);
        assert!(hits.len() <= 1);
        assert!(hits.iter().all(|h| h.1.is_finite()));
    }
});
