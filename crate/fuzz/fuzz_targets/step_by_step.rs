#![no_main]

use libfuzzer_sys::fuzz_target;
use sc2dec::fae;

fuzz_target!(|data: &str| {
    if let Some((blocks, full)) = fae::parse_step_by_step(data) {
        assert!(data.ends_with(full));
        let _ = fae::merge_blocks(&blocks);
    }
});
