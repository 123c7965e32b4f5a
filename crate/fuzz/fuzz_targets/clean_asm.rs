#![no_main]

use libfuzzer_sys::fuzz_target;
use sc2dec::disasm;

fuzz_target!(|data: &str| {
    let cleaned = disasm::clean_asm(data);
    assert!(cleaned.lines().count() <= data.lines().count());
    for line in data.lines() {
        let _ = disasm::clean_line(line);
    }
});
