#![no_main]

use libfuzzer_sys::fuzz_target;
use sc2dec::{disasm, fae};

fuzz_target!(|data: &str| {
    let (name, raw) = data.split_once('\n').unwrap_or((data, ""));
    if let Ok(seq) = disasm::parse_interleaved(raw, name) {
        let merged = fae::merge_blocks(&seq.blocks);
        let before: Vec<&str> = seq.asm_lines().collect();
        let after: Vec<&str> = merged.iter().flat_map(|b| b.asm_lines.iter().map(String::as_str)).collect();
        assert_eq!(before, after);
        let _ = fae::serialize_step_by_step(&seq, "int f(void) { return 0; }");
    }
});
