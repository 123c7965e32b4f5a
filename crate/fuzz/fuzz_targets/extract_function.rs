#![no_main]

use libfuzzer_sys::fuzz_target;
use sc2dec::disasm;

// First line names the function, the rest is the dump.
fuzz_target!(|data: &str| {
    let (name, raw) = data.split_once('\n').unwrap_or((data, ""));
    for (sym, _) in disasm::list_functions(raw) {
        let _ = disasm::extract_function(raw, &sym);
    }
    if let Ok(listing) = disasm::extract_function(raw, name) {
        assert!(!listing.text.contains('\r') || raw.contains('\r'));
    }
});
