#![no_main]

use libfuzzer_sys::fuzz_target;
use sc2dec::backend::extract_code;
use sc2dec::prompt;

fuzz_target!(|data: &str| {
    let _ = extract_code(data);
    let _ = prompt::parse_vanilla(data);
});
