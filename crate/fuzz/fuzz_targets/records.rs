#![no_main]

use libfuzzer_sys::fuzz_target;
use sc2dec::eval::EvalSample;
use sc2dec::fae::TrainingExample;
use sc2dec::{DecompilationRecord, DecompilationTask, SourceFunction};

fuzz_target!(|data: &str| {
    for line in data.lines() {
        let _ = serde_json::from_str::<DecompilationTask>(line);
        let _ = serde_json::from_str::<EvalSample>(line);
        let _ = serde_json::from_str::<TrainingExample>(line);
        let _ = serde_json::from_str::<SourceFunction>(line);
        if let Ok(r) = serde_json::from_str::<DecompilationRecord>(line) {
            let again = serde_json::to_string(&r).unwrap();
            let back: DecompilationRecord = serde_json::from_str(&again).unwrap();
            assert_eq!(serde_json::to_string(&back).unwrap(), again);
        }
    }
});
