#![no_main]

use libfuzzer_sys::fuzz_target;
use sihg::graph::SplitPlan;

fuzz_target!(|data: &[u8]| {
    if let Ok(plan) = serde_json::from_slice::<SplitPlan>(data) {
        let n = plan.test_edge_indices.len().saturating_mul(2).saturating_add(8);
        if plan.validate(n).is_ok() {
            let _ = plan.train_edge_indices(n);
        }
    }
});
