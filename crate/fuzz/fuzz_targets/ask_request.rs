#![no_main]
use libfuzzer_sys::fuzz_target;
use trag_service::{validate, AskRequest, MAX_K};

fuzz_target!(|data: &[u8]| {
    if let Ok(req) = serde_json::from_slice::<AskRequest>(data) {
        if let Ok((question, k)) = validate(&req) {
            assert!(!question.trim().is_empty());
            assert!((1..=MAX_K).contains(&k));
        }
    }
});
