#![no_main]
use libfuzzer_sys::fuzz_target;
use trag_core::dense::{DenseIndex, SearchMode};

fuzz_target!(|data: &[u8]| {
    if let Ok(index) = DenseIndex::from_bytes(data) {
        let q = vec![0.5; index.dim()];
        let _ = index.knn(&q, 5, SearchMode::Ann, true);
        let _ = index.knn(&q, 5, SearchMode::Exact, false);
    }
});
