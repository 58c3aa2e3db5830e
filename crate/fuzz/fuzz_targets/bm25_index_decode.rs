#![no_main]
use libfuzzer_sys::fuzz_target;
use trag_core::bm25::Bm25Index;

fuzz_target!(|data: &[u8]| {
    if let Ok(index) = Bm25Index::from_bytes(data) {
        let _ = index.search("a b c", 10);
        assert_eq!(Bm25Index::from_bytes(&index.to_bytes()).unwrap(), index);
    }
});
