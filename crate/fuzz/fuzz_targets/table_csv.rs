#![no_main]
use libfuzzer_sys::fuzz_target;
use trag_core::linearize::segment;
use trag_core::tokenize::SimpleTokenizer;

fuzz_target!(|data: &[u8]| {
    // parsed tables must also segment cleanly
    if let Ok(table) = trag_core::corpus::table_from_csv("t", None, data) {
        let _ = segment(&table, 64, &SimpleTokenizer);
    }
});
