#![no_main]
use libfuzzer_sys::fuzz_target;
use trag_core::corpus::parse_corpus;

fuzz_target!(|data: &[u8]| {
    if let Ok(corpus) = parse_corpus(data) {
        let mut out = Vec::new();
        corpus.write_jsonl(&mut out).unwrap();
        let back = parse_corpus(&out[..]).unwrap();
        assert_eq!(back.tables(), corpus.tables());
    }
});
