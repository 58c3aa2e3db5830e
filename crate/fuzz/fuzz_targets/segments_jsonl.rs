#![no_main]
use libfuzzer_sys::fuzz_target;
use trag_core::store::{read_segments, write_segments};

fuzz_target!(|data: &[u8]| {
    if let Ok(segs) = read_segments(data) {
        let mut out = Vec::new();
        write_segments(&segs, &mut out).unwrap();
        assert_eq!(read_segments(&out[..]).unwrap(), segs);
    }
});
