use proptest::prelude::*;
use trag_core::linearize::{linearize, reassemble, row_text, segment};
use trag_core::tokenize::{SimpleTokenizer, Tokenizer};
use trag_core::TableDoc;

// no '|' or '*', so separators can be counted
fn cell() -> impl Strategy<Value = String> {
    "[a-z0-9]{1,6}( [a-z0-9]{1,6}){0,3}"
}

fn table() -> impl Strategy<Value = TableDoc> {
    (1usize..5, 0usize..12, proptest::option::of(cell())).prop_flat_map(|(cols, rows, title)| {
        (
            proptest::collection::vec(cell(), cols),
            proptest::collection::vec(proptest::collection::vec(cell(), cols), rows),
            Just(title),
        )
            .prop_map(|(header, rows, title)| TableDoc::new("t", title, header, rows).unwrap())
    })
}

fn long_table() -> impl Strategy<Value = TableDoc> {
    (1usize..4, 1usize..6).prop_flat_map(|(cols, rows)| {
        let long_cell = "[a-z]{1,4}( [a-z]{1,4}){0,60}";
        (
            proptest::collection::vec(cell(), cols),
            proptest::collection::vec(proptest::collection::vec(long_cell, cols), rows),
        )
            .prop_map(|(header, rows)| TableDoc::new("t", Some("title".into()), header, rows).unwrap())
    })
}

proptest! {
    #[test]
    fn every_cell_appears_in_order(t in table()) {
        let text = linearize(&t);
        let mut pos = 0;
        for row in t.rows() {
            for (h, c) in t.header().iter().zip(row) {
                let needle = format!("{h} | {c}");
                let found = text[pos..].find(&needle);
                prop_assert!(found.is_some(), "{needle:?} missing after byte {pos}");
                pos += found.unwrap() + needle.len();
            }
        }
    }

    #[test]
    fn separator_counts(t in table()) {
        let text = linearize(&t);
        prop_assert_eq!(text.matches(" | ").count(), t.n_rows() * t.n_cols());
        prop_assert_eq!(text.matches('*').count(), t.n_rows());
    }

    #[test]
    fn segments_partition_the_rows(t in table(), budget in 8usize..64) {
        let segs = segment(&t, budget, &SimpleTokenizer).unwrap();
        let (rows, spans) = row_text(&t);
        prop_assert_eq!(reassemble(&t, &segs), rows);
        for (i, s) in segs.iter().enumerate() {
            prop_assert_eq!(s.seg_index, i);
        }
        let mut next_row = 0;
        for s in &segs {
            // a hard-split row may continue into the next segment
            prop_assert!(s.rows.start == next_row || s.rows.start + 1 == next_row);
            next_row = s.rows.end;
            if s.token_count > budget {
                prop_assert!(s.overflow && s.rows.len() == 1);
            }
        }
        prop_assert_eq!(next_row, spans.len());
    }

    #[test]
    fn hard_split_rows_still_reassemble(t in long_table(), budget in 8usize..40) {
        let segs = segment(&t, budget, &SimpleTokenizer).unwrap();
        prop_assert_eq!(reassemble(&t, &segs), row_text(&t).0);
        for s in &segs {
            prop_assert_eq!(s.token_count, SimpleTokenizer.count(&s.text));
            prop_assert!(s.text.starts_with("title"));
        }
    }

    #[test]
    fn segmentation_is_deterministic(t in table(), budget in 8usize..64) {
        let a = segment(&t, budget, &SimpleTokenizer).unwrap();
        let b = segment(&t.clone(), budget, &SimpleTokenizer).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(linearize(&t), linearize(&t.clone()));
    }
}
