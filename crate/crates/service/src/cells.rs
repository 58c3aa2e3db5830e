use trag_core::eval::{answer_tokens, token_f1};
use trag_core::TableDoc;

pub const DEFAULT_CELL_THRESHOLD: f64 = 0.5;

/// Cells whose normalized token F1 against `answer` reaches `threshold`,
/// as `(row, col, weight)` with `row` counting data rows from 0. Sorted by
/// weight descending, then by position. An answer that normalizes to
/// nothing highlights nothing.
pub fn locate_cells(answer: &str, table: &TableDoc, threshold: f64) -> Vec<(usize, usize, f64)> {
    let target = answer_tokens(answer);
    let mut out = Vec::new();
    if target.is_empty() {
        return out;
    }
    for (r, row) in table.rows().iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let w = token_f1(&target, &answer_tokens(cell));
            if w >= threshold && w > 0.0 {
                out.push((r, c, w));
            }
        }
    }
    out.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[&str]]) -> TableDoc {
        let header = (0..rows[0].len()).map(|i| format!("c{i}")).collect();
        let rows = rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect();
        TableDoc::new("t", None, header, rows).unwrap()
    }

    #[test]
    fn exact_partial_and_missing() {
        let t = table(&[&["Anna Smith", "Editor"]]);
        assert_eq!(locate_cells("Anna Smith", &t, 0.5), vec![(0, 0, 1.0)]);
        let partial = locate_cells("smith", &t, 0.5);
        assert_eq!(partial.len(), 1);
        assert!((partial[0].2 - 2.0 / 3.0).abs() < 1e-15);
        assert!(locate_cells("Jones", &t, 0.5).is_empty());
    }

    #[test]
    fn sorted_by_weight() {
        let t = table(&[&["Lon", "Lon Chaney"], &["Lon Chaney", "x"]]);
        let cells = locate_cells("Lon Chaney", &t, 0.5);
        assert_eq!(cells[0], (0, 1, 1.0));
        assert_eq!(cells[1], (1, 0, 1.0));
        assert_eq!(cells[2].0, 0);
        assert_eq!(cells[2].1, 0);
    }

    #[test]
    fn empty_answer_highlights_nothing() {
        let t = table(&[&["", "the"]]);
        assert!(locate_cells("", &t, 0.5).is_empty());
    }
}
