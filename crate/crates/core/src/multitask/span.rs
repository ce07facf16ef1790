use super::losses::softmax;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanPrediction {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    /// P_start(start) · P_end(end).
    pub score: f64,
}

/// Best `(s, e)` by `start[s] + end[e]` with `s ≤ e < s + max_answer_len`.
///
/// Ties go to the smallest `s`, then the smallest `e`. Returns `None` for an
/// empty paragraph.
pub fn extract_span(
    start_logits: &[f64],
    end_logits: &[f64],
    max_answer_len: usize,
) -> Option<SpanPrediction> {
    let n = start_logits.len().min(end_logits.len());
    if n == 0 {
        return None;
    }
    let max_len = max_answer_len.max(1);
    let mut best = (0, 0);
    let mut best_val = f64::NEG_INFINITY;
    for s in 0..n {
        for e in s..n.min(s + max_len) {
            let v = start_logits[s] + end_logits[e];
            if v > best_val {
                best_val = v;
                best = (s, e);
            }
        }
    }
    let ps = softmax(&start_logits[..n]);
    let pe = softmax(&end_logits[..n]);
    Some(SpanPrediction {
        start: best.0,
        end: best.1,
        score: ps[best.0] * pe[best.1],
    })
}
