//! Paragraph-scoring and span cross-entropy losses with their gradients.

use super::MultitaskError;

/// ln Σ exp(x), shifted by the maximum.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

fn check_finite(xs: &[f64], what: &str) -> Result<(), MultitaskError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(MultitaskError::NonFinite(what.to_string()))
    }
}

/// −score(d*) + ln Σ_d exp(score(d)).
pub fn scoring_loss(scores: &[f64], gold_index: usize) -> Result<f64, MultitaskError> {
    scoring_loss_and_grad(scores, gold_index).map(|(l, _)| l)
}

/// Loss plus ∂loss/∂scores = softmax(scores) − onehot(gold).
pub fn scoring_loss_and_grad(
    scores: &[f64],
    gold_index: usize,
) -> Result<(f64, Vec<f64>), MultitaskError> {
    if scores.len() < 2 {
        return Err(MultitaskError::InvalidExample(format!(
            "scoring needs at least 2 candidates, got {}",
            scores.len()
        )));
    }
    if gold_index >= scores.len() {
        return Err(MultitaskError::InvalidExample(format!(
            "gold index {gold_index} out of {} candidates",
            scores.len()
        )));
    }
    check_finite(scores, "paragraph scores")?;
    let loss = log_sum_exp(scores) - scores[gold_index];
    let mut grad = softmax(scores);
    grad[gold_index] -= 1.0;
    Ok((loss.max(0.0), grad))
}

/// −ln P_start(s) − ln P_end(e) over the paragraph positions.
pub fn qa_loss(start_logits: &[f64], end_logits: &[f64], s: usize, e: usize) -> Result<f64, MultitaskError> {
    qa_loss_and_grad(start_logits, end_logits, s, e).map(|(l, _, _)| l)
}

pub fn qa_loss_and_grad(
    start_logits: &[f64],
    end_logits: &[f64],
    s: usize,
    e: usize,
) -> Result<(f64, Vec<f64>, Vec<f64>), MultitaskError> {
    let n = start_logits.len();
    if end_logits.len() != n || !(s <= e && e < n) {
        return Err(MultitaskError::InvalidExample(format!(
            "span ({s}, {e}) invalid for {n} paragraph positions"
        )));
    }
    check_finite(start_logits, "start logits")?;
    check_finite(end_logits, "end logits")?;
    let loss = (log_sum_exp(start_logits) - start_logits[s]) + (log_sum_exp(end_logits) - end_logits[e]);
    let mut ds = softmax(start_logits);
    ds[s] -= 1.0;
    let mut de = softmax(end_logits);
    de[e] -= 1.0;
    Ok((loss, ds, de))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_scores() {
        let l = scoring_loss(&[0.3; 30], 7).unwrap();
        assert!((l - 30f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn confident_gold() {
        let l = scoring_loss(&[10.0, 0.0, 0.0], 0).unwrap();
        let expected = (1.0 + 2.0 * (-10f64).exp()).ln();
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 9.08e-5).abs() < 1e-7);
    }

    #[test]
    fn scoring_errors() {
        assert!(scoring_loss(&[1.0], 0).is_err());
        assert!(scoring_loss(&[1.0, 2.0], 2).is_err());
        assert!(matches!(
            scoring_loss(&[1.0, f64::NAN], 0),
            Err(MultitaskError::NonFinite(_))
        ));
    }

    #[test]
    fn uniform_span_logits() {
        let l = qa_loss(&[0.0; 100], &[0.0; 100], 3, 9).unwrap();
        assert!((l - 2.0 * 100f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn peaked_span_logits() {
        let mut start = vec![0.0; 20];
        let mut end = vec![0.0; 20];
        start[4] = 40.0;
        end[6] = 40.0;
        assert!(qa_loss(&start, &end, 4, 6).unwrap() < 1e-9);
    }

    #[test]
    fn qa_errors() {
        assert!(qa_loss(&[0.0; 5], &[0.0; 5], 3, 2).is_err());
        assert!(qa_loss(&[0.0; 5], &[0.0; 5], 0, 5).is_err());
        assert!(qa_loss(&[0.0; 5], &[0.0; 4], 0, 1).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let scores = [0.3, -1.2, 2.0, 0.7];
        let (_, g) = scoring_loss_and_grad(&scores, 1).unwrap();
        for i in 0..scores.len() {
            let mut p = scores;
            p[i] += 1e-6;
            let mut m = scores;
            m[i] -= 1e-6;
            let fd = (scoring_loss(&p, 1).unwrap() - scoring_loss(&m, 1).unwrap()) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn shift_invariance(scores in proptest::collection::vec(-20.0f64..20.0, 2..40), c in -50.0f64..50.0, gold_frac in 0.0f64..1.0) {
            let gold = ((scores.len() as f64 * gold_frac) as usize).min(scores.len() - 1);
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            let a = scoring_loss(&scores, gold).unwrap();
            prop_assert!((a - scoring_loss(&shifted, gold).unwrap()).abs() < 1e-9);
            prop_assert!(a >= 0.0);
            let p = softmax(&scores);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);

            let n = scores.len();
            let b = qa_loss(&scores, &scores, 0, n - 1).unwrap();
            prop_assert!((b - qa_loss(&shifted, &scores, 0, n - 1).unwrap()).abs() < 1e-9);
        }
    }
}
