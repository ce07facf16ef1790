use super::{EncoderConfig, ModelError, CLS_ID, PAD_ID, SEP_ID};

/// `[CLS] q… [SEP] p… [SEP]`, optionally followed by padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedInput {
    pub token_ids: Vec<u32>,
    pub paragraph_mask: Vec<bool>,
    pub attention_mask: Vec<bool>,
    pub question_len: usize,
    /// Paragraph tokens kept after truncation.
    pub paragraph_len: usize,
}

impl PackedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Sequence position of paragraph token 0.
    pub fn paragraph_offset(&self) -> usize {
        self.question_len + 2
    }

    /// Pad with `[PAD]` up to `len` positions that receive no attention.
    pub fn padded(&self, len: usize) -> PackedInput {
        let mut out = self.clone();
        if len > out.len() {
            let extra = len - out.len();
            out.token_ids.extend(std::iter::repeat(PAD_ID).take(extra));
            out.paragraph_mask.extend(std::iter::repeat(false).take(extra));
            out.attention_mask.extend(std::iter::repeat(false).take(extra));
        }
        out
    }
}

/// Pack a question/paragraph pair; the paragraph tail is truncated to fit.
pub fn pack(
    question: &[u32],
    paragraph: &[u32],
    config: &EncoderConfig,
) -> Result<PackedInput, ModelError> {
    let m = question.len();
    if m + 3 > config.max_seq_len {
        return Err(ModelError::QuestionTooLong {
            question_len: m,
            max_seq_len: config.max_seq_len,
        });
    }
    let k = paragraph.len().min(config.max_seq_len - m - 3);
    let len = m + k + 3;

    let mut token_ids = Vec::with_capacity(len);
    token_ids.push(CLS_ID);
    token_ids.extend_from_slice(question);
    token_ids.push(SEP_ID);
    token_ids.extend_from_slice(&paragraph[..k]);
    token_ids.push(SEP_ID);

    let mut paragraph_mask = vec![false; len];
    paragraph_mask[m + 2..m + 2 + k].iter_mut().for_each(|x| *x = true);

    Ok(PackedInput {
        token_ids,
        paragraph_mask,
        attention_mask: vec![true; len],
        question_len: m,
        paragraph_len: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(max_seq_len: usize) -> EncoderConfig {
        EncoderConfig {
            max_seq_len,
            ..EncoderConfig::toy(50)
        }
    }

    #[test]
    fn layout() {
        let p = pack(&[10, 11, 12, 13], &(20..30).collect::<Vec<_>>(), &cfg(64)).unwrap();
        assert_eq!(p.len(), 17);
        assert_eq!(p.paragraph_mask.iter().filter(|&&b| b).count(), 10);
        assert_eq!(p.token_ids[0], CLS_ID);
        assert_eq!(p.token_ids[5], SEP_ID);
        assert_eq!(p.token_ids[6], 20);
        assert_eq!(p.token_ids[16], SEP_ID);
        assert_eq!(p.paragraph_offset(), 6);
    }

    #[test]
    fn truncates_paragraph_only() {
        let para: Vec<u32> = (0..64).map(|i| 10 + i % 30).collect();
        let p = pack(&[5, 6, 7], &para, &cfg(64)).unwrap();
        assert_eq!(p.len(), 64);
        assert_eq!(p.paragraph_len, 64 - 3 - 3);
        assert_eq!(&p.token_ids[1..4], &[5, 6, 7]);
    }

    #[test]
    fn empty_paragraph() {
        let p = pack(&[5, 6], &[], &cfg(64)).unwrap();
        assert_eq!(p.token_ids, vec![CLS_ID, 5, 6, SEP_ID, SEP_ID]);
        assert!(p.paragraph_mask.iter().all(|&b| !b));
    }

    #[test]
    fn question_too_long() {
        let q: Vec<u32> = vec![5; 62];
        assert!(matches!(
            pack(&q, &[1], &cfg(64)),
            Err(ModelError::QuestionTooLong { .. })
        ));
        assert_eq!(pack(&q[..61], &[7, 7], &cfg(64)).unwrap().paragraph_len, 0);
    }

    #[test]
    fn padding_is_masked() {
        let p = pack(&[5], &[6, 7], &cfg(64)).unwrap().padded(10);
        assert_eq!(p.len(), 10);
        assert_eq!(p.attention_mask.iter().filter(|&&b| b).count(), 6);
        assert_eq!(p.token_ids[9], PAD_ID);
    }
}
