use std::collections::HashMap;
use std::io::{BufRead, Write};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub(crate) const N_SPECIAL: usize = 4;
const SPECIALS: [&str; N_SPECIAL] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Token surface ↔ id table. Ids 0..4 are the special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    /// Build from token surfaces; ordering is by descending count, then lexicographic.
    pub fn build<'a, I>(surfaces: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in surfaces {
            *counts.entry(s).or_default() += 1;
        }
        let mut entries: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(s, c)| c >= min_count && !SPECIALS.contains(&s))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_tokens(
            SPECIALS
                .iter()
                .map(|s| s.to_string())
                .chain(entries.into_iter().map(|(s, _)| s.to_string()))
                .collect(),
        )
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, surface: &str) -> u32 {
        self.ids.get(surface).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode<'a, I: IntoIterator<Item = &'a str>>(&self, surfaces: I) -> Vec<u32> {
        surfaces.into_iter().map(|s| self.id(s)).collect()
    }

    /// One token per line; the line number is the id.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> std::io::Result<Self> {
        let tokens = r.lines().collect::<Result<Vec<_>, _>>()?;
        if tokens.len() < N_SPECIAL || tokens[..N_SPECIAL] != SPECIALS {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "vocabulary file does not start with the special tokens",
            ));
        }
        Ok(Self::from_tokens(tokens))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_and_unknowns() {
        let v = Vocab::build(["b", "a", "b", "c", "a", "b"], 1);
        assert_eq!(v.len(), 7);
        assert_eq!(v.id("b"), 4);
        assert_eq!(v.id("a"), 5);
        assert_eq!(v.id("c"), 6);
        assert_eq!(v.id("zzz"), UNK_ID);
        assert_eq!(v.token(CLS_ID), Some("[CLS]"));
    }

    #[test]
    fn text_round_trip() {
        let v = Vocab::build(["x", "y", "y"], 1);
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().nth(4), Some("y"));
        assert_eq!(Vocab::read(buf.as_slice()).unwrap(), v);
        assert!(Vocab::read("x\ny\n".as_bytes()).is_err());
    }
}
