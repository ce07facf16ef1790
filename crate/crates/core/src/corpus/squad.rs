//! SQuAD v1.1 JSON loading and writing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Document};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldAnswer {
    pub text: String,
    /// Character (code point) offset, as stored in the file.
    pub answer_start: usize,
    /// Byte range of the answer inside the context.
    pub byte_start: usize,
    pub byte_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SquadEntry {
    pub question_id: String,
    pub question: String,
    pub answers: Vec<GoldAnswer>,
    pub context: String,
    /// Document id under which this context is ingested: `{title}_{paragraph index}`.
    pub context_id: String,
    pub title: String,
}

impl SquadEntry {
    pub fn answer_texts(&self) -> Vec<&str> {
        self.answers.iter().map(|a| a.text.as_str()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SquadDataset {
    pub entries: Vec<SquadEntry>,
}

impl SquadDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct contexts as documents, in first-appearance order.
    pub fn documents(&self) -> Vec<Document> {
        let mut seen = std::collections::HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.context_id.as_str()))
            .map(|e| Document {
                doc_id: e.context_id.clone(),
                title: e.title.clone(),
                text: e.context.clone(),
            })
            .collect()
    }

    pub fn subset(&self, range: std::ops::Range<usize>) -> SquadDataset {
        SquadDataset {
            entries: self.entries[range].to_vec(),
        }
    }

    /// Serialize back to SQuAD v1.1 JSON, one article per title.
    pub fn to_json(&self) -> String {
        let mut articles: Vec<RawArticle> = Vec::new();
        for e in &self.entries {
            if articles.last().map(|a| a.title != e.title).unwrap_or(true) {
                articles.push(RawArticle {
                    title: e.title.clone(),
                    paragraphs: Vec::new(),
                });
            }
            let article = articles.last_mut().unwrap();
            let same_context = article
                .paragraphs
                .last()
                .map(|p| p.context == e.context)
                .unwrap_or(false);
            if !same_context {
                article.paragraphs.push(RawParagraph {
                    context: e.context.clone(),
                    qas: Vec::new(),
                });
            }
            article.paragraphs.last_mut().unwrap().qas.push(RawQa {
                id: e.question_id.clone(),
                question: e.question.clone(),
                answers: e
                    .answers
                    .iter()
                    .map(|a| RawAnswer {
                        text: a.text.clone(),
                        answer_start: a.answer_start,
                    })
                    .collect(),
            });
        }
        serde_json::to_string(&RawFile {
            version: Some("1.1".into()),
            data: articles,
        })
        .expect("squad serialization")
    }
}

#[derive(Serialize, Deserialize)]
struct RawFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<String>,
    data: Vec<RawArticle>,
}

#[derive(Serialize, Deserialize)]
struct RawArticle {
    #[serde(default)]
    title: String,
    paragraphs: Vec<RawParagraph>,
}

#[derive(Serialize, Deserialize)]
struct RawParagraph {
    context: String,
    qas: Vec<RawQa>,
}

#[derive(Serialize, Deserialize)]
struct RawQa {
    id: String,
    question: String,
    answers: Vec<RawAnswer>,
}

#[derive(Serialize, Deserialize)]
struct RawAnswer {
    text: String,
    answer_start: usize,
}

fn locate(context: &str, answer_start: usize, text: &str) -> Option<(usize, usize)> {
    let byte_start = if answer_start == context.chars().count() {
        context.len()
    } else {
        context.char_indices().nth(answer_start)?.0
    };
    context[byte_start..]
        .starts_with(text)
        .then(|| (byte_start, byte_start + text.len()))
}

pub fn parse_squad(json: &str) -> Result<SquadDataset, CorpusError> {
    let raw: RawFile =
        serde_json::from_str(json).map_err(|e| CorpusError::MalformedSquad(e.to_string()))?;
    let mut entries = Vec::new();
    for article in raw.data {
        for (pi, para) in article.paragraphs.into_iter().enumerate() {
            let context_id = format!("{}_{}", article.title, pi);
            for qa in para.qas {
                let mut answers = Vec::with_capacity(qa.answers.len());
                for a in qa.answers {
                    let (byte_start, byte_end) = locate(&para.context, a.answer_start, &a.text)
                        .ok_or_else(|| CorpusError::AnswerMismatch {
                            question_id: qa.id.clone(),
                            text: a.text.clone(),
                            answer_start: a.answer_start,
                        })?;
                    answers.push(GoldAnswer {
                        text: a.text,
                        answer_start: a.answer_start,
                        byte_start,
                        byte_end,
                    });
                }
                entries.push(SquadEntry {
                    question_id: qa.id,
                    question: qa.question,
                    answers,
                    context: para.context.clone(),
                    context_id: context_id.clone(),
                    title: article.title.clone(),
                });
            }
        }
    }
    Ok(SquadDataset { entries })
}

pub fn load_squad(path: impl AsRef<Path>) -> Result<SquadDataset, CorpusError> {
    let path = path.as_ref();
    let json = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_squad(&json)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_QUESTIONS: &str = r#"{"version":"1.1","data":[{"title":"Cats","paragraphs":[
        {"context":"The cat sat on the mat. Überall cats.","qas":[
            {"id":"q1","question":"Where did the cat sit?","answers":[{"text":"the mat","answer_start":15}]},
            {"id":"q2","question":"Where are cats?","answers":[{"text":"Überall","answer_start":24},{"text":"Überall cats","answer_start":24}]}
        ]}]}]}"#;

    #[test]
    fn loads_entries_in_order() {
        let ds = parse_squad(TWO_QUESTIONS).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.entries[0].question_id, "q1");
        assert_eq!(ds.entries[1].question_id, "q2");
        assert_eq!(ds.entries[0].context_id, "Cats_0");
        let a = &ds.entries[1].answers[0];
        assert_eq!(&ds.entries[1].context[a.byte_start..a.byte_end], "Überall");
    }

    #[test]
    fn character_offsets_are_code_points() {
        // "Überall" starts at code point 24 but byte 24 as well; "cats" after it
        // starts at code point 32 and byte 33.
        let json = TWO_QUESTIONS.replace(
            r#""answers":[{"text":"Überall","answer_start":24}"#,
            r#""answers":[{"text":"cats","answer_start":32}"#,
        );
        let ds = parse_squad(&json).unwrap();
        let a = &ds.entries[1].answers[0];
        assert_eq!(a.byte_start, 33);
    }

    #[test]
    fn mismatched_answer_names_question() {
        let json = TWO_QUESTIONS.replace("\"answer_start\":15", "\"answer_start\":3");
        match parse_squad(&json) {
            Err(CorpusError::AnswerMismatch { question_id, .. }) => assert_eq!(question_id, "q1"),
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json() {
        assert!(matches!(
            parse_squad("{\"data\": [}"),
            Err(CorpusError::MalformedSquad(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        let ds = parse_squad(TWO_QUESTIONS).unwrap();
        assert_eq!(parse_squad(&ds.to_json()).unwrap(), ds);
        assert_eq!(ds.documents().len(), 1);
    }
}
