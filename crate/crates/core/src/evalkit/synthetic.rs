use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, GoldAnswer, SquadDataset, SquadEntry};

const RELATIONS: [&str; 8] = [
    "capital", "color", "founder", "river", "language", "currency", "mascot", "motto",
];
const ADJECTIVES: [&str; 8] = ["old", "quiet", "busy", "green", "cold", "small", "famous", "remote"];
const NOUNS: [&str; 8] = ["town", "market", "harbor", "valley", "bridge", "temple", "forest", "road"];
const VERBS: [&str; 6] = ["attracts", "welcomes", "hosts", "remembers", "lacks", "needs"];
const CROWDS: [&str; 5] = ["visitors", "traders", "farmers", "pilgrims", "students"];
const SEASONS: [&str; 4] = ["spring", "summer", "autumn", "winter"];

/// Templated documents, each stating one fact, plus SQuAD-format questions.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBenchmark {
    pub documents: Vec<Document>,
    pub squad: SquadDataset,
}

struct Words {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl Words {
    fn fresh(&mut self, syllables: usize) -> String {
        const C: &[u8] = b"bdfgklmnprstvz";
        const V: &[u8] = b"aeiou";
        loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(C[self.rng.gen_range(0..C.len())] as char);
                w.push(V[self.rng.gen_range(0..V.len())] as char);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

/// `n_questions` questions over `n_docs` documents; question `i` asks about
/// document `i % n_docs`. Each (entity, relation) pair is stated by exactly one
/// document, so each question has exactly one answering document.
pub fn generate_synthetic_benchmark(n_docs: usize, n_questions: usize, seed: u64) -> SyntheticBenchmark {
    let mut words = Words {
        rng: ChaCha8Rng::seed_from_u64(seed),
        used: HashSet::new(),
    };
    // Entity words come from a shared pool and each (entity, relation) pair is
    // used once, so every entity word occurs in several documents.
    let pool = n_docs.div_ceil(RELATIONS.len()).max(1) + 2;
    let names: Vec<String> = (0..pool).map(|_| words.fresh(3)).collect();
    let classes: Vec<String> = (0..12).map(|_| words.fresh(2)).collect();
    let values: Vec<String> = (0..40).map(|_| words.fresh(2)).collect();
    let mut rng = words.rng;
    let mut pairs: Vec<(usize, usize)> = (0..pool)
        .flat_map(|a| (0..RELATIONS.len()).map(move |r| (a, r)))
        .collect();
    pairs.shuffle(&mut rng);
    pairs.truncate(n_docs);
    let entities: Vec<String> = pairs.iter().map(|&(a, _)| names[a].clone()).collect();

    struct Fact {
        relation: &'static str,
        answer: String,
        answer_start: usize,
    }

    let mut documents = Vec::with_capacity(n_docs);
    let mut facts = Vec::with_capacity(n_docs);
    for (i, (entity, &(_, r))) in entities.iter().zip(&pairs).enumerate() {
        let relation = RELATIONS[r];
        let n_answer = rng.gen_range(1..=2);
        let answer = (0..n_answer)
            .map(|_| values[rng.gen_range(0..values.len())].as_str())
            .collect::<Vec<_>>()
            .join(" ");

        let mut fillers: Vec<String> = (0..rng.gen_range(1..=2))
            .map(|_| {
                format!(
                    "the {} {} {} many {} in {} .",
                    ADJECTIVES[rng.gen_range(0..ADJECTIVES.len())],
                    NOUNS[rng.gen_range(0..NOUNS.len())],
                    VERBS[rng.gen_range(0..VERBS.len())],
                    CROWDS[rng.gen_range(0..CROWDS.len())],
                    SEASONS[rng.gen_range(0..SEASONS.len())],
                )
            })
            .collect();
        if n_docs > 1 {
            let mut other = rng.gen_range(0..pool - 1);
            if names[other] == *entity {
                other = pool - 1;
            }
            fillers.push(format!(
                "{entity} trades with {} every {} .",
                names[other],
                SEASONS[rng.gen_range(0..SEASONS.len())]
            ));
        }
        fillers.shuffle(&mut rng);
        let fact_at = rng.gen_range(0..=fillers.len());

        let mut text = format!(
            "{entity} is a kind of {} .",
            classes[rng.gen_range(0..classes.len())]
        );
        let mut answer_start = 0;
        for k in 0..=fillers.len() {
            if k == fact_at {
                let prefix = format!(" the {relation} of {entity} is ");
                answer_start = text.len() + prefix.len();
                text.push_str(&prefix);
                text.push_str(&answer);
                text.push_str(" .");
            }
            if k < fillers.len() {
                text.push(' ');
                text.push_str(&fillers[k]);
            }
        }

        let title = format!("doc{i:04}");
        documents.push(Document {
            doc_id: format!("{title}_0"),
            title,
            text,
        });
        facts.push(Fact {
            relation,
            answer,
            answer_start,
        });
    }

    let entries = (0..n_questions)
        .filter(|_| n_docs > 0)
        .map(|q| {
            let d = q % n_docs;
            let doc = &documents[d];
            let fact = &facts[d];
            SquadEntry {
                question_id: format!("q{q:05}"),
                question: format!("what is the {} of {} ?", fact.relation, entities[d]),
                answers: vec![GoldAnswer {
                    text: fact.answer.clone(),
                    // ASCII text: code-point and byte offsets coincide.
                    answer_start: fact.answer_start,
                    byte_start: fact.answer_start,
                    byte_end: fact.answer_start + fact.answer.len(),
                }],
                context: doc.text.clone(),
                context_id: doc.doc_id.clone(),
                title: doc.title.clone(),
            }
        })
        .collect();
    SyntheticBenchmark {
        documents,
        squad: SquadDataset { entries },
    }
}
