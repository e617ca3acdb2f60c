//! Generated corpora for offline tests and demos.
//!
//! The disambiguation corpus has three companies × three fiscal years, eight
//! chunks per filing. Every filing contains the same eight chunk texts, so
//! content alone cannot tell filings apart; the metadata (company, form and
//! period of report) is constant within a filing and differs between
//! filings. Queries name the company, the topic and the year; even topics
//! are general queries and odd topics in-depth ones.
//!
//! The sectioned corpus adds a `section` field that varies inside a filing.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Chunk, Corpus, DocumentKey, MetadataRecord, QueryCase, QueryCategory};

pub const DISAMBIGUATION_FIXTURE: &str = "disambiguation.jsonl";
pub const SECTIONED_FIXTURE: &str = "sectioned.jsonl";

const COMPANIES: [(&str, &str); 3] = [
    ("Northwind Traders", "01-31"),
    ("Globex Corporation", "06-30"),
    ("Initech Systems", "09-30"),
];

const YEARS: [&str; 3] = ["2021", "2022", "2023"];

const BOILERPLATE: &str = "management believes these matters remain subject to ongoing review \
                           under applicable accounting standards and regulatory requirements";

const TOPICS: [(&str, &str); 8] = [
    (
        "supply chain disruptions",
        "supplier delays affected component availability and logistics costs",
    ),
    (
        "cybersecurity incidents",
        "security breaches could compromise customer data and network infrastructure",
    ),
    (
        "revenue recognition",
        "subscription contracts recognized ratably over service term",
    ),
    (
        "competition",
        "competitors offer lower pricing and aggressive marketing",
    ),
    (
        "foreign exchange",
        "currency fluctuations impact international sales margins",
    ),
    (
        "litigation",
        "pending lawsuits and patent claims may require settlements",
    ),
    (
        "research and development",
        "engineering investment in new product platforms increased",
    ),
    (
        "employees",
        "workforce headcount hiring retention and compensation programs",
    ),
];

const SECTIONS: [&str; 8] = [
    "Item 1A - Risk Factors",
    "Item 1A - Risk Factors",
    "Item 7 - Management Discussion",
    "Item 1A - Risk Factors",
    "Item 1A - Risk Factors",
    "Item 1A - Risk Factors",
    "Item 1 - Business",
    "Item 1 - Business",
];

/// Path of a shipped fixture file.
pub fn fixture_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn short_name(company: &str) -> &str {
    company.split_whitespace().next().unwrap_or(company)
}

fn filings_corpus(with_sections: bool) -> Corpus {
    let mut chunks = Vec::new();
    let mut queries = Vec::new();
    for (company, fye) in COMPANIES {
        for year in YEARS {
            let doc_key = DocumentKey::new(company, year, "10-K");
            let short = short_name(company);
            for (t, (topic, desc)) in TOPICS.iter().enumerate() {
                let chunk_id = format!("{}-{year}-{t:02}", short.to_lowercase());
                chunks.push(Chunk {
                    chunk_id: chunk_id.clone(),
                    doc_key: doc_key.clone(),
                    ordinal: t as u32,
                    text: format!("{topic}: {desc}. {BOILERPLATE}"),
                    metadata: MetadataRecord {
                        company_name: Some(company.into()),
                        form_type: Some("10-K".into()),
                        section: with_sections.then(|| SECTIONS[t].to_string()),
                        period_of_report: Some(format!("{year}-{fye}")),
                        ..Default::default()
                    },
                });
                queries.push(QueryCase {
                    query_id: format!("q-{chunk_id}"),
                    text: format!("What did {short} report about {topic} in fiscal {year}?"),
                    category: if t % 2 == 0 {
                        QueryCategory::General
                    } else {
                        QueryCategory::InDepth
                    },
                    target: doc_key.clone(),
                    supporting_chunk_ids: vec![chunk_id],
                });
            }
        }
    }
    Corpus::new(chunks, queries).expect("generated corpus is valid")
}

/// Duplicate chunk texts across filings, filing-constant metadata.
pub fn disambiguation_corpus() -> Corpus {
    filings_corpus(false)
}

/// As [`disambiguation_corpus`], plus a per-chunk `section` field.
pub fn sectioned_corpus() -> Corpus {
    filings_corpus(true)
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "ru", "ta", "ve", "zo", "pi", "sa", "do", "fe", "gu", "ho", "ji", "wa",
];

fn random_word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=3);
    (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

/// Random corpus for property tests: `n_chunks` chunks over a small
/// vocabulary and `n_queries` queries (alternating categories), each
/// supported by one random chunk. Every chunk carries a company name, so
/// every metadata header is non-empty.
pub fn random_corpus(n_chunks: usize, n_queries: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..300).map(|_| random_word(&mut rng)).collect();
    let companies: Vec<String> = (0..12)
        .map(|i| format!("Company {}", random_word(&mut rng) + &i.to_string()))
        .collect();
    let sections = [
        "Item 1 - Business",
        "Item 1A - Risk Factors",
        "Item 7 - Management Discussion",
    ];
    let mut chunks = Vec::with_capacity(n_chunks);
    for i in 0..n_chunks {
        let company = companies.choose(&mut rng).unwrap().clone();
        let year = rng.random_range(2015..=2024).to_string();
        let words = rng.random_range(8..40);
        let text = (0..words)
            .map(|_| vocab.choose(&mut rng).unwrap().as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let metadata = MetadataRecord {
            company_name: Some(company.clone()),
            form_type: rng.random_bool(0.7).then(|| "10-K".to_string()),
            section: rng
                .random_bool(0.6)
                .then(|| sections.choose(&mut rng).unwrap().to_string()),
            fiscal_year_end: rng.random_bool(0.3).then(|| "12-31".to_string()),
            period_of_report: rng.random_bool(0.8).then(|| format!("{year}-12-31")),
            sic_code: rng.random_bool(0.2).then(|| rng.random_range(1000..9999).to_string()),
            ..Default::default()
        };
        chunks.push(Chunk {
            chunk_id: format!("r{i:05}"),
            doc_key: DocumentKey::new(company, year, "10-K"),
            ordinal: i as u32,
            text,
            metadata,
        });
    }
    let queries = (0..n_queries)
        .map(|i| {
            let support = &chunks[rng.random_range(0..chunks.len())];
            let support_words: Vec<&str> = support.text.split(' ').collect();
            let mut words: Vec<&str> = (0..rng.random_range(2..6))
                .map(|_| *support_words.choose(&mut rng).unwrap())
                .collect();
            words.extend((0..rng.random_range(0..4)).map(|_| vocab.choose(&mut rng).unwrap().as_str()));
            if rng.random_bool(0.5) {
                words.push(&support.doc_key.company);
            }
            QueryCase {
                query_id: format!("rq{i:04}"),
                text: words.join(" "),
                category: if i % 2 == 0 {
                    QueryCategory::General
                } else {
                    QueryCategory::InDepth
                },
                target: support.doc_key.clone(),
                supporting_chunk_ids: vec![support.chunk_id.clone()],
            }
        })
        .collect();
    Corpus::new(chunks, queries).expect("generated corpus is valid")
}
