//! Help-center knowledge base: markdown articles chunked on paragraph
//! boundaries, embedded as sparse vectors and searched by cosine similarity.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::text;

pub const MAX_CHUNK_CHARS: usize = 800;
pub const DEFAULT_TOP_K: usize = 3;

pub type SparseVector = BTreeMap<String, f64>;

/// Turns text into a sparse vector. Swap in a learned embedder by
/// implementing this.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> SparseVector;
}

/// Case-folded term counts with stopwords removed.
#[derive(Debug, Clone, Copy, Default)]
pub struct TermFrequencyEmbedder;

impl Embedder for TermFrequencyEmbedder {
    fn embed(&self, input: &str) -> SparseVector {
        let mut v = SparseVector::new();
        for t in text::tokens(input) {
            if !text::is_stopword(&t) {
                *v.entry(t).or_insert(0.0) += 1.0;
            }
        }
        v
    }
}

pub fn cosine(a: &SparseVector, b: &SparseVector) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let dot: f64 = small
        .iter()
        .filter_map(|(k, x)| large.get(k).map(|y| x * y))
        .sum();
    if dot == 0.0 {
        return 0.0;
    }
    let na: f64 = a.values().map(|x| x * x).sum();
    let nb: f64 = b.values().map(|x| x * x).sum();
    (dot / (na * nb).sqrt()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: u32,
    pub text: String,
    pub vector: SparseVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeDoc {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    pub chunks: Vec<Chunk>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retrieved<'a> {
    pub doc_id: &'a str,
    pub title: &'a str,
    pub chunk_id: u32,
    pub text: &'a str,
    pub score: f64,
}

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("no markdown documents found in {0}")]
    EmptyCorpus(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Splits `body` into paragraphs (blank-line separated) and packs them into
/// chunks of at most [`MAX_CHUNK_CHARS`] characters. A paragraph longer than
/// the limit is cut on whitespace.
pub fn chunk_body(body: &str) -> Vec<String> {
    let mut paragraphs: Vec<String> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in body.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paragraphs.push(current.join("\n").trim().to_string());
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        paragraphs.push(current.join("\n").trim().to_string());
    }

    let mut chunks = Vec::new();
    let mut buf = String::new();
    for p in paragraphs.iter().flat_map(|p| split_long(p)) {
        let joined = if buf.is_empty() {
            p.chars().count()
        } else {
            buf.chars().count() + 2 + p.chars().count()
        };
        if joined > MAX_CHUNK_CHARS && !buf.is_empty() {
            chunks.push(std::mem::take(&mut buf));
        }
        if !buf.is_empty() {
            buf.push_str("\n\n");
        }
        buf.push_str(&p);
    }
    if !buf.is_empty() {
        chunks.push(buf);
    }
    chunks
}

fn split_long(paragraph: &str) -> Vec<String> {
    if paragraph.chars().count() <= MAX_CHUNK_CHARS {
        return vec![paragraph.to_string()];
    }
    let mut pieces = Vec::new();
    let mut buf = String::new();
    for word in paragraph.split_whitespace() {
        let mut word = word.to_string();
        // a single word longer than a chunk is cut hard
        while word.chars().count() > MAX_CHUNK_CHARS {
            if !buf.is_empty() {
                pieces.push(std::mem::take(&mut buf));
            }
            let head: String = word.chars().take(MAX_CHUNK_CHARS).collect();
            word = word.chars().skip(MAX_CHUNK_CHARS).collect();
            pieces.push(head);
        }
        let len = buf.chars().count() + usize::from(!buf.is_empty()) + word.chars().count();
        if len > MAX_CHUNK_CHARS {
            pieces.push(std::mem::take(&mut buf));
        }
        if !buf.is_empty() {
            buf.push(' ');
        }
        buf.push_str(&word);
    }
    if !buf.is_empty() {
        pieces.push(buf);
    }
    pieces
}

/// Separates a leading `# Title` line from the rest of an article.
fn split_title(source: &str, fallback: &str) -> (String, String) {
    let mut lines = source.lines();
    match lines.next() {
        Some(first) if first.trim_start().starts_with("# ") => (
            first.trim_start()[2..].trim().to_string(),
            lines.collect::<Vec<_>>().join("\n"),
        ),
        _ => (fallback.to_string(), source.to_string()),
    }
}

pub struct KnowledgeIndex {
    docs: Vec<KnowledgeDoc>,
    embedder: Box<dyn Embedder>,
}

impl std::fmt::Debug for KnowledgeIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KnowledgeIndex")
            .field("docs", &self.docs.len())
            .field("chunks", &self.chunk_count())
            .finish()
    }
}

impl KnowledgeIndex {
    /// Builds an index from `(doc_id, markdown source)` pairs.
    pub fn from_sources(
        sources: Vec<(String, String)>,
        embedder: Box<dyn Embedder>,
    ) -> Result<Self, KnowledgeError> {
        let mut docs: Vec<KnowledgeDoc> = sources
            .into_iter()
            .map(|(doc_id, source)| {
                let (title, body) = split_title(&source, &doc_id);
                let chunks = chunk_body(&body)
                    .into_iter()
                    .enumerate()
                    .map(|(i, text)| Chunk {
                        chunk_id: i as u32,
                        vector: embedder.embed(&text),
                        text,
                    })
                    .collect();
                KnowledgeDoc {
                    doc_id,
                    title,
                    body,
                    chunks,
                }
            })
            .collect();
        docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        if docs.iter().all(|d| d.chunks.is_empty()) {
            return Err(KnowledgeError::EmptyCorpus("<sources>".into()));
        }
        Ok(KnowledgeIndex { docs, embedder })
    }

    /// Ingests every `.md` file directly under `dir`; the file stem is the
    /// document id.
    pub fn ingest_dir(dir: impl AsRef<Path>) -> Result<Self, KnowledgeError> {
        KnowledgeIndex::ingest_dir_with(dir, Box::new(TermFrequencyEmbedder))
    }

    pub fn ingest_dir_with(
        dir: impl AsRef<Path>,
        embedder: Box<dyn Embedder>,
    ) -> Result<Self, KnowledgeError> {
        let dir = dir.as_ref();
        let io = |e: std::io::Error| KnowledgeError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        };
        let mut sources = Vec::new();
        for entry in fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("md") || !path.is_file() {
                continue;
            }
            let doc_id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let text = fs::read_to_string(&path).map_err(|e| KnowledgeError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            sources.push((doc_id, text));
        }
        if sources.is_empty() {
            return Err(KnowledgeError::EmptyCorpus(dir.display().to_string()));
        }
        KnowledgeIndex::from_sources(sources, embedder).map_err(|e| match e {
            KnowledgeError::EmptyCorpus(_) => KnowledgeError::EmptyCorpus(dir.display().to_string()),
            other => other,
        })
    }

    pub fn docs(&self) -> &[KnowledgeDoc] {
        &self.docs
    }

    pub fn chunk_count(&self) -> usize {
        self.docs.iter().map(|d| d.chunks.len()).sum()
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.docs).expect("docs serialize");
        hex::encode(Sha256::digest(bytes))
    }

    /// Top `k` chunks by cosine similarity to `question`; equal scores keep
    /// `(doc_id, chunk_id)` order.
    pub fn retrieve(&self, question: &str, k: usize) -> Vec<Retrieved<'_>> {
        let q = self.embedder.embed(question);
        let mut scored: Vec<Retrieved<'_>> = self
            .docs
            .iter()
            .flat_map(|d| {
                d.chunks.iter().map(|c| Retrieved {
                    doc_id: &d.doc_id,
                    title: &d.title,
                    chunk_id: c.chunk_id,
                    text: &c.text,
                    score: cosine(&q, &c.vector),
                })
            })
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.doc_id.cmp(b.doc_id))
                .then_with(|| a.chunk_id.cmp(&b.chunk_id))
        });
        scored.truncate(k.max(1));
        scored
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn para(ch: char, n: usize) -> String {
        std::iter::repeat_n(ch, n).collect()
    }

    #[test]
    fn one_paragraph_docs_give_one_chunk_each() {
        let sources = (0..3)
            .map(|i| (format!("doc{i}"), format!("# Doc {i}\n\nSingle paragraph number {i}.")))
            .collect();
        let index = KnowledgeIndex::from_sources(sources, Box::new(TermFrequencyEmbedder)).unwrap();
        assert_eq!(index.chunk_count(), 3);
        assert_eq!(index.docs()[0].title, "Doc 0");
    }

    #[test]
    fn paragraphs_of_700_700_600_make_three_chunks() {
        let body = format!("{}\n\n{}\n\n{}", para('a', 700), para('b', 700), para('c', 600));
        let chunks = chunk_body(&body);
        assert_eq!(chunks.len(), 3);
        assert!(chunks.iter().all(|c| c.chars().count() <= MAX_CHUNK_CHARS));
    }

    #[test]
    fn small_paragraphs_are_packed() {
        let body = "one\n\ntwo\n\n\nthree";
        assert_eq!(chunk_body(body), vec!["one\n\ntwo\n\nthree".to_string()]);
    }

    #[test]
    fn oversized_paragraph_is_split_on_whitespace() {
        let words: Vec<String> = (0..400).map(|i| format!("w{i:03}")).collect();
        let body = words.join(" ");
        let chunks = chunk_body(&body);
        assert!(chunks.len() > 1);
        assert!(chunks.iter().all(|c| c.chars().count() <= MAX_CHUNK_CHARS));
        assert_eq!(chunks.join(" "), body);
    }

    #[test]
    fn self_similarity_is_exactly_one() {
        let sources = vec![
            ("renew".to_string(), "# Renewing\n\nRenew a listing from the listing page to bump it.".to_string()),
            ("ship".to_string(), "# Shipping\n\nShipping labels are printed after purchase.".to_string()),
        ];
        let index = KnowledgeIndex::from_sources(sources, Box::new(TermFrequencyEmbedder)).unwrap();
        let top = index.retrieve("Renew a listing from the listing page to bump it.", 3);
        assert_eq!(top[0].doc_id, "renew");
        assert_eq!(top[0].score, 1.0);
        let none = index.retrieve("zebra quantum", 3);
        assert!(none.iter().all(|r| r.score == 0.0));
        assert_eq!((none[0].doc_id, none[1].doc_id), ("renew", "ship"));
    }

    #[test]
    fn empty_directory_is_an_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(KnowledgeIndex::ingest_dir(dir.path()), Err(KnowledgeError::EmptyCorpus(_))));
    }
}
