//! Corpus file formats.
//!
//! A corpus is a UTF-8 text file with one document per line, tokens
//! separated by single spaces and the delimiter rendered as a backslash.
//! A sidecar file next to it (extension `.meta.json`) records the
//! generating config, the per-document concept ids, and the vocabulary in
//! index order, so the text round-trips bit-exactly.

use crate::error::{GincError, Result};
use crate::gen::{Document, GincConfig};
use crate::vocab::Vocabulary;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: GincConfig,
    pub vocabulary: Vocabulary,
    pub documents: Vec<Document>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    config: GincConfig,
    concept_ids: Vec<usize>,
    vocabulary: Vec<String>,
}

/// Path of the sidecar for a corpus text file.
pub fn sidecar_path(text_path: &Path) -> PathBuf {
    text_path.with_extension("meta.json")
}

/// Render one document as a line of token strings.
pub fn render_document(doc: &Document, vocab: &Vocabulary) -> String {
    let mut line = String::new();
    for (i, &tok) in doc.tokens.iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        line.push_str(vocab.token(tok));
    }
    line
}

/// Write the corpus text plus its sidecar.
pub fn write_corpus(corpus: &Corpus, text_path: &Path) -> Result<()> {
    let mut out = String::new();
    for doc in &corpus.documents {
        out.push_str(&render_document(doc, &corpus.vocabulary));
        out.push('\n');
    }
    let mut f = fs::File::create(text_path)?;
    f.write_all(out.as_bytes())?;

    let sidecar = Sidecar {
        config: corpus.config.clone(),
        concept_ids: corpus.documents.iter().map(|d| d.concept_id).collect(),
        vocabulary: corpus.vocabulary.tokens().to_vec(),
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    fs::write(sidecar_path(text_path), json)?;
    Ok(())
}

/// Read a corpus back from its text file and sidecar.
pub fn read_corpus(text_path: &Path) -> Result<Corpus> {
    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(text_path))?)?;
    let vocabulary = Vocabulary::from_tokens(sidecar.vocabulary)?;
    let index = vocabulary.index_map();

    let text = fs::read_to_string(text_path)?;
    let mut documents = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let mut tokens = Vec::new();
        for word in line.split(' ') {
            if word.is_empty() {
                return Err(GincError::Parse {
                    line: line_no + 1,
                    message: "empty token (double space?)".into(),
                });
            }
            let &tok = index.get(word).ok_or_else(|| GincError::Parse {
                line: line_no + 1,
                message: format!("unknown token {word:?}"),
            })?;
            tokens.push(tok);
        }
        let concept_id = *sidecar.concept_ids.get(line_no).ok_or_else(|| GincError::Parse {
            line: line_no + 1,
            message: "more documents than concept ids in sidecar".into(),
        })?;
        documents.push(Document { concept_id, tokens });
    }
    if documents.len() != sidecar.concept_ids.len() {
        return Err(GincError::Parse {
            line: documents.len(),
            message: format!(
                "sidecar lists {} documents, text has {}",
                sidecar.concept_ids.len(),
                documents.len()
            ),
        });
    }
    Ok(Corpus {
        config: sidecar.config,
        vocabulary,
        documents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{build_mixture, sample_document};
    use crate::seed;

    fn temp_path(name: &str) -> PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("ginc-corpus-test-{}-{name}", std::process::id()));
        p
    }

    fn small_corpus(seed_val: u64, n_docs: usize, len: usize) -> Corpus {
        let config = GincConfig {
            n_train_docs: n_docs,
            train_doc_len: len,
            master_seed: seed_val,
            ..GincConfig::default()
        };
        let mixture = build_mixture(&config).unwrap();
        let documents = (0..n_docs)
            .map(|i| {
                let mut rng = seed::stream(seed_val, &[seed::tags::TRAIN_DOCUMENT, i as u64]);
                sample_document(&mixture, &mut rng, len)
            })
            .collect();
        Corpus {
            config,
            vocabulary: mixture.vocabulary().clone(),
            documents,
        }
    }

    #[test]
    fn round_trip_preserves_documents() {
        let corpus = small_corpus(5, 3, 64);
        let path = temp_path("roundtrip.txt");
        write_corpus(&corpus, &path).unwrap();
        let back = read_corpus(&path).unwrap();
        assert_eq!(corpus, back);
        // Second write is byte-identical.
        let bytes_a = fs::read(&path).unwrap();
        write_corpus(&back, &path).unwrap();
        let bytes_b = fs::read(&path).unwrap();
        assert_eq!(bytes_a, bytes_b);
        fs::remove_file(&path).ok();
        fs::remove_file(sidecar_path(&path)).ok();
    }

    #[test]
    fn rendering_uses_backslash_delimiters() {
        let corpus = small_corpus(6, 1, 256);
        let line = render_document(&corpus.documents[0], &corpus.vocabulary);
        assert!(line.contains('\\'));
        assert!(!line.contains("  "));
        let words: Vec<&str> = line.split(' ').collect();
        assert_eq!(words.len(), 256);
    }

    #[test]
    fn empty_corpus_round_trips() {
        let mut corpus = small_corpus(7, 1, 8);
        corpus.documents.clear();
        let path = temp_path("empty.txt");
        write_corpus(&corpus, &path).unwrap();
        let back = read_corpus(&path).unwrap();
        assert!(back.documents.is_empty());
        fs::remove_file(&path).ok();
        fs::remove_file(sidecar_path(&path)).ok();
    }

    #[test]
    fn malformed_file_reports_line_number() {
        let corpus = small_corpus(8, 2, 16);
        let path = temp_path("malformed.txt");
        write_corpus(&corpus, &path).unwrap();
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("not-a-token another\n");
        fs::write(&path, text).unwrap();
        match read_corpus(&path) {
            Err(GincError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        fs::remove_file(&path).ok();
        fs::remove_file(sidecar_path(&path)).ok();
    }
}
