//! BM25 retrieval over assembly listings.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub const DEFAULT_K1: f64 = 1.5;
pub const DEFAULT_B: f64 = 0.75;

const NUM_TOKEN: &str = "<num>";

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("cannot build an index from an empty corpus")]
    EmptyCorpus,
    #[error("invalid index document: {0}")]
    Json(#[from] serde_json::Error),
}

/// Lowercased word tokens. `%` and `$` stay attached as prefixes; tokens
/// starting with a digit become `<num>`.
pub fn tokenize_asm(asm: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut chars = asm.chars().peekable();
    while let Some(c) = chars.next() {
        let mut prefix = None;
        let first = if c == '%' || c == '$' {
            match chars.peek() {
                Some(&n) if is_word(n) => {
                    prefix = Some(c);
                    chars.next();
                    n
                }
                _ => continue,
            }
        } else if is_word(c) {
            c
        } else {
            continue;
        };
        let mut word = String::new();
        word.push(first);
        while let Some(&n) = chars.peek() {
            if !is_word(n) {
                break;
            }
            word.push(n);
            chars.next();
        }
        let body = if first.is_ascii_digit() {
            NUM_TOKEN.to_string()
        } else {
            word.to_lowercase()
        };
        tokens.push(match prefix {
            Some(p) => format!("{p}{body}"),
            None => body,
        });
    }
    tokens
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsmDocument {
    pub doc_id: String,
    pub asm: String,
    pub tokens: Vec<String>,
    pub source: String,
}

/// Immutable BM25 index. Serializes to a single JSON document; postings
/// are rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "IndexData", into = "IndexData")]
pub struct AsmIndex {
    documents: Vec<AsmDocument>,
    doc_freqs: BTreeMap<String, usize>,
    avg_doc_len: f64,
    k1: f64,
    b: f64,
    /// term -> (document position, term frequency)
    postings: HashMap<String, Vec<(usize, u32)>>,
    by_id: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct IndexData {
    documents: Vec<AsmDocument>,
    doc_freqs: BTreeMap<String, usize>,
    avg_doc_len: f64,
    k1: f64,
    b: f64,
}

impl From<IndexData> for AsmIndex {
    fn from(d: IndexData) -> Self {
        AsmIndex::assemble(d.documents, d.k1, d.b)
    }
}

impl From<AsmIndex> for IndexData {
    fn from(i: AsmIndex) -> Self {
        IndexData {
            documents: i.documents,
            doc_freqs: i.doc_freqs,
            avg_doc_len: i.avg_doc_len,
            k1: i.k1,
            b: i.b,
        }
    }
}

/// Builds an index with the default parameters.
pub fn build_index<I>(corpus: I) -> Result<AsmIndex, RetrievalError>
where
    I: IntoIterator<Item = (String, String, String)>,
{
    build_index_with(corpus, DEFAULT_K1, DEFAULT_B)
}

pub fn build_index_with<I>(corpus: I, k1: f64, b: f64) -> Result<AsmIndex, RetrievalError>
where
    I: IntoIterator<Item = (String, String, String)>,
{
    let documents: Vec<AsmDocument> = corpus
        .into_iter()
        .map(|(doc_id, asm, source)| AsmDocument {
            tokens: tokenize_asm(&asm),
            doc_id,
            asm,
            source,
        })
        .collect();
    if documents.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    Ok(AsmIndex::assemble(documents, k1, b))
}

impl AsmIndex {
    fn assemble(documents: Vec<AsmDocument>, k1: f64, b: f64) -> Self {
        let mut doc_freqs = BTreeMap::new();
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut total_len = 0usize;
        for (pos, doc) in documents.iter().enumerate() {
            total_len += doc.tokens.len();
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &doc.tokens {
                *tf.entry(t.as_str()).or_default() += 1;
            }
            for (term, count) in tf {
                *doc_freqs.entry(term.to_string()).or_insert(0) += 1;
                postings.entry(term.to_string()).or_default().push((pos, count));
            }
        }
        let avg_doc_len = if documents.is_empty() {
            0.0
        } else {
            total_len as f64 / documents.len() as f64
        };
        let by_id = documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.clone(), i))
            .collect();
        AsmIndex {
            documents,
            doc_freqs,
            avg_doc_len,
            k1,
            b,
            postings,
            by_id,
        }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[AsmDocument] {
        &self.documents
    }

    pub fn document(&self, doc_id: &str) -> Option<&AsmDocument> {
        self.by_id.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freqs.get(term).copied().unwrap_or(0)
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn params(&self) -> (f64, f64) {
        (self.k1, self.b)
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`
    pub fn idf(&self, df: usize) -> f64 {
        let n = self.documents.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top `top_k` documents by BM25 score, ties broken by ascending doc id.
    /// Every query token occurrence contributes.
    pub fn query(&self, asm: &str, top_k: usize) -> Vec<(String, f64)> {
        let mut scores = vec![0.0f64; self.documents.len()];
        let norm: Vec<f64> = self
            .documents
            .iter()
            .map(|d| {
                let rel = if self.avg_doc_len > 0.0 {
                    d.tokens.len() as f64 / self.avg_doc_len
                } else {
                    1.0
                };
                self.k1 * (1.0 - self.b + self.b * rel)
            })
            .collect();
        for term in tokenize_asm(asm) {
            let Some(list) = self.postings.get(&term) else { continue };
            let idf = self.idf(list.len());
            for &(pos, tf) in list {
                let tf = tf as f64;
                scores[pos] += idf * tf * (self.k1 + 1.0) / (tf + norm[pos]);
            }
        }
        let mut ranked: Vec<(String, f64)> = self
            .documents
            .iter()
            .zip(scores)
            .map(|(d, s)| (d.doc_id.clone(), s))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(top_k.min(self.documents.len()));
        ranked
    }

    pub fn to_json(&self) -> Result<String, RetrievalError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, RetrievalError> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(items: &[(&str, &str)]) -> Vec<(String, String, String)> {
        items
            .iter()
            .map(|(id, asm)| (id.to_string(), asm.to_string(), format!("/* {id} */")))
            .collect()
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize_asm("mov $0x1,%eax"), ["mov", "$<num>", "%eax"]);
        assert!(tokenize_asm("").is_empty());
        assert_eq!(tokenize_asm("call <printf>"), ["call", "printf"]);
        assert_eq!(tokenize_asm("MOV -0x4(%RBP),%eax"), ["mov", "<num>", "%rbp", "%eax"]);
        assert_eq!(tokenize_asm("call <puts@plt>"), ["call", "puts", "plt"]);
        assert_eq!(tokenize_asm("% $ ,"), Vec::<String>::new());
    }

    #[test]
    fn doc_freqs_count_documents_not_occurrences() {
        let idx = build_index(docs(&[("a", "ret ret ret"), ("b", "ret"), ("c", "push ret")])).unwrap();
        assert_eq!(idx.doc_freq("ret"), 3);
        assert_eq!(idx.doc_freq("push"), 1);
        assert_eq!(idx.doc_freq("pop"), 0);
    }

    #[test]
    fn average_length() {
        let idx = build_index(docs(&[("a", "push pop"), ("b", "push pop ret ret")])).unwrap();
        assert_eq!(idx.avg_doc_len(), 3.0);
        assert_eq!(idx.params(), (1.5, 0.75));
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(build_index(Vec::new()), Err(RetrievalError::EmptyCorpus)));
    }

    #[test]
    fn self_query_ranks_first() {
        let idx = build_index(docs(&[
            ("a", "push %rbp\nmov %rsp,%rbp\nret"),
            ("b", "imul %esi,%edi\nmov %edi,%eax\nret"),
            ("c", "xor %eax,%eax\nret"),
        ]))
        .unwrap();
        assert_eq!(idx.query("imul %esi,%edi\nmov %edi,%eax\nret", 3)[0].0, "b");
    }

    #[test]
    fn out_of_vocabulary_query_scores_zero_in_id_order() {
        let idx = build_index(docs(&[("b", "ret"), ("a", "push")])).unwrap();
        let r = idx.query("vfmadd231ps", 5);
        assert_eq!(r, vec![("a".to_string(), 0.0), ("b".to_string(), 0.0)]);
        assert_eq!(idx.query("", 1), vec![("a".to_string(), 0.0)]);
    }

    #[test]
    fn json_round_trip_preserves_rankings() {
        let idx = build_index(docs(&[("a", "push pop"), ("b", "push ret ret"), ("c", "lea")])).unwrap();
        let back = AsmIndex::from_json(&idx.to_json().unwrap()).unwrap();
        assert_eq!(idx.query("ret push", 3), back.query("ret push", 3));
        assert_eq!(back.document("c").unwrap().asm, "lea");
    }

    /// Scores one document at a time straight from its token list.
    fn naive_scores(docs: &[(String, Vec<String>)], query: &[String]) -> Vec<(String, f64)> {
        let n = docs.len() as f64;
        let avg = docs.iter().map(|d| d.1.len()).sum::<usize>() as f64 / n;
        let mut out: Vec<(String, f64)> = docs
            .iter()
            .map(|(id, toks)| {
                let mut s = 0.0;
                for q in query {
                    let df = docs.iter().filter(|d| d.1.contains(q)).count() as f64;
                    let tf = toks.iter().filter(|t| *t == q).count() as f64;
                    if tf == 0.0 {
                        continue;
                    }
                    let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                    s += idf * tf * 2.5 / (tf + 1.5 * (0.25 + 0.75 * toks.len() as f64 / avg));
                }
                (id.clone(), s)
            })
            .collect();
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }

    fn assert_matches_naive(corpus: &[(String, String, String)], query: &str) {
        let idx = build_index(corpus.to_vec()).unwrap();
        let docs: Vec<(String, Vec<String>)> =
            corpus.iter().map(|(id, asm, _)| (id.clone(), tokenize_asm(asm))).collect();
        let expect = naive_scores(&docs, &tokenize_asm(query));
        let got = idx.query(query, corpus.len());
        assert_eq!(got.len(), expect.len());
        for (g, e) in got.iter().zip(&expect) {
            assert!((g.1 - e.1).abs() < 1e-9, "{g:?} vs {e:?}");
        }
        // ids may only differ where scores tie within tolerance
        for (g, e) in got.iter().zip(&expect) {
            if g.0 != e.0 {
                let ge = expect.iter().find(|x| x.0 == g.0).unwrap().1;
                assert!((ge - e.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn five_documents_match_naive_scorer() {
        let corpus = docs(&[
            ("d1", "push %rbp\nmov %rsp,%rbp\nmov %edi,-0x4(%rbp)\npop %rbp\nret"),
            ("d2", "lea 0x1(%rdi),%eax\nret"),
            ("d3", "xor %eax,%eax\ntest %edi,%edi\njle <f>\nret"),
            ("d4", "call <puts@plt>\ncall <puts@plt>\nadd $0x8,%rsp\nret"),
            ("d5", "imul %edi,%edi\nmov %edi,%eax\nret"),
        ]);
        assert_matches_naive(&corpus, "mov %edi,%eax\nret\nret");
        assert_matches_naive(&corpus, "call <puts@plt>");
    }

    proptest::proptest! {
        #[test]
        fn postings_agree_with_naive_scorer(
            bodies in proptest::collection::vec(
                proptest::collection::vec(proptest::sample::select(vec!["mov", "%eax", "$0x1", "ret", "push", "%rbp", "call", "<puts>", "lea"]), 0..12),
                1..8,
            ),
            query in proptest::collection::vec(proptest::sample::select(vec!["mov", "%eax", "$7", "ret", "jmp", "%rbp"]), 0..6),
        ) {
            let corpus: Vec<(String, String, String)> = bodies
                .iter()
                .enumerate()
                .map(|(i, b)| (format!("d{i:02}"), b.join(" "), String::new()))
                .collect();
            assert_matches_naive(&corpus, &query.join(" "));
        }

        #[test]
        fn tokens_have_no_separators(s in ".{0,64}") {
            for t in tokenize_asm(&s) {
                proptest::prop_assert!(!t.is_empty());
                proptest::prop_assert!(!t.chars().any(|c| c.is_whitespace() || c == ','));
                proptest::prop_assert_eq!(t.clone(), t.to_lowercase());
            }
        }
    }
}
