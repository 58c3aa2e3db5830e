use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::RagError;
use crate::corpus::QaExample;
use crate::tokenize::analyze;

pub type TokenId = u32;

pub const EOS: &str = "</s>";

/// Closed answer vocabulary. Token strings never contain whitespace; a
/// decoded answer is its tokens joined by single spaces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    eos: TokenId,
}

impl Vocab {
    /// Builds a vocabulary with `eos` included (added first if absent).
    pub fn new(tokens: impl IntoIterator<Item = String>, eos: &str) -> Result<Self, RagError> {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
            eos: 0,
        };
        v.intern(eos)?;
        for t in tokens {
            v.intern(&t)?;
        }
        v.eos = v.index[eos];
        Ok(v)
    }

    /// Keeps the given order so ids match an external model's output
    /// positions. Tokens must be unique and include `eos`.
    pub fn from_ordered(tokens: Vec<String>, eos: &str) -> Result<Self, RagError> {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
            eos: 0,
        };
        for t in &tokens {
            if v.index.contains_key(t) {
                return Err(RagError::Vocab(format!("duplicate token {t:?}")));
            }
            v.intern(t)?;
        }
        v.eos = v
            .id(eos)
            .ok_or_else(|| RagError::Vocab("eos token missing from vocabulary".into()))?;
        Ok(v)
    }

    fn intern(&mut self, token: &str) -> Result<TokenId, RagError> {
        if token.is_empty() || token.chars().any(char::is_whitespace) {
            return Err(RagError::Vocab(format!("bad token {token:?}")));
        }
        if let Some(&id) = self.index.get(token) {
            return Ok(id);
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Whitespace tokenization into known ids; unknown words fail.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, RagError> {
        text.split_whitespace()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| RagError::Vocab(format!("unknown token {w:?}")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&t| t != self.eos)
            .map(|&t| self.token(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Generator input for one retrieved candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub question: String,
    pub table_id: String,
    /// `question: <q> context: <segment text>`
    pub text: String,
}

/// Next-token distributions conditioned on a prompt and a decoded prefix.
/// Every returned vector has one entry per vocabulary token, is
/// non-negative and sums to one.
pub trait Generator {
    fn vocab(&self) -> &Vocab;
    fn next_token_dist(&self, prompt: &Prompt, prefix: &[TokenId]) -> Result<Vec<f64>, RagError>;
}

pub fn check_distribution(dist: &[f64], vocab_len: usize, tol: f64) -> Result<(), RagError> {
    if dist.len() != vocab_len {
        return Err(RagError::InvalidDistribution(format!(
            "length {} for vocabulary of {}",
            dist.len(),
            vocab_len
        )));
    }
    if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(RagError::InvalidDistribution("negative or non-finite mass".into()));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(RagError::InvalidDistribution(format!("sums to {total}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    /// next token -> (count, child node for non-EOS tokens)
    next: BTreeMap<TokenId, (u64, Option<usize>)>,
}

#[derive(Debug, Clone, Default)]
struct Trie {
    nodes: Vec<TrieNode>,
}

impl Trie {
    fn insert(&mut self, tokens: &[TokenId], eos: TokenId) {
        if self.nodes.is_empty() {
            self.nodes.push(TrieNode::default());
        }
        let mut cur = 0;
        for &t in tokens {
            let n_nodes = self.nodes.len();
            let entry = self.nodes[cur].next.entry(t).or_insert((0, None));
            entry.0 += 1;
            let child = match entry.1 {
                Some(c) => c,
                None => {
                    entry.1 = Some(n_nodes);
                    self.nodes.push(TrieNode::default());
                    n_nodes
                }
            };
            cur = child;
        }
        self.nodes[cur].next.entry(eos).or_insert((0, None)).0 += 1;
    }

    fn lookup(&self, prefix: &[TokenId]) -> Option<&TrieNode> {
        let mut cur = self.nodes.first()?;
        for t in prefix {
            let (_, child) = cur.next.get(t)?;
            cur = &self.nodes[(*child)?];
        }
        Some(cur)
    }
}

pub const DEFAULT_SMOOTHING: f64 = 1e-6;

/// Deterministic test generator that has memorized answers per
/// (table, question) pair.
///
/// With `c(t)` the memorized continuation counts at the current prefix and
/// `V` the vocabulary size, `p(t) = (c(t) + λ) / (Σc + λV)`. Unknown tables,
/// questions or prefixes give the uniform distribution.
#[derive(Debug, Clone)]
pub struct ToyGenerator {
    vocab: Vocab,
    lambda: f64,
    tries: HashMap<(String, String), Trie>,
}

fn question_key(q: &str) -> String {
    analyze(q).join(" ")
}

impl ToyGenerator {
    pub fn new(lambda: f64) -> Self {
        Self {
            vocab: Vocab::new(Vec::new(), EOS).expect("EOS is a valid token"),
            lambda,
            tries: HashMap::new(),
        }
    }

    /// Adds tokens that are in the vocabulary but in no memorized answer.
    pub fn with_extra_tokens(mut self, tokens: &[&str]) -> Result<Self, RagError> {
        for t in tokens {
            self.vocab.intern(t)?;
        }
        Ok(self)
    }

    pub fn memorize(&mut self, table_id: &str, question: &str, answer: &str) -> Result<(), RagError> {
        let ids = answer
            .split_whitespace()
            .map(|w| self.vocab.intern(w))
            .collect::<Result<Vec<_>, _>>()?;
        let eos = self.vocab.eos();
        self.tries
            .entry((table_id.to_owned(), question_key(question)))
            .or_default()
            .insert(&ids, eos);
        Ok(())
    }

    /// Memorizes the first answer of every example on its gold table.
    pub fn from_examples(examples: &[QaExample], lambda: f64) -> Result<Self, RagError> {
        let mut g = Self::new(lambda);
        for ex in examples {
            g.memorize(&ex.gold_table_id, &ex.question, &ex.answers[0])?;
        }
        Ok(g)
    }
}

impl Generator for ToyGenerator {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_token_dist(&self, prompt: &Prompt, prefix: &[TokenId]) -> Result<Vec<f64>, RagError> {
        let v = self.vocab.len();
        let node = self
            .tries
            .get(&(prompt.table_id.clone(), question_key(&prompt.question)))
            .and_then(|t| t.lookup(prefix));
        let Some(node) = node else {
            return Ok(vec![1.0 / v as f64; v]);
        };
        let total: u64 = node.next.values().map(|(c, _)| c).sum();
        let denom = total as f64 + self.lambda * v as f64;
        let mut dist = vec![self.lambda / denom; v];
        for (&t, &(c, _)) in &node.next {
            dist[t as usize] = (c as f64 + self.lambda) / denom;
        }
        Ok(dist)
    }
}

/// Wraps a generator that is not safe for concurrent calls so it can be
/// shared across threads; calls are serialized through a mutex.
pub struct Serialized<G> {
    inner: Mutex<G>,
    vocab: Vocab,
}

impl<G: Generator> Serialized<G> {
    pub fn new(inner: G) -> Self {
        let vocab = inner.vocab().clone();
        Self {
            inner: Mutex::new(inner),
            vocab,
        }
    }
}

impl<G: Generator> Generator for Serialized<G> {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_token_dist(&self, prompt: &Prompt, prefix: &[TokenId]) -> Result<Vec<f64>, RagError> {
        let g = self
            .inner
            .lock()
            .map_err(|_| RagError::Generator("generator mutex poisoned".into()))?;
        g.next_token_dist(prompt, prefix)
    }
}
