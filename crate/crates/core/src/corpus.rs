//! Text ingestion: vocabulary construction, integer encoding, batching.
//!
//! One line of input text is one sentence. Encoding appends an end-of-sentence
//! marker to every sentence, and that marker doubles as the sentence-start
//! input during modeling, so the id assignment below is part of the on-disk
//! contract: `<unk>` is always id 0 and `<eos>` always id 1.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "<eos>";

const VOCAB_MAGIC: &str = "fixpoint-vocab v1";

/// Token <-> id bijection with two reserved entries: `<unk>` = 0, `<eos>` = 1.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    id_of: HashMap<String, TokenId>,
    token_of: Vec<String>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != UNK_TOKEN || tokens[1] != EOS_TOKEN {
            return Err(Error::Invalid {
                what: "vocabulary",
                detail: format!("first two entries must be {UNK_TOKEN} and {EOS_TOKEN}"),
            });
        }
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if id_of.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Invalid {
                    what: "vocabulary",
                    detail: format!("duplicate token {t:?}"),
                });
            }
        }
        Ok(Vocabulary {
            id_of,
            token_of: tokens,
        })
    }

    pub fn size(&self) -> usize {
        self.token_of.len()
    }

    pub fn unk_id(&self) -> TokenId {
        0
    }

    pub fn eos_id(&self) -> TokenId {
        1
    }

    /// Exact lookup; `None` for out-of-vocabulary tokens.
    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.id_of.get(token).copied()
    }

    /// Lookup with fallback to `<unk>`.
    pub fn lookup(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(0)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.token_of[id as usize]
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut w = BufWriter::new(file);
            let io = |e| Error::io(&tmp, e);
            writeln!(w, "{VOCAB_MAGIC} {}", self.size()).map_err(io)?;
            for t in &self.token_of {
                writeln!(w, "{t}").map_err(io)?;
            }
            w.flush().map_err(io)?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path, e))?
            .ok_or_else(|| Error::format(path, "missing header".to_string()))?;
        let size = header
            .strip_prefix(VOCAB_MAGIC)
            .and_then(|rest| rest.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::format(path, format!("bad header {header:?}")))?;
        let mut tokens = Vec::with_capacity(size);
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            tokens.push(line);
        }
        if tokens.len() != size {
            return Err(Error::format(
                path,
                format!("header says {size} tokens, file has {}", tokens.len()),
            ));
        }
        Self::from_tokens(tokens).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Count whitespace-separated tokens per line and assign ids.
///
/// Ordering is fully deterministic: after the two reserved entries, tokens are
/// ranked by descending frequency with ties broken lexicographically. Tokens
/// seen fewer than `min_count` times are dropped (they encode to `<unk>`).
/// Literal `<unk>`/`<eos>` occurrences in the text map to the reserved ids and
/// are never duplicated.
pub fn build_vocab<I, S>(lines: I, min_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut total = 0u64;
    for line in lines {
        for tok in line.as_ref().split_whitespace() {
            total += 1;
            if tok == UNK_TOKEN || tok == EOS_TOKEN {
                continue;
            }
            *counts.entry(tok.to_string()).or_insert(0) += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyCorpus("no tokens in vocabulary source".into()));
    }
    let mut ranked: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(_, c)| *c as usize >= min_count.max(1))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tokens = Vec::with_capacity(ranked.len() + 2);
    tokens.push(UNK_TOKEN.to_string());
    tokens.push(EOS_TOKEN.to_string());
    tokens.extend(ranked.into_iter().map(|(t, _)| t));
    Vocabulary::from_tokens(tokens)
}

/// Integer-encoded corpus: one id sequence per sentence, each terminated by
/// the end-of-sentence id.
#[derive(Clone, Debug)]
pub struct EncodedCorpus {
    sentences: Vec<Vec<TokenId>>,
    /// Tokens read from the source text (excludes the appended terminators).
    word_count: usize,
    vocab_size: usize,
    eos_id: TokenId,
}

impl EncodedCorpus {
    pub fn sentences(&self) -> &[Vec<TokenId>] {
        &self.sentences
    }

    /// Source words, excluding sentence terminators.
    pub fn word_count(&self) -> usize {
        self.word_count
    }

    /// Prediction targets: every source word plus one terminator per sentence.
    pub fn target_count(&self) -> usize {
        self.word_count + self.sentences.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Encode text lines against a fixed vocabulary; out-of-vocabulary tokens map
/// to `<unk>`. A blank line becomes the one-token sentence `[<eos>]`.
pub fn encode<I, S>(vocab: &Vocabulary, lines: I) -> EncodedCorpus
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let eos = vocab.eos_id();
    let mut sentences = Vec::new();
    let mut word_count = 0usize;
    for line in lines {
        let mut ids: Vec<TokenId> = line
            .as_ref()
            .split_whitespace()
            .map(|t| vocab.lookup(t))
            .collect();
        word_count += ids.len();
        ids.push(eos);
        sentences.push(ids);
    }
    EncodedCorpus {
        sentences,
        word_count,
        vocab_size: vocab.size(),
        eos_id: eos,
    }
}

/// Render one encoded sentence back to text, dropping the final terminator.
pub fn decode_sentence(vocab: &Vocabulary, sentence: &[TokenId]) -> String {
    let body = match sentence.last() {
        Some(&id) if id == vocab.eos_id() => &sentence[..sentence.len() - 1],
        _ => sentence,
    };
    body.iter()
        .map(|&id| vocab.token(id))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    BufReader::new(file)
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

/// A shuffled slice of the corpus, stored as a padded row-major grid.
///
/// Row `r` holds sentence tokens padded to `max_len` with the terminator id;
/// `lengths[r]` gives the real length, and padded positions are ignored by
/// every consumer.
#[derive(Clone, Debug)]
pub struct Batch {
    grid: Vec<TokenId>,
    rows: usize,
    max_len: usize,
    lengths: Vec<usize>,
    eos_id: TokenId,
}

impl Batch {
    /// Build directly from sentences (each already terminator-ended).
    pub fn from_sentences(sentences: &[&[TokenId]], eos_id: TokenId) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::EmptyCorpus("batch with no sentences".into()));
        }
        let max_len = sentences.iter().map(|s| s.len()).max().unwrap_or(0);
        if max_len == 0 {
            return Err(Error::EmptyCorpus("batch of empty sentences".into()));
        }
        let mut grid = vec![eos_id; sentences.len() * max_len];
        let mut lengths = Vec::with_capacity(sentences.len());
        for (r, s) in sentences.iter().enumerate() {
            grid[r * max_len..r * max_len + s.len()].copy_from_slice(s);
            lengths.push(s.len());
        }
        Ok(Batch {
            grid,
            rows: sentences.len(),
            max_len,
            lengths,
            eos_id,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    /// Row including padding.
    pub fn padded_row(&self, r: usize) -> &[TokenId] {
        &self.grid[r * self.max_len..(r + 1) * self.max_len]
    }

    /// Row truncated to its true sentence length.
    pub fn sentence(&self, r: usize) -> &[TokenId] {
        &self.grid[r * self.max_len..r * self.max_len + self.lengths[r]]
    }

    /// Total real (unpadded) tokens in the batch.
    pub fn token_count(&self) -> usize {
        self.lengths.iter().sum()
    }
}

/// Shuffle sentences with a seeded generator and split into batches of
/// `batch_size` rows (the final batch may be smaller). The same seed always
/// produces the same batches.
pub fn batchify(corpus: &EncodedCorpus, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Invalid {
            what: "batch_size",
            detail: "must be at least 1".into(),
        });
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("cannot batch an empty corpus".into()));
    }
    let mut order: Vec<usize> = (0..corpus.sentences.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    order
        .chunks(batch_size)
        .map(|chunk| {
            let rows: Vec<&[TokenId]> = chunk.iter().map(|&i| corpus.sentences[i].as_slice()).collect();
            Batch::from_sentences(&rows, corpus.eos_id)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_vocab() -> Vocabulary {
        build_vocab(["a b a", "c a"], 1).unwrap()
    }

    #[test]
    fn ids_are_frequency_then_lex_ordered() {
        let v = sample_vocab();
        assert_eq!(v.size(), 5);
        assert_eq!(v.id("a"), Some(2)); // 3 occurrences
        assert_eq!(v.id("b"), Some(3)); // tie with c, b < c
        assert_eq!(v.id("c"), Some(4));
        assert_eq!(v.unk_id(), 0);
        assert_eq!(v.eos_id(), 1);
        assert_eq!(v.token(0), UNK_TOKEN);
        assert_eq!(v.token(1), EOS_TOKEN);
    }

    #[test]
    fn min_count_drops_rare_tokens() {
        let v = build_vocab(["a b a", "c a"], 2).unwrap();
        assert_eq!(v.size(), 3);
        assert_eq!(v.id("a"), Some(2));
        assert_eq!(v.id("b"), None);
        assert_eq!(v.lookup("b"), v.unk_id());
    }

    #[test]
    fn literal_specials_are_not_duplicated() {
        let v = build_vocab(["x <unk> y <eos>", "x"], 1).unwrap();
        assert_eq!(v.size(), 4); // unk, eos, x, y
        assert_eq!(v.lookup(UNK_TOKEN), 0);
        assert_eq!(v.lookup(EOS_TOKEN), 1);
    }

    #[test]
    fn empty_source_is_rejected() {
        assert!(matches!(
            build_vocab(Vec::<String>::new(), 1),
            Err(Error::EmptyCorpus(_))
        ));
        assert!(build_vocab(["   ", ""], 1).is_err());
    }

    #[test]
    fn encode_appends_terminator_and_maps_oov() {
        let v = sample_vocab();
        let c = encode(&v, ["a zzz", ""]);
        assert_eq!(c.sentences().len(), 2);
        assert_eq!(c.sentences()[0], vec![2, 0, 1]);
        assert_eq!(c.sentences()[1], vec![1]); // blank line -> terminator only
        assert_eq!(c.word_count(), 2);
        assert_eq!(c.target_count(), 4);
        assert_eq!(c.vocab_size(), 5);
    }

    #[test]
    fn decode_round_trip_restores_unk_form() {
        let v = sample_vocab();
        let lines = ["a b zzz", "c"];
        let c = encode(&v, lines);
        let decoded: Vec<String> = c
            .sentences()
            .iter()
            .map(|s| decode_sentence(&v, s))
            .collect();
        assert_eq!(decoded, vec!["a b <unk>".to_string(), "c".to_string()]);
        // re-encoding the decoded text gives identical ids
        let again = encode(&v, &decoded);
        assert_eq!(again.sentences(), c.sentences());
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("fixpoint-vocab-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("v.vocab");
        let v = sample_vocab();
        v.write(&path).unwrap();
        let back = Vocabulary::read(&path).unwrap();
        assert_eq!(back.size(), v.size());
        for id in 0..v.size() as TokenId {
            assert_eq!(back.token(id), v.token(id));
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn vocab_read_rejects_corrupt_header() {
        let dir = std::env::temp_dir().join(format!("fixpoint-vocab-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.vocab");
        std::fs::write(&path, "not-a-vocab 3\n<unk>\n<eos>\nx\n").unwrap();
        assert!(matches!(Vocabulary::read(&path), Err(Error::Format { .. })));
        std::fs::write(&path, "fixpoint-vocab v1 9\n<unk>\n<eos>\nx\n").unwrap();
        assert!(Vocabulary::read(&path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn batchify_is_deterministic_and_conserves_tokens() {
        let v = sample_vocab();
        let lines: Vec<String> = (0..23).map(|i| format!("a b c {}", "a ".repeat(i % 5))).collect();
        let c = encode(&v, &lines);
        let b1 = batchify(&c, 4, 99).unwrap();
        let b2 = batchify(&c, 4, 99).unwrap();
        assert_eq!(b1.len(), 6); // 23 sentences in chunks of 4
        for (x, y) in b1.iter().zip(&b2) {
            assert_eq!(x.grid, y.grid);
            assert_eq!(x.lengths, y.lengths);
        }
        let total: usize = b1.iter().map(|b| b.token_count()).sum();
        assert_eq!(total, c.target_count());
        // a different seed reorders but conserves
        let b3 = batchify(&c, 4, 100).unwrap();
        let total3: usize = b3.iter().map(|b| b.token_count()).sum();
        assert_eq!(total3, total);
        assert!(b1.iter().zip(&b3).any(|(x, y)| x.grid != y.grid));
    }

    #[test]
    fn batch_padding_uses_terminator() {
        let s1: &[TokenId] = &[2, 3, 1];
        let s2: &[TokenId] = &[4, 1];
        let b = Batch::from_sentences(&[s1, s2], 1).unwrap();
        assert_eq!(b.max_len(), 3);
        assert_eq!(b.padded_row(1), &[4, 1, 1]);
        assert_eq!(b.sentence(1), &[4, 1]);
        assert_eq!(b.token_count(), 5);
    }

    #[test]
    fn batchify_rejects_degenerate_input() {
        let v = sample_vocab();
        let c = encode(&v, ["a"]);
        assert!(batchify(&c, 0, 1).is_err());
        let empty = encode(&v, Vec::<String>::new());
        assert!(matches!(batchify(&empty, 4, 1), Err(Error::EmptyCorpus(_))));
    }

    proptest! {
        #[test]
        fn every_sentence_appears_exactly_once(
            n_sent in 1usize..40,
            batch_size in 1usize..10,
            seed in any::<u64>(),
        ) {
            let v = sample_vocab();
            let lines: Vec<String> = (0..n_sent)
                .map(|i| ["a", "b", "c", "a b", "c a b"][i % 5].to_string())
                .collect();
            let c = encode(&v, &lines);
            let batches = batchify(&c, batch_size, seed).unwrap();

            let mut seen: Vec<Vec<TokenId>> = batches
                .iter()
                .flat_map(|b| (0..b.rows()).map(|r| b.sentence(r).to_vec()))
                .collect();
            let mut expect: Vec<Vec<TokenId>> = c.sentences().to_vec();
            seen.sort();
            expect.sort();
            prop_assert_eq!(seen, expect);
        }
    }
}
