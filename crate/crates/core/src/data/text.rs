//! Character-level corpus ingestion for the next-character task.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{CoreError, Result};

/// A corpus split into disjoint fixed-length character-index sequences.
/// The first `seq_len - 1` indices of each sequence are the input; the final
/// index is the prediction target.
#[derive(Clone, Debug, PartialEq)]
pub struct CharDataset {
    /// Characters in first-appearance order; index = position.
    pub vocab: Vec<char>,
    pub index: HashMap<char, usize>,
    pub seq_len: usize,
    pub sequences: Vec<Vec<usize>>,
}

impl CharDataset {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Input indices and target index of sequence `i`.
    pub fn example(&self, i: usize) -> (&[usize], usize) {
        let seq = &self.sequences[i];
        (&seq[..seq.len() - 1], seq[seq.len() - 1])
    }
}

/// Build a dataset from raw text: vocabulary in first-appearance order,
/// disjoint sequences of `seq_len` characters, trailing partial dropped.
pub fn char_dataset_from_text(text: &str, seq_len: usize) -> Result<CharDataset> {
    if seq_len < 2 {
        return Err(CoreError::contract(format!(
            "seq_len must be >= 2 (one input char and one target), got {seq_len}"
        )));
    }
    let mut vocab = Vec::new();
    let mut index = HashMap::new();
    let mut encoded = Vec::new();
    for ch in text.chars() {
        let id = *index.entry(ch).or_insert_with(|| {
            vocab.push(ch);
            vocab.len() - 1
        });
        encoded.push(id);
    }
    let sequences = encoded
        .chunks_exact(seq_len)
        .map(|chunk| chunk.to_vec())
        .collect();
    Ok(CharDataset {
        vocab,
        index,
        seq_len,
        sequences,
    })
}

pub fn load_text_corpus(path: &Path, seq_len: usize) -> Result<CharDataset> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    char_dataset_from_text(&text, seq_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abcabc_splits_into_two_sequences() {
        let ds = char_dataset_from_text("abcabc", 3).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.vocab_size(), 3);
        assert_eq!(ds.sequences[0], vec![0, 1, 2]);
        assert_eq!(ds.sequences[1], vec![0, 1, 2]);
        let (input, target) = ds.example(0);
        assert_eq!(input, &[0, 1]);
        assert_eq!(target, 2);
    }

    #[test]
    fn vocabulary_is_first_appearance_ordered() {
        let ds = char_dataset_from_text("banana", 2).unwrap();
        assert_eq!(ds.vocab, vec!['b', 'a', 'n']);
        assert_eq!(ds.index[&'n'], 2);
    }

    #[test]
    fn short_corpus_yields_empty_dataset() {
        let ds = char_dataset_from_text("ab", 5).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.vocab_size(), 2);
    }

    #[test]
    fn trailing_partial_sequence_is_dropped() {
        let ds = char_dataset_from_text("abcdefgh", 3).unwrap();
        assert_eq!(ds.len(), 2); // "abc", "def"; "gh" dropped
    }

    #[test]
    fn seq_len_contract() {
        assert!(char_dataset_from_text("abc", 1).is_err());
        assert!(char_dataset_from_text("abc", 0).is_err());
    }
}
