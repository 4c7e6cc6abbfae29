// SPDX-License-Identifier: MIT OR Apache-2.0

use super::TokenId;

/// Whitespace word tokenizer: each word maps to `fnv1a64(word) % vocab_size`.
///
/// Punctuation stays attached to its word, so `"Note that, "` becomes the
/// two tokens for `"Note"` and `"that,"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WordHashTokenizer {
    vocab_size: usize,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

impl WordHashTokenizer {
    pub fn new(vocab_size: usize) -> Self {
        assert!(vocab_size > 0, "vocabulary must be non-empty");
        Self { vocab_size }
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace()
            .map(|w| TokenId((fnv1a64(w.as_bytes()) % self.vocab_size as u64) as u32))
            .collect()
    }
}
