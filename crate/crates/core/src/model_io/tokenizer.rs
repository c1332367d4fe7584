//! Byte-level BPE tokenizer compatible with the GPT-2 `vocab.json` / `merges.txt` pair.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use fancy_regex::Regex;

use crate::error::{Error, Result};

const PRETOKENIZE: &str =
    r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

const CACHE_LIMIT: usize = 1 << 16;

/// Reversible map from raw bytes to printable characters.
fn bytes_to_unicode() -> [char; 256] {
    let mut printable: Vec<u32> = (b'!' as u32..=b'~' as u32)
        .chain(0xA1..=0xAC)
        .chain(0xAE..=0xFF)
        .collect();
    let mut table = ['\0'; 256];
    for &b in &printable {
        table[b as usize] = char::from_u32(b).expect("latin-1 code point");
    }
    let mut next = 0u32;
    for b in 0..256u32 {
        if !printable.contains(&b) {
            table[b as usize] = char::from_u32(256 + next).expect("valid code point");
            next += 1;
            printable.push(b);
        }
    }
    table
}

pub struct Gpt2Tokenizer {
    encoder: HashMap<String, u32>,
    decoder: Vec<String>,
    merge_ranks: HashMap<(String, String), usize>,
    byte_encoder: [char; 256],
    byte_decoder: HashMap<char, u8>,
    pattern: Regex,
    cache: Mutex<HashMap<String, Vec<u32>>>,
}

impl std::fmt::Debug for Gpt2Tokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gpt2Tokenizer")
            .field("vocab_size", &self.decoder.len())
            .field("merges", &self.merge_ranks.len())
            .finish()
    }
}

impl Gpt2Tokenizer {
    pub fn from_files(vocab: &Path, merges: &Path) -> Result<Self> {
        let vocab_text = fs::read_to_string(vocab).map_err(|e| Error::io(vocab, e))?;
        let merges_text = fs::read_to_string(merges).map_err(|e| Error::io(merges, e))?;
        let encoder: HashMap<String, u32> =
            serde_json::from_str(&vocab_text).map_err(|e| Error::Tokenizer {
                path: vocab.to_path_buf(),
                reason: e.to_string(),
            })?;
        Self::from_parts(encoder, &merges_text).map_err(|reason| Error::Tokenizer {
            path: merges.to_path_buf(),
            reason,
        })
    }

    /// Looks for `vocab.json` and `merges.txt` inside `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        Self::from_files(&dir.join("vocab.json"), &dir.join("merges.txt"))
    }

    fn from_parts(encoder: HashMap<String, u32>, merges: &str) -> std::result::Result<Self, String> {
        let size = encoder.values().map(|&v| v as usize + 1).max().unwrap_or(0);
        if size != encoder.len() {
            return Err(format!(
                "vocabulary ids are not dense: {} entries, max id {}",
                encoder.len(),
                size.saturating_sub(1)
            ));
        }
        let mut decoder = vec![String::new(); size];
        for (tok, &id) in &encoder {
            decoder[id as usize] = tok.clone();
        }
        let mut merge_ranks = HashMap::new();
        for (lineno, line) in merges.lines().enumerate() {
            if line.starts_with("#version") || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => {
                    let rank = merge_ranks.len();
                    merge_ranks.entry((a.to_string(), b.to_string())).or_insert(rank);
                }
                _ => return Err(format!("malformed merge on line {}", lineno + 1)),
            }
        }
        let byte_encoder = bytes_to_unicode();
        let byte_decoder = byte_encoder
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect();
        let pattern = Regex::new(PRETOKENIZE).map_err(|e| e.to_string())?;
        Ok(Self {
            encoder,
            decoder,
            merge_ranks,
            byte_encoder,
            byte_decoder,
            pattern,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.decoder.len()
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.encoder.get(token).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let mut ids = Vec::new();
        for piece in self.pattern.find_iter(text) {
            let piece = piece.map_err(|e| Error::Tokenizer {
                path: "<pattern>".into(),
                reason: e.to_string(),
            })?;
            ids.extend(self.encode_word(piece.as_str())?);
        }
        Ok(ids)
    }

    fn encode_word(&self, word: &str) -> Result<Vec<u32>> {
        if let Some(hit) = self.cache.lock().expect("tokenizer cache").get(word) {
            return Ok(hit.clone());
        }
        let mut parts: Vec<String> = word
            .bytes()
            .map(|b| self.byte_encoder[b as usize].to_string())
            .collect();
        while parts.len() > 1 {
            let best = parts
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    self.merge_ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&r| (r, i))
                })
                .min();
            let Some((rank, _)) = best else { break };
            let mut merged = Vec::with_capacity(parts.len());
            let mut i = 0;
            while i < parts.len() {
                if i + 1 < parts.len()
                    && self.merge_ranks.get(&(parts[i].clone(), parts[i + 1].clone())) == Some(&rank)
                {
                    merged.push(format!("{}{}", parts[i], parts[i + 1]));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut parts[i]));
                    i += 1;
                }
            }
            parts = merged;
        }
        let ids = parts
            .iter()
            .map(|p| {
                self.encoder.get(p).copied().ok_or_else(|| Error::Tokenizer {
                    path: "<vocab>".into(),
                    reason: format!("no vocabulary entry for merged symbol {p:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cache = self.cache.lock().expect("tokenizer cache");
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(word.to_string(), ids.clone());
        Ok(ids)
    }

    /// Surface form of a single token, lossy for partial UTF-8 sequences.
    pub fn token_str(&self, id: u32) -> Result<String> {
        self.decode(&[id])
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            let tok = self.decoder.get(id as usize).ok_or(Error::TokenOutOfRange {
                id,
                vocab: self.decoder.len(),
            })?;
            for c in tok.chars() {
                bytes.push(*self.byte_decoder.get(&c).ok_or_else(|| Error::Tokenizer {
                    path: "<vocab>".into(),
                    reason: format!("token {id} contains unmapped character {c:?}"),
                })?);
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Gpt2Tokenizer {
        let table = bytes_to_unicode();
        let mut encoder: HashMap<String, u32> = HashMap::new();
        for (b, c) in table.iter().enumerate() {
            encoder.insert(c.to_string(), b as u32);
        }
        let extra = ["he", "ll", "hell", "hello", "Ġw", "Ġwo"];
        for (i, t) in extra.iter().enumerate() {
            encoder.insert(t.to_string(), 256 + i as u32);
        }
        let merges = "#version: 0.2\nh e\nl l\nhe ll\nhell o\nĠ w\nĠw o\n";
        Gpt2Tokenizer::from_parts(encoder, merges).unwrap()
    }

    #[test]
    fn byte_table_is_a_bijection() {
        let t = bytes_to_unicode();
        let mut seen: Vec<char> = t.to_vec();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 256);
        assert_eq!(t[b' ' as usize], 'Ġ');
        assert_eq!(t[b'A' as usize], 'A');
    }

    #[test]
    fn merges_apply_by_rank() {
        let tok = tiny();
        let ids = tok.encode("hello world").unwrap();
        assert_eq!(ids[0], tok.token_id("hello").unwrap());
        assert_eq!(ids[1], tok.token_id("Ġwo").unwrap());
        assert_eq!(ids.len(), 5);
        assert_eq!(tok.decode(&ids).unwrap(), "hello world");
    }

    #[test]
    fn unknown_id_is_an_error() {
        let tok = tiny();
        assert!(matches!(
            tok.decode(&[99_999]),
            Err(Error::TokenOutOfRange { id: 99_999, .. })
        ));
    }

    #[test]
    fn malformed_merges_rejected() {
        let err = Gpt2Tokenizer::from_parts(HashMap::new(), "a b c\n").unwrap_err();
        assert!(err.contains("line 1"));
    }
}
