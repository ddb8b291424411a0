//! Named random streams derived from one master seed.
//!
//! Each stream is the ChaCha8 generator seeded with the master seed and
//! switched to a fixed stream id, so drawing from one never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Path,
    Data,
    Search,
}

impl Stream {
    pub const ALL: [Stream; 4] = [Stream::Init, Stream::Path, Stream::Data, Stream::Search];

    pub fn label(self) -> &'static str {
        match self {
            Stream::Init => "init",
            Stream::Path => "path",
            Stream::Data => "data",
            Stream::Search => "search",
        }
    }

    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Path => 2,
            Stream::Data => 3,
            Stream::Search => 4,
        }
    }
}

pub fn stream_rng(master_seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream.id());
    rng
}

/// Exact generator position as seven 64-bit words: seed (4), stream, word position (2).
pub fn rng_to_words(rng: &ChaCha8Rng) -> [u64; 7] {
    let seed = rng.get_seed();
    let mut out = [0u64; 7];
    for (i, chunk) in seed.chunks(8).enumerate() {
        out[i] = u64::from_le_bytes(chunk.try_into().unwrap());
    }
    out[4] = rng.get_stream();
    let pos = rng.get_word_pos();
    out[5] = pos as u64;
    out[6] = (pos >> 64) as u64;
    out
}

pub fn rng_from_words(words: &[u64]) -> Result<ChaCha8Rng> {
    if words.len() != 7 {
        return Err(Error::config(format!(
            "rng state needs 7 words, got {}",
            words.len()
        )));
    }
    let mut seed = [0u8; 32];
    for (i, w) in words[..4].iter().enumerate() {
        seed[i * 8..(i + 1) * 8].copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(words[4]);
    rng.set_word_pos(words[5] as u128 | ((words[6] as u128) << 64));
    Ok(rng)
}
