//! English lexicon used for out-of-vocabulary checks.
//!
//! The bundled list is the lower-cased alphabetic GCIDE word list shipped by
//! the `english-words` package (MIT, see `data/english_lexicon.LICENSE`),
//! 114k entries, stored gzipped.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;
use std::sync::OnceLock;

use flate2::read::GzDecoder;

static BUNDLED_GZ: &[u8] = include_bytes!("../../data/english_lexicon.txt.gz");

#[derive(Debug, Clone)]
pub struct Lexicon {
    words: HashSet<String>,
}

impl Lexicon {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Lexicon {
            words: words
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    /// Loads a newline-separated word list (plain or `.gz`).
    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        let raw = std::fs::read(path)?;
        let text = if path.extension().is_some_and(|e| e == "gz") {
            let mut s = String::new();
            GzDecoder::new(raw.as_slice()).read_to_string(&mut s)?;
            s
        } else {
            String::from_utf8(raw).map_err(std::io::Error::other)?
        };
        Ok(Self::from_words(text.lines()))
    }

    pub fn bundled() -> &'static Lexicon {
        static LEX: OnceLock<Lexicon> = OnceLock::new();
        LEX.get_or_init(|| {
            let mut s = String::new();
            GzDecoder::new(BUNDLED_GZ)
                .read_to_string(&mut s)
                .expect("bundled lexicon is valid gzip");
            Lexicon::from_words(s.lines())
        })
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}
