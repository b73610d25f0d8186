//! Frame matrices, alphabets and corpus manifests, plus their on-disk formats.
//!
//! A frame matrix is stored as an `FPM1` file: the 4-byte magic `FPM1`, the
//! frame count `T` and symbol count `|V|` as little-endian `u32`, then `T * |V|`
//! little-endian `f32` natural-log probabilities in row-major order.
//!
//! Alphabets are JSON objects `{"symbols": [...], "blank_index": n}`. Manifests
//! are JSON lines: a header object carrying `alphabet_ref` and `iteration`,
//! followed by one [`LineRecord`] per line.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FPM1_MAGIC: [u8; 4] = *b"FPM1";
const HEADER_LEN: usize = 12;
/// Maximum deviation of `sum(exp(row))` from one accepted on load.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Ordered character vocabulary with one distinguished blank symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<char>,
    blank: usize,
    index: HashMap<char, usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlphabetFile {
    symbols: Vec<String>,
    blank_index: usize,
}

impl Alphabet {
    pub fn new(symbols: Vec<char>, blank_index: usize) -> Result<Self> {
        if symbols.len() < 2 {
            return Err(Error::InvalidAlphabet(format!(
                "need a blank and at least one character, got {} symbols",
                symbols.len()
            )));
        }
        if blank_index >= symbols.len() {
            return Err(Error::InvalidAlphabet(format!(
                "blank index {blank_index} out of range for {} symbols",
                symbols.len()
            )));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, &c) in symbols.iter().enumerate() {
            if index.insert(c, i).is_some() {
                return Err(Error::InvalidAlphabet(format!("duplicate symbol {c:?}")));
            }
        }
        Ok(Self {
            symbols,
            blank: blank_index,
            index,
        })
    }

    /// Blank at index 0 followed by `chars`.
    pub fn with_blank(blank: char, chars: &str) -> Result<Self> {
        let symbols = std::iter::once(blank).chain(chars.chars()).collect();
        Self::new(symbols, 0)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn blank(&self) -> usize {
        self.blank
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn symbol(&self, index: usize) -> char {
        self.symbols[index]
    }

    /// Non-blank characters in alphabet order.
    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        self.symbols
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != self.blank)
            .map(|(_, &c)| c)
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    /// Maps a transcript to symbol indices. The blank character is rejected.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| match self.index_of(c) {
                Some(i) if i != self.blank => Ok(i),
                _ => Err(Error::UnknownChar(c)),
            })
            .collect()
    }

    pub fn decode(&self, labels: &[usize]) -> String {
        labels.iter().map(|&i| self.symbols[i]).collect()
    }

    pub fn to_json(&self) -> String {
        let file = AlphabetFile {
            symbols: self.symbols.iter().map(|c| c.to_string()).collect(),
            blank_index: self.blank,
        };
        serde_json::to_string(&file).expect("alphabet serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: AlphabetFile = serde_json::from_str(text)?;
        let mut symbols = Vec::with_capacity(file.symbols.len());
        for s in &file.symbols {
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => symbols.push(c),
                _ => {
                    return Err(Error::InvalidAlphabet(format!(
                        "symbol {s:?} is not a single character"
                    )))
                }
            }
        }
        Self::new(symbols, file.blank_index)
    }

    /// Stable 64-bit fingerprint of the symbol inventory.
    pub fn fingerprint(&self) -> u64 {
        crate::seed::fnv1a(self.to_json().as_bytes())
    }
}

pub fn read_alphabet(path: impl AsRef<Path>) -> Result<Alphabet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Alphabet::from_json(&text)
}

pub fn write_alphabet(alphabet: &Alphabet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, alphabet.to_json() + "\n").map_err(|e| Error::io(path, e))
}

/// `T x |V|` matrix of per-frame natural-log probabilities for one text line.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    line_id: String,
    frames: usize,
    symbols: usize,
    log_probs: Vec<f32>,
}

impl FrameMatrix {
    /// Validates shape, finiteness, sign and per-row normalization.
    pub fn new(
        line_id: impl Into<String>,
        frames: usize,
        symbols: usize,
        log_probs: Vec<f32>,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(Error::EmptyMatrix);
        }
        if symbols == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        if log_probs.len() != frames * symbols {
            return Err(Error::Truncated {
                expected: frames * symbols * 4,
                found: log_probs.len() * 4,
            });
        }
        for (t, row) in log_probs.chunks_exact(symbols).enumerate() {
            let mut sum = 0.0f64;
            for (k, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        frame: t,
                        symbol: k,
                    });
                }
                if v > 0.0 {
                    return Err(Error::PositiveLogProb {
                        frame: t,
                        symbol: k,
                    });
                }
                sum += f64::from(v).exp();
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Unnormalized { frame: t, sum });
            }
        }
        Ok(Self {
            line_id: line_id.into(),
            frames,
            symbols,
            log_probs,
        })
    }

    /// Builds a matrix from linear probabilities; each row must already sum to one.
    pub fn from_probs(line_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let symbols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * symbols);
        for row in rows {
            if row.len() != symbols {
                return Err(Error::DimensionMismatch {
                    expected: symbols,
                    found: row.len(),
                });
            }
            data.extend(row.iter().map(|p| p.ln() as f32));
        }
        Self::new(line_id, rows.len(), symbols, data)
    }

    pub fn line_id(&self) -> &str {
        &self.line_id
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn num_symbols(&self) -> usize {
        self.symbols
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.log_probs[t * self.symbols..(t + 1) * self.symbols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.log_probs.chunks_exact(self.symbols)
    }

    #[inline]
    pub fn log_prob(&self, t: usize, k: usize) -> f64 {
        f64::from(self.log_probs[t * self.symbols + k])
    }

    pub fn raw(&self) -> &[f32] {
        &self.log_probs
    }

    /// Most probable symbol of frame `t` and its probability; ties go to the lowest index.
    pub fn argmax(&self, t: usize) -> (usize, f64) {
        let row = self.row(t);
        let mut best = 0;
        for (k, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = k;
            }
        }
        (best, f64::from(row[best]).exp())
    }

    /// Per-frame maximum probabilities `m_t`.
    pub fn maxima(&self) -> Vec<f64> {
        (0..self.frames).map(|t| self.argmax(t).1).collect()
    }

    pub fn check_alphabet(&self, alphabet: &Alphabet) -> Result<()> {
        if self.symbols != alphabet.len() {
            return Err(Error::DimensionMismatch {
                expected: alphabet.len(),
                found: self.symbols,
            });
        }
        Ok(())
    }

    pub fn to_fpm1_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.log_probs.len());
        out.extend_from_slice(&FPM1_MAGIC);
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.symbols as u32).to_le_bytes());
        for v in &self.log_probs {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_fpm1_bytes(
        line_id: impl Into<String>,
        bytes: &[u8],
        alphabet: &Alphabet,
    ) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != FPM1_MAGIC {
            return Err(Error::BadMagic {
                found: magic,
                expected: FPM1_MAGIC,
            });
        }
        let frames = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let symbols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if symbols != alphabet.len() {
            return Err(Error::DimensionMismatch {
                expected: alphabet.len(),
                found: symbols,
            });
        }
        let payload = &bytes[HEADER_LEN..];
        let expected = frames * symbols * 4;
        if payload.len() != expected {
            return Err(Error::Truncated {
                expected,
                found: payload.len(),
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(line_id, frames, symbols, data)
    }
}

/// Reads an `FPM1` file; the line id is taken from the file stem.
pub fn read_frame_matrix(path: impl AsRef<Path>, alphabet: &Alphabet) -> Result<FrameMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let line_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FrameMatrix::from_fpm1_bytes(line_id, &bytes, alphabet)
}

pub fn write_frame_matrix(m: &FrameMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, m.to_fpm1_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Related,
    TargetAnnotated,
    TargetUnannotated,
    MachineAnnotated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineRecord {
    pub line_id: String,
    pub frames_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cer: Option<f64>,
    pub origin: Origin,
    /// Repetition count for downstream trainers; absent means one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<u32>,
}

impl LineRecord {
    pub fn new(
        line_id: impl Into<String>,
        frames_path: impl Into<PathBuf>,
        origin: Origin,
    ) -> Self {
        Self {
            line_id: line_id.into(),
            frames_path: frames_path.into(),
            transcript: None,
            hypothesis: None,
            confidence: None,
            cer: None,
            origin,
            weight: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: &str| Error::InvalidRecord {
            line_id: self.line_id.clone(),
            message: message.to_string(),
        };
        if let Some(c) = self.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(bad(&format!("confidence {c} outside [0, 1]")));
            }
        }
        if let Some(c) = self.cer {
            if c.is_nan() || c < 0.0 {
                return Err(bad(&format!("cer {c} is negative")));
            }
        }
        if self.origin == Origin::MachineAnnotated
            && (self.hypothesis.is_none() || self.confidence.is_none())
        {
            return Err(bad(
                "machine annotated records need a hypothesis and a confidence",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestHeader {
    alphabet_ref: PathBuf,
    iteration: u32,
}

/// Ordered collection of line records with corpus-level metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub records: Vec<LineRecord>,
    pub alphabet_ref: PathBuf,
    pub iteration: u32,
}

impl CorpusManifest {
    pub fn new(alphabet_ref: impl Into<PathBuf>, iteration: u32) -> Self {
        Self {
            records: Vec::new(),
            alphabet_ref: alphabet_ref.into(),
            iteration,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if !seen.insert(r.line_id.as_str()) {
                return Err(Error::DuplicateLineId(r.line_id.clone()));
            }
            r.validate()?;
        }
        Ok(())
    }

    /// Joins relative frame and alphabet paths onto `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if self.alphabet_ref.is_relative() {
            self.alphabet_ref = base.join(&self.alphabet_ref);
        }
        for r in &mut self.records {
            if r.frames_path.is_relative() {
                r.frames_path = base.join(&r.frames_path);
            }
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = ManifestHeader {
            alphabet_ref: self.alphabet_ref.clone(),
            iteration: self.iteration,
        };
        let io = |e| Error::io("<manifest>", e);
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n").map_err(io)?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(l) if l.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let malformed = |line, e: &dyn std::fmt::Display| Error::MalformedManifest {
            line,
            message: e.to_string(),
        };
        let (line, first) = lines.next().ok_or(Error::Empty("manifest header"))?;
        let first = first.map_err(|e| Error::io("<manifest>", e))?;
        let header: ManifestHeader =
            serde_json::from_str(&first).map_err(|e| malformed(line, &e))?;
        let mut manifest = Self::new(header.alphabet_ref, header.iteration);
        for (line, text) in lines {
            let text = text.map_err(|e| Error::io("<manifest>", e))?;
            let record: LineRecord =
                serde_json::from_str(&text).map_err(|e| malformed(line, &e))?;
            manifest.records.push(record);
        }
        manifest.validate()?;
        Ok(manifest)
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    CorpusManifest::read_from(BufReader::new(file))
}

pub fn write_manifest(manifest: &CorpusManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    manifest
        .write_to(BufWriter::new(file))
        .map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
}

/// Reads a manifest and makes its relative paths absolute against the
/// manifest's own directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let mut manifest = read_manifest(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let dir = fs::canonicalize(if dir.as_os_str().is_empty() {
        Path::new(".")
    } else {
        dir
    })
    .map_err(|e| Error::io(dir, e))?;
    manifest.resolve_paths(&dir);
    Ok(manifest)
}

pub fn frames_path_for(dir: &Path, line_id: &str) -> PathBuf {
    dir.join(format!("{line_id}.fpm"))
}
