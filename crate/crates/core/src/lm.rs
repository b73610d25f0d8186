//! Autoregressive character language models.
//!
//! [`NGramLm`] keeps one count table per adaptation stage (related domain,
//! machine annotated, target domain). Each stage is smoothed with interpolated
//! Witten-Bell down to a uniform distribution, and the stages are combined by a
//! linear mixture whose weights are tuned on validation text.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::Alphabet;

/// Next-symbol event predicted by a language model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmSymbol {
    Char(char),
    Eol,
}

/// Character language model scoring the next symbol given a history.
pub trait CharLm: Send + Sync {
    /// Predicted characters; the end-of-line event follows them at index `symbols().len()`.
    fn symbols(&self) -> &[char];

    /// Log-probabilities of every symbol and then end-of-line, given `history`.
    fn distribution(&self, history: &[char]) -> Vec<f64>;

    fn log_prob(&self, history: &[char], next: LmSymbol) -> f64 {
        let dist = self.distribution(history);
        match next {
            LmSymbol::Eol => dist[self.symbols().len()],
            LmSymbol::Char(c) => self
                .symbols()
                .iter()
                .position(|&s| s == c)
                .map_or(f64::NEG_INFINITY, |i| dist[i]),
        }
    }
}

/// `ln S_L(line)` without the end-of-line event.
pub fn sequence_log_prob(lm: &dyn CharLm, line: &str) -> f64 {
    let chars: Vec<char> = line.chars().collect();
    (0..chars.len())
        .map(|i| lm.log_prob(&chars[..i], LmSymbol::Char(chars[i])))
        .sum()
}

/// `ln P(EOL | line)`, added once a hypothesis is complete.
pub fn finalize_log_prob(lm: &dyn CharLm, line: &str) -> f64 {
    let chars: Vec<char> = line.chars().collect();
    lm.log_prob(&chars, LmSymbol::Eol)
}

/// Per-symbol perplexity of `lines`, end-of-line events included.
pub fn perplexity(lm: &dyn CharLm, lines: &[String]) -> f64 {
    let mut total = 0.0;
    let mut events = 0usize;
    for line in lines {
        total += sequence_log_prob(lm, line) + finalize_log_prob(lm, line);
        events += line.chars().count() + 1;
    }
    (-total / events.max(1) as f64).exp()
}

/// Same probability for every symbol and end-of-line.
#[derive(Debug, Clone)]
pub struct UniformLm {
    symbols: Vec<char>,
}

impl UniformLm {
    pub fn new(alphabet: &Alphabet) -> Self {
        Self {
            symbols: alphabet.chars().collect(),
        }
    }
}

impl CharLm for UniformLm {
    fn symbols(&self) -> &[char] {
        &self.symbols
    }

    fn distribution(&self, _history: &[char]) -> Vec<f64> {
        let n = self.symbols.len() + 1;
        vec![-(n as f64).ln(); n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Related,
    MachineAnnotated,
    Target,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Related, Stage::MachineAnnotated, Stage::Target];

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: BTreeMap<u32, u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct CountTable {
    contexts: BTreeMap<Vec<u32>, ContextCounts>,
}

impl CountTable {
    fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    fn add(&mut self, context: &[u32], next: u32) {
        let cc = self.contexts.entry(context.to_vec()).or_default();
        cc.total += 1;
        *cc.next.entry(next).or_insert(0) += 1;
    }
}

pub const DEFAULT_ORDER: usize = 6;

/// Character n-gram model with staged count tables.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramLm {
    order: usize,
    symbols: Vec<char>,
    index: HashMap<char, u32>,
    stages: [CountTable; 3],
    weights: [f64; 3],
}

impl NGramLm {
    /// Untrained model over the alphabet's non-blank characters.
    pub fn new(alphabet: &Alphabet, order: usize) -> Result<Self> {
        Self::with_symbols(alphabet.chars().collect(), order)
    }

    fn with_symbols(symbols: Vec<char>, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParam(
                "n-gram order must be at least 1".into(),
            ));
        }
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i as u32))
            .collect();
        Ok(Self {
            order,
            symbols,
            index,
            stages: Default::default(),
            weights: [1.0 / 3.0; 3],
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn stage_weights(&self) -> [f64; 3] {
        self.weights
    }

    pub fn is_populated(&self, stage: Stage) -> bool {
        !self.stages[stage.slot()].is_empty()
    }

    pub fn set_stage_weights(&mut self, weights: [f64; 3]) -> Result<()> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| w.is_nan() || *w < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParam(format!(
                "stage weights {weights:?} must be non-negative and sum to 1"
            )));
        }
        self.weights = weights;
        Ok(())
    }

    fn eol(&self) -> u32 {
        self.symbols.len() as u32
    }

    fn bol(&self) -> u32 {
        self.symbols.len() as u32 + 1
    }

    fn unknown(&self) -> u32 {
        self.symbols.len() as u32 + 2
    }

    fn encode_line(&self, line: &str) -> Result<Vec<u32>> {
        line.chars()
            .map(|c| self.index.get(&c).copied().ok_or(Error::UnknownChar(c)))
            .collect()
    }

    /// Last `order - 1` tokens of the BOL-padded history.
    fn context(&self, history: &[char]) -> Vec<u32> {
        let width = self.order - 1;
        let mut ctx = vec![self.bol(); width.saturating_sub(history.len())];
        let start = history.len().saturating_sub(width);
        ctx.extend(
            history[start..]
                .iter()
                .map(|c| self.index.get(c).copied().unwrap_or(self.unknown())),
        );
        ctx
    }

    /// Replaces the stage's counts with counts from `corpus`. Stage weights
    /// are reset to a uniform mixture over the populated stages.
    pub fn train_stage<S: AsRef<str>>(&mut self, corpus: &[S], stage: Stage) -> Result<()> {
        let width = self.order - 1;
        let mut table = CountTable::default();
        for line in corpus {
            let tokens = self.encode_line(line.as_ref())?;
            let mut padded = vec![self.bol(); width];
            padded.extend_from_slice(&tokens);
            let eol = self.eol();
            for (pos, &next) in tokens.iter().chain(std::iter::once(&eol)).enumerate() {
                let full = &padded[pos..pos + width];
                for len in 0..=width {
                    table.add(&full[width - len..], next);
                }
            }
        }
        self.stages[stage.slot()] = table;
        self.reset_weights();
        Ok(())
    }

    fn reset_weights(&mut self) {
        let populated: Vec<bool> = self.stages.iter().map(|t| !t.is_empty()).collect();
        let n = populated.iter().filter(|p| **p).count();
        self.weights = if n == 0 {
            [1.0 / 3.0; 3]
        } else {
            let mut w = [0.0; 3];
            for (slot, p) in populated.iter().enumerate() {
                if *p {
                    w[slot] = 1.0 / n as f64;
                }
            }
            w
        };
    }

    /// Raw count of `next` after `context` (given as characters, BOL written as `None`).
    pub fn count(&self, stage: Stage, context: &[Option<char>], next: LmSymbol) -> u64 {
        let ctx: Option<Vec<u32>> = context
            .iter()
            .map(|c| match c {
                None => Some(self.bol()),
                Some(c) => self.index.get(c).copied(),
            })
            .collect();
        let next = match next {
            LmSymbol::Eol => Some(self.eol()),
            LmSymbol::Char(c) => self.index.get(&c).copied(),
        };
        match (ctx, next) {
            (Some(ctx), Some(next)) => self.stages[stage.slot()]
                .contexts
                .get(&ctx)
                .and_then(|cc| cc.next.get(&next).copied())
                .unwrap_or(0),
            _ => 0,
        }
    }

    fn stage_distribution(&self, table: &CountTable, context: &[u32]) -> Vec<f64> {
        let n = self.symbols.len() + 1;
        let mut p = vec![1.0 / n as f64; n];
        for len in 0..=context.len() {
            if let Some(cc) = table.contexts.get(&context[context.len() - len..]) {
                let types = cc.next.len() as f64;
                let denom = cc.total as f64 + types;
                for (w, pw) in p.iter_mut().enumerate() {
                    let c = cc.next.get(&(w as u32)).copied().unwrap_or(0) as f64;
                    *pw = (c + types * *pw) / denom;
                }
            }
        }
        p
    }

    fn stage_prob(&self, table: &CountTable, context: &[u32], w: u32) -> f64 {
        let mut p = 1.0 / (self.symbols.len() + 1) as f64;
        for len in 0..=context.len() {
            if let Some(cc) = table.contexts.get(&context[context.len() - len..]) {
                let types = cc.next.len() as f64;
                let c = cc.next.get(&w).copied().unwrap_or(0) as f64;
                p = (c + types * p) / (cc.total as f64 + types);
            }
        }
        p
    }

    fn mixed_prob(&self, context: &[u32], w: u32) -> f64 {
        self.stages
            .iter()
            .zip(self.weights)
            .filter(|(_, weight)| *weight > 0.0)
            .map(|(table, weight)| weight * self.stage_prob(table, context, w))
            .sum()
    }

    fn token(&self, next: LmSymbol) -> Option<u32> {
        match next {
            LmSymbol::Eol => Some(self.eol()),
            LmSymbol::Char(c) => self.index.get(&c).copied(),
        }
    }

    /// Picks the stage weights on the simplex grid with step 0.1 that minimize
    /// validation perplexity. Unpopulated stages keep weight zero; ties go to
    /// the larger target weight, then the larger machine-annotated weight.
    pub fn tune_stage_weights<S: AsRef<str>>(&mut self, validation: &[S]) -> Result<[f64; 3]> {
        if validation.is_empty() {
            return Err(Error::Empty("validation set"));
        }
        let populated: Vec<bool> = self.stages.iter().map(|t| !t.is_empty()).collect();
        if !populated.iter().any(|p| *p) {
            return Err(Error::Empty("language model has no trained stage"));
        }
        // Per event, the probability under each stage.
        let mut events: Vec<[f64; 3]> = Vec::new();
        for line in validation {
            let chars: Vec<char> = line.as_ref().chars().collect();
            for i in 0..=chars.len() {
                let w = match chars.get(i) {
                    None => self.eol(),
                    Some(&c) => self.index.get(&c).copied().ok_or(Error::UnknownChar(c))?,
                };
                let ctx = self.context(&chars[..i]);
                let mut probs = [0.0; 3];
                for (slot, table) in self.stages.iter().enumerate() {
                    probs[slot] = self.stage_prob(table, &ctx, w);
                }
                events.push(probs);
            }
        }
        let mut best: Option<(f64, [f64; 3])> = None;
        for a in 0..=10u32 {
            for b in 0..=10u32 {
                for c in 0..=10u32 {
                    let raw = [a, b, c];
                    let sum = a + b + c;
                    if sum == 0 || raw.iter().zip(&populated).any(|(r, p)| *r > 0 && !p) {
                        continue;
                    }
                    let w = raw.map(|r| f64::from(r) / f64::from(sum));
                    let nll: f64 = -events
                        .iter()
                        .map(|p| (w[0] * p[0] + w[1] * p[1] + w[2] * p[2]).ln())
                        .sum::<f64>()
                        / events.len() as f64;
                    let better = match best {
                        None => true,
                        Some((best_nll, bw)) => {
                            let tol = 1e-12 * best_nll.abs().max(1.0);
                            if nll < best_nll - tol {
                                true
                            } else if nll <= best_nll + tol {
                                (w[2], w[1]) > (bw[2], bw[1])
                            } else {
                                false
                            }
                        }
                    };
                    if better {
                        best = Some((nll, w));
                    }
                }
            }
        }
        let (_, weights) = best.expect("grid has a populated point");
        self.weights = weights;
        Ok(weights)
    }

    /// Fingerprint of the predicted character inventory.
    pub fn vocabulary_fingerprint(&self) -> u64 {
        let text: String = self.symbols.iter().collect();
        crate::seed::fnv1a(text.as_bytes())
    }

    pub fn check_alphabet(&self, alphabet: &Alphabet) -> Result<()> {
        for c in alphabet.chars() {
            if !self.index.contains_key(&c) {
                return Err(Error::LmVocabulary(c));
            }
        }
        Ok(())
    }
}

impl CharLm for NGramLm {
    fn symbols(&self) -> &[char] {
        &self.symbols
    }

    fn distribution(&self, history: &[char]) -> Vec<f64> {
        let ctx = self.context(history);
        let n = self.symbols.len() + 1;
        let mut mixed = vec![0.0; n];
        for (table, weight) in self.stages.iter().zip(self.weights) {
            if weight > 0.0 {
                for (m, p) in mixed.iter_mut().zip(self.stage_distribution(table, &ctx)) {
                    *m += weight * p;
                }
            }
        }
        mixed.into_iter().map(f64::ln).collect()
    }

    fn log_prob(&self, history: &[char], next: LmSymbol) -> f64 {
        match self.token(next) {
            Some(w) => self.mixed_prob(&self.context(history), w).ln(),
            None => f64::NEG_INFINITY,
        }
    }
}

const LM_MAGIC: &[u8; 4] = b"ATLM";
const LM_VERSION: u32 = 1;

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::MalformedLm("unexpected end of file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl NGramLm {
    /// Versioned little-endian binary encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(LM_MAGIC);
        put_u32(&mut out, LM_VERSION);
        put_u32(&mut out, self.order as u32);
        out.extend_from_slice(&self.vocabulary_fingerprint().to_le_bytes());
        put_u32(&mut out, self.symbols.len() as u32);
        for &c in &self.symbols {
            put_u32(&mut out, c as u32);
        }
        for w in self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for table in &self.stages {
            put_u32(&mut out, table.contexts.len() as u32);
            for (ctx, cc) in &table.contexts {
                put_u32(&mut out, ctx.len() as u32);
                for &t in ctx {
                    put_u32(&mut out, t);
                }
                put_u32(&mut out, cc.next.len() as u32);
                for (&w, &n) in &cc.next {
                    put_u32(&mut out, w);
                    out.extend_from_slice(&n.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != LM_MAGIC {
            return Err(Error::MalformedLm("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != LM_VERSION {
            return Err(Error::MalformedLm(format!("unsupported version {version}")));
        }
        let order = cur.u32()? as usize;
        let fingerprint = cur.u64()?;
        let n = cur.u32()? as usize;
        let mut symbols = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let code = cur.u32()?;
            symbols.push(
                char::from_u32(code)
                    .ok_or_else(|| Error::MalformedLm(format!("invalid code point {code}")))?,
            );
        }
        let mut lm = Self::with_symbols(symbols, order)?;
        if lm.vocabulary_fingerprint() != fingerprint {
            return Err(Error::MalformedLm("vocabulary fingerprint mismatch".into()));
        }
        let mut weights = [0.0; 3];
        for w in &mut weights {
            *w = cur.f64()?;
        }
        for slot in 0..3 {
            let contexts = cur.u32()?;
            let mut table = CountTable::default();
            for _ in 0..contexts {
                let len = cur.u32()? as usize;
                let ctx = (0..len).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
                let entries = cur.u32()?;
                let mut cc = ContextCounts::default();
                for _ in 0..entries {
                    let w = cur.u32()?;
                    let count = cur.u64()?;
                    cc.total += count;
                    cc.next.insert(w, count);
                }
                table.contexts.insert(ctx, cc);
            }
            lm.stages[slot] = table;
        }
        if cur.pos != bytes.len() {
            return Err(Error::MalformedLm("trailing bytes".into()));
        }
        lm.set_stage_weights(weights)
            .map_err(|e| Error::MalformedLm(e.to_string()))?;
        Ok(lm)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab() -> Alphabet {
        Alphabet::with_blank('-', "ab").unwrap()
    }

    #[test]
    fn bigram_counts_with_padding() {
        let mut lm = NGramLm::new(&ab(), 2).unwrap();
        lm.train_stage(&["aa"], Stage::Related).unwrap();
        let a = LmSymbol::Char('a');
        assert_eq!(lm.count(Stage::Related, &[Some('a')], a), 1);
        assert_eq!(lm.count(Stage::Related, &[None], a), 1);
        assert_eq!(lm.count(Stage::Related, &[Some('a')], LmSymbol::Eol), 1);
        assert_eq!(lm.count(Stage::Related, &[], a), 2);
    }

    #[test]
    fn witten_bell_hand_computed() {
        // Unigram: c(a)=2, c(EOL)=1, 2 types -> P1(a) = (2 + 2/3) / 5 = 8/15.
        // Context a: c(a)=1, c(EOL)=1 -> P(a|a) = (1 + 2 * 8/15) / 4 = 31/60.
        let mut lm = NGramLm::new(&ab(), 2).unwrap();
        lm.train_stage(&["aa"], Stage::Target).unwrap();
        let p = lm.log_prob(&['a'], LmSymbol::Char('a')).exp();
        assert!((p - 31.0 / 60.0).abs() < 1e-12);
        let p_b = lm.log_prob(&['a'], LmSymbol::Char('b')).exp();
        assert!((p_b - 4.0 / 60.0).abs() < 1e-12);
        let p_eol = lm.log_prob(&['a'], LmSymbol::Eol).exp();
        assert!((p_eol - 25.0 / 60.0).abs() < 1e-12);
    }

    #[test]
    fn untrained_is_uniform() {
        let lm = NGramLm::new(&ab(), 3).unwrap();
        for next in [LmSymbol::Char('a'), LmSymbol::Char('b'), LmSymbol::Eol] {
            assert!((lm.log_prob(&['b'], next) - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_training_char_errors() {
        let mut lm = NGramLm::new(&ab(), 2).unwrap();
        assert!(matches!(
            lm.train_stage(&["abc"], Stage::Related),
            Err(Error::UnknownChar('c'))
        ));
    }

    #[test]
    fn degenerate_mixture_equals_single_stage() {
        let mut mixed = NGramLm::new(&ab(), 3).unwrap();
        mixed.train_stage(&["abab", "ba"], Stage::Related).unwrap();
        mixed.train_stage(&["bbbb"], Stage::Target).unwrap();
        mixed.set_stage_weights([1.0, 0.0, 0.0]).unwrap();
        let mut single = NGramLm::new(&ab(), 3).unwrap();
        single.train_stage(&["abab", "ba"], Stage::Related).unwrap();
        for h in ["", "a", "ab", "bba"] {
            let h: Vec<char> = h.chars().collect();
            assert_eq!(mixed.distribution(&h), single.distribution(&h));
        }
    }

    #[test]
    fn sequence_scores() {
        let lm = UniformLm::new(&ab());
        assert!((sequence_log_prob(&lm, "ab") - 2.0 * (1.0f64 / 3.0).ln()).abs() < 1e-12);
        assert_eq!(sequence_log_prob(&lm, ""), 0.0);
    }

    #[test]
    fn tune_prefers_target_on_ties_and_single_stage() {
        let corpus = ["abba", "ab", "baab"];
        let mut lm = NGramLm::new(&ab(), 2).unwrap();
        for s in Stage::ALL {
            lm.train_stage(&corpus, s).unwrap();
        }
        let w = lm.tune_stage_weights(&["abab"]).unwrap();
        assert_eq!(w, [0.0, 0.0, 1.0]);

        let mut lm = NGramLm::new(&ab(), 2).unwrap();
        lm.train_stage(&corpus, Stage::MachineAnnotated).unwrap();
        assert_eq!(lm.tune_stage_weights(&["ab"]).unwrap(), [0.0, 1.0, 0.0]);

        assert!(matches!(
            lm.tune_stage_weights::<&str>(&[]),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn tune_concentrates_on_matching_stage() {
        // Related text only ever has "ab" bigrams, target only "aa"/"bb".
        let mut lm = NGramLm::new(&ab(), 2).unwrap();
        lm.train_stage(&["abababab"; 20], Stage::Related).unwrap();
        lm.train_stage(&["aaaa", "bbbb", "aabb"], Stage::Target)
            .unwrap();
        let w = lm.tune_stage_weights(&["aaaabbbb", "bbaa"]).unwrap();
        assert!(w[2] >= 0.8, "{w:?}");
    }

    #[test]
    fn binary_round_trip() {
        let mut lm = NGramLm::new(&ab(), 4).unwrap();
        lm.train_stage(&["abba", "b"], Stage::Related).unwrap();
        lm.train_stage(&["aab"], Stage::Target).unwrap();
        lm.set_stage_weights([0.3, 0.0, 0.7]).unwrap();
        let back = NGramLm::from_bytes(&lm.to_bytes()).unwrap();
        assert_eq!(back, lm);
        let mut bytes = lm.to_bytes();
        bytes[4] = 9;
        assert!(NGramLm::from_bytes(&bytes).is_err());
        assert!(NGramLm::from_bytes(&lm.to_bytes()[..20]).is_err());
    }
}
