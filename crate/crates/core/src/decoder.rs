//! CTC prefix-search beam decoding with shallow language-model fusion.
//!
//! A prefix `a` is ranked by `ln S_O(a) + alpha * ln S_L(a) + beta * |a|`, where
//! `S_O` is the CTC probability of all frame paths that collapse to `a` so far
//! (tracked separately for paths ending in blank and in the last character)
//! and `S_L` is accumulated one character at a time as prefixes are extended.
//! After every frame the `K` best prefixes by that total survive.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{Alphabet, FrameMatrix};
use crate::lm::CharLm;
use crate::logmath::log_add;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    /// Language-model weight.
    pub alpha: f64,
    /// Per-character insertion bonus.
    pub beta: f64,
    /// Maximum number of active prefixes.
    pub beam_width: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 1.0,
            beam_width: 16,
        }
    }
}

impl DecodeParams {
    /// Pure optical scoring, as used by the posterior confidence.
    pub fn optical(beam_width: usize) -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            beam_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::InvalidParam("beam width must be at least 1".into()));
        }
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::InvalidParam(format!(
                "LM weight {} must be finite and non-negative",
                self.alpha
            )));
        }
        if !self.beta.is_finite() {
            return Err(Error::InvalidParam("insertion bonus must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub text: String,
    pub log_p_blank: f64,
    pub log_p_nonblank: f64,
    /// `ln S_O`, the combined blank and non-blank mass.
    pub optical_log_score: f64,
    /// `ln S_L` including the end-of-line event; zero when decoding without an LM.
    pub lm_log_score: f64,
    /// Length in characters.
    pub length: usize,
}

pub fn total_score(h: &Hypothesis, params: &DecodeParams) -> f64 {
    h.optical_log_score + params.alpha * h.lm_log_score + params.beta * h.length as f64
}

struct Node {
    parent: u32,
    label: u32,
    len: u32,
    lm_score: f64,
    lm_next: Option<Arc<[f64]>>,
}

const ROOT: u32 = 0;

/// Prefix trie shared by all frames of one decode.
struct Trie {
    nodes: Vec<Node>,
    children: HashMap<(u32, u32), u32>,
}

impl Trie {
    fn new() -> Self {
        Self {
            nodes: vec![Node {
                parent: ROOT,
                label: u32::MAX,
                len: 0,
                lm_score: 0.0,
                lm_next: None,
            }],
            children: HashMap::new(),
        }
    }

    fn child(&mut self, parent: u32, label: usize, lm_step: f64) -> u32 {
        let next_id = self.nodes.len() as u32;
        let id = *self
            .children
            .entry((parent, label as u32))
            .or_insert(next_id);
        if id == next_id {
            let p = &self.nodes[parent as usize];
            let node = Node {
                parent,
                label: label as u32,
                len: p.len + 1,
                lm_score: p.lm_score + lm_step,
                lm_next: None,
            };
            self.nodes.push(node);
        }
        id
    }

    fn labels(&self, mut id: u32) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes[id as usize].len as usize);
        while id != ROOT {
            let n = &self.nodes[id as usize];
            out.push(n.label as usize);
            id = n.parent;
        }
        out.reverse();
        out
    }

    fn last(&self, id: u32) -> Option<usize> {
        (id != ROOT).then(|| self.nodes[id as usize].label as usize)
    }
}

/// Reusable decoder bound to an alphabet, an optional LM and parameters.
pub struct PrefixDecoder<'a> {
    alphabet: &'a Alphabet,
    lm: Option<&'a dyn CharLm>,
    params: DecodeParams,
    /// Alphabet index -> index in the LM distribution.
    lm_index: Vec<usize>,
}

impl<'a> PrefixDecoder<'a> {
    pub fn new(
        alphabet: &'a Alphabet,
        lm: Option<&'a dyn CharLm>,
        params: DecodeParams,
    ) -> Result<Self> {
        params.validate()?;
        // The LM is never consulted at alpha = 0.
        let lm = if params.alpha > 0.0 {
            Some(lm.ok_or(Error::MissingLm(params.alpha))?)
        } else {
            None
        };
        let mut lm_index = vec![usize::MAX; alphabet.len()];
        if let Some(lm) = lm {
            let symbols = lm.symbols();
            for (k, &c) in alphabet.symbols().iter().enumerate() {
                if k == alphabet.blank() {
                    continue;
                }
                lm_index[k] = symbols
                    .iter()
                    .position(|&s| s == c)
                    .ok_or(Error::LmVocabulary(c))?;
            }
        }
        Ok(Self {
            alphabet,
            lm,
            params,
            lm_index,
        })
    }

    pub fn params(&self) -> &DecodeParams {
        &self.params
    }

    fn ensure_lm_next(&self, trie: &mut Trie, id: u32) {
        let Some(lm) = self.lm else { return };
        if trie.nodes[id as usize].lm_next.is_none() {
            let history: Vec<char> = trie
                .labels(id)
                .into_iter()
                .map(|k| self.alphabet.symbol(k))
                .collect();
            trie.nodes[id as usize].lm_next = Some(lm.distribution(&history).into());
        }
    }

    fn score(&self, trie: &Trie, id: u32, mass: (f64, f64)) -> f64 {
        let node = &trie.nodes[id as usize];
        let lm = if self.lm.is_some() {
            self.params.alpha * node.lm_score
        } else {
            0.0
        };
        log_add(mass.0, mass.1) + lm + self.params.beta * f64::from(node.len)
    }

    fn text_cmp(&self, trie: &Trie, a: u32, b: u32) -> Ordering {
        let ta = trie.labels(a).into_iter().map(|k| self.alphabet.symbol(k));
        let tb = trie.labels(b).into_iter().map(|k| self.alphabet.symbol(k));
        ta.cmp(tb)
    }

    /// Hypotheses sorted by descending total score, at most `beam_width` of them.
    pub fn decode(&self, m: &FrameMatrix) -> Result<Vec<Hypothesis>> {
        m.check_alphabet(self.alphabet)?;
        let blank = self.alphabet.blank();
        let k_max = self.params.beam_width;
        let mut trie = Trie::new();
        // (node, log p_blank, log p_nonblank)
        let mut beam: Vec<(u32, f64, f64)> = vec![(ROOT, 0.0, f64::NEG_INFINITY)];
        let mut mass: Vec<(f64, f64)> = Vec::new();
        let mut touched: Vec<u32> = Vec::new();

        for t in 0..m.frames() {
            let y_blank = m.log_prob(t, blank);
            for &(id, _, _) in &beam {
                self.ensure_lm_next(&mut trie, id);
            }
            for &(id, pb, pnb) in &beam {
                let p_any = log_add(pb, pnb);
                let last = trie.last(id);
                let mut add = |id: u32, b: f64, nb: f64, mass: &mut Vec<(f64, f64)>| {
                    if mass.len() <= id as usize {
                        mass.resize(id as usize + 1, (f64::NAN, f64::NAN));
                    }
                    let slot = &mut mass[id as usize];
                    if slot.0.is_nan() {
                        *slot = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                        touched.push(id);
                    }
                    slot.0 = log_add(slot.0, b);
                    slot.1 = log_add(slot.1, nb);
                };
                let stay_nb = match last {
                    Some(l) => pnb + m.log_prob(t, l),
                    None => f64::NEG_INFINITY,
                };
                add(id, p_any + y_blank, stay_nb, &mut mass);
                let lm_next = trie.nodes[id as usize].lm_next.clone();
                for k in 0..self.alphabet.len() {
                    if k == blank {
                        continue;
                    }
                    let y = m.log_prob(t, k);
                    let from = if Some(k) == last { pb } else { p_any };
                    if from == f64::NEG_INFINITY {
                        continue;
                    }
                    let step = lm_next.as_ref().map_or(0.0, |d| d[self.lm_index[k]]);
                    let child = trie.child(id, k, step);
                    add(child, f64::NEG_INFINITY, from + y, &mut mass);
                }
            }
            let mut ranked: Vec<(u32, f64)> = touched
                .iter()
                .filter(|&&id| {
                    let (b, nb) = mass[id as usize];
                    log_add(b, nb) > f64::NEG_INFINITY
                })
                .map(|&id| (id, self.score(&trie, id, mass[id as usize])))
                .collect();
            let cmp = |a: &(u32, f64), b: &(u32, f64)| {
                b.1.partial_cmp(&a.1)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| self.text_cmp(&trie, a.0, b.0))
            };
            if ranked.len() > k_max {
                ranked.select_nth_unstable_by(k_max - 1, cmp);
                ranked.truncate(k_max);
            }
            ranked.sort_by(cmp);
            beam = ranked
                .iter()
                .map(|&(id, _)| {
                    let (b, nb) = mass[id as usize];
                    (id, b, nb)
                })
                .collect();
            for id in touched.drain(..) {
                mass[id as usize] = (f64::NAN, f64::NAN);
            }
        }

        let mut out: Vec<(u32, Hypothesis, f64)> = Vec::with_capacity(beam.len());
        for &(id, pb, pnb) in &beam {
            self.ensure_lm_next(&mut trie, id);
            let node = &trie.nodes[id as usize];
            let lm_log_score = match (&node.lm_next, self.lm) {
                (Some(next), Some(lm)) => node.lm_score + next[lm.symbols().len()],
                _ => 0.0,
            };
            let labels = trie.labels(id);
            let h = Hypothesis {
                text: self.alphabet.decode(&labels),
                log_p_blank: pb,
                log_p_nonblank: pnb,
                optical_log_score: log_add(pb, pnb),
                lm_log_score,
                length: labels.len(),
            };
            let s = total_score(&h, &self.params);
            out.push((id, h, s));
        }
        out.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.1.text.cmp(&b.1.text))
        });
        Ok(out.into_iter().map(|(_, h, _)| h).collect())
    }
}

/// Decodes one frame matrix; see [`PrefixDecoder`].
pub fn prefix_search_decode(
    m: &FrameMatrix,
    alphabet: &Alphabet,
    lm: Option<&dyn CharLm>,
    params: DecodeParams,
) -> Result<Vec<Hypothesis>> {
    PrefixDecoder::new(alphabet, lm, params)?.decode(m)
}
