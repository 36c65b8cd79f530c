//! Domain prompts for each window, a byte-level BPE tokenizer trained on the
//! prompt corpus, and the token embedding with a learned position table.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{DatasetMeta, WindowSample};
use crate::error::{Error, Result};
use crate::numkit::{ParamStore, Scalar, SeededRng, Session, Var};

pub const PREFIX: &str = "text.";

/// Versioned prompt text with `{slot}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub version: u32,
    pub text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            version: 1,
            text: "Turbofan subset {dataset_id}: {n_conditions} operating condition(s) and \
                   {n_fault_modes} fault mode(s). Window of {window_len} cycles. \
                   Per-sensor min/mean/max: {sensor_summary}."
                .into(),
        }
    }
}

impl PromptTemplate {
    /// Substitute every `{name}`; an unknown or unterminated slot is a template error.
    pub fn render(&self, slots: &BTreeMap<&str, String>) -> Result<String> {
        let mut out = String::with_capacity(self.text.len() * 2);
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let close = rest[open..]
                .find('}')
                .ok_or_else(|| Error::Template(format!("unterminated slot in template v{}", self.version)))?;
            let name = &rest[open + 1..open + close];
            let value = slots
                .get(name)
                .ok_or_else(|| Error::Template(format!("slot {{{name}}} has no value")))?;
            out.push_str(value);
            rest = &rest[open + close + 1..];
        }
        out.push_str(rest);
        if out.trim().is_empty() {
            return Err(Error::Template("rendered prompt is empty".into()));
        }
        Ok(out)
    }
}

/// Prompt for one window: subset facts plus per-sensor statistics.
pub fn build_prompt(
    meta: &DatasetMeta,
    window: &WindowSample,
    sensor_ids: &[usize],
    tmpl: &PromptTemplate,
) -> Result<String> {
    let m = window.values.first().map_or(0, Vec::len);
    if m != sensor_ids.len() {
        return Err(Error::shape("build_prompt", &[sensor_ids.len()], &[m]));
    }
    let mut summary = String::new();
    for (j, id) in sensor_ids.iter().enumerate() {
        let col = window.values.iter().map(|r| r[j]);
        let lo = col.clone().fold(f64::INFINITY, f64::min);
        let hi = col.clone().fold(f64::NEG_INFINITY, f64::max);
        let mean = col.sum::<f64>() / window.values.len() as f64;
        if j > 0 {
            summary.push_str(", ");
        }
        write!(summary, "s{id} {lo:.3}/{mean:.3}/{hi:.3}").unwrap();
    }
    let slots = BTreeMap::from([
        ("dataset_id", meta.id.to_string()),
        ("n_conditions", meta.conditions.to_string()),
        ("n_fault_modes", meta.fault_modes.to_string()),
        ("window_len", window.values.len().to_string()),
        ("sensor_summary", summary),
    ]);
    tmpl.render(&slots)
}

/// Split text into chunks that each start at a space (or the beginning).
/// Merges never cross chunk boundaries.
fn chunks(text: &str) -> impl Iterator<Item = &[u8]> {
    let b = text.as_bytes();
    let mut starts: Vec<usize> = (1..b.len()).filter(|&i| b[i] == b' ' && b[i - 1] != b' ').collect();
    starts.insert(0, 0);
    starts.push(b.len());
    (0..starts.len() - 1)
        .map(move |k| &b[starts[k]..starts[k + 1]])
        .filter(|c| !c.is_empty())
}

/// Byte-level vocabulary: ids `0..256` are bytes, then one id per merge,
/// then `pad`, `unk`, `bos`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeVocab {
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
    pieces: Vec<Vec<u8>>,
}

impl BpeVocab {
    pub fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self> {
        let mut pieces: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let mut ranks = HashMap::with_capacity(merges.len());
        for (r, &(a, b)) in merges.iter().enumerate() {
            let n = pieces.len() as u32;
            if a >= n || b >= n {
                return Err(Error::Load(format!("merge {r} refers to unknown token ({a}, {b})")));
            }
            let mut p = pieces[a as usize].clone();
            p.extend_from_slice(&pieces[b as usize]);
            pieces.push(p);
            ranks.insert((a, b), r as u32);
        }
        Ok(Self { merges, ranks, pieces })
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn pad_id(&self) -> u32 {
        self.pieces.len() as u32
    }

    pub fn unk_id(&self) -> u32 {
        self.pad_id() + 1
    }

    pub fn bos_id(&self) -> u32 {
        self.pad_id() + 2
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len() + 3
    }

    /// Bytes of a non-special token.
    pub fn piece(&self, id: u32) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(Vec::as_slice)
    }

    fn encode_chunk(&self, chunk: &[u8], out: &mut Vec<u32>) {
        let mut seq: Vec<u32> = chunk.iter().map(|&b| b as u32).collect();
        loop {
            let best = seq
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                .min();
            let Some((rank, pair)) = best else { break };
            seq = apply_merge(&seq, pair, 256 + rank);
        }
        out.extend(seq);
    }

    /// Byte-level ids for `text` with no specials.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for c in chunks(text) {
            self.encode_chunk(c, &mut out);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "#bpe v1\nspecials pad={} unk={} bos={}\nmerges {}\n",
            self.pad_id(),
            self.unk_id(),
            self.bos_id(),
            self.merges.len()
        );
        for (a, b) in &self.merges {
            writeln!(s, "{a} {b}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Load(format!("vocabulary file: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some("#bpe v1") {
            return Err(bad("missing header"));
        }
        let specials = lines.next().ok_or_else(|| bad("missing specials line"))?;
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("merges "))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| bad("missing merge count"))?;
        let merges = lines
            .take(count)
            .map(|l| {
                let mut it = l.split(' ').map(str::parse::<u32>);
                match (it.next(), it.next(), it.next()) {
                    (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
                    _ => Err(bad(&format!("malformed merge line {l:?}"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if merges.len() != count {
            return Err(bad("fewer merges than declared"));
        }
        let v = Self::from_merges(merges)?;
        let expect = format!("specials pad={} unk={} bos={}", v.pad_id(), v.unk_id(), v.bos_id());
        if specials != expect {
            return Err(bad("special ids disagree with merge count"));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn apply_merge(seq: &[u32], pair: (u32, u32), id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && (seq[i], seq[i + 1]) == pair {
            out.push(id);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    out
}

/// Greedy most-frequent-pair merging. Ties go to the lexicographically
/// smallest `(left bytes, right bytes)`. Stops early when no pair occurs twice.
pub fn train_bpe(corpus: &[String], target_merges: usize) -> Result<BpeVocab> {
    if corpus.is_empty() {
        return Err(Error::Config("BPE training needs a non-empty corpus".into()));
    }
    let mut words: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
    for text in corpus {
        for c in chunks(text) {
            *words.entry(c.to_vec()).or_default() += 1;
        }
    }
    let mut seqs: Vec<(Vec<u32>, usize)> = words
        .into_iter()
        .map(|(w, n)| (w.into_iter().map(u32::from).collect(), n))
        .collect();
    let mut pieces: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let mut merges = Vec::new();
    while merges.len() < target_merges {
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        for (s, n) in &seqs {
            for w in s.windows(2) {
                *counts.entry((w[0], w[1])).or_default() += n;
            }
        }
        let best = counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (&pieces[pa.0 as usize], &pieces[pa.1 as usize]);
                let kb = (&pieces[pb.0 as usize], &pieces[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some((pair, count)) = best else { break };
        if count < 2 && !merges.is_empty() {
            break;
        }
        let id = pieces.len() as u32;
        let mut p = pieces[pair.0 as usize].clone();
        p.extend_from_slice(&pieces[pair.1 as usize]);
        pieces.push(p);
        merges.push(pair);
        for (s, _) in &mut seqs {
            if s.windows(2).any(|w| (w[0], w[1]) == pair) {
                *s = apply_merge(s, pair, id);
            }
        }
    }
    BpeVocab::from_merges(merges)
}

/// Fixed-length id sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// Non-pad positions at the front of `ids`.
    pub length: usize,
    /// Length before truncation.
    pub original_len: usize,
}

impl TokenSequence {
    pub fn mask(&self) -> Vec<bool> {
        (0..self.ids.len()).map(|i| i < self.length).collect()
    }
}

/// `bos` + BPE ids, truncated or right-padded to `max_len`. Empty text
/// yields only padding.
pub fn tokenize(text: &str, vocab: &BpeVocab, max_len: usize) -> TokenSequence {
    let mut ids = Vec::new();
    if !text.is_empty() {
        ids.push(vocab.bos_id());
        ids.extend(vocab.encode(text));
    }
    let original_len = ids.len();
    ids.truncate(max_len);
    let length = ids.len();
    ids.resize(max_len, vocab.pad_id());
    TokenSequence {
        ids,
        length,
        original_len,
    }
}

/// Concatenated bytes of the non-special ids.
pub fn detokenize(ids: &[u32], vocab: &BpeVocab) -> String {
    let bytes: Vec<u8> = ids.iter().filter_map(|&i| vocab.piece(i)).flatten().copied().collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

/// Token table `text.tok` (`V×d`) and position table `text.pos` (`L_text×d`).
pub fn init_params<T: Scalar>(
    store: &mut ParamStore<T>,
    vocab_size: usize,
    max_len: usize,
    dim: usize,
    rng: &mut SeededRng,
) {
    store.init_normal("text.tok", &[vocab_size, dim], 0.02, rng);
    store.init_normal("text.pos", &[max_len, dim], 0.02, rng);
}

/// `L×d` embeddings (using the first `L` position rows) and the non-pad mask.
pub fn embed_tokens<T: Scalar>(s: &mut Session<'_, T>, seq: &TokenSequence) -> Result<(Var, Vec<bool>)> {
    let tok = s.p("text.tok")?;
    let pos = s.p("text.pos")?;
    let v = s.g.shape(tok)[0];
    if let Some(bad) = seq.ids.iter().find(|&&i| i as usize >= v) {
        return Err(Error::Contract(format!("token id {bad} outside vocabulary of {v}")));
    }
    let n = seq.ids.len();
    if s.g.shape(pos)[0] < n {
        return Err(Error::Contract(format!(
            "{n} tokens exceed the position table of {}",
            s.g.shape(pos)[0]
        )));
    }
    let pos = if s.g.shape(pos)[0] == n {
        pos
    } else {
        s.g.gather_rows(pos, &(0..n).map(Some).collect::<Vec<_>>())?
    };
    let rows: Vec<Option<usize>> = seq.ids.iter().map(|&i| Some(i as usize)).collect();
    let e = s.g.gather_rows(tok, &rows)?;
    Ok((s.g.add(e, pos)?, seq.mask()))
}
