//! Corpus ingestion: the boundary-marking scheme, unit classes, the shared
//! multilingual vocabulary, sentence encoding and mini-batch construction.
//!
//! Words are split into characters and every character is decorated with a
//! `+` on each side that touches another character of the same word, so
//! `model` becomes `m+ +o+ +d+ +e+ +l`. Word boundaries are fully implied by
//! the marks; no separate boundary token is emitted.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

pub const BOS_ID: TokenId = 0;
pub const EOS_ID: TokenId = 1;
pub const UNK_ID: TokenId = 2;

const MARK: char = '+';

/// A marked character token, or one of the three special tokens.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CharUnit(String);

impl CharUnit {
    /// Validates `surface` against the four unit shapes (`c`, `c+`, `+c+`, `+c`)
    /// or the special tokens.
    pub fn parse(surface: &str) -> Result<Self> {
        if matches!(surface, BOS | EOS | UNK) {
            return Ok(CharUnit(surface.to_string()));
        }
        let chars: Vec<char> = surface.chars().collect();
        let ok = match chars.len() {
            1 => true,
            2 => chars[0] == MARK || chars[1] == MARK,
            3 => chars[0] == MARK && chars[2] == MARK,
            _ => false,
        };
        if ok {
            Ok(CharUnit(surface.to_string()))
        } else {
            Err(Error::Format(format!("{surface:?} is not a character unit")))
        }
    }

    fn marked(base: char, left: bool, right: bool) -> Self {
        let mut s = String::with_capacity(base.len_utf8() + 2);
        if left {
            s.push(MARK);
        }
        s.push(base);
        if right {
            s.push(MARK);
        }
        CharUnit(s)
    }

    pub fn surface(&self) -> &str {
        &self.0
    }

    pub fn is_special(&self) -> bool {
        matches!(self.0.as_str(), BOS | EOS | UNK)
    }

    /// Position within the word implied by the marks.
    ///
    /// A bare `+` character is ambiguous in two-character surfaces (`++`);
    /// it is read as a word-initial unit.
    pub fn position(&self) -> Position {
        if self.is_special() {
            return Position::Special;
        }
        let chars: Vec<char> = self.0.chars().collect();
        match chars.len() {
            1 => Position::Singleton,
            3 => Position::Middle,
            _ if chars[1] == MARK => Position::Begin,
            _ => Position::End,
        }
    }

    /// The undecorated character. `None` for special tokens.
    pub fn base(&self) -> Option<char> {
        if self.is_special() {
            return None;
        }
        let chars: Vec<char> = self.0.chars().collect();
        Some(match self.position() {
            Position::Singleton => chars[0],
            Position::Begin => chars[0],
            Position::Middle | Position::End => chars[1],
            Position::Special => unreachable!(),
        })
    }
}

impl fmt::Display for CharUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Position {
    Begin,
    Middle,
    End,
    Singleton,
    Special,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sound {
    Consonant,
    Vowel,
    Other,
}

/// Positional and phonetic class of a unit, e.g. `MV` for a word-internal vowel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitClass {
    pub position: Position,
    pub sound: Sound,
}

impl UnitClass {
    pub const SPECIAL: UnitClass = UnitClass {
        position: Position::Special,
        sound: Sound::Other,
    };

    /// Two-letter code: position letter (B/M/E/S) followed by sound letter
    /// (C/V/O). Special tokens are `SP`.
    pub fn code(&self) -> &'static str {
        use Position::*;
        use Sound::*;
        match (self.position, self.sound) {
            (Special, _) => "SP",
            (Begin, Consonant) => "BC",
            (Begin, Vowel) => "BV",
            (Begin, Other) => "BO",
            (Middle, Consonant) => "MC",
            (Middle, Vowel) => "MV",
            (Middle, Other) => "MO",
            (End, Consonant) => "EC",
            (End, Vowel) => "EV",
            (End, Other) => "EO",
            (Singleton, Consonant) => "SC",
            (Singleton, Vowel) => "SV",
            (Singleton, Other) => "SO",
        }
    }

    pub fn from_code(code: &str) -> Result<Self> {
        if code == "SP" {
            return Ok(UnitClass::SPECIAL);
        }
        let mut it = code.chars();
        let (Some(p), Some(s), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Format(format!("bad class code {code:?}")));
        };
        let position = match p {
            'B' => Position::Begin,
            'M' => Position::Middle,
            'E' => Position::End,
            'S' => Position::Singleton,
            _ => return Err(Error::Format(format!("bad class code {code:?}"))),
        };
        let sound = match s {
            'C' => Sound::Consonant,
            'V' => Sound::Vowel,
            'O' => Sound::Other,
            _ => return Err(Error::Format(format!("bad class code {code:?}"))),
        };
        Ok(UnitClass { position, sound })
    }
}

impl fmt::Display for UnitClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Lower-case characters counted as vowels for one language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VowelSet(BTreeSet<char>);

impl VowelSet {
    pub fn new(vowels: &str) -> Self {
        VowelSet(vowels.chars().flat_map(char::to_lowercase).collect())
    }

    pub fn finnish() -> Self {
        Self::new("aeiouyäö")
    }

    pub fn swedish() -> Self {
        Self::new("aeiouyäöå")
    }

    pub fn english() -> Self {
        Self::new("aeiouy")
    }

    /// Shipped default for a language name or ISO code; English otherwise.
    pub fn for_language(name: &str) -> Self {
        match name.to_lowercase().as_str() {
            "fi" | "fin" | "finnish" => Self::finnish(),
            "sv" | "swe" | "swedish" => Self::swedish(),
            _ => Self::english(),
        }
    }

    pub fn contains(&self, c: char) -> bool {
        c.to_lowercase().any(|l| self.0.contains(&l))
    }
}

impl Default for VowelSet {
    fn default() -> Self {
        Self::english()
    }
}

/// Splits a word into marked character units.
pub fn mark_word(word: &str) -> Result<Vec<CharUnit>> {
    if word.is_empty() || word.chars().any(char::is_whitespace) {
        return Err(Error::InvalidWord(word.to_string()));
    }
    let n = word.chars().count();
    Ok(word
        .chars()
        .enumerate()
        .map(|(i, c)| CharUnit::marked(c, i > 0, i + 1 < n))
        .collect())
}

pub fn classify_unit(unit: &CharUnit, vowels: &VowelSet) -> UnitClass {
    let Some(base) = unit.base() else {
        return UnitClass::SPECIAL;
    };
    let sound = if vowels.contains(base) {
        Sound::Vowel
    } else if base.is_alphabetic() {
        Sound::Consonant
    } else {
        Sound::Other
    };
    UnitClass {
        position: unit.position(),
        sound,
    }
}

/// Reads `reader` line by line, yielding decoded lines with 1-based numbers.
fn for_each_line<R: BufRead>(
    mut reader: R,
    mut f: impl FnMut(usize, &str) -> Result<()>,
) -> Result<()> {
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(());
        }
        line_no += 1;
        let line = std::str::from_utf8(&buf).map_err(|_| Error::Encoding { line: line_no })?;
        f(line_no, line.trim_end_matches(['\n', '\r']))?;
    }
}

/// Shared inventory of character units with stable integer ids.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    units: Vec<CharUnit>,
    index: HashMap<CharUnit, TokenId>,
    language_tags: Vec<BTreeSet<String>>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.units == other.units && self.language_tags == other.language_tags
    }
}

impl Vocabulary {
    fn from_tagged(tagged: BTreeMap<CharUnit, BTreeSet<String>>) -> Self {
        let mut units: Vec<CharUnit> = [BOS, EOS, UNK]
            .iter()
            .map(|s| CharUnit(s.to_string()))
            .collect();
        let mut language_tags = vec![BTreeSet::new(); 3];
        // BTreeMap iteration over String keys is byte-lexicographic.
        for (unit, tags) in tagged {
            if unit.is_special() {
                continue;
            }
            units.push(unit);
            language_tags.push(tags);
        }
        let index = units
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i as TokenId))
            .collect();
        Vocabulary {
            units,
            index,
            language_tags,
        }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn units(&self) -> &[CharUnit] {
        &self.units
    }

    pub fn unit(&self, id: TokenId) -> &CharUnit {
        &self.units[id as usize]
    }

    pub fn id(&self, unit: &CharUnit) -> Option<TokenId> {
        self.index.get(unit).copied()
    }

    pub fn language_tags(&self, id: TokenId) -> &BTreeSet<String> {
        &self.language_tags[id as usize]
    }

    /// The vocabulary file: one unit per line, line number = id.
    pub fn to_file_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for u in &self.units {
            out.extend_from_slice(u.surface().as_bytes());
            out.push(b'\n');
        }
        out
    }

    /// Hex SHA-256 of the vocabulary file bytes.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_bytes()))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_file_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_bytes())?;
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut units = Vec::new();
        for_each_line(reader, |_, line| {
            units.push(CharUnit::parse(line)?);
            Ok(())
        })?;
        if units.len() < 3
            || units[0].surface() != BOS
            || units[1].surface() != EOS
            || units[2].surface() != UNK
        {
            return Err(Error::Format(
                "vocabulary must start with <s>, </s>, <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(units.len());
        for (i, u) in units.iter().enumerate() {
            if index.insert(u.clone(), i as TokenId).is_some() {
                return Err(Error::Format(format!("duplicate unit {u}")));
            }
        }
        let language_tags = vec![BTreeSet::new(); units.len()];
        Ok(Vocabulary {
            units,
            index,
            language_tags,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }
}

/// Builds the shared vocabulary over several language corpora.
///
/// The id assignment depends only on the set of observed units, so the order
/// of `corpora` does not matter.
pub fn build_vocabulary<R: BufRead>(
    corpora: impl IntoIterator<Item = (String, R)>,
) -> Result<Vocabulary> {
    let mut tagged: BTreeMap<CharUnit, BTreeSet<String>> = BTreeMap::new();
    let mut seen_any = false;
    for (lang, reader) in corpora {
        seen_any = true;
        for_each_line(reader, |_, line| {
            for word in line.split_whitespace() {
                for unit in mark_word(word)? {
                    tagged.entry(unit).or_default().insert(lang.clone());
                }
            }
            Ok(())
        })?;
    }
    if !seen_any {
        return Err(Error::NoCorpora);
    }
    Ok(Vocabulary::from_tagged(tagged))
}

/// Sentences as id sequences framed by `<s>` and `</s>`, with word spans.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EncodedCorpus {
    pub sentences: Vec<Vec<TokenId>>,
    /// Per sentence, half-open token ranges, one per word; `</s>` is its own span.
    pub word_spans: Vec<Vec<(usize, usize)>>,
    pub token_count: usize,
    pub word_count: usize,
    pub vocab_hash: String,
}

impl EncodedCorpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Number of predicted tokens: everything except the leading `<s>`.
    pub fn prediction_count(&self) -> usize {
        self.token_count - self.sentences.len()
    }

    /// Keeps the sentences at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> EncodedCorpus {
        let sentences: Vec<_> = indices.iter().map(|&i| self.sentences[i].clone()).collect();
        let word_spans: Vec<_> = indices.iter().map(|&i| self.word_spans[i].clone()).collect();
        EncodedCorpus {
            token_count: sentences.iter().map(Vec::len).sum(),
            word_count: word_spans.iter().map(Vec::len).sum(),
            sentences,
            word_spans,
            vocab_hash: self.vocab_hash.clone(),
        }
    }
}

pub fn encode_line(line: &str, vocab: &Vocabulary) -> Result<Option<(Vec<TokenId>, Vec<(usize, usize)>)>> {
    let mut ids = vec![BOS_ID];
    let mut spans = Vec::new();
    for word in line.split_whitespace() {
        let start = ids.len();
        for unit in mark_word(word)? {
            ids.push(vocab.id(&unit).unwrap_or(UNK_ID));
        }
        spans.push((start, ids.len()));
    }
    if spans.is_empty() {
        return Ok(None);
    }
    spans.push((ids.len(), ids.len() + 1));
    ids.push(EOS_ID);
    Ok(Some((ids, spans)))
}

pub fn encode_corpus<R: BufRead>(reader: R, vocab: &Vocabulary) -> Result<EncodedCorpus> {
    let mut corpus = EncodedCorpus {
        vocab_hash: vocab.hash(),
        ..Default::default()
    };
    for_each_line(reader, |_, line| {
        if let Some((ids, spans)) = encode_line(line, vocab)? {
            corpus.token_count += ids.len();
            corpus.word_count += spans.len();
            corpus.sentences.push(ids);
            corpus.word_spans.push(spans);
        }
        Ok(())
    })?;
    Ok(corpus)
}

pub fn encode_file(path: &Path, vocab: &Vocabulary) -> Result<EncodedCorpus> {
    let file = std::fs::File::open(path)?;
    encode_corpus(std::io::BufReader::new(file), vocab)
}

/// Where a batch row came from: sentence index and offset of its first input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowOrigin {
    pub sentence: usize,
    pub start: usize,
}

/// Row-major `[batch_size × seq_len]` id matrices plus a 0/1 mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch_size: usize,
    pub seq_len: usize,
    pub inputs: Vec<TokenId>,
    pub targets: Vec<TokenId>,
    pub mask: Vec<u8>,
    /// `None` for all-padding rows.
    pub origins: Vec<Option<RowOrigin>>,
}

impl Batch {
    pub fn empty(batch_size: usize, seq_len: usize) -> Self {
        let n = batch_size * seq_len;
        Batch {
            batch_size,
            seq_len,
            inputs: vec![BOS_ID; n],
            targets: vec![BOS_ID; n],
            mask: vec![0; n],
            origins: vec![None; batch_size],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, t: usize) -> usize {
        row * self.seq_len + t
    }

    pub fn active_tokens(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }

    /// One past the last timestep that is unmasked in any row.
    pub fn effective_len(&self) -> usize {
        (0..self.seq_len)
            .rev()
            .find(|&t| (0..self.batch_size).any(|r| self.mask[self.at(r, t)] != 0))
            .map_or(0, |t| t + 1)
    }
}

/// Cuts sentences into windows of at most `seq_len` predictions and packs
/// them into batches. Hidden state is never carried between windows.
pub fn make_batches(
    corpus: &EncodedCorpus,
    batch_size: usize,
    seq_len: usize,
    seed: u64,
    shuffle: bool,
) -> Vec<Batch> {
    assert!(batch_size >= 1 && seq_len >= 2, "batch_size >= 1 and seq_len >= 2");
    let mut order: Vec<usize> = (0..corpus.sentences.len()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut batches = Vec::new();
    let mut current = Batch::empty(batch_size, seq_len);
    let mut row = 0;
    for &s in &order {
        let sent = &corpus.sentences[s];
        let predictions = sent.len().saturating_sub(1);
        let mut start = 0;
        while start < predictions {
            let len = seq_len.min(predictions - start);
            for t in 0..len {
                let k = current.at(row, t);
                current.inputs[k] = sent[start + t];
                current.targets[k] = sent[start + t + 1];
                current.mask[k] = 1;
            }
            current.origins[row] = Some(RowOrigin { sentence: s, start });
            row += 1;
            if row == batch_size {
                batches.push(std::mem::replace(&mut current, Batch::empty(batch_size, seq_len)));
                row = 0;
            }
            start += len;
        }
    }
    if row > 0 {
        batches.push(current);
    }
    batches
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn units(s: &[&str]) -> Vec<CharUnit> {
        s.iter().map(|u| CharUnit::parse(u).unwrap()).collect()
    }

    fn vocab_of(corpora: &[(&str, &str)]) -> Vocabulary {
        build_vocabulary(
            corpora
                .iter()
                .map(|(l, t)| (l.to_string(), t.as_bytes())),
        )
        .unwrap()
    }

    #[test]
    fn marks_words() {
        assert_eq!(mark_word("model").unwrap(), units(&["m+", "+o+", "+d+", "+e+", "+l"]));
        assert_eq!(mark_word("a").unwrap(), units(&["a"]));
        assert_eq!(mark_word("of").unwrap(), units(&["o+", "+f"]));
        assert!(matches!(mark_word(""), Err(Error::InvalidWord(_))));
        assert!(matches!(mark_word("a b"), Err(Error::InvalidWord(_))));
    }

    #[test]
    fn classifies_units() {
        let fi = VowelSet::finnish();
        let class = |s: &str| classify_unit(&CharUnit::parse(s).unwrap(), &fi);
        assert_eq!(class("m+").code(), "BC");
        assert_eq!(class("+o+").code(), "MV");
        assert_eq!(class("a").code(), "SV");
        assert_eq!(class("+Ä").code(), "EV");
        assert_eq!(class("+7+").code(), "MO");
        assert_eq!(class("</s>"), UnitClass::SPECIAL);
        for code in ["BC", "MV", "EO", "SP", "SC"] {
            assert_eq!(UnitClass::from_code(code).unwrap().code(), code);
        }
        assert!(UnitClass::from_code("XY").is_err());
    }

    #[test]
    fn rejects_malformed_units() {
        assert!(CharUnit::parse("abc").is_err());
        assert!(CharUnit::parse("ab").is_err());
        assert!(CharUnit::parse("").is_err());
    }

    #[test]
    fn builds_tagged_vocabulary() {
        let v = vocab_of(&[("L1", "ab"), ("L2", "bc")]);
        let surfaces: Vec<_> = v.units().iter().map(|u| u.surface()).collect();
        assert_eq!(surfaces, ["<s>", "</s>", "<unk>", "+b", "+c", "a+", "b+"]);
        let tag = |s: &str| {
            let id = v.id(&CharUnit::parse(s).unwrap()).unwrap();
            v.language_tags(id).iter().cloned().collect::<Vec<_>>()
        };
        assert_eq!(tag("a+"), ["L1"]);
        assert_eq!(tag("+b"), ["L1"]);
        assert_eq!(tag("b+"), ["L2"]);
        assert_eq!(tag("+c"), ["L2"]);

        let twice = vocab_of(&[("L1", "ab"), ("L1", "ab")]);
        assert_eq!(twice, vocab_of(&[("L1", "ab")]));

        let none: Vec<(String, &[u8])> = vec![];
        assert!(matches!(build_vocabulary(none), Err(Error::NoCorpora)));
    }

    #[test]
    fn reports_bad_encoding_line() {
        let bytes: &[u8] = b"ok\nfine\n\xff\xfe\n";
        let err = build_vocabulary([("x".to_string(), bytes)]).unwrap_err();
        assert!(matches!(err, Error::Encoding { line: 3 }), "{err}");
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let v = vocab_of(&[("L1", "hello world"), ("L2", "hej värld")]);
        let bytes = v.to_file_bytes();
        assert!(bytes.starts_with(b"<s>\n</s>\n<unk>\n"));
        let back = Vocabulary::read(&bytes[..]).unwrap();
        assert_eq!(back.units(), v.units());
        assert_eq!(back.hash(), v.hash());
        assert!(Vocabulary::read(&b"a\nb\n"[..]).is_err());
    }

    #[test]
    fn encodes_sentences() {
        let v = vocab_of(&[("L1", "ab"), ("L2", "bc")]);
        let c = encode_corpus("ab\n\n   \nax\n".as_bytes(), &v).unwrap();
        assert_eq!(c.sentences.len(), 2);
        let a = v.id(&CharUnit::parse("a+").unwrap()).unwrap();
        let b = v.id(&CharUnit::parse("+b").unwrap()).unwrap();
        assert_eq!(c.sentences[0], vec![BOS_ID, a, b, EOS_ID]);
        assert_eq!(c.word_spans[0], vec![(1, 3), (3, 4)]);
        // "+x" never seen
        assert_eq!(c.sentences[1], vec![BOS_ID, a, UNK_ID, EOS_ID]);
        assert_eq!(c.word_count, 4);
        assert_eq!(c.token_count, 8);

        let empty = encode_corpus("".as_bytes(), &v).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.word_count, 0);
    }

    fn one_sentence() -> EncodedCorpus {
        EncodedCorpus {
            sentences: vec![vec![0, 5, 6, 1]],
            word_spans: vec![vec![(1, 3), (3, 4)]],
            token_count: 4,
            word_count: 2,
            vocab_hash: String::new(),
        }
    }

    #[test]
    fn batches_exact_fit_and_padding() {
        let c = one_sentence();
        let b = make_batches(&c, 1, 3, 0, false);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].inputs, vec![0, 5, 6]);
        assert_eq!(b[0].targets, vec![5, 6, 1]);
        assert_eq!(b[0].mask, vec![1, 1, 1]);

        let b = make_batches(&c, 1, 5, 0, false);
        assert_eq!(b[0].mask, vec![1, 1, 1, 0, 0]);
        assert_eq!(b[0].effective_len(), 3);
    }

    #[test]
    fn long_sentences_split_into_windows() {
        let c = EncodedCorpus {
            sentences: vec![vec![0, 3, 4, 5, 6, 7, 1]],
            word_spans: vec![vec![(1, 6), (6, 7)]],
            token_count: 7,
            word_count: 2,
            vocab_hash: String::new(),
        };
        let b = make_batches(&c, 4, 4, 0, false);
        assert_eq!(b.len(), 1);
        let b = &b[0];
        assert_eq!(&b.inputs[0..4], &[0, 3, 4, 5]);
        assert_eq!(&b.targets[0..4], &[3, 4, 5, 6]);
        assert_eq!(&b.inputs[4..6], &[6, 7]);
        assert_eq!(&b.targets[4..6], &[7, 1]);
        assert_eq!(&b.mask[4..8], &[1, 1, 0, 0]);
        assert_eq!(b.origins[1], Some(RowOrigin { sentence: 0, start: 4 }));
        assert_eq!(b.origins[2], None);
        assert_eq!(b.active_tokens(), 6);
    }

    #[test]
    fn shuffled_batches_are_seeded() {
        let v = vocab_of(&[("L", "a bb ccc dddd eeeee")]);
        let text = "a\nbb\nccc\ndddd\neeeee\na bb\nccc a\n";
        let c = encode_corpus(text.as_bytes(), &v).unwrap();
        let x = make_batches(&c, 2, 3, 9, true);
        let y = make_batches(&c, 2, 3, 9, true);
        assert_eq!(x, y);
        let plain = make_batches(&c, 2, 3, 9, false);
        assert_eq!(plain[0].origins[0].unwrap().sentence, 0);
    }

    proptest! {
        #[test]
        fn marking_round_trips(word in "[^\\s]{1,12}") {
            let marked = mark_word(&word).unwrap();
            prop_assert_eq!(marked.len(), word.chars().count());
            let joined: String = marked.iter().map(|u| u.base().unwrap()).collect();
            prop_assert_eq!(&joined, &word);
        }

        #[test]
        fn positions_partition_units(word in "[a-zåäö]{1,10}") {
            let marked = mark_word(&word).unwrap();
            let n = marked.len();
            for (i, u) in marked.iter().enumerate() {
                let expected = match (i == 0, i + 1 == n) {
                    (true, true) => Position::Singleton,
                    (true, false) => Position::Begin,
                    (false, true) => Position::End,
                    (false, false) => Position::Middle,
                };
                prop_assert_eq!(u.position(), expected);
            }
        }

        #[test]
        fn vocabulary_ignores_corpus_order(
            texts in proptest::collection::vec("[a-eäx]{1,5}( [a-eäx]{1,5}){0,3}", 1..5)
        ) {
            let forward: Vec<(String, &[u8])> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| (format!("L{i}"), t.as_bytes()))
                .collect();
            let mut reversed = forward.clone();
            reversed.reverse();
            let a = build_vocabulary(forward).unwrap();
            let b = build_vocabulary(reversed).unwrap();
            prop_assert_eq!(a.units(), b.units());
            prop_assert_eq!(a.hash(), b.hash());
        }

        #[test]
        fn token_and_word_accounting(
            lines in proptest::collection::vec("[a-d]{1,6}( [a-d]{1,6}){0,4}", 0..8)
        ) {
            let text = lines.join("\n");
            let v = vocab_of(&[("L", "abcd")]);
            let c = encode_corpus(text.as_bytes(), &v).unwrap();
            prop_assert_eq!(c.token_count, c.sentences.iter().map(Vec::len).sum::<usize>());
            prop_assert_eq!(c.word_count, c.word_spans.iter().map(Vec::len).sum::<usize>());
            for (s, spans) in c.sentences.iter().zip(&c.word_spans) {
                prop_assert_eq!(s[0], BOS_ID);
                prop_assert_eq!(*s.last().unwrap(), EOS_ID);
                prop_assert_eq!(spans[0].0, 1);
                prop_assert_eq!(spans.last().unwrap().1, s.len());
                for w in spans.windows(2) {
                    prop_assert_eq!(w[0].1, w[1].0);
                }
            }
            let again = encode_corpus(text.as_bytes(), &v).unwrap();
            prop_assert_eq!(again, c);
        }
    }
}
