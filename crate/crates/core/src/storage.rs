//! Corpus ingestion and datastore snapshots.
//!
//! Snapshot layout (little-endian):
//!
//! ```text
//! magic     8 bytes  "RTKNNSNP"
//! version   u8       1
//! kind      u8       0 = token, 1 = policy
//! reserved  u16      0
//! dim       u32
//! k         u32      retrieval K the store was built with
//! temp      f64      token temperature the store was built with
//! count     u64
//! entries   count x { key: dim x f64, payload: u64, insertion_order: u64 }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::NnIndex;
use crate::policy_knn::PolicyStore;
use crate::token_knn::TokenStore;
use crate::vocab::{Sentence, Vocabulary};

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: String,
    pub pairs: Vec<(Sentence, Sentence)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    /// Out-of-vocabulary words and how often they were mapped to UNK.
    pub unknown_words: BTreeMap<String, usize>,
}

impl Corpus {
    pub fn sentence_count(&self) -> usize {
        self.documents.iter().map(|d| d.pairs.len()).sum()
    }
}

/// Parses `doc_id<TAB>source<TAB>reference` lines. Consecutive lines sharing a doc id form
/// one document. Blank lines are ignored.
pub fn parse_corpus(text: &str, vocab: &Vocabulary, path: &Path) -> Result<Corpus> {
    let mut documents: Vec<Document> = Vec::new();
    let mut unknown_words = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(err(format!(
                "expected 3 tab-separated columns, found {}",
                cols.len()
            )));
        }
        let id = cols[0].trim();
        if id.is_empty() {
            return Err(err("empty document id".into()));
        }
        let mut sentence = |text: &str, what: &str| -> Result<Sentence> {
            let t = vocab.tokenize(text);
            if t.sentence.is_empty() {
                return Err(err(format!("empty {what}")));
            }
            for w in t.unknown {
                *unknown_words.entry(w).or_insert(0) += 1;
            }
            Ok(t.sentence)
        };
        let pair = (
            sentence(cols[1], "source")?,
            sentence(cols[2], "reference")?,
        );
        match documents.last_mut() {
            Some(doc) if doc.id == id => doc.pairs.push(pair),
            _ => documents.push(Document {
                id: id.to_string(),
                pairs: vec![pair],
            }),
        }
    }
    if documents.is_empty() {
        return Err(Error::input(format!("corpus {} is empty", path.display())));
    }
    Ok(Corpus {
        documents,
        unknown_words,
    })
}

pub fn load_corpus(path: &Path, vocab: &Vocabulary) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(Error::at(path))?;
    parse_corpus(&text, vocab, path)
}

const MAGIC: &[u8; 8] = b"RTKNNSNP";
pub const SNAPSHOT_VERSION: u8 = 1;
const HEADER_LEN: usize = 8 + 1 + 1 + 2 + 4 + 4 + 8 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    Token,
    Policy,
}

impl StoreKind {
    pub fn name(self) -> &'static str {
        match self {
            StoreKind::Token => "token",
            StoreKind::Policy => "policy",
        }
    }

    fn code(self) -> u8 {
        match self {
            StoreKind::Token => 0,
            StoreKind::Policy => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub version: u8,
    pub kind: StoreKind,
    pub dim: usize,
    pub k: u32,
    pub temperature: f64,
    pub count: u64,
}

pub fn encode_snapshot(kind: StoreKind, index: &NnIndex, k: u32, temperature: f64) -> Vec<u8> {
    let dim = index.dim();
    let mut buf = Vec::with_capacity(HEADER_LEN + index.len() * (dim + 2) * 8);
    buf.extend_from_slice(MAGIC);
    buf.push(SNAPSHOT_VERSION);
    buf.push(kind.code());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&k.to_le_bytes());
    buf.extend_from_slice(&temperature.to_le_bytes());
    buf.extend_from_slice(&(index.len() as u64).to_le_bytes());
    for (key, payload, order) in index.entries() {
        for v in key {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&payload.to_le_bytes());
        buf.extend_from_slice(&order.to_le_bytes());
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::SnapshotTruncated(format!("reading {what} at byte {}", self.pos))
        })?;
        self.pos = end;
        Ok(slice.try_into().expect("slice has length N"))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(what)?))
    }
}

fn decode_header(r: &mut Reader<'_>) -> Result<SnapshotHeader> {
    if r.bytes.len() < MAGIC.len() || &r.bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::SnapshotMagic);
    }
    r.pos = MAGIC.len();
    let [version] = r.take::<1>("version")?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::SnapshotVersion {
            found: version,
            expected: SNAPSHOT_VERSION,
        });
    }
    let kind = match r.take::<1>("kind")? {
        [0] => StoreKind::Token,
        [1] => StoreKind::Policy,
        [other] => {
            return Err(Error::SnapshotTruncated(format!(
                "unknown datastore kind {other}"
            )))
        }
    };
    r.take::<2>("reserved")?;
    let dim = r.u32("dimension")? as usize;
    let k = r.u32("k")?;
    let temperature = r.f64("temperature")?;
    let count = r.u64("entry count")?;
    Ok(SnapshotHeader {
        version,
        kind,
        dim,
        k,
        temperature,
        count,
    })
}

/// Decodes a snapshot, checking its kind and, if given, its key dimension.
pub fn decode_snapshot(
    bytes: &[u8],
    expected_kind: StoreKind,
    expected_dim: Option<usize>,
) -> Result<(SnapshotHeader, NnIndex)> {
    let mut r = Reader { bytes, pos: 0 };
    let header = decode_header(&mut r)?;
    if header.kind != expected_kind {
        return Err(Error::SnapshotKind {
            found: header.kind.name(),
            expected: expected_kind.name(),
        });
    }
    if let Some(dim) = expected_dim {
        if dim != header.dim {
            return Err(Error::SnapshotDimension {
                found: header.dim,
                expected: dim,
            });
        }
    }
    let entry_len = (header.dim as u64 + 2) * 8;
    let body = (bytes.len() - r.pos) as u64;
    if header.count.checked_mul(entry_len) != Some(body) {
        return Err(Error::SnapshotTruncated(format!(
            "{} entries need {} bytes, file has {body}",
            header.count,
            header.count.saturating_mul(entry_len)
        )));
    }
    let mut index = NnIndex::new(header.dim);
    let mut key = vec![0.0; header.dim];
    for _ in 0..header.count {
        for v in key.iter_mut() {
            *v = r.f64("key")?;
        }
        let payload = r.u64("payload")?;
        let order = r.u64("insertion order")?;
        index.insert_with_order(&key, payload, order)?;
    }
    Ok((header, index))
}

pub fn read_snapshot_header(path: &Path) -> Result<SnapshotHeader> {
    let bytes = fs::read(path).map_err(Error::at(path))?;
    decode_header(&mut Reader {
        bytes: &bytes,
        pos: 0,
    })
}

/// Writes via a temporary file in the same directory, then renames.
pub fn save_snapshot(
    path: &Path,
    kind: StoreKind,
    index: &NnIndex,
    k: u32,
    temperature: f64,
) -> Result<()> {
    let bytes = encode_snapshot(kind, index, k, temperature);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_snapshot(
    path: &Path,
    expected_kind: StoreKind,
    expected_dim: Option<usize>,
) -> Result<(SnapshotHeader, NnIndex)> {
    let bytes = fs::read(path).map_err(Error::at(path))?;
    decode_snapshot(&bytes, expected_kind, expected_dim)
}

pub fn save_token_store(path: &Path, store: &TokenStore, k: usize, temperature: f64) -> Result<()> {
    save_snapshot(path, StoreKind::Token, store.index(), k as u32, temperature)
}

pub fn load_token_store(path: &Path, dim: usize) -> Result<TokenStore> {
    let (_, index) = load_snapshot(path, StoreKind::Token, Some(dim))?;
    Ok(TokenStore::from_index(index))
}

pub fn save_policy_store(
    path: &Path,
    store: &PolicyStore,
    k: usize,
    temperature: f64,
) -> Result<()> {
    save_snapshot(
        path,
        StoreKind::Policy,
        store.index(),
        k as u32,
        temperature,
    )
}

/// Loads a policy store whose features were built from `k` token neighbors.
pub fn load_policy_store(path: &Path, k: usize) -> Result<PolicyStore> {
    let (_, index) = load_snapshot(path, StoreKind::Policy, Some(2 * k))?;
    Ok(PolicyStore::from_index(index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::UNK;

    fn vocab() -> Vocabulary {
        Vocabulary::from_words(["hund", "dog", "katze", "cat"])
    }

    #[test]
    fn groups_consecutive_doc_ids() {
        let p = Path::new("c.tsv");
        let c = parse_corpus("d1\thund\tdog\nd1\tkatze\tcat\n", &vocab(), p).unwrap();
        assert_eq!(c.documents.len(), 1);
        assert_eq!(c.documents[0].pairs.len(), 2);

        let c = parse_corpus("d1\thund\tdog\n\nd2\tkatze\tcat\n", &vocab(), p).unwrap();
        assert_eq!(c.documents.len(), 2);
        assert_eq!(c.documents[1].id, "d2");
        assert_eq!(c.sentence_count(), 2);
    }

    #[test]
    fn malformed_lines_name_their_line() {
        let p = Path::new("c.tsv");
        match parse_corpus("d1\thund\tdog\nd1\thund\n", &vocab(), p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_corpus("d1\t \tdog\n", &vocab(), p),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_corpus("", &vocab(), p),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn unknown_words_are_reported() {
        let c = parse_corpus("d\thund maus\tdog mouse\n", &vocab(), Path::new("c")).unwrap();
        let src = &c.documents[0].pairs[0].0;
        assert_eq!(src.tokens[1].id, UNK);
        assert_eq!(c.unknown_words.get("maus"), Some(&1));
        assert_eq!(c.unknown_words.get("mouse"), Some(&1));
    }

    fn sample_index(n: usize, dim: usize) -> NnIndex {
        let mut idx = NnIndex::new(dim);
        for i in 0..n {
            let key: Vec<f64> = (0..dim)
                .map(|j| ((i * 31 + j * 7) as f64).sin() / 3.0)
                .collect();
            idx.add(&key, (i % 5) as u64).unwrap();
        }
        idx
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let idx = sample_index(20, 3);
        let bytes = encode_snapshot(StoreKind::Policy, &idx, 8, 0.5);
        let (h, back) = decode_snapshot(&bytes, StoreKind::Policy, Some(3)).unwrap();
        assert_eq!(back, idx);
        assert_eq!((h.k, h.temperature, h.count), (8, 0.5, 20));

        let empty = NnIndex::new(4);
        let bytes = encode_snapshot(StoreKind::Token, &empty, 8, 10.0);
        let (_, back) = decode_snapshot(&bytes, StoreKind::Token, None).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 4);
    }

    #[test]
    fn distinct_error_kinds() {
        let idx = sample_index(3, 2);
        let bytes = encode_snapshot(StoreKind::Token, &idx, 8, 10.0);
        assert!(matches!(
            decode_snapshot(&bytes, StoreKind::Policy, None),
            Err(Error::SnapshotKind {
                found: "token",
                expected: "policy"
            })
        ));
        assert!(matches!(
            decode_snapshot(&bytes, StoreKind::Token, Some(5)),
            Err(Error::SnapshotDimension {
                found: 2,
                expected: 5
            })
        ));
        assert!(matches!(
            decode_snapshot(&bytes[..bytes.len() - 1], StoreKind::Token, None),
            Err(Error::SnapshotTruncated(_))
        ));
        assert!(matches!(
            decode_snapshot(&bytes[..10], StoreKind::Token, None),
            Err(Error::SnapshotTruncated(_))
        ));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(
            decode_snapshot(&bad, StoreKind::Token, None),
            Err(Error::SnapshotVersion {
                found: 9,
                expected: 1
            })
        ));
        assert!(matches!(
            decode_snapshot(b"nonsense", StoreKind::Token, None),
            Err(Error::SnapshotMagic)
        ));
    }

    #[test]
    fn file_round_trip_leaves_file_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("token.snap");
        let mut store = TokenStore::new(3);
        for (key, _, _) in sample_index(7, 3).entries() {
            store
                .add(&crate::dist::ContextVector(key.to_vec()), 4)
                .unwrap();
        }
        save_token_store(&path, &store, 8, 10.0).unwrap();
        let before = fs::read(&path).unwrap();
        let back = load_token_store(&path, 3).unwrap();
        assert_eq!(back, store);
        assert_eq!(fs::read(&path).unwrap(), before);
        assert_eq!(read_snapshot_header(&path).unwrap().count, 7);
        assert!(load_policy_store(&path, 8).is_err());
    }
}
