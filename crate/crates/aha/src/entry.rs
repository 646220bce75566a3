//! Core record model: keys, sequence numbers, puts and tombstones.
//!
//! Every mutation is an [`Entry`] stamped with a globally unique, monotonically
//! increasing sequence number. The same key may exist at many places in the
//! engine at once (memtables, staged table files, leaf pages); readers resolve
//! duplicates by keeping the entry with the highest sequence number. Deletes
//! are tombstone entries that travel through the system like any other write
//! and are only dropped once they reach a leaf-page merge.

use crate::error::{Error, Result};

/// Maximum key length in bytes (keys must also be non-empty).
pub const MAX_KEY_LEN: usize = 1024;
/// Maximum value length in bytes.
pub const MAX_VALUE_LEN: usize = 64 * 1024;

pub type Key = Vec<u8>;
pub type Seq = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntryKind {
    Put,
    Tombstone,
}

impl EntryKind {
    pub fn as_u8(self) -> u8 {
        match self {
            EntryKind::Put => 0,
            EntryKind::Tombstone => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<EntryKind> {
        match v {
            0 => Some(EntryKind::Put),
            1 => Some(EntryKind::Tombstone),
            _ => None,
        }
    }
}

/// A single versioned record. Tombstones always carry an empty value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: Key,
    pub seq: Seq,
    pub kind: EntryKind,
    pub value: Vec<u8>,
}

impl Entry {
    pub fn put(key: impl Into<Key>, seq: Seq, value: impl Into<Vec<u8>>) -> Entry {
        Entry {
            key: key.into(),
            seq,
            kind: EntryKind::Put,
            value: value.into(),
        }
    }

    pub fn tombstone(key: impl Into<Key>, seq: Seq) -> Entry {
        Entry {
            key: key.into(),
            seq,
            kind: EntryKind::Tombstone,
            value: Vec::new(),
        }
    }

    pub fn is_tombstone(&self) -> bool {
        self.kind == EntryKind::Tombstone
    }

    /// Validates the key/value size contract shared by every write path.
    pub fn validate(&self) -> Result<()> {
        if self.key.is_empty() || self.key.len() > MAX_KEY_LEN {
            return Err(Error::KeyLength {
                got: self.key.len(),
                max: MAX_KEY_LEN,
            });
        }
        if self.value.len() > MAX_VALUE_LEN {
            return Err(Error::ValueLength {
                got: self.value.len(),
                max: MAX_VALUE_LEN,
            });
        }
        if self.is_tombstone() && !self.value.is_empty() {
            return Err(Error::InvalidArgument(
                "tombstone entries must carry an empty value".into(),
            ));
        }
        Ok(())
    }

    /// On-disk size of this entry in the table file body encoding:
    /// `[u32 key_len][key][u64 seq][u8 kind][u32 value_len][value]`.
    pub fn encoded_len(&self) -> usize {
        4 + self.key.len() + 8 + 1 + 4 + self.value.len()
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.key.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.key);
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.push(self.kind.as_u8());
        out.extend_from_slice(&(self.value.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.value);
    }

    /// Decodes one entry from the front of `buf`. Returns the entry and the
    /// number of bytes consumed, or `None` if `buf` holds a truncated record
    /// (the caller decides whether that means "read more" or "corrupt").
    pub fn decode_from(buf: &[u8]) -> Option<(Entry, usize)> {
        let key_len = read_u32(buf, 0)? as usize;
        if key_len == 0 || key_len > MAX_KEY_LEN {
            return None;
        }
        let mut at = 4;
        let key = buf.get(at..at + key_len)?.to_vec();
        at += key_len;
        let seq = u64::from_le_bytes(buf.get(at..at + 8)?.try_into().unwrap());
        at += 8;
        let kind = EntryKind::from_u8(*buf.get(at)?)?;
        at += 1;
        let value_len = read_u32(buf, at)? as usize;
        if value_len > MAX_VALUE_LEN {
            return None;
        }
        at += 4;
        let value = buf.get(at..at + value_len)?.to_vec();
        at += value_len;
        Some((
            Entry {
                key,
                seq,
                kind,
                value,
            },
            at,
        ))
    }
}

fn read_u32(buf: &[u8], at: usize) -> Option<u32> {
    Some(u32::from_le_bytes(buf.get(at..at + 4)?.try_into().ok()?))
}

/// Half-open key interval `[lo, hi)`, where `None` means unbounded on that
/// side. Used for node coverage, hotspot ranges and query routing.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KeyRange {
    pub lo: Option<Key>,
    pub hi: Option<Key>,
}

impl KeyRange {
    pub fn all() -> KeyRange {
        KeyRange { lo: None, hi: None }
    }

    pub fn new(lo: Option<Key>, hi: Option<Key>) -> KeyRange {
        KeyRange { lo, hi }
    }

    pub fn bounded(lo: impl Into<Key>, hi: impl Into<Key>) -> KeyRange {
        KeyRange {
            lo: Some(lo.into()),
            hi: Some(hi.into()),
        }
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        if let Some(lo) = &self.lo {
            if key < lo.as_slice() {
                return false;
            }
        }
        if let Some(hi) = &self.hi {
            if key >= hi.as_slice() {
                return false;
            }
        }
        true
    }

    /// True when this range and `[lo, hi)` share at least one key.
    pub fn overlaps(&self, lo: &[u8], hi: &[u8]) -> bool {
        if let Some(own_hi) = &self.hi {
            if own_hi.as_slice() <= lo {
                return false;
            }
        }
        if let Some(own_lo) = &self.lo {
            if own_lo.as_slice() >= hi {
                return false;
            }
        }
        lo < hi
    }

    /// True when the closed key span `[min, max]` lies entirely inside.
    pub fn contains_span(&self, min: &[u8], max: &[u8]) -> bool {
        self.contains(min) && self.contains(max)
    }

    pub fn is_all(&self) -> bool {
        self.lo.is_none() && self.hi.is_none()
    }

    /// Inclusive lower bound as a raw slice (`b""` sits below every key).
    pub fn lo_bound(&self) -> &[u8] {
        self.lo.as_deref().unwrap_or(b"")
    }

    /// Exclusive upper bound as a raw slice, substituting [`KEY_CEILING`]
    /// for an unbounded side.
    pub fn hi_bound(&self) -> &[u8] {
        self.hi.as_deref().unwrap_or(&KEY_CEILING)
    }
}

/// An exclusive upper bound above every legal key: since keys are capped at
/// [`MAX_KEY_LEN`] bytes, any valid key is a proper prefix of (or smaller
/// than) this run of `0xFF` bytes and therefore compares below it.
pub static KEY_CEILING: [u8; MAX_KEY_LEN + 1] = [0xFF; MAX_KEY_LEN + 1];

/// Returns the tightest upper bound `hi` such that `[key, hi)` contains
/// exactly `key`: the key with a zero byte appended.
pub fn key_successor(key: &[u8]) -> Key {
    let mut s = Vec::with_capacity(key.len() + 1);
    s.extend_from_slice(key);
    s.push(0);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip() {
        let e = Entry::put(b"hello".to_vec(), 42, b"world".to_vec());
        let mut buf = Vec::new();
        e.encode_into(&mut buf);
        assert_eq!(buf.len(), e.encoded_len());
        let (back, used) = Entry::decode_from(&buf).unwrap();
        assert_eq!(back, e);
        assert_eq!(used, buf.len());
    }

    #[test]
    fn tombstone_round_trip() {
        let e = Entry::tombstone(b"k".to_vec(), 7);
        let mut buf = Vec::new();
        e.encode_into(&mut buf);
        let (back, _) = Entry::decode_from(&buf).unwrap();
        assert!(back.is_tombstone());
        assert!(back.value.is_empty());
    }

    #[test]
    fn encoded_len_matches_layout() {
        // 4 (key len) + 3 (key) + 8 (seq) + 1 (kind) + 4 (val len) + 5 (val)
        let e = Entry::put(b"abc".to_vec(), 1, b"12345".to_vec());
        assert_eq!(e.encoded_len(), 4 + 3 + 8 + 1 + 4 + 5);
    }

    #[test]
    fn truncated_records_return_none() {
        let e = Entry::put(b"abc".to_vec(), 1, b"12345".to_vec());
        let mut buf = Vec::new();
        e.encode_into(&mut buf);
        for cut in 0..buf.len() {
            assert!(Entry::decode_from(&buf[..cut]).is_none(), "cut {cut}");
        }
    }

    #[test]
    fn validate_enforces_bounds() {
        assert!(Entry::put(b"".to_vec(), 1, b"v".to_vec()).validate().is_err());
        assert!(Entry::put(vec![b'x'; MAX_KEY_LEN + 1], 1, b"v".to_vec())
            .validate()
            .is_err());
        assert!(Entry::put(b"k".to_vec(), 1, vec![0u8; MAX_VALUE_LEN + 1])
            .validate()
            .is_err());
        assert!(Entry::put(vec![b'x'; MAX_KEY_LEN], 1, vec![0u8; MAX_VALUE_LEN])
            .validate()
            .is_ok());
        let mut t = Entry::tombstone(b"k".to_vec(), 1);
        t.value = b"junk".to_vec();
        assert!(t.validate().is_err());
    }

    #[test]
    fn range_membership() {
        let r = KeyRange::bounded(b"b".to_vec(), b"f".to_vec());
        assert!(!r.contains(b"a"));
        assert!(r.contains(b"b"));
        assert!(r.contains(b"e"));
        assert!(!r.contains(b"f"));
        assert!(r.overlaps(b"a", b"c"));
        assert!(r.overlaps(b"e", b"z"));
        assert!(!r.overlaps(b"f", b"z"));
        assert!(!r.overlaps(b"a", b"b"));
        assert!(!r.overlaps(b"c", b"c"));
        assert!(KeyRange::all().contains(b""));
        assert!(KeyRange::all().overlaps(b"a", b"b"));
    }

    #[test]
    fn successor_bound_selects_exactly_one_key() {
        let hi = key_successor(b"abc");
        assert!(b"abc".as_slice() < hi.as_slice());
        assert!(b"abcd".as_slice() > hi.as_slice());
        assert!(b"abc\x00".as_slice() == hi.as_slice());
    }
}
