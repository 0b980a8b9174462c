//! Typed protocol messages and their wire form.
//!
//! Wire layout: one tag byte, a big-endian `u32` item count, then each item as
//! a big-endian `u32` length followed by that many ASCII hex digits.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use super::{Party, ProtocolError};
use crate::dgk::{DgkCiphertext, DgkPublicKey};
use crate::math;
use crate::paillier::{PaillierCiphertext, PaillierPublicKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Tag {
    AgentShare = 1,
    TruncRequest = 2,
    TruncReply = 3,
    CompareZ = 4,
    DgkBits = 5,
    DgkBlinded = 6,
    CompareReply = 7,
    CompareResult = 8,
    UpdateRequest = 9,
    UpdateReply = 10,
    AltBlinded = 11,
    AltReply = 12,
    PrimalResult = 13,
    Abort = 14,
}

/// What the items of a message must decode to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemKind {
    Paillier,
    Dgk,
    /// Triples `(vector, index, ciphertext)` with vector 0 for `b`, 1 for `c`.
    Share,
    Text,
}

impl Tag {
    pub fn from_byte(byte: u8) -> Option<Tag> {
        use Tag::*;
        [
            AgentShare, TruncRequest, TruncReply, CompareZ, DgkBits, DgkBlinded, CompareReply, CompareResult,
            UpdateRequest, UpdateReply, AltBlinded, AltReply, PrimalResult, Abort,
        ]
        .into_iter()
        .find(|t| *t as u8 == byte)
    }

    pub fn kind(self) -> ItemKind {
        match self {
            Tag::AgentShare => ItemKind::Share,
            Tag::DgkBits | Tag::DgkBlinded => ItemKind::Dgk,
            Tag::Abort => ItemKind::Text,
            _ => ItemKind::Paillier,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub tag: Tag,
    pub sender: Party,
    pub receiver: Party,
    pub items: Vec<String>,
}

impl Message {
    pub fn new(tag: Tag, sender: Party, receiver: Party, items: Vec<String>) -> Self {
        Self { tag, sender, receiver, items }
    }

    pub fn paillier(tag: Tag, sender: Party, receiver: Party, cts: &[PaillierCiphertext], sigma_bits: u64) -> Self {
        debug_assert_eq!(tag.kind(), ItemKind::Paillier);
        Self::new(tag, sender, receiver, cts.iter().map(|c| c.to_wire(sigma_bits)).collect())
    }

    pub fn dgk(tag: Tag, sender: Party, receiver: Party, cts: &[DgkCiphertext], n_bits: u64) -> Self {
        debug_assert_eq!(tag.kind(), ItemKind::Dgk);
        Self::new(tag, sender, receiver, cts.iter().map(|c| c.to_wire(n_bits)).collect())
    }

    pub fn abort(sender: Party, receiver: Party, reason: &str) -> Self {
        Self::new(Tag::Abort, sender, receiver, vec![hex_text(reason)])
    }

    fn expect_kind(&self, kind: ItemKind) -> Result<(), ProtocolError> {
        if self.tag.kind() != kind {
            return Err(ProtocolError::Malformed(format!("{:?} does not carry {kind:?} items", self.tag)));
        }
        Ok(())
    }

    pub fn expect_len(&self, len: usize) -> Result<(), ProtocolError> {
        if self.items.len() != len {
            return Err(ProtocolError::Malformed(format!(
                "{:?} carries {} items, expected {len}",
                self.tag,
                self.items.len()
            )));
        }
        Ok(())
    }

    pub fn parse_paillier(&self, pk: &PaillierPublicKey) -> Result<Vec<PaillierCiphertext>, ProtocolError> {
        self.expect_kind(ItemKind::Paillier)?;
        self.items.iter().map(|s| Ok(pk.parse_ciphertext(s)?)).collect()
    }

    pub fn parse_dgk(&self, pk: &DgkPublicKey) -> Result<Vec<DgkCiphertext>, ProtocolError> {
        self.expect_kind(ItemKind::Dgk)?;
        self.items.iter().map(|s| Ok(pk.parse_ciphertext(s)?)).collect()
    }

    /// Decodes `(vector, index, ciphertext)` share triples.
    pub fn parse_shares(&self, pk: &PaillierPublicKey) -> Result<Vec<(char, usize, PaillierCiphertext)>, ProtocolError> {
        self.expect_kind(ItemKind::Share)?;
        if self.items.len() % 3 != 0 {
            return Err(ProtocolError::Malformed("share items must come in triples".into()));
        }
        self.items
            .chunks(3)
            .map(|t| {
                let vector = match t[0].as_str() {
                    "0" => 'b',
                    "1" => 'c',
                    other => return Err(ProtocolError::Malformed(format!("unknown share vector {other}"))),
                };
                let index = usize::from_str_radix(&t[1], 16)
                    .map_err(|_| ProtocolError::Malformed(format!("bad share index {}", t[1])))?;
                Ok((vector, index, pk.parse_ciphertext(&t[2])?))
            })
            .collect()
    }

    pub fn share_items(shares: &[(char, usize, PaillierCiphertext)], sigma_bits: u64) -> Vec<String> {
        shares
            .iter()
            .flat_map(|(v, i, c)| [if *v == 'b' { "0" } else { "1" }.to_string(), format!("{i:x}"), c.to_wire(sigma_bits)])
            .collect()
    }

    pub fn text(&self) -> String {
        self.items.iter().map(|s| unhex_text(s)).collect::<Vec<_>>().join(" ")
    }

    pub fn to_wire(&self) -> Vec<u8> {
        let body: usize = self.items.iter().map(|s| 4 + s.len()).sum();
        let mut out = Vec::with_capacity(5 + body);
        out.push(self.tag as u8);
        out.extend_from_slice(&(self.items.len() as u32).to_be_bytes());
        for item in &self.items {
            out.extend_from_slice(&(item.len() as u32).to_be_bytes());
            out.extend_from_slice(item.as_bytes());
        }
        out
    }

    pub fn from_wire(bytes: &[u8], sender: Party, receiver: Party) -> Result<Self, ProtocolError> {
        let malformed = |what: &str| ProtocolError::Malformed(what.to_string());
        let (&tag_byte, rest) = bytes.split_first().ok_or_else(|| malformed("empty message"))?;
        let tag = Tag::from_byte(tag_byte).ok_or_else(|| malformed("unknown tag"))?;
        let mut reader = Reader { bytes: rest };
        let count = reader.u32()? as usize;
        let mut items = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = reader.u32()? as usize;
            let raw = reader.take(len)?;
            if !raw.iter().all(u8::is_ascii_hexdigit) {
                return Err(malformed("item is not hexadecimal"));
            }
            items.push(String::from_utf8(raw.to_vec()).expect("hex digits are ASCII"));
        }
        if !reader.bytes.is_empty() {
            return Err(malformed("trailing bytes"));
        }
        Ok(Self { tag, sender, receiver, items })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.bytes.len() < n {
            return Err(ProtocolError::Malformed("truncated message".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
}

fn hex_text(text: &str) -> String {
    math::to_hex(&BigUint::from_bytes_be(text.as_bytes()))
}

fn unhex_text(hex: &str) -> String {
    math::from_hex(hex)
        .map(|v| String::from_utf8_lossy(&v.to_bytes_be()).into_owned())
        .unwrap_or_default()
}
