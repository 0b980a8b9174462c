//! Per-party views: messages sent and received, coin tosses, and values the
//! party decrypted.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, Write};

use num_bigint::BigUint;
use num_traits::One;
use serde::{Deserialize, Serialize};

use super::message::Tag;
use super::Party;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Sent,
    Received,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedMessage {
    pub direction: Direction,
    pub peer: Party,
    pub tag: Tag,
    pub items: Vec<String>,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coin {
    pub label: String,
    pub value: String,
}

/// A plaintext the party learned by decrypting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub label: String,
    pub value: String,
    /// Blinded values must lie below `2^envelope_bits`.
    pub envelope_bits: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyLog {
    pub party: Party,
    pub messages: Vec<LoggedMessage>,
    pub coins: Vec<Coin>,
    pub observations: Vec<Observation>,
}

/// Labels of coins that blind private values and must never repeat.
pub const BLINDING_LABELS: [&str; 6] = ["rho", "update_r", "update_s", "trunc_mask", "dgk_blind", "alt_r"];

impl PartyLog {
    pub fn new(party: Party) -> Self {
        Self { party, messages: Vec::new(), coins: Vec::new(), observations: Vec::new() }
    }

    pub fn coin(&mut self, label: &str, value: &BigUint) {
        self.coins.push(Coin { label: label.to_string(), value: math::to_hex(value) });
    }

    pub fn coin_bit(&mut self, label: &str, bit: bool) {
        self.coins.push(Coin { label: label.to_string(), value: u8::from(bit).to_string() });
    }

    pub fn observe(&mut self, label: &str, value: &BigUint, envelope_bits: Option<u64>) {
        self.observations.push(Observation { label: label.to_string(), value: math::to_hex(value), envelope_bits });
    }

    pub fn coins_labeled<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a Coin> + 'a {
        self.coins.iter().filter(move |c| c.label == label)
    }

    pub fn observations_labeled<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a Observation> + 'a {
        self.observations.iter().filter(move |o| o.label == label)
    }

    pub fn absorb(&mut self, messages: Vec<LoggedMessage>) {
        self.messages.extend(messages);
    }

    pub fn bytes_sent(&self) -> usize {
        self.messages.iter().filter(|m| m.direction == Direction::Sent).map(|m| m.bytes).sum()
    }

    pub fn messages_sent(&self) -> usize {
        self.messages.iter().filter(|m| m.direction == Direction::Sent).count()
    }
}

/// All party logs of one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub parties: BTreeMap<Party, PartyLog>,
}

#[derive(Serialize)]
struct JsonLine<'a> {
    party: Party,
    kind: &'static str,
    #[serde(flatten)]
    entry: JsonEntry<'a>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum JsonEntry<'a> {
    Message(&'a LoggedMessage),
    Coin(&'a Coin),
    Observation(&'a Observation),
}

impl Transcript {
    pub fn insert(&mut self, log: PartyLog) {
        self.parties.insert(log.party, log);
    }

    pub fn get(&self, party: Party) -> Option<&PartyLog> {
        self.parties.get(&party)
    }

    /// Every message sent on a link was received, in order, on the other end.
    pub fn is_complete(&self) -> bool {
        fn stream(from: &PartyLog, to: Party, direction: Direction) -> Vec<(Tag, &Vec<String>)> {
            from.messages
                .iter()
                .filter(|m| m.peer == to && m.direction == direction)
                .map(|m| (m.tag, &m.items))
                .collect()
        }
        self.parties.values().all(|sender| {
            self.parties.values().filter(|r| r.party != sender.party).all(|receiver| {
                stream(sender, receiver.party, Direction::Sent) == stream(receiver, sender.party, Direction::Received)
            })
        })
    }

    pub fn total_messages(&self) -> usize {
        self.parties.values().map(PartyLog::messages_sent).sum()
    }

    pub fn total_bytes(&self) -> usize {
        self.parties.values().map(PartyLog::bytes_sent).sum()
    }

    /// Messages exchanged between two parties, both directions.
    pub fn link_messages(&self, a: Party, b: Party) -> usize {
        let count = |x: Party, y: Party| {
            self.get(x).map_or(0, |l| l.messages.iter().filter(|m| m.peer == y && m.direction == Direction::Sent).count())
        };
        count(a, b) + count(b, a)
    }

    /// Blinding coins whose value occurs more than once.
    pub fn reused_blinding(&self) -> Vec<(String, String)> {
        let mut seen = HashSet::new();
        let mut repeats = Vec::new();
        for log in self.parties.values() {
            for coin in log.coins.iter().filter(|c| BLINDING_LABELS.contains(&c.label.as_str())) {
                if !seen.insert((coin.label.as_str(), coin.value.as_str())) {
                    repeats.push((coin.label.clone(), coin.value.clone()));
                }
            }
        }
        repeats
    }

    /// Observations outside their declared envelope.
    pub fn envelope_violations(&self) -> Vec<Observation> {
        self.parties
            .values()
            .flat_map(|l| &l.observations)
            .filter(|o| {
                o.envelope_bits.is_some_and(|bits| {
                    math::from_hex(&o.value).map_or(true, |v| v >= (BigUint::one() << bits))
                })
            })
            .cloned()
            .collect()
    }

    /// One JSON object per line, grouped by party.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for log in self.parties.values() {
            let entries = log
                .messages
                .iter()
                .map(|m| ("message", JsonEntry::Message(m)))
                .chain(log.coins.iter().map(|c| ("coin", JsonEntry::Coin(c))))
                .chain(log.observations.iter().map(|o| ("observation", JsonEntry::Observation(o))));
            for (kind, entry) in entries {
                serde_json::to_writer(&mut out, &JsonLine { party: log.party, kind, entry })?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn message(direction: Direction, peer: Party, tag: Tag) -> LoggedMessage {
        LoggedMessage { direction, peer, tag, items: vec!["ab".into()], bytes: 11 }
    }

    #[test]
    fn completeness_and_counts() {
        let mut cloud = PartyLog::new(Party::Cloud);
        let mut target = PartyLog::new(Party::Target);
        cloud.absorb(vec![message(Direction::Sent, Party::Target, Tag::CompareZ)]);
        target.absorb(vec![message(Direction::Received, Party::Cloud, Tag::CompareZ)]);
        let mut t = Transcript::default();
        t.insert(cloud.clone());
        t.insert(target);
        assert!(t.is_complete());
        assert_eq!((t.total_messages(), t.total_bytes()), (1, 11));
        assert_eq!(t.link_messages(Party::Cloud, Party::Target), 1);
        cloud.absorb(vec![message(Direction::Sent, Party::Target, Tag::TruncRequest)]);
        t.insert(cloud);
        assert!(!t.is_complete());
    }

    #[test]
    fn reuse_and_envelope_audits() {
        let mut cloud = PartyLog::new(Party::Cloud);
        cloud.coin("rho", &BigUint::from(7u8));
        cloud.coin("update_r", &BigUint::from(7u8));
        cloud.coin_bit("swap", true);
        cloud.coin_bit("swap", true);
        let mut target = PartyLog::new(Party::Target);
        target.observe("compare_z", &BigUint::from(255u32), Some(8));
        target.observe("compare_z", &BigUint::from(256u32), Some(8));
        target.observe("t", &BigUint::from(1u8), None);
        let mut t = Transcript::default();
        t.insert(cloud.clone());
        t.insert(target);
        assert!(t.reused_blinding().is_empty());
        assert_eq!(t.envelope_violations().len(), 1);
        cloud.coin("rho", &BigUint::from(7u8));
        t.insert(cloud);
        assert_eq!(t.reused_blinding(), vec![("rho".to_string(), "7".to_string())]);
    }

    #[test]
    fn jsonl_has_one_object_per_line() {
        let mut cloud = PartyLog::new(Party::Cloud);
        cloud.coin("rho", &BigUint::from(10u8));
        cloud.absorb(vec![message(Direction::Sent, Party::Target, Tag::CompareZ)]);
        let mut t = Transcript::default();
        t.insert(cloud);
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["kind"], "message");
        assert_eq!(lines[0]["tag"], "compare_z");
        assert_eq!(lines[1]["value"], "a");
    }
}
