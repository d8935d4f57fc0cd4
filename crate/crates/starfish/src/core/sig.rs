use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PartyId;

/// Canonical message serialization: fields in declaration order, integers
/// big-endian, variable-length fields length-prefixed. Signatures are
/// bit-stable across runs because they only ever cover these bytes.
pub mod canonical {
    #[derive(Default)]
    pub struct Writer {
        buf: Vec<u8>,
    }

    impl Writer {
        pub fn new() -> Self {
            Writer::default()
        }

        pub fn u8(&mut self, v: u8) {
            self.buf.push(v);
        }

        pub fn u64(&mut self, v: u64) {
            self.buf.extend_from_slice(&v.to_be_bytes());
        }

        pub fn str(&mut self, s: &str) {
            self.u64(s.len() as u64);
            self.buf.extend_from_slice(s.as_bytes());
        }

        pub fn bytes(&mut self, b: &[u8]) {
            self.u64(b.len() as u64);
            self.buf.extend_from_slice(b);
        }

        pub fn finish(self) -> Vec<u8> {
            self.buf
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(seed: u64, domain: u8, data: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_be_bytes().iter().chain(std::iter::once(&domain)) {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    for b in data {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Deterministic keyed tag over a message. Stands in for an asymmetric
/// signature inside the simulation: producing a verifying tag requires the
/// signer's secret, which only the signer's own key pair holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub signer: PartyId,
    pub tag: [u8; 16],
}

/// Per-party signing key.
#[derive(Debug, Clone)]
pub struct KeyPair {
    pub party: PartyId,
    secret: u64,
}

impl KeyPair {
    pub fn sign(&self, message: &[u8]) -> Signature {
        let mut tag = [0u8; 16];
        tag[..8].copy_from_slice(&fnv1a(self.secret, 0, message).to_be_bytes());
        tag[8..].copy_from_slice(&fnv1a(self.secret, 1, message).to_be_bytes());
        Signature {
            signer: self.party.clone(),
            tag,
        }
    }
}

/// Key registry for a scenario: issues key pairs and verifies tags.
#[derive(Debug, Clone, Default)]
pub struct KeyStore {
    keys: BTreeMap<PartyId, KeyPair>,
}

impl KeyStore {
    /// Derives one secret per party from the scenario seed; deterministic so
    /// that identical (scenario, seed) pairs yield identical event logs.
    pub fn with_seed<'a>(parties: impl IntoIterator<Item = &'a PartyId>, seed: u64) -> Self {
        let mut keys = BTreeMap::new();
        for party in parties {
            let secret = fnv1a(seed, 0xff, party.0.as_bytes());
            keys.insert(
                party.clone(),
                KeyPair {
                    party: party.clone(),
                    secret,
                },
            );
        }
        KeyStore { keys }
    }

    pub fn keypair(&self, party: &PartyId) -> Option<&KeyPair> {
        self.keys.get(party)
    }

    pub fn sign(&self, party: &PartyId, message: &[u8]) -> Option<Signature> {
        self.keys.get(party).map(|k| k.sign(message))
    }

    /// Deterministic verification: recomputes the tag for the claimed signer.
    pub fn verify(&self, signer: &PartyId, message: &[u8], sig: &Signature) -> bool {
        if &sig.signer != signer {
            return false;
        }
        match self.keys.get(signer) {
            Some(k) => k.sign(message) == *sig,
            None => false,
        }
    }
}
