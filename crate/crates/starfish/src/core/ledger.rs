use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Amount, PartyId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("insufficient funds for {party}: have {have}, need {need}")]
    InsufficientFunds {
        party: PartyId,
        have: Amount,
        need: Amount,
    },
}

/// On-chain balance record. Balances are only manipulated by the contracts;
/// `remove` never drives a balance negative — the request is rejected and the
/// ledger is left unchanged.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerState {
    balances: BTreeMap<PartyId, Amount>,
}

impl LedgerState {
    pub fn new(initial: BTreeMap<PartyId, Amount>) -> Self {
        LedgerState { balances: initial }
    }

    pub fn balance(&self, party: &PartyId) -> Amount {
        self.balances.get(party).copied().unwrap_or(0)
    }

    pub fn add(&mut self, party: &PartyId, amount: Amount) {
        *self.balances.entry(party.clone()).or_insert(0) += amount;
    }

    pub fn remove(&mut self, party: &PartyId, amount: Amount) -> Result<(), LedgerError> {
        let have = self.balance(party);
        if have < amount {
            return Err(LedgerError::InsufficientFunds {
                party: party.clone(),
                have,
                need: amount,
            });
        }
        if let Some(b) = self.balances.get_mut(party) {
            *b -= amount;
        }
        Ok(())
    }

    pub fn total(&self) -> Amount {
        self.balances.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PartyId, &Amount)> {
        self.balances.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger(pairs: &[(&str, Amount)]) -> LedgerState {
        LedgerState::new(pairs.iter().map(|(p, a)| (PartyId::from(*p), *a)).collect())
    }

    #[test]
    fn add_increments() {
        let mut l = ledger(&[("A", 10)]);
        l.add(&"A".into(), 5);
        assert_eq!(l.balance(&"A".into()), 15);
        l.add(&"A".into(), 0);
        assert_eq!(l.balance(&"A".into()), 15);
    }

    #[test]
    fn add_zero_on_empty() {
        let mut l = ledger(&[("A", 0)]);
        l.add(&"A".into(), 0);
        assert_eq!(l.balance(&"A".into()), 0);
    }

    #[test]
    fn remove_decrements() {
        let mut l = ledger(&[("A", 10)]);
        l.remove(&"A".into(), 4).unwrap();
        assert_eq!(l.balance(&"A".into()), 6);
    }

    #[test]
    fn remove_rejects_insufficient_and_leaves_state_unchanged() {
        let mut l = ledger(&[("A", 3)]);
        let err = l.remove(&"A".into(), 4);
        assert!(matches!(err, Err(LedgerError::InsufficientFunds { .. })));
        assert_eq!(l.balance(&"A".into()), 3);
    }

    #[test]
    fn remove_then_add_restores_exact_balance() {
        let mut l = ledger(&[("A", 10)]);
        l.remove(&"A".into(), 7).unwrap();
        l.add(&"A".into(), 7);
        assert_eq!(l.balance(&"A".into()), 10);
        assert_eq!(l.total(), 10);
    }
}
