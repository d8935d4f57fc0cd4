//! Property tests for the core conservation, non-negativity, and version
//! monotonicity invariants.

use proptest::prelude::*;

use starfish::core::{Channel, ChannelPayment, Edge, LedgerState, Merge, MergeUpdate, PartyId};
use starfish::sim::{NetState, Topology};
use starfish::strategies::StrategyKind;

fn party(i: usize) -> PartyId {
    PartyId::new(format!("p{i}"))
}

proptest! {
    /// Ledger adds and removes never drive a balance negative, and the total
    /// matches the accepted operations exactly.
    #[test]
    fn ledger_conserves_and_stays_non_negative(
        initial in proptest::collection::vec(0u64..1000, 2..5),
        ops in proptest::collection::vec((0usize..5, 0u64..500, any::<bool>()), 0..40),
    ) {
        let mut ledger = LedgerState::new(
            initial.iter().enumerate().map(|(i, a)| (party(i), *a)).collect(),
        );
        let mut expected: i128 = initial.iter().map(|a| *a as i128).sum();
        for (who, amount, is_add) in ops {
            let p = party(who % initial.len());
            if is_add {
                ledger.add(&p, amount);
                expected += amount as i128;
            } else if ledger.remove(&p, amount).is_ok() {
                expected -= amount as i128;
            }
        }
        prop_assert_eq!(ledger.total() as i128, expected);
    }

    /// Random accepted channel payments conserve the channel total and bump
    /// the version exactly once each; rejected ones change nothing.
    #[test]
    fn channel_payments_conserve_and_version_is_monotone(
        fund_a in 0u64..100,
        fund_b in 0u64..100,
        transfers in proptest::collection::vec((any::<bool>(), 0u64..120), 0..30),
    ) {
        let users = [party(0), party(1)];
        let mut chan = Channel::new("c".into(), users.clone(), [fund_a, fund_b]);
        let total = chan.total();
        let mut version = 0;
        for (a_pays, amount) in transfers {
            let (from, to) = if a_pays {
                (users[0].clone(), users[1].clone())
            } else {
                (users[1].clone(), users[0].clone())
            };
            let before = chan.balances;
            match chan.apply(&ChannelPayment::transfer(from, to, amount)) {
                Ok(()) => {
                    version += 1;
                    prop_assert_eq!(chan.version, version);
                }
                Err(_) => prop_assert_eq!(chan.balances, before),
            }
            prop_assert_eq!(chan.total(), total);
        }
    }

    /// Capacity shifts conserve the pooled total, keep every edge's balances
    /// summing to its capacity, and strictly increase versionM.
    #[test]
    fn merge_updates_conserve_the_pool(
        caps in proptest::collection::vec(0u64..50, 2..5),
        shifts in proptest::collection::vec((0usize..4, 0usize..4, 0u64..60), 0..25),
    ) {
        let hub = party(9);
        let edges: Vec<Edge> = caps
            .iter()
            .enumerate()
            .map(|(i, c)| Edge::new(format!("c{i}").as_str().into(), hub.clone(), party(i), *c))
            .collect();
        let mut merge = Merge::propose("m".into(), hub, edges);
        let pooled = merge.pooled_capacity();
        let mut version = 0;
        for (from, to, amount) in shifts {
            let from = format!("c{}", from % caps.len());
            let to = format!("c{}", to % caps.len());
            let ok = merge
                .apply_update(&MergeUpdate {
                    from_channel: from.as_str().into(),
                    to_channel: to.as_str().into(),
                    amount,
                })
                .is_ok();
            if ok {
                version += 1;
            }
            prop_assert_eq!(merge.version, version);
            prop_assert_eq!(merge.pooled_capacity(), pooled);
            for e in &merge.edges {
                prop_assert_eq!(e.balances[0] + e.balances[1], e.capacity);
            }
        }
    }

    /// Whole-simulator conservation: any workload under any strategy leaves
    /// total coins unchanged, and failures leave per-payment state intact.
    #[test]
    fn simulator_conserves_under_every_strategy(
        strategy_idx in 0usize..8,
        seed in 0u64..50,
        payments in proptest::collection::vec((0u32..30, 0u32..30, 1u64..40), 1..60),
    ) {
        let strategy = StrategyKind::ALL[strategy_idx];
        let topology = Topology::scale_free(30, 2, 40, 1.0, seed);
        let mut net = NetState::new(&topology, strategy, 5, 6, 1);
        for (s, r, amount) in payments {
            net.execute_payment(s % 30, r % 30, amount);
            net.audit().map_err(TestCaseError::fail)?;
        }
    }
}
