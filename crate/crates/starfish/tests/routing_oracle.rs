//! Routing checked against a brute-force oracle that enumerates every simple
//! path of a five-node graph.

use starfish::core::Amount;
use starfish::sim::{NetState, TopoChannel, Topology};
use starfish::strategies::StrategyKind;

/// All simple paths sender -> receiver as (forwarder, channel) hop lists.
fn enumerate_paths(
    net: &NetState,
    topology: &Topology,
    sender: u32,
    receiver: u32,
) -> Vec<Vec<(u32, u32)>> {
    fn walk(
        topology: &Topology,
        net: &NetState,
        node: u32,
        receiver: u32,
        visited: &mut Vec<u32>,
        hops: &mut Vec<(u32, u32)>,
        out: &mut Vec<Vec<(u32, u32)>>,
    ) {
        if node == receiver {
            out.push(hops.clone());
            return;
        }
        for (chan, c) in topology.channels.iter().enumerate() {
            let peer = if c.a == node {
                c.b
            } else if c.b == node {
                c.a
            } else {
                continue;
            };
            if visited.contains(&peer) {
                continue;
            }
            visited.push(peer);
            hops.push((node, chan as u32));
            walk(topology, net, peer, receiver, visited, hops, out);
            hops.pop();
            visited.pop();
        }
        let _ = net;
    }
    let mut out = Vec::new();
    walk(
        topology,
        net,
        sender,
        receiver,
        &mut vec![sender],
        &mut Vec::new(),
        &mut out,
    );
    out
}

fn node_sequence(hops: &[(u32, u32)], receiver: u32) -> Vec<u32> {
    let mut seq: Vec<u32> = hops.iter().map(|(u, _)| *u).collect();
    seq.push(receiver);
    seq
}

/// Oracle: the shortest funded path, ties broken by lexicographic node
/// sequence.
fn oracle_route(
    net: &NetState,
    topology: &Topology,
    sender: u32,
    receiver: u32,
    amount: Amount,
) -> Option<Vec<(u32, u32)>> {
    use starfish::strategies::GraphView;
    let mut best: Option<Vec<(u32, u32)>> = None;
    for path in enumerate_paths(net, topology, sender, receiver) {
        if !path
            .iter()
            .all(|(u, chan)| net.usable(*chan) && net.spendable(*u, *chan) >= amount)
        {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                path.len() < b.len()
                    || (path.len() == b.len()
                        && node_sequence(&path, receiver) < node_sequence(b, receiver))
            }
        };
        if better {
            best = Some(path);
        }
    }
    best
}

#[test]
fn router_matches_the_enumeration_oracle() {
    // Five nodes, intentionally uneven balances so funded routing differs
    // from structural routing in both directions.
    let topology = Topology {
        nodes: (0..5).map(|i| format!("n{i}")).collect(),
        channels: vec![
            TopoChannel {
                a: 0,
                b: 1,
                capacity: 4,
            },
            TopoChannel {
                a: 0,
                b: 2,
                capacity: 20,
            },
            TopoChannel {
                a: 1,
                b: 2,
                capacity: 8,
            },
            TopoChannel {
                a: 1,
                b: 3,
                capacity: 12,
            },
            TopoChannel {
                a: 2,
                b: 3,
                capacity: 6,
            },
            TopoChannel {
                a: 2,
                b: 4,
                capacity: 16,
            },
            TopoChannel {
                a: 3,
                b: 4,
                capacity: 10,
            },
        ],
    };
    let net = NetState::new(&topology, StrategyKind::Ln, 10, 6, 1);
    for sender in 0..5 {
        for receiver in 0..5 {
            if sender == receiver {
                continue;
            }
            for amount in [1u64, 2, 3, 4, 5, 6, 8, 11, 30] {
                let got = net.route_payment(sender, receiver, amount);
                let want = oracle_route(&net, &topology, sender, receiver, amount);
                assert_eq!(
                    got, want,
                    "route {sender}->{receiver} amount {amount} diverges from oracle"
                );
            }
        }
    }
}

#[test]
fn depleted_direct_channel_takes_the_funded_detour() {
    // Direct 0-1 holds 2 per side; the 0-2-1 detour is funded.
    let topology = Topology {
        nodes: vec!["a".into(), "b".into(), "c".into()],
        channels: vec![
            TopoChannel {
                a: 0,
                b: 1,
                capacity: 4,
            },
            TopoChannel {
                a: 0,
                b: 2,
                capacity: 20,
            },
            TopoChannel {
                a: 2,
                b: 1,
                capacity: 20,
            },
        ],
    };
    let net = NetState::new(&topology, StrategyKind::Ln, 10, 6, 1);
    assert_eq!(
        net.route_payment(0, 1, 1).unwrap().len(),
        1,
        "direct when funded"
    );
    let detour = net.route_payment(0, 1, 5).unwrap();
    assert_eq!(
        detour.len(),
        2,
        "two-hop alternative when the direct is short"
    );
    assert!(net.route_payment(0, 1, 30).is_none(), "all cuts depleted");
}
