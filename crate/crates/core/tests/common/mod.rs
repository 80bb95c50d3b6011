//! Helpers shared by the integration suites.
#![allow(dead_code)]

pub mod arb;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use holosync::engine::EngineConfig;
use holosync::model::{AttrValue, DeviceId, DeviceKind, ElementId, Presence, ScreenExtents};
use holosync::protocol::{decode_control, encode_control, DeviceDescriptor, Envelope, Payload};
use holosync::server::{Replica, Session, StateHash};

pub struct TrialResult {
    pub server: StateHash,
    pub replicas: Vec<StateHash>,
    /// Attributes whose replica value differs from the highest-seq write.
    pub lww_violations: usize,
    pub writes: usize,
    pub reordered_deliveries: usize,
}

impl TrialResult {
    pub fn converged(&self) -> bool {
        self.replicas.iter().all(|h| *h == self.server) && self.lww_violations == 0
    }
}

/// Three clients write concurrently to a small set of attributes. Every
/// message crosses a link with latency uniform in [`min_ms`, `max_ms`], so
/// both the server's arrival order and each replica's delivery order are
/// scrambled.
pub fn convergence_trial(seed: u64, writes: usize, min_ms: u64, max_ms: u64) -> TrialResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut session = Session::new(format!("trial{seed}"), EngineConfig::default().with_techniques([]));
    let desc = DeviceDescriptor::new(DeviceKind::Tablet, ScreenExtents::new(0.2, 0.15), Presence::LocalPhysical);
    let joined: Vec<_> = (0..3).map(|_| session.join(desc.clone(), 0).unwrap()).collect();
    let mut replicas: Vec<Replica> = joined.iter().map(|j| Replica::from_welcome(&j.welcome).unwrap()).collect();

    // client sends: (arrival at server, send time, sender, payload)
    let mut uplink: Vec<(u64, u64, DeviceId, Payload)> = (0..writes)
        .map(|_| {
            let sender = joined[rng.gen_range(0..3)].device_id;
            let sent = rng.gen_range(0..5_000u64);
            let element = ElementId::new(format!("e{}", rng.gen_range(0..8)));
            let name = format!("a{}", rng.gen_range(0..3));
            let value = AttrValue::Number(rng.gen_range(-1e3..1e3));
            let payload = Payload::ContentUpsert { element_id: element, owner: None, attributes: [(name, value)].into() };
            (sent + rng.gen_range(min_ms..=max_ms), sent, sender, payload)
        })
        .collect();
    uplink.sort_by_key(|(arrive, sent, sender, _)| (*arrive, *sent, *sender));
    let mut reordered = 0;
    let mut last_sent = BTreeMap::new();
    for (arrive, sent, sender, payload) in uplink {
        if last_sent.get(&sender).is_some_and(|&s| s > sent) {
            reordered += 1;
        }
        last_sent.insert(sender, sent);
        session.submit(sender, Envelope::new(sender, payload), arrive).unwrap();
    }

    // downlink: everything each client's queue received, delivered in latency order
    let mut stamped = Vec::new();
    for (i, j) in joined.iter().enumerate() {
        let mut inbox: Vec<(u64, Envelope)> = Vec::new();
        while let Some(env) = j.queue.pop_control() {
            let bytes = encode_control(&env).unwrap();
            let env = decode_control(&bytes).unwrap();
            inbox.push((env.timestamp_ms + rng.gen_range(min_ms..=max_ms), env));
        }
        inbox.sort_by_key(|(t, e)| (*t, e.seq));
        reordered += inbox.windows(2).filter(|w| w[0].1.seq > w[1].1.seq).count();
        for (_, env) in inbox {
            if i == 0 {
                stamped.push(env.clone());
            }
            replicas[i].deliver(env).unwrap();
        }
    }

    // Independent LWW oracle: the highest-seq write to each attribute wins.
    let mut winner: BTreeMap<(ElementId, String), (u64, AttrValue)> = BTreeMap::new();
    for env in &stamped {
        if let Payload::ContentUpsert { element_id, attributes, .. } = &env.payload {
            for (k, v) in attributes {
                let slot = winner.entry((element_id.clone(), k.clone())).or_insert((0, v.clone()));
                if env.seq >= slot.0 {
                    *slot = (env.seq, v.clone());
                }
            }
        }
    }
    let lww_violations = replicas
        .iter()
        .flat_map(|r| winner.iter().map(move |((e, k), (_, v))| r.state().elements.get(e).and_then(|el| el.get(k)) != Some(v)))
        .filter(|bad| *bad)
        .count();

    TrialResult {
        server: session.state_hash(),
        replicas: replicas.iter().map(Replica::state_hash).collect(),
        lww_violations,
        writes,
        reordered_deliveries: reordered,
    }
}
