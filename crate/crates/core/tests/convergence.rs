mod common;

use holosync::engine::EngineConfig;
use holosync::model::{AttrValue, DeviceKind, Presence, ScreenExtents};
use holosync::protocol::{DeviceDescriptor, Envelope, Payload};
use holosync::server::{Replica, Session};

use common::convergence_trial;

#[test]
fn replicas_converge_under_reordering() {
    for seed in 0..20 {
        let r = convergence_trial(seed, 200, 10, 100);
        assert!(r.reordered_deliveries > 0, "seed {seed} exercised no reordering");
        assert!(r.converged(), "seed {seed}: {} lww violations", r.lww_violations);
    }
}

#[test]
fn zero_latency_is_a_degenerate_but_valid_trial() {
    let r = convergence_trial(1, 50, 0, 0);
    assert!(r.converged());
}

#[test]
fn broadcast_seqs_are_gap_free() {
    let mut s = Session::new("gaps", EngineConfig::default());
    let d = DeviceDescriptor::new(DeviceKind::Tablet, ScreenExtents::new(0.2, 0.15), Presence::LocalPhysical);
    let a = s.join(d.clone(), 0).unwrap();
    let b = s.join(d, 0).unwrap();
    let mut replica = Replica::from_welcome(&b.welcome).unwrap();
    for i in 0..30 {
        let who = if i % 3 == 0 { a.device_id } else { b.device_id };
        let p = Payload::ContentUpsert { element_id: "e".into(), owner: None, attributes: [("n".to_owned(), AttrValue::Number(i as f64))].into() };
        s.submit(who, Envelope::new(who, p), i).unwrap();
        if i % 7 == 0 {
            s.tick(1.0 / 60.0, i);
        }
    }
    let seqs: Vec<u64> = std::iter::from_fn(|| b.queue.pop_control()).map(|e| e.seq).collect();
    let first = b.welcome.seq + 1;
    assert_eq!(seqs, (first..first + seqs.len() as u64).collect::<Vec<_>>());
    // a replica that only sees the newest message holds it back and reports the hole
    let p = Payload::ContentRemove { element_id: "e".into() };
    s.submit(a.device_id, Envelope::new(a.device_id, p), 99).unwrap();
    let last = b.queue.pop_control().unwrap();
    assert!(b.queue.pop_control().is_none());
    replica.deliver(last.clone()).unwrap();
    assert_eq!(replica.pending_len(), 1);
    assert_eq!(replica.missing(), (b.welcome.seq + 1..last.seq).collect::<Vec<_>>());
    assert_eq!(replica.state().seq, b.welcome.seq);
}
