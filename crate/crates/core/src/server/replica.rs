use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::DeviceId;
use crate::protocol::{Envelope, Payload};

use super::state::{ApplyError, SessionState, StateHash};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplicaError {
    #[error("expected a welcome envelope, got {0}")]
    NotWelcome(&'static str),
    #[error("seq {seq}: {source}")]
    Apply { seq: u64, source: ApplyError },
}

/// A client's copy of session state, rebuilt from the sequenced log.
/// Envelopes may arrive in any order; they are applied strictly by seq.
#[derive(Debug, Clone)]
pub struct Replica {
    device_id: DeviceId,
    state: SessionState,
    pending: BTreeMap<u64, Envelope>,
}

impl Replica {
    pub fn from_welcome(welcome: &Envelope) -> Result<Self, ReplicaError> {
        match &welcome.payload {
            Payload::Welcome { device_id, state } => {
                Ok(Self { device_id: *device_id, state: (**state).clone(), pending: BTreeMap::new() })
            }
            other => Err(ReplicaError::NotWelcome(other.tag())),
        }
    }

    pub fn device_id(&self) -> DeviceId {
        self.device_id
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn state_hash(&self) -> StateHash {
        self.state.state_hash()
    }

    pub fn next_expected(&self) -> u64 {
        self.state.seq + 1
    }

    /// Seqs missing between the applied prefix and the newest buffered envelope.
    pub fn missing(&self) -> Vec<u64> {
        let Some(&last) = self.pending.keys().next_back() else {
            return Vec::new();
        };
        (self.next_expected()..last).filter(|s| !self.pending.contains_key(s)).collect()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Buffers one envelope and applies every envelope that is now
    /// contiguous. Returns the seqs applied. Unsequenced envelopes (errors)
    /// and duplicates are ignored.
    pub fn deliver(&mut self, env: Envelope) -> Result<Vec<u64>, ReplicaError> {
        if env.seq == 0 || env.seq <= self.state.seq {
            return Ok(Vec::new());
        }
        self.pending.insert(env.seq, env);
        let mut applied = Vec::new();
        while let Some(env) = self.pending.remove(&self.next_expected()) {
            self.state.apply(&env).map_err(|source| ReplicaError::Apply { seq: env.seq, source })?;
            applied.push(env.seq);
        }
        Ok(applied)
    }
}
