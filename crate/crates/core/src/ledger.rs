//! Budget accounting: one counter per model-invocation kind.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// The kinds of model invocation a run can spend budget on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Policy,
    Verifier,
    Reflection,
    Merge,
}

/// Immutable call-count snapshot; what reports and artifacts carry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallLedger {
    pub policy_calls: u64,
    pub verifier_calls: u64,
    pub reflection_calls: u64,
    pub merge_calls: u64,
}

impl CallLedger {
    /// Return a copy with exactly one counter incremented.
    pub fn record(mut self, kind: CallKind) -> Self {
        match kind {
            CallKind::Policy => self.policy_calls += 1,
            CallKind::Verifier => self.verifier_calls += 1,
            CallKind::Reflection => self.reflection_calls += 1,
            CallKind::Merge => self.merge_calls += 1,
        }
        self
    }

    pub fn total(&self) -> u64 {
        self.policy_calls + self.verifier_calls + self.reflection_calls + self.merge_calls
    }

    pub fn add(&self, other: &CallLedger) -> CallLedger {
        CallLedger {
            policy_calls: self.policy_calls + other.policy_calls,
            verifier_calls: self.verifier_calls + other.verifier_calls,
            reflection_calls: self.reflection_calls + other.reflection_calls,
            merge_calls: self.merge_calls + other.merge_calls,
        }
    }
}

/// Shared ledger for a live run: atomic increments, snapshot reads. Counters
/// only ever go up.
#[derive(Debug, Clone, Default)]
pub struct SharedLedger {
    inner: Arc<Counters>,
}

#[derive(Debug, Default)]
struct Counters {
    policy: AtomicU64,
    verifier: AtomicU64,
    reflection: AtomicU64,
    merge: AtomicU64,
}

impl SharedLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, kind: CallKind) {
        let counter = match kind {
            CallKind::Policy => &self.inner.policy,
            CallKind::Verifier => &self.inner.verifier,
            CallKind::Reflection => &self.inner.reflection,
            CallKind::Merge => &self.inner.merge,
        };
        counter.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CallLedger {
        CallLedger {
            policy_calls: self.inner.policy.load(Ordering::Relaxed),
            verifier_calls: self.inner.verifier.load(Ordering::Relaxed),
            reflection_calls: self.inner.reflection.load(Ordering::Relaxed),
            merge_calls: self.inner.merge.load(Ordering::Relaxed),
        }
    }

    pub fn total(&self) -> u64 {
        self.snapshot().total()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_counter_per_record() {
        let l = CallLedger::default().record(CallKind::Policy);
        assert_eq!((l.policy_calls, l.verifier_calls, l.reflection_calls, l.merge_calls), (1, 0, 0, 0));

        let mut l = CallLedger::default();
        for _ in 0..4 {
            l = l.record(CallKind::Verifier);
        }
        assert_eq!((l.policy_calls, l.verifier_calls, l.reflection_calls, l.merge_calls), (0, 4, 0, 0));
    }

    #[test]
    fn shared_ledger_snapshots_match_history() {
        let shared = SharedLedger::new();
        shared.record(CallKind::Policy);
        shared.record(CallKind::Merge);
        shared.record(CallKind::Policy);
        let snap = shared.snapshot();
        assert_eq!(snap.policy_calls, 2);
        assert_eq!(snap.merge_calls, 1);
        assert_eq!(snap.total(), 3);
    }
}
