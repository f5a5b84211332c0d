//! Live event fan-out for the gateway stream.
//!
//! Every subscriber owns a bounded queue. A slow subscriber loses its oldest
//! items and receives a single gap marker with the number it missed before
//! the next real item.

use std::collections::VecDeque;
use std::sync::{Arc, Weak};
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use crate::agent::TranscriptRecord;
use crate::board::{BoardEvent, ExperimentId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamBody {
    Board {
        event: BoardEvent,
    },
    Transcript {
        session: String,
        role: String,
        record: TranscriptRecord,
    },
    Report {
        session: String,
        message: String,
    },
    Leaderboard {
        best: Option<f64>,
        experiment: Option<ExperimentId>,
    },
    Gap {
        missed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamItem {
    /// Stream sequence, monotone per bus. Gap markers carry 0.
    pub seq: u64,
    #[serde(flatten)]
    pub body: StreamBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "filter", content = "value", rename_all = "snake_case")]
pub enum StreamFilter {
    #[default]
    All,
    Board,
    /// Board events of one journal kind (`transition`, `metric`, ...).
    Kind(String),
    /// Transcript records and reports of one session.
    Session(String),
}

impl StreamFilter {
    /// Parses `all`, `board`, `kind:<k>` and `session:<id>`.
    pub fn parse(s: &str) -> Option<Self> {
        match s.split_once(':') {
            None if s == "all" || s.is_empty() => Some(StreamFilter::All),
            None if s == "board" => Some(StreamFilter::Board),
            Some(("kind", k)) => Some(StreamFilter::Kind(k.to_string())),
            Some(("session", id)) => Some(StreamFilter::Session(id.to_string())),
            _ => None,
        }
    }

    pub fn matches(&self, body: &StreamBody) -> bool {
        match (self, body) {
            (StreamFilter::All, _) => true,
            (_, StreamBody::Gap { .. }) => true,
            (StreamFilter::Board, StreamBody::Board { .. } | StreamBody::Leaderboard { .. }) => {
                true
            }
            (StreamFilter::Kind(k), StreamBody::Board { event }) => event.payload.kind() == k,
            (StreamFilter::Session(id), StreamBody::Transcript { session, .. })
            | (StreamFilter::Session(id), StreamBody::Report { session, .. }) => session == id,
            _ => false,
        }
    }
}

struct Queue {
    items: VecDeque<StreamItem>,
    dropped: u64,
}

struct SubscriberShared {
    filter: StreamFilter,
    capacity: usize,
    queue: Mutex<Queue>,
    ready: Condvar,
}

pub struct Subscription {
    shared: Arc<SubscriberShared>,
}

impl Subscription {
    pub fn filter(&self) -> &StreamFilter {
        &self.shared.filter
    }

    pub fn try_recv(&self) -> Option<StreamItem> {
        let mut q = self.shared.queue.lock();
        Self::pop(&mut q)
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<StreamItem> {
        let mut q = self.shared.queue.lock();
        if q.items.is_empty() && q.dropped == 0 {
            self.shared.ready.wait_for(&mut q, timeout);
        }
        Self::pop(&mut q)
    }

    /// Everything currently buffered, gap marker first if one is pending.
    pub fn drain(&self) -> Vec<StreamItem> {
        std::iter::from_fn(|| self.try_recv()).collect()
    }

    fn pop(q: &mut Queue) -> Option<StreamItem> {
        if q.dropped > 0 {
            let missed = std::mem::take(&mut q.dropped);
            return Some(StreamItem {
                seq: 0,
                body: StreamBody::Gap { missed },
            });
        }
        q.items.pop_front()
    }
}

#[derive(Default)]
struct BusInner {
    next_seq: u64,
    subscribers: Vec<Weak<SubscriberShared>>,
}

#[derive(Clone, Default)]
pub struct EventBus {
    inner: Arc<Mutex<BusInner>>,
}

impl EventBus {
    pub const DEFAULT_CAPACITY: usize = 4096;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&self, filter: StreamFilter, capacity: usize) -> Subscription {
        let shared = Arc::new(SubscriberShared {
            filter,
            capacity: capacity.max(1),
            queue: Mutex::new(Queue {
                items: VecDeque::new(),
                dropped: 0,
            }),
            ready: Condvar::new(),
        });
        self.inner.lock().subscribers.push(Arc::downgrade(&shared));
        Subscription { shared }
    }

    pub fn publish(&self, body: StreamBody) -> u64 {
        let mut inner = self.inner.lock();
        inner.next_seq += 1;
        let item = StreamItem {
            seq: inner.next_seq,
            body,
        };
        inner.subscribers.retain(|w| w.strong_count() > 0);
        for sub in inner.subscribers.iter().filter_map(Weak::upgrade) {
            if !sub.filter.matches(&item.body) {
                continue;
            }
            let mut q = sub.queue.lock();
            q.items.push_back(item.clone());
            while q.items.len() > sub.capacity {
                q.items.pop_front();
                q.dropped += 1;
            }
            sub.ready.notify_one();
        }
        item.seq
    }

    pub fn subscriber_count(&self) -> usize {
        let mut inner = self.inner.lock();
        inner.subscribers.retain(|w| w.strong_count() > 0);
        inner.subscribers.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(session: &str, n: u32) -> StreamBody {
        StreamBody::Report {
            session: session.into(),
            message: format!("m{n}"),
        }
    }

    #[test]
    fn slow_subscriber_gets_gap_marker() {
        let bus = EventBus::new();
        let sub = bus.subscribe(StreamFilter::All, 3);
        for n in 0..10 {
            bus.publish(report("s", n));
        }
        let items = sub.drain();
        assert_eq!(items[0].body, StreamBody::Gap { missed: 7 });
        assert_eq!(items.len(), 4);
        let seqs: Vec<u64> = items[1..].iter().map(|i| i.seq).collect();
        assert_eq!(seqs, vec![8, 9, 10]);
    }

    #[test]
    fn session_filter_only_passes_that_session() {
        let bus = EventBus::new();
        let sub = bus.subscribe(StreamFilter::Session("a".into()), 100);
        bus.publish(report("a", 1));
        bus.publish(report("b", 2));
        bus.publish(report("a", 3));
        let got: Vec<_> = sub.drain();
        assert_eq!(got.len(), 2);
        assert!(got.windows(2).all(|w| w[0].seq < w[1].seq));
    }

    #[test]
    fn dropped_subscriptions_are_pruned() {
        let bus = EventBus::new();
        let sub = bus.subscribe(StreamFilter::All, 4);
        assert_eq!(bus.subscriber_count(), 1);
        drop(sub);
        assert_eq!(bus.subscriber_count(), 0);
    }

    #[test]
    fn filter_parsing() {
        assert_eq!(StreamFilter::parse("all"), Some(StreamFilter::All));
        assert_eq!(
            StreamFilter::parse("session:worker-0003"),
            Some(StreamFilter::Session("worker-0003".into()))
        );
        assert_eq!(
            StreamFilter::parse("kind:transition"),
            Some(StreamFilter::Kind("transition".into()))
        );
        assert_eq!(StreamFilter::parse("bogus"), None);
    }
}
