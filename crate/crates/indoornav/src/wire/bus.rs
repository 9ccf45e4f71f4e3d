//! In-process pub/sub.
//!
//! One publisher per topic, any number of subscribers, each with its own
//! bounded queue. A full queue drops its oldest entry. Subscribers only see
//! messages published after they subscribed. Every copy handed to a queue is
//! eventually either consumed or counted as dropped, including copies still
//! queued at shutdown.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Delivery<T> {
    pub topic: Arc<str>,
    /// Per-topic publish sequence number, from 0.
    pub seq: u64,
    pub payload: T,
}

/// Per-topic message accounting. `delivered` counts copies (one per
/// subscriber); once the bus is shut down,
/// `delivered == consumed + dropped`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicStats {
    pub published: u64,
    pub delivered: u64,
    pub consumed: u64,
    pub dropped: u64,
    /// Published while nobody was subscribed.
    pub unrouted: u64,
}

impl TopicStats {
    pub fn pending(&self) -> u64 {
        self.delivered - self.consumed - self.dropped
    }
}

#[derive(Default)]
struct Counters {
    published: AtomicU64,
    delivered: AtomicU64,
    consumed: AtomicU64,
    dropped: AtomicU64,
    unrouted: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> TopicStats {
        TopicStats {
            published: self.published.load(Ordering::SeqCst),
            delivered: self.delivered.load(Ordering::SeqCst),
            consumed: self.consumed.load(Ordering::SeqCst),
            dropped: self.dropped.load(Ordering::SeqCst),
            unrouted: self.unrouted.load(Ordering::SeqCst),
        }
    }
}

struct QueueState<T> {
    items: VecDeque<Delivery<T>>,
    closed: bool,
}

struct Queue<T> {
    state: Mutex<QueueState<T>>,
    ready: Condvar,
    capacity: usize,
    counters: Arc<Counters>,
    dropped: AtomicU64,
}

impl<T> Queue<T> {
    fn push(&self, d: Delivery<T>) {
        let mut s = self.state.lock();
        if s.items.len() >= self.capacity {
            s.items.pop_front();
            self.note_dropped(1);
        }
        s.items.push_back(d);
        self.counters.delivered.fetch_add(1, Ordering::SeqCst);
        drop(s);
        self.ready.notify_one();
    }

    fn note_dropped(&self, n: u64) {
        self.dropped.fetch_add(n, Ordering::SeqCst);
        self.counters.dropped.fetch_add(n, Ordering::SeqCst);
    }

    fn close(&self) {
        let mut s = self.state.lock();
        let n = s.items.len() as u64;
        s.items.clear();
        s.closed = true;
        self.note_dropped(n);
        drop(s);
        self.ready.notify_all();
    }
}

struct Topic<T> {
    name: Arc<str>,
    has_publisher: bool,
    subscribers: Vec<(u64, Arc<Queue<T>>)>,
    counters: Arc<Counters>,
    next_seq: u64,
}

struct Inner<T> {
    topics: Mutex<BTreeMap<String, Topic<T>>>,
    closed: AtomicBool,
    capacity: usize,
    next_sub: AtomicU64,
}

impl<T> Inner<T> {
    fn topic<'a>(topics: &'a mut BTreeMap<String, Topic<T>>, name: &str) -> &'a mut Topic<T> {
        topics.entry(name.to_owned()).or_insert_with(|| Topic {
            name: Arc::from(name),
            has_publisher: false,
            subscribers: Vec::new(),
            counters: Arc::default(),
            next_seq: 0,
        })
    }
}

pub struct Bus<T> {
    inner: Arc<Inner<T>>,
}

impl<T> Clone for Bus<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Clone + Send> Default for Bus<T> {
    fn default() -> Self {
        Self::new(DEFAULT_QUEUE_CAPACITY)
    }
}

impl<T: Clone + Send> Bus<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            inner: Arc::new(Inner {
                topics: Mutex::new(BTreeMap::new()),
                closed: AtomicBool::new(false),
                capacity,
                next_sub: AtomicU64::new(0),
            }),
        }
    }

    /// The publishing end of `topic`. Fails while another publisher for the
    /// topic is alive.
    pub fn publisher(&self, topic: &str) -> Result<Publisher<T>> {
        if self.is_closed() {
            return Err(Error::Closed);
        }
        let mut topics = self.inner.topics.lock();
        let t = Inner::topic(&mut topics, topic);
        if t.has_publisher {
            return Err(Error::Pipeline(format!("topic '{topic}' already has a publisher")));
        }
        t.has_publisher = true;
        Ok(Publisher {
            bus: self.clone(),
            topic: topic.to_owned(),
        })
    }

    pub fn subscribe(&self, topic: &str) -> Result<Subscriber<T>> {
        if self.is_closed() {
            return Err(Error::Closed);
        }
        let id = self.inner.next_sub.fetch_add(1, Ordering::SeqCst);
        let mut topics = self.inner.topics.lock();
        let t = Inner::topic(&mut topics, topic);
        let queue = Arc::new(Queue {
            state: Mutex::new(QueueState {
                items: VecDeque::new(),
                closed: false,
            }),
            ready: Condvar::new(),
            capacity: self.inner.capacity,
            counters: Arc::clone(&t.counters),
            dropped: AtomicU64::new(0),
        });
        t.subscribers.push((id, Arc::clone(&queue)));
        Ok(Subscriber {
            bus: self.clone(),
            topic: topic.to_owned(),
            id,
            queue,
        })
    }

    /// Closes the bus: later publishes fail, blocked receivers wake up with
    /// [`Error::Closed`] and queued copies are counted as dropped. Returns
    /// `false` if the bus was already closed.
    pub fn shutdown(&self) -> bool {
        let topics = self.inner.topics.lock();
        if self.inner.closed.swap(true, Ordering::SeqCst) {
            return false;
        }
        for t in topics.values() {
            for (_, q) in &t.subscribers {
                q.close();
            }
        }
        true
    }

    pub fn is_closed(&self) -> bool {
        self.inner.closed.load(Ordering::SeqCst)
    }

    pub fn stats(&self, topic: &str) -> TopicStats {
        self.inner
            .topics
            .lock()
            .get(topic)
            .map(|t| t.counters.snapshot())
            .unwrap_or_default()
    }

    pub fn all_stats(&self) -> BTreeMap<String, TopicStats> {
        self.inner
            .topics
            .lock()
            .iter()
            .map(|(k, t)| (k.clone(), t.counters.snapshot()))
            .collect()
    }
}

pub struct Publisher<T: Clone + Send> {
    bus: Bus<T>,
    topic: String,
}

impl<T: Clone + Send> Publisher<T> {
    pub fn topic(&self) -> &str {
        &self.topic
    }

    /// Returns the sequence number given to the message.
    pub fn publish(&self, payload: T) -> Result<u64> {
        let mut topics = self.bus.inner.topics.lock();
        if self.bus.is_closed() {
            return Err(Error::Closed);
        }
        let t = Inner::topic(&mut topics, &self.topic);
        let seq = t.next_seq;
        t.next_seq += 1;
        t.counters.published.fetch_add(1, Ordering::SeqCst);
        if t.subscribers.is_empty() {
            t.counters.unrouted.fetch_add(1, Ordering::SeqCst);
        }
        for (_, q) in &t.subscribers {
            q.push(Delivery {
                topic: Arc::clone(&t.name),
                seq,
                payload: payload.clone(),
            });
        }
        Ok(seq)
    }
}

impl<T: Clone + Send> Drop for Publisher<T> {
    fn drop(&mut self) {
        if let Some(t) = self.bus.inner.topics.lock().get_mut(&self.topic) {
            t.has_publisher = false;
        }
    }
}

pub struct Subscriber<T: Clone + Send> {
    bus: Bus<T>,
    topic: String,
    id: u64,
    queue: Arc<Queue<T>>,
}

impl<T: Clone + Send> Subscriber<T> {
    pub fn topic(&self) -> &str {
        &self.topic
    }

    /// Copies this subscriber lost to overflow or shutdown.
    pub fn dropped(&self) -> u64 {
        self.queue.dropped.load(Ordering::SeqCst)
    }

    fn take(&self, s: &mut QueueState<T>) -> Option<Delivery<T>> {
        let d = s.items.pop_front()?;
        self.queue.counters.consumed.fetch_add(1, Ordering::SeqCst);
        Some(d)
    }

    /// Blocks until a message arrives or the bus closes.
    pub fn recv(&self) -> Result<Delivery<T>> {
        let mut s = self.queue.state.lock();
        loop {
            if let Some(d) = self.take(&mut s) {
                return Ok(d);
            }
            if s.closed {
                return Err(Error::Closed);
            }
            self.queue.ready.wait(&mut s);
        }
    }

    /// `Ok(None)` on timeout.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Delivery<T>>> {
        let deadline = Instant::now() + timeout;
        let mut s = self.queue.state.lock();
        loop {
            if let Some(d) = self.take(&mut s) {
                return Ok(Some(d));
            }
            if s.closed {
                return Err(Error::Closed);
            }
            if self.queue.ready.wait_until(&mut s, deadline).timed_out() {
                return Ok(self.take(&mut s));
            }
        }
    }

    pub fn try_recv(&self) -> Result<Option<Delivery<T>>> {
        let mut s = self.queue.state.lock();
        match self.take(&mut s) {
            Some(d) => Ok(Some(d)),
            None if s.closed => Err(Error::Closed),
            None => Ok(None),
        }
    }

    /// Newest-wins receive: waits up to `timeout` for anything, then returns
    /// the most recent message and discards (counts as dropped) the older
    /// ones still queued.
    pub fn latest(&self, timeout: Duration) -> Result<Option<Delivery<T>>> {
        let deadline = Instant::now() + timeout;
        let mut s = self.queue.state.lock();
        while s.items.is_empty() {
            if s.closed {
                return Err(Error::Closed);
            }
            if self.queue.ready.wait_until(&mut s, deadline).timed_out() && s.items.is_empty() {
                return Ok(None);
            }
        }
        let newest = s.items.pop_back().expect("queue is not empty");
        let stale = s.items.len() as u64;
        s.items.clear();
        self.queue.note_dropped(stale);
        self.queue.counters.consumed.fetch_add(1, Ordering::SeqCst);
        Ok(Some(newest))
    }
}

impl<T: Clone + Send> Drop for Subscriber<T> {
    fn drop(&mut self) {
        let mut topics = self.bus.inner.topics.lock();
        if let Some(t) = topics.get_mut(&self.topic) {
            t.subscribers.retain(|(id, _)| *id != self.id);
        }
        drop(topics);
        let mut s = self.queue.state.lock();
        let n = s.items.len() as u64;
        s.items.clear();
        self.queue.note_dropped(n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    #[test]
    fn late_subscribers_miss_earlier_messages() {
        let bus: Bus<u32> = Bus::new(8);
        let p = bus.publisher("t").unwrap();
        p.publish(1).unwrap();
        let s = bus.subscribe("t").unwrap();
        p.publish(2).unwrap();
        let d = s.recv().unwrap();
        assert_eq!((d.payload, d.seq), (2, 1));
        assert_eq!(s.try_recv().unwrap(), None);
        assert_eq!(bus.stats("t").unrouted, 1);
    }

    #[test]
    fn one_publisher_per_topic() {
        let bus: Bus<u32> = Bus::default();
        let p = bus.publisher("t").unwrap();
        assert!(bus.publisher("t").is_err());
        drop(p);
        assert!(bus.publisher("t").is_ok());
    }

    #[test]
    fn overflow_drops_oldest() {
        let bus: Bus<u32> = Bus::new(3);
        let p = bus.publisher("t").unwrap();
        let s = bus.subscribe("t").unwrap();
        for i in 0..5 {
            p.publish(i).unwrap();
        }
        let got: Vec<u32> = (0..3).map(|_| s.recv().unwrap().payload).collect();
        assert_eq!(got, [2, 3, 4]);
        assert_eq!(s.dropped(), 2);
    }

    #[test]
    fn latest_discards_stale() {
        let bus: Bus<u32> = Bus::new(8);
        let p = bus.publisher("t").unwrap();
        let s = bus.subscribe("t").unwrap();
        for i in 0..4 {
            p.publish(i).unwrap();
        }
        let d = s.latest(Duration::from_millis(10)).unwrap().unwrap();
        assert_eq!(d.payload, 3);
        let st = bus.stats("t");
        assert_eq!((st.consumed, st.dropped), (1, 3));
        assert_eq!(s.latest(Duration::from_millis(1)).unwrap(), None);
    }

    #[test]
    fn shutdown_rejects_and_reconciles() {
        let bus: Bus<u32> = Bus::new(4);
        let p = bus.publisher("t").unwrap();
        let a = bus.subscribe("t").unwrap();
        let b = bus.subscribe("t").unwrap();
        for i in 0..6 {
            p.publish(i).unwrap();
        }
        a.recv().unwrap();
        let idle = bus.subscribe("u").unwrap();
        let waiter = thread::spawn(move || idle.recv());
        thread::sleep(Duration::from_millis(20));
        assert!(bus.shutdown());
        assert!(!bus.shutdown());
        assert!(matches!(waiter.join().unwrap(), Err(Error::Closed)));
        assert!(matches!(p.publish(9), Err(Error::Closed)));
        assert!(matches!(b.recv(), Err(Error::Closed)));
        let st = bus.stats("t");
        assert_eq!(st.published, 6);
        assert_eq!(st.delivered, 12);
        assert_eq!(st.delivered, st.consumed + st.dropped);
        assert_eq!(st.pending(), 0);
    }

    #[test]
    fn per_topic_order_across_threads() {
        let bus: Bus<u64> = Bus::new(1024);
        let s = bus.subscribe("t").unwrap();
        let p = bus.publisher("t").unwrap();
        let h = thread::spawn(move || {
            for i in 0..500 {
                p.publish(i).unwrap();
            }
        });
        let got: Vec<u64> = (0..500).map(|_| s.recv().unwrap().payload).collect();
        h.join().unwrap();
        assert!(got.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(got.len(), 500);
    }
}
