//! Bounded hand-off where the writer never blocks and the reader keeps only
//! the newest item.

use crossbeam_channel::{bounded, Receiver, Sender, TryRecvError, TrySendError};

/// Creates a take-latest channel holding at most `capacity` items.
pub fn latest_channel<T>(capacity: usize) -> (LatestSender<T>, LatestReceiver<T>) {
    assert!(capacity > 0, "take-latest channel needs capacity");
    let (tx, rx) = bounded(capacity);
    (
        LatestSender {
            tx,
            evict: rx.clone(),
        },
        LatestReceiver { rx },
    )
}

pub struct LatestSender<T> {
    tx: Sender<T>,
    // Used only to drop the oldest item when the channel is full.
    evict: Receiver<T>,
}

impl<T> Clone for LatestSender<T> {
    fn clone(&self) -> Self {
        Self {
            tx: self.tx.clone(),
            evict: self.evict.clone(),
        }
    }
}

impl<T> LatestSender<T> {
    /// Enqueues `item`, discarding the oldest queued item if full.
    /// Returns how many items were discarded.
    pub fn push(&self, mut item: T) -> usize {
        let mut dropped = 0;
        loop {
            match self.tx.try_send(item) {
                Ok(()) => return dropped,
                Err(TrySendError::Full(back)) => {
                    if self.evict.try_recv().is_ok() {
                        dropped += 1;
                    }
                    item = back;
                }
                // Unreachable while `evict` is alive.
                Err(TrySendError::Disconnected(_)) => return dropped,
            }
        }
    }

    pub fn len(&self) -> usize {
        self.tx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tx.is_empty()
    }
}

pub struct LatestReceiver<T> {
    rx: Receiver<T>,
}

/// Outcome of one drain.
#[derive(Debug, PartialEq)]
pub struct Drained<T> {
    /// Newest queued item, if any.
    pub latest: Option<T>,
    /// Items discarded in favour of `latest`.
    pub discarded: usize,
    /// All senders are gone.
    pub closed: bool,
}

impl<T> LatestReceiver<T> {
    /// Empties the channel and returns only its newest item.
    pub fn drain_latest(&self) -> Drained<T> {
        let mut latest = None;
        let mut seen = 0usize;
        loop {
            match self.rx.try_recv() {
                Ok(v) => {
                    latest = Some(v);
                    seen += 1;
                }
                Err(e) => {
                    return Drained {
                        latest,
                        discarded: seen.saturating_sub(1),
                        closed: e == TryRecvError::Disconnected,
                    }
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.rx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rx.is_empty()
    }
}

/// Shutdown signal: raised by dropping the [`StopHandle`].
#[derive(Clone)]
pub struct StopSignal {
    rx: Receiver<()>,
}

pub struct StopHandle {
    _tx: Sender<()>,
}

pub fn stop_signal() -> (StopHandle, StopSignal) {
    let (tx, rx) = bounded(0);
    (StopHandle { _tx: tx }, StopSignal { rx })
}

impl StopHandle {
    pub fn raise(self) {}
}

impl StopSignal {
    pub fn is_raised(&self) -> bool {
        matches!(self.rx.try_recv(), Err(TryRecvError::Disconnected))
    }

    /// Sleeps up to `seconds`; returns early with `true` once raised.
    pub fn wait(&self, seconds: f64) -> bool {
        if seconds <= 0.0 {
            return self.is_raised();
        }
        let d = std::time::Duration::from_secs_f64(seconds);
        matches!(
            self.rx.recv_timeout(d),
            Err(crossbeam_channel::RecvTimeoutError::Disconnected)
        )
    }

    pub(crate) fn receiver(&self) -> &Receiver<()> {
        &self.rx
    }
}
