//! Per-node admission control and in-flight instrumentation.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

/// Counting gate bounding the simultaneous invocations of one node.
#[derive(Debug)]
pub struct SlotGate {
    cap: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    max_admitted: AtomicUsize,
}

/// Holds one slot of a [`SlotGate`]; dropping it releases the slot.
#[derive(Debug)]
pub struct SlotPermit {
    gate: Arc<SlotGate>,
}

impl SlotGate {
    pub fn new(cap: usize) -> Arc<Self> {
        Arc::new(SlotGate {
            cap: cap.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            max_admitted: AtomicUsize::new(0),
        })
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Blocks until a slot is free.
    pub fn acquire(self: &Arc<Self>) -> SlotPermit {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap();
        }
        self.admit(&mut n)
    }

    pub fn try_acquire(self: &Arc<Self>) -> Option<SlotPermit> {
        let mut n = self.in_flight.lock().unwrap();
        (*n < self.cap).then(|| self.admit(&mut n))
    }

    fn admit(self: &Arc<Self>, n: &mut usize) -> SlotPermit {
        *n += 1;
        self.max_admitted.fetch_max(*n, Ordering::Relaxed);
        SlotPermit { gate: Arc::clone(self) }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().unwrap()
    }

    pub fn max_admitted(&self) -> usize {
        self.max_admitted.load(Ordering::Relaxed)
    }

    fn release(&self) {
        let mut n = self.in_flight.lock().unwrap();
        *n -= 1;
        self.freed.notify_one();
    }
}

impl Drop for SlotPermit {
    fn drop(&mut self) {
        self.gate.release();
    }
}

/// Measures how many operator applications actually overlap.
#[derive(Debug, Default)]
pub struct InFlightGauge {
    current: AtomicUsize,
    max: AtomicUsize,
}

pub struct GaugeGuard<'a>(&'a InFlightGauge);

impl InFlightGauge {
    pub fn enter(&self) -> GaugeGuard<'_> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.max.fetch_max(now, Ordering::SeqCst);
        GaugeGuard(self)
    }

    pub fn max(&self) -> usize {
        self.max.load(Ordering::SeqCst)
    }
}

impl Drop for GaugeGuard<'_> {
    fn drop(&mut self) {
        self.0.current.fetch_sub(1, Ordering::SeqCst);
    }
}
