use super::subscription::{Notification, NotifyTarget};
use parking_lot::{Condvar, Mutex};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

#[derive(Debug, Default)]
pub struct DeliveryStats {
    pub delivered: AtomicU64,
    pub failed: AtomicU64,
}

#[derive(Default)]
struct Pending {
    count: Mutex<usize>,
    drained: Condvar,
}

/// One FIFO worker per subscription: notifications leave in enqueue order.
pub(crate) struct Dispatcher {
    tx: Option<mpsc::Sender<Notification>>,
    pending: Arc<Pending>,
    pub(crate) stats: Arc<DeliveryStats>,
    worker: Option<JoinHandle<()>>,
}

impl Dispatcher {
    pub(crate) fn spawn(sub_id: &str, target: NotifyTarget) -> Self {
        let (tx, rx) = mpsc::channel::<Notification>();
        let pending = Arc::new(Pending::default());
        let stats = Arc::new(DeliveryStats::default());
        let worker = {
            let pending = Arc::clone(&pending);
            let stats = Arc::clone(&stats);
            std::thread::Builder::new()
                .name(format!("notify-{sub_id}"))
                .spawn(move || {
                    for n in rx {
                        let ok = deliver(&target, n);
                        let counter = if ok { &stats.delivered } else { &stats.failed };
                        counter.fetch_add(1, Ordering::SeqCst);
                        let mut c = pending.count.lock();
                        *c -= 1;
                        if *c == 0 {
                            pending.drained.notify_all();
                        }
                    }
                })
                .expect("spawn notification worker")
        };
        Dispatcher { tx: Some(tx), pending, stats, worker: Some(worker) }
    }

    pub(crate) fn enqueue(&self, n: Notification) {
        if let Some(tx) = &self.tx {
            *self.pending.count.lock() += 1;
            if tx.send(n).is_err() {
                *self.pending.count.lock() -= 1;
            }
        }
    }

    /// Waiter usable after the broker lock has been released.
    pub(crate) fn drain_handle(&self) -> DrainHandle {
        DrainHandle(Arc::clone(&self.pending))
    }
}

pub(crate) struct DrainHandle(Arc<Pending>);

impl DrainHandle {
    pub(crate) fn wait(&self, deadline: Instant) -> bool {
        let mut c = self.0.count.lock();
        while *c > 0 {
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            self.0.drained.wait_for(&mut c, deadline - now);
        }
        true
    }
}

impl Drop for Dispatcher {
    fn drop(&mut self) {
        // closing the channel lets the worker drain what is queued, then exit
        self.tx.take();
        if let Some(w) = self.worker.take() {
            if w.thread().id() != std::thread::current().id() {
                let _ = w.join();
            }
        }
    }
}

fn deliver(target: &NotifyTarget, n: Notification) -> bool {
    match target {
        NotifyTarget::Sink(sink) => {
            sink.deliver(n);
            true
        }
        NotifyTarget::Http(url) => match crate::http::post_json(url, &n.to_wire()) {
            Ok(_) => true,
            Err(e) => {
                log::warn!("notification {} to {url} failed: {e}", n.subscription_id);
                false
            }
        },
    }
}

pub(crate) const DEFAULT_DRAIN: Duration = Duration::from_secs(10);
