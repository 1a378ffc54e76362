//! Timing primitives behind the performance emulation: precise non-blocking
//! waits for injected hop latency, and per-node CPU cores that make emulated
//! work occupy the node.

use std::collections::BTreeMap;
use std::future::Future;
use std::pin::Pin;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;
use std::task::{Context, Poll, Waker};
use std::thread::Thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use crate::perf::CpuModel;

/// Waits longer than this go to the tokio timer (millisecond wheel); shorter
/// ones to the microsecond timer thread.
const COARSE_SLEEP_MIN: Duration = Duration::from_millis(2);

/// Suspends the calling task until `deadline` without holding up other
/// tasks or burning the CPU.
pub async fn wait_until(deadline: Instant) {
    let now = Instant::now();
    if deadline <= now {
        return;
    }
    if deadline - now > COARSE_SLEEP_MIN {
        // Wake a little early and let the fine timer finish the job.
        tokio::time::sleep_until((deadline - Duration::from_millis(1)).into()).await;
    }
    FineSleep::new(deadline).await
}

pub async fn apply_delay(d: Duration) {
    if d.is_zero() {
        return;
    }
    wait_until(Instant::now() + d).await;
}

/// Burns the calling thread for `d`.
pub fn spin_for(d: Duration) {
    let end = Instant::now() + d;
    while Instant::now() < end {
        std::hint::spin_loop();
    }
}

/// One emulated CPU core.
///
/// In [`CpuModel::Virtual`] the core is a timeline: each charge is queued
/// behind the work already reserved on it, and the caller resumes when its
/// own slice ends. Concurrent callers therefore see the queueing of a single
/// busy core, while the physical machine stays free for other nodes.
/// [`CpuModel::Spin`] burns the calling thread instead.
#[derive(Debug)]
pub struct NodeCpu {
    model: CpuModel,
    busy_until: Mutex<Instant>,
    busy_ns: AtomicU64,
}

impl NodeCpu {
    pub fn new(model: CpuModel) -> Self {
        NodeCpu {
            model,
            busy_until: Mutex::new(Instant::now()),
            busy_ns: AtomicU64::new(0),
        }
    }

    /// Reserves `cost` on this core and returns when it has been served.
    pub async fn charge(&self, cost: Duration) {
        self.charge_after(Instant::now(), cost).await
    }

    /// Like [`charge`](Self::charge) for work that cannot start before
    /// `ready` (e.g. a frame still in flight). The slot is booked right away,
    /// so a single wait covers both the delay and the work.
    pub async fn charge_after(&self, ready: Instant, cost: Duration) {
        if cost.is_zero() {
            return wait_until(ready).await;
        }
        self.busy_ns
            .fetch_add(cost.as_nanos() as u64, Ordering::Relaxed);
        match self.model {
            CpuModel::Virtual => {
                let end = self.reserve_after(ready, cost);
                wait_until(end).await;
            }
            CpuModel::Spin => {
                wait_until(ready).await;
                spin_for(cost)
            }
        }
    }

    /// Books `cost` at the tail of the timeline and returns its end.
    pub fn reserve(&self, cost: Duration) -> Instant {
        self.reserve_after(Instant::now(), cost)
    }

    fn reserve_after(&self, ready: Instant, cost: Duration) -> Instant {
        let mut busy = self.busy_until.lock();
        let start = (*busy).max(ready).max(Instant::now());
        *busy = start + cost;
        *busy
    }

    /// Total emulated work charged so far.
    pub fn busy_time(&self) -> Duration {
        Duration::from_nanos(self.busy_ns.load(Ordering::Relaxed))
    }

    pub fn model(&self) -> CpuModel {
        self.model
    }
}

/// Microsecond-resolution timer: one thread sleeping until the earliest
/// registered deadline. Parked waits cost no CPU, which matters when the
/// emulated nodes share a core with other processes.
struct FineTimer {
    entries: Mutex<BTreeMap<(Instant, u64), Waker>>,
    thread: Thread,
}

static FINE_TIMER: OnceLock<FineTimer> = OnceLock::new();
static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn fine_timer() -> &'static FineTimer {
    FINE_TIMER.get_or_init(|| {
        let thread = std::thread::Builder::new()
            .name("snickv-timer".into())
            .spawn(timer_loop)
            .expect("spawn timer thread");
        FineTimer {
            entries: Mutex::new(BTreeMap::new()),
            thread: thread.thread().clone(),
        }
    })
}

fn timer_loop() {
    reduce_timer_slack();
    let timer = loop {
        // The spawner publishes the timer right after spawning us.
        if let Some(t) = FINE_TIMER.get() {
            break t;
        }
        std::thread::yield_now();
    };
    let mut due = Vec::new();
    loop {
        let next = {
            let mut entries = timer.entries.lock();
            let now = Instant::now();
            while let Some(entry) = entries.first_entry() {
                if entry.key().0 > now {
                    break;
                }
                due.push(entry.remove());
            }
            entries.keys().next().map(|k| k.0)
        };
        for w in due.drain(..) {
            w.wake();
        }
        match next {
            Some(at) => std::thread::park_timeout(at.saturating_duration_since(Instant::now())),
            None => std::thread::park(),
        }
    }
}

/// Linux rounds sleeps up by the thread's timer slack (50 us by default),
/// far too coarse for emulated microsecond costs.
fn reduce_timer_slack() {
    #[cfg(target_os = "linux")]
    // SAFETY: PR_SET_TIMERSLACK only changes this thread's slack value.
    unsafe {
        libc::prctl(libc::PR_SET_TIMERSLACK, 1_000 as libc::c_ulong);
    }
}

struct FineSleep {
    deadline: Instant,
    key: Option<(Instant, u64)>,
}

impl FineSleep {
    fn new(deadline: Instant) -> Self {
        FineSleep {
            deadline,
            key: None,
        }
    }
}

impl Future for FineSleep {
    type Output = ();

    fn poll(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<()> {
        let timer = fine_timer();
        if Instant::now() >= self.deadline {
            if let Some(key) = self.key.take() {
                timer.entries.lock().remove(&key);
            }
            return Poll::Ready(());
        }
        let deadline = self.deadline;
        let key = *self
            .key
            .get_or_insert_with(|| (deadline, NEXT_ID.fetch_add(1, Ordering::Relaxed)));
        let earliest = {
            let mut entries = timer.entries.lock();
            entries.insert(key, cx.waker().clone());
            entries.keys().next() == Some(&key)
        };
        if earliest {
            timer.thread.unpark();
        }
        Poll::Pending
    }
}

impl Drop for FineSleep {
    fn drop(&mut self) {
        if let Some(key) = self.key.take() {
            if let Some(t) = FINE_TIMER.get() {
                t.entries.lock().remove(&key);
            }
        }
    }
}
