//! Typed resource slots and job execution.
//!
//! A [`ResourcePool`] hands out slots atomically; a [`Runner`] launches the
//! user script on a held slot, captures its output under a per-job directory
//! and reports a [`crate::space::JobResult`] through a one-shot callback after
//! the slot has been released.

mod env;
mod protocol;
mod runner;

pub use env::{EnvConfig, RemoteConfig, ResourceDecl};
pub use protocol::{format_result_line, parse_result_line, ProtocolError, RESULT_PREFIX};
pub use runner::{job_dir, submit_result, RunningJob, Runner, PASSIVE_RESULT_FILE};

use crate::space::ResourceType;
use std::fmt;
use std::str::FromStr;
use std::sync::{Condvar, Mutex};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ResourceError {
    #[error("no {0} resources are declared in the environment")]
    NoSuchType(ResourceType),
    #[error("unknown resource id {0}")]
    UnknownSlot(u64),
    #[error("resource {0} is not busy")]
    NotBusy(u64),
    #[error("environment file: {0}")]
    EnvFile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotStatus {
    Free,
    Busy,
    Disabled,
}

impl SlotStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SlotStatus::Free => "free",
            SlotStatus::Busy => "busy",
            SlotStatus::Disabled => "disabled",
        }
    }
}

impl FromStr for SlotStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "free" => Ok(SlotStatus::Free),
            "busy" => Ok(SlotStatus::Busy),
            "disabled" => Ok(SlotStatus::Disabled),
            other => Err(format!("unknown slot status `{other}`")),
        }
    }
}

impl fmt::Display for SlotStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceSlot {
    pub rid: u64,
    pub rtype: ResourceType,
    /// Device index for gpu, host for node, a local token otherwise.
    pub locator: String,
    pub status: SlotStatus,
}

#[derive(Debug, Default)]
struct PoolInner {
    slots: Vec<ResourceSlot>,
    busy: usize,
    max_busy: usize,
}

/// Thread-safe slot allocator.
#[derive(Debug, Default)]
pub struct ResourcePool {
    inner: Mutex<PoolInner>,
    released: Condvar,
}

impl ResourcePool {
    /// Slots get ids `1..=n` in declaration order.
    pub fn new(decls: &[ResourceDecl]) -> Self {
        let slots = decls
            .iter()
            .enumerate()
            .map(|(i, d)| ResourceSlot {
                rid: i as u64 + 1,
                rtype: d.rtype,
                locator: d.locator.clone(),
                status: SlotStatus::Free,
            })
            .collect();
        Self { inner: Mutex::new(PoolInner { slots, busy: 0, max_busy: 0 }), released: Condvar::new() }
    }

    pub fn from_env(env: &EnvConfig) -> Self {
        Self::new(&env.resources)
    }

    /// Takes a free slot of `rtype`, marking it busy. `Ok(None)` when all are taken.
    pub fn get_available(&self, rtype: ResourceType) -> Result<Option<ResourceSlot>, ResourceError> {
        let mut inner = self.inner.lock().expect("pool lock");
        if !inner.slots.iter().any(|s| s.rtype == rtype) {
            return Err(ResourceError::NoSuchType(rtype));
        }
        let Some(slot) = inner.slots.iter_mut().find(|s| s.rtype == rtype && s.status == SlotStatus::Free) else {
            return Ok(None);
        };
        slot.status = SlotStatus::Busy;
        let taken = slot.clone();
        inner.busy += 1;
        inner.max_busy = inner.max_busy.max(inner.busy);
        Ok(Some(taken))
    }

    /// Like [`Self::get_available`] but blocks up to `timeout` for a release.
    pub fn wait_available(
        &self,
        rtype: ResourceType,
        timeout: Duration,
    ) -> Result<Option<ResourceSlot>, ResourceError> {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            if let Some(s) = self.get_available(rtype)? {
                return Ok(Some(s));
            }
            let now = std::time::Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            let guard = self.inner.lock().expect("pool lock");
            let _unused = self.released.wait_timeout(guard, deadline - now).expect("pool lock");
        }
    }

    pub fn release(&self, rid: u64) -> Result<(), ResourceError> {
        let mut inner = self.inner.lock().expect("pool lock");
        let slot = inner.slots.iter_mut().find(|s| s.rid == rid).ok_or(ResourceError::UnknownSlot(rid))?;
        if slot.status != SlotStatus::Busy {
            return Err(ResourceError::NotBusy(rid));
        }
        slot.status = SlotStatus::Free;
        inner.busy -= 1;
        drop(inner);
        self.released.notify_all();
        Ok(())
    }

    /// Disables a free slot; a busy one is disabled once released.
    pub fn disable(&self, rid: u64) -> Result<(), ResourceError> {
        let mut inner = self.inner.lock().expect("pool lock");
        let slot = inner.slots.iter_mut().find(|s| s.rid == rid).ok_or(ResourceError::UnknownSlot(rid))?;
        if slot.status == SlotStatus::Busy {
            return Err(ResourceError::NotBusy(rid));
        }
        slot.status = SlotStatus::Disabled;
        Ok(())
    }

    pub fn slots(&self) -> Vec<ResourceSlot> {
        self.inner.lock().expect("pool lock").slots.clone()
    }

    pub fn count(&self, rtype: ResourceType, status: SlotStatus) -> usize {
        let inner = self.inner.lock().expect("pool lock");
        inner.slots.iter().filter(|s| s.rtype == rtype && s.status == status).count()
    }

    pub fn busy(&self) -> usize {
        self.inner.lock().expect("pool lock").busy
    }

    /// Highest number of simultaneously busy slots seen.
    pub fn max_busy(&self) -> usize {
        self.inner.lock().expect("pool lock").max_busy
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Barrier};

    fn decls(rtype: ResourceType, n: usize) -> Vec<ResourceDecl> {
        (0..n).map(|i| ResourceDecl { rtype, locator: i.to_string() }).collect()
    }

    #[test]
    fn counting() {
        let pool = ResourcePool::new(&decls(ResourceType::Gpu, 2));
        let s = pool.get_available(ResourceType::Gpu).unwrap().unwrap();
        assert_eq!(s.status, SlotStatus::Busy);
        assert_eq!(pool.count(ResourceType::Gpu, SlotStatus::Free), 1);
        assert_eq!(pool.get_available(ResourceType::Cpu), Err(ResourceError::NoSuchType(ResourceType::Cpu)));
        pool.get_available(ResourceType::Gpu).unwrap().unwrap();
        assert_eq!(pool.get_available(ResourceType::Gpu).unwrap(), None);
        pool.release(s.rid).unwrap();
        assert_eq!(pool.release(s.rid), Err(ResourceError::NotBusy(s.rid)));
        assert_eq!(pool.max_busy(), 2);
    }

    #[test]
    fn disabled_slots_are_never_allocated() {
        let pool = ResourcePool::new(&decls(ResourceType::Cpu, 1));
        pool.disable(1).unwrap();
        assert_eq!(pool.get_available(ResourceType::Cpu).unwrap(), None);
    }

    #[test]
    fn concurrent_requests_for_one_slot() {
        for _ in 0..50 {
            let pool = Arc::new(ResourcePool::new(&decls(ResourceType::Cpu, 1)));
            let barrier = Arc::new(Barrier::new(8));
            let handles: Vec<_> = (0..8)
                .map(|_| {
                    let (pool, barrier) = (pool.clone(), barrier.clone());
                    std::thread::spawn(move || {
                        barrier.wait();
                        pool.get_available(ResourceType::Cpu).unwrap().is_some()
                    })
                })
                .collect();
            let wins = handles.into_iter().map(|h| h.join().unwrap()).filter(|w| *w).count();
            assert_eq!(wins, 1);
        }
    }

    #[test]
    fn wait_available_wakes_on_release() {
        let pool = Arc::new(ResourcePool::new(&decls(ResourceType::Cpu, 1)));
        let s = pool.get_available(ResourceType::Cpu).unwrap().unwrap();
        let p2 = pool.clone();
        let t = std::thread::spawn(move || p2.wait_available(ResourceType::Cpu, Duration::from_secs(10)));
        std::thread::sleep(Duration::from_millis(20));
        pool.release(s.rid).unwrap();
        assert!(t.join().unwrap().unwrap().is_some());
    }
}
