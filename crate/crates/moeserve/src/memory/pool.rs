//! Fixed-size physical page pool with free-list reuse.
//!
//! Stands in for device memory: fixed page granularity, a hard capacity, and
//! a strong preference for reusing previously created pages over creating
//! new ones (on a real device, creation is the expensive mmap/registration
//! step). Released pages keep their backing memory until [`trim`] is called
//! explicitly — there is deliberately no automatic reclamation, so steady
//! load/evict churn settles into pure reuse.
//!
//! [`trim`]: PhysicalMemoryPool::trim

use crate::error::{Error, Result};

/// Handle to one physical page. Indexes are stable for the life of the pool.
pub type PageId = usize;

#[derive(Debug)]
pub struct PhysicalMemoryPool {
    page_size: usize,
    capacity_pages: usize,
    /// `Some` = physically backed. Trimmed pages keep their ID but drop the
    /// backing allocation.
    slabs: Vec<Option<Box<[u8]>>>,
    /// Backed but unreferenced pages, available for zero-cost reuse (LIFO).
    free: Vec<PageId>,
    /// Trimmed IDs: reusable handles whose backing must be recreated.
    vacant: Vec<PageId>,
    created: u64,
    reused: u64,
    trimmed: u64,
}

/// Point-in-time pool counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct PoolStats {
    pub page_size: usize,
    pub capacity_pages: usize,
    /// Pages currently holding data for a mapped range.
    pub in_use: usize,
    /// Backed pages waiting on the free list.
    pub free: usize,
    /// Lifetime count of fresh page creations.
    pub created: u64,
    /// Lifetime count of free-list reuses.
    pub reused: u64,
    /// Lifetime count of pages released back by `trim`.
    pub trimmed: u64,
}

impl PhysicalMemoryPool {
    pub fn new(page_size: usize, capacity_pages: usize) -> Result<Self> {
        if page_size == 0 {
            return Err(Error::Config("page_size must be > 0".into()));
        }
        Ok(PhysicalMemoryPool {
            page_size,
            capacity_pages,
            slabs: Vec::new(),
            free: Vec::new(),
            vacant: Vec::new(),
            created: 0,
            reused: 0,
            trimmed: 0,
        })
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    /// Pages currently referenced by some mapping.
    pub fn in_use(&self) -> usize {
        let backed = self.slabs.iter().filter(|s| s.is_some()).count();
        backed - self.free.len()
    }

    /// Pages that could still be handed out before exhaustion.
    pub fn available(&self) -> usize {
        self.capacity_pages - self.in_use()
    }

    /// Allocate exactly `n` pages or fail without side effects.
    ///
    /// Reuse order: free list first (backed, contents stale), then trimmed
    /// IDs, then brand-new IDs. Only the last two create memory.
    pub fn allocate(&mut self, n: usize) -> Result<Vec<PageId>> {
        if n > self.available() {
            return Err(Error::PoolExhausted {
                requested: n,
                available: self.available(),
            });
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if let Some(id) = self.free.pop() {
                self.reused += 1;
                out.push(id);
            } else if let Some(id) = self.vacant.pop() {
                self.slabs[id] = Some(vec![0u8; self.page_size].into_boxed_slice());
                self.created += 1;
                out.push(id);
            } else {
                let id = self.slabs.len();
                self.slabs
                    .push(Some(vec![0u8; self.page_size].into_boxed_slice()));
                self.created += 1;
                out.push(id);
            }
        }
        Ok(out)
    }

    /// Return pages to the free list. They stay backed for reuse.
    pub fn release(&mut self, pages: impl IntoIterator<Item = PageId>) {
        for id in pages {
            debug_assert!(self.slabs[id].is_some(), "releasing a trimmed page");
            debug_assert!(!self.free.contains(&id), "double release of page {}", id);
            self.free.push(id);
        }
    }

    /// Drop the backing memory of every free page. Explicit-only; nothing in
    /// the allocation path ever trims.
    pub fn trim(&mut self) -> usize {
        let n = self.free.len();
        for id in self.free.drain(..) {
            self.slabs[id] = None;
            self.vacant.push(id);
        }
        self.trimmed += n as u64;
        n
    }

    pub fn page(&self, id: PageId) -> &[u8] {
        self.slabs[id].as_deref().expect("page is backed")
    }

    pub fn page_mut(&mut self, id: PageId) -> &mut [u8] {
        self.slabs[id].as_deref_mut().expect("page is backed")
    }

    pub fn stats(&self) -> PoolStats {
        PoolStats {
            page_size: self.page_size,
            capacity_pages: self.capacity_pages,
            in_use: self.in_use(),
            free: self.free.len(),
            created: self.created,
            reused: self.reused,
            trimmed: self.trimmed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocate_release_reuse() {
        let mut pool = PhysicalMemoryPool::new(64, 10).unwrap();
        let a = pool.allocate(4).unwrap();
        assert_eq!(pool.stats().created, 4);
        assert_eq!(pool.in_use(), 4);
        pool.release(a.iter().copied().take(2));
        assert_eq!(pool.in_use(), 2);
        // Next allocation must come from the free list, newest first.
        let b = pool.allocate(2).unwrap();
        assert_eq!(pool.stats().created, 4, "no new pages while free exist");
        assert_eq!(pool.stats().reused, 2);
        assert_eq!(b, vec![a[1], a[0]]);
    }

    #[test]
    fn allocation_is_all_or_nothing() {
        let mut pool = PhysicalMemoryPool::new(64, 3).unwrap();
        let _held = pool.allocate(2).unwrap();
        let err = pool.allocate(2).unwrap_err();
        match err {
            Error::PoolExhausted {
                requested,
                available,
            } => {
                assert_eq!((requested, available), (2, 1));
            }
            other => panic!("unexpected error {:?}", other),
        }
        // The failed call must not have consumed the last page.
        assert_eq!(pool.available(), 1);
        pool.allocate(1).unwrap();
    }

    #[test]
    fn trim_only_touches_free_pages() {
        let mut pool = PhysicalMemoryPool::new(32, 8).unwrap();
        let pages = pool.allocate(5).unwrap();
        pool.release(pages[3..].iter().copied());
        assert_eq!(pool.trim(), 2);
        assert_eq!(pool.stats().trimmed, 2);
        assert_eq!(pool.in_use(), 3);
        // In-use pages stay readable after trim.
        let _ = pool.page(pages[0]);
        // Re-allocating recreates trimmed pages.
        let again = pool.allocate(2).unwrap();
        assert_eq!(pool.stats().created, 7);
        for id in again {
            assert_eq!(pool.page(id).len(), 32);
        }
    }

    #[test]
    fn pages_are_writable_at_page_size() {
        let mut pool = PhysicalMemoryPool::new(16, 2).unwrap();
        let p = pool.allocate(1).unwrap()[0];
        pool.page_mut(p)[15] = 0xAB;
        assert_eq!(pool.page(p)[15], 0xAB);
    }
}
