//! Virtual weight tensor: slot-addressed, page-backed on demand.
//!
//! One instance covers one layer's expert dimension: `num_slots` fixed-size
//! slots laid out contiguously in a virtual byte space. Mapping a slot backs
//! exactly the virtual pages its byte range touches; a page shared by two
//! slot ranges is backed once and reference-counted, so fractional-page
//! expert sizes never double-allocate the straddled page and padding-only
//! pages are never backed at all.

use crate::error::{Error, Result};
use crate::memory::pool::{PageId, PhysicalMemoryPool};
use std::ops::Range;

/// Virtual page indexes covered by the byte interval `[start, end)`:
/// `floor(start / page) ..= floor((end - 1) / page)`, empty when the
/// interval is empty. A zero-length interval touches no pages.
pub fn pages_for_range(start: usize, end: usize, page_size: usize) -> Range<usize> {
    debug_assert!(page_size > 0);
    if end <= start {
        return 0..0;
    }
    let first = start / page_size;
    let last = (end - 1) / page_size;
    first..last + 1
}

#[derive(Debug)]
pub struct VirtualWeightTensor {
    /// Label for fault reports only (the owning layer index).
    layer: usize,
    num_slots: usize,
    slot_bytes: usize,
    page_size: usize,
    /// Virtual page -> physical page, `None` while unbacked.
    page_table: Vec<Option<PageId>>,
    /// Per virtual page: number of mapped slots whose byte range touches it.
    refcounts: Vec<u32>,
    mapped_slots: Vec<bool>,
}

impl VirtualWeightTensor {
    pub fn new(layer: usize, num_slots: usize, slot_bytes: usize, page_size: usize) -> Result<Self> {
        if page_size == 0 {
            return Err(Error::Config("page_size must be > 0".into()));
        }
        let total_bytes = num_slots * slot_bytes;
        let virtual_pages = total_bytes.div_ceil(page_size);
        Ok(VirtualWeightTensor {
            layer,
            num_slots,
            slot_bytes,
            page_size,
            page_table: vec![None; virtual_pages],
            refcounts: vec![0; virtual_pages],
            mapped_slots: vec![false; num_slots],
        })
    }

    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    pub fn slot_bytes(&self) -> usize {
        self.slot_bytes
    }

    pub fn num_virtual_pages(&self) -> usize {
        self.page_table.len()
    }

    pub fn is_mapped(&self, slot: usize) -> bool {
        self.mapped_slots[slot]
    }

    /// Virtual pages currently backed by physical memory.
    pub fn mapped_pages(&self) -> usize {
        self.page_table.iter().filter(|p| p.is_some()).count()
    }

    pub fn refcount(&self, virtual_page: usize) -> u32 {
        self.refcounts[virtual_page]
    }

    fn slot_range(&self, slot: usize) -> Range<usize> {
        slot * self.slot_bytes..(slot + 1) * self.slot_bytes
    }

    fn check_slot(&self, slot: usize) -> Result<()> {
        if slot >= self.num_slots {
            return Err(Error::Usage(format!(
                "slot {} out of range (layer {}, {} slots)",
                slot, self.layer, self.num_slots
            )));
        }
        Ok(())
    }

    /// Back the pages of a contiguous run of slots, sharing already-backed
    /// boundary pages. Each slot in the run counts as one loaded expert, so a
    /// page straddling two slots of the run starts at refcount 2.
    /// All-or-nothing: on pool exhaustion no state changes.
    pub fn map_range(
        &mut self,
        pool: &mut PhysicalMemoryPool,
        first_slot: usize,
        count: usize,
    ) -> Result<()> {
        if count == 0 {
            return Ok(());
        }
        self.check_slot(first_slot)?;
        self.check_slot(first_slot + count - 1)?;
        for slot in first_slot..first_slot + count {
            if self.mapped_slots[slot] {
                return Err(Error::Usage(format!(
                    "slot {} of layer {} is already mapped",
                    slot, self.layer
                )));
            }
        }
        let bytes = first_slot * self.slot_bytes..(first_slot + count) * self.slot_bytes;
        let need: Vec<usize> = pages_for_range(bytes.start, bytes.end, self.page_size)
            .filter(|&vp| self.refcounts[vp] == 0)
            .collect();
        // The pool either hands over every page or errors untouched, which
        // is what makes a failed load cleanly rollbackable.
        let fresh = pool.allocate(need.len())?;
        for (vp, phys) in need.iter().zip(fresh) {
            debug_assert!(self.page_table[*vp].is_none());
            self.page_table[*vp] = Some(phys);
        }
        for slot in first_slot..first_slot + count {
            let r = self.slot_range(slot);
            for vp in pages_for_range(r.start, r.end, self.page_size) {
                self.refcounts[vp] += 1;
            }
            self.mapped_slots[slot] = true;
        }
        Ok(())
    }

    /// Drop a slot run's claims on its pages; pages reaching refcount zero
    /// go back to the pool's free list.
    pub fn unmap_range(
        &mut self,
        pool: &mut PhysicalMemoryPool,
        first_slot: usize,
        count: usize,
    ) -> Result<()> {
        if count == 0 {
            return Ok(());
        }
        self.check_slot(first_slot)?;
        self.check_slot(first_slot + count - 1)?;
        for slot in first_slot..first_slot + count {
            if !self.mapped_slots[slot] {
                return Err(Error::Usage(format!(
                    "slot {} of layer {} is not mapped",
                    slot, self.layer
                )));
            }
        }
        let mut freed = Vec::new();
        for slot in first_slot..first_slot + count {
            let r = self.slot_range(slot);
            for vp in pages_for_range(r.start, r.end, self.page_size) {
                self.refcounts[vp] -= 1;
                if self.refcounts[vp] == 0 {
                    freed.push(self.page_table[vp].take().expect("mapped page was backed"));
                }
            }
            self.mapped_slots[slot] = false;
        }
        pool.release(freed);
        Ok(())
    }

    /// [`map_range`](Self::map_range) of a single slot.
    pub fn map_slot(&mut self, pool: &mut PhysicalMemoryPool, slot: usize) -> Result<()> {
        self.map_range(pool, slot, 1)
    }

    /// [`unmap_range`](Self::unmap_range) of a single slot.
    pub fn unmap_slot(&mut self, pool: &mut PhysicalMemoryPool, slot: usize) -> Result<()> {
        self.unmap_range(pool, slot, 1)
    }

    /// Copy `bytes` (exactly `slot_bytes` long) into a mapped slot,
    /// scattering across its physical pages.
    pub fn write_slot(
        &mut self,
        pool: &mut PhysicalMemoryPool,
        slot: usize,
        bytes: &[u8],
    ) -> Result<()> {
        self.check_slot(slot)?;
        if bytes.len() != self.slot_bytes {
            return Err(Error::Input(format!(
                "slot write is {} bytes, slot holds {}",
                bytes.len(),
                self.slot_bytes
            )));
        }
        if !self.mapped_slots[slot] {
            return Err(self.fault(slot, "write to unmapped slot"));
        }
        let range = self.slot_range(slot);
        for vp in pages_for_range(range.start, range.end, self.page_size) {
            let phys = self.page_table[vp].ok_or_else(|| self.fault(slot, "page not backed"))?;
            let page_start = vp * self.page_size;
            let copy_start = range.start.max(page_start);
            let copy_end = range.end.min(page_start + self.page_size);
            pool.page_mut(phys)[copy_start - page_start..copy_end - page_start]
                .copy_from_slice(&bytes[copy_start - range.start..copy_end - range.start]);
        }
        Ok(())
    }

    /// Gather a mapped slot's bytes into `out` (exactly `slot_bytes` long).
    pub fn read_slot(
        &self,
        pool: &PhysicalMemoryPool,
        slot: usize,
        out: &mut [u8],
    ) -> Result<()> {
        self.check_slot(slot)?;
        if out.len() != self.slot_bytes {
            return Err(Error::Input(format!(
                "slot read buffer is {} bytes, slot holds {}",
                out.len(),
                self.slot_bytes
            )));
        }
        if !self.mapped_slots[slot] {
            return Err(self.fault(slot, "read from unmapped slot"));
        }
        let range = self.slot_range(slot);
        for vp in pages_for_range(range.start, range.end, self.page_size) {
            let phys = self.page_table[vp].ok_or_else(|| self.fault(slot, "page not backed"))?;
            let page_start = vp * self.page_size;
            let copy_start = range.start.max(page_start);
            let copy_end = range.end.min(page_start + self.page_size);
            out[copy_start - range.start..copy_end - range.start]
                .copy_from_slice(&pool.page(phys)[copy_start - page_start..copy_end - page_start]);
        }
        Ok(())
    }

    fn fault(&self, slot: usize, reason: &str) -> Error {
        Error::MemoryFault {
            layer: self.layer,
            slot,
            reason: reason.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn page_cover_formula() {
        // Exact multiples.
        assert_eq!(pages_for_range(0, 8, 4), 0..2);
        assert_eq!(pages_for_range(4, 8, 4), 1..2);
        // Straddling.
        assert_eq!(pages_for_range(3, 5, 4), 0..2);
        assert_eq!(pages_for_range(0, 9, 4), 0..3);
        // Empty interval covers nothing, wherever it sits.
        assert_eq!(pages_for_range(5, 5, 4), 0..0);
        assert_eq!(pages_for_range(7, 3, 4), 0..0);
        // Single byte.
        assert_eq!(pages_for_range(4, 5, 4), 1..2);
    }

    #[test]
    fn fractional_page_slots_share_the_straddled_page() {
        // Two slots of 1.5 pages each: together exactly 3 pages, the middle
        // one shared.
        let mut pool = PhysicalMemoryPool::new(4, 16).unwrap();
        let mut t = VirtualWeightTensor::new(0, 2, 6, 4).unwrap();
        t.map_slot(&mut pool, 0).unwrap();
        assert_eq!(pool.in_use(), 2);
        t.map_slot(&mut pool, 1).unwrap();
        assert_eq!(pool.in_use(), 3, "shared page must not be allocated twice");
        assert_eq!(
            (t.refcount(0), t.refcount(1), t.refcount(2)),
            (1, 2, 1),
            "middle page is claimed by both slots"
        );

        let a = [1u8, 2, 3, 4, 5, 6];
        let b = [9u8, 8, 7, 6, 5, 4];
        t.write_slot(&mut pool, 0, &a).unwrap();
        t.write_slot(&mut pool, 1, &b).unwrap();

        // Unmapping the first slot frees only its exclusive page.
        t.unmap_slot(&mut pool, 0).unwrap();
        assert_eq!(pool.in_use(), 2);
        assert_eq!((t.refcount(0), t.refcount(1), t.refcount(2)), (0, 1, 1));
        let mut out = [0u8; 6];
        t.read_slot(&pool, 1, &mut out).unwrap();
        assert_eq!(out, b, "survivor's bytes intact, including the shared page");

        t.unmap_slot(&mut pool, 1).unwrap();
        assert_eq!(pool.in_use(), 0);
        assert_eq!(t.mapped_pages(), 0);
    }

    #[test]
    fn range_map_counts_each_slot_separately() {
        // Same Fig-style layout loaded as one two-slot range: still 3 pages,
        // and the interior straddled page is claimed by both slots at once.
        let mut pool = PhysicalMemoryPool::new(4, 16).unwrap();
        let mut t = VirtualWeightTensor::new(0, 4, 6, 4).unwrap();
        t.map_range(&mut pool, 0, 2).unwrap();
        assert_eq!(pool.in_use(), 3);
        assert_eq!((t.refcount(0), t.refcount(1), t.refcount(2)), (1, 2, 1));
        t.unmap_range(&mut pool, 0, 2).unwrap();
        assert_eq!(pool.in_use(), 0);

        // Page-aligned slots: k slots map exactly k * slots-per-page pages.
        let mut t2 = VirtualWeightTensor::new(0, 4, 4, 4).unwrap();
        t2.map_range(&mut pool, 1, 3).unwrap();
        assert_eq!(t2.mapped_pages(), 3);

        // Zero-length range is a no-op.
        let before = pool.stats();
        t2.map_range(&mut pool, 0, 0).unwrap();
        t2.unmap_range(&mut pool, 3, 0).unwrap();
        assert_eq!(pool.stats(), before);

        // Overlapping load is rejected before touching the pool.
        assert!(t2.map_range(&mut pool, 0, 2).is_err());
        assert_eq!(pool.stats(), before);
    }

    #[test]
    fn write_read_roundtrip_across_many_pages() {
        let mut pool = PhysicalMemoryPool::new(7, 64).unwrap();
        let mut t = VirtualWeightTensor::new(3, 5, 23, 7).unwrap();
        for slot in [0usize, 2, 4] {
            t.map_slot(&mut pool, slot).unwrap();
            let data: Vec<u8> = (0..23).map(|i| (slot * 31 + i) as u8).collect();
            t.write_slot(&mut pool, slot, &data).unwrap();
        }
        for slot in [0usize, 2, 4] {
            let mut out = vec![0u8; 23];
            t.read_slot(&pool, slot, &mut out).unwrap();
            let expect: Vec<u8> = (0..23).map(|i| (slot * 31 + i) as u8).collect();
            assert_eq!(out, expect);
        }
    }

    #[test]
    fn gaps_between_mapped_slots_cost_nothing() {
        // Slots 1..3 unmapped: their interior pages must stay unbacked.
        let mut pool = PhysicalMemoryPool::new(4, 64).unwrap();
        let mut t = VirtualWeightTensor::new(0, 4, 8, 4).unwrap();
        t.map_slot(&mut pool, 0).unwrap();
        t.map_slot(&mut pool, 3).unwrap();
        // Slot ranges are page-aligned here (8 = 2 pages), so exactly 4 of 8
        // virtual pages are backed.
        assert_eq!(t.num_virtual_pages(), 8);
        assert_eq!(t.mapped_pages(), 4);
        assert_eq!(pool.in_use(), 4);
    }

    #[test]
    fn unmapped_access_faults() {
        let mut pool = PhysicalMemoryPool::new(4, 8).unwrap();
        let mut t = VirtualWeightTensor::new(7, 2, 6, 4).unwrap();
        let mut out = [0u8; 6];
        match t.read_slot(&pool, 1, &mut out) {
            Err(Error::MemoryFault { layer, slot, .. }) => {
                assert_eq!((layer, slot), (7, 1));
            }
            other => panic!("expected fault, got {:?}", other),
        }
        assert!(t.write_slot(&mut pool, 1, &[0u8; 6]).is_err());
        assert!(t.unmap_slot(&mut pool, 1).is_err());
        t.map_slot(&mut pool, 1).unwrap();
        assert!(t.map_slot(&mut pool, 1).is_err(), "double map rejected");
    }

    #[test]
    fn failed_map_leaves_no_trace() {
        let mut pool = PhysicalMemoryPool::new(4, 2).unwrap();
        let mut t = VirtualWeightTensor::new(0, 2, 6, 4).unwrap();
        t.map_slot(&mut pool, 0).unwrap();
        // Slot 1 shares page 1 but still needs one fresh page; none remain.
        let before = pool.stats();
        assert!(matches!(
            t.map_slot(&mut pool, 1),
            Err(Error::PoolExhausted { .. })
        ));
        assert_eq!(pool.stats(), before);
        assert!(!t.is_mapped(1));
        assert_eq!(t.refcount(1), 1, "shared page refcount untouched");
    }
}
