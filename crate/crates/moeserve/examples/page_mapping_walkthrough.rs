//! How expert weights land on physical pages, step by step.
//!
//! The weight store is a virtual tensor over expert *slots*; each layer's
//! slots map onto fixed-size physical pages with per-page reference counts,
//! so neighboring slots can share a boundary page and unmapping one never
//! tears the other. This example uses deliberately awkward sizes - an
//! expert is 1.5 pages - to show the sharing arithmetic that page-aligned
//! designs never exercise.
//!
//! Run with: `cargo run --example page_mapping_walkthrough`

use moeserve::memory::{pages_for_range, PhysicalMemoryPool, VirtualWeightTensor};

fn main() -> moeserve::Result<()> {
    // 6 slots of 384 bytes over 256-byte pages: every slot spans 1.5 pages.
    let page_size = 256;
    let slot_bytes = 384;
    let mut pool = PhysicalMemoryPool::new(page_size, 64)?;
    let mut tensor = VirtualWeightTensor::new(0, 6, slot_bytes, page_size)?;

    println!(
        "slot bytes {slot_bytes}, page size {page_size}: slot i covers pages {:?}, {:?}, {:?}...",
        pages_for_range(0, slot_bytes, page_size),
        pages_for_range(slot_bytes, 2 * slot_bytes, page_size),
        pages_for_range(2 * slot_bytes, 3 * slot_bytes, page_size),
    );

    // Map slots 0 and 1 as one contiguous range (an adapter loading two
    // experts). They cover pages 0..3; page 1 is split between them, so it
    // carries a reference from each.
    tensor.map_range(&mut pool, 0, 2)?;
    println!("mapped slots [0, 2):");
    print_refcounts(&tensor, &pool);

    // A neighbor maps slot 2 alone: it shares nothing (its range starts at
    // byte 768 = page 3 exactly), so 2 fresh pages.
    tensor.map_range(&mut pool, 2, 1)?;
    println!("mapped slot 2:");
    print_refcounts(&tensor, &pool);

    // Weights written through the virtual tensor scatter across pages and
    // read back intact.
    let payload: Vec<u8> = (0..slot_bytes).map(|i| (i % 251) as u8).collect();
    tensor.write_slot(&mut pool, 1, &payload)?;
    let mut readback = vec![0u8; slot_bytes];
    tensor.read_slot(&pool, 1, &mut readback)?;
    assert_eq!(payload, readback);
    println!("slot 1 write/read roundtrip across a page boundary: ok");

    // Unmap slot 0: page 1 survives because slot 1 still references it.
    tensor.unmap_range(&mut pool, 0, 1)?;
    println!("unmapped slot 0 (page 1 survives, page 0 freed):");
    print_refcounts(&tensor, &pool);
    tensor.read_slot(&pool, 1, &mut readback)?;
    assert_eq!(payload, readback, "slot 1 was damaged by its neighbor's unmap");
    println!("slot 1 still reads back intact");

    // Remap slot 0: the freed page is reused, nothing new is created.
    let before = pool.stats().created;
    tensor.map_range(&mut pool, 0, 1)?;
    assert_eq!(pool.stats().created, before, "expected pure reuse");
    println!("remapped slot 0 reusing freed pages (created stayed {before})");

    // Free pages hold their backing until an explicit trim.
    tensor.unmap_range(&mut pool, 0, 3)?;
    let trimmed = pool.trim();
    println!("after unmapping everything, trim released {trimmed} page buffers");
    Ok(())
}

fn print_refcounts(t: &VirtualWeightTensor, pool: &PhysicalMemoryPool) {
    let refs: Vec<u32> = (0..t.num_virtual_pages()).map(|p| t.refcount(p)).collect();
    println!(
        "  refcounts {:?}  pool in use {}",
        refs,
        pool.in_use()
    );
}
