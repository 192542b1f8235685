//! Small shared utilities: content hashing for provenance fields and a
//! deterministic parallel map.

/// FNV-1a 64-bit hash, hex encoded. Used to stamp calibration artifacts
/// with the identity of the manifest they were fitted on.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Applies `f` to every item, optionally on several threads, and returns
/// results in input order. Output is identical for any thread count: each
/// item's result is written to its own slot.
pub fn par_map<T, U, F>(items: &[T], threads: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    let threads = threads.clamp(1, items.len().max(1));
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let mut slots: Vec<Option<U>> = (0..items.len()).map(|_| None).collect();
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|scope| {
        for (slot_chunk, item_chunk) in slots.chunks_mut(chunk).zip(items.chunks(chunk)) {
            let f = &f;
            scope.spawn(move || {
                for (slot, item) in slot_chunk.iter_mut().zip(item_chunk) {
                    *slot = Some(f(item));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("all slots filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a_hex(b""), "cbf29ce484222325");
        assert_eq!(fnv1a_hex(b"a"), fnv1a_hex(b"a"));
        assert_ne!(fnv1a_hex(b"a"), fnv1a_hex(b"b"));
    }

    #[test]
    fn par_map_order_is_thread_independent() {
        let items: Vec<u64> = (0..103).collect();
        let seq = par_map(&items, 1, |&x| x * x);
        for threads in [2, 3, 8, 200] {
            assert_eq!(par_map(&items, threads, |&x| x * x), seq);
        }
    }

    #[test]
    fn par_map_empty_is_fine() {
        let items: Vec<u64> = vec![];
        assert!(par_map(&items, 4, |&x| x).is_empty());
    }
}
