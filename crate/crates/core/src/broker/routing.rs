const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |hash, b| {
        (hash ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

/// Partition for a non-empty key. Empty keys are routed round-robin by the
/// caller (see [`RoundRobin`]).
pub fn partition_for_key(key: &[u8], partitions: u32) -> u32 {
    assert!(partitions >= 1, "partition count must be >= 1");
    (fnv1a64(key) % u64::from(partitions)) as u32
}

/// Per-producer round-robin counter for records with an empty key.
#[derive(Debug, Default)]
pub struct RoundRobin {
    next: std::sync::atomic::AtomicU64,
}

impl RoundRobin {
    pub fn next(&self, partitions: u32) -> u32 {
        let n = self.next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        (n % u64::from(partitions.max(1))) as u32
    }

    /// Key-affine routing with round-robin fallback for empty keys.
    pub fn route(&self, key: &[u8], partitions: u32) -> u32 {
        if key.is_empty() {
            self.next(partitions)
        } else {
            partition_for_key(key, partitions)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_partition_is_zero() {
        for key in [&b"a"[..], b"sensor-1", b"\xff\x00"] {
            assert_eq!(partition_for_key(key, 1), 0);
        }
    }

    // Values from an independent FNV-1a reference computed outside this crate.
    #[test]
    fn matches_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
        assert_eq!(fnv1a64(b"sensor-1"), 0xa093_1a06_6672_0f29);
        assert_eq!(partition_for_key(b"sensor-1", 4), 1);
        assert_eq!(partition_for_key(b"sensor-1", 16), 9);
    }

    #[test]
    fn deterministic_over_many_repeats() {
        let first = partition_for_key(b"sensor-1", 4);
        assert!((0..1_000_000).all(|_| partition_for_key(b"sensor-1", 4) == first));
    }

    #[test]
    fn empty_keys_rotate() {
        let rr = RoundRobin::default();
        let seq: Vec<u32> = (0..6).map(|_| rr.route(b"", 3)).collect();
        assert_eq!(seq, vec![0, 1, 2, 0, 1, 2]);
    }
}
