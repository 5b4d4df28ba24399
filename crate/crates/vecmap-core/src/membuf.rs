//! Bounded history buffer keyed by ego position, with strided selection of
//! entries whose positions best match a set of target distances.

use thiserror::Error;

use crate::scene::Pt;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry<T> {
    pub frame: u64,
    pub position: Pt,
    pub payload: T,
}

/// Fixed-capacity buffer of the most recent entries, oldest evicted first.
/// Payloads are opaque; only the selection logic lives here.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer<T> {
    capacity: usize,
    entries: Vec<Entry<T>>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MemBufError {
    #[error("frame {frame} is not newer than the last stored frame {last}")]
    StaleFrame { frame: u64, last: u64 },
    #[error("capacity must be >= 1")]
    ZeroCapacity,
}

pub const DEFAULT_CAPACITY: usize = 20;
pub const DEFAULT_STRIDES: [f64; 4] = [1.0, 5.0, 10.0, 15.0];

impl<T> MemoryBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self, MemBufError> {
        if capacity == 0 {
            return Err(MemBufError::ZeroCapacity);
        }
        Ok(MemoryBuffer {
            capacity,
            entries: Vec::new(),
        })
    }

    pub fn with_default_capacity() -> Self {
        MemoryBuffer {
            capacity: DEFAULT_CAPACITY,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    /// Append an entry; frame indices must strictly increase. The oldest
    /// entry is dropped once the buffer exceeds its capacity.
    pub fn push(&mut self, frame: u64, position: Pt, payload: T) -> Result<(), MemBufError> {
        if let Some(last) = self.entries.last() {
            if frame <= last.frame {
                return Err(MemBufError::StaleFrame {
                    frame,
                    last: last.frame,
                });
            }
        }
        self.entries.push(Entry {
            frame,
            position,
            payload,
        });
        if self.entries.len() > self.capacity {
            self.entries.remove(0);
        }
        Ok(())
    }

    /// Pick one entry per stride, iterating strides from the farthest to the
    /// nearest and choosing the not-yet-chosen entry whose distance to
    /// `current` is closest to the stride. A buffer with fewer entries than
    /// strides returns everything. The result is ordered oldest frame first.
    pub fn select_strided(&self, current: Pt, strides: &[f64]) -> Vec<&Entry<T>> {
        if self.entries.len() < strides.len() {
            return self.entries.iter().collect();
        }
        let dists: Vec<f64> = self
            .entries
            .iter()
            .map(|e| e.position.dist(current))
            .collect();
        let picks = select_by_distance(&dists, strides, |i| self.entries[i].frame);
        let mut out: Vec<&Entry<T>> = picks.into_iter().map(|i| &self.entries[i]).collect();
        out.sort_by_key(|e| e.frame);
        out
    }
}

/// Core selection rule over precomputed distances; distance ties go to the
/// entry with the larger tie key (the more recent frame).
pub fn select_by_distance(
    dists: &[f64],
    strides: &[f64],
    tie_key: impl Fn(usize) -> u64,
) -> Vec<usize> {
    let mut chosen = vec![false; dists.len()];
    let mut picks = Vec::with_capacity(strides.len());
    let mut order: Vec<&f64> = strides.iter().collect();
    order.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for &stride in order {
        let mut best: Option<usize> = None;
        for i in 0..dists.len() {
            if chosen[i] {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    let da = (dists[i] - stride).abs();
                    let db = (dists[b] - stride).abs();
                    da < db || (da == db && tie_key(i) > tie_key(b))
                }
            };
            if better {
                best = Some(i);
            }
        }
        if let Some(i) = best {
            chosen[i] = true;
            picks.push(i);
        }
    }
    picks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_buffer(n: u64, spacing: f64) -> MemoryBuffer<u64> {
        // Entries behind the origin along -y at the given spacing; entry k
        // sits at distance (n - k) * spacing from the origin.
        let mut buf = MemoryBuffer::new(n as usize).unwrap();
        for k in 0..n {
            buf.push(k, Pt::new(0.0, -((n - k) as f64) * spacing), k)
                .unwrap();
        }
        buf
    }

    #[test]
    fn push_and_eviction() {
        let mut buf = MemoryBuffer::new(20).unwrap();
        buf.push(1, Pt::new(0.0, 0.0), "a").unwrap();
        assert_eq!(buf.len(), 1);
        for f in 2..=21 {
            buf.push(f, Pt::new(f as f64, 0.0), "x").unwrap();
        }
        assert_eq!(buf.len(), 20);
        assert_eq!(buf.entries()[0].frame, 2);
        assert_eq!(buf.entries().last().unwrap().frame, 21);
    }

    #[test]
    fn stale_frame_rejected() {
        let mut buf = MemoryBuffer::new(4).unwrap();
        buf.push(5, Pt::new(0.0, 0.0), ()).unwrap();
        assert_eq!(
            buf.push(5, Pt::new(1.0, 0.0), ()),
            Err(MemBufError::StaleFrame { frame: 5, last: 5 })
        );
    }

    /// Distances 1..20 at 1 m spacing: strides {1,5,10,15} land exactly on
    /// the entries at 15, 10, 5, 1 with no collisions.
    #[test]
    fn strided_selection_on_line() {
        let buf = line_buffer(20, 1.0);
        let picked = buf.select_strided(Pt::new(0.0, 0.0), &DEFAULT_STRIDES);
        let mut dists: Vec<f64> = picked
            .iter()
            .map(|e| e.position.dist(Pt::new(0.0, 0.0)))
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(dists, vec![1.0, 5.0, 10.0, 15.0]);
        // Oldest frame first in the returned order.
        let frames: Vec<u64> = picked.iter().map(|e| e.frame).collect();
        let mut sorted = frames.clone();
        sorted.sort_unstable();
        assert_eq!(frames, sorted);
    }

    #[test]
    fn small_buffer_returns_everything() {
        let buf = line_buffer(2, 1.0);
        let picked = buf.select_strided(Pt::new(0.0, 0.0), &DEFAULT_STRIDES);
        assert_eq!(picked.len(), 2);
        let empty: MemoryBuffer<u64> = MemoryBuffer::new(5).unwrap();
        assert!(empty
            .select_strided(Pt::new(0.0, 0.0), &DEFAULT_STRIDES)
            .is_empty());
    }

    /// Stationary ego, all-zero strides: picks the four most recent entries
    /// (distance ties break toward recency).
    #[test]
    fn zero_strides_stationary_ego() {
        let mut buf = MemoryBuffer::new(20).unwrap();
        for k in 0..8 {
            buf.push(k, Pt::new(0.0, 0.0), k).unwrap();
        }
        let picked = buf.select_strided(Pt::new(0.0, 0.0), &[0.0, 0.0, 0.0, 0.0]);
        let frames: Vec<u64> = picked.iter().map(|e| e.frame).collect();
        assert_eq!(frames, vec![4, 5, 6, 7]);
    }

    #[test]
    fn no_repetition_and_count() {
        let buf = line_buffer(6, 2.0);
        let picked = buf.select_strided(Pt::new(0.0, 0.0), &DEFAULT_STRIDES);
        assert_eq!(picked.len(), 4);
        let mut frames: Vec<u64> = picked.iter().map(|e| e.frame).collect();
        frames.dedup();
        assert_eq!(frames.len(), 4);
    }

    #[test]
    fn selection_invariant_under_rigid_transform() {
        let mut buf = MemoryBuffer::new(16).unwrap();
        let mut rng = crate::rng::DetRng::new(5);
        let mut pts = Vec::new();
        for k in 0..16 {
            let p = Pt::new(rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0));
            pts.push(p);
            buf.push(k, p, k).unwrap();
        }
        let current = Pt::new(1.0, 2.0);
        let base: Vec<u64> = buf
            .select_strided(current, &DEFAULT_STRIDES)
            .iter()
            .map(|e| e.frame)
            .collect();

        let pose = crate::scene::Pose2::new(100.0, -50.0, 1.1);
        let mut moved = MemoryBuffer::new(16).unwrap();
        for (k, p) in pts.iter().enumerate() {
            moved.push(k as u64, pose.apply(*p), k as u64).unwrap();
        }
        let got: Vec<u64> = moved
            .select_strided(pose.apply(current), &DEFAULT_STRIDES)
            .iter()
            .map(|e| e.frame)
            .collect();
        assert_eq!(base, got);
    }
}
