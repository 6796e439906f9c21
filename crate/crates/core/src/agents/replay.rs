use rand::seq::index;

use crate::env::ActionId;
use crate::stochastic::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: ActionId,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring buffer; the oldest entry is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    entries: Vec<T>,
    /// Slot the next push writes to once the buffer is full.
    head: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be > 0");
        ReplayBuffer {
            capacity,
            entries: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, item: T) {
        if self.entries.len() < self.capacity {
            self.entries.push(item);
        } else {
            self.entries[self.head] = item;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        let (newer, older) = self.entries.split_at(self.head);
        older.iter().chain(newer.iter())
    }

    /// Storage slots of a uniform sample without replacement.
    pub fn sample_slots(&self, batch: usize, rng: &mut RngStream) -> Vec<usize> {
        assert!(batch <= self.len(), "batch larger than buffer");
        index::sample(rng.rng_mut(), self.len(), batch).into_vec()
    }

    pub fn sample(&self, batch: usize, rng: &mut RngStream) -> Vec<&T> {
        self.sample_slots(batch, rng).into_iter().map(|i| &self.entries[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_newest_in_order() {
        let mut b = ReplayBuffer::new(5);
        for i in 0..13 {
            b.push(i);
        }
        assert_eq!(b.len(), 5);
        assert_eq!(b.iter().copied().collect::<Vec<_>>(), vec![8, 9, 10, 11, 12]);
    }

    #[test]
    fn batch_has_no_duplicates() {
        let mut b = ReplayBuffer::new(50);
        for i in 0..50 {
            b.push(i);
        }
        let mut rng = RngStream::new(1);
        for _ in 0..100 {
            let mut s: Vec<i32> = b.sample(32, &mut rng).into_iter().copied().collect();
            s.sort();
            s.dedup();
            assert_eq!(s.len(), 32);
        }
    }
}
