use rand::Rng;

use crate::smdp::Transition;

/// What the task learner trains on. `action` is the action the task policy proposed,
/// which differs from the executed one whenever the shield intervened.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTransition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

impl StoredTransition {
    /// Relabels an executed step with the proposed action.
    pub fn relabeled(t: &Transition) -> Self {
        Self {
            state: t.state.clone(),
            action: t.proposed_action.clone(),
            reward: t.reward,
            next_state: t.next_state.clone(),
            done: t.done,
        }
    }
}

/// Ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<StoredTransition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self { items: Vec::with_capacity(capacity.min(1 << 16)), capacity, next: 0 }
    }

    pub fn push(&mut self, t: StoredTransition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoredTransition> {
        self.items.iter()
    }

    /// `n` draws with replacement; empty when the buffer is.
    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<&StoredTransition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn item(r: f64) -> StoredTransition {
        StoredTransition { state: vec![0.0], action: vec![0.0], reward: r, next_state: vec![0.0], done: false }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(item(i as f64));
        }
        let mut rs: Vec<f64> = b.iter().map(|t| t.reward).collect();
        rs.sort_by(f64::total_cmp);
        assert_eq!(rs, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn relabel_keeps_proposed_action() {
        let t = Transition {
            state: vec![1.0],
            proposed_action: vec![0.9],
            executed_action: vec![-1.0],
            next_state: vec![2.0],
            reward: 0.5,
            cost: 0,
            done: false,
            corrected: true,
        };
        let s = StoredTransition::relabeled(&t);
        assert_eq!(s.action, vec![0.9]);
        assert_eq!(s.reward, 0.5);
    }

    #[test]
    fn sampling_is_seeded() {
        let mut b = ReplayBuffer::new(10);
        for i in 0..10 {
            b.push(item(i as f64));
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            b.sample(&mut rng, 5).iter().map(|t| t.reward).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert!(ReplayBuffer::new(4).sample(&mut ChaCha8Rng::seed_from_u64(0), 2).is_empty());
    }
}
