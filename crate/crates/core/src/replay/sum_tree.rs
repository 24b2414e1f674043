//! Array-backed binary sum tree over nonnegative leaf masses.

#[derive(Debug, Clone)]
pub struct SumTree {
    len: usize,
    base: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(len: usize) -> Self {
        let base = len.max(1).next_power_of_two();
        Self {
            len,
            base,
            nodes: vec![0.0; 2 * base],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.base + i]
    }

    /// Sets leaf `i` and recomputes its ancestors from their children, so
    /// every internal node is exactly the sum of its two children.
    pub fn set(&mut self, i: usize, mass: f64) {
        debug_assert!(mass >= 0.0 && mass.is_finite());
        let mut node = self.base + i;
        self.nodes[node] = mass;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Leaf index whose cumulative interval contains `u` in `[0, total)`.
    /// Never returns a zero-mass leaf while the total is positive.
    pub fn find(&self, mut u: f64) -> usize {
        let mut node = 1;
        while node < self.base {
            let left = 2 * node;
            let right = left + 1;
            if self.nodes[right] <= 0.0 || (u < self.nodes[left] && self.nodes[left] > 0.0) {
                node = left;
            } else {
                u -= self.nodes[left];
                node = right;
            }
        }
        node - self.base
    }

    pub fn leaf_sum(&self) -> f64 {
        self.nodes[self.base..self.base + self.len].iter().sum()
    }
}
