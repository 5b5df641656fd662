//! Row-major enumeration of integer boxes `base + [0, N_1) x ... x [0, N_r)`.

/// Iterator over the lattice points of a box, last axis fastest.
#[derive(Debug, Clone)]
pub struct BoxPoints {
    base: Vec<i64>,
    edges: Vec<u64>,
    offset: Vec<u64>,
    done: bool,
}

impl BoxPoints {
    pub fn new(base: &[i64], edges: &[u64]) -> Self {
        assert_eq!(base.len(), edges.len(), "base/edge rank mismatch");
        BoxPoints {
            base: base.to_vec(),
            edges: edges.to_vec(),
            offset: vec![0; edges.len()],
            done: edges.contains(&0),
        }
    }
}

impl Iterator for BoxPoints {
    type Item = Vec<i64>;

    fn next(&mut self) -> Option<Vec<i64>> {
        if self.done {
            return None;
        }
        let point = self
            .base
            .iter()
            .zip(&self.offset)
            .map(|(b, o)| b + *o as i64)
            .collect();
        // odometer increment
        let mut axis = self.edges.len();
        loop {
            if axis == 0 {
                self.done = true;
                break;
            }
            axis -= 1;
            self.offset[axis] += 1;
            if self.offset[axis] < self.edges[axis] {
                break;
            }
            self.offset[axis] = 0;
        }
        Some(point)
    }
}

pub fn volume(edges: &[u64]) -> u64 {
    edges.iter().product()
}
