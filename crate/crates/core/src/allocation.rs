use serde::{Deserialize, Serialize};

/// Bytes per vector component; entries are accounted as 32-bit reals.
pub const BYTES_PER_COMPONENT: usize = 4;

/// Size of one cache entry of dimension `dim`.
pub fn entry_bytes(dim: usize) -> u64 {
    (dim * BYTES_PER_COMPONENT) as u64
}

/// Binary `classes × layers` indicator of the global entries a client holds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AllocationMatrix {
    classes: usize,
    layers: usize,
    bits: Vec<bool>,
}

impl AllocationMatrix {
    pub fn empty(classes: usize, layers: usize) -> Self {
        AllocationMatrix { classes, layers, bits: vec![false; classes * layers] }
    }

    pub fn full(classes: usize, layers: usize) -> Self {
        AllocationMatrix { classes, layers, bits: vec![true; classes * layers] }
    }

    /// `x_{i,j} = [i ∈ classes] · [j ∈ layers]`.
    pub fn rectangular(
        classes: usize,
        layers: usize,
        hot: impl IntoIterator<Item = usize> + Clone,
        selected: impl IntoIterator<Item = usize>,
    ) -> Self {
        let mut m = AllocationMatrix::empty(classes, layers);
        for j in selected {
            for i in hot.clone() {
                m.set(i, j, true);
            }
        }
        m
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    #[inline]
    pub fn get(&self, class: usize, layer: usize) -> bool {
        self.bits[class * self.layers + layer]
    }

    pub fn set(&mut self, class: usize, layer: usize, value: bool) {
        self.bits[class * self.layers + layer] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn classes_at(&self, layer: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.classes).filter(move |&i| self.get(i, layer))
    }

    pub fn entries_at(&self, layer: usize) -> usize {
        self.classes_at(layer).count()
    }

    pub fn is_layer_active(&self, layer: usize) -> bool {
        self.classes_at(layer).next().is_some()
    }

    pub fn active_layers(&self) -> Vec<usize> {
        (0..self.layers).filter(|&j| self.is_layer_active(j)).collect()
    }

    pub fn active_classes(&self) -> Vec<usize> {
        (0..self.classes).filter(|&i| (0..self.layers).any(|j| self.get(i, j))).collect()
    }

    /// True when the matrix factorizes as (row set) × (column set).
    pub fn is_rectangular(&self) -> bool {
        let rows = self.active_classes();
        let cols = self.active_layers();
        rows.iter().all(|&i| cols.iter().all(|&j| self.get(i, j)))
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.classes).flat_map(move |i| (0..self.layers).map(move |j| (i, j))).filter(move |&(i, j)| self.get(i, j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rectangular_factorizes() {
        let m = AllocationMatrix::rectangular(5, 4, [0, 3], [1, 2]);
        assert_eq!(m.count(), 4);
        assert!(m.is_rectangular());
        assert_eq!(m.active_layers(), vec![1, 2]);
        assert_eq!(m.active_classes(), vec![0, 3]);
        let mut n = m.clone();
        n.set(0, 1, false);
        assert!(!n.is_rectangular());
        assert!(AllocationMatrix::empty(3, 3).is_rectangular());
    }
}
