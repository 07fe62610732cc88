use crate::error::{Error, Result};

/// Full sampler state. Clusters live in reusable slots so that removing a
/// cell from a singleton cluster is O(1).
#[derive(Debug, Clone)]
pub struct DpState {
    pub beta: Vec<f64>,
    pub m: f64,
    /// `(alpha, sigma2)` of the Gaussian base, when that base is in use.
    pub base_hyper: Option<(f64, f64)>,
    assignment: Vec<usize>,
    values: Vec<f64>,
    sizes: Vec<usize>,
    position: Vec<usize>,
    active: Vec<usize>,
    free: Vec<usize>,
}

impl DpState {
    /// A state without random effects.
    pub fn parametric(beta: Vec<f64>) -> Self {
        Self {
            beta,
            m: 1.0,
            base_hyper: None,
            assignment: Vec::new(),
            values: Vec::new(),
            sizes: Vec::new(),
            position: Vec::new(),
            active: Vec::new(),
            free: Vec::new(),
        }
    }

    /// Every cell in one cluster with log-effect `phi`.
    pub fn single_cluster(beta: Vec<f64>, m: f64, cells: usize, phi: f64) -> Self {
        Self::from_partition(beta, m, &vec![0; cells], &[phi]).expect("valid single cluster")
    }

    /// Builds a state from cluster labels `0..c` per cell and a log-effect
    /// per label.
    pub fn from_partition(beta: Vec<f64>, m: f64, labels: &[usize], phi: &[f64]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("a partition needs at least one cell"));
        }
        let mut sizes = vec![0usize; phi.len()];
        for &l in labels {
            if l >= phi.len() {
                return Err(Error::invalid(format!("cluster label {l} has no value")));
            }
            sizes[l] += 1;
        }
        if sizes.contains(&0) {
            return Err(Error::invalid("every cluster label must be used"));
        }
        Ok(Self {
            beta,
            m,
            base_hyper: None,
            assignment: labels.to_vec(),
            values: phi.to_vec(),
            sizes,
            position: (0..phi.len()).collect(),
            active: (0..phi.len()).collect(),
            free: Vec::new(),
        })
    }

    pub fn has_random_effects(&self) -> bool {
        !self.assignment.is_empty()
    }

    pub fn num_cells(&self) -> usize {
        self.assignment.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.active.len()
    }

    /// Slot ids of the non-empty clusters.
    pub fn clusters(&self) -> &[usize] {
        &self.active
    }

    pub fn cluster_of(&self, cell: usize) -> usize {
        self.assignment[cell]
    }

    pub fn cluster_size(&self, slot: usize) -> usize {
        self.sizes[slot]
    }

    /// Log-effect `phi` of a cluster slot.
    pub fn cluster_value(&self, slot: usize) -> f64 {
        self.values[slot]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.active.iter().map(|&s| self.sizes[s]).collect()
    }

    /// Log-effect of every cell (zeros without random effects).
    pub fn offsets(&self, cells: usize) -> Vec<f64> {
        if self.has_random_effects() {
            self.assignment.iter().map(|&s| self.values[s]).collect()
        } else {
            vec![0.0; cells]
        }
    }

    /// Labels numbered by first appearance, independent of slot ids.
    pub fn canonical_partition(&self) -> Vec<u32> {
        let mut map = vec![u32::MAX; self.values.len()];
        let mut next = 0u32;
        self.assignment
            .iter()
            .map(|&s| {
                if map[s] == u32::MAX {
                    map[s] = next;
                    next += 1;
                }
                map[s]
            })
            .collect()
    }

    pub(crate) fn set_cluster_value(&mut self, slot: usize, phi: f64) {
        self.values[slot] = phi;
    }

    /// Detaches a cell; returns true if its cluster became empty and was
    /// released.
    pub(crate) fn detach(&mut self, cell: usize) -> bool {
        let s = self.assignment[cell];
        self.sizes[s] -= 1;
        if self.sizes[s] == 0 {
            let p = self.position[s];
            self.active.swap_remove(p);
            if p < self.active.len() {
                self.position[self.active[p]] = p;
            }
            self.free.push(s);
            true
        } else {
            false
        }
    }

    pub(crate) fn attach(&mut self, cell: usize, slot: usize) {
        self.assignment[cell] = slot;
        self.sizes[slot] += 1;
    }

    /// Opens an empty cluster with log-effect `phi` and returns its slot.
    pub(crate) fn open_cluster(&mut self, phi: f64) -> usize {
        let s = match self.free.pop() {
            Some(s) => {
                self.values[s] = phi;
                s
            }
            None => {
                self.values.push(phi);
                self.sizes.push(0);
                self.position.push(0);
                self.values.len() - 1
            }
        };
        self.position[s] = self.active.len();
        self.active.push(s);
        s
    }

    /// Checks the bookkeeping invariants; used by tests and debug builds.
    pub fn check(&self) -> Result<()> {
        let total: usize = self.active.iter().map(|&s| self.sizes[s]).sum();
        if total != self.assignment.len() {
            return Err(Error::numeric("cluster sizes do not sum to the cell count"));
        }
        for &s in &self.active {
            if self.sizes[s] == 0 {
                return Err(Error::numeric("empty cluster left active"));
            }
        }
        if self.has_random_effects() && self.active.is_empty() {
            return Err(Error::numeric("no active clusters"));
        }
        Ok(())
    }
}
