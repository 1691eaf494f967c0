use crate::model::EventMatrix;

/// Per-transition index of observed events, shared by all rows of a fit.
#[derive(Debug, Clone)]
pub struct Design {
    offsets: Vec<usize>,
    active: Vec<u32>,
}

impl Design {
    /// Active sets for source steps `0..T-1`.
    pub fn new(data: &EventMatrix) -> Self {
        let t_eff = data.n_steps().saturating_sub(1);
        let mut offsets = Vec::with_capacity(t_eff + 1);
        let mut active = Vec::new();
        offsets.push(0);
        for t in 0..t_eff {
            active.extend(
                data.column(t)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0)
                    .map(|(i, _)| i as u32),
            );
            offsets.push(active.len());
        }
        Design { offsets, active }
    }

    pub fn t_eff(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn active(&self, t: usize) -> &[u32] {
        &self.active[self.offsets[t]..self.offsets[t + 1]]
    }
}

/// Sufficient statistics of the degree-2 losses, over source steps
/// `t = 0..T-1` (targets at `t + 1`).
#[derive(Debug, Clone)]
pub struct SuffStats {
    n_nodes: usize,
    t_eff: usize,
    /// `s_i = sum_t Z_{t,i}`.
    pub sums: Vec<f64>,
    /// `G_ij = sum_t Z_{t,i} Z_{t,j}`, row-major.
    pub gram: Vec<f64>,
    /// `C_mi = sum_t Z_{t+1,m} Z_{t,i}`, row-major.
    pub cross: Vec<f64>,
    /// `n_m = sum_t Z_{t+1,m}`.
    pub target_counts: Vec<f64>,
}

impl SuffStats {
    pub fn new(data: &EventMatrix) -> Self {
        let m = data.n_nodes();
        let t_eff = data.n_steps().saturating_sub(1);
        let mut sums = vec![0.0; m];
        let mut gram = vec![0.0; m * m];
        let mut cross = vec![0.0; m * m];
        let mut target_counts = vec![0.0; m];
        let mut act = Vec::with_capacity(m);
        for t in 0..t_eff {
            act.clear();
            act.extend((0..m).filter(|&i| data.get(i, t) != 0));
            for &i in &act {
                sums[i] += 1.0;
                for &j in &act {
                    gram[i * m + j] += 1.0;
                }
            }
            for (k, &next) in data.column(t + 1).iter().enumerate() {
                if next != 0 {
                    target_counts[k] += 1.0;
                    for &i in &act {
                        cross[k * m + i] += 1.0;
                    }
                }
            }
        }
        SuffStats {
            n_nodes: m,
            t_eff,
            sums,
            gram,
            cross,
            target_counts,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn t_eff(&self) -> usize {
        self.t_eff
    }
}
