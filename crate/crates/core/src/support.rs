//! FIFO support set of prototype snapshots, exact top-k retrieval and the
//! nearest-neighbor contrastive loss.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::ops::{dot, l2_norm, squared_distance, Matrix};

/// Fixed-capacity ring buffer of `D`-wide rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportQueue {
    buffer: Vec<f64>,
    capacity: usize,
    width: usize,
    fill: usize,
    head: usize,
}

impl SupportQueue {
    pub fn new(capacity: usize, width: usize) -> Result<Self> {
        if capacity == 0 || width == 0 {
            return Err(Error::InvalidArgument(
                "support queue capacity and width must be positive".into(),
            ));
        }
        Ok(Self {
            buffer: vec![0.0; capacity * width],
            capacity,
            width,
            fill: 0,
            head: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn fill(&self) -> usize {
        self.fill
    }

    /// Buffer slot the next pushed row is written to.
    pub fn head(&self) -> usize {
        self.head
    }

    /// Row at physical buffer slot `slot`.
    pub fn slot(&self, slot: usize) -> &[f64] {
        &self.buffer[slot * self.width..(slot + 1) * self.width]
    }

    /// Appends every row of `snapshot` (copied, so detached from any later
    /// parameter change), evicting the oldest rows once full.
    pub fn push_batch(&mut self, snapshot: &Matrix) -> Result<()> {
        if snapshot.cols != self.width {
            return Err(shape_err("support queue push", self.width, snapshot.cols));
        }
        if snapshot.rows > self.capacity {
            return Err(Error::InvalidArgument(format!(
                "snapshot of {} rows exceeds queue capacity {}",
                snapshot.rows, self.capacity
            )));
        }
        for r in 0..snapshot.rows {
            let at = self.head * self.width;
            self.buffer[at..at + self.width].copy_from_slice(snapshot.row(r));
            self.head = (self.head + 1) % self.capacity;
            self.fill = (self.fill + 1).min(self.capacity);
        }
        Ok(())
    }

    /// Physical slots of the stored rows, oldest first.
    pub fn order(&self) -> Vec<usize> {
        if self.fill < self.capacity {
            (0..self.fill).collect()
        } else {
            (self.head..self.capacity).chain(0..self.head).collect()
        }
    }

    /// Stored rows, oldest first.
    pub fn rows_in_order(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.fill * self.width);
        for s in self.order() {
            data.extend_from_slice(self.slot(s));
        }
        Matrix {
            rows: self.fill,
            cols: self.width,
            data,
        }
    }

    /// Rebuilds a queue from rows listed oldest first.
    pub fn from_rows(capacity: usize, rows: &Matrix) -> Result<Self> {
        let mut q = Self::new(capacity, rows.cols)?;
        q.push_batch(rows)?;
        Ok(q)
    }

    /// The `k` stored rows nearest to `z` (raw Euclidean distance), nearest
    /// first, ties broken by lower buffer slot.
    pub fn top_k_nn(&self, z: &[f64], k: usize) -> Result<(Vec<usize>, Matrix)> {
        if z.len() != self.width {
            return Err(shape_err("top-k query", self.width, z.len()));
        }
        if k == 0 || k > self.fill {
            return Err(Error::InvalidArgument(format!(
                "cannot retrieve {k} neighbors from a queue holding {} rows",
                self.fill
            )));
        }
        let rows = Matrix {
            rows: self.fill,
            cols: self.width,
            data: self.buffer[..self.fill * self.width].to_vec(),
        };
        let idx = top_k_rows(z, &rows, k);
        let mut out = Matrix::zeros(k, self.width);
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.slot(i));
        }
        Ok((idx, out))
    }
}

/// Indices of the `k` rows of `rows` nearest to `z`, ordered by
/// `(distance, index)`.
pub fn top_k_rows(z: &[f64], rows: &Matrix, k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = (0..rows.rows)
        .map(|r| (squared_distance(z, rows.row(r)), r))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// How the `k` positive terms of one batch item combine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborAggregate {
    /// Mean over all `B·k` terms.
    #[default]
    Mean,
    /// Sum over the `k` neighbors, mean over the batch.
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NnclConfig {
    pub k: usize,
    pub tau: f64,
    pub batch: usize,
}

#[derive(Clone, Debug)]
pub struct NnclLoss {
    pub loss: f64,
    /// Gradient with respect to the un-normalized embeddings.
    pub grad: Matrix,
}

fn unit(v: &[f64], what: &'static str) -> Result<(Vec<f64>, f64)> {
    let n = l2_norm(v);
    if !n.is_finite() {
        return Err(Error::NonFinite(what));
    }
    if !(n > 0.0) {
        return Err(Error::InvalidArgument(format!("zero-norm {what} cannot be normalized")));
    }
    Ok((v.iter().map(|x| x / n).collect(), n))
}

/// Contrastive loss whose positives are retrieved neighbors.
///
/// For item `i` and each neighbor `n` of `i`, the term is
/// `-log softmax_b(n̂·ẑ_b / tau)[i]` with the softmax over the batch. All
/// vectors are unit-normalized first; neighbors are constants.
pub fn nncl_loss(
    embeddings: &Matrix,
    neighbors: &[Matrix],
    tau: f64,
    aggregate: NeighborAggregate,
) -> Result<NnclLoss> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let b = embeddings.rows;
    if b == 0 {
        return Err(Error::Empty("contrastive batch"));
    }
    if neighbors.len() != b {
        return Err(shape_err("neighbor sets", b, neighbors.len()));
    }
    let d = embeddings.cols;
    let k = neighbors[0].rows;
    if k == 0 {
        return Err(Error::Empty("neighbor set"));
    }
    let mut units = Vec::with_capacity(b);
    for i in 0..b {
        units.push(unit(embeddings.row(i), "embedding")?);
    }
    let mut d_unit = vec![vec![0.0; d]; b];
    let norm = match aggregate {
        NeighborAggregate::Mean => (b * k) as f64,
        NeighborAggregate::Sum => b as f64,
    };
    let mut total = 0.0;
    for (i, set) in neighbors.iter().enumerate() {
        if set.rows != k || set.cols != d {
            return Err(shape_err("neighbor set", format!("{k}x{d}"), format!("{}x{}", set.rows, set.cols)));
        }
        for j in 0..k {
            let (n_hat, _) = unit(set.row(j), "neighbor")?;
            let logits: Vec<f64> = units.iter().map(|(u, _)| dot(&n_hat, u) / tau).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - logits[i];
            for (bb, l) in logits.iter().enumerate() {
                let p = (l - lse).exp();
                let coeff = (p - if bb == i { 1.0 } else { 0.0 }) / (tau * norm);
                for (g, nv) in d_unit[bb].iter_mut().zip(&n_hat) {
                    *g += coeff * nv;
                }
            }
        }
    }
    let mut grad = Matrix::zeros(b, d);
    for i in 0..b {
        let (u, n) = &units[i];
        let radial = dot(u, &d_unit[i]);
        for ((g, du), uv) in grad.row_mut(i).iter_mut().zip(&d_unit[i]).zip(u) {
            *g = (du - uv * radial) / n;
        }
    }
    Ok(NnclLoss {
        loss: total / norm,
        grad,
    })
}
