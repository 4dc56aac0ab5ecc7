//! Neighborhood-aware text prototypes learned over a frozen token-embedding
//! vocabulary.
//!
//! Every vocabulary row is assigned to its nearest prototype; the loss is the
//! mean squared distance to that prototype. Assignments are recomputed on
//! each evaluation and held fixed for the gradient, which therefore flows to
//! the prototypes only.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::ops::{squared_distance, Matrix};

/// Frozen `V × D` token embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    pub embeddings: Matrix,
}

/// Learnable `U × D` prototype matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeBank {
    pub embeddings: Matrix,
}

impl Vocabulary {
    /// Seeded Gaussian stand-in used when no pretrained backbone is loaded.
    pub fn toy<R: Rng>(size: usize, d_model: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..size * d_model).map(|_| normal.sample(rng)).collect();
        Self {
            embeddings: Matrix {
                rows: size,
                cols: d_model,
                data,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.rows == 0
    }
}

impl PrototypeBank {
    /// Copies `count` distinct vocabulary rows chosen uniformly at random.
    pub fn sample_from<R: Rng>(vocab: &Vocabulary, count: usize, rng: &mut R) -> Result<Self> {
        if count == 0 || count >= vocab.len() {
            return Err(Error::InvalidArgument(format!(
                "prototype count must satisfy 0 < U < V, got U={count} V={}",
                vocab.len()
            )));
        }
        let d = vocab.embeddings.cols;
        let mut data = Vec::with_capacity(count * d);
        for i in sample(rng, vocab.len(), count).into_iter() {
            data.extend_from_slice(vocab.embeddings.row(i));
        }
        Ok(Self {
            embeddings: Matrix {
                rows: count,
                cols: d,
                data,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.rows == 0
    }
}

/// Euclidean distance.
pub fn distance(w: &[f64], e: &[f64]) -> Result<f64> {
    if w.len() != e.len() {
        return Err(shape_err("distance", w.len(), e.len()));
    }
    Ok(squared_distance(w, e).sqrt())
}

/// Nearest row of `bank` by squared distance; ties go to the lower row.
/// Returns `(row, squared distance)`.
pub(crate) fn nearest_row(w: &[f64], bank: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for r in 0..bank.rows {
        let d = squared_distance(w, bank.row(r));
        if d < best.1 {
            best = (r, d);
        }
    }
    best
}

/// `(index, distance)` of the prototype closest to `w`.
pub fn nearest_prototype(w: &[f64], bank: &PrototypeBank) -> Result<(usize, f64)> {
    if bank.is_empty() {
        return Err(Error::Empty("prototype bank"));
    }
    if w.len() != bank.embeddings.cols {
        return Err(shape_err("nearest prototype", bank.embeddings.cols, w.len()));
    }
    let (i, d2) = nearest_row(w, &bank.embeddings);
    Ok((i, d2.sqrt()))
}

/// Loss value and its gradient with respect to the prototypes.
#[derive(Clone, Debug)]
pub struct ProtoLoss {
    pub loss: f64,
    pub grad: Matrix,
    /// Nearest prototype of each evaluated vocabulary row.
    pub assignments: Vec<usize>,
}

fn check(vocab: &Matrix, bank: &Matrix) -> Result<()> {
    if vocab.rows == 0 {
        return Err(Error::Empty("vocabulary"));
    }
    if bank.rows == 0 {
        return Err(Error::Empty("prototype bank"));
    }
    if vocab.cols != bank.cols {
        return Err(shape_err("prototype loss", vocab.cols, bank.cols));
    }
    Ok(())
}

/// `(1/V) Σᵢ ‖wᵢ − e*ᵢ‖²` over the whole vocabulary.
pub fn proto_loss(vocab: &Vocabulary, bank: &PrototypeBank) -> Result<f64> {
    Ok(proto_loss_with_grad(&vocab.embeddings, &bank.embeddings, None)?.loss)
}

/// Loss and prototype gradient. With `rows`, the loss is the mean over that
/// subset of vocabulary rows, an unbiased estimate of the full loss when the
/// subset is drawn uniformly.
pub fn proto_loss_with_grad(vocab: &Matrix, bank: &Matrix, rows: Option<&[usize]>) -> Result<ProtoLoss> {
    check(vocab, bank)?;
    let indices: Vec<usize> = match rows {
        Some(r) => {
            if r.is_empty() {
                return Err(Error::Empty("vocabulary subset"));
            }
            if let Some(&bad) = r.iter().find(|&&i| i >= vocab.rows) {
                return Err(Error::InvalidArgument(format!("vocabulary row {bad} out of range")));
            }
            r.to_vec()
        }
        None => (0..vocab.rows).collect(),
    };
    let nearest: Vec<(usize, f64)> = indices
        .par_iter()
        .map(|&i| nearest_row(vocab.row(i), bank))
        .collect();
    let count = indices.len() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(bank.rows, bank.cols);
    for (&i, &(u, d2)) in indices.iter().zip(&nearest) {
        loss += d2;
        let w = vocab.row(i);
        let e = bank.row(u);
        for ((g, ev), wv) in grad.row_mut(u).iter_mut().zip(e).zip(w) {
            *g += 2.0 * (ev - wv) / count;
        }
    }
    Ok(ProtoLoss {
        loss: loss / count,
        grad,
        assignments: nearest.into_iter().map(|(u, _)| u).collect(),
    })
}

/// Moves every prototype that owns at least one vocabulary row to the
/// centroid of its rows (one k-means update with assignments fixed).
pub fn centroid_update(vocab: &Matrix, bank: &Matrix, assignments: &[usize]) -> Matrix {
    let mut sums = Matrix::zeros(bank.rows, bank.cols);
    let mut counts = vec![0usize; bank.rows];
    for (i, &u) in assignments.iter().enumerate() {
        counts[u] += 1;
        for (s, w) in sums.row_mut(u).iter_mut().zip(vocab.row(i)) {
            *s += w;
        }
    }
    let mut out = bank.clone();
    for u in 0..bank.rows {
        if counts[u] > 0 {
            for (o, s) in out.row_mut(u).iter_mut().zip(sums.row(u)) {
                *o = s / counts[u] as f64;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bank(rows: &[Vec<f64>]) -> PrototypeBank {
        PrototypeBank {
            embeddings: Matrix::from_rows(rows).unwrap(),
        }
    }

    #[test]
    fn distance_cases() {
        assert_eq!(distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(distance(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn nearest_prototype_cases() {
        let b = bank(&[vec![0.0, 0.0], vec![10.0, 10.0]]);
        assert_eq!(nearest_prototype(&[1.0, 1.0], &b).unwrap().0, 0);
        assert_eq!(nearest_prototype(&[10.0, 10.0], &b).unwrap(), (1, 0.0));
        let tie = bank(&[vec![1.0, 0.0], vec![-1.0, 0.0]]);
        assert_eq!(nearest_prototype(&[0.0, 0.0], &tie).unwrap().0, 0);
        let empty = PrototypeBank {
            embeddings: Matrix::zeros(0, 2),
        };
        assert!(nearest_prototype(&[0.0, 0.0], &empty).is_err());
    }

    #[test]
    fn proto_loss_hand_cases() {
        let vocab = Vocabulary {
            embeddings: Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap(),
        };
        assert_eq!(proto_loss(&vocab, &bank(&[vec![0.0, 0.0]])).unwrap(), 0.5);
        let cover = bank(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(proto_loss(&vocab, &cover).unwrap(), 0.0);
        assert!(proto_loss(&vocab, &bank(&[vec![0.0]])).is_err());
        let empty = Vocabulary {
            embeddings: Matrix::zeros(0, 2),
        };
        assert!(proto_loss(&empty, &cover).is_err());
    }

    #[test]
    fn sampled_bank_rows_are_distinct_vocabulary_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vocab = Vocabulary::toy(50, 4, 1.0, &mut rng);
        let b = PrototypeBank::sample_from(&vocab, 10, &mut rng).unwrap();
        let mut seen = Vec::new();
        for r in 0..10 {
            let row = b.embeddings.row(r);
            let idx = (0..50).find(|&i| vocab.embeddings.row(i) == row).unwrap();
            assert!(!seen.contains(&idx));
            seen.push(idx);
        }
        assert!(PrototypeBank::sample_from(&vocab, 50, &mut rng).is_err());
    }

    #[test]
    fn full_cover_when_bank_equals_vocabulary() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vocab = Vocabulary::toy(12, 3, 1.0, &mut rng);
        let b = PrototypeBank {
            embeddings: vocab.embeddings.clone(),
        };
        assert_eq!(proto_loss(&vocab, &b).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences_with_fixed_assignments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vocab = Vocabulary::toy(30, 4, 1.0, &mut rng);
        let mut b = Vocabulary::toy(5, 4, 1.0, &mut rng).embeddings;
        let out = proto_loss_with_grad(&vocab.embeddings, &b, None).unwrap();
        let fixed = |bank: &Matrix| {
            out.assignments
                .iter()
                .enumerate()
                .map(|(i, &u)| squared_distance(vocab.embeddings.row(i), bank.row(u)))
                .sum::<f64>()
                / 30.0
        };
        let h = 1e-6;
        for i in 0..b.data.len() {
            let orig = b.data[i];
            b.data[i] = orig + h;
            let up = fixed(&b);
            b.data[i] = orig - h;
            let down = fixed(&b);
            b.data[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(out.grad.data[i].abs()).max(1e-8);
            assert!((fd - out.grad.data[i]).abs() / denom < 1e-4);
        }
    }

    #[test]
    fn subset_estimator_is_mean_over_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vocab = Vocabulary::toy(20, 3, 1.0, &mut rng);
        let b = Vocabulary::toy(3, 3, 1.0, &mut rng).embeddings;
        let full = proto_loss_with_grad(&vocab.embeddings, &b, None).unwrap();
        let all: Vec<usize> = (0..20).collect();
        let same = proto_loss_with_grad(&vocab.embeddings, &b, Some(&all)).unwrap();
        assert_eq!(full.loss, same.loss);
        let part = proto_loss_with_grad(&vocab.embeddings, &b, Some(&[3, 7])).unwrap();
        let expect = (squared_distance(vocab.embeddings.row(3), b.row(full.assignments[3]))
            + squared_distance(vocab.embeddings.row(7), b.row(full.assignments[7])))
            / 2.0;
        assert!((part.loss - expect).abs() < 1e-15);
        assert!(proto_loss_with_grad(&vocab.embeddings, &b, Some(&[20])).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;

        proptest! {
            #[test]
            fn permutation_invariant_and_centroid_descent(seed in 0u64..500, v in 4usize..40, u in 1usize..6) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let vocab = Vocabulary::toy(v, 3, 1.0, &mut rng).embeddings;
                let bank = Vocabulary::toy(u, 3, 1.0, &mut rng).embeddings;
                let base = proto_loss_with_grad(&vocab, &bank, None).unwrap();
                let mut rows: Vec<Vec<f64>> = (0..u).map(|r| bank.row(r).to_vec()).collect();
                rows.reverse();
                let flipped = Matrix::from_rows(&rows).unwrap();
                let perm = proto_loss_with_grad(&vocab, &flipped, None).unwrap();
                prop_assert!((base.loss - perm.loss).abs() < 1e-12);
                let moved = centroid_update(&vocab, &bank, &base.assignments);
                let after = proto_loss_with_grad(&vocab, &moved, None).unwrap();
                prop_assert!(after.loss <= base.loss + 1e-12);
            }
        }
    }
}
