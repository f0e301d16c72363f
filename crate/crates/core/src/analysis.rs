//! Output-embedding comparison between two models over one shared
//! vocabulary: fit an affine map from one embedding space into the other by
//! damped least squares, then measure mean cosine similarity row by row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::Matrix;
use crate::training::ModelCheckpoint;

/// Ridge term added to the diagonal of the Gram matrix.
pub const TIKHONOV_DAMPING: f64 = 1e-8;

/// One row per vocabulary unit, taken from the output-layer weight.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub matrix: Matrix,
    pub vocab_hash: String,
    pub model_id: String,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

/// Row `i` is the output weight column of vocabulary id `i`.
pub fn extract_output_embeddings(ckpt: &ModelCheckpoint) -> EmbeddingSet {
    EmbeddingSet {
        matrix: ckpt.params().out_w.transpose(),
        vocab_hash: ckpt.vocab_hash.clone(),
        model_id: ckpt.id.clone(),
    }
}

/// `x ↦ x·W + b` acting on row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl AffineMap {
    pub fn apply(&self, set: &EmbeddingSet) -> Result<EmbeddingSet> {
        if set.dim() != self.weight.rows() {
            return Err(Error::ShapeMismatch(format!(
                "map expects dimension {}, embeddings have {}",
                self.weight.rows(),
                set.dim()
            )));
        }
        let mut out = set.matrix.matmul(&self.weight);
        for r in 0..out.rows() {
            for (x, b) in out.row_mut(r).iter_mut().zip(&self.bias) {
                *x += b;
            }
        }
        Ok(EmbeddingSet {
            matrix: out,
            vocab_hash: set.vocab_hash.clone(),
            model_id: set.model_id.clone(),
        })
    }

    /// Σᵢ ‖xᵢW + b − yᵢ‖², the quantity the fit minimizes.
    pub fn residual(&self, source: &EmbeddingSet, target: &EmbeddingSet) -> Result<f64> {
        let mapped = self.apply(source)?;
        check_same_shape(&mapped, target)?;
        Ok(mapped
            .matrix
            .as_slice()
            .iter()
            .zip(target.matrix.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }
}

fn check_same_shape(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<()> {
    if a.matrix.shape() != b.matrix.shape() {
        return Err(Error::ShapeMismatch(format!(
            "embedding sets {:?} and {:?}",
            a.matrix.shape(),
            b.matrix.shape()
        )));
    }
    Ok(())
}

fn check_pair(source: &EmbeddingSet, target: &EmbeddingSet) -> Result<()> {
    if source.vocab_hash != target.vocab_hash {
        return Err(Error::VocabMismatch {
            expected: target.vocab_hash.clone(),
            found: source.vocab_hash.clone(),
        });
    }
    check_same_shape(source, target)
}

/// In-place Cholesky factorization of a symmetric positive definite matrix;
/// the lower triangle receives L with A = L·Lᵀ.
fn cholesky(a: &mut Matrix) -> Result<()> {
    let n = a.rows();
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= a[(j, k)] * a[(j, k)];
        }
        if !(d > 0.0) {
            return Err(Error::DegenerateInput("Gram matrix is not positive definite".into()));
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = s / d;
        }
    }
    Ok(())
}

/// Solves L·Lᵀ·X = B column by column, overwriting `b`.
fn cholesky_solve(l: &Matrix, b: &mut Matrix) {
    let n = l.rows();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = b[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * b[(k, c)];
            }
            b[(i, c)] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)] * b[(k, c)];
            }
            b[(i, c)] = s / l[(i, i)];
        }
    }
}

/// Least-squares affine map from `source` rows onto `target` rows, solved
/// through the damped normal equations of the intercept-augmented design.
pub fn fit_affine_alignment(source: &EmbeddingSet, target: &EmbeddingSet) -> Result<AffineMap> {
    check_pair(source, target)?;
    let (v, d) = source.matrix.shape();
    if v < d + 1 {
        return Err(Error::DegenerateInput(format!(
            "{v} rows cannot determine an affine map in dimension {d}"
        )));
    }
    let augmented = Matrix::from_fn(v, d + 1, |r, c| if c < d { source.matrix[(r, c)] } else { 1.0 });
    let at = augmented.transpose();
    let mut gram = at.matmul(&augmented);
    for i in 0..=d {
        gram[(i, i)] += TIKHONOV_DAMPING;
    }
    let mut rhs = at.matmul(&target.matrix);
    cholesky(&mut gram)?;
    cholesky_solve(&gram, &mut rhs);
    rhs.ensure_finite("affine alignment")?;
    let weight = Matrix::from_fn(d, d, |r, c| rhs[(r, c)]);
    let bias = rhs.row(d).to_vec();
    Ok(AffineMap { weight, bias })
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    // For a == b, sqrt(na · nb) rounds back to exactly `dot`.
    Some((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Mean row-wise cosine similarity. A pair with a zero row scores 0 and is
/// counted, unless `exclude_zero_rows` drops it from the mean. Returns 0 when
/// no row pair is left.
pub fn mean_cosine_similarity(aligned: &EmbeddingSet, target: &EmbeddingSet, exclude_zero_rows: bool) -> Result<f64> {
    check_same_shape(aligned, target)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in 0..aligned.len() {
        match cosine(aligned.matrix.row(r), target.matrix.row(r)) {
            Some(c) => {
                sum += c;
                count += 1;
            }
            None if !exclude_zero_rows => count += 1,
            None => {}
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Result of aligning one model's output embeddings to another's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub source_id: String,
    pub target_id: String,
    pub damping: f64,
    pub residual: f64,
    pub mean_cosine: f64,
}

impl AlignmentReport {
    pub const TSV_HEADER: &'static str = "source\ttarget\tdamping\tresidual\tmean_cosine";

    pub fn to_tsv_line(&self) -> String {
        format!(
            "{}\t{}\t{:e}\t{:e}\t{}",
            self.source_id, self.target_id, self.damping, self.residual, self.mean_cosine
        )
    }
}

/// Fits the map from `source` into `target` space and scores the result.
pub fn compare_embeddings(source: &EmbeddingSet, target: &EmbeddingSet, exclude_zero_rows: bool) -> Result<AlignmentReport> {
    let map = fit_affine_alignment(source, target)?;
    let aligned = map.apply(source)?;
    Ok(AlignmentReport {
        source_id: source.model_id.clone(),
        target_id: target.model_id.clone(),
        damping: TIKHONOV_DAMPING,
        residual: map.residual(source, target)?,
        mean_cosine: mean_cosine_similarity(&aligned, target, exclude_zero_rows)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Arch, ModelParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(matrix: Matrix) -> EmbeddingSet {
        EmbeddingSet {
            matrix,
            vocab_hash: "h".into(),
            model_id: "m".into(),
        }
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn extraction_is_a_transposed_copy() {
        let arch = Arch::new(6, 3, 4, 4).unwrap();
        let zero = ModelCheckpoint::new("z", ModelParams::zeros(arch), "h");
        let e = extract_output_embeddings(&zero);
        assert_eq!(e.matrix.shape(), (6, 4));
        assert!(e.matrix.as_slice().iter().all(|&x| x == 0.0));

        let ckpt = crate::training::init_model(arch, "h", 3);
        let a = extract_output_embeddings(&ckpt);
        assert_eq!(a, extract_output_embeddings(&ckpt));
        assert_eq!(a.matrix[(5, 2)], ckpt.params().out_w[(2, 5)]);
    }

    #[test]
    fn identity_alignment() {
        let x = set(random(20, 4, 1));
        let map = fit_affine_alignment(&x, &x).unwrap();
        assert!(map.weight.max_abs_diff(&Matrix::identity(4)) < 1e-6);
        assert!(map.bias.iter().all(|b| b.abs() < 1e-6));
        assert!(map.residual(&x, &x).unwrap() < 1e-6);
        let aligned = map.apply(&x).unwrap();
        assert!((mean_cosine_similarity(&aligned, &x, false).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(mean_cosine_similarity(&x, &x, false).unwrap(), 1.0);
    }

    #[test]
    fn recovers_a_planted_affine_map() {
        let x = set(random(40, 5, 2));
        let r = {
            let mut m = random(5, 5, 3);
            for i in 0..5 {
                m[(i, i)] += 3.0;
            }
            m
        };
        let t = [0.5, -1.0, 2.0, 0.0, 0.25];
        let y = AffineMap { weight: r.clone(), bias: t.to_vec() }.apply(&x).unwrap();
        let map = fit_affine_alignment(&x, &y).unwrap();
        assert!(map.residual(&x, &y).unwrap() < 1e-6);
        assert!(map.weight.max_abs_diff(&r) < 1e-6);
        let aligned = map.apply(&x).unwrap();
        assert!(mean_cosine_similarity(&aligned, &y, false).unwrap() > 0.999);
    }

    #[test]
    fn identical_source_rows_map_to_target_mean() {
        let x = set(Matrix::from_fn(12, 3, |_, c| c as f64 + 0.5));
        let y = set(random(12, 3, 4));
        let map = fit_affine_alignment(&x, &y).unwrap();
        let aligned = map.apply(&x).unwrap();
        for c in 0..3 {
            let mean: f64 = (0..12).map(|r| y.matrix[(r, c)]).sum::<f64>() / 12.0;
            for r in 0..12 {
                assert!((aligned.matrix[(r, c)] - mean).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = set(random(4, 4, 5));
        assert!(matches!(fit_affine_alignment(&x, &x), Err(Error::DegenerateInput(_))));
        let mut other = set(random(10, 4, 6));
        let y = set(random(10, 4, 7));
        other.vocab_hash = "other".into();
        assert!(matches!(fit_affine_alignment(&other, &y), Err(Error::VocabMismatch { .. })));
        let z = set(random(10, 3, 8));
        assert!(matches!(fit_affine_alignment(&y, &z), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn orthogonal_and_zero_rows() {
        let a = set(Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = set(Matrix::from_vec(2, 2, vec![0.0, 3.0, -2.0, 0.0]).unwrap());
        assert_eq!(mean_cosine_similarity(&a, &b, false).unwrap(), 0.0);

        let c = set(Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let d = set(Matrix::from_vec(2, 2, vec![2.0, 0.0, 1.0, 1.0]).unwrap());
        assert_eq!(mean_cosine_similarity(&c, &d, false).unwrap(), 0.5);
        assert_eq!(mean_cosine_similarity(&c, &d, true).unwrap(), 1.0);
        let zero = set(Matrix::zeros(2, 2));
        assert_eq!(mean_cosine_similarity(&zero, &zero, true).unwrap(), 0.0);
    }

    #[test]
    fn report_fields() {
        let x = set(random(10, 2, 9));
        let rep = compare_embeddings(&x, &x, false).unwrap();
        assert_eq!(rep.damping, TIKHONOV_DAMPING);
        assert!(rep.residual < 1e-6);
        assert!(rep.to_tsv_line().starts_with("m\tm\t"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn fit_is_a_local_minimum(seed in 0u64..1000, rows in 8usize..20, dim in 1usize..5) {
            let x = set(random(rows, dim, seed));
            let y = set(random(rows, dim, seed + 1));
            let map = fit_affine_alignment(&x, &y).unwrap();
            let base = map.residual(&x, &y).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..5 {
                let mut p = map.clone();
                for w in p.weight.as_mut_slice().iter_mut().chain(p.bias.iter_mut()) {
                    *w += rng.gen_range(-1e-3..1e-3);
                }
                prop_assert!(p.residual(&x, &y).unwrap() >= base - 1e-12);
            }
        }

        #[test]
        fn similarity_is_bounded(seed in 0u64..1000, rows in 1usize..10, dim in 1usize..5) {
            let x = set(random(rows, dim, seed));
            let y = set(random(rows, dim, seed + 7));
            let s = mean_cosine_similarity(&x, &y, false).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert_eq!(mean_cosine_similarity(&x, &x, false).unwrap(), 1.0);
        }

        #[test]
        fn alignment_absorbs_positive_scale(seed in 0u64..1000, scale in 0.05f64..20.0) {
            let x = set(random(15, 3, seed));
            let y = set(random(15, 3, seed + 3));
            let scaled = set(Matrix::from_fn(15, 3, |r, c| scale * x.matrix[(r, c)]));
            let a = compare_embeddings(&x, &y, false).unwrap().mean_cosine;
            let b = compare_embeddings(&scaled, &y, false).unwrap().mean_cosine;
            prop_assert!((a - b).abs() < 1e-6);
        }

        #[test]
        fn fit_is_bit_deterministic(seed in 0u64..1000) {
            let x = set(random(12, 3, seed));
            let y = set(random(12, 3, seed + 5));
            let a = fit_affine_alignment(&x, &y).unwrap();
            let b = fit_affine_alignment(&x, &y).unwrap();
            prop_assert!(a.weight.as_slice().iter().zip(b.weight.as_slice()).all(|(p, q)| p.to_bits() == q.to_bits()));
            prop_assert!(a.bias.iter().zip(&b.bias).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}
