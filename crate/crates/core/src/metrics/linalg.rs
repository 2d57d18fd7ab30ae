use nalgebra::DMatrix;

use crate::autodiff::Tensor;
use crate::nn::ClassifierModel;
use crate::scalar::Scalar;

fn to_dmatrix<T: Scalar>(w: &Tensor<T>) -> DMatrix<f64> {
    DMatrix::from_row_iterator(w.rows(), w.cols(), w.values().iter().map(|v| v.as_f64()))
}

/// Singular values in descending order.
pub fn singular_values<T: Scalar>(w: &Tensor<T>) -> Vec<f64> {
    if w.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = to_dmatrix(w).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// `max(rows, cols) · ε · σ_max`, with ε the machine epsilon of `T`.
pub fn default_rank_tol<T: Scalar>(w: &Tensor<T>, sigma_max: f64) -> f64 {
    w.rows().max(w.cols()) as f64 * T::epsilon().as_f64() * sigma_max
}

/// Number of singular values above `tol` (default [`default_rank_tol`]).
pub fn matrix_rank<T: Scalar>(w: &Tensor<T>, tol: Option<f64>) -> usize {
    let s = singular_values(w);
    let Some(&top) = s.first() else { return 0 };
    let tol = tol.unwrap_or_else(|| default_rank_tol(w, top));
    s.iter().filter(|&&v| v > tol).count()
}

/// Column count minus rank.
pub fn nullity<T: Scalar>(w: &Tensor<T>) -> usize {
    w.cols() - matrix_rank(w, None)
}

/// Orthonormal basis of `{v : Wv = 0}`, one vector per entry.
pub fn null_space<T: Scalar>(w: &Tensor<T>) -> Vec<Vec<f64>> {
    let (rows, cols) = (w.rows(), w.cols());
    if cols == 0 {
        return Vec::new();
    }
    // pad with zero rows so the decomposition yields a full right basis
    let mut m = DMatrix::<f64>::zeros(rows.max(cols), cols);
    m.view_mut((0, 0), (rows, cols)).copy_from(&to_dmatrix(w));
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let top = svd.singular_values.max();
    let tol = default_rank_tol(w, top);
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= tol || top == 0.0 {
            out.push(v_t.row(i).iter().copied().collect());
        }
    }
    out
}

/// Rank of the head's linear map, taken as the `N × m` matrix acting on features.
pub fn head_rank<T: Scalar>(model: &ClassifierModel<T>) -> usize {
    matrix_rank(&model.effective_head_matrix().transpose(), None)
}

/// `m − rank`: free directions in feature space the head cannot see.
pub fn head_nullity<T: Scalar>(model: &ClassifierModel<T>) -> usize {
    nullity(&model.effective_head_matrix().transpose())
}

/// Euclidean norm of `W·v`.
pub fn apply_norm<T: Scalar>(w: &Tensor<T>, v: &[f64]) -> f64 {
    (0..w.rows())
        .map(|i| {
            w.row(i)
                .iter()
                .zip(v)
                .map(|(&a, &b)| a.as_f64() * b)
                .sum::<f64>()
                .powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Spectral norm.
pub fn operator_norm<T: Scalar>(w: &Tensor<T>) -> f64 {
    singular_values(w).first().copied().unwrap_or(0.0)
}
