//! Finite-difference weights and operators on uniform grids.

use nalgebra::DMatrix;

/// Fornberg weights for derivatives `0..=order` at `x0` from nodes `xs`.
/// Returns `w[m][j]`, the weight of node `j` in the `m`-th derivative.
pub fn fornberg_weights(x0: f64, xs: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Stencil of `width` consecutive nodes around `i`, clamped to `[0, n)`.
pub fn stencil(i: usize, width: usize, n: usize) -> std::ops::Range<usize> {
    let start = i.saturating_sub(width / 2).min(n - width);
    start..start + width
}

/// Dense `m`-th derivative matrix on `n` uniform points of `[0, 1]`.
///
/// Rows use the centred odd-width stencil of at least fourth order
/// (`m + 4` points for odd `m`, `m + 5` for even), shifted one-sided at
/// the walls.
pub fn derivative_matrix(n: usize, m: usize) -> DMatrix<f64> {
    let h = 1.0 / (n - 1) as f64;
    let width = if m % 2 == 1 { m + 4 } else { m + 5 }.min(n);
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        let range = stencil(i, width, n);
        let xs: Vec<f64> = range.clone().map(|j| (j as f64 - i as f64) * h).collect();
        let w = fornberg_weights(0.0, &xs, m);
        for (j, wj) in range.zip(&w[m]) {
            d[(i, j)] = *wj;
        }
    }
    d
}

/// Applies the `m`-th derivative at every node of a uniform grid.
pub fn differentiate<T>(values: &[T], m: usize) -> Vec<T>
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + Default,
{
    let n = values.len();
    let h = 1.0 / (n - 1) as f64;
    let width = if m % 2 == 1 { m + 4 } else { m + 5 }.min(n);
    (0..n)
        .map(|i| {
            let range = stencil(i, width, n);
            let xs: Vec<f64> = range.clone().map(|j| (j as f64 - i as f64) * h).collect();
            let w = fornberg_weights(0.0, &xs, m);
            range.zip(&w[m]).fold(T::default(), |acc, (j, &wj)| acc + values[j] * wj)
        })
        .collect()
}

/// Matrix `C` with `(CΦ)_i ≈ ∫₁^{z_i} Φ dz` on a uniform grid; fourth order.
pub fn cumulative_from_top(n: usize) -> DMatrix<f64> {
    let h = 1.0 / (n - 1) as f64;
    let mut c = DMatrix::zeros(n, n);
    for i in (0..n - 1).rev() {
        // Θ_i = Θ_{i+1} − ∫_{z_i}^{z_{i+1}} Φ.
        for j in 0..n {
            c[(i, j)] = c[(i + 1, j)];
        }
        for (j, w) in cell_weights(i, n) {
            c[(i, j)] -= h * w;
        }
    }
    c
}

/// Cubic-interpolation weights for `∫` over cell `[i, i+1]`, in units of `h`.
pub fn cell_weights(i: usize, n: usize) -> Vec<(usize, f64)> {
    if n < 4 {
        return vec![(i, 0.5), (i + 1, 0.5)];
    }
    let start = i.saturating_sub(1).min(n - 4);
    let w: [f64; 4] = match i - start {
        0 => [9.0, 19.0, -5.0, 1.0],
        1 => [-1.0, 13.0, 13.0, -1.0],
        _ => [1.0, -5.0, 19.0, 9.0],
    };
    (0..4).map(|k| (start + k, w[k] / 24.0)).collect()
}
