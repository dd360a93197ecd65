//! Small dense linear-algebra and graph helpers used across modules.

use ndarray::Array2;

use crate::error::{CadreError, Result};

/// Converts an `ndarray` matrix into a `nalgebra` one.
pub fn to_na(a: &Array2<f64>) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_iterator(a.nrows(), a.ncols(), a.iter().copied())
}

/// Converts a `nalgebra` matrix back into an `ndarray` one.
pub fn from_na(m: &nalgebra::DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// 2-norm condition number via SVD.
pub fn condition_number(a: &Array2<f64>) -> f64 {
    let sv = to_na(a).singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Matrix inverse; `None` when LU decomposition fails.
pub fn inverse(a: &Array2<f64>) -> Option<Array2<f64>> {
    to_na(a).try_inverse().map(|m| from_na(&m))
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(a: &Array2<f64>) -> f64 {
    to_na(a)
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// `a^k` by binary exponentiation; squares when the exponent is a power of two.
pub fn matrix_power(a: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
    let d = a.nrows();
    if d != a.ncols() {
        return Err(CadreError::NonSquare {
            rows: d,
            cols: a.ncols(),
        });
    }
    let mut result = Array2::eye(d);
    let mut base = a.clone();
    let mut exp = k;
    while exp > 0 {
        if exp & 1 == 1 {
            result = result.dot(&base);
        }
        exp >>= 1;
        if exp > 0 {
            base = base.dot(&base);
        }
    }
    Ok(result)
}

/// Kahn's algorithm; returns a topological order or `None` on a cycle.
pub fn topological_order(adj: &Array2<f64>) -> Option<Vec<usize>> {
    let d = adj.nrows();
    let mut indegree = vec![0usize; d];
    for j in 0..d {
        for i in 0..d {
            if i != j && adj[[i, j]] != 0.0 {
                indegree[j] += 1;
            }
        }
    }
    let mut queue: Vec<usize> = (0..d).filter(|&j| indegree[j] == 0).collect();
    queue.sort_unstable();
    let mut order = Vec::with_capacity(d);
    let mut head = 0;
    while head < queue.len() {
        let u = queue[head];
        head += 1;
        order.push(u);
        for v in 0..d {
            if v != u && adj[[u, v]] != 0.0 {
                indegree[v] -= 1;
                if indegree[v] == 0 {
                    queue.push(v);
                }
            }
        }
    }
    if order.len() == d {
        Some(order)
    } else {
        None
    }
}

/// Exhaustive cycle check by DFS over all simple paths. Exponential; intended
/// as an independent oracle for small graphs (d <= 8 or so).
pub fn has_cycle_bruteforce(adj: &Array2<f64>) -> bool {
    let d = adj.nrows();
    fn dfs(adj: &Array2<f64>, start: usize, node: usize, visited: &mut Vec<bool>) -> bool {
        for next in 0..adj.nrows() {
            if node == next || adj[[node, next]] == 0.0 {
                continue;
            }
            if next == start {
                return true;
            }
            if !visited[next] {
                visited[next] = true;
                if dfs(adj, start, next, visited) {
                    return true;
                }
                visited[next] = false;
            }
        }
        false
    }
    for start in 0..d {
        let mut visited = vec![false; d];
        if adj[[start, start]] != 0.0 {
            return true;
        }
        if dfs(adj, start, start, &mut visited) {
            return true;
        }
    }
    false
}

/// Acyclicity check: brute force for small graphs, Kahn's otherwise.
pub fn is_acyclic(adj: &Array2<f64>) -> bool {
    if adj.nrows() <= 8 {
        !has_cycle_bruteforce(adj)
    } else {
        topological_order(adj).is_some()
    }
}
