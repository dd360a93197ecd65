//! Evaluation metrics: structure recovery (SHD, TPR, precision, F1),
//! representation recovery (rank-correlation MCC, kernel-regression R2),
//! and the wind-surrogate graph metrics for spatial data.

use ndarray::{Array1, Array2};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, CadreError, Result};
use crate::rng::{self, stream};

/// Everything one evaluation produces; absent entries mean the inputs
/// required for that metric were unavailable.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shd_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shd_raw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tpr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcc_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcc_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shd_latent_inst: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shd_latent_lag: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wshd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wshd_raw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wtpr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smcc: Option<f64>,
    /// `permutation_used[k]` is the estimated column matched to true
    /// column `k` when the MCC allowed permutations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permutation_used: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2_bandwidth: Option<f64>,
}

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(shape_mismatch(a.dim(), b.dim()));
    }
    Ok(())
}

/// Structural Hamming distance over off-diagonal entries; normalized form
/// divides by `d (d - 1)`.
pub fn shd(est: &Array2<f64>, truth: &Array2<f64>, normalize: bool) -> Result<f64> {
    check_same_shape(est, truth)?;
    let d = est.nrows();
    if d != est.ncols() {
        return Err(CadreError::NonSquare {
            rows: d,
            cols: est.ncols(),
        });
    }
    let mut count = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j && ((est[[i, j]] != 0.0) != (truth[[i, j]] != 0.0)) {
                count += 1.0;
            }
        }
    }
    if normalize {
        Ok(count / (d * (d - 1)) as f64)
    } else {
        Ok(count)
    }
}

/// `(TPR, precision)`; an empty truth makes recall vacuously 1 and an empty
/// estimate makes precision vacuously 1.
pub fn tpr_precision(est: &Array2<f64>, truth: &Array2<f64>) -> Result<(f64, f64)> {
    check_same_shape(est, truth)?;
    let mut hits = 0.0;
    let mut n_true = 0.0;
    let mut n_est = 0.0;
    for (e, t) in est.iter().zip(truth.iter()) {
        let (e, t) = (*e != 0.0, *t != 0.0);
        if e && t {
            hits += 1.0;
        }
        if t {
            n_true += 1.0;
        }
        if e {
            n_est += 1.0;
        }
    }
    let tpr = if n_true == 0.0 { 1.0 } else { hits / n_true };
    let precision = if n_est == 0.0 { 1.0 } else { hits / n_est };
    Ok((tpr, precision))
}

pub fn f1_score(tpr: f64, precision: f64) -> f64 {
    if tpr + precision == 0.0 {
        0.0
    } else {
        2.0 * tpr * precision / (tpr + precision)
    }
}

/// Average ranks with ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = mean_rank;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation; `None` when either column is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (
        a.iter().sum::<f64>() / n,
        b.iter().sum::<f64>() / n,
    );
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        None
    } else {
        Some(num / (va.sqrt() * vb.sqrt()))
    }
}

/// Spearman rank correlation; constant columns yield `None` (callers treat
/// that as zero correlation and warn).
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&ranks(a), &ranks(b))
}

/// Mean absolute Spearman correlation between matched components. With
/// `allow_permutation` the matching maximizes the mean over assignments;
/// otherwise components pair by index. Returns the matching when permuted.
pub fn mcc(
    est: &Array2<f64>,
    truth: &Array2<f64>,
    allow_permutation: bool,
) -> Result<(f64, Option<Vec<usize>>)> {
    check_same_shape(est, truth)?;
    let (t_len, d) = est.dim();
    if t_len < 3 {
        return Err(CadreError::InsufficientSamples {
            needed: 3,
            got: t_len,
        });
    }
    let col = |m: &Array2<f64>, j: usize| -> Vec<f64> { m.column(j).to_vec() };
    let mut corr = Array2::zeros((d, d));
    let mut warned = false;
    for i in 0..d {
        for j in 0..d {
            let c = spearman(&col(est, i), &col(truth, j));
            if c.is_none() && !warned {
                eprintln!("warning: constant column in MCC input; treating correlation as 0");
                warned = true;
            }
            corr[[i, j]] = c.unwrap_or(0.0).abs();
        }
    }
    if !allow_permutation {
        let mean = (0..d).map(|i| corr[[i, i]]).sum::<f64>() / d as f64;
        return Ok((mean, None));
    }
    // maximize the mean |correlation| by optimal assignment (scaled to
    // integers for the exact solver)
    let weights = Matrix::from_fn(d, d, |(i, j)| (corr[[i, j]] * 1e12) as i64);
    let (_, assignment) = kuhn_munkres(&weights);
    // assignment[est_col] = true_col; invert so perm[true_col] = est_col
    let mut perm = vec![0usize; d];
    for (est_col, &true_col) in assignment.iter().enumerate() {
        perm[true_col] = est_col;
    }
    let mean = (0..d).map(|k| corr[[perm[k], k]]).sum::<f64>() / d as f64;
    Ok((mean, Some(perm)))
}

/// Relabels an estimated latent adjacency with the MCC permutation so it can
/// be compared against the ground-truth ordering.
pub fn permute_adjacency(adj: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    let d = adj.nrows();
    Array2::from_shape_fn((d, d), |(i, j)| adj[[perm[i], perm[j]]])
}

/// Bandwidth scale applied to the median pairwise distance of the whitened
/// predictors; shrinks with the training size so the smoother tightens
/// around identical data.
const R2_BANDWIDTH_SCALE: f64 = 0.35;

/// Nadaraya-Watson regression R2 from estimated to true latents: whitened
/// predictors, Gaussian kernel with a scaled median-distance bandwidth,
/// deterministic seeded 70/30 split, mean over target coordinates, floored
/// at zero. Returns `(r2, bandwidth)`.
pub fn r2_kernel(est: &Array2<f64>, truth: &Array2<f64>, split_seed: u64) -> Result<(f64, f64)> {
    let (t_len, d_est) = est.dim();
    if truth.nrows() != t_len {
        return Err(shape_mismatch((t_len, truth.ncols()), truth.dim()));
    }
    if t_len < 20 {
        return Err(CadreError::InsufficientSamples {
            needed: 20,
            got: t_len,
        });
    }
    // whiten the predictors so the isotropic kernel is invariant to
    // invertible affine maps of the estimate
    let white = whiten(est);
    let mut idx: Vec<usize> = (0..t_len).collect();
    let mut r = rng::derive(split_seed, stream::METRIC_SPLIT);
    idx.shuffle(&mut r);
    let n_train = (t_len as f64 * 0.7).round() as usize;
    let (train_idx, test_idx) = idx.split_at(n_train.clamp(1, t_len - 1));

    // median pairwise distance on a subsample of the training rows
    let probe: Vec<usize> = train_idx.iter().copied().take(512).collect();
    let mut dists = Vec::with_capacity(probe.len() * (probe.len() - 1) / 2);
    for (a, &i) in probe.iter().enumerate() {
        for &j in probe.iter().skip(a + 1) {
            let mut acc = 0.0;
            for k in 0..d_est {
                let diff = white[[i, k]] - white[[j, k]];
                acc += diff * diff;
            }
            dists.push(acc.sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if dists.is_empty() { 1.0 } else { dists[dists.len() / 2] };
    let h = (median * R2_BANDWIDTH_SCALE
        * (train_idx.len() as f64).powf(-1.0 / (4.0 + d_est as f64)))
    .max(1e-6);
    let inv2h2 = 1.0 / (2.0 * h * h);

    let d_true = truth.ncols();
    let mut r2_sum = 0.0;
    let mut preds = vec![0.0; test_idx.len()];
    for c in 0..d_true {
        // NW prediction of this coordinate on held-out points
        for (out, &ti) in preds.iter_mut().zip(test_idx.iter()) {
            let mut num = 0.0;
            let mut den = 0.0;
            for &tr in train_idx.iter() {
                let mut acc = 0.0;
                for k in 0..d_est {
                    let diff = white[[ti, k]] - white[[tr, k]];
                    acc += diff * diff;
                }
                let w = (-acc * inv2h2).exp();
                num += w * truth[[tr, c]];
                den += w;
            }
            *out = if den > 1e-300 { num / den } else { f64::NAN };
        }
        let train_mean =
            train_idx.iter().map(|&t| truth[[t, c]]).sum::<f64>() / train_idx.len() as f64;
        let test_mean =
            test_idx.iter().map(|&t| truth[[t, c]]).sum::<f64>() / test_idx.len() as f64;
        let mut ss_res = 0.0;
        let mut ss_tot = 0.0;
        for (p, &ti) in preds.iter().zip(test_idx.iter()) {
            let y = truth[[ti, c]];
            let p = if p.is_finite() { *p } else { train_mean };
            ss_res += (y - p) * (y - p);
            ss_tot += (y - test_mean) * (y - test_mean);
        }
        r2_sum += if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };
    }
    Ok(((r2_sum / d_true as f64).max(0.0), h))
}

fn whiten(x: &Array2<f64>) -> Array2<f64> {
    let (t_len, d) = x.dim();
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / t_len as f64).collect();
    let mut cov = nalgebra::DMatrix::zeros(d, d);
    for t in 0..t_len {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (x[[t, i]] - mean[i]) * (x[[t, j]] - mean[j]);
            }
        }
    }
    cov /= t_len as f64;
    let eig = nalgebra::SymmetricEigen::new(cov);
    let floor = 1e-12 * (eig.eigenvalues.iter().sum::<f64>() / d as f64).max(1e-300);
    let mut out = Array2::zeros((t_len, d));
    for t in 0..t_len {
        for i in 0..d {
            let mut proj = 0.0;
            for k in 0..d {
                proj += eig.eigenvectors[(k, i)] * (x[[t, k]] - mean[k]);
            }
            out[[t, i]] = proj / eig.eigenvalues[i].max(floor).sqrt();
        }
    }
    out
}

/// Wind-induced surrogate reference graph: each node points to the grid
/// point nearest to `coords + step_scale * wind`, skipping itself and
/// zero-wind nodes.
pub fn wind_reference_graph(
    coords: &Array2<f64>,
    winds: &Array2<f64>,
    step_scale: f64,
) -> Result<Array2<f64>> {
    let d = coords.nrows();
    if coords.ncols() != 2 || winds.dim() != (d, 2) {
        return Err(shape_mismatch((d, 2), winds.dim()));
    }
    let mut adj = Array2::zeros((d, d));
    for i in 0..d {
        if winds[[i, 0]] == 0.0 && winds[[i, 1]] == 0.0 {
            continue;
        }
        let tx = coords[[i, 0]] + step_scale * winds[[i, 0]];
        let ty = coords[[i, 1]] + step_scale * winds[[i, 1]];
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for j in 0..d {
            let dx = coords[[j, 0]] - tx;
            let dy = coords[[j, 1]] - ty;
            let dist = dx * dx + dy * dy;
            if dist < best_d {
                best_d = dist;
                best = j;
            }
        }
        if best != i {
            adj[[i, best]] = 1.0;
        }
    }
    Ok(adj)
}

/// `(WSHD normalized by d(d-1), WTPR, raw WSHD)` against the wind surrogate.
pub fn wshd_wtpr(est: &Array2<f64>, reference: &Array2<f64>) -> Result<(f64, f64, f64)> {
    check_same_shape(est, reference)?;
    let raw = shd(est, reference, false)?;
    let norm = shd(est, reference, true)?;
    let (wtpr, _) = tpr_precision(est, reference)?;
    Ok((norm, wtpr, raw))
}

/// Best mean absolute Pearson correlation between the target signal and any
/// size-`subset_size` subset of estimated latent columns; exhaustive over
/// subsets, guarded to `d <= 12`.
pub fn smcc(est: &Array2<f64>, target: &Array1<f64>, subset_size: usize) -> Result<f64> {
    let (t_len, d) = est.dim();
    if d > 12 {
        return Err(CadreError::DimensionTooLarge { dim: d, max: 12 });
    }
    if subset_size == 0 || subset_size > d {
        return Err(CadreError::InvalidConfig(format!(
            "subset size {subset_size} must lie in 1..={d}"
        )));
    }
    if target.len() != t_len {
        return Err(shape_mismatch(t_len, target.len()));
    }
    let target_v = target.to_vec();
    let corrs: Vec<f64> = (0..d)
        .map(|j| {
            pearson(&est.column(j).to_vec(), &target_v)
                .unwrap_or(0.0)
                .abs()
        })
        .collect();
    // mean over a subset is maximized by the top-k correlations, but keep the
    // exhaustive search as written so future non-separable scores still work
    let mut best = f64::NEG_INFINITY;
    let mut subset = vec![0usize; subset_size];
    fn visit(
        corrs: &[f64],
        subset: &mut Vec<usize>,
        depth: usize,
        start: usize,
        best: &mut f64,
    ) {
        if depth == subset.len() {
            let mean: f64 =
                subset.iter().map(|&j| corrs[j]).sum::<f64>() / subset.len() as f64;
            if mean > *best {
                *best = mean;
            }
            return;
        }
        for j in start..corrs.len() {
            subset[depth] = j;
            visit(corrs, subset, depth + 1, j + 1, best);
        }
    }
    visit(&corrs, &mut subset, 0, 0, &mut best);
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussians(t_len: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::derive(seed, 50);
        Array2::from_shape_fn((t_len, d), |_| {
            let v: f64 = r.sample(StandardNormal);
            v
        })
    }

    #[test]
    fn shd_hand_cases() {
        let truth = array![[0.0, 1.0], [0.0, 0.0]];
        let est = Array2::<f64>::zeros((2, 2));
        assert_eq!(shd(&truth, &truth, false).unwrap(), 0.0);
        assert_eq!(shd(&est, &truth, false).unwrap(), 1.0);
        assert_eq!(shd(&est, &truth, true).unwrap(), 0.5);
        assert_eq!(
            shd(&est, &truth, true).unwrap(),
            shd(&truth, &est, true).unwrap()
        );
    }

    #[test]
    fn tpr_precision_conventions() {
        let truth = array![
            [0.0, 1.0, 1.0],
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0]
        ];
        let (tpr, prec) = tpr_precision(&truth, &truth).unwrap();
        assert_eq!((tpr, prec), (1.0, 1.0));
        // superset with one extra edge over 4 true edges
        let mut sup = truth.clone();
        sup[[1, 0]] = 1.0;
        let (tpr, prec) = tpr_precision(&sup, &truth).unwrap();
        assert_eq!(tpr, 1.0);
        assert!((prec - 0.8).abs() < 1e-12);
        // empty estimate
        let empty = Array2::<f64>::zeros((3, 3));
        let (tpr, prec) = tpr_precision(&empty, &truth).unwrap();
        assert_eq!((tpr, prec), (0.0, 1.0));
        // empty truth is vacuous
        let (tpr, _) = tpr_precision(&empty, &empty).unwrap();
        assert_eq!(tpr, 1.0);
    }

    #[test]
    fn shd_zero_iff_perfect_scores() {
        let truth = array![[0.0, 1.0], [0.0, 0.0]];
        let (tpr, prec) = tpr_precision(&truth, &truth).unwrap();
        assert!(shd(&truth, &truth, true).unwrap() == 0.0 && tpr == 1.0 && prec == 1.0);
    }

    #[test]
    fn mcc_identity_and_monotone_invariance() {
        let z = gaussians(500, 3, 1);
        let (m, _) = mcc(&z, &z, true).unwrap();
        assert!((m - 1.0).abs() < 1e-12);
        // strictly monotone transform leaves Spearman untouched
        let warped = z.mapv(f64::exp);
        let (m, _) = mcc(&warped, &z, true).unwrap();
        assert!((m - 1.0).abs() < 1e-12);
        let (m_id, _) = mcc(&warped, &z, false).unwrap();
        assert!((m_id - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mcc_recovers_column_swap() {
        let z = gaussians(800, 3, 2);
        let mut swapped = z.clone();
        // est columns: (z1, z0, z2)
        for t in 0..800 {
            swapped[[t, 0]] = z[[t, 1]];
            swapped[[t, 1]] = z[[t, 0]];
        }
        let (m, perm) = mcc(&swapped, &z, true).unwrap();
        assert!((m - 1.0).abs() < 1e-12);
        assert_eq!(perm.unwrap(), vec![1, 0, 2]);
        // identity pairing on independent columns stays far from 1
        let (m_id, _) = mcc(&swapped, &z, false).unwrap();
        assert!(m_id < 0.5, "identity-paired mcc {m_id}");
    }

    #[test]
    fn mcc_handles_constant_columns() {
        let z = gaussians(100, 2, 3);
        let mut est = z.clone();
        for t in 0..100 {
            est[[t, 0]] = 1.0;
        }
        let (m, _) = mcc(&est, &z, false).unwrap();
        assert!(m < 0.6 && m.is_finite());
    }

    #[test]
    fn permute_adjacency_relabels() {
        let adj = array![[0.0, 1.0], [0.0, 0.0]]; // 0 -> 1 in estimate labels
        let relabeled = permute_adjacency(&adj, &[1, 0]);
        assert_eq!(relabeled, array![[0.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn r2_identical_data_is_nearly_one() {
        let z = gaussians(5000, 3, 4);
        let (r2, _) = r2_kernel(&z, &z, 0).unwrap();
        assert!(r2 >= 0.99, "r2 on identical data: {r2}");
    }

    #[test]
    fn r2_invertible_nonlinear_map_stays_high() {
        let z = gaussians(5000, 3, 5);
        // invertible map: tanh squash plus a well-conditioned linear mix
        let a = array![
            [1.0, 0.3, -0.2],
            [-0.25, 0.9, 0.15],
            [0.1, -0.2, 1.1]
        ];
        let mixed = z.dot(&a.t());
        let est = &mixed.mapv(f64::tanh) + &(&mixed * 0.5);
        let (r2, _) = r2_kernel(&est, &z, 0).unwrap();
        assert!(r2 >= 0.95, "r2 under invertible warp: {r2}");
    }

    #[test]
    fn r2_independent_noise_is_low() {
        let z = gaussians(5000, 3, 6);
        let noise = gaussians(5000, 3, 7);
        let (r2, _) = r2_kernel(&noise, &z, 0).unwrap();
        assert!(r2 <= 0.1, "r2 on independent noise: {r2}");
    }

    #[test]
    fn r2_is_affine_invariant_in_the_estimate() {
        let z = gaussians(3000, 3, 8);
        let est = z.mapv(f64::tanh);
        let (base, _) = r2_kernel(&est, &z, 0).unwrap();
        let a = array![
            [2.0, 0.5, 0.0],
            [0.0, -1.5, 0.3],
            [0.7, 0.0, 0.8]
        ];
        let shifted = est.dot(&a.t()) + 3.0;
        let (moved, _) = r2_kernel(&shifted, &z, 0).unwrap();
        assert!(
            (base - moved).abs() < 0.02,
            "affine map moved r2: {base} vs {moved}"
        );
    }

    #[test]
    fn r2_needs_enough_samples() {
        let z = gaussians(10, 2, 9);
        assert!(matches!(
            r2_kernel(&z, &z, 0),
            Err(CadreError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn wind_graph_regular_grid_east_wind() {
        // 3x3 grid, uniform eastward wind, one grid-spacing step
        let mut coords = Array2::zeros((9, 2));
        for r in 0..3 {
            for c in 0..3 {
                coords[[r * 3 + c, 0]] = c as f64;
                coords[[r * 3 + c, 1]] = r as f64;
            }
        }
        let winds = Array2::from_shape_fn((9, 2), |(_, j)| if j == 0 { 1.0 } else { 0.0 });
        let adj = wind_reference_graph(&coords, &winds, 1.0).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let i = r * 3 + c;
                if c < 2 {
                    assert_eq!(adj[[i, i + 1]], 1.0, "node {i} must point east");
                } else {
                    // boundary node displaces onto itself: no edge
                    assert_eq!(adj.row(i).sum(), 0.0);
                }
            }
        }
        // row sums never exceed one
        for i in 0..9 {
            assert!(adj.row(i).sum() <= 1.0);
        }
        let calm = Array2::zeros((9, 2));
        assert_eq!(wind_reference_graph(&coords, &calm, 1.0).unwrap().sum(), 0.0);
    }

    #[test]
    fn wshd_wtpr_hand_case() {
        // ref {0->1, 1->2}, est {0->1, 0->2}
        let mut reference = Array2::<f64>::zeros((3, 3));
        reference[[0, 1]] = 1.0;
        reference[[1, 2]] = 1.0;
        let mut est = Array2::<f64>::zeros((3, 3));
        est[[0, 1]] = 1.0;
        est[[0, 2]] = 1.0;
        let (wshd_n, wtpr, raw) = wshd_wtpr(&est, &reference).unwrap();
        assert_eq!(raw, 2.0);
        assert!((wshd_n - 2.0 / 6.0).abs() < 1e-12);
        assert!((wtpr - 0.5).abs() < 1e-12);
        let (w0, t0, _) = wshd_wtpr(&reference, &reference).unwrap();
        assert_eq!((w0, t0), (0.0, 1.0));
        let empty = Array2::<f64>::zeros((3, 3));
        let (_, t_empty, _) = wshd_wtpr(&empty, &reference).unwrap();
        assert_eq!(t_empty, 0.0);
    }

    #[test]
    fn smcc_cases() {
        let z = gaussians(5000, 4, 10);
        let target = z.column(2).to_owned();
        let s = smcc(&z, &target, 1).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
        // independent target stays near zero
        let noise = gaussians(5000, 1, 11).column(0).to_owned();
        let s = smcc(&z, &noise, 1).unwrap();
        assert!(s <= 0.05, "smcc of independent target: {s}");
        // adding a weak column can only lower the mean: not monotone in size
        let strong = smcc(&z, &target, 1).unwrap();
        let wider = smcc(&z, &target, 2).unwrap();
        assert!(wider < strong);
        // guard
        let wide = gaussians(30, 13, 12);
        assert!(matches!(
            smcc(&wide, &wide.column(0).to_owned(), 2),
            Err(CadreError::DimensionTooLarge { .. })
        ));
    }

    #[test]
    fn spearman_monotone_invariance_property() {
        let mut r = rng::derive(1, 60);
        for trial in 0..100 {
            let a: Vec<f64> = (0..200).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            let b: Vec<f64> = (0..200).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            let base = spearman(&a, &b).unwrap();
            // random strictly increasing transform: scaled exp + cube
            let scale: f64 = r.gen_range(0.1..3.0);
            let warped: Vec<f64> = a
                .iter()
                .map(|&v| {
                    if trial % 2 == 0 {
                        (v * scale).exp()
                    } else {
                        v.powi(3) + scale * v
                    }
                })
                .collect();
            let after = spearman(&warped, &b).unwrap();
            assert!(
                (base - after).abs() < 1e-12,
                "trial {trial}: {base} vs {after}"
            );
        }
    }
}
