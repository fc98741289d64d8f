//! Shared test oracles: dense-matrix reference implementations and
//! nonparametric test helpers. Everything here rebuilds quantities from
//! first principles (dense covariance assembly, textbook Gaussian
//! conditioning, naive recursions) independently of the library's
//! structured fast paths.

#![allow(dead_code)]

use kscore::score_model::{pair_list, ModelParams};
use nalgebra::{DMatrix, DVector};

/// Pairs of `n + m` objects, traces first: the trace-involving block
/// followed by the control-only block, both lexicographic.
pub fn joint_pairs(n_controls: usize, m_traces: usize) -> Vec<(usize, usize)> {
    let total = n_controls + m_traces;
    let mut mixed = Vec::new();
    let mut control = Vec::new();
    for i in 0..total {
        for j in (i + 1)..total {
            if i < m_traces {
                mixed.push((i, j));
            } else {
                control.push((i, j));
            }
        }
    }
    mixed.extend(control);
    mixed
}

fn shared_objects(a: (usize, usize), b: (usize, usize)) -> f64 {
    let mut c = 0.0;
    if a.0 == b.0 || a.0 == b.1 {
        c += 1.0;
    }
    if a.1 == b.0 || a.1 == b.1 {
        c += 1.0;
    }
    c
}

/// Dense covariance of the control score vector, assembled entry by entry.
pub fn dense_sigma_nn(params: &ModelParams, n_objects: usize) -> DMatrix<f64> {
    let pairs = pair_list(n_objects);
    let n = pairs.len();
    let mut sigma = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            sigma[(r, c)] = shared_objects(pairs[r], pairs[c]) * params.sigma2_a;
        }
        sigma[(r, r)] += params.sigma2_e;
    }
    sigma
}

/// Dense covariance of the full partitioned score vector (trace block first).
pub fn dense_joint_sigma(
    params: &ModelParams,
    n_controls: usize,
    m_traces: usize,
) -> DMatrix<f64> {
    let pairs = joint_pairs(n_controls, m_traces);
    let t = pairs.len();
    let mut sigma = DMatrix::zeros(t, t);
    for r in 0..t {
        for c in 0..t {
            sigma[(r, c)] = shared_objects(pairs[r], pairs[c]) * params.sigma2_a;
        }
        sigma[(r, r)] += params.sigma2_e;
    }
    sigma
}

/// Textbook dense multivariate normal log-density.
pub fn dense_mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = nalgebra::Cholesky::new(cov.clone()).expect("oracle covariance must be PD");
    let l = chol.l();
    let mut log_det = 0.0;
    for i in 0..l.nrows() {
        log_det += l[(i, i)].ln();
    }
    let resid = x - mean;
    let y = l
        .solve_lower_triangular(&resid)
        .expect("triangular solve succeeds");
    -0.5 * (x.len() as f64 * (2.0 * std::f64::consts::PI).ln() + y.dot(&y)) - log_det
}

/// Textbook Gaussian conditioning of the trace block on the control block,
/// done with dense blocks and a dense solve.
pub fn dense_conditional_moments(
    s_n: &DVector<f64>,
    params: &ModelParams,
    n_controls: usize,
    m_traces: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let joint = dense_joint_sigma(params, n_controls, m_traces);
    let m = joint.nrows() - s_n.len();
    let n = s_n.len();
    let sigma_mm = joint.view((0, 0), (m, m)).into_owned();
    let sigma_mn = joint.view((0, m), (m, n)).into_owned();
    let sigma_nn = joint.view((m, m), (n, n)).into_owned();
    let chol = nalgebra::Cholesky::new(sigma_nn).expect("control covariance must be PD");

    let centered = s_n - DVector::from_element(n, params.theta);
    let solved = chol.solve(&centered);
    let mean = DVector::from_element(m, params.theta) + &sigma_mn * solved;

    let mut solved_cols = DMatrix::zeros(n, m);
    let sigma_nm = sigma_mn.transpose();
    for c in 0..m {
        let col = sigma_nm.column(c).into_owned();
        solved_cols.set_column(c, &chol.solve(&col));
    }
    let cov = sigma_mm - &sigma_mn * solved_cols;
    (mean, cov)
}

/// Kolmogorov distance between a sample and a reference CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut dist: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        dist = dist.max((f - lo).abs()).max((hi - f).abs());
    }
    dist
}

/// Two-sample Kolmogorov distance.
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len(), xb.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut dist: f64 = 0.0;
    while i < na && j < nb {
        let x = xa[i].min(xb[j]);
        while i < na && xa[i] <= x {
            i += 1;
        }
        while j < nb && xb[j] <= x {
            j += 1;
        }
        dist = dist.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    dist
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..x.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    cov / (vx * vy).sqrt()
}

/// Naive Cox-de Boor recursion, the independent oracle for basis evaluation.
/// `order` is degree + 1; `i` indexes the basis function.
pub fn de_boor_naive(knots: &[f64], order: usize, i: usize, x: f64) -> f64 {
    let last = *knots.last().unwrap();
    if order == 1 {
        let closed_right = knots[i + 1] == last && x == last;
        return if (x >= knots[i] && x < knots[i + 1]) || (closed_right && knots[i] < knots[i + 1])
        {
            1.0
        } else {
            0.0
        };
    }
    let mut left = 0.0;
    let denom_l = knots[i + order - 1] - knots[i];
    if denom_l > 0.0 {
        left = (x - knots[i]) / denom_l * de_boor_naive(knots, order - 1, i, x);
    }
    let mut right = 0.0;
    let denom_r = knots[i + order] - knots[i + 1];
    if denom_r > 0.0 {
        right = (knots[i + order] - x) / denom_r * de_boor_naive(knots, order - 1, i + 1, x);
    }
    left + right
}

/// Mean of a slice.
pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}
