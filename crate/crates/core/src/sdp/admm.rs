//! Operator-splitting solver.
//!
//! The scalar vector `u` (plus one slack per inequality) is kept on the
//! affine set `{A u = b, G u + s = h}`; each PSD block and the slack
//! orthant hold a consensus copy. Every block entry references a single
//! scalar, so the normal matrix of the block map is diagonal and the
//! `u`-step reduces to one Schur-complement solve, done by preconditioned
//! conjugate gradients.

use faer::linalg::solvers::SolveCore;
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::{Col, Conj, Side};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::problem::{SdpProblem, SdpSolution, SolveStatus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub rho: f64,
    /// Recorded for reproducibility; the iteration itself is deterministic.
    pub seed: u64,
    pub adaptive_rho: bool,
    /// Iterations between stall checks for infeasibility.
    pub stall_window: usize,
    /// Relative consensus gap below which a stall is never reported.
    pub stall_threshold: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub initial_point: Option<Vec<f64>>,
    /// Print progress to stderr every this many iterations; 0 disables.
    pub log_every: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 20_000,
            rho: 1.0,
            seed: 0,
            adaptive_rho: true,
            stall_window: 400,
            stall_threshold: 1e-2,
            cg_tol: 1e-12,
            cg_max_iters: 2_000,
            initial_point: None,
            log_every: 0,
        }
    }
}

/// Compressed sparse rows over the stacked `[u; s]` vector.
struct Csr {
    ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    fn rows(&self) -> usize {
        self.ptr.len() - 1
    }

    fn mul(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.rows() {
            let mut s = 0.0;
            for k in self.ptr[r]..self.ptr[r + 1] {
                s += self.val[k] * x[self.col[k]];
            }
            out[r] = s;
        }
    }

    fn mul_t(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for r in 0..self.rows() {
            let yr = y[r];
            if yr != 0.0 {
                for k in self.ptr[r]..self.ptr[r + 1] {
                    out[self.col[k]] += self.val[k] * yr;
                }
            }
        }
    }
}

/// Sparse Cholesky factor of `A diag(hinv) A^T + delta I`, used to
/// precondition the Schur-complement solve. The sparsity pattern does not
/// depend on `hinv`, so the symbolic analysis is done once.
struct SchurFactor {
    /// Column view of `A`: for each stacked variable, its `(row, value)` pairs.
    cols: Vec<Vec<(usize, f64)>>,
    pattern: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    symbolic: SymbolicLlt<usize>,
    llt: Option<Llt<usize, f64>>,
    vals: Vec<f64>,
}

impl SchurFactor {
    /// Returns `None` when the explicit Schur complement would be too large.
    fn new(a: &Csr, nx: usize, max_entries: usize) -> Option<Self> {
        let m = a.rows();
        let mut cols = vec![Vec::new(); nx];
        for r in 0..m {
            for k in a.ptr[r]..a.ptr[r + 1] {
                cols[a.col[k]].push((r, a.val[k]));
            }
        }
        let count: usize = cols.iter().map(|c| c.len() * (c.len() + 1) / 2).sum::<usize>() + m;
        if count > max_entries {
            return None;
        }
        let mut idx = Vec::with_capacity(count);
        for c in &cols {
            for (i, &(ri, _)) in c.iter().enumerate() {
                for &(rj, _) in &c[i..] {
                    idx.push(Pair { row: ri, col: rj });
                }
            }
        }
        idx.extend((0..m).map(|r| Pair { row: r, col: r }));
        let (pattern, argsort) = SymbolicSparseColMat::try_new_from_indices(m, m, &idx).ok()?;
        let symbolic = SymbolicLlt::try_new(pattern.as_ref(), Side::Upper).ok()?;
        Some(Self {
            cols,
            pattern,
            argsort,
            symbolic,
            llt: None,
            vals: Vec::with_capacity(count),
        })
    }

    fn factor(&mut self, hinv: &[f64]) {
        self.vals.clear();
        let m = self.pattern.nrows();
        let mut diag = vec![0.0; m];
        for (c, &h) in self.cols.iter().zip(hinv) {
            for (i, &(ri, vi)) in c.iter().enumerate() {
                for &(rj, vj) in &c[i..] {
                    let v = vi * vj * h;
                    if ri == rj {
                        diag[ri] += v;
                    }
                    self.vals.push(v);
                }
            }
        }
        // Rows may be linearly dependent, so regularize relative to the diagonal.
        self.vals.extend(diag.iter().map(|d| 1e-9 * d + 1e-14));
        self.llt = SparseColMat::new_from_argsort(self.pattern.clone(), &self.argsort, &self.vals)
            .ok()
            .and_then(|s| Llt::try_new_with_symbolic(self.symbolic.clone(), s.as_ref(), Side::Upper).ok());
    }

    fn apply(&self, r: &[f64], out: &mut [f64]) {
        match &self.llt {
            Some(llt) => {
                let mut col = Col::from_fn(r.len(), |i| r[i]);
                llt.solve_in_place_with_conj(Conj::No, col.as_mat_mut());
                out.iter_mut().enumerate().for_each(|(i, o)| *o = col[i]);
            }
            None => out.copy_from_slice(r),
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean projection of a symmetric matrix onto the PSD cone.
pub fn project_psd(v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.nrows();
    let eig = SymmetricEigen::new(v.clone());
    let vals = &eig.eigenvalues;
    let neg = (0..n).filter(|&i| vals[i] < 0.0).count();
    if neg == 0 {
        return v.clone();
    }
    // Rank-update with whichever side of the spectrum is smaller.
    let (keep, base, sign): (Vec<usize>, DMatrix<f64>, f64) = if neg * 2 <= n {
        ((0..n).filter(|&i| vals[i] < 0.0).collect(), v.clone(), -1.0)
    } else {
        ((0..n).filter(|&i| vals[i] > 0.0).collect(), DMatrix::zeros(n, n), 1.0)
    };
    let k = keep.len();
    let mut q = DMatrix::zeros(n, k);
    let mut qs = DMatrix::zeros(n, k);
    for (c, &i) in keep.iter().enumerate() {
        for r in 0..n {
            q[(r, c)] = eig.eigenvectors[(r, i)];
            qs[(r, c)] = eig.eigenvectors[(r, i)] * vals[i];
        }
    }
    let mut z = base;
    z.gemm(sign, &qs, &q.transpose(), 1.0);
    symmetrize_in_place(&mut z);
    z
}

fn symmetrize_in_place(z: &mut DMatrix<f64>) {
    let n = z.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (z[(i, j)] + z[(j, i)]);
            z[(i, j)] = a;
            z[(j, i)] = a;
        }
    }
}

struct Workspace<'a> {
    p: &'a SdpProblem,
    n: usize,
    nx: usize,
    a: Csr,
    b: Vec<f64>,
    c: Vec<f64>,
    q2: Vec<f64>,
    /// Diagonal of the block map's normal matrix.
    dl: Vec<f64>,
}

impl<'a> Workspace<'a> {
    fn new(p: &'a SdpProblem) -> Self {
        let n = p.n_vars;
        let ns = p.inequalities.len();
        let nx = n + ns;
        let mut ptr = vec![0];
        let mut col = Vec::new();
        let mut val = Vec::new();
        let mut b = Vec::new();
        for r in &p.equalities {
            let scale = norm(&r.coeffs);
            if scale == 0.0 {
                // Empty rows carry no information; a nonzero rhs is caught
                // by the final residual check.
                continue;
            }
            push_merged(&mut col, &mut val, r.vars.iter().copied().zip(r.coeffs.iter().map(|c| c / scale)));
            ptr.push(col.len());
            b.push(r.rhs / scale);
        }
        for (k, r) in p.inequalities.iter().enumerate() {
            let scale = (norm(&r.coeffs).powi(2) + 1.0).sqrt();
            let terms = r
                .vars
                .iter()
                .copied()
                .zip(r.coeffs.iter().map(|c| c / scale))
                .chain(std::iter::once((n + k, 1.0 / scale)));
            push_merged(&mut col, &mut val, terms);
            ptr.push(col.len());
            b.push(r.rhs / scale);
        }
        let mut c = vec![0.0; n];
        for &(v, w) in &p.linear_objective {
            c[v] += w;
        }
        let mut q2 = vec![0.0; n];
        for &(v, q) in &p.quadratic_objective {
            q2[v] += 2.0 * q;
        }
        let mut dl = vec![0.0; n];
        for blk in &p.blocks {
            for e in &blk.entries {
                let mult = if e.row == e.col { 1.0 } else { 2.0 };
                dl[e.var] += mult * e.coeff * e.coeff;
            }
        }
        Self {
            p,
            n,
            nx,
            a: Csr { ptr, col, val },
            b,
            c,
            q2,
            dl,
        }
    }

    /// `L^T Y` restricted to `u`.
    fn adjoint(&self, mats: &[DMatrix<f64>], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (blk, m) in self.p.blocks.iter().zip(mats) {
            for e in &blk.entries {
                let mult = if e.row == e.col { 1.0 } else { 2.0 };
                out[e.var] += mult * e.coeff * m[(e.row, e.col)];
            }
        }
    }
}

fn push_merged(col: &mut Vec<usize>, val: &mut Vec<f64>, terms: impl Iterator<Item = (usize, f64)>) {
    let mut row: Vec<(usize, f64)> = terms.collect();
    row.sort_by_key(|&(v, _)| v);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    for (v, c) in row {
        match merged.last_mut() {
            Some(last) if last.0 == v => last.1 += c,
            _ => merged.push((v, c)),
        }
    }
    for (v, c) in merged {
        if c != 0.0 {
            col.push(v);
            val.push(c);
        }
    }
}

/// Preconditioned CG on `A diag(hinv) A^T lambda = rhs`, warm-started from
/// `lambda`. Falls back to a Jacobi preconditioner without a factor.
/// Returns the iteration count.
fn schur_cg(
    a: &Csr,
    hinv: &[f64],
    factor: Option<&SchurFactor>,
    rhs: &[f64],
    lambda: &mut [f64],
    tol: f64,
    max_iters: usize,
) -> usize {
    let m = a.rows();
    let nx = hinv.len();
    let mut jacobi = vec![0.0; if factor.is_some() { 0 } else { m }];
    for (r, pc) in jacobi.iter_mut().enumerate() {
        let mut s = 0.0;
        for k in a.ptr[r]..a.ptr[r + 1] {
            s += a.val[k] * a.val[k] * hinv[a.col[k]];
        }
        *pc = if s > 0.0 { 1.0 / s } else { 1.0 };
    }
    let precond = |r: &[f64], z: &mut [f64]| match factor {
        Some(f) => f.apply(r, z),
        None => z.iter_mut().zip(r.iter().zip(&jacobi)).for_each(|(zi, (ri, pi))| *zi = ri * pi),
    };
    let mut tmp = vec![0.0; nx];
    let apply = |x: &[f64], out: &mut [f64], tmp: &mut [f64]| {
        a.mul_t(x, tmp);
        tmp.iter_mut().zip(hinv).for_each(|(t, h)| *t *= h);
        a.mul(tmp, out);
    };
    let mut r = vec![0.0; m];
    apply(lambda, &mut r, &mut tmp);
    r.iter_mut().zip(rhs).for_each(|(ri, bi)| *ri = bi - *ri);
    let stop = tol * norm(rhs).max(1.0);
    if norm(&r) <= stop {
        return 0;
    }
    let mut z = vec![0.0; m];
    precond(&r, &mut z);
    let mut d = z.clone();
    let mut rz = dot(&r, &z);
    let mut ad = vec![0.0; m];
    for it in 1..=max_iters {
        apply(&d, &mut ad, &mut tmp);
        let dad = dot(&d, &ad);
        if dad <= 0.0 {
            return it;
        }
        let alpha = rz / dad;
        lambda.iter_mut().zip(&d).for_each(|(l, di)| *l += alpha * di);
        r.iter_mut().zip(&ad).for_each(|(ri, adi)| *ri -= alpha * adi);
        if norm(&r) <= stop {
            return it;
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        d.iter_mut().zip(&z).for_each(|(di, zi)| *di = zi + beta * *di);
    }
    max_iters
}

pub fn solve(p: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution> {
    p.validate()?;
    if !(opts.tol > 0.0 && opts.rho > 0.0) {
        return Err(Error::Input("solver tol and rho must be positive".into()));
    }
    let ws = Workspace::new(p);
    let (n, nx) = (ws.n, ws.nx);
    let ns = nx - n;

    let mut x = vec![0.0; nx];
    if let Some(init) = &opts.initial_point {
        if init.len() != n {
            return Err(Error::Input(format!(
                "initial point has length {}, expected {n}",
                init.len()
            )));
        }
        x[..n].copy_from_slice(init);
    }
    let mut z: Vec<DMatrix<f64>> = p.blocks.iter().map(|b| b.matrix(&x[..n])).collect();
    let mut y: Vec<DMatrix<f64>> = p.blocks.iter().map(|b| DMatrix::zeros(b.dim, b.dim)).collect();
    let mut zs = vec![0.0; ns];
    let mut ys = vec![0.0; ns];
    let mut lambda = vec![0.0; ws.a.rows()];

    let mut rho = opts.rho;
    let mut hinv = vec![0.0; nx];
    let mut g = vec![0.0; nx];
    let mut lt_y = vec![0.0; n];
    let mut lt_z = vec![0.0; n];
    let mut lt_dz = vec![0.0; n];
    let mut rhs = vec![0.0; ws.a.rows()];
    let mut tmp_m = vec![0.0; ws.a.rows()];
    let mut at_l = vec![0.0; nx];
    let mut cg_tol = 1e-4f64;

    let mut best_gap = f64::INFINITY;
    let mut checkpoint_gap = f64::INFINITY;
    let mut status = SolveStatus::MaxIters;
    let mut iterations = 0;
    let mut last_dual = f64::INFINITY;
    let (mut cg_total, mut cg_time, mut cone_time) = (0usize, 0.0f64, 0.0f64);
    let mut factor = SchurFactor::new(&ws.a, nx, 40_000_000);
    let mut factored_rho = f64::NAN;

    for it in 1..=opts.max_iters {
        iterations = it;
        // u-step.
        ws.adjoint(&y, &mut lt_y);
        ws.adjoint(&z, &mut lt_z);
        for j in 0..n {
            let prox = if ws.dl[j] == 0.0 && ws.q2[j] == 0.0 { rho } else { 0.0 };
            let h = ws.q2[j] + rho * ws.dl[j] + prox;
            hinv[j] = 1.0 / h;
            g[j] = ws.c[j] + lt_y[j] - rho * lt_z[j] - prox * x[j];
        }
        for k in 0..ns {
            hinv[n + k] = 1.0 / rho;
            g[n + k] = ys[k] - rho * zs[k];
        }
        if ws.a.rows() > 0 {
            let hg: Vec<f64> = g.iter().zip(&hinv).map(|(a, b)| a * b).collect();
            ws.a.mul(&hg, &mut tmp_m);
            rhs.iter_mut()
                .zip(ws.b.iter().zip(&tmp_m))
                .for_each(|(r, (b, t))| *r = -b - t);
            let t0 = std::time::Instant::now();
            if let Some(f) = factor.as_mut() {
                if factored_rho != rho {
                    f.factor(&hinv);
                    factored_rho = rho;
                }
            }
            cg_total += schur_cg(
                &ws.a,
                &hinv,
                factor.as_ref(),
                &rhs,
                &mut lambda,
                cg_tol.max(opts.cg_tol),
                opts.cg_max_iters,
            );
            cg_time += t0.elapsed().as_secs_f64();
            ws.a.mul_t(&lambda, &mut at_l);
        } else {
            at_l.iter_mut().for_each(|v| *v = 0.0);
        }
        for j in 0..nx {
            x[j] = -hinv[j] * (g[j] + at_l[j]);
        }

        // Cone step and dual update.
        let t0 = std::time::Instant::now();
        let u = &x[..n];
        let mut r_pri2 = 0.0;
        let mut lu_norm2 = 0.0;
        let mut z_norm2 = 0.0;
        let mut dz: Vec<DMatrix<f64>> = Vec::with_capacity(p.blocks.len());
        for (bi, blk) in p.blocks.iter().enumerate() {
            let lu = blk.matrix(u);
            let v = &lu + &y[bi] / rho;
            let znew = project_psd(&v);
            let diff = &lu - &znew;
            y[bi] += &diff * rho;
            r_pri2 += diff.norm_squared();
            lu_norm2 += lu.norm_squared();
            z_norm2 += znew.norm_squared();
            dz.push(&znew - &z[bi]);
            z[bi] = znew;
        }
        let mut dual_s2 = 0.0;
        for k in 0..ns {
            let s = x[n + k];
            let znew = (s + ys[k] / rho).max(0.0);
            let diff = s - znew;
            ys[k] += rho * diff;
            r_pri2 += diff * diff;
            lu_norm2 += s * s;
            z_norm2 += znew * znew;
            dual_s2 += (rho * (znew - zs[k])).powi(2);
            zs[k] = znew;
        }
        cone_time += t0.elapsed().as_secs_f64();
        ws.adjoint(&dz, &mut lt_dz);
        let r_dual = (rho * rho * lt_dz.iter().map(|v| v * v).sum::<f64>() + dual_s2).sqrt();
        let r_pri = r_pri2.sqrt();
        ws.adjoint(&y, &mut lt_y);
        let eps_pri = opts.tol * (1.0 + lu_norm2.sqrt().max(z_norm2.sqrt()));
        let eps_dual = opts.tol * (1.0 + (norm(&lt_y).powi(2) + norm(&ys).powi(2)).sqrt());
        let gap = r_pri / (1.0 + lu_norm2.sqrt().max(z_norm2.sqrt()));
        cg_tol = (0.1 * gap.min(r_dual / (1.0 + norm(&lt_y)))).min(1e-4);
        last_dual = r_dual;
        if opts.log_every > 0 && it % opts.log_every == 0 {
            eprintln!(
                "it {it} gap {gap:.3e} rdual {r_dual:.3e} rho {rho:.2e} cg {cg_total} cg_s {cg_time:.1} cone_s {cone_time:.1}"
            );
        }

        if r_pri <= eps_pri && r_dual <= eps_dual {
            let (eq, ineq) = p.constraint_residuals(u);
            let eig = p.min_block_eigenvalue(u);
            if eq.max(ineq).max(-eig) <= opts.tol {
                status = SolveStatus::Optimal;
                break;
            }
        }

        best_gap = best_gap.min(gap);
        if opts.stall_window > 0 && it % opts.stall_window == 0 {
            if best_gap > opts.stall_threshold && best_gap > 0.95 * checkpoint_gap {
                status = SolveStatus::Infeasible;
                break;
            }
            checkpoint_gap = best_gap;
        }

        if opts.adaptive_rho && it % 50 == 0 {
            let pr = r_pri / eps_pri;
            let du = r_dual / eps_dual;
            if pr > 10.0 * du {
                rho *= 2.0;
            } else if du > 10.0 * pr {
                rho /= 2.0;
            }
        }
    }

    let u = x[..n].to_vec();
    let (eq, ineq) = p.constraint_residuals(&u);
    let eig = p.min_block_eigenvalue(&u);
    let primal_residual = eq.max(ineq).max(-eig.min(0.0));
    if status == SolveStatus::MaxIters && primal_residual <= opts.tol {
        status = SolveStatus::Feasible;
    }
    Ok(SdpSolution {
        objective: p.objective(&u),
        u,
        status,
        primal_residual,
        dual_residual: last_dual,
        min_block_eigenvalue: eig,
        iterations,
    })
}
