//! Minimal C ABI over the Clarabel interior-point solver.
//!
//! Problem form: minimize 0.5 x'Px + q'x subject to Ax + s = b, s in K,
//! where K is the product, in order, of a zero cone, a nonnegative cone and
//! a list of PSD cones in scaled upper-triangular (column-major) form.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use std::os::raw::c_int;
use std::slice;

#[repr(C)]
pub struct ClarabelFfiSettings {
    pub max_iter: u32,
    pub time_limit: f64,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub tol_feas: f64,
    pub tol_infeas_abs: f64,
    pub tol_infeas_rel: f64,
    pub verbose: c_int,
}

#[repr(C)]
pub struct ClarabelFfiInfo {
    pub status: c_int,
    pub iterations: u32,
    pub primal_objective: f64,
    pub solve_time: f64,
}

fn status_code(s: SolverStatus) -> c_int {
    match s {
        SolverStatus::Unsolved => 0,
        SolverStatus::Solved => 1,
        SolverStatus::PrimalInfeasible => 2,
        SolverStatus::DualInfeasible => 3,
        SolverStatus::AlmostSolved => 4,
        SolverStatus::AlmostPrimalInfeasible => 5,
        SolverStatus::AlmostDualInfeasible => 6,
        SolverStatus::MaxIterations => 7,
        SolverStatus::MaxTime => 8,
        SolverStatus::NumericalError => 9,
        SolverStatus::InsufficientProgress => 10,
        _ => 11,
    }
}

unsafe fn csc(
    m: usize,
    n: usize,
    colptr: *const i64,
    rowval: *const i64,
    nzval: *const f64,
) -> CscMatrix<f64> {
    let cp: Vec<usize> = slice::from_raw_parts(colptr, n + 1)
        .iter()
        .map(|&v| v as usize)
        .collect();
    let nnz = cp[n];
    let rv: Vec<usize> = if nnz == 0 {
        Vec::new()
    } else {
        slice::from_raw_parts(rowval, nnz).iter().map(|&v| v as usize).collect()
    };
    let nz: Vec<f64> = if nnz == 0 {
        Vec::new()
    } else {
        slice::from_raw_parts(nzval, nnz).to_vec()
    };
    CscMatrix::new(m, n, cp, rv, nz)
}

/// Returns 0 on a completed solve (inspect `info.status`), nonzero when the
/// problem could not be set up.
///
/// # Safety
/// All pointers must reference arrays of the documented lengths; `P` must be
/// upper triangular.
#[no_mangle]
pub unsafe extern "C" fn clarabel_ffi_solve(
    n: i64,
    m: i64,
    p_colptr: *const i64,
    p_rowval: *const i64,
    p_nzval: *const f64,
    q: *const f64,
    a_colptr: *const i64,
    a_rowval: *const i64,
    a_nzval: *const f64,
    b: *const f64,
    n_zero: i64,
    n_nonneg: i64,
    n_psd: i64,
    psd_dims: *const i64,
    settings: *const ClarabelFfiSettings,
    x_out: *mut f64,
    info: *mut ClarabelFfiInfo,
) -> c_int {
    let result = std::panic::catch_unwind(|| {
        let n = n as usize;
        let m = m as usize;
        let s = &*settings;
        let p = csc(n, n, p_colptr, p_rowval, p_nzval);
        let a = csc(m, n, a_colptr, a_rowval, a_nzval);
        let qv = slice::from_raw_parts(q, n).to_vec();
        let bv = if m == 0 { Vec::new() } else { slice::from_raw_parts(b, m).to_vec() };

        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        if n_zero > 0 {
            cones.push(SupportedConeT::ZeroConeT(n_zero as usize));
        }
        if n_nonneg > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(n_nonneg as usize));
        }
        if n_psd > 0 {
            for &d in slice::from_raw_parts(psd_dims, n_psd as usize) {
                cones.push(SupportedConeT::PSDTriangleConeT(d as usize));
            }
        }

        let time_limit = if s.time_limit > 0.0 { s.time_limit } else { f64::INFINITY };
        let settings = DefaultSettingsBuilder::default()
            .max_iter(s.max_iter)
            .time_limit(time_limit)
            .tol_gap_abs(s.tol_gap_abs)
            .tol_gap_rel(s.tol_gap_rel)
            .tol_feas(s.tol_feas)
            .tol_infeas_abs(s.tol_infeas_abs)
            .tol_infeas_rel(s.tol_infeas_rel)
            .verbose(s.verbose != 0)
            .build()
            .map_err(|_| 2)?;

        let mut solver = DefaultSolver::new(&p, &qv, &a, &bv, &cones, settings).map_err(|_| 3)?;
        solver.solve();

        let x = slice::from_raw_parts_mut(x_out, n);
        x.copy_from_slice(&solver.solution.x);
        let out = &mut *info;
        out.status = status_code(solver.solution.status);
        out.iterations = solver.solution.iterations;
        out.primal_objective = solver.solution.obj_val;
        out.solve_time = solver.solution.solve_time;
        Ok::<c_int, c_int>(0)
    });
    match result {
        Ok(Ok(code)) => code,
        Ok(Err(code)) => code,
        Err(_) => 4,
    }
}
