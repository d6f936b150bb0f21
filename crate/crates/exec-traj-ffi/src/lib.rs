//! C ABI for the trade-execution trajectory solver. All state lives behind
//! opaque handles; every call returns a status code and the last error
//! message is retrievable per thread via [`et_last_error`].

use std::cell::RefCell;
use std::ffi::CString;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use libc::{c_char, size_t};

use exec_traj::moments;
use exec_traj::perturbation::solve_f2;
use exec_traj::variational::{solve_f1, ShootingConfig, SolverDetail};
use exec_traj::{
    Error, ExecutionProblem, ImpactSpec, MarketParams, PermanentImpact, TemporaryImpact,
    Trajectory,
};

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_last_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtStatus {
    EtOk = 0,
    EtNullPointer = 1,
    EtInvalidArgument = 2,
    EtNumericFailure = 3,
    EtNonConvergence = 4,
    EtBufferTooSmall = 5,
    EtInternalError = 6,
}

/// Permanent impact family selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtPermanent {
    EtPermanentZero = 0,
    EtPermanentLinear = 1,
}

/// Temporary impact family selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtTemporary {
    EtTemporaryZero = 0,
    EtTemporaryLinear = 1,
    EtTemporaryPower = 2,
}

/// Solve diagnostics mirrored into C.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EtSolveReport {
    pub converged: bool,
    pub iterations: u64,
    /// Objective at the problem's risk aversion; NaN when unavailable.
    pub objective: f64,
    /// Sup norm of the reduced Euler-Lagrange residual of the base solve.
    pub residual_sup: f64,
    pub boundary_error: f64,
    pub initial_slope: f64,
    /// Final gradient norm of the risk-aversion correction; NaN for
    /// `lambda = 0` solves.
    pub gradient_norm: f64,
}

/// Opaque problem handle: market, impact and order parameters.
pub struct EtProblem {
    impact: ImpactSpec,
    market: MarketParams,
    problem: ExecutionProblem,
}

/// Opaque trajectory handle.
pub struct EtTrajectory {
    inner: Trajectory,
}

fn status_of(err: &Error) -> EtStatus {
    match err {
        Error::InvalidParam(_) | Error::TimeOutOfRange { .. } | Error::GridMismatch(_) => {
            EtStatus::EtInvalidArgument
        }
        Error::NoConvergence { .. } | Error::BracketFail { .. } => EtStatus::EtNonConvergence,
        _ => EtStatus::EtNumericFailure,
    }
}

fn fail(err: &Error) -> EtStatus {
    set_last_error(&err.to_string());
    status_of(err)
}

fn guard<F: FnOnce() -> EtStatus>(body: F) -> EtStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic");
            EtStatus::EtInternalError
        }
    }
}

/// Copy the last error message for this thread into `buf` (NUL-terminated,
/// truncated to `cap` bytes). Returns the full message length in bytes,
/// excluding the terminator.
///
/// # Safety
/// `buf` must point to at least `cap` writable bytes, or be NULL (in which
/// case only the length is returned).
#[no_mangle]
pub unsafe extern "C" fn et_last_error(buf: *mut c_char, cap: size_t) -> size_t {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            // ensure termination even when truncated
            *buf.add(n - 1) = 0;
        }
        bytes.len() - 1
    })
}

/// Create a problem handle.
///
/// `alpha` is read only for the linear permanent family; `eta` and `p` only
/// for linear/power temporary families (`p` for power alone).
///
/// # Safety
/// `out` must be a valid pointer to an `EtProblem*` slot.
#[no_mangle]
pub unsafe extern "C" fn et_problem_new(
    s: f64,
    sigma: f64,
    permanent: EtPermanent,
    alpha: f64,
    temporary: EtTemporary,
    eta: f64,
    p: f64,
    shares: f64,
    horizon: f64,
    lambda: f64,
    out: *mut *mut EtProblem,
) -> EtStatus {
    if out.is_null() {
        set_last_error("out pointer is NULL");
        return EtStatus::EtNullPointer;
    }
    *out = ptr::null_mut();
    guard(|| {
        let build = || -> Result<EtProblem, Error> {
            let permanent = match permanent {
                EtPermanent::EtPermanentZero => PermanentImpact::Zero,
                EtPermanent::EtPermanentLinear => PermanentImpact::linear(alpha)?,
            };
            let temporary = match temporary {
                EtTemporary::EtTemporaryZero => TemporaryImpact::Zero,
                EtTemporary::EtTemporaryLinear => TemporaryImpact::linear(eta)?,
                EtTemporary::EtTemporaryPower => TemporaryImpact::power(eta, p)?,
            };
            Ok(EtProblem {
                impact: ImpactSpec::new(permanent, temporary),
                market: MarketParams::new(s, sigma)?,
                problem: ExecutionProblem::new(shares, horizon, lambda)?,
            })
        };
        match build() {
            Ok(problem) => {
                *out = Box::into_raw(Box::new(problem));
                EtStatus::EtOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Replace the temporary impact with a tabulated monotone-cubic family.
///
/// # Safety
/// `problem` must be a live handle from [`et_problem_new`]; `xs` and `ys`
/// must point to `len` readable doubles each.
#[no_mangle]
pub unsafe extern "C" fn et_problem_set_tabulated_impact(
    problem: *mut EtProblem,
    xs: *const f64,
    ys: *const f64,
    len: size_t,
) -> EtStatus {
    if problem.is_null() || xs.is_null() || ys.is_null() {
        set_last_error("NULL pointer argument");
        return EtStatus::EtNullPointer;
    }
    guard(|| {
        let xs = std::slice::from_raw_parts(xs, len).to_vec();
        let ys = std::slice::from_raw_parts(ys, len).to_vec();
        match TemporaryImpact::tabulated(xs, ys) {
            Ok(t) => {
                (*problem).impact.temporary = t;
                EtStatus::EtOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Destroy a problem handle. NULL is ignored.
///
/// # Safety
/// `problem` must be NULL or a live handle from [`et_problem_new`], not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn et_problem_free(problem: *mut EtProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Solve the optimal schedule: the risk-neutral base solve, plus the sine
/// basis risk correction when the problem's `lambda > 0`.
///
/// `ode_steps = 0` and `basis_size = 0` select the defaults (4000 / 8).
///
/// # Safety
/// `problem` must be a live handle; `out_traj` must be a valid slot;
/// `out_report` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn et_solve(
    problem: *const EtProblem,
    ode_steps: size_t,
    basis_size: size_t,
    out_traj: *mut *mut EtTrajectory,
    out_report: *mut EtSolveReport,
) -> EtStatus {
    if problem.is_null() || out_traj.is_null() {
        set_last_error("NULL pointer argument");
        return EtStatus::EtNullPointer;
    }
    *out_traj = ptr::null_mut();
    guard(|| {
        let p = &*problem;
        let cfg = ShootingConfig {
            ode_steps: if ode_steps == 0 { 4000 } else { ode_steps },
            ..ShootingConfig::default()
        };
        let basis = if basis_size == 0 { 8 } else { basis_size };

        let (f1, report1) = match solve_f1(&p.impact, &p.market, &p.problem, &cfg) {
            Ok(r) => r,
            Err(e) => return fail(&e),
        };
        let initial_slope = match report1.detail {
            SolverDetail::Shooting { initial_slope } => initial_slope,
            _ => f64::NAN,
        };
        let (full, converged, iterations, gradient_norm) = if p.problem.lambda > 0.0 {
            match solve_f2(&p.impact, &p.market, &p.problem, &f1, basis) {
                Ok((full, report2)) => {
                    let g = match report2.detail {
                        SolverDetail::BasisMinimize { gradient_norm, .. } => gradient_norm,
                        _ => f64::NAN,
                    };
                    (
                        full,
                        report1.converged && report2.converged,
                        report1.iterations + report2.iterations,
                        g,
                    )
                }
                Err(e) => return fail(&e),
            }
        } else {
            (f1, report1.converged, report1.iterations, f64::NAN)
        };

        let objective = moments::objective(&p.impact, &p.market, &p.problem, &full)
            .map(|o| o.j)
            .unwrap_or(f64::NAN);
        if !out_report.is_null() {
            *out_report = EtSolveReport {
                converged,
                iterations: iterations as u64,
                objective,
                residual_sup: report1.residual_sup,
                boundary_error: report1.boundary_error,
                initial_slope,
                gradient_norm,
            };
        }
        *out_traj = Box::into_raw(Box::new(EtTrajectory { inner: full }));
        if converged {
            EtStatus::EtOk
        } else {
            set_last_error("solver hit the iteration cap before converging");
            EtStatus::EtNonConvergence
        }
    })
}

/// Build the uniform-rate schedule on `n_steps` equal steps
/// (`n_steps = 0` selects 1000).
///
/// # Safety
/// `problem` must be a live handle; `out_traj` must be a valid slot.
#[no_mangle]
pub unsafe extern "C" fn et_trajectory_uniform(
    problem: *const EtProblem,
    n_steps: size_t,
    out_traj: *mut *mut EtTrajectory,
) -> EtStatus {
    if problem.is_null() || out_traj.is_null() {
        set_last_error("NULL pointer argument");
        return EtStatus::EtNullPointer;
    }
    guard(|| {
        let n = if n_steps == 0 { 1000 } else { n_steps };
        let traj = Trajectory::uniform(&(*problem).problem, n);
        *out_traj = Box::into_raw(Box::new(EtTrajectory { inner: traj }));
        EtStatus::EtOk
    })
}

/// Number of grid nodes in a trajectory; 0 for NULL.
///
/// # Safety
/// `traj` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn et_trajectory_len(traj: *const EtTrajectory) -> size_t {
    if traj.is_null() {
        return 0;
    }
    (*traj).inner.len()
}

/// Copy trajectory columns into caller buffers of capacity `cap` nodes.
/// Any of the three destination pointers may be NULL to skip that column.
///
/// # Safety
/// Non-NULL destinations must point to at least `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn et_trajectory_copy(
    traj: *const EtTrajectory,
    times: *mut f64,
    values: *mut f64,
    rates: *mut f64,
    cap: size_t,
) -> EtStatus {
    if traj.is_null() {
        set_last_error("trajectory handle is NULL");
        return EtStatus::EtNullPointer;
    }
    let inner = &(*traj).inner;
    if cap < inner.len() {
        set_last_error(&format!("buffer holds {cap} nodes, trajectory has {}", inner.len()));
        return EtStatus::EtBufferTooSmall;
    }
    if !times.is_null() {
        ptr::copy_nonoverlapping(inner.times().as_ptr(), times, inner.len());
    }
    if !values.is_null() {
        ptr::copy_nonoverlapping(inner.values().as_ptr(), values, inner.len());
    }
    if !rates.is_null() {
        ptr::copy_nonoverlapping(inner.rates().as_ptr(), rates, inner.len());
    }
    EtStatus::EtOk
}

/// Destroy a trajectory handle. NULL is ignored.
///
/// # Safety
/// `traj` must be NULL or a live handle, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn et_trajectory_free(traj: *mut EtTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Mean-variance objective decomposition of a schedule under the problem's
/// parameters: `J`, expected shortfall and the `lambda`-weighted variance.
///
/// # Safety
/// `problem` and `traj` must be live handles; output pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn et_objective(
    problem: *const EtProblem,
    traj: *const EtTrajectory,
    out_objective: *mut f64,
    out_shortfall: *mut f64,
    out_variance_term: *mut f64,
) -> EtStatus {
    if problem.is_null() || traj.is_null() {
        set_last_error("NULL pointer argument");
        return EtStatus::EtNullPointer;
    }
    guard(|| {
        let p = &*problem;
        match moments::objective(&p.impact, &p.market, &p.problem, &(*traj).inner) {
            Ok(o) => {
                if !out_objective.is_null() {
                    *out_objective = o.j;
                }
                if !out_shortfall.is_null() {
                    *out_shortfall = o.expected_shortfall;
                }
                if !out_variance_term.is_null() {
                    *out_variance_term = o.variance_term;
                }
                EtStatus::EtOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// First two moments (and variance) of the spend at time `t`.
///
/// # Safety
/// `problem` and `traj` must be live handles; output pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn et_moments(
    problem: *const EtProblem,
    traj: *const EtTrajectory,
    t: f64,
    out_mean: *mut f64,
    out_second: *mut f64,
    out_variance: *mut f64,
) -> EtStatus {
    if problem.is_null() || traj.is_null() {
        set_last_error("NULL pointer argument");
        return EtStatus::EtNullPointer;
    }
    guard(|| {
        let p = &*problem;
        match moments::xi_moments(&p.impact, &p.market, &(*traj).inner, t) {
            Ok(m) => {
                if !out_mean.is_null() {
                    *out_mean = m.mean;
                }
                if !out_second.is_null() {
                    *out_second = m.second;
                }
                if !out_variance.is_null() {
                    *out_variance = m.variance;
                }
                EtStatus::EtOk
            }
            Err(e) => fail(&e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    unsafe fn new_problem(lambda: f64) -> *mut EtProblem {
        let mut handle: *mut EtProblem = ptr::null_mut();
        let status = et_problem_new(
            1.0,
            0.2,
            EtPermanent::EtPermanentLinear,
            1.0,
            EtTemporary::EtTemporaryLinear,
            1.0,
            0.0,
            3.0,
            1.0,
            lambda,
            &mut handle,
        );
        assert_eq!(status, EtStatus::EtOk);
        assert!(!handle.is_null());
        handle
    }

    fn last_error_string() -> String {
        unsafe {
            let needed = et_last_error(ptr::null_mut(), 0);
            let mut buf = vec![0i8; needed + 1];
            et_last_error(buf.as_mut_ptr(), buf.len());
            std::ffi::CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
        }
    }

    #[test]
    fn solve_through_the_c_abi() {
        unsafe {
            let problem = new_problem(0.0);
            let mut traj: *mut EtTrajectory = ptr::null_mut();
            let mut report = EtSolveReport {
                converged: false,
                iterations: 0,
                objective: f64::NAN,
                residual_sup: f64::NAN,
                boundary_error: f64::NAN,
                initial_slope: f64::NAN,
                gradient_norm: f64::NAN,
            };
            let status = et_solve(problem, 2000, 0, &mut traj, &mut report);
            assert_eq!(status, EtStatus::EtOk);
            assert!(report.converged);
            assert!(report.boundary_error < 1e-8);
            assert!((report.initial_slope - 4.0292).abs() < 1e-3);

            let len = et_trajectory_len(traj);
            assert_eq!(len, 2001);
            let mut times = vec![0.0; len];
            let mut values = vec![0.0; len];
            assert_eq!(
                et_trajectory_copy(traj, times.as_mut_ptr(), values.as_mut_ptr(), ptr::null_mut(), len),
                EtStatus::EtOk
            );
            assert_eq!(times[0], 0.0);
            assert!((values[len - 1] - 3.0).abs() < 1e-8);

            // objective of the solved schedule beats the uniform one
            let mut uniform: *mut EtTrajectory = ptr::null_mut();
            assert_eq!(et_trajectory_uniform(problem, 2000, &mut uniform), EtStatus::EtOk);
            let (mut j_solved, mut j_uniform) = (0.0, 0.0);
            assert_eq!(
                et_objective(problem, traj, &mut j_solved, ptr::null_mut(), ptr::null_mut()),
                EtStatus::EtOk
            );
            assert_eq!(
                et_objective(problem, uniform, &mut j_uniform, ptr::null_mut(), ptr::null_mut()),
                EtStatus::EtOk
            );
            assert!(j_solved < j_uniform);

            et_trajectory_free(traj);
            et_trajectory_free(uniform);
            et_problem_free(problem);
        }
    }

    #[test]
    fn invalid_arguments_surface_error_messages() {
        unsafe {
            let mut handle: *mut EtProblem = ptr::null_mut();
            let status = et_problem_new(
                -1.0,
                0.2,
                EtPermanent::EtPermanentZero,
                0.0,
                EtTemporary::EtTemporaryZero,
                0.0,
                0.0,
                3.0,
                1.0,
                0.0,
                &mut handle,
            );
            assert_eq!(status, EtStatus::EtInvalidArgument);
            assert!(handle.is_null());
            assert!(last_error_string().contains("price"));
        }
    }

    #[test]
    fn degenerate_impact_reported_as_numeric_failure() {
        unsafe {
            let mut handle: *mut EtProblem = ptr::null_mut();
            let status = et_problem_new(
                1.0,
                0.2,
                EtPermanent::EtPermanentZero,
                0.0,
                EtTemporary::EtTemporaryZero,
                0.0,
                0.0,
                3.0,
                1.0,
                0.0,
                &mut handle,
            );
            assert_eq!(status, EtStatus::EtOk);
            let mut traj: *mut EtTrajectory = ptr::null_mut();
            let status = et_solve(handle, 0, 0, &mut traj, ptr::null_mut());
            assert_eq!(status, EtStatus::EtNumericFailure);
            assert!(traj.is_null());
            assert!(last_error_string().contains("degenerate"));
            et_problem_free(handle);
        }
    }

    #[test]
    fn null_and_small_buffers_rejected() {
        unsafe {
            assert_eq!(et_trajectory_len(ptr::null()), 0);
            assert_eq!(
                et_trajectory_copy(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), 0),
                EtStatus::EtNullPointer
            );
            let problem = new_problem(0.0);
            let mut traj: *mut EtTrajectory = ptr::null_mut();
            assert_eq!(et_trajectory_uniform(problem, 100, &mut traj), EtStatus::EtOk);
            let mut tiny = [0.0; 4];
            assert_eq!(
                et_trajectory_copy(traj, tiny.as_mut_ptr(), ptr::null_mut(), ptr::null_mut(), 4),
                EtStatus::EtBufferTooSmall
            );
            et_trajectory_free(traj);
            et_problem_free(problem);
        }
    }

    #[test]
    fn risk_averse_solve_reports_gradient() {
        unsafe {
            let problem = new_problem(1.0);
            let mut traj: *mut EtTrajectory = ptr::null_mut();
            let mut report = std::mem::zeroed::<EtSolveReport>();
            let status = et_solve(problem, 1000, 6, &mut traj, &mut report);
            assert_eq!(status, EtStatus::EtOk);
            assert!(report.converged);
            assert!(report.gradient_norm.is_finite());
            et_trajectory_free(traj);
            et_problem_free(problem);
        }
    }
}
