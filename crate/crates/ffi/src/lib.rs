//! C ABI over `wulff_lab`: opaque handles for problems, meshes and
//! solutions, `WlStatus` return codes and a thread-local last-error message.
//!
//! Every function that can fail returns a `WlStatus`; results are written
//! through out-pointers only on success. Handles are released with the
//! matching `*_free` function; strings returned by the library are released
//! with `wl_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use wulff_lab::diagnostics::{verify, GradientMode, Tolerances};
use wulff_lab::mesh::{generate_mesh, Mesh};
use wulff_lab::solver::{self, ProblemSpec, Solution, SolverConfig};
use wulff_lab::{isoperimetry, Error};

#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidSpec = 3,
    Geometry = 4,
    NonConvergence = 5,
    Diagnostics = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// A validated problem specification.
pub struct WlProblem {
    inner: ProblemSpec,
}

/// A triangulation of the problem domain.
pub struct WlMesh {
    inner: Mesh,
}

/// Nodal values and solver metadata.
pub struct WlSolution {
    inner: Solution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

type Failure = (WlStatus, String);

fn status_of(e: &Error) -> WlStatus {
    match e {
        Error::DegenerateArgument(_) | Error::OutsideCone { .. } => WlStatus::InvalidArgument,
        Error::InvalidSpec(_) | Error::ConditionB(_) | Error::Json(_) => WlStatus::InvalidSpec,
        Error::NonSimplePolygon(_) | Error::ZeroVolume | Error::Geometry(_) | Error::Mesh(_) => WlStatus::Geometry,
        Error::NonConvergence { .. } => WlStatus::NonConvergence,
        Error::EmptyLevel(_) | Error::DegenerateSolution(_) | Error::InsufficientData(_) => WlStatus::Diagnostics,
        Error::Io { .. } | Error::Csv(_) => WlStatus::Io,
    }
}

fn fail(e: Error) -> Failure {
    (status_of(&e), e.to_string())
}

/// Runs `body`, records the error message and converts panics.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> WlStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => WlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            WlStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| (WlStatus::NullPointer, format!("{what} is null")))
}

fn check_out<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err((WlStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err((WlStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (WlStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn wl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by the library.
///
/// # Safety
/// `s` must be NULL or a pointer obtained from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn wl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a problem from JSON (same schema as the `problem`
/// block of a run configuration).
///
/// # Safety
/// `json` must be NULL or a NUL-terminated string; `out` must be NULL or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn wl_problem_from_json(json: *const c_char, out: *mut *mut WlProblem) -> WlStatus {
    guard(|| {
        check_out(out, "out")?;
        let text = read_str(json, "json")?;
        let inner: ProblemSpec = serde_json::from_str(text).map_err(|e| fail(e.into()))?;
        inner.validate().map_err(fail)?;
        *out = Box::into_raw(Box::new(WlProblem { inner }));
        Ok(())
    })
}

/// # Safety
/// `p` must be NULL or a handle from `wl_problem_from_json`, freed once.
#[no_mangle]
pub unsafe extern "C" fn wl_problem_free(p: *mut WlProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Effective dimension `D = 2 + λ`.
///
/// # Safety
/// Pointers must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn wl_problem_dimension(p: *const WlProblem, out: *mut f64) -> WlStatus {
    guard(|| {
        let p = deref(p, "problem")?;
        check_out(out, "out")?;
        *out = p.inner.dimension();
        Ok(())
    })
}

/// Optimal isoperimetric constant of the problem's (norm, weight, cone).
///
/// # Safety
/// Pointers must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn wl_optimal_constant(p: *const WlProblem, out: *mut f64) -> WlStatus {
    guard(|| {
        let p = &deref(p, "problem")?.inner;
        check_out(out, "out")?;
        *out = isoperimetry::optimal_constant(&p.norm, &p.weight, &p.cone)
            .map_err(fail)?
            .constant;
        Ok(())
    })
}

/// `H(x, y)` for the problem's norm.
///
/// # Safety
/// Pointers must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn wl_norm_eval(p: *const WlProblem, x: f64, y: f64, out: *mut f64) -> WlStatus {
    guard(|| {
        let p = deref(p, "problem")?;
        check_out(out, "out")?;
        if !(x.is_finite() && y.is_finite()) {
            return Err((WlStatus::InvalidArgument, "non-finite argument".into()));
        }
        *out = p.inner.norm.eval([x, y]);
        Ok(())
    })
}

/// Dual norm `H₀(x, y)`.
///
/// # Safety
/// Pointers must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn wl_norm_dual(p: *const WlProblem, x: f64, y: f64, out: *mut f64) -> WlStatus {
    guard(|| {
        let p = deref(p, "problem")?;
        check_out(out, "out")?;
        if !(x.is_finite() && y.is_finite()) {
            return Err((WlStatus::InvalidArgument, "non-finite argument".into()));
        }
        *out = p.inner.norm.dual([x, y]);
        Ok(())
    })
}

/// Triangulates the problem domain with target size `h`.
///
/// # Safety
/// Pointers must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn wl_mesh_generate(p: *const WlProblem, h: f64, grading: bool, out: *mut *mut WlMesh) -> WlStatus {
    guard(|| {
        let p = &deref(p, "problem")?.inner;
        check_out(out, "out")?;
        let inner = generate_mesh(&p.cone, &p.norm, p.radius, h, grading).map_err(fail)?;
        *out = Box::into_raw(Box::new(WlMesh { inner }));
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a handle from `wl_mesh_generate`, freed once.
#[no_mangle]
pub unsafe extern "C" fn wl_mesh_free(m: *mut WlMesh) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Number of mesh vertices; 0 for NULL.
///
/// # Safety
/// `m` must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn wl_mesh_vertex_count(m: *const WlMesh) -> usize {
    m.as_ref().map_or(0, |m| m.inner.vertices.len())
}

/// Number of mesh triangles; 0 for NULL.
///
/// # Safety
/// `m` must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn wl_mesh_triangle_count(m: *const WlMesh) -> usize {
    m.as_ref().map_or(0, |m| m.inner.triangles.len())
}

/// Copies vertex coordinates as interleaved `x0, y0, x1, y1, …` into `buf`
/// of length `len` (at least twice the vertex count).
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn wl_mesh_vertices(m: *const WlMesh, buf: *mut f64, len: usize) -> WlStatus {
    guard(|| {
        let m = &deref(m, "mesh")?.inner;
        check_out(buf, "buf")?;
        let need = 2 * m.vertices.len();
        if len < need {
            return Err((WlStatus::BufferTooSmall, format!("buffer holds {len} values, {need} needed")));
        }
        let dst = std::slice::from_raw_parts_mut(buf, need);
        for (k, v) in m.vertices.iter().enumerate() {
            dst[2 * k] = v[0];
            dst[2 * k + 1] = v[1];
        }
        Ok(())
    })
}

/// Solves the problem on `mesh`. `solver_json` may be NULL for the default
/// solver settings.
///
/// # Safety
/// Pointers must be NULL or valid; `solver_json` NUL-terminated if non-NULL.
#[no_mangle]
pub unsafe extern "C" fn wl_solve(
    p: *const WlProblem,
    mesh: *const WlMesh,
    solver_json: *const c_char,
    out: *mut *mut WlSolution,
) -> WlStatus {
    guard(|| {
        let p = &deref(p, "problem")?.inner;
        let mesh = &deref(mesh, "mesh")?.inner;
        check_out(out, "out")?;
        let config: SolverConfig = if solver_json.is_null() {
            SolverConfig::default()
        } else {
            serde_json::from_str(read_str(solver_json, "solver_json")?).map_err(|e| fail(e.into()))?
        };
        let inner = solver::solve(p, mesh, &config).map_err(fail)?;
        *out = Box::into_raw(Box::new(WlSolution { inner }));
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a handle from `wl_solve`, freed once.
#[no_mangle]
pub unsafe extern "C" fn wl_solution_free(s: *mut WlSolution) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// `M = max u`.
///
/// # Safety
/// Pointers must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn wl_solution_max(s: *const WlSolution, out: *mut f64) -> WlStatus {
    guard(|| {
        let s = deref(s, "solution")?;
        check_out(out, "out")?;
        *out = s.inner.max();
        Ok(())
    })
}

/// Quasi-Newton iterations of the final stage.
///
/// # Safety
/// Pointers must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn wl_solution_iterations(s: *const WlSolution, out: *mut usize) -> WlStatus {
    guard(|| {
        let s = deref(s, "solution")?;
        check_out(out, "out")?;
        *out = s.inner.meta.iterations;
        Ok(())
    })
}

/// Copies the nodal values into `buf` of length `len` (at least the vertex
/// count).
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn wl_solution_values(s: *const WlSolution, buf: *mut f64, len: usize) -> WlStatus {
    guard(|| {
        let u = &deref(s, "solution")?.inner.u;
        check_out(buf, "buf")?;
        if len < u.len() {
            return Err((WlStatus::BufferTooSmall, format!("buffer holds {len} values, {} needed", u.len())));
        }
        std::slice::from_raw_parts_mut(buf, u.len()).copy_from_slice(u);
        Ok(())
    })
}

fn matching<'a>(mesh: &'a WlMesh, s: &'a WlSolution) -> Result<(&'a Mesh, &'a Solution), Failure> {
    if mesh.inner.vertices.len() != s.inner.u.len() || mesh.inner.triangles.len() != s.inner.gradients.len() {
        return Err((WlStatus::InvalidArgument, "solution does not belong to this mesh".into()));
    }
    Ok((&mesh.inner, &s.inner))
}

/// Normalized weak residual of the solution.
///
/// # Safety
/// Pointers must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn wl_weak_residual(
    p: *const WlProblem,
    mesh: *const WlMesh,
    s: *const WlSolution,
    out: *mut f64,
) -> WlStatus {
    guard(|| {
        let p = &deref(p, "problem")?.inner;
        let (mesh, s) = matching(deref(mesh, "mesh")?, deref(s, "solution")?)?;
        check_out(out, "out")?;
        *out = solver::weak_residual(p, mesh, s).map_err(fail)?;
        Ok(())
    })
}

/// Runs the level-set diagnostics with default tolerances on `n_levels`
/// levels. Writes the JSON report to `*json_out` (release with
/// `wl_string_free`) and whether every diagnostic passed to `*passed`.
///
/// # Safety
/// Pointers must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn wl_verify(
    p: *const WlProblem,
    mesh: *const WlMesh,
    s: *const WlSolution,
    n_levels: usize,
    json_out: *mut *mut c_char,
    passed: *mut bool,
) -> WlStatus {
    guard(|| {
        let p = &deref(p, "problem")?.inner;
        let (mesh, s) = matching(deref(mesh, "mesh")?, deref(s, "solution")?)?;
        check_out(json_out, "json_out")?;
        check_out(passed, "passed")?;
        let (_, report) =
            verify(p, mesh, s, n_levels, GradientMode::Recovered, &Tolerances::default()).map_err(fail)?;
        let text = serde_json::to_string(&report).map_err(|e| fail(e.into()))?;
        let c = CString::new(text).map_err(|_| (WlStatus::Panic, "report contains NUL".to_string()))?;
        *passed = report.passed();
        *json_out = c.into_raw();
        Ok(())
    })
}
