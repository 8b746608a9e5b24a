//! C ABI over the `pointloc` library.
//!
//! Objects are opaque handles created by `pl_*_open`/`pl_*_new`-style calls
//! and released with the matching `pl_*_free`. Every fallible call returns a
//! [`PlStatus`]; on failure `pl_last_error` gives a message for the calling
//! thread until its next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use pointloc::dataset::{load_dataset, load_keyfile, DatasetError, DatasetPaths};
use pointloc::export::{default_glyph_scale, export_ply, export_query, ExportError, MESH_FILE};
use pointloc::index::IndexParams;
use pointloc::ransac::{accept_probability, Localizer, LocalizerParams, Mode, SolverChoice};
use pointloc::sfm::SfmError;
use pointloc::{Pose, PoseEstimate, QueryImage, RansacError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    UnknownQuery = 5,
    InsufficientMatches = 6,
    NoSolution = 7,
    SamplingExhausted = 8,
    MissingFocal = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlMode {
    Basic = 0,
    Advanced = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlSolver {
    Auto = 0,
    P3p = 1,
    P4pf = 2,
    Both = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlOptions {
    pub mode: PlMode,
    pub solver: PlSolver,
    /// Used only when `use_seed` is true; otherwise runs are seeded from
    /// system entropy.
    pub seed: u64,
    pub use_seed: bool,
}

/// World-to-camera rotation (row-major), camera center and focal length in
/// pixels. The camera looks along +Z with +Y down.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlPose {
    pub rotation: [f64; 9],
    pub center: [f64; 3],
    pub focal_px: f64,
}

/// A loaded model with its index and the dataset's queries.
pub struct PlDataset {
    localizer: Localizer,
    queries: Vec<QueryImage>,
    names: Vec<CString>,
    golden: Vec<Option<Pose>>,
}

pub struct PlQuery(QueryImage);

pub struct PlEstimate(PoseEstimate);

type Failure = (PlStatus, String);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> PlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PlStatus::Panic
        }
    }
}

fn dataset_failure(e: DatasetError) -> Failure {
    let status = match &e {
        DatasetError::Io { .. } => PlStatus::Io,
        DatasetError::Split(SfmError::UnknownQuery(_)) => PlStatus::UnknownQuery,
        _ => PlStatus::Parse,
    };
    (status, e.to_string())
}

fn ransac_failure(e: RansacError) -> Failure {
    let status = match e {
        RansacError::InsufficientMatches { .. } => PlStatus::InsufficientMatches,
        RansacError::NoSolution => PlStatus::NoSolution,
        RansacError::SamplingExhausted(_) => PlStatus::SamplingExhausted,
        RansacError::MissingFocal => PlStatus::MissingFocal,
    };
    (status, e.to_string())
}

fn export_failure(e: ExportError) -> Failure {
    let status = match e {
        ExportError::Io(_) => PlStatus::Io,
        ExportError::EmptyInput(_) => PlStatus::InvalidArgument,
    };
    (status, e.to_string())
}

fn null(what: &str) -> Failure {
    (PlStatus::NullArgument, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (PlStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn in_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn pose_to_c(p: &Pose) -> PlPose {
    let mut rotation = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            rotation[3 * i + j] = p.rotation[(i, j)];
        }
    }
    PlPose {
        rotation,
        center: [p.center.x, p.center.y, p.center.z],
        focal_px: p.focal_px,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the calling thread's last failure, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads a dataset directory (`bundle.out`, `list.txt`, `keys/`,
/// `queries.txt`) and builds the descriptor index with default settings.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pl_dataset_open(dir: *const c_char, out: *mut *mut PlDataset) -> PlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let dir = path_arg(dir, "dir")?;
        let ds = load_dataset(&DatasetPaths::in_dir(&dir), None).map_err(dataset_failure)?;
        let localizer = Localizer::new(ds.model, IndexParams::default())
            .map_err(|e| (PlStatus::InvalidArgument, e.to_string()))?;
        let names = ds
            .queries
            .iter()
            .map(|q| CString::new(q.name.clone()).unwrap_or_default())
            .collect();
        let golden = ds.queries.iter().map(|q| ds.golden.get(&q.name).copied()).collect();
        *out = Box::into_raw(Box::new(PlDataset {
            localizer,
            queries: ds.queries,
            names,
            golden,
        }));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from `pl_dataset_open` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pl_dataset_free(ds: *mut PlDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a valid handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pl_dataset_query_count(ds: *const PlDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.queries.len())
}

/// Name of query `i`, owned by the dataset; NULL when out of range.
///
/// # Safety
/// `ds` must be a valid handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pl_dataset_query_name(ds: *const PlDataset, i: usize) -> *const c_char {
    ds.as_ref()
        .and_then(|d| d.names.get(i))
        .map_or(std::ptr::null(), |c| c.as_ptr())
}

/// Reference pose of query `i` from the reconstruction.
///
/// # Safety
/// `ds` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pl_dataset_golden(ds: *const PlDataset, i: usize, out: *mut PlPose) -> PlStatus {
    guard(|| {
        let d = in_arg(ds, "ds")?;
        let out = out_arg(out, "out")?;
        let g = d
            .golden
            .get(i)
            .copied()
            .flatten()
            .ok_or((PlStatus::InvalidArgument, format!("no golden pose for query {i}")))?;
        *out = pose_to_c(&g);
        Ok(())
    })
}

/// Copies query `i` of the dataset into a new handle.
///
/// # Safety
/// `ds` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pl_dataset_query(ds: *const PlDataset, i: usize, out: *mut *mut PlQuery) -> PlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let d = in_arg(ds, "ds")?;
        let q = d
            .queries
            .get(i)
            .ok_or((PlStatus::InvalidArgument, format!("query index {i} out of range")))?;
        *out = Box::into_raw(Box::new(PlQuery(q.clone())));
        Ok(())
    })
}

/// Reads a query image's features from a keyfile. `focal_px <= 0` means
/// the focal length is unknown.
///
/// # Safety
/// `name` and `keyfile` must be NUL-terminated strings and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pl_query_from_keyfile(
    name: *const c_char,
    keyfile: *const c_char,
    width: u32,
    height: u32,
    focal_px: f64,
    out: *mut *mut PlQuery,
) -> PlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let name = path_arg(name, "name")?;
        let keyfile = path_arg(keyfile, "keyfile")?;
        if width == 0 || height == 0 {
            return Err((PlStatus::InvalidArgument, "image size must be positive".into()));
        }
        let features = load_keyfile(&keyfile).map_err(dataset_failure)?;
        *out = Box::into_raw(Box::new(PlQuery(QueryImage {
            name: name.to_string_lossy().into_owned(),
            width,
            height,
            features,
            exif_focal_px: (focal_px > 0.0).then_some(focal_px),
        })));
        Ok(())
    })
}

/// # Safety
/// `q` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pl_query_free(q: *mut PlQuery) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

#[no_mangle]
pub extern "C" fn pl_options_default() -> PlOptions {
    PlOptions {
        mode: PlMode::Basic,
        solver: PlSolver::Auto,
        seed: 0,
        use_seed: false,
    }
}

/// Localizes `query` against the dataset's model. `options` may be NULL
/// for defaults.
///
/// # Safety
/// Handles must be valid; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pl_localize(
    ds: *const PlDataset,
    query: *const PlQuery,
    options: *const PlOptions,
    out: *mut *mut PlEstimate,
) -> PlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let d = in_arg(ds, "ds")?;
        let q = in_arg(query, "query")?;
        let o = options.as_ref().copied().unwrap_or_else(|| pl_options_default());
        let mut params = LocalizerParams {
            mode: match o.mode {
                PlMode::Basic => Mode::Basic,
                PlMode::Advanced => Mode::Advanced,
            },
            ..Default::default()
        };
        let solver = match o.solver {
            PlSolver::Auto => SolverChoice::Auto,
            PlSolver::P3p => SolverChoice::P3p,
            PlSolver::P4pf => SolverChoice::P4pf,
            PlSolver::Both => SolverChoice::Both,
        };
        let seed = o.use_seed.then_some(o.seed);
        params.basic.solver = solver;
        params.advanced.solver = solver;
        params.basic.rng_seed = seed;
        params.advanced.rng_seed = seed;
        let est = d.localizer.localize(&q.0, &params).map_err(ransac_failure)?;
        *out = Box::into_raw(Box::new(PlEstimate(est)));
        Ok(())
    })
}

/// # Safety
/// `e` must come from `pl_localize` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pl_estimate_free(e: *mut PlEstimate) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// # Safety
/// `e` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pl_estimate_pose(e: *const PlEstimate, out: *mut PlPose) -> PlStatus {
    guard(|| {
        *out_arg(out, "out")? = pose_to_c(&in_arg(e, "estimate")?.0.pose);
        Ok(())
    })
}

/// # Safety
/// `e` must be a valid handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pl_estimate_fitted_count(e: *const PlEstimate) -> usize {
    e.as_ref().map_or(0, |e| e.0.fitted.len())
}

/// Coverage quality in `[0, 1]`; NaN for a NULL handle.
///
/// # Safety
/// `e` must be a valid handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pl_estimate_quality(e: *const PlEstimate) -> f64 {
    e.as_ref().map_or(f64::NAN, |e| e.0.quality.q)
}

/// # Safety
/// `e` must be a valid handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pl_estimate_iterations(e: *const PlEstimate) -> usize {
    e.as_ref().map_or(0, |e| e.0.iterations_used)
}

/// # Safety
/// `e` must be a valid handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pl_estimate_used_backmatching(e: *const PlEstimate) -> bool {
    e.as_ref().is_some_and(|e| e.0.used_backmatching)
}

/// Writes the model point cloud to `dir/model.ply` and the viewer files for
/// the estimate into `dir/<query stem>/`.
///
/// # Safety
/// Handles must be valid and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pl_export(
    ds: *const PlDataset,
    query: *const PlQuery,
    estimate: *const PlEstimate,
    dir: *const c_char,
) -> PlStatus {
    guard(|| {
        let d = in_arg(ds, "ds")?;
        let q = &in_arg(query, "query")?.0;
        let e = &in_arg(estimate, "estimate")?.0;
        let dir = path_arg(dir, "dir")?;
        std::fs::create_dir_all(&dir).map_err(|e| (PlStatus::Io, e.to_string()))?;
        let model = &d.localizer.model;
        let mesh = dir.join(MESH_FILE);
        export_ply(model, &mesh).map_err(export_failure)?;
        let stem = Path::new(&q.name)
            .file_stem()
            .map_or_else(|| q.name.clone(), |s| s.to_string_lossy().into_owned());
        export_query(&dir.join(stem), &mesh, model, q, e, default_glyph_scale(model), None)
            .map_err(export_failure)?;
        Ok(())
    })
}

/// Co-occurrence acceptance probability; NaN for invalid arguments.
#[no_mangle]
pub extern "C" fn pl_accept_probability(inter: usize, prev_inter: usize, candidate_size: usize, k: f64) -> f64 {
    catch_unwind(|| accept_probability(inter, prev_inter, candidate_size, k)).unwrap_or(f64::NAN)
}
