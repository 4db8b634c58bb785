//! C interface. Images and bundles are opaque handles owned by the caller and
//! released with the matching `*_free`. Every fallible call returns a
//! [`MiStatus`]; the message of the last failure on the calling thread is
//! available from [`mi_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use microinpaint::cli::ConfigFile;
use microinpaint::image::{decode_micrograph, encode_png, load_micrograph, save_png, ImageKind, KindHint, Micrograph, Region};
use microinpaint::metrics::{border_contiguity, InpaintMethod, InpaintResult};
use microinpaint::models::{load_bundle, save_bundle, Method, ModelBundle};
use microinpaint::train::{evaluate_gopt, train_gopt, train_wgan, Observer, TrainStep};
use microinpaint::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Decode = 4,
    InvalidImage = 5,
    InvalidRegion = 6,
    Shape = 7,
    NoValidPatch = 8,
    Config = 9,
    Bundle = 10,
    Internal = 11,
    Panic = 12,
}

/// Image type override for decoding.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiKind {
    Auto = 0,
    NPhase = 1,
    Grayscale = 2,
    Colour = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiMethod {
    Gopt = 0,
    Wgan = 1,
}

/// A decoded micrograph.
pub struct MiMicrograph(Micrograph);

/// A trained model bundle.
pub struct MiBundle(ModelBundle);

/// Training progress callback: iteration, critic loss and the user pointer.
/// Returning non-zero stops training; the bundle is then marked partial.
pub type MiProgressFn = Option<extern "C" fn(iteration: usize, critic_loss: f64, user: *mut c_void) -> c_int>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul stripped")));
}

struct Fail(MiStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io { .. } => MiStatus::Io,
            Error::Decode(_) => MiStatus::Decode,
            Error::InvalidImage(_) => MiStatus::InvalidImage,
            Error::InvalidRegion(_) => MiStatus::InvalidRegion,
            Error::Shape(_) => MiStatus::Shape,
            Error::NoValidPatch(_) => MiStatus::NoValidPatch,
            Error::Config(_) => MiStatus::Config,
            Error::Bundle(_) => MiStatus::Bundle,
            _ => MiStatus::Internal,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MiStatus::NullArgument, format!("{what} is null"))
}

/// Run `f`, converting errors and panics into a status and the thread's last
/// error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MiStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            MiStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Fail(MiStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

fn hint(kind: MiKind) -> Option<KindHint> {
    match kind {
        MiKind::Auto => None,
        MiKind::NPhase => Some(KindHint::NPhase),
        MiKind::Grayscale => Some(KindHint::Grayscale),
        MiKind::Colour => Some(KindHint::Colour),
    }
}

/// Copy `s` NUL-terminated into `buf`; `needed` receives the full length
/// including the terminator. Fails with `Shape` if `buf` is too small.
unsafe fn copy_out(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), Fail> {
    if !needed.is_null() {
        *needed = s.len() + 1;
    }
    if buf.is_null() {
        return Err(null("buf"));
    }
    if len < s.len() + 1 {
        return Err(Fail(MiStatus::Shape, format!("buffer of {len} bytes, {} needed", s.len() + 1)));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a PNG, TIFF or JPEG micrograph from `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mi_micrograph_load(path: *const c_char, kind: MiKind, out: *mut *mut MiMicrograph) -> MiStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = load_micrograph(str_arg(path, "path")?, hint(kind))?;
        put(out, MiMicrograph(m));
        Ok(())
    })
}

/// Decode an in-memory image.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mi_micrograph_decode(bytes: *const u8, len: usize, kind: MiKind, out: *mut *mut MiMicrograph) -> MiStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        let m = decode_micrograph(std::slice::from_raw_parts(bytes, len), hint(kind))?;
        put(out, MiMicrograph(m));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mi_micrograph_free(m: *mut MiMicrograph) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Width, height and channel count (phases for n-phase images).
///
/// # Safety
/// `m` must be a live handle; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn mi_micrograph_dims(
    m: *const MiMicrograph,
    width: *mut usize,
    height: *mut usize,
    channels: *mut usize,
) -> MiStatus {
    guard(|| {
        let m = &handle(m, "micrograph")?.0;
        for (p, v) in [(width, m.width()), (height, m.height()), (channels, m.channels())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Number of phases of an n-phase image, 0 otherwise.
///
/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mi_micrograph_phases(m: *const MiMicrograph) -> usize {
    match m.as_ref().map(|m| m.0.kind()) {
        Some(ImageKind::NPhase { n_phases }) => n_phases,
        _ => 0,
    }
}

/// Write the image as PNG.
///
/// # Safety
/// `m` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mi_micrograph_save_png(m: *const MiMicrograph, path: *const c_char) -> MiStatus {
    guard(|| {
        save_png(&handle(m, "micrograph")?.0, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Encode the image as PNG into a buffer released with [`mi_buffer_free`].
///
/// # Safety
/// `m` must be a live handle; `data` and `len` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mi_micrograph_encode_png(m: *const MiMicrograph, data: *mut *mut u8, len: *mut usize) -> MiStatus {
    guard(|| {
        if data.is_null() || len.is_null() {
            return Err(null("data/len"));
        }
        let bytes = encode_png(&handle(m, "micrograph")?.0)?.into_boxed_slice();
        *len = bytes.len();
        *data = Box::into_raw(bytes).cast::<u8>();
        Ok(())
    })
}

/// # Safety
/// `data`/`len` must come from [`mi_micrograph_encode_png`], or `data` be null.
#[no_mangle]
pub unsafe extern "C" fn mi_buffer_free(data: *mut u8, len: usize) {
    if !data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(data, len)));
    }
}

struct Callback {
    f: MiProgressFn,
    user: *mut c_void,
    stop: bool,
}

impl Observer for Callback {
    fn step(&mut self, step: &TrainStep) {
        if let Some(f) = self.f {
            self.stop |= f(step.iteration, step.l_d, self.user) != 0;
        }
    }

    fn should_stop(&self) -> bool {
        self.stop
    }
}

/// Train a bundle on `image`.
///
/// `region_json` describes the occluded region (required for `Gopt`,
/// optional for `Wgan`), e.g. `{"shape":"rect","x":8,"y":8,"w":32,"h":32}`.
/// `config_json` may hold `training` and `arch` objects overriding the
/// defaults; null keeps them. Training is deterministic in `seed`.
///
/// # Safety
/// Handles and strings must be valid; `out` a valid pointer. `progress` is
/// called on the calling thread.
#[no_mangle]
pub unsafe extern "C" fn mi_train(
    image: *const MiMicrograph,
    method: MiMethod,
    region_json: *const c_char,
    config_json: *const c_char,
    seed: u64,
    progress: MiProgressFn,
    user: *mut c_void,
    out: *mut *mut MiBundle,
) -> MiStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let img = &handle(image, "image")?.0;
        let region = opt_str_arg(region_json, "region_json")?.map(Region::from_json).transpose()?;
        let cfg: ConfigFile = match opt_str_arg(config_json, "config_json")? {
            Some(s) => serde_json::from_str(s).map_err(|e| Fail(MiStatus::Config, format!("config: {e}")))?,
            None => ConfigFile::default(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut obs = Callback { f: progress, user, stop: false };
        let bundle = match method {
            MiMethod::Gopt => {
                let region = region.ok_or_else(|| Fail(MiStatus::InvalidRegion, "G-opt training needs a region".into()))?;
                train_gopt(img, &region, &cfg.training, &cfg.arch, &mut rng, &mut obs)?
            }
            MiMethod::Wgan => train_wgan(img, region.as_ref(), &cfg.training, &cfg.arch, &mut rng, &mut obs)?,
        };
        put(out, MiBundle(bundle));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mi_bundle_load(path: *const c_char, out: *mut *mut MiBundle) -> MiStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let b = load_bundle(str_arg(path, "path")?)?;
        put(out, MiBundle(b));
        Ok(())
    })
}

/// # Safety
/// `b` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mi_bundle_save(b: *const MiBundle, path: *const c_char) -> MiStatus {
    guard(|| {
        save_bundle(&handle(b, "bundle")?.0, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `b` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mi_bundle_free(b: *mut MiBundle) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Method, completed iterations and whether training stopped early.
///
/// # Safety
/// `b` must be a live handle; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn mi_bundle_info(b: *const MiBundle, method: *mut MiMethod, iterations: *mut usize, partial: *mut bool) -> MiStatus {
    guard(|| {
        let b = &handle(b, "bundle")?.0;
        if !method.is_null() {
            *method = match b.method {
                Method::Gopt => MiMethod::Gopt,
                Method::Wgan => MiMethod::Wgan,
            };
        }
        if !iterations.is_null() {
            *iterations = b.iterations;
        }
        if !partial.is_null() {
            *partial = b.partial;
        }
        Ok(())
    })
}

/// Hex SHA-256 of the serialised bundle (64 characters plus NUL).
///
/// # Safety
/// `b` must be a live handle, `buf` writable for `len` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn mi_bundle_digest(b: *const MiBundle, buf: *mut c_char, len: usize, needed: *mut usize) -> MiStatus {
    guard(|| copy_out(&handle(b, "bundle")?.0.digest(), buf, len, needed))
}

/// Inpaint `image` with a G-opt bundle. With `resample` false the bundle's
/// fixed seed is used; otherwise its centre is redrawn from `rng_seed`.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mi_inpaint(
    b: *const MiBundle,
    image: *const MiMicrograph,
    resample: bool,
    rng_seed: u64,
    out: *mut *mut MiMicrograph,
) -> MiStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let r = evaluate_gopt(&handle(b, "bundle")?.0, &handle(image, "image")?.0, resample, &mut rng)?;
        put(out, MiMicrograph(r.image));
        Ok(())
    })
}

/// Two-sample KS test of squared neighbour differences across the region
/// border of `inpainted` against those of `original`.
///
/// # Safety
/// Handles must be live, `region_json` NUL-terminated; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn mi_border_contiguity(
    inpainted: *const MiMicrograph,
    original: *const MiMicrograph,
    region_json: *const c_char,
    p_value: *mut f64,
    statistic: *mut f64,
) -> MiStatus {
    guard(|| {
        let region = Region::from_json(str_arg(region_json, "region_json")?)?;
        let result = InpaintResult {
            image: handle(inpainted, "inpainted")?.0.clone(),
            region,
            method: InpaintMethod::Gopt,
            seed_digest: None,
            warning: None,
        };
        let report = border_contiguity(&result, &handle(original, "original")?.0)?;
        if !p_value.is_null() {
            *p_value = report.p_value;
        }
        if !statistic.is_null() {
            *statistic = report.ks_statistic;
        }
        Ok(())
    })
}
