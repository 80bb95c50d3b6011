//! C ABI over the holosync session engine.
//!
//! Sessions are opaque handles. Structured messages cross the boundary as
//! canonical JSON strings; strings returned to the caller must be released
//! with [`hs_string_free`], byte buffers with [`hs_bytes_free`]. Every call
//! returns an [`HsStatus`]; on failure [`hs_last_error`] describes why.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use holosync::engine::EngineConfig;
use holosync::model::{compose_pose, relative_pose, DeviceId, Pose, Quat, Vec3};
use holosync::protocol::{decode_control, encode_control, DeviceDescriptor};
use holosync::server::{load_session, save_session, Session, SessionError, SubscriberQueue};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Malformed = 3,
    Rejected = 4,
    NotFound = 5,
    Io = 6,
    /// Nothing to poll.
    Empty = 7,
    InvalidArgument = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsVec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Component order x, y, z, w.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsQuat {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsPose {
    pub position: HsVec3,
    pub rotation: HsQuat,
    pub scale: HsVec3,
}

impl From<HsPose> for Pose {
    fn from(p: HsPose) -> Pose {
        let v = |v: HsVec3| Vec3::new(v.x, v.y, v.z);
        let r = p.rotation;
        Pose::new(v(p.position), Quat::new(r.x, r.y, r.z, r.w), v(p.scale))
    }
}

impl From<Pose> for HsPose {
    fn from(p: Pose) -> HsPose {
        let v = |v: Vec3| HsVec3 { x: v.x, y: v.y, z: v.z };
        let r = p.rotation;
        HsPose { position: v(p.position), rotation: HsQuat { x: r.x, y: r.y, z: r.z, w: r.w }, scale: v(p.scale) }
    }
}

/// Opaque session handle.
pub struct HsSession {
    session: Session,
    queues: BTreeMap<DeviceId, Arc<SubscriberQueue>>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: HsStatus, message: impl Into<String>) -> HsStatus {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
    status
}

fn guard(f: impl FnOnce() -> HsStatus) -> HsStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(HsStatus::Panic, "internal panic"))
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn text<'a>(s: *const c_char) -> Result<&'a str, HsStatus> {
    if s.is_null() {
        return Err(fail(HsStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(HsStatus::InvalidUtf8, "argument is not UTF-8"))
}

fn session_status(e: &SessionError) -> HsStatus {
    match e {
        SessionError::Codec(_) => fail(HsStatus::Malformed, e.to_string()),
        SessionError::NotJoined(_) => fail(HsStatus::NotFound, e.to_string()),
        _ => fail(HsStatus::Rejected, e.to_string()),
    }
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// All pointers must be valid for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn hs_pose_compose(parent: *const HsPose, child: *const HsPose, out: *mut HsPose) -> HsStatus {
    if parent.is_null() || child.is_null() || out.is_null() {
        return fail(HsStatus::NullPointer, "null pose");
    }
    *out = compose_pose(&(*parent).into(), &(*child).into()).into();
    HsStatus::Ok
}

/// Pose of `child` expressed in `parent`'s frame.
///
/// # Safety
/// All pointers must be valid for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn hs_pose_relative(parent: *const HsPose, child: *const HsPose, out: *mut HsPose) -> HsStatus {
    if parent.is_null() || child.is_null() || out.is_null() {
        return fail(HsStatus::NullPointer, "null pose");
    }
    *out = relative_pose(&(*parent).into(), &(*child).into()).into();
    HsStatus::Ok
}

fn boxed(session: Session, out: *mut *mut HsSession) -> HsStatus {
    let handle = Box::new(HsSession { session, queues: BTreeMap::new() });
    // SAFETY: callers check `out` for null first.
    unsafe { *out = Box::into_raw(handle) };
    HsStatus::Ok
}

/// Creates an empty session with default engine settings.
///
/// # Safety
/// `session_id` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_session_new(session_id: *const c_char, out: *mut *mut HsSession) -> HsStatus {
    guard(|| {
        if out.is_null() {
            return fail(HsStatus::NullPointer, "null output handle");
        }
        let id = match text(session_id) {
            Ok(id) => id,
            Err(s) => return s,
        };
        boxed(Session::new(id, EngineConfig::default()), out)
    })
}

/// Restores a session saved with [`hs_session_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_session_load(path: *const c_char, out: *mut *mut HsSession) -> HsStatus {
    guard(|| {
        if out.is_null() {
            return fail(HsStatus::NullPointer, "null output handle");
        }
        let path = match text(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_session(Path::new(path)) {
            Ok(state) => boxed(Session::from_state(state, EngineConfig::default()), out),
            Err(e) => fail(HsStatus::Io, e.to_string()),
        }
    })
}

/// # Safety
/// `session` must be null or a handle from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hs_session_free(session: *mut HsSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Joins a device described by a JSON descriptor. Its first polled message
/// is the welcome snapshot.
///
/// # Safety
/// `session` must be a live handle; `descriptor_json` a NUL-terminated
/// string; `device_id` writable.
#[no_mangle]
pub unsafe extern "C" fn hs_session_join(
    session: *mut HsSession,
    descriptor_json: *const c_char,
    now_ms: u64,
    device_id: *mut u32,
) -> HsStatus {
    guard(|| {
        let Some(h) = session.as_mut() else { return fail(HsStatus::NullPointer, "null session") };
        if device_id.is_null() {
            return fail(HsStatus::NullPointer, "null device id output");
        }
        let json = match text(descriptor_json) {
            Ok(j) => j,
            Err(s) => return s,
        };
        let descriptor: DeviceDescriptor = match serde_json::from_str(json) {
            Ok(d) => d,
            Err(e) => return fail(HsStatus::Malformed, e.to_string()),
        };
        match h.session.join(descriptor, now_ms) {
            Ok(joined) => {
                joined.queue.push_control(joined.welcome);
                *device_id = joined.device_id.0;
                h.queues.insert(joined.device_id, joined.queue);
                HsStatus::Ok
            }
            Err(e) => session_status(&e),
        }
    })
}

/// Submits one encoded control envelope from `sender`.
///
/// # Safety
/// `session` must be a live handle; `envelope_json` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hs_session_submit(
    session: *mut HsSession,
    sender: u32,
    envelope_json: *const c_char,
    now_ms: u64,
) -> HsStatus {
    guard(|| {
        let Some(h) = session.as_mut() else { return fail(HsStatus::NullPointer, "null session") };
        let json = match text(envelope_json) {
            Ok(j) => j,
            Err(s) => return s,
        };
        let env = match decode_control(json.as_bytes()) {
            Ok(env) => env,
            Err(e) => return fail(HsStatus::Malformed, e.to_string()),
        };
        match h.session.submit(DeviceId(sender), env, now_ms) {
            Ok(_) => HsStatus::Ok,
            Err(e) => session_status(&e),
        }
    })
}

/// Advances the interaction engine by `dt` seconds.
///
/// # Safety
/// `session` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hs_session_tick(session: *mut HsSession, dt: f64, now_ms: u64) -> HsStatus {
    guard(|| {
        let Some(h) = session.as_mut() else { return fail(HsStatus::NullPointer, "null session") };
        if !(dt.is_finite() && dt > 0.0) {
            return fail(HsStatus::InvalidArgument, "dt must be positive");
        }
        h.session.tick(dt, now_ms);
        HsStatus::Ok
    })
}

/// Relays a binary stream frame from `sender` to the other devices.
///
/// # Safety
/// `session` must be a live handle; `frame` must point to `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn hs_session_relay_stream(
    session: *mut HsSession,
    sender: u32,
    frame: *const u8,
    len: usize,
    now_ms: u64,
) -> HsStatus {
    guard(|| {
        let Some(h) = session.as_mut() else { return fail(HsStatus::NullPointer, "null session") };
        if frame.is_null() {
            return fail(HsStatus::NullPointer, "null frame");
        }
        let bytes = bytes::Bytes::copy_from_slice(std::slice::from_raw_parts(frame, len));
        match h.session.relay_stream(DeviceId(sender), bytes, now_ms) {
            Ok(_) => HsStatus::Ok,
            Err(e) => session_status(&e),
        }
    })
}

fn queue(h: &HsSession, device: u32) -> Result<&Arc<SubscriberQueue>, HsStatus> {
    h.queues.get(&DeviceId(device)).ok_or_else(|| fail(HsStatus::NotFound, format!("device {device} has not joined here")))
}

/// Pops the next control message for `device` as JSON. Returns
/// `HS_STATUS_EMPTY` when none is queued. Free the result with
/// [`hs_string_free`].
///
/// # Safety
/// `session` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hs_session_poll(session: *mut HsSession, device: u32, out: *mut *mut c_char) -> HsStatus {
    guard(|| {
        let Some(h) = session.as_mut() else { return fail(HsStatus::NullPointer, "null session") };
        if out.is_null() {
            return fail(HsStatus::NullPointer, "null output");
        }
        let q = match queue(h, device) {
            Ok(q) => q.clone(),
            Err(s) => return s,
        };
        let Some(env) = q.pop_control() else { return HsStatus::Empty };
        let bytes = encode_control(&env).expect("sequenced envelopes are valid");
        *out = CString::new(bytes).expect("JSON has no NUL").into_raw();
        HsStatus::Ok
    })
}

/// Pops the next stream frame for `device`. Free it with [`hs_bytes_free`].
///
/// # Safety
/// `session` must be a live handle; `out` and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn hs_session_poll_stream(
    session: *mut HsSession,
    device: u32,
    out: *mut *mut u8,
    len: *mut usize,
) -> HsStatus {
    guard(|| {
        let Some(h) = session.as_mut() else { return fail(HsStatus::NullPointer, "null session") };
        if out.is_null() || len.is_null() {
            return fail(HsStatus::NullPointer, "null output");
        }
        let q = match queue(h, device) {
            Ok(q) => q.clone(),
            Err(s) => return s,
        };
        let Some(frame) = q.pop_stream() else { return HsStatus::Empty };
        let boxed: Box<[u8]> = frame.to_vec().into_boxed_slice();
        *len = boxed.len();
        *out = Box::into_raw(boxed) as *mut u8;
        HsStatus::Ok
    })
}

/// Writes the 64-character hex state hash and a NUL into `out`.
///
/// # Safety
/// `session` must be a live handle; `out` must hold at least 65 bytes.
#[no_mangle]
pub unsafe extern "C" fn hs_session_state_hash(session: *const HsSession, out: *mut c_char) -> HsStatus {
    guard(|| {
        let Some(h) = session.as_ref() else { return fail(HsStatus::NullPointer, "null session") };
        if out.is_null() {
            return fail(HsStatus::NullPointer, "null output");
        }
        let hex = h.session.state_hash().to_hex();
        ptr::copy_nonoverlapping(hex.as_ptr() as *const c_char, out, hex.len());
        *out.add(hex.len()) = 0;
        HsStatus::Ok
    })
}

/// Current session state as JSON. Free the result with [`hs_string_free`].
///
/// # Safety
/// `session` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hs_session_state_json(session: *const HsSession, out: *mut *mut c_char) -> HsStatus {
    guard(|| {
        let Some(h) = session.as_ref() else { return fail(HsStatus::NullPointer, "null session") };
        if out.is_null() {
            return fail(HsStatus::NullPointer, "null output");
        }
        let json = holosync::protocol::to_canonical_bytes(h.session.state());
        *out = CString::new(json).expect("JSON has no NUL").into_raw();
        HsStatus::Ok
    })
}

/// # Safety
/// `session` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hs_session_save(session: *const HsSession, path: *const c_char) -> HsStatus {
    guard(|| {
        let Some(h) = session.as_ref() else { return fail(HsStatus::NullPointer, "null session") };
        let path = match text(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match save_session(h.session.state(), Path::new(path)) {
            Ok(()) => HsStatus::Ok,
            Err(e) => fail(HsStatus::Io, e.to_string()),
        }
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, not freed before.
#[no_mangle]
pub unsafe extern "C" fn hs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `buf` and `len` must come from [`hs_session_poll_stream`].
#[no_mangle]
pub unsafe extern "C" fn hs_bytes_free(buf: *mut u8, len: usize) {
    if !buf.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(buf, len)));
    }
}
