//! C ABI over the lnabl model, schedule and learning-rate APIs.
//!
//! Every fallible call returns an [`LnablStatus`]. On failure the message is
//! kept per thread and can be read with [`lnabl_last_error`]. Models and
//! schedules cross the boundary as opaque handles that the caller releases
//! with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lnabl::data::EOT;
use lnabl::model::{load_checkpoint, save_checkpoint, GptModel, ModelConfig};
use lnabl::norm::{fold_and_export, split_all, BlockRef, NormAction, SiteKind};
use lnabl::schedule::{LrConfig, LrKind, RemovalSchedule};
use lnabl::train::TrainConfig;
use lnabl::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LnablStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Dimension = 4,
    Config = 5,
    State = 6,
    Precondition = 7,
    Schedule = 8,
    Format = 9,
    Io = 10,
    BufferTooSmall = 11,
    Divergence = 12,
    Panic = 99,
}

/// Site kind of a schedule event.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LnablSiteKind {
    Ln1 = 0,
    Ln1qk = 1,
    Ln1v = 2,
    Ln2 = 3,
    Lnf = 4,
}

/// Action of a schedule event.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LnablAction {
    Freeze = 0,
    DropEot = 1,
    DropBos = 2,
    Interpolate = 3,
}

/// One schedule event. `block` is -1 for the final norm; `weight` is only
/// meaningful for [`LnablAction::Interpolate`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LnablEvent {
    pub step: u64,
    pub block: i32,
    pub kind: LnablSiteKind,
    pub action: LnablAction,
    pub weight: f64,
}

/// Opaque 32-bit model.
pub struct LnablModel(GptModel<f32>);

/// Opaque removal schedule.
pub struct LnablSchedule(RemovalSchedule);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LnablStatus {
    match e {
        Error::Dimension(_) | Error::Length { .. } => LnablStatus::Dimension,
        Error::Index(_) | Error::Argument(_) => LnablStatus::InvalidArgument,
        Error::Config(_) => LnablStatus::Config,
        Error::State { .. } => LnablStatus::State,
        Error::Precondition(_) => LnablStatus::Precondition,
        Error::Schedule { .. } => LnablStatus::Schedule,
        Error::Format { .. } => LnablStatus::Format,
        Error::Io { .. } => LnablStatus::Io,
        Error::Divergence(_) => LnablStatus::Divergence,
    }
}

struct Fail(LnablStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LnablStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LnablStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            LnablStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(LnablStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(LnablStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn model_ref<'a>(m: *const LnablModel) -> Result<&'a GptModel<f32>, Fail> {
    m.as_ref().map(|m| &m.0).ok_or_else(|| null("model"))
}

unsafe fn schedule_ref<'a>(s: *const LnablSchedule) -> Result<&'a RemovalSchedule, Fail> {
    s.as_ref().map(|s| &s.0).ok_or_else(|| null("schedule"))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn lnabl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Freshly initialized model with the default desk configuration.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn lnabl_model_init_default(seed: u64, out: *mut *mut LnablModel) -> LnablStatus {
    guard(|| {
        let model = GptModel::init(ModelConfig::default(), seed)?;
        put(out, Box::into_raw(Box::new(LnablModel(model))), "out")
    })
}

/// Loads a checkpoint, converting 64-bit checkpoints to 32-bit.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn lnabl_model_load(path: *const c_char, out: *mut *mut LnablModel) -> LnablStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let model = load_checkpoint::<f32>(path)?;
        put(out, Box::into_raw(Box::new(LnablModel(model))), "out")
    })
}

/// Writes `model` as a 32-bit checkpoint.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lnabl_model_save(model: *const LnablModel, path: *const c_char) -> LnablStatus {
    guard(|| {
        let model = model_ref(model)?;
        let path = str_arg(path, "path")?;
        save_checkpoint(model, path)?;
        Ok(())
    })
}

/// Releases a model handle. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lnabl_model_free(model: *mut LnablModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Vocabulary size, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lnabl_model_vocab_size(model: *const LnablModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config.vocab_size)
}

/// Maximum sequence length, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lnabl_model_context_length(model: *const LnablModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config.context_length)
}

/// Whether the forward pass executes no normalization operation.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lnabl_model_is_norm_free(model: *const LnablModel, out: *mut bool) -> LnablStatus {
    guard(|| {
        let model = model_ref(model)?;
        put(out, model.is_norm_free(), "out")
    })
}

/// Logits of one sequence, row-major `[len × vocab]`, written to `logits`.
///
/// Position 0 is flagged BOS and every EOT token is flagged EOT.
///
/// # Safety
/// `tokens` must point to `len` readable values and `logits` to `capacity`
/// writable floats.
#[no_mangle]
pub unsafe extern "C" fn lnabl_model_forward(
    model: *const LnablModel,
    tokens: *const u16,
    len: usize,
    logits: *mut f32,
    capacity: usize,
) -> LnablStatus {
    guard(|| {
        let model = model_ref(model)?;
        if tokens.is_null() {
            return Err(null("tokens"));
        }
        if logits.is_null() {
            return Err(null("logits"));
        }
        let need = len * model.config.vocab_size;
        if capacity < need {
            return Err(Fail(
                LnablStatus::BufferTooSmall,
                format!("logits buffer holds {capacity} floats, {need} needed"),
            ));
        }
        let tokens = std::slice::from_raw_parts(tokens, len);
        let out = model.forward_sequence(tokens, EOT)?;
        std::slice::from_raw_parts_mut(logits, need).copy_from_slice(out.data());
        Ok(())
    })
}

/// Splits every shared attention norm. Writes the number of splits to `out`
/// when it is not NULL.
///
/// # Safety
/// `model` must be a live handle; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn lnabl_model_split_all(model: *mut LnablModel, out: *mut usize) -> LnablStatus {
    guard(|| {
        let model = model.as_mut().map(|m| &mut m.0).ok_or_else(|| null("model"))?;
        let n = split_all(model);
        if !out.is_null() {
            out.write(n);
        }
        Ok(())
    })
}

/// Folds every frozen norm into the adjacent linear maps, producing a new
/// norm-free model. Fails with `Precondition` unless every site is frozen
/// with both specials dropped.
///
/// # Safety
/// `model` must be a live handle and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn lnabl_model_export(model: *const LnablModel, out: *mut *mut LnablModel) -> LnablStatus {
    guard(|| {
        let model = model_ref(model)?;
        let folded = fold_and_export(model)?;
        put(out, Box::into_raw(Box::new(LnablModel(folded))), "out")
    })
}

/// One of the bundled schedules, `"v1"` to `"v5"`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn lnabl_schedule_bundled(name: *const c_char, out: *mut *mut LnablSchedule) -> LnablStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let s = RemovalSchedule::bundled(name)?;
        put(out, Box::into_raw(Box::new(LnablSchedule(s))), "out")
    })
}

/// Parses schedule text in the tab-separated format.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn lnabl_schedule_parse(text: *const c_char, out: *mut *mut LnablSchedule) -> LnablStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let s = RemovalSchedule::parse("custom", text)?;
        put(out, Box::into_raw(Box::new(LnablSchedule(s))), "out")
    })
}

/// Releases a schedule handle. NULL is ignored.
///
/// # Safety
/// `schedule` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lnabl_schedule_free(schedule: *mut LnablSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Number of events, or 0 for a NULL handle.
///
/// # Safety
/// `schedule` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lnabl_schedule_len(schedule: *const LnablSchedule) -> usize {
    schedule.as_ref().map_or(0, |s| s.0.len())
}

/// Rescales event steps by `factor` in place.
///
/// # Safety
/// `schedule` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lnabl_schedule_rescale(schedule: *mut LnablSchedule, factor: f64) -> LnablStatus {
    guard(|| {
        let s = schedule.as_mut().ok_or_else(|| null("schedule"))?;
        s.0 = s.0.rescale(factor)?;
        Ok(())
    })
}

/// Event `index` in execution order.
///
/// # Safety
/// `schedule` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lnabl_schedule_event(
    schedule: *const LnablSchedule,
    index: usize,
    out: *mut LnablEvent,
) -> LnablStatus {
    guard(|| {
        let s = schedule_ref(schedule)?;
        let ev = s.events().get(index).ok_or_else(|| {
            Fail(
                LnablStatus::InvalidArgument,
                format!("event index {index} out of range for {} events", s.len()),
            )
        })?;
        let (action, weight) = match ev.action {
            NormAction::FreezeMain => (LnablAction::Freeze, 0.0),
            NormAction::DropEotSpecial => (LnablAction::DropEot, 0.0),
            NormAction::DropBosSpecial => (LnablAction::DropBos, 0.0),
            NormAction::SetInterpolation(w) => (LnablAction::Interpolate, w),
        };
        let kind = match ev.site.kind {
            SiteKind::Ln1 => LnablSiteKind::Ln1,
            SiteKind::Ln1qk => LnablSiteKind::Ln1qk,
            SiteKind::Ln1v => LnablSiteKind::Ln1v,
            SiteKind::Ln2 => LnablSiteKind::Ln2,
            SiteKind::Lnf => LnablSiteKind::Lnf,
        };
        let block = match ev.site.block {
            BlockRef::Block(i) => i as i32,
            BlockRef::Final => -1,
        };
        put(
            out,
            LnablEvent {
                step: ev.step,
                block,
                kind,
                action,
                weight,
            },
            "out",
        )
    })
}

/// Number of events scheduled exactly at `step`.
///
/// # Safety
/// `schedule` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lnabl_schedule_count_at(schedule: *const LnablSchedule, step: u64) -> usize {
    schedule.as_ref().map_or(0, |s| s.0.events_at(step).len())
}

/// Learning rate at `step` under the default warmup plus cosine schedule.
#[no_mangle]
pub extern "C" fn lnabl_lr_at(step: u64) -> f64 {
    LrConfig::default().lr_at(step)
}

/// Learning rate at `step` for explicit parameters. `cosine` selects warmup
/// plus cosine decay; otherwise the rate is constant at `base_lr`. Returns
/// NaN for invalid parameters.
#[no_mangle]
pub extern "C" fn lnabl_lr_at_with(
    step: u64,
    cosine: bool,
    base_lr: f64,
    min_lr: f64,
    warmup_steps: u64,
    decay_end_step: u64,
) -> f64 {
    let cfg = LrConfig {
        kind: if cosine { LrKind::WarmupCosine } else { LrKind::Constant },
        base_lr,
        min_lr,
        warmup_steps,
        decay_end_step,
    };
    match cfg.validate() {
        Ok(()) => cfg.lr_at(step),
        Err(_) => f64::NAN,
    }
}

/// Tokens consumed per optimizer step.
#[no_mangle]
pub extern "C" fn lnabl_tokens_per_step(micro_batch_size: u64, seq_len: u64, grad_accum: u64) -> u64 {
    let cfg = TrainConfig {
        micro_batch_size: micro_batch_size as usize,
        seq_len: seq_len as usize,
        grad_accum: grad_accum as usize,
        ..TrainConfig::default()
    };
    cfg.tokens_per_step() as u64
}
