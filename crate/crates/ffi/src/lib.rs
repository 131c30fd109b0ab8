//! C ABI over the laboratory.
//!
//! Every fallible function returns a [`SpinStatus`]. On failure the message
//! is kept per thread and read back with [`spinlab_last_error_message`].
//! Policies and run records are opaque handles owned by the caller and
//! released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use spinlab::gflownet::GFlowNetSampler;
use spinlab::harness::{grad_check, run_experiment_config, ExperimentConfig, GradCheckOptions, RunRecord, RunStatus};
use spinlab::losses::{dpo_loss, DpoConfig, PreferenceTriplet};
use spinlab::policy::{
    geometric_mixture, kl_divergence, Checkpoint, CheckpointKind, Policy, TabularPolicy, TokenPolicy,
};
use spinlab::SpinError;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    Domain = 4,
    Config = 5,
    Argument = 6,
    Capacity = 7,
    Run = 8,
    Parse = 9,
    Io = 10,
    Panic = 11,
}

enum Failure {
    Null(&'static str),
    Utf8(&'static str),
    Buffer { needed: usize, given: usize },
    Spin(SpinError),
}

impl From<SpinError> for Failure {
    fn from(e: SpinError) -> Self {
        Failure::Spin(e)
    }
}

impl Failure {
    fn status(&self) -> SpinStatus {
        match self {
            Failure::Null(_) => SpinStatus::NullPointer,
            Failure::Utf8(_) => SpinStatus::InvalidUtf8,
            Failure::Buffer { .. } => SpinStatus::BufferTooSmall,
            Failure::Spin(e) => match e {
                SpinError::Domain(_) => SpinStatus::Domain,
                SpinError::Config { .. } => SpinStatus::Config,
                SpinError::Argument(_) => SpinStatus::Argument,
                SpinError::Capacity { .. } => SpinStatus::Capacity,
                SpinError::Run(_) => SpinStatus::Run,
                SpinError::Parse { .. } => SpinStatus::Parse,
                SpinError::Io { .. } => SpinStatus::Io,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Null(what) => format!("null pointer: {what}"),
            Failure::Utf8(what) => format!("{what} is not valid UTF-8"),
            Failure::Buffer { needed, given } => format!("buffer holds {given} values, {needed} needed"),
            Failure::Spin(e) => e.to_string(),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpinStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpinStatus::Ok,
        Ok(Err(fail)) => {
            set_last_error(fail.message());
            fail.status()
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            SpinStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8(what))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn fill(buf: *mut f64, len: usize, values: &[f64]) -> Result<(), Failure> {
    if len < values.len() {
        return Err(Failure::Buffer {
            needed: values.len(),
            given: len,
        });
    }
    if values.is_empty() {
        return Ok(());
    }
    if buf.is_null() {
        return Err(Failure::Null("buffer"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    Ok(())
}

/// Opaque policy handle: a sequence-level table or token-level conditionals.
pub struct SpinPolicy {
    inner: PolicyInner,
}

enum PolicyInner {
    Tabular(TabularPolicy),
    Token(TokenPolicy),
}

impl SpinPolicy {
    fn as_dyn(&self) -> &dyn Policy {
        match &self.inner {
            PolicyInner::Tabular(p) => p,
            PolicyInner::Token(p) => p,
        }
    }

    fn into_raw(inner: PolicyInner) -> *mut SpinPolicy {
        Box::into_raw(Box::new(SpinPolicy { inner }))
    }
}

/// Opaque handle to a finished (or failed) run record.
pub struct SpinRun {
    record: RunRecord,
}

/// One row of a run's metrics table.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpinIterationMetrics {
    pub iteration: usize,
    pub initial_train_loss: f64,
    pub mean_train_loss: f64,
    pub kl_data_model: f64,
    pub kl_model_base: f64,
    pub wall_seconds: f64,
}

/// Last error message on this thread, or null when none has been recorded.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn spinlab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a tabular, token or sampler checkpoint. Sampler checkpoints load as
/// their token-level policy.
///
/// # Safety
/// `path` must be a nul-terminated string and `out_policy` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spinlab_policy_load(path: *const c_char, out_policy: *mut *mut SpinPolicy) -> SpinStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let slot = out(out_policy, "out_policy")?;
        let ck = Checkpoint::load(&path)?;
        let inner = match ck.kind {
            CheckpointKind::Tabular => PolicyInner::Tabular(ck.into_tabular()?),
            CheckpointKind::Token => PolicyInner::Token(ck.into_token()?),
            CheckpointKind::GFlowNet => PolicyInner::Token(GFlowNetSampler::from_checkpoint(ck)?.policy().clone()),
            CheckpointKind::Reward => {
                return Err(SpinError::Argument(format!("{} holds rewards, not a policy", path.display())).into())
            }
        };
        *slot = SpinPolicy::into_raw(inner);
        Ok(())
    })
}

/// Writes the policy as a checkpoint file.
///
/// # Safety
/// `policy` must come from this library and `path` be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn spinlab_policy_save(policy: *const SpinPolicy, path: *const c_char) -> SpinStatus {
    guard(|| {
        let p = deref(policy, "policy")?;
        let path = path_arg(path, "path")?;
        let ck = match &p.inner {
            PolicyInner::Tabular(t) => Checkpoint::from(t),
            PolicyInner::Token(t) => Checkpoint::from(t),
        };
        ck.save(Path::new(&path))?;
        Ok(())
    })
}

/// # Safety
/// `policy` must come from this library (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn spinlab_policy_free(policy: *mut SpinPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Number of prompts, answers and trainable parameters of `policy`.
///
/// # Safety
/// `policy` must come from this library; each out pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn spinlab_policy_shape(
    policy: *const SpinPolicy,
    num_prompts: *mut usize,
    num_answers: *mut usize,
    num_params: *mut usize,
) -> SpinStatus {
    guard(|| {
        let p = deref(policy, "policy")?;
        let params = match &p.inner {
            PolicyInner::Tabular(t) => t.logits().len(),
            PolicyInner::Token(t) => t.logits().len(),
        };
        if let Some(n) = num_prompts.as_mut() {
            *n = p.as_dyn().num_prompts();
        }
        if let Some(n) = num_answers.as_mut() {
            *n = p.as_dyn().space().num_answers();
        }
        if let Some(n) = num_params.as_mut() {
            *n = params;
        }
        Ok(())
    })
}

/// `log π(y|x)` in nats.
///
/// # Safety
/// `policy` must come from this library and `out_value` be valid.
#[no_mangle]
pub unsafe extern "C" fn spinlab_policy_log_prob(
    policy: *const SpinPolicy,
    prompt: usize,
    answer: usize,
    out_value: *mut f64,
) -> SpinStatus {
    guard(|| {
        let p = deref(policy, "policy")?;
        let slot = out(out_value, "out_value")?;
        *slot = p.as_dyn().log_prob(prompt, answer)?;
        Ok(())
    })
}

/// Copies `π(·|x)` into `buf`, which must hold at least the number of answers.
///
/// # Safety
/// `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn spinlab_policy_probabilities(
    policy: *const SpinPolicy,
    prompt: usize,
    buf: *mut f64,
    len: usize,
) -> SpinStatus {
    guard(|| {
        let p = deref(policy, "policy")?;
        fill(buf, len, &p.as_dyn().probabilities(prompt)?)
    })
}

/// `KL(p(·|x) ‖ q(·|x))` by enumeration.
///
/// # Safety
/// Both policies must come from this library and `out_value` be valid.
#[no_mangle]
pub unsafe extern "C" fn spinlab_kl_divergence(
    p: *const SpinPolicy,
    q: *const SpinPolicy,
    prompt: usize,
    out_value: *mut f64,
) -> SpinStatus {
    guard(|| {
        let p = deref(p, "p")?;
        let q = deref(q, "q")?;
        let slot = out(out_value, "out_value")?;
        *slot = kl_divergence(p.as_dyn(), q.as_dyn(), prompt)?;
        Ok(())
    })
}

/// Normalized `p^α q^{1-α}` as a new tabular policy.
///
/// # Safety
/// Both policies must come from this library and `out_policy` be valid.
#[no_mangle]
pub unsafe extern "C" fn spinlab_geometric_mixture(
    p: *const SpinPolicy,
    q: *const SpinPolicy,
    alpha: f64,
    out_policy: *mut *mut SpinPolicy,
) -> SpinStatus {
    guard(|| {
        let p = deref(p, "p")?;
        let q = deref(q, "q")?;
        let slot = out(out_policy, "out_policy")?;
        let g = geometric_mixture(p.as_dyn(), q.as_dyn(), alpha)?;
        *slot = SpinPolicy::into_raw(PolicyInner::Tabular(g));
        Ok(())
    })
}

/// Mean DPO loss of `theta` against `reference` over `n` triplets, and its
/// gradient in `theta`'s parameters when `grad` is non-null.
///
/// # Safety
/// The triplet arrays must hold `n` entries; `grad` must be null or valid
/// for `grad_len` writes.
#[no_mangle]
pub unsafe extern "C" fn spinlab_dpo_loss(
    theta: *const SpinPolicy,
    reference: *const SpinPolicy,
    prompts: *const usize,
    winners: *const usize,
    losers: *const usize,
    n: usize,
    beta: f64,
    out_loss: *mut f64,
    grad: *mut f64,
    grad_len: usize,
) -> SpinStatus {
    guard(|| {
        let theta = deref(theta, "theta")?;
        let reference = deref(reference, "reference")?;
        let xs = slice_arg(prompts, n, "prompts")?;
        let ws = slice_arg(winners, n, "winners")?;
        let ls = slice_arg(losers, n, "losers")?;
        let slot = out(out_loss, "out_loss")?;
        let batch: Vec<PreferenceTriplet> = (0..n).map(|i| PreferenceTriplet::new(xs[i], ws[i], ls[i])).collect();
        let cfg = DpoConfig { beta };
        let (loss, g) = match &theta.inner {
            PolicyInner::Tabular(t) => dpo_loss(t, reference.as_dyn(), &batch, cfg)?,
            PolicyInner::Token(t) => dpo_loss(t, reference.as_dyn(), &batch, cfg)?,
        };
        if !grad.is_null() {
            fill(grad, grad_len, &g)?;
        }
        *slot = loss;
        Ok(())
    })
}

/// Runs the experiment described by the config file at `config_path`.
/// A non-null `out_dir` overrides the configured output directory.
///
/// A run that starts but fails part-way returns `SPIN_STATUS_RUN` (or the
/// underlying error's code) and leaves its record on disk.
///
/// # Safety
/// Strings must be nul-terminated and `out_run` valid.
#[no_mangle]
pub unsafe extern "C" fn spinlab_run_experiment(
    config_path: *const c_char,
    out_dir: *const c_char,
    out_run: *mut *mut SpinRun,
) -> SpinStatus {
    guard(|| {
        let cfg_path = path_arg(config_path, "config_path")?;
        let slot = out(out_run, "out_run")?;
        let mut cfg = ExperimentConfig::load(&cfg_path)?;
        if !out_dir.is_null() {
            cfg.out_dir = path_arg(out_dir, "out_dir")?;
        }
        cfg.sync_seed();
        let record = run_experiment_config(&cfg)?;
        *slot = Box::into_raw(Box::new(SpinRun { record }));
        Ok(())
    })
}

/// # Safety
/// `run` must come from this library (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn spinlab_run_free(run: *mut SpinRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of finished iterations and whether the run completed.
///
/// # Safety
/// `run` must come from this library; out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn spinlab_run_summary(
    run: *const SpinRun,
    num_iterations: *mut usize,
    complete: *mut bool,
    kl_data_base: *mut f64,
) -> SpinStatus {
    guard(|| {
        let r = &deref(run, "run")?.record;
        if let Some(n) = num_iterations.as_mut() {
            *n = r.metrics.len();
        }
        if let Some(c) = complete.as_mut() {
            *c = r.status == RunStatus::Complete;
        }
        if let Some(k) = kl_data_base.as_mut() {
            *k = r.kl_data_base;
        }
        Ok(())
    })
}

/// Metrics of the `index`-th finished iteration (0-based).
///
/// # Safety
/// `run` must come from this library and `out_metrics` be valid.
#[no_mangle]
pub unsafe extern "C" fn spinlab_run_metrics(
    run: *const SpinRun,
    index: usize,
    out_metrics: *mut SpinIterationMetrics,
) -> SpinStatus {
    guard(|| {
        let r = &deref(run, "run")?.record;
        let slot = out(out_metrics, "out_metrics")?;
        let m = r
            .metrics
            .get(index)
            .ok_or_else(|| SpinError::Domain(format!("iteration index {index} out of range 0..{}", r.metrics.len())))?;
        *slot = SpinIterationMetrics {
            iteration: m.iteration,
            initial_train_loss: m.initial_train_loss,
            mean_train_loss: m.mean_train_loss,
            kl_data_model: m.kl_data_model,
            kl_model_base: m.kl_model_base,
            wall_seconds: m.wall_seconds,
        };
        Ok(())
    })
}

/// Finite-difference check of the dpo, ipo, slic and subtb gradients on
/// `instances` seeded instances each. `max_rel_err` receives the four worst
/// relative errors in that order; `passed` is set when all are below 1e-5.
///
/// # Safety
/// `max_rel_err` must be null or valid for `len` writes; `passed` must be valid.
#[no_mangle]
pub unsafe extern "C" fn spinlab_grad_check(
    seed: u64,
    instances: usize,
    max_rel_err: *mut f64,
    len: usize,
    passed: *mut bool,
) -> SpinStatus {
    guard(|| {
        let slot = out(passed, "passed")?;
        let report = grad_check(&GradCheckOptions {
            seed,
            instances,
            ..Default::default()
        })?;
        if !max_rel_err.is_null() {
            let errs: Vec<f64> = report.entries.iter().map(|e| e.max_relative_error).collect();
            fill(max_rel_err, len, &errs)?;
        }
        *slot = report.passed();
        Ok(())
    })
}
