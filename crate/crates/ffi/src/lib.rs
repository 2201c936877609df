//! C ABI over `koopman-pg`.
//!
//! Every function returns a [`KpgStatus`]; on failure the message is kept in
//! a thread-local slot readable through [`kpg_last_error_message`]. Configs
//! and trained agents are opaque handles released with their `_free`
//! function. Vectors and matrices are passed as `double` buffers with
//! explicit lengths; matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use koopman_pg::checkpoint::{load_agent, save_agent};
use koopman_pg::config::{parse_config_str, TrainConfig};
use koopman_pg::envs::lqr_oracle;
use koopman_pg::trainer::{evaluate, train, Agent};
use koopman_pg::{Error, Matrix};

/// Result code of every exported function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KpgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    Numerical = 4,
    RankDeficient = 5,
    InsufficientData = 6,
    Io = 7,
    Parse = 8,
    Panic = 9,
}

/// Training configuration handle.
pub struct KpgConfig {
    inner: TrainConfig,
}

/// Trained lifting, critic and actor.
pub struct KpgAgent {
    inner: Agent,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> KpgStatus {
    match e {
        Error::InvalidInput(_) => KpgStatus::InvalidInput,
        Error::Config { .. } => KpgStatus::Config,
        Error::RankDeficient { .. } | Error::BatchTooSmall { .. } => KpgStatus::RankDeficient,
        Error::InsufficientData { .. } | Error::InsufficientHistory { .. } => KpgStatus::InsufficientData,
        Error::NumericalDivergence(_)
        | Error::DivergedRollout { .. }
        | Error::EnvDiverged(_)
        | Error::OracleDiverged(_)
        | Error::Oracle(_) => KpgStatus::Numerical,
        Error::Parse { .. } => KpgStatus::Parse,
        Error::Io(_) => KpgStatus::Io,
    }
}

struct Fail(KpgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(KpgStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> KpgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KpgStatus::Ok,
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
            KpgStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(KpgStatus::InvalidInput, format!("{what} is not UTF-8")))
}

unsafe fn vec_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn agent_ref<'a>(p: *const KpgAgent) -> Result<&'a Agent, Fail> {
    p.as_ref().map(|a| &a.inner).ok_or_else(|| null("agent"))
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), Fail> {
    if got == want {
        Ok(())
    } else {
        Err(Fail(
            KpgStatus::InvalidInput,
            format!("{what} has length {got}, expected {want}"),
        ))
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kpg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kpg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses `key=value` configuration text (NUL-terminated). An empty string
/// yields the defaults.
///
/// # Safety
/// `text` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kpg_config_parse(text: *const c_char, out: *mut *mut KpgConfig) -> KpgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(text, "text")?;
        let inner = parse_config_str(text, &[])?;
        *out = Box::into_raw(Box::new(KpgConfig { inner }));
        Ok(())
    })
}

/// Sets one key and re-validates the whole configuration; on failure the
/// handle is left unchanged.
///
/// # Safety
/// `config` must come from [`kpg_config_parse`]; `key`, `value` valid C strings.
#[no_mangle]
pub unsafe extern "C" fn kpg_config_set(config: *mut KpgConfig, key: *const c_char, value: *const c_char) -> KpgStatus {
    guard(|| {
        let cfg = config.as_mut().ok_or_else(|| null("config"))?;
        let key = str_arg(key, "key")?;
        let value = str_arg(value, "value")?;
        let mut next = cfg.inner.clone();
        next.set(key, value).map_err(|m| Fail(KpgStatus::Config, m))?;
        next.validate()?;
        cfg.inner = next;
        Ok(())
    })
}

/// # Safety
/// `config` must come from [`kpg_config_parse`] or be null.
#[no_mangle]
pub unsafe extern "C" fn kpg_config_free(config: *mut KpgConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs training to completion and returns the trained agent.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kpg_train(config: *const KpgConfig, out: *mut *mut KpgAgent) -> KpgStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let outcome = train(&cfg.inner)?;
        *out = Box::into_raw(Box::new(KpgAgent { inner: outcome.agent }));
        Ok(())
    })
}

/// Writes the agent's checkpoint directory.
///
/// # Safety
/// `agent` must be a live handle and `dir` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn kpg_agent_save(agent: *const KpgAgent, dir: *const c_char) -> KpgStatus {
    guard(|| {
        let agent = agent_ref(agent)?;
        save_agent(Path::new(str_arg(dir, "dir")?), agent)?;
        Ok(())
    })
}

/// # Safety
/// `dir` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kpg_agent_load(dir: *const c_char, out: *mut *mut KpgAgent) -> KpgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = load_agent(Path::new(str_arg(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(KpgAgent { inner }));
        Ok(())
    })
}

/// State dimension `n`, action dimension `m` and lifted dimension `r`.
/// Any output pointer may be null.
///
/// # Safety
/// `agent` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn kpg_agent_dims(
    agent: *const KpgAgent,
    state_dim: *mut usize,
    action_dim: *mut usize,
    lifted_dim: *mut usize,
) -> KpgStatus {
    guard(|| {
        let a = agent_ref(agent)?;
        if let Some(p) = state_dim.as_mut() {
            *p = a.actor.state_dim();
        }
        if let Some(p) = action_dim.as_mut() {
            *p = a.actor.action_dim();
        }
        if let Some(p) = lifted_dim.as_mut() {
            *p = a.model.lifted_dim();
        }
        Ok(())
    })
}

/// `u = μ(x)`.
///
/// # Safety
/// `x` must hold `n` doubles and `u` room for `m`.
#[no_mangle]
pub unsafe extern "C" fn kpg_agent_act(agent: *const KpgAgent, x: *const f64, n: usize, u: *mut f64, m: usize) -> KpgStatus {
    guard(|| {
        let a = agent_ref(agent)?;
        check_len("x", n, a.actor.state_dim())?;
        check_len("u", m, a.actor.action_dim())?;
        let action = a.actor.act(vec_arg(x, n, "x")?)?;
        out_arg(u, m, "u")?.copy_from_slice(&action);
        Ok(())
    })
}

/// One-step surrogate prediction `C (A g(x) + B u)` into `x_next` (length `n`).
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn kpg_agent_predict(
    agent: *const KpgAgent,
    x: *const f64,
    n: usize,
    u: *const f64,
    m: usize,
    x_next: *mut f64,
) -> KpgStatus {
    guard(|| {
        let a = agent_ref(agent)?;
        check_len("x", n, a.model.state_dim())?;
        check_len("u", m, a.model.input_dim())?;
        let pred = a.model.predict(vec_arg(x, n, "x")?, vec_arg(u, m, "u")?)?;
        out_arg(x_next, n, "x_next")?.copy_from_slice(&pred);
        Ok(())
    })
}

/// Critic value `Ĵ(x)`.
///
/// # Safety
/// `x` must hold `n` doubles; `value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn kpg_agent_value(agent: *const KpgAgent, x: *const f64, n: usize, value: *mut f64) -> KpgStatus {
    guard(|| {
        let a = agent_ref(agent)?;
        check_len("x", n, a.critic.state_dim())?;
        let v = a.critic.value(vec_arg(x, n, "x")?)?;
        *value.as_mut().ok_or_else(|| null("value"))? = v;
        Ok(())
    })
}

/// Noise-free evaluation in the agent's environment. Either output may be null.
///
/// # Safety
/// `agent` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn kpg_agent_evaluate(
    agent: *const KpgAgent,
    episodes: usize,
    seed: u64,
    mean_step_cost: *mut f64,
    mean_discounted_cost: *mut f64,
) -> KpgStatus {
    guard(|| {
        let a = agent_ref(agent)?;
        let env = a.config.make_env()?;
        let horizon = a.config.horizon_for(env.as_ref());
        let report = evaluate(&a.actor, env.as_ref(), episodes, horizon, a.config.gamma, seed)?;
        if let Some(p) = mean_step_cost.as_mut() {
            *p = report.mean_step_cost;
        }
        if let Some(p) = mean_discounted_cost.as_mut() {
            *p = report.mean_discounted_cost;
        }
        Ok(())
    })
}

/// # Safety
/// `agent` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn kpg_agent_free(agent: *mut KpgAgent) {
    if !agent.is_null() {
        drop(Box::from_raw(agent));
    }
}

/// Discounted LQR: `a` is n×n, `b` n×m, `q` n×n, `r` m×m (row-major). Writes
/// the gain `K` (m×n, `u = −K x`) and the cost-to-go `P` (n×n); `p` may be null.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn kpg_lqr(
    a: *const f64,
    b: *const f64,
    q: *const f64,
    r: *const f64,
    n: usize,
    m: usize,
    gamma: f64,
    max_iters: usize,
    gain: *mut f64,
    p: *mut f64,
) -> KpgStatus {
    guard(|| {
        let mat = |ptr: *const f64, rows: usize, cols: usize, what: &str| -> Result<Matrix, Fail> {
            Ok(Matrix::from_vec(rows, cols, vec_arg(ptr, rows * cols, what)?.to_vec())?)
        };
        let sol = lqr_oracle(
            &mat(a, n, n, "a")?,
            &mat(b, n, m, "b")?,
            &mat(q, n, n, "q")?,
            &mat(r, m, m, "r")?,
            gamma,
            max_iters,
        )?;
        out_arg(gain, m * n, "gain")?.copy_from_slice(sol.gain.as_slice());
        if !p.is_null() {
            out_arg(p, n * n, "p")?.copy_from_slice(sol.value.as_slice());
        }
        Ok(())
    })
}
