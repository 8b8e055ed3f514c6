//! C ABI over the autofeedback core.
//!
//! Every fallible call returns an [`AfStatus`]; on failure
//! [`af_last_error`] describes the cause. Objects are opaque handles that
//! must be released with their matching `*_free`. Strings returned through
//! out-parameters are owned by the caller and released with
//! [`af_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use autofeedback::model::{AssessmentContext, Decision, IssueFlag, ScoreLevel, StudentResponse, ValidationVerdict};
use autofeedback::orchestrator::parse_verdict;
use autofeedback::promptkit::{
    assemble_agent1, assemble_agent2, bundled_context, load_context, load_template, PromptTemplate, TemplateKind,
};
use autofeedback::statlab::{chi_square, p_value, ContingencyTable2x2, Hundredths};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Statistics = 4,
    Parse = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfTemplateKind {
    Agent1 = 0,
    Agent2 = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfScoreLevel {
    Beginning = 0,
    Proficient = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfDecision {
    GoodEnough = 0,
    Revised = 1,
}

pub const AF_ISSUE_OVER_PRAISE: u32 = 1;
pub const AF_ISSUE_OVER_INFERENCE: u32 = 2;

/// Parsed Agent 2 output.
pub struct AfVerdict(ValidationVerdict);

/// A prompt template.
pub struct AfTemplate(PromptTemplate);

/// An assessment item with its rubric.
pub struct AfContext(AssessmentContext);

type Failure = (AfStatus, String);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn call(f: impl FnOnce() -> Result<(), Failure>) -> AfStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (AfStatus::Ok, String::new()),
        Ok(Err(failure)) => failure,
        Err(_) => (AfStatus::Panic, "internal panic".to_string()),
    };
    set_last_error(&msg);
    status
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err((AfStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (AfStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| (AfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| (AfStatus::NullPointer, format!("{what} is null")))
}

fn owned_string(s: &str) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| (AfStatus::InvalidArgument, "result contains a NUL byte".to_string()))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn af_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn af_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn af_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Pearson chi-square of the 2x2 table [[a, b], [c, d]], no continuity
/// correction.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn af_chi_square_2x2(a: u64, b: u64, c: u64, d: u64, out_statistic: *mut f64) -> AfStatus {
    call(|| {
        let slot = out(out_statistic, "out_statistic")?;
        *slot = chi_square(&ContingencyTable2x2::new(a, b, c, d)).map_err(|e| (AfStatus::Statistics, e.to_string()))?;
        Ok(())
    })
}

/// Upper-tail probability of a chi-square statistic with one degree of freedom.
///
/// # Safety
/// `out_p` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn af_p_value_df1(statistic: f64, out_p: *mut f64) -> AfStatus {
    call(|| {
        let slot = out(out_p, "out_p")?;
        *slot = p_value(statistic).map_err(|e| (AfStatus::Statistics, e.to_string()))?;
        Ok(())
    })
}

/// `count / n` as a percentage rounded half-up to two decimals, reported
/// in hundredths of a percent (1542 for 15.42).
///
/// # Safety
/// `out_hundredths` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_percent_round2(count: u64, n: u64, out_hundredths: *mut i64) -> AfStatus {
    call(|| {
        let slot = out(out_hundredths, "out_hundredths")?;
        if n == 0 || count > n {
            return Err((AfStatus::InvalidArgument, format!("need 0 <= count <= n and n > 0, got {count}/{n}")));
        }
        *slot = Hundredths::percent(count, n).0;
        Ok(())
    })
}

/// Parses Agent 2 output into a verdict handle.
///
/// # Safety
/// `raw` must be a NUL-terminated string; `out_verdict` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_verdict_parse(raw: *const c_char, out_verdict: *mut *mut AfVerdict) -> AfStatus {
    call(|| {
        let slot = out(out_verdict, "out_verdict")?;
        *slot = ptr::null_mut();
        let v = parse_verdict(text(raw, "raw")?).map_err(|e| (AfStatus::Parse, e.to_string()))?;
        *slot = Box::into_raw(Box::new(AfVerdict(v)));
        Ok(())
    })
}

/// # Safety
/// `verdict` must come from [`af_verdict_parse`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn af_verdict_free(verdict: *mut AfVerdict) {
    if !verdict.is_null() {
        drop(Box::from_raw(verdict));
    }
}

/// # Safety
/// `verdict` must be a live handle; `out_decision` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_verdict_decision(verdict: *const AfVerdict, out_decision: *mut AfDecision) -> AfStatus {
    call(|| {
        let v = &handle(verdict, "verdict")?.0;
        *out(out_decision, "out_decision")? = match v.decision() {
            Decision::GoodEnough => AfDecision::GoodEnough,
            Decision::Revised => AfDecision::Revised,
        };
        Ok(())
    })
}

/// Detected issues as a bitmask of `AF_ISSUE_*`.
///
/// # Safety
/// `verdict` must be a live handle; `out_issues` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_verdict_issues(verdict: *const AfVerdict, out_issues: *mut u32) -> AfStatus {
    call(|| {
        let v = &handle(verdict, "verdict")?.0;
        *out(out_issues, "out_issues")? = v
            .detected_issues()
            .iter()
            .map(|f| match f {
                IssueFlag::OverPraise => AF_ISSUE_OVER_PRAISE,
                IssueFlag::OverInference => AF_ISSUE_OVER_INFERENCE,
            })
            .fold(0, |acc, bit| acc | bit);
        Ok(())
    })
}

/// Whether the output could not be split cleanly and needs a human look.
///
/// # Safety
/// `verdict` must be a live handle; `out_flag` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_verdict_needs_review(verdict: *const AfVerdict, out_flag: *mut bool) -> AfStatus {
    call(|| {
        let v = &handle(verdict, "verdict")?.0;
        *out(out_flag, "out_flag")? = v.needs_review();
        Ok(())
    })
}

/// The revised feedback text, or null when the verdict is good enough.
///
/// # Safety
/// `verdict` must be a live handle; `out_text` a valid pointer. A non-null
/// result is released with [`af_string_free`].
#[no_mangle]
pub unsafe extern "C" fn af_verdict_revised_feedback(
    verdict: *const AfVerdict,
    out_text: *mut *mut c_char,
) -> AfStatus {
    call(|| {
        let v = &handle(verdict, "verdict")?.0;
        let slot = out(out_text, "out_text")?;
        *slot = match v.revised_feedback() {
            Some(doc) => owned_string(&doc.raw_text)?,
            None => ptr::null_mut(),
        };
        Ok(())
    })
}

/// One of the built-in templates.
///
/// # Safety
/// `out_template` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_template_bundled(kind: AfTemplateKind, out_template: *mut *mut AfTemplate) -> AfStatus {
    call(|| {
        let kind = match kind {
            AfTemplateKind::Agent1 => TemplateKind::Agent1,
            AfTemplateKind::Agent2 => TemplateKind::Agent2,
        };
        *out(out_template, "out_template")? = Box::into_raw(Box::new(AfTemplate(PromptTemplate::bundled(kind))));
        Ok(())
    })
}

/// Loads a template file and its sibling `.toml` manifest.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_template` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_template_load(path: *const c_char, out_template: *mut *mut AfTemplate) -> AfStatus {
    call(|| {
        let slot = out(out_template, "out_template")?;
        *slot = ptr::null_mut();
        let t = load_template(Path::new(text(path, "path")?)).map_err(|e| (AfStatus::Io, e.to_string()))?;
        *slot = Box::into_raw(Box::new(AfTemplate(t)));
        Ok(())
    })
}

/// # Safety
/// `template` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn af_template_free(template: *mut AfTemplate) {
    if !template.is_null() {
        drop(Box::from_raw(template));
    }
}

/// The built-in assessment context.
///
/// # Safety
/// `out_context` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_context_bundled(out_context: *mut *mut AfContext) -> AfStatus {
    call(|| {
        *out(out_context, "out_context")? = Box::into_raw(Box::new(AfContext(bundled_context())));
        Ok(())
    })
}

/// Loads an assessment context from a TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_context` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_context_load(path: *const c_char, out_context: *mut *mut AfContext) -> AfStatus {
    call(|| {
        let slot = out(out_context, "out_context")?;
        *slot = ptr::null_mut();
        let ctx = load_context(Path::new(text(path, "path")?)).map_err(|e| (AfStatus::Io, e.to_string()))?;
        *slot = Box::into_raw(Box::new(AfContext(ctx)));
        Ok(())
    })
}

/// # Safety
/// `context` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn af_context_free(context: *mut AfContext) {
    if !context.is_null() {
        drop(Box::from_raw(context));
    }
}

/// Fills a template for one student response. `agent1_feedback` is
/// required for Agent 2 templates and must be null for Agent 1 templates.
///
/// # Safety
/// Handles must be live, strings NUL-terminated, `out_prompt` a valid
/// pointer. The result is released with [`af_string_free`].
#[no_mangle]
pub unsafe extern "C" fn af_assemble(
    template: *const AfTemplate,
    context: *const AfContext,
    response_id: *const c_char,
    response_text: *const c_char,
    level: AfScoreLevel,
    agent1_feedback: *const c_char,
    out_prompt: *mut *mut c_char,
) -> AfStatus {
    call(|| {
        let slot = out(out_prompt, "out_prompt")?;
        *slot = ptr::null_mut();
        let template = &handle(template, "template")?.0;
        let ctx = &handle(context, "context")?.0;
        let response = StudentResponse {
            id: text(response_id, "response_id")?.to_string(),
            text: text(response_text, "response_text")?.to_string(),
            score_level: match level {
                AfScoreLevel::Beginning => ScoreLevel::Beginning,
                AfScoreLevel::Proficient => ScoreLevel::Proficient,
            },
        };
        let assembled = if agent1_feedback.is_null() {
            assemble_agent1(template, ctx, &response)
        } else {
            assemble_agent2(template, ctx, &response, text(agent1_feedback, "agent1_feedback")?)
        }
        .map_err(|e| (AfStatus::InvalidArgument, e.to_string()))?;
        *slot = owned_string(&assembled.text())?;
        Ok(())
    })
}
