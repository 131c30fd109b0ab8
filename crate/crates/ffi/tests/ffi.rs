use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use spinlab::losses::{dpo_loss, DpoConfig, PreferenceTriplet};
use spinlab::policy::{geometric_mixture, kl_divergence, AnswerSpace, Checkpoint, Policy, TokenPolicy, Vocab};
use spinlab::rng::substream;
use spinlab_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = spinlab_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn fixtures(dir: &Path) -> (TokenPolicy, TokenPolicy) {
    let space = AnswerSpace::new(Vocab::with_size(3).unwrap(), 2).unwrap();
    let mut rng = substream(7, 0);
    let p = TokenPolicy::random(space.clone(), 2, 1.0, &mut rng).unwrap();
    let q = TokenPolicy::random(space, 2, 1.0, &mut rng).unwrap();
    Checkpoint::from(&p).save(&dir.join("p.ckpt")).unwrap();
    Checkpoint::from(&q.to_tabular().unwrap())
        .save(&dir.join("q.ckpt"))
        .unwrap();
    (p, q)
}

unsafe fn load(path: &Path) -> *mut SpinPolicy {
    let mut h = ptr::null_mut();
    assert_eq!(spinlab_policy_load(cstr(path).as_ptr(), &mut h), SpinStatus::Ok);
    assert!(!h.is_null());
    h
}

#[test]
fn policy_queries_match_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let (p, q) = fixtures(tmp.path());
    unsafe {
        let hp = load(&tmp.path().join("p.ckpt"));
        let hq = load(&tmp.path().join("q.ckpt"));

        let (mut prompts, mut answers, mut params) = (0, 0, 0);
        assert_eq!(
            spinlab_policy_shape(hp, &mut prompts, &mut answers, &mut params),
            SpinStatus::Ok
        );
        assert_eq!((prompts, answers, params), (2, 12, p.logits().len()));

        let mut lp = 0.0;
        assert_eq!(spinlab_policy_log_prob(hp, 1, 5, &mut lp), SpinStatus::Ok);
        assert_eq!(lp, p.log_prob(1, 5).unwrap());

        let mut buf = vec![0.0; answers];
        assert_eq!(
            spinlab_policy_probabilities(hq, 0, buf.as_mut_ptr(), buf.len()),
            SpinStatus::Ok
        );
        assert_eq!(buf, q.to_tabular().unwrap().probabilities(0).unwrap());

        let mut kl = 0.0;
        assert_eq!(spinlab_kl_divergence(hp, hq, 1, &mut kl), SpinStatus::Ok);
        assert_eq!(kl, kl_divergence(&p, &q.to_tabular().unwrap(), 1).unwrap());

        let mut hg = ptr::null_mut();
        assert_eq!(spinlab_geometric_mixture(hp, hq, 0.3, &mut hg), SpinStatus::Ok);
        let g = geometric_mixture(&p, &q.to_tabular().unwrap(), 0.3).unwrap();
        assert_eq!(
            spinlab_policy_probabilities(hg, 1, buf.as_mut_ptr(), buf.len()),
            SpinStatus::Ok
        );
        assert_eq!(buf, g.probabilities(1).unwrap());

        let saved = tmp.path().join("g.ckpt");
        assert_eq!(spinlab_policy_save(hg, cstr(&saved).as_ptr()), SpinStatus::Ok);
        assert_eq!(Checkpoint::load(&saved).unwrap(), Checkpoint::from(&g));

        let (xs, ws, ls) = ([0usize, 1, 1], [2usize, 0, 7], [3usize, 4, 0]);
        let batch: Vec<_> = (0..3).map(|i| PreferenceTriplet::new(xs[i], ws[i], ls[i])).collect();
        let (want_loss, want_grad) = dpo_loss(&p, &q.to_tabular().unwrap(), &batch, DpoConfig { beta: 0.5 }).unwrap();
        let mut loss = 0.0;
        let mut grad = vec![0.0; params];
        let s = spinlab_dpo_loss(
            hp,
            hq,
            xs.as_ptr(),
            ws.as_ptr(),
            ls.as_ptr(),
            3,
            0.5,
            &mut loss,
            grad.as_mut_ptr(),
            grad.len(),
        );
        assert_eq!(s, SpinStatus::Ok);
        assert_eq!(loss, want_loss);
        assert_eq!(grad, want_grad);

        spinlab_policy_free(hg);
        spinlab_policy_free(hq);
        spinlab_policy_free(hp);
        spinlab_policy_free(ptr::null_mut());
    }
}

#[test]
fn errors_map_to_codes_and_messages() {
    let tmp = tempfile::tempdir().unwrap();
    fixtures(tmp.path());
    unsafe {
        let mut h = ptr::null_mut();
        let missing = cstr(&tmp.path().join("nope.ckpt"));
        assert_eq!(spinlab_policy_load(missing.as_ptr(), &mut h), SpinStatus::Io);
        assert!(last_error().contains("nope.ckpt"));
        assert!(h.is_null());

        std::fs::write(tmp.path().join("bad.ckpt"), "not a checkpoint\n").unwrap();
        let bad = cstr(&tmp.path().join("bad.ckpt"));
        assert_eq!(spinlab_policy_load(bad.as_ptr(), &mut h), SpinStatus::Parse);
        assert_eq!(spinlab_policy_load(ptr::null(), &mut h), SpinStatus::NullPointer);

        let hp = load(&tmp.path().join("p.ckpt"));
        let mut v = 0.0;
        assert_eq!(spinlab_policy_log_prob(hp, 2, 0, &mut v), SpinStatus::Domain);
        assert_eq!(spinlab_policy_log_prob(hp, 0, 12, &mut v), SpinStatus::Domain);
        assert_eq!(
            spinlab_policy_log_prob(hp, 0, 0, ptr::null_mut()),
            SpinStatus::NullPointer
        );

        let mut small = [0.0; 4];
        assert_eq!(
            spinlab_policy_probabilities(hp, 0, small.as_mut_ptr(), 4),
            SpinStatus::BufferTooSmall
        );
        assert!(last_error().contains("12 needed"));

        let mut hg = ptr::null_mut();
        assert_eq!(spinlab_geometric_mixture(hp, hp, 1.5, &mut hg), SpinStatus::Argument);

        let mut loss = 0.0;
        let s = spinlab_dpo_loss(
            hp,
            hp,
            ptr::null(),
            ptr::null(),
            ptr::null(),
            0,
            0.1,
            &mut loss,
            ptr::null_mut(),
            0,
        );
        assert_eq!(s, SpinStatus::Argument);
        spinlab_policy_free(hp);
    }
}

#[test]
fn experiment_and_grad_check_through_the_abi() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.txt");
    std::fs::write(
        &cfg,
        "seed = 3\ntask.prompts = 2\ntask.sft_size = 200\nspin.triplets_iter0 = 100\nspin.triplets_per_iter = 200\n",
    )
    .unwrap();
    let out = tmp.path().join("run");
    unsafe {
        let mut run = ptr::null_mut();
        assert_eq!(
            spinlab_run_experiment(cstr(&cfg).as_ptr(), cstr(&out).as_ptr(), &mut run),
            SpinStatus::Ok
        );
        let (mut n, mut complete, mut kl0) = (0, false, 0.0);
        assert_eq!(
            spinlab_run_summary(run, &mut n, &mut complete, &mut kl0),
            SpinStatus::Ok
        );
        assert_eq!(n, 3);
        assert!(complete && kl0 > 0.0);
        let mut m = SpinIterationMetrics::default();
        assert_eq!(spinlab_run_metrics(run, 2, &mut m), SpinStatus::Ok);
        assert_eq!(m.iteration, 2);
        let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
        assert!(csv
            .lines()
            .nth(3)
            .unwrap()
            .contains(&format!("{:.16e}", m.kl_data_model)));
        assert_eq!(spinlab_run_metrics(run, 3, &mut m), SpinStatus::Domain);
        spinlab_run_free(run);

        std::fs::write(&cfg, "spin.alpha = 2\n").unwrap();
        let mut run = ptr::null_mut();
        assert_eq!(
            spinlab_run_experiment(cstr(&cfg).as_ptr(), ptr::null(), &mut run),
            SpinStatus::Config
        );
        assert!(last_error().contains("spin.alpha"));

        let mut errs = [f64::NAN; 4];
        let mut passed = false;
        assert_eq!(
            spinlab_grad_check(1, 5, errs.as_mut_ptr(), 4, &mut passed),
            SpinStatus::Ok
        );
        assert!(passed);
        assert!(errs.iter().all(|e| *e < 1e-5));
    }
}

/// Compiles a C program against the generated header and the static library.
#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(crate_dir.join("include/spinlab.h")).unwrap();
    for name in [
        "spinlab_policy_load",
        "spinlab_dpo_loss",
        "spinlab_run_experiment",
        "SPIN_STATUS_BUFFER_TOO_SMALL",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }

    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libspinlab_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());

    let tmp = tempfile::tempdir().unwrap();
    let (p, _) = fixtures(tmp.path());
    let src = tmp.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "spinlab.h"
int main(int argc, char **argv) {
    SpinPolicy *p = NULL;
    if (spinlab_policy_load(argv[1], &p) != SPIN_STATUS_OK) return 1;
    size_t prompts = 0, answers = 0;
    if (spinlab_policy_shape(p, &prompts, &answers, NULL) != SPIN_STATUS_OK) return 2;
    double probs[64];
    if (spinlab_policy_probabilities(p, 0, probs, 2) != SPIN_STATUS_BUFFER_TOO_SMALL) return 3;
    if (spinlab_policy_probabilities(p, 0, probs, 64) != SPIN_STATUS_OK) return 4;
    double lp = 0.0;
    if (spinlab_policy_log_prob(p, 1, 3, &lp) != SPIN_STATUS_OK) return 5;
    SpinPolicy *q = NULL;
    if (spinlab_policy_load("/nonexistent/x.ckpt", &q) != SPIN_STATUS_IO) return 6;
    if (spinlab_last_error_message() == NULL) return 7;
    printf("%zu %zu %.17g %.17g\n", prompts, answers, probs[0], lp);
    spinlab_policy_free(p);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = tmp.path().join("main");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
    let output = Command::new(&bin).arg(tmp.path().join("p.ckpt")).output().unwrap();
    assert!(output.status.success(), "exit {:?}", output.status.code());
    let expected = format!(
        "2 12 {} {}\n",
        c_g17(p.probabilities(0).unwrap()[0]),
        c_g17(p.log_prob(1, 3).unwrap())
    );
    assert_eq!(String::from_utf8(output.stdout).unwrap(), expected);
}

/// Rust rendering of C's `%.17g` for the values used above.
fn c_g17(v: f64) -> String {
    let back: f64 = format!("{v:.16e}").parse().unwrap();
    assert_eq!(back, v);
    let exp = v.abs().log10().floor() as i32;
    if (-5..17).contains(&exp) {
        let s = format!("{:.*}", (16 - exp).max(0) as usize, v);
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        let s = format!("{v:.16e}");
        let (m, e) = s.split_once('e').unwrap();
        let m = m.trim_end_matches('0').trim_end_matches('.');
        let e: i32 = e.parse().unwrap();
        format!("{m}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
    }
}
