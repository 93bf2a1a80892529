//! Exercises the C ABI end to end from Rust, plus a compile-and-link smoke
//! test of the generated header with a real C toolchain.

use std::ffi::{CStr, CString};
use std::ptr;

use retrank_ffi::*;

fn last_error() -> String {
    let ptr = rr_last_error_message();
    if ptr.is_null() {
        return String::new();
    }
    unsafe { CStr::from_ptr(ptr) }.to_string_lossy().into_owned()
}

unsafe fn make_dataset() -> *mut RrDataset {
    let mut ds: *mut RrDataset = ptr::null_mut();
    let status = rr_dataset_synthetic(80, 40, 4, 6, 0.7, 0.0, 5, 2, 20, &mut ds);
    assert_eq!(status, RrStatus::Ok, "{}", last_error());
    assert!(!ds.is_null());
    ds
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(rr_version()) };
    assert!(!v.to_str().unwrap().is_empty());
}

#[test]
fn synthetic_train_evaluate_round_trip() {
    unsafe {
        let ds = make_dataset();
        assert_eq!(rr_dataset_num_users(ds), 80);
        assert!(rr_dataset_num_items(ds) <= 40);
        assert!(rr_dataset_num_interactions(ds) >= 80 * 2);

        let config = CString::new(
            "trainer.epochs=1\ntrainer.dim=4\nsampler.pool_size=20\nsampler.num_samples=5\n\
             eval.cutoff=5\neval.retrieve_k=10\nseeds=3",
        )
        .unwrap();
        let mut retriever: *mut RrModel = ptr::null_mut();
        let mut ranker: *mut RrModel = ptr::null_mut();
        let status = rr_train(ds, config.as_ptr(), &mut retriever, &mut ranker);
        assert_eq!(status, RrStatus::Ok, "{}", last_error());
        assert_eq!(rr_model_kind(retriever), 0);
        assert_eq!(rr_model_kind(ranker), 1);
        assert_eq!(rr_model_num_items(retriever), rr_dataset_num_items(ds));

        let mut metrics = RrMetrics::default();
        let status = rr_evaluate(ds, retriever, ranker, 5, 10, true, &mut metrics);
        assert_eq!(status, RrStatus::Ok, "{}", last_error());
        assert_eq!(metrics.num_cases, 80);
        for v in [
            metrics.retriever_ndcg,
            metrics.ranker_ndcg,
            metrics.two_stage_ndcg,
            metrics.two_stage_recall,
            metrics.two_stage_mrr,
        ] {
            assert!(v.is_finite() && (0.0..=1.0).contains(&v));
        }

        // Checkpoint round trip through the ABI.
        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(
            dir.path().join("retriever.ckpt").to_str().unwrap().to_owned(),
        )
        .unwrap();
        assert_eq!(rr_model_save(retriever, path.as_ptr()), RrStatus::Ok);
        let mut re_loaded: *mut RrModel = ptr::null_mut();
        assert_eq!(rr_model_load(path.as_ptr(), &mut re_loaded), RrStatus::Ok);
        let mut metrics2 = RrMetrics::default();
        assert_eq!(
            rr_evaluate(ds, re_loaded, ranker, 5, 10, true, &mut metrics2),
            RrStatus::Ok
        );
        assert_eq!(metrics.retriever_ndcg, metrics2.retriever_ndcg);

        rr_model_free(retriever);
        rr_model_free(ranker);
        rr_model_free(re_loaded);
        rr_dataset_free(ds);
    }
}

#[test]
fn training_accepts_independent_modes() {
    unsafe {
        let ds = make_dataset();
        let config = CString::new(
            "trainer.mode=independent_both\ntrainer.epochs=1\ntrainer.dim=4\n\
             sampler.pool_size=20\nsampler.num_samples=5\neval.cutoff=5\neval.retrieve_k=10",
        )
        .unwrap();
        let mut retriever: *mut RrModel = ptr::null_mut();
        let mut ranker: *mut RrModel = ptr::null_mut();
        assert_eq!(
            rr_train(ds, config.as_ptr(), &mut retriever, &mut ranker),
            RrStatus::Ok,
            "{}",
            last_error()
        );
        rr_model_free(retriever);
        rr_model_free(ranker);
        rr_dataset_free(ds);
    }
}

#[test]
fn null_and_bad_arguments_produce_status_codes_and_messages() {
    unsafe {
        let mut out: *mut RrDataset = ptr::null_mut();
        assert_eq!(
            rr_dataset_ingest(ptr::null(), 5, 20, &mut out),
            RrStatus::NullArgument
        );
        assert!(!last_error().is_empty());

        let missing = CString::new("/definitely/not/here.tsv").unwrap();
        assert_eq!(
            rr_dataset_ingest(missing.as_ptr(), 5, 20, &mut out),
            RrStatus::Io
        );

        // Over-filtering empties the dataset.
        let mut ds: *mut RrDataset = ptr::null_mut();
        let status = rr_dataset_synthetic(5, 5, 2, 3, 0.7, 0.0, 9, 1000, 20, &mut ds);
        assert_eq!(status, RrStatus::Data);
        assert!(last_error().contains("empty"));

        // Bad config key.
        let real = make_dataset();
        let bad = CString::new("trainer.nope=1").unwrap();
        let mut r: *mut RrModel = ptr::null_mut();
        let mut k: *mut RrModel = ptr::null_mut();
        assert_eq!(
            rr_train(real, bad.as_ptr(), &mut r, &mut k),
            RrStatus::InvalidArgument
        );
        assert!(last_error().contains("trainer.nope"));

        // Invalid evaluation shape.
        let mut metrics = RrMetrics::default();
        assert_eq!(
            rr_evaluate(real, ptr::null(), ptr::null(), 5, 10, true, &mut metrics),
            RrStatus::NullArgument
        );
        rr_dataset_free(real);

        // Numeric helpers.
        assert_eq!(
            rr_sampled_kl(ptr::null(), ptr::null(), 3, &mut 0.0),
            RrStatus::NullArgument
        );
        let xs = [0.0f64, 1.0];
        let mut kl = -1.0;
        assert_eq!(rr_sampled_kl(xs.as_ptr(), xs.as_ptr(), 2, &mut kl), RrStatus::Ok);
        assert_eq!(kl, 0.0);
    }
}

#[test]
fn numeric_primitives_match_the_core_library() {
    unsafe {
        let samples = [0.3f64, -0.7, 1.1];
        let got = rr_sampled_log_softmax(0.5, samples.as_ptr(), samples.len());
        let want = retrank::estimators::sampled_log_softmax(0.5, &samples);
        assert_eq!(got, want);
        assert_eq!(rr_sampled_log_softmax(0.5, ptr::null(), 0), 0.0);

        let p = [0.0f64, (3.0f64).ln()];
        let q = [0.0f64, 0.0];
        let mut kl = 0.0;
        assert_eq!(rr_sampled_kl(p.as_ptr(), q.as_ptr(), 2, &mut kl), RrStatus::Ok);
        assert!((kl - 0.130812).abs() < 1e-6);

        let mut ekl = 0.0;
        assert_eq!(rr_entropy_form_kl(p.as_ptr(), 2, &mut ekl), RrStatus::Ok);
        assert!((ekl - kl).abs() < 1e-12);
    }
}

/// Compile and link a small C program against the generated header and the
/// built static library, then run it.
#[test]
fn c_header_compiles_and_links() {
    let manifest = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let include_dir = manifest.join("include");
    assert!(include_dir.join("retrank.h").exists(), "header not generated");

    // target/<profile>/ is two levels above the test executable in deps/.
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    let static_lib = profile_dir.join("libretrank_ffi.a");
    assert!(
        static_lib.exists(),
        "static library missing at {}",
        static_lib.display()
    );

    let dir = tempfile::tempdir().unwrap();
    let c_file = dir.path().join("smoke.c");
    std::fs::write(
        &c_file,
        r#"
#include <retrank.h>
#include <stdio.h>

int main(void) {
    RrDataset *ds = NULL;
    if (rr_dataset_synthetic(40, 20, 4, 5, 0.7, 0.0, 2, 2, 20, &ds) != RR_STATUS_OK) {
        fprintf(stderr, "synth: %s\n", rr_last_error_message());
        return 1;
    }
    if (rr_dataset_num_users(ds) != 40) return 2;

    const char *cfg =
        "trainer.epochs=1\ntrainer.dim=4\nsampler.pool_size=10\n"
        "sampler.num_samples=4\neval.cutoff=5\neval.retrieve_k=10";
    RrModel *retriever = NULL, *ranker = NULL;
    if (rr_train(ds, cfg, &retriever, &ranker) != RR_STATUS_OK) {
        fprintf(stderr, "train: %s\n", rr_last_error_message());
        return 3;
    }
    RrMetrics metrics;
    if (rr_evaluate(ds, retriever, ranker, 5, 10, true, &metrics) != RR_STATUS_OK) {
        return 4;
    }
    if (!(metrics.two_stage_ndcg >= 0.0 && metrics.two_stage_ndcg <= 1.0)) return 5;

    double samples[3] = {0.1, 0.2, 0.3};
    double v = rr_sampled_log_softmax(0.2, samples, 3);
    if (!(v <= 0.0)) return 6;

    rr_model_free(retriever);
    rr_model_free(ranker);
    rr_dataset_free(ds);
    printf("ok\n");
    return 0;
}
"#,
    )
    .unwrap();

    let binary = dir.path().join("smoke");
    let compile = std::process::Command::new("cc")
        .arg(&c_file)
        .arg("-I")
        .arg(&include_dir)
        .arg(static_lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&binary)
        .output()
        .expect("cc is available");
    assert!(
        compile.status.success(),
        "cc failed:\n{}",
        String::from_utf8_lossy(&compile.stderr)
    );

    let run = std::process::Command::new(&binary).output().unwrap();
    assert!(
        run.status.success(),
        "smoke binary exited {:?}: {}",
        run.status.code(),
        String::from_utf8_lossy(&run.stderr)
    );
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
