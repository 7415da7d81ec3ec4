use std::ffi::{CStr, CString};
use std::ptr;

use adopt_ffi::*;

fn last_error() -> String {
    let p = adopt_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// v(S) = sum of w_i over S, plus 6 when steps 0 and 1 are both present.
/// The additive part contributes w_i to each step and the pairwise bonus
/// splits evenly between its two members, so phi = (1+3, 2+3, 3).
fn pair_bonus_game(mask: u64) -> f64 {
    let w = [1.0, 2.0, 3.0];
    let additive: f64 = (0..3).filter(|i| mask >> i & 1 == 1).map(|i| w[i]).sum();
    additive + if mask & 0b011 == 0b011 { 6.0 } else { 0.0 }
}

#[test]
fn exact_shapley_matches_axioms() {
    let values: Vec<f64> = (0..8).map(pair_bonus_game).collect();
    let mut phi = [0.0; 3];
    let status = unsafe { adopt_exact_shapley(values.as_ptr(), 3, phi.as_mut_ptr()) };
    assert_eq!(status, AdoptStatus::Ok);
    for (got, want) in phi.iter().zip([4.0, 5.0, 3.0]) {
        assert!((got - want).abs() < 1e-12, "{phi:?}");
    }
}

#[test]
fn kernel_shap_on_full_table_agrees_with_exact() {
    let set = adopt_sample_set_new(3);
    assert!(!set.is_null());
    for mask in 0..8 {
        assert_eq!(
            unsafe { adopt_sample_set_push(set, mask, pair_bonus_game(mask)) },
            AdoptStatus::Ok
        );
    }
    assert_eq!(unsafe { adopt_sample_set_len(set) }, 8);
    let mut phi = [0.0; 3];
    assert_eq!(
        unsafe { adopt_kernel_shap(set, phi.as_mut_ptr()) },
        AdoptStatus::Ok
    );
    for (got, want) in phi.iter().zip([4.0, 5.0, 3.0]) {
        assert!((got - want).abs() < 1e-6, "{phi:?}");
    }
    unsafe { adopt_sample_set_free(set) };
}

#[test]
fn sample_set_rejects_bad_input() {
    assert!(adopt_sample_set_new(0).is_null());
    let set = adopt_sample_set_new(2);
    assert_eq!(
        unsafe { adopt_sample_set_push(set, 0b100, 1.0) },
        AdoptStatus::InvalidArgument
    );
    assert!(last_error().contains("beyond 2 steps"));
    assert_eq!(
        unsafe { adopt_sample_set_push(set, 0b01, f64::NAN) },
        AdoptStatus::Domain
    );
    assert_eq!(
        unsafe { adopt_sample_set_push(ptr::null_mut(), 0, 1.0) },
        AdoptStatus::NullPointer
    );
    unsafe { adopt_sample_set_free(set) };
    unsafe { adopt_sample_set_free(ptr::null_mut()) };
}

#[test]
fn shapley_weight_and_errors() {
    let mut w = 0.0;
    // 1! * 1! / 3! for a size-1 coalition among three players.
    assert_eq!(unsafe { adopt_shapley_weight(1, 3, &mut w) }, AdoptStatus::Ok);
    assert!((w - 1.0 / 6.0).abs() < 1e-15);
    assert_eq!(unsafe { adopt_shapley_weight(3, 3, &mut w) }, AdoptStatus::Domain);
    assert_eq!(
        unsafe { adopt_shapley_weight(0, 1, ptr::null_mut()) },
        AdoptStatus::NullPointer
    );
}

#[test]
fn allocation_through_the_abi() {
    let phi = [0.2, 0.1, 0.1];
    let mut out = [0usize; 3];
    assert_eq!(
        unsafe { adopt_allocate_budgets(phi.as_ptr(), 3, 8, 1, out.as_mut_ptr()) },
        AdoptStatus::Ok
    );
    assert_eq!(out, [4, 2, 2]);
    assert_eq!(
        unsafe { adopt_allocate_budgets(phi.as_ptr(), 3, 2, 1, out.as_mut_ptr()) },
        AdoptStatus::InfeasibleBudget
    );
    assert_eq!(out, [4, 2, 2], "outputs untouched on failure");
}

#[test]
fn metric_scores() {
    let em = CString::new("exact_match").unwrap();
    let f1 = CString::new("token_f1").unwrap();
    let pred = CString::new("the Eiffel Tower").unwrap();
    let label = CString::new("Eiffel Tower").unwrap();
    let mut s = 0.0;
    assert_eq!(
        unsafe { adopt_metric_score(em.as_ptr(), pred.as_ptr(), label.as_ptr(), &mut s) },
        AdoptStatus::Ok
    );
    assert_eq!(s, 0.0);
    assert_eq!(
        unsafe { adopt_metric_score(f1.as_ptr(), pred.as_ptr(), label.as_ptr(), &mut s) },
        AdoptStatus::Ok
    );
    // precision 2/3, recall 1
    assert!((s - 0.8).abs() < 1e-12);
    let bogus = CString::new("bleu").unwrap();
    assert_eq!(
        unsafe { adopt_metric_score(bogus.as_ptr(), pred.as_ptr(), label.as_ptr(), &mut s) },
        AdoptStatus::InvalidArgument
    );
    assert!(last_error().contains("bleu"));
}

#[test]
fn simulation_is_deterministic() {
    let policy = CString::new("shapley").unwrap();
    let (mut m1, mut s1, mut m2, mut s2) = (0.0, 0.0, 0.0, 0.0);
    assert_eq!(
        unsafe { adopt_simulate_allocation(policy.as_ptr(), 3, 10, 5, &mut m1, &mut s1) },
        AdoptStatus::Ok
    );
    assert_eq!(
        unsafe { adopt_simulate_allocation(policy.as_ptr(), 3, 10, 5, &mut m2, &mut s2) },
        AdoptStatus::Ok
    );
    assert_eq!((m1, s1), (m2, s2));
    assert!(m1 > 0.0);
    let bad = CString::new("greedy").unwrap();
    assert_eq!(
        unsafe { adopt_simulate_allocation(bad.as_ptr(), 3, 10, 5, &mut m1, &mut s1) },
        AdoptStatus::InvalidArgument
    );
}

#[test]
fn request_digest_round_trip() {
    let json = CString::new(
        r#"{"model_ref":"m","messages":[{"role":"system","content":"s"},{"role":"user","content":"hello"}],"temperature":0.0,"top_p":1.0,"seed":7}"#,
    )
    .unwrap();
    let mut out: *mut std::ffi::c_char = ptr::null_mut();
    assert_eq!(
        unsafe { adopt_request_digest(json.as_ptr(), &mut out) },
        AdoptStatus::Ok
    );
    let digest = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_string();
    unsafe { adopt_string_free(out) };
    // SHA-256 of the sorted-key compact JSON of the same request.
    assert_eq!(
        digest,
        "0f392488ccef7d2b996a407f94858cb59d72653655ad17d31813fcd6eee8ed40"
    );
    let broken = CString::new("{not json").unwrap();
    assert_eq!(
        unsafe { adopt_request_digest(broken.as_ptr(), &mut out) },
        AdoptStatus::InvalidArgument
    );
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/adopt.h");
    for name in [
        "adopt_last_error",
        "adopt_string_free",
        "adopt_sample_set_new",
        "adopt_sample_set_push",
        "adopt_sample_set_len",
        "adopt_sample_set_free",
        "adopt_kernel_shap",
        "adopt_exact_shapley",
        "adopt_shapley_weight",
        "adopt_allocate_budgets",
        "adopt_metric_score",
        "adopt_simulate_allocation",
        "adopt_request_digest",
        "ADOPT_STATUS_INFEASIBLE_BUDGET",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
