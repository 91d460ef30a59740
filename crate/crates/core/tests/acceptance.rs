use std::process::ExitCode;
use std::time::Instant;

use grushin_mfg::verify::{run_all, run_criterion, VerifyMode, VerifyOptions, VerifyReport, CRITERIA};

fn quick_manifest() -> (VerifyReport, String) {
    let report = run_all(&VerifyOptions::new(VerifyMode::Quick), |_, _| {});
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    (report, text)
}

fn main() -> ExitCode {
    let full = VerifyOptions::new(VerifyMode::Full);
    let mut all_passed = true;
    for (id, _) in CRITERIA {
        let start = Instant::now();
        let r = run_criterion(id, &full);
        println!("{} [{:.1} s]", r.summary(), start.elapsed().as_secs_f64());
        all_passed &= r.passed;
    }

    let start = Instant::now();
    let (first, first_text) = quick_manifest();
    let (second, second_text) = quick_manifest();
    let identical = first_text.as_bytes() == second_text.as_bytes();
    let passed = first.passed() && second.passed() && identical;
    println!(
        "{} 11 end-to-end determinism: quick battery passed {}/{}, serialized reports bit-identical {} [{:.1} s]",
        if passed { "PASS" } else { "FAIL" },
        [first.passed(), second.passed()].iter().filter(|p| **p).count(),
        2,
        identical,
        start.elapsed().as_secs_f64()
    );
    all_passed &= passed;

    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
