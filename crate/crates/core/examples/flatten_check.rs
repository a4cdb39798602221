use skill_loom_core::sim::{canonical_config, run_closed_loop};

fn main() {
    let t0 = std::time::Instant::now();
    let report = run_closed_loop(&canonical_config()).unwrap();
    for (policy, s) in &report.summary {
        println!(
            "{policy}: mean_final_std={:.5} mean_final_acc={:.5} win_rate={:?}",
            s.mean_final_std, s.mean_final_accuracy, s.win_rate
        );
    }
    println!("elapsed: {:?}", t0.elapsed());
}
