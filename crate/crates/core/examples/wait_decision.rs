//! The wait-or-create rule: probability of waiting for a busy slot.

use asrm::domain::HistoryWindow;
use asrm::policy::{adaptive_timeout, wait_probability, AsrmConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = AsrmConfig::default();
    let mut history = HistoryWindow::new(64);
    for (gap, exec) in [(120.0, 80.0), (90.0, 110.0), (150.0, 60.0), (100.0, 95.0)] {
        history.push(gap, exec);
    }
    let t_star = adaptive_timeout(Some(&history), &cfg);
    println!("adaptive timeout t* = {t_star:.1} ms");

    for remaining in [50.0, 200.0, 800.0] {
        for competitors in [vec![], vec![0.3], vec![0.3, 0.6]] {
            let p = wait_probability(1.0 / t_star, remaining, &competitors)?;
            let choice = if p >= cfg.wait_threshold { "wait" } else { "create" };
            println!("remaining {remaining:>5} ms, competitors {competitors:?}: p = {p:.3} -> {choice}");
        }
    }
    Ok(())
}
