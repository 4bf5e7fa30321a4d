//! Fit a kernel density to inter-arrival gaps and ask it about the future.

use asrm::predictor::{interarrival_quantile, predict_survival, KdeModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let gaps = Exp::new(1.0 / 250.0)?;
    let samples: Vec<f64> = (0..400).map(|_| gaps.sample(&mut rng)).collect();
    let model = KdeModel::with_silverman(samples)?;
    println!("bandwidth {:.2} ms", model.bandwidth());
    println!("q95 gap   {:.1} ms", interarrival_quantile(&model, 0.95)?);
    for elapsed in [0.0, 100.0, 500.0, 1500.0] {
        let f = predict_survival(&model, elapsed);
        println!("idle {elapsed:>6.0} ms -> next arrival expected at {:.1} ms", f.expected_next_arrival);
    }
    Ok(())
}
