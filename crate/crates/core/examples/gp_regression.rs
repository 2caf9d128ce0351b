//! Exact GP regression on a noisy sine: posterior, leave-one-out scores and
//! the position potential whose derivative is the posterior mean.

use gpmix::gp::{GpHyperparams, GpModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> gpmix::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![-3.0 + 6.0 * i as f64 / 39.0]).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x[0].sin() + noise.sample(&mut rng)).collect();

    let hyper = GpHyperparams::new(1.0, 1.0, 0.01)?;
    let gp = GpModel::fit(&xs, &ys, hyper)?;

    println!("   x    mean    sd    sin(x)");
    for x in [-2.5, -1.0, 0.0, 0.7, 2.2, 4.0] {
        let p = gp.posterior(&[x])?;
        println!("{x:5.1} {:7.3} {:5.3} {:7.3}", p.mean, p.variance.sqrt(), x.sin());
    }

    println!("LOO log predictive {:.3}", gp.loo_log_predictive()?);
    let held = gp.held_out(10);
    println!(
        "sample 10 held out: y = {:.3}, predicted {:.3} ± {:.3}",
        ys[10],
        held.mean,
        held.variance.sqrt()
    );

    // The slice potential integrates the mean along the single coordinate.
    let h = 1e-5;
    let x = 0.4;
    let dp = (gp.slice_potential(&[0.0], 0, x + h)? - gp.slice_potential(&[0.0], 0, x - h)?) / (2.0 * h);
    println!("dP/dx at {x}: {dp:.6}, mean {:.6}", gp.mean(&[x])?);
    Ok(())
}
