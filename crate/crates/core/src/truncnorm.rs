//! One-sided truncated normal draws.
//!
//! For a truncation point `a <= 0` plain normal rejection accepts at least half
//! of the proposals. For `a > 0` the translated-exponential proposal of Robert
//! (1995) with rate `(a + sqrt(a^2 + 4)) / 2` is used; its acceptance rate stays
//! above 0.75 for every `a`, so far tails cannot stall the sampler.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

/// `X ~ Normal(0, 1)` conditioned on `X > a`.
pub fn standard_above<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a <= 0.0 {
        loop {
            let x: f64 = rng.sample(StandardNormal);
            if x > a {
                return x;
            }
        }
    }
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = rng.sample(Exp1);
        let x = a + e / rate;
        if x <= a {
            continue;
        }
        let u: f64 = rng.random();
        let d = x - rate;
        if u <= (-0.5 * d * d).exp() {
            return x;
        }
    }
}

/// `z ~ Normal(mean, 1)` conditioned on `z > 0`.
pub fn positive<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    loop {
        let z = mean + standard_above(-mean, rng);
        // Guards against rounding back onto the boundary when |mean| is huge.
        if z > 0.0 {
            return z;
        }
    }
}

/// `z ~ Normal(mean, 1)` conditioned on `z <= 0`.
pub fn non_positive<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    loop {
        let z = mean - standard_above(mean, rng);
        if z <= 0.0 {
            return z;
        }
    }
}

/// Draw on the side of zero selected by the outcome.
pub fn given_outcome<R: Rng + ?Sized>(mean: f64, outcome: bool, rng: &mut R) -> f64 {
    if outcome {
        positive(mean, rng)
    } else {
        non_positive(mean, rng)
    }
}
