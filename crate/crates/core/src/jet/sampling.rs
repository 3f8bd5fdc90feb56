use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{JetDims, JetError, JetPoint};

/// An axis-aligned box of jet points for seeded random sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct JetBox {
    pub dims: JetDims,
    pub t: Vec<(f64, f64)>,
    pub x: Vec<(f64, f64)>,
    /// Common range for every partial velocity.
    pub v: (f64, f64),
}

impl JetBox {
    pub fn new(dims: JetDims, t: Vec<(f64, f64)>, x: Vec<(f64, f64)>, v: (f64, f64)) -> Result<Self, JetError> {
        if t.len() != dims.p || x.len() != dims.n {
            return Err(JetError::Dimension("sampling box does not match dims".into()));
        }
        Ok(JetBox { dims, t, x, v })
    }

    /// `count` points drawn uniformly from the box; deterministic in `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<JetPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..hi) } else { lo };
        (0..count)
            .map(|_| {
                let t = self.t.iter().map(|&r| draw(r)).collect();
                let x = self.x.iter().map(|&r| draw(r)).collect();
                let v = (0..self.dims.fiber_len()).map(|_| draw(self.v)).collect();
                JetPoint::new(self.dims, t, x, v).expect("box ranges are finite")
            })
            .collect()
    }
}
