//! Memoryless linear spring, mainly useful for verifying the AFT path against
//! closed-form superposition.

use super::{ElementError, ElementSpec, HystereticElement};

#[derive(Debug, Clone)]
pub struct LinearSpring {
    k: f64,
    last_sample: usize,
    initialized: bool,
}

impl LinearSpring {
    pub fn new(k: f64) -> Self {
        Self {
            k,
            last_sample: 0,
            initialized: false,
        }
    }
}

impl HystereticElement for LinearSpring {
    fn kind(&self) -> &'static str {
        "linear-spring"
    }

    fn stuck_stiffness(&self) -> f64 {
        self.k
    }

    fn monotone_force(&self, u: f64) -> (f64, f64) {
        (self.k * u, self.k)
    }

    fn init_history(&mut self, _x_static: f64) {
        self.initialized = true;
    }

    fn step(&mut self, u: f64, sample: usize) -> Result<f64, ElementError> {
        if !self.initialized {
            return Err(ElementError::UninitializedHistory);
        }
        self.last_sample = sample;
        Ok(self.k * u)
    }

    fn grad_of_last_step(&self, out: &mut Vec<(usize, f64)>) {
        out.push((self.last_sample, self.k));
    }

    fn state_fingerprint(&self, _out: &mut Vec<f64>) {}

    fn clone_box(&self) -> Box<dyn HystereticElement> {
        Box::new(self.clone())
    }

    fn spec(&self) -> ElementSpec {
        ElementSpec::LinearSpring { k: self.k }
    }
}
