//! Four-parameter Iwan element: a parallel array of elastic-perfectly-plastic
//! sliders whose slip strengths follow a truncated power-law distribution
//! plus an optional concentrated population at the largest strength.

use super::{ElementError, ElementSpec, HystereticElement};

/// Discrete four-parameter Iwan element.
///
/// The slider strength density is
/// `rho(phi) = R phi^chi + S delta(phi - phi_max)` with
/// `R = F_s (chi+1) / (phi_max^(chi+2) (beta + (chi+1)/(chi+2)))` and
/// `S = F_s beta / (phi_max (beta + (chi+1)/(chi+2)))`, and all sliders slip
/// once the displacement reaches
/// `phi_max = F_s (1+beta) / (k_t (beta + (chi+1)/(chi+2)))`.
///
/// The continuum part is discretized with breakpoints at the midpoints of
/// `n_sliders` uniform intervals of `(0, phi_max]`, each weighted by the exact
/// integral of `R phi^chi` over its interval; the delta term becomes one extra
/// slider of weight `S` at `phi_max`. This keeps the stuck tangent stiffness
/// exactly `k_t` and the total slip force within O(1/n^2) of `F_s`.
#[derive(Debug, Clone)]
pub struct IwanElement {
    k_t: f64,
    f_s: f64,
    chi: f64,
    beta: f64,
    n_sliders: usize,
    phi_max: f64,
    /// slip strength per slider (displacement units), strictly increasing
    breakpoints: Vec<f64>,
    /// stiffness-like weight per slider (N per unit slider force)
    weights: Vec<f64>,
    history: Option<History>,
}

#[derive(Debug, Clone)]
struct History {
    x_prev: f64,
    /// periodic grid index passed to the most recent `step`
    sample_now: usize,
    /// per-slider force in displacement units (`f_phi` of the stick/slip law)
    slider_force: Vec<f64>,
    /// periodic grid index of the last slip, `None` while stuck since init
    last_slip: Vec<Option<usize>>,
    /// whether the slider is slipped at the current instant
    slipped_now: Vec<bool>,
}

impl IwanElement {
    pub fn new(
        k_t: f64,
        f_s: f64,
        chi: f64,
        beta: f64,
        n_sliders: usize,
    ) -> Result<Self, ElementError> {
        if chi <= -1.0 {
            return Err(ElementError::NonIntegrableDistribution(chi));
        }
        if !(k_t > 0.0) {
            return Err(ElementError::NonPositiveParameter {
                name: "k_t",
                value: k_t,
            });
        }
        if !(f_s > 0.0) {
            return Err(ElementError::NonPositiveParameter {
                name: "f_s",
                value: f_s,
            });
        }
        if beta < 0.0 {
            return Err(ElementError::NegativeBeta(beta));
        }
        if n_sliders == 0 {
            return Err(ElementError::NoSliders);
        }

        let shape = beta + (chi + 1.0) / (chi + 2.0);
        let phi_max = f_s * (1.0 + beta) / (k_t * shape);
        let coeff_r = f_s * (chi + 1.0) / (phi_max.powf(chi + 2.0) * shape);
        let delta_weight = f_s * beta / (phi_max * shape);

        let dx = phi_max / n_sliders as f64;
        let mut breakpoints = Vec::with_capacity(n_sliders + 1);
        let mut weights = Vec::with_capacity(n_sliders + 1);
        for i in 0..n_sliders {
            let lo = i as f64 * dx;
            let hi = lo + dx;
            breakpoints.push(0.5 * (lo + hi));
            // exact integral of R phi^chi over (lo, hi]
            weights.push(coeff_r * (hi.powf(chi + 1.0) - lo.powf(chi + 1.0)) / (chi + 1.0));
        }
        if delta_weight > 0.0 {
            breakpoints.push(phi_max);
            weights.push(delta_weight);
        }

        Ok(Self {
            k_t,
            f_s,
            chi,
            beta,
            n_sliders,
            phi_max,
            breakpoints,
            weights,
            history: None,
        })
    }

    pub fn phi_max(&self) -> f64 {
        self.phi_max
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Total force the discretization can carry with all sliders slipped.
    pub fn discrete_slip_force(&self) -> f64 {
        self.breakpoints
            .iter()
            .zip(&self.weights)
            .map(|(phi, w)| phi * w)
            .sum()
    }
}

impl HystereticElement for IwanElement {
    fn kind(&self) -> &'static str {
        "iwan"
    }

    fn stuck_stiffness(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn monotone_force(&self, u: f64) -> (f64, f64) {
        let mut force = 0.0;
        let mut tangent = 0.0;
        for (phi, w) in self.breakpoints.iter().zip(&self.weights) {
            if u.abs() < *phi {
                force += w * u;
                tangent += w;
            } else {
                force += w * phi * u.signum();
            }
        }
        (force, tangent)
    }

    fn init_history(&mut self, x_static: f64) {
        let n = self.breakpoints.len();
        self.history = Some(History {
            x_prev: x_static,
            sample_now: 0,
            slider_force: vec![0.0; n],
            last_slip: vec![None; n],
            slipped_now: vec![false; n],
        });
    }

    fn step(&mut self, u: f64, sample: usize) -> Result<f64, ElementError> {
        let hist = self
            .history
            .as_mut()
            .ok_or(ElementError::UninitializedHistory)?;
        let du = u - hist.x_prev;
        let mut total = 0.0;
        for (k, phi) in self.breakpoints.iter().enumerate() {
            let stuck = hist.slider_force[k] + du;
            if stuck.abs() < *phi {
                hist.slider_force[k] = stuck;
                hist.slipped_now[k] = false;
            } else {
                hist.slider_force[k] = phi * stuck.signum();
                hist.last_slip[k] = Some(sample);
                hist.slipped_now[k] = true;
            }
            total += self.weights[k] * hist.slider_force[k];
        }
        hist.x_prev = u;
        hist.sample_now = sample;
        Ok(total)
    }

    fn grad_of_last_step(&self, out: &mut Vec<(usize, f64)>) {
        let hist = self.history.as_ref().expect("history initialized");
        // While stuck since its last slip at sample s, a slider force
        // telescopes to f = const + u_now - u_s, so its derivative is
        // e_now - e_s (just e_now when stuck since init); slipped sliders
        // sit at +-phi with zero derivative.
        let mut diag = 0.0;
        for k in 0..self.breakpoints.len() {
            if hist.slipped_now[k] {
                continue;
            }
            diag += self.weights[k];
            if let Some(s) = hist.last_slip[k] {
                out.push((s, -self.weights[k]));
            }
        }
        if diag != 0.0 {
            out.push((hist.sample_now, diag));
        }
    }

    fn state_fingerprint(&self, out: &mut Vec<f64>) {
        if let Some(hist) = &self.history {
            out.extend_from_slice(&hist.slider_force);
        }
    }

    fn clone_box(&self) -> Box<dyn HystereticElement> {
        Box::new(self.clone())
    }

    fn spec(&self) -> ElementSpec {
        ElementSpec::Iwan {
            k_t: self.k_t,
            f_s: self.f_s,
            chi: self.chi,
            beta: self.beta,
            n_sliders: self.n_sliders,
        }
    }
}
