//! One-step maps for the weak first-order (Euler–Maruyama) and weak
//! second-order (Itô–Taylor) schemes.
//!
//! Both steps take the full set of per-step inputs (state, Gaussian
//! increments, and for the second-order scheme the auxiliary sign matrix V),
//! advance the state in place, and wrap once onto `[0, 1)^d` after the full
//! increment — fields are periodic, so a single wrap changes nothing
//! mathematically and avoids intermediate truncation.
//!
//! The second-order scheme is implemented in the two shapes the model
//! supports.  In one dimension with scalar diffusion,
//!
//! ```text
//! x' = x + b h + s dw + (Ls + Kb) h dw / 2 + Ks (dw^2 + V) / 2 + Lb h^2 / 2
//! ```
//!
//! with `Kb = s b'`, `Ks = s s'`, `Ls = b s' + s^2 s'' / 2`,
//! `Lb = b b' + s^2 b'' / 2`, and `V = -h` deterministically.  In dimension
//! `d >= 2` the diffusion is a constant matrix, so every term containing a
//! derivative of sigma vanishes identically and is statically dropped:
//!
//! ```text
//! x'^i = x^i + b^i h + sum_k s^{ik} dw^k
//!        + h/2 sum_k (K^k b^i) dw^k + Lb^i h^2 / 2
//! ```
//!
//! with `K^k b^i = sum_j s^{jk} d_j b^i` and
//! `Lb^i = b . grad b^i + (s s^T) : grad^2 b^i / 2`.  The V matrix does not
//! enter in this case (its coefficient `K s` is identically zero), which is
//! why the integrator never draws it for constant diffusion.

use crate::model::{Diffusion, Problem};
use crate::scalar::Real;
use crate::torus;

/// Time-stepping scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Euler–Maruyama, weak order 1.
    Em,
    /// Second-order Itô–Taylor, weak order 2.
    It2,
}

impl Scheme {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "em" => Some(Scheme::Em),
            "it2" => Some(Scheme::It2),
            _ => None,
        }
    }
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Em => "em",
            Scheme::It2 => "it2",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reusable buffers so the hot loop performs no allocation.
pub struct StepScratch<T: Real> {
    b: Vec<T>,
    grad: Vec<T>,
    hess: Vec<T>,
    sig: Vec<T>,
}

impl<T: Real> StepScratch<T> {
    pub fn new(dim: usize) -> Self {
        StepScratch {
            b: vec![T::zero(); dim],
            grad: vec![T::zero(); dim * dim],
            hess: vec![T::zero(); dim * dim * dim],
            sig: vec![T::zero(); dim * dim],
        }
    }
}

/// Euler–Maruyama step: `x' = wrap(x + b(x) h + sigma(x) dw)`.
#[inline]
pub fn em_step<T: Real>(
    p: &Problem<T>,
    x: &mut [T],
    h: T,
    dw: &[T],
    scratch: &mut StepScratch<T>,
) {
    let d = p.dim;
    (p.drift)(x, &mut scratch.b);
    match &p.diffusion {
        Diffusion::Scalar1d { sigma, .. } => {
            x[0] += scratch.b[0] * h + sigma(x[0]) * dw[0];
        }
        Diffusion::ConstMatrix { sigma, .. } => {
            for i in 0..d {
                let mut noise = T::zero();
                for k in 0..d {
                    noise += sigma[i * d + k] * dw[k];
                }
                x[i] += scratch.b[i] * h + noise;
            }
        }
    }
    torus::wrap_in_place(x);
}

/// Values and derived operator quantities of the 1D coefficients at a point,
/// as consumed by the second-order scheme and the weight-process updates.
#[derive(Debug, Clone, Copy)]
pub struct Coeffs1d<T: Real> {
    pub b: T,
    pub db: T,
    pub d2b: T,
    pub sigma: T,
    pub dsigma: T,
    pub d2sigma: T,
}

impl<T: Real> Coeffs1d<T> {
    /// `K b = sigma b'`.
    #[inline]
    pub fn kb(&self) -> T {
        self.sigma * self.db
    }
    /// `L b = b b' + sigma^2 b'' / 2`.
    #[inline]
    pub fn lb(&self) -> T {
        self.b * self.db + T::of(0.5) * self.sigma * self.sigma * self.d2b
    }
    /// `K sigma = sigma sigma'`.
    #[inline]
    pub fn ksigma(&self) -> T {
        self.sigma * self.dsigma
    }
    /// `L sigma = b sigma' + sigma^2 sigma'' / 2`.
    #[inline]
    pub fn lsigma(&self) -> T {
        self.b * self.dsigma + T::of(0.5) * self.sigma * self.sigma * self.d2sigma
    }
}

/// Evaluate the 1D coefficient bundle at `x`.  Panics if the problem is not
/// one-dimensional with scalar diffusion.
#[inline]
pub fn coeffs_1d<T: Real>(p: &Problem<T>, x: T) -> Coeffs1d<T> {
    debug_assert_eq!(p.dim, 1);
    let xs = [x];
    let mut b = [T::zero()];
    let mut db = [T::zero()];
    let mut d2b = [T::zero()];
    (p.drift)(&xs, &mut b);
    (p.drift_grad)(&xs, &mut db);
    (p.drift_hess)(&xs, &mut d2b);
    let (sigma, dsigma, d2sigma) = p.sigma_1d(x);
    Coeffs1d {
        b: b[0],
        db: db[0],
        d2b: d2b[0],
        sigma,
        dsigma,
        d2sigma,
    }
}

/// Fill `out[i*d + k] = K^k b^i = sum_j sigma^{jk} d_j b^i` (constant-matrix
/// diffusion, any dimension).
pub fn kb_matrix<T: Real>(p: &Problem<T>, x: &[T], out: &mut [T]) {
    let d = p.dim;
    let mut grad = vec![T::zero(); d * d];
    (p.drift_grad)(x, &mut grad);
    let mut sig = vec![T::zero(); d * d];
    p.diffusion.fill_sigma(x, &mut sig);
    for i in 0..d {
        for k in 0..d {
            let mut acc = T::zero();
            for j in 0..d {
                acc += sig[j * d + k] * grad[i * d + j];
            }
            out[i * d + k] = acc;
        }
    }
}

/// Fill `out[i] = L b^i = b . grad b^i + (sigma sigma^T) : grad^2 b^i / 2`.
pub fn lb_vector<T: Real>(p: &Problem<T>, x: &[T], out: &mut [T]) {
    let d = p.dim;
    let mut b = vec![T::zero(); d];
    let mut grad = vec![T::zero(); d * d];
    let mut hess = vec![T::zero(); d * d * d];
    let mut sig = vec![T::zero(); d * d];
    (p.drift)(x, &mut b);
    (p.drift_grad)(x, &mut grad);
    (p.drift_hess)(x, &mut hess);
    p.diffusion.fill_sigma(x, &mut sig);
    let half = T::of(0.5);
    for i in 0..d {
        let mut acc = T::zero();
        for j in 0..d {
            acc += b[j] * grad[i * d + j];
        }
        let mut quad = T::zero();
        for j in 0..d {
            for l in 0..d {
                // a^{jl} = sum_k sigma^{jk} sigma^{lk}
                let mut a = T::zero();
                for k in 0..d {
                    a += sig[j * d + k] * sig[l * d + k];
                }
                quad += a * hess[(i * d + j) * d + l];
            }
        }
        out[i] = acc + half * quad;
    }
}

/// Second-order Itô–Taylor step.
///
/// `v` is the auxiliary matrix of the step: for 1D scalar diffusion pass the
/// single (deterministic) entry `[-h]`; for constant-matrix diffusion the
/// argument is ignored (the term multiplying V vanishes identically) and may
/// be empty.
#[inline]
pub fn it2_step<T: Real>(
    p: &Problem<T>,
    x: &mut [T],
    h: T,
    dw: &[T],
    v: &[T],
    scratch: &mut StepScratch<T>,
) {
    let d = p.dim;
    let half = T::of(0.5);
    match &p.diffusion {
        Diffusion::Scalar1d { .. } => {
            let c = coeffs_1d(p, x[0]);
            let w = dw[0];
            let v11 = v[0];
            x[0] += c.b * h
                + c.sigma * w
                + half * (c.lsigma() + c.kb()) * h * w
                + half * c.ksigma() * (w * w + v11)
                + half * c.lb() * h * h;
        }
        Diffusion::ConstMatrix { sigma, .. } => {
            (p.drift)(x, &mut scratch.b);
            (p.drift_grad)(x, &mut scratch.grad);
            (p.drift_hess)(x, &mut scratch.hess);
            let grad = &scratch.grad;
            let hess = &scratch.hess;
            let b = &scratch.b;
            // increments accumulated before touching x (b, grad, hess were
            // evaluated at the pre-step state; x must not move under them)
            for i in 0..d {
                let mut inc = b[i] * h;
                for k in 0..d {
                    // noise + drift-gradient correction, sharing sum over k
                    let mut kbik = T::zero();
                    for j in 0..d {
                        kbik += sigma[j * d + k] * grad[i * d + j];
                    }
                    inc += (sigma[i * d + k] + half * h * kbik) * dw[k];
                }
                let mut lbi = T::zero();
                for j in 0..d {
                    lbi += b[j] * grad[i * d + j];
                }
                let mut quad = T::zero();
                for j in 0..d {
                    for l in 0..d {
                        let mut a = T::zero();
                        for k in 0..d {
                            a += sigma[j * d + k] * sigma[l * d + k];
                        }
                        quad += a * hess[(i * d + j) * d + l];
                    }
                }
                lbi += half * quad;
                inc += half * lbi * h * h;
                scratch.sig[i] = inc; // stash increment per coordinate
            }
            for i in 0..d {
                x[i] += scratch.sig[i];
            }
        }
    }
    torus::wrap_in_place(x);
}
