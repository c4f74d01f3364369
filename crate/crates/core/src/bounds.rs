//! Closed-form stability and fidelity bounds.
//!
//! Everything here is expressed through the symmetric functions
//! `Δ_{t,i} = e_{t-i}(B_1, ..., B_t)`: the sum over all `(t − i)`-element
//! subsets of the first `t` layer norm caps of their products. In particular
//! `Δ_{t,0} = ∏ B_j` and `Δ_{t,1} = Σ_i ∏_{j≠i} B_j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{spectral_norms, Activation, Network};

/// Elementary symmetric polynomials `[e_0, e_1, ..., e_t]` of `b`, built by
/// multiplying out `∏ (1 + B_j z)` one factor at a time.
pub fn elementary_symmetric(b: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; b.len() + 1];
    e[0] = 1.0;
    for (j, &bj) in b.iter().enumerate() {
        for r in (1..=j + 1).rev() {
            e[r] += bj * e[r - 1];
        }
    }
    e
}

/// `Δ_{t,i}` with `t = b.len()`.
pub fn delta(b: &[f64], i: usize) -> Result<f64> {
    let t = b.len();
    if i > t {
        return Err(Error::InvalidArgument(format!("Δ order {i} exceeds depth {t}")));
    }
    // Only e_0..e_{t-i} are needed; truncating the DP keeps it O(t·(t-i)).
    let order = t - i;
    let mut e = vec![0.0; order + 1];
    e[0] = 1.0;
    for (j, &bj) in b.iter().enumerate() {
        for r in (1..=order.min(j + 1)).rev() {
            e[r] += bj * e[r - 1];
        }
    }
    Ok(e[order])
}

/// Inputs to every bound: per-layer spectral caps `B_1..B_k`, input norm cap
/// `C`, input dimension `m`, and the Lipschitz constant of the loss in logit
/// space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormProfile {
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "C")]
    pub c: f64,
    pub m: usize,
    /// Cross-entropy is √2-Lipschitz in ℓ₂; the default 1 mirrors the
    /// accounting the bounds were derived under.
    pub loss_lip: f64,
    pub activation: Activation,
}

impl NormProfile {
    pub fn new(b: Vec<f64>, c: f64, m: usize) -> Result<Self> {
        let p = Self {
            b,
            c,
            m,
            loss_lip: 1.0,
            activation: Activation::Tanh,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_loss_lip(mut self, loss_lip: f64) -> Self {
        self.loss_lip = loss_lip;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Profile from measured spectral norms of `net`.
    pub fn from_network(net: &Network, c: f64) -> Result<Self> {
        let b = spectral_norms(net, 1e-10, 5000)?.into_iter().map(|e| e.value).collect();
        Ok(Self::new(b, c, net.input_dim())?.with_activation(net.activation()))
    }

    /// Per-layer maximum of several profiles; used when a bound must cover
    /// every network in a comparison.
    pub fn envelope(profiles: &[NormProfile]) -> Result<Self> {
        let first = profiles
            .first()
            .ok_or_else(|| Error::InvalidArgument("envelope of zero profiles".into()))?;
        let mut out = first.clone();
        for p in &profiles[1..] {
            if p.b.len() != out.b.len() {
                return Err(Error::DimensionMismatch {
                    context: "profile depth",
                    expected: out.b.len(),
                    got: p.b.len(),
                });
            }
            out.b.iter_mut().zip(&p.b).for_each(|(a, &b)| *a = a.max(b));
            out.c = out.c.max(p.c);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.b.is_empty() {
            return Err(Error::InvalidArgument("profile needs at least one layer".into()));
        }
        if self.b.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
            return Err(Error::InvalidArgument(format!("layer caps must be positive: {:?}", self.b)));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::InvalidArgument(format!("input cap must be positive, got {}", self.c)));
        }
        if !(self.loss_lip > 0.0) {
            return Err(Error::InvalidArgument("loss Lipschitz constant must be positive".into()));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.b.len()
    }

    /// `Δ_{t,i}` over the first `t` caps.
    pub fn delta(&self, t: usize, i: usize) -> f64 {
        delta(&self.b[..t], i).expect("order checked by caller")
    }

    pub fn delta_k0(&self) -> f64 {
        self.delta(self.depth(), 0)
    }

    pub fn delta_k1(&self) -> f64 {
        self.delta(self.depth(), 1)
    }

    /// `Σ_{i=1}^{k-1} Δ_{i,1}`
    pub fn prefix_delta1_sum(&self) -> f64 {
        (1..self.depth()).map(|i| self.delta(i, 1)).sum()
    }

    /// `Σ_{i=1}^{k-1} Δ_{i,0}`
    pub fn prefix_delta0_sum(&self) -> f64 {
        (1..self.depth()).map(|i| self.delta(i, 0)).sum()
    }

    /// `Λ = Δ_{k,0} Σ_{i=1}^{k-1} Δ_{i,0}`
    pub fn lambda(&self) -> f64 {
        self.delta_k0() * self.prefix_delta0_sum()
    }

    /// Depth-1 profiles make every `Σ_{i=1}^{k-1}` term vanish.
    pub fn is_degenerate(&self) -> bool {
        self.depth() == 1
    }

    /// `B_i ≥ 1` and `C ≥ 1`, required by the smoothness lemmas.
    pub fn meets_unit_floor(&self) -> bool {
        self.c >= 1.0 && self.b.iter().all(|&b| b >= 1.0)
    }

    fn require_nondegenerate(&self) -> Result<()> {
        if self.is_degenerate() {
            return Err(Error::Degenerate(
                "depth-1 profile: the saliency-loss Lipschitz constant collapses to 0".into(),
            ));
        }
        Ok(())
    }
}

/// `L = loss_lip · Δ_{k,1} · C`
pub fn lipschitz_bound(p: &NormProfile) -> f64 {
    p.loss_lip * p.delta_k1() * p.c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SmoothnessVariant {
    /// Parameter-noise SGD: the smoothed loss is `(L/κ)`-smooth.
    NoisySgd { kappa: f64 },
    /// Vanilla SGD with a 1-smooth activation and loss.
    VanillaSmoothActivation,
}

pub fn smoothness_bound(p: &NormProfile, variant: SmoothnessVariant) -> Result<f64> {
    match variant {
        SmoothnessVariant::NoisySgd { kappa } => {
            if !(kappa > 0.0) {
                return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
            }
            Ok(lipschitz_bound(p) / kappa)
        }
        SmoothnessVariant::VanillaSmoothActivation => {
            if !p.activation.is_smooth() {
                return Err(Error::InvalidArgument(format!(
                    "{:?} is not smooth; the vanilla smoothness bound does not apply",
                    p.activation
                )));
            }
            let k = p.depth() as f64;
            Ok((3.0 * k + 1.0) * (p.delta_k1() * p.c).powi(2))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Regime {
    NonConvex,
    /// Convex loss with `α_t ≤ 2/β`; carries `Σ_t α_t`.
    Convex { step_sum: f64 },
}

/// SGD run parameters that enter the stability bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdTerms {
    /// training-set size
    pub n: usize,
    /// iterations
    pub t: u64,
    /// step-size constant in `α_t = c/t`
    pub c: f64,
    pub beta: f64,
}

impl SgdTerms {
    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("stability bounds need n >= 2, got {}", self.n)));
        }
        if self.t < 1 || !(self.c > 0.0) || !(self.beta >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid SGD terms {self:?}")));
        }
        Ok(())
    }

    /// `1/(βc+1)` and `βc/(βc+1)`
    fn exponents(&self) -> (f64, f64) {
        let bc = self.beta * self.c;
        (1.0 / (bc + 1.0), bc / (bc + 1.0))
    }
}

/// Bound on the stability error of a saliency method whose loss is
/// `m_prime`-bounded and `l_prime`-Lipschitz in the weights, trained by SGD
/// on an `l`-Lipschitz loss.
///
/// Non-convex: `((1+βc)/(n−1)) (2cLL′)^{1/(βc+1)} (TM′)^{βc/(βc+1)}`.
/// Convex: `(2LL′/n) Σ α_t`.
pub fn generic_stability_bound(m_prime: f64, l_prime: f64, l: f64, terms: SgdTerms, regime: Regime) -> Result<f64> {
    terms.validate()?;
    Ok(match regime {
        Regime::NonConvex => {
            let (a, b) = terms.exponents();
            let bc = terms.beta * terms.c;
            (1.0 + bc) / (terms.n as f64 - 1.0)
                * (2.0 * terms.c * l * l_prime).powf(a)
                * (terms.t as f64 * m_prime).powf(b)
        }
        Regime::Convex { step_sum } => 2.0 * l * l_prime / terms.n as f64 * step_sum,
    })
}

/// `(M′, L′)` of the saliency loss for each method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConstants {
    pub m_prime: f64,
    pub l_prime: f64,
}

pub fn simplegrad_constants(p: &NormProfile) -> LossConstants {
    let d0 = p.delta_k0();
    LossConstants {
        m_prime: 2.0 * d0,
        l_prime: 2.0 * d0 * p.prefix_delta1_sum() * p.c,
    }
}

pub fn smoothgrad_constants(p: &NormProfile, sigma: f64) -> LossConstants {
    LossConstants {
        m_prime: 2.0 * p.delta_k0(),
        l_prime: p.c * p.delta_k1() / sigma,
    }
}

pub fn integratedgrad_constants(p: &NormProfile) -> LossConstants {
    let d0 = p.delta_k0();
    LossConstants {
        m_prime: 4.0 * d0 * p.c,
        l_prime: 4.0 * d0 * p.prefix_delta1_sum() * p.c * p.c,
    }
}

/// `Γ = (2Δ_{k,0} Σ Δ_{i,1} C)^{1/(βc+1)} (2Δ_{k,0})^{βc/(βc+1)}`
pub fn gamma(p: &NormProfile, terms: SgdTerms) -> f64 {
    let (a, b) = terms.exponents();
    let d0 = p.delta_k0();
    (2.0 * d0 * p.prefix_delta1_sum() * p.c).powf(a) * (2.0 * d0).powf(b)
}

/// `((1+βc)/(n−1)) (2cL)^{1/(βc+1)} T^{βc/(βc+1)} Γ`
pub fn simplegrad_stability_bound(p: &NormProfile, terms: SgdTerms) -> Result<f64> {
    terms.validate()?;
    p.require_nondegenerate()?;
    let (a, b) = terms.exponents();
    let l = lipschitz_bound(p);
    Ok((1.0 + terms.beta * terms.c) / (terms.n as f64 - 1.0)
        * (2.0 * terms.c * l).powf(a)
        * (terms.t as f64).powf(b)
        * gamma(p, terms))
}

/// `(Δ_{k,1} / (2σ Δ_{k,0} Σ Δ_{i,1}))^{1/(βc+1)}`
pub fn smoothgrad_multiplier(p: &NormProfile, terms: SgdTerms, sigma: f64) -> Result<f64> {
    p.require_nondegenerate()?;
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let (a, _) = terms.exponents();
    Ok((p.delta_k1() / (2.0 * sigma * p.delta_k0() * p.prefix_delta1_sum())).powf(a))
}

pub fn smoothgrad_stability_bound(p: &NormProfile, terms: SgdTerms, sigma: f64) -> Result<f64> {
    Ok(simplegrad_stability_bound(p, terms)? * smoothgrad_multiplier(p, terms, sigma)?)
}

/// Simple-Grad bound of the same regime, times `2C`.
pub fn integratedgrad_stability_bound(p: &NormProfile, terms: SgdTerms, regime: Regime) -> Result<f64> {
    let simple = match regime {
        Regime::NonConvex => simplegrad_stability_bound(p, terms)?,
        Regime::Convex { step_sum } => {
            terms.validate()?;
            p.require_nondegenerate()?;
            let l_prime = 2.0 * p.delta_k0() * p.prefix_delta1_sum() * p.c;
            2.0 * lipschitz_bound(p) * l_prime / terms.n as f64 * step_sum
        }
    };
    Ok(simple * 2.0 * p.c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityMethod {
    SimpleGrad,
    IntegratedGrad,
}

/// `Λσ√m` for Simple-Grad and `Λ(3C+1)σ√m` for Integrated-Grad.
pub fn fidelity_bound(p: &NormProfile, sigma: f64, method: FidelityMethod) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be non-negative, got {sigma}")));
    }
    let base = p.lambda() * sigma * (p.m as f64).sqrt();
    Ok(match method {
        FidelityMethod::SimpleGrad => base,
        FidelityMethod::IntegratedGrad => base * (3.0 * p.c + 1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodBound {
    pub method: String,
    pub m_prime: f64,
    pub l_prime: f64,
    pub stability_bound: Option<f64>,
    pub formula: String,
}

/// Every constant and bound for one profile and training setup, labelled
/// with the formula that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub profile: NormProfile,
    pub terms: SgdTerms,
    pub smoothness: SmoothnessVariant,
    #[serde(rename = "L")]
    pub l: f64,
    pub beta: f64,
    #[serde(rename = "Gamma")]
    pub gamma: f64,
    pub sigma: f64,
    pub methods: Vec<MethodBound>,
    pub fidelity_simple_grad: f64,
    pub fidelity_integrated_grad: f64,
    pub degenerate: bool,
    pub unit_floor_violated: bool,
}

impl BoundReport {
    /// `terms.beta` is overwritten with the smoothness bound implied by
    /// `smoothness`.
    pub fn compute(p: &NormProfile, mut terms: SgdTerms, smoothness: SmoothnessVariant, sigma: f64) -> Result<Self> {
        p.validate()?;
        let l = lipschitz_bound(p);
        let beta = smoothness_bound(p, smoothness)?;
        terms.beta = beta;
        let stab = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::Degenerate(_)) => Ok(None),
            Err(e) => Err(e),
        };
        let sg = simplegrad_constants(p);
        let ig = integratedgrad_constants(p);
        let mut methods = vec![
            MethodBound {
                method: "simple_grad".into(),
                m_prime: sg.m_prime,
                l_prime: sg.l_prime,
                stability_bound: stab(simplegrad_stability_bound(p, terms))?,
                formula: "simplegrad_nonconvex: ((1+βc)/(n-1))(2cL)^(1/(βc+1)) T^(βc/(βc+1)) Γ".into(),
            },
            MethodBound {
                method: "integrated_grad".into(),
                m_prime: ig.m_prime,
                l_prime: ig.l_prime,
                stability_bound: stab(integratedgrad_stability_bound(p, terms, Regime::NonConvex))?,
                formula: "integratedgrad_nonconvex: simplegrad_nonconvex · 2C".into(),
            },
        ];
        if sigma > 0.0 {
            let sm = smoothgrad_constants(p, sigma);
            methods.push(MethodBound {
                method: "smooth_grad".into(),
                m_prime: sm.m_prime,
                l_prime: sm.l_prime,
                stability_bound: stab(smoothgrad_stability_bound(p, terms, sigma))?,
                formula: "smoothgrad_nonconvex: simplegrad_nonconvex · (Δk1/(2σΔk0ΣΔi1))^(1/(βc+1))".into(),
            });
        }
        Ok(Self {
            profile: p.clone(),
            terms,
            smoothness,
            l,
            beta,
            gamma: gamma(p, terms),
            sigma,
            methods,
            fidelity_simple_grad: fidelity_bound(p, sigma, FidelityMethod::SimpleGrad)?,
            fidelity_integrated_grad: fidelity_bound(p, sigma, FidelityMethod::IntegratedGrad)?,
            degenerate: p.is_degenerate(),
            unit_floor_violated: !p.meets_unit_floor(),
        })
    }
}
