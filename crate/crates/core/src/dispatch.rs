//! Per-bus economic data and the local maps shared by the protocols and the oracle.
//!
//! Units: power in MW, prices in currency/MW, cost in currency.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("bus {bus}: {field} = {value} is not finite")]
    NotFinite { bus: usize, field: &'static str, value: f64 },
    #[error("bus {bus}: beta must be positive, got {value}")]
    NonPositiveBeta { bus: usize, value: f64 },
    #[error("bus {bus}: {field} must be non-negative, got {value}")]
    Negative { bus: usize, field: &'static str, value: f64 },
    #[error("bus {bus}: {field} must be non-positive, got {value}")]
    Positive { bus: usize, field: &'static str, value: f64 },
    #[error("bus {bus}: p_min = {p_min} exceeds p_max = {p_max}")]
    InvertedLimits { bus: usize, p_min: f64, p_max: f64 },
    #[error("system has no buses")]
    Empty,
}

/// Cost `F(P) = (P - alpha)^2 / (2 beta) + gamma`, loss `B P^2`, limits and local load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Loss factor `B` (1/MW).
    pub loss_factor: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub demand: f64,
}

/// How the projected power was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionRegime {
    Interior,
    AtUpper,
    AtLower,
    /// `1 + 2 B beta lambda = 0` with a positive numerator.
    SingularUpper,
    /// `1 + 2 B beta lambda = 0` with a negative numerator.
    SingularLower,
    /// Numerator and denominator both vanish; resolved to `p_min` by convention.
    SingularDegenerate,
}

impl ProjectionRegime {
    pub fn is_singular(self) -> bool {
        matches!(
            self,
            Self::SingularUpper | Self::SingularLower | Self::SingularDegenerate
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub power: f64,
    pub regime: ProjectionRegime,
}

impl GeneratorParams {
    /// A bus with load only (`p_min = p_max = 0`).
    pub fn load_only(demand: f64) -> Self {
        Self {
            alpha: 0.0,
            beta: 1.0,
            gamma: 0.0,
            loss_factor: 0.0,
            p_min: 0.0,
            p_max: 0.0,
            demand,
        }
    }

    pub fn validate(&self, bus: usize) -> Result<(), ParamError> {
        let fields = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("loss_b", self.loss_factor),
            ("p_min", self.p_min),
            ("p_max", self.p_max),
            ("demand", self.demand),
        ];
        for (field, value) in fields {
            if !value.is_finite() {
                return Err(ParamError::NotFinite { bus, field, value });
            }
        }
        if self.beta <= 0.0 {
            return Err(ParamError::NonPositiveBeta { bus, value: self.beta });
        }
        for (field, value) in [
            ("loss_b", self.loss_factor),
            ("p_min", self.p_min),
            ("demand", self.demand),
        ] {
            if value < 0.0 {
                return Err(ParamError::Negative { bus, field, value });
            }
        }
        for (field, value) in [("alpha", self.alpha), ("gamma", self.gamma)] {
            if value > 0.0 {
                return Err(ParamError::Positive { bus, field, value });
            }
        }
        if self.p_min > self.p_max {
            return Err(ParamError::InvertedLimits {
                bus,
                p_min: self.p_min,
                p_max: self.p_max,
            });
        }
        Ok(())
    }

    pub fn cost(&self, p: f64) -> f64 {
        let d = p - self.alpha;
        d * d / (2.0 * self.beta) + self.gamma
    }

    pub fn line_loss(&self, p: f64) -> f64 {
        self.loss_factor * p * p
    }

    /// Local power mismatch `P_D + B P^2 - P`.
    pub fn bus_mismatch(&self, p: f64) -> f64 {
        self.demand + self.line_loss(p) - p
    }

    /// Unclamped stationary power `(beta lambda + alpha) / (1 + 2 B beta lambda)`,
    /// or `None` on the singular denominator.
    pub fn unconstrained_power(&self, lambda: f64) -> Option<f64> {
        let den = 1.0 + 2.0 * self.loss_factor * self.beta * lambda;
        (den != 0.0).then(|| (self.beta * lambda + self.alpha) / den)
    }

    /// `Phi(lambda)`: the stationary power clamped to `[p_min, p_max]`.
    pub fn project(&self, lambda: f64) -> Projection {
        let num = self.beta * lambda + self.alpha;
        match self.unconstrained_power(lambda) {
            Some(u) if u > self.p_max => Projection {
                power: self.p_max,
                regime: ProjectionRegime::AtUpper,
            },
            Some(u) if u < self.p_min => Projection {
                power: self.p_min,
                regime: ProjectionRegime::AtLower,
            },
            Some(u) => Projection {
                power: u,
                regime: ProjectionRegime::Interior,
            },
            None if num > 0.0 => Projection {
                power: self.p_max,
                regime: ProjectionRegime::SingularUpper,
            },
            None if num < 0.0 => Projection {
                power: self.p_min,
                regime: ProjectionRegime::SingularLower,
            },
            None => Projection {
                power: self.p_min,
                regime: ProjectionRegime::SingularDegenerate,
            },
        }
    }

    pub fn project_power(&self, lambda: f64) -> f64 {
        self.project(lambda).power
    }

    /// Incremental cost with penalty factor at `p`: `(p - alpha) / (beta (1 - 2 B p))`.
    pub fn penalized_incremental_cost(&self, p: f64) -> f64 {
        (p - self.alpha) / (self.beta * (1.0 - 2.0 * self.loss_factor * p))
    }

    /// Net power delivered to the network, `p - B p^2`.
    pub fn net_output(&self, p: f64) -> f64 {
        p - self.line_loss(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub generators: Vec<GeneratorParams>,
    /// Distribution-system price `lambda_0`.
    pub price: f64,
}

/// Supply envelope for isolated operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsolatedFeasibility {
    /// `sum(p_min - B p_min^2)`.
    pub net_at_lower: f64,
    /// `sum(p_max - B p_max^2)`.
    pub net_at_upper: f64,
    pub total_demand: f64,
}

impl IsolatedFeasibility {
    pub fn is_feasible(&self) -> bool {
        self.net_at_lower < self.total_demand && self.total_demand < self.net_at_upper
    }
}

impl SystemParams {
    pub fn new(generators: Vec<GeneratorParams>, price: f64) -> Result<Self, ParamError> {
        let sys = Self { generators, price };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.generators.is_empty() {
            return Err(ParamError::Empty);
        }
        if !self.price.is_finite() {
            return Err(ParamError::NotFinite {
                bus: 0,
                field: "price",
                value: self.price,
            });
        }
        self.generators
            .iter()
            .enumerate()
            .try_for_each(|(i, g)| g.validate(i))
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub fn total_demand(&self) -> f64 {
        self.generators.iter().map(|g| g.demand).sum()
    }

    pub fn isolated_feasibility(&self) -> IsolatedFeasibility {
        IsolatedFeasibility {
            net_at_lower: self.generators.iter().map(|g| g.net_output(g.p_min)).sum(),
            net_at_upper: self.generators.iter().map(|g| g.net_output(g.p_max)).sum(),
            total_demand: self.total_demand(),
        }
    }
}
