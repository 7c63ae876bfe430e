//! Built-in problems.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::gdm::Coefficient;
use crate::mesh::{DomainSpec, Point, Vector};
use crate::solver::Reactions;

use super::{ExactSolution, ModelError, ModelProblem, Obstacle};

/// Moving-contact manufactured solution on `(-1, 1)^2`.
///
/// With `a^2 = (x - gamma)^2 + (y - zeta)^2` and `u = a^2 - beta^2`, the
/// first field is `u^2 / 2` where `u > 0` and zero elsewhere (the contact
/// set, where it touches the barrier 0). The second is `exp(x + y + t/2)`.
pub mod manufactured {
    use super::*;

    pub const DIFFUSION_Q: f64 = 0.25;

    pub fn gamma(t: f64) -> f64 {
        (4.0 * PI * t).cos() / 3.0
    }

    pub fn zeta(t: f64) -> f64 {
        (4.0 * PI * t).sin() / 3.0
    }

    pub fn beta(t: f64) -> f64 {
        1.0 / 3.0 + 0.3 * (16.0 * PI * t).sin()
    }

    pub fn gamma_dot(t: f64) -> f64 {
        -4.0 * PI / 3.0 * (4.0 * PI * t).sin()
    }

    pub fn zeta_dot(t: f64) -> f64 {
        4.0 * PI / 3.0 * (4.0 * PI * t).cos()
    }

    pub fn beta_dot(t: f64) -> f64 {
        4.8 * PI * (16.0 * PI * t).cos()
    }

    pub fn alpha2(x: Point, t: f64) -> f64 {
        let (dx, dy) = (x.x - gamma(t), x.y - zeta(t));
        dx * dx + dy * dy
    }

    /// `alpha^2 - beta^2`; positive off the contact set.
    pub fn level(x: Point, t: f64) -> f64 {
        alpha2(x, t) - beta(t).powi(2)
    }

    pub fn p(x: Point, t: f64) -> f64 {
        let u = level(x, t);
        if u > 0.0 {
            0.5 * u * u
        } else {
            0.0
        }
    }

    pub fn grad_p(x: Point, t: f64) -> Vector {
        let u = level(x, t);
        if u > 0.0 {
            Vector::new(x.x - gamma(t), x.y - zeta(t)) * (2.0 * u)
        } else {
            Vector::zeros()
        }
    }

    pub fn dt_p(x: Point, t: f64) -> f64 {
        let u = level(x, t);
        if u > 0.0 {
            let dt_alpha2 = -2.0 * (x.x - gamma(t)) * gamma_dot(t) - 2.0 * (x.y - zeta(t)) * zeta_dot(t);
            u * (dt_alpha2 - 2.0 * beta(t) * beta_dot(t))
        } else {
            0.0
        }
    }

    pub fn lap_p(x: Point, t: f64) -> f64 {
        let u = level(x, t);
        if u > 0.0 {
            4.0 * alpha2(x, t) + 4.0 * u
        } else {
            0.0
        }
    }

    pub fn q(x: Point, t: f64) -> f64 {
        (x.x + x.y + 0.5 * t).exp()
    }

    pub fn grad_q(x: Point, t: f64) -> Vector {
        let e = q(x, t);
        Vector::new(e, e)
    }

    pub fn dt_q(x: Point, t: f64) -> f64 {
        0.5 * q(x, t)
    }

    pub fn lap_q(x: Point, t: f64) -> f64 {
        2.0 * q(x, t)
    }

    pub fn f(p: f64, q: f64) -> f64 {
        (p + q) * (p + q)
    }

    pub fn g(p: f64, q: f64) -> f64 {
        p * (1.0 - p * q)
    }

    /// Multiplier on the contact set: `4 beta^2 (1 + beta^2 - alpha^2)`.
    /// Positive there, and the resulting source is continuous across the
    /// free boundary.
    pub fn contact_multiplier(x: Point, t: f64) -> f64 {
        let b2 = beta(t).powi(2);
        4.0 * b2 * (1.0 + b2 - alpha2(x, t))
    }

    /// Source of the constrained equation.
    pub fn source_p(x: Point, t: f64) -> f64 {
        if level(x, t) > 0.0 {
            dt_p(x, t) - lap_p(x, t) - f(p(x, t), q(x, t))
        } else {
            -f(0.0, q(x, t)) - contact_multiplier(x, t)
        }
    }

    /// Source of the second equation; the diffusion and time terms cancel.
    pub fn source_q(x: Point, t: f64) -> f64 {
        dt_q(x, t) - DIFFUSION_Q * lap_q(x, t) - g(p(x, t), q(x, t))
    }

    /// The source as printed alongside the test description, kept for
    /// comparison only (it omits the reaction and uses `-2 gamma` where the
    /// time derivative of `alpha^2` appears).
    pub fn printed_source(x: Point, t: f64) -> f64 {
        let (a2, b) = (alpha2(x, t), beta(t));
        let b2 = b * b;
        if level(x, t) > 0.0 {
            4.0 * (b2 - 2.0 * a2 - 0.5 * (a2 - b2) * (gamma(t) + b * beta_dot(t)))
        } else {
            4.0 * b2 * (a2 - b2 - 1.0)
        }
    }

    pub fn exact() -> ExactSolution {
        ExactSolution {
            p: Arc::new(p),
            q: Arc::new(q),
            grad_p: Arc::new(grad_p),
            grad_q: Arc::new(grad_q),
            dt_p: Arc::new(dt_p),
            dt_q: Arc::new(dt_q),
            div_a_grad_p: Arc::new(lap_p),
            div_b_grad_q: Arc::new(|x, t| DIFFUSION_Q * lap_q(x, t)),
        }
    }
}

/// Spreading biofilm with a constant barrier.
pub mod spreading {
    pub const BARRIER: f64 = 0.3;

    pub fn f(p: f64, q: f64) -> f64 {
        5.0 * q * p / (q + 0.7)
    }

    pub fn g(p: f64, q: f64) -> f64 {
        -0.5 * q * p / (q + 0.7)
    }
}

fn indicator(radius: f64) -> impl Fn(Point) -> f64 + Send + Sync {
    move |x: Point| if x.coords.norm() < radius { 1.0 } else { 0.0 }
}

pub fn test1() -> ModelProblem {
    ModelProblem {
        name: "test1".into(),
        domain: DomainSpec::unit_square(),
        final_time: 2.0,
        a: Coefficient::isotropic(0.01),
        b: Coefficient::isotropic(0.5),
        reactions: Some(Reactions { f: Arc::new(spreading::f), g: Arc::new(spreading::g) }),
        m_lip: None,
        barrier: Arc::new(|_| spreading::BARRIER),
        p0: Arc::new(indicator(0.3)),
        q0: Arc::new(indicator(0.75)),
        dirichlet_p: Arc::new(|_, _| 0.0),
        dirichlet_q: Arc::new(|_, _| 0.0),
        source_p: None,
        source_q: None,
        obstacle: Obstacle::Lower,
        project_initial: true,
        exact: None,
    }
}

pub fn test2() -> ModelProblem {
    use manufactured as m;
    ModelProblem {
        name: "test2".into(),
        domain: DomainSpec::unit_square(),
        final_time: 0.25,
        a: Coefficient::identity(),
        b: Coefficient::isotropic(m::DIFFUSION_Q),
        reactions: Some(Reactions { f: Arc::new(m::f), g: Arc::new(m::g) }),
        m_lip: None,
        barrier: Arc::new(|_| 0.0),
        p0: Arc::new(|x| m::p(x, 0.0)),
        q0: Arc::new(|x| m::q(x, 0.0)),
        dirichlet_p: Arc::new(m::p),
        dirichlet_q: Arc::new(m::q),
        source_p: Some(Arc::new(m::source_p)),
        source_q: Some(Arc::new(m::source_q)),
        obstacle: Obstacle::Lower,
        project_initial: false,
        exact: Some(m::exact()),
    }
}

pub fn builtin_problem(name: &str) -> Result<ModelProblem, ModelError> {
    match name {
        "test1" => Ok(test1()),
        "test2" => Ok(test2()),
        other => Err(ModelError::UnknownProblem(other.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    P,
    Q,
}

/// Pointwise exact solution of a built-in problem that has one.
pub fn evaluate_exact(name: &str, which: Field, x: Point, t: f64) -> Result<f64, ModelError> {
    match name {
        "test2" => Ok(match which {
            Field::P => manufactured::p(x, t),
            Field::Q => manufactured::q(x, t),
        }),
        other => Err(ModelError::NoExactSolution(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::manufactured as m;
    use super::*;

    #[test]
    fn spreading_reaction_value() {
        assert!((spreading::f(1.0, 0.7) - 2.5).abs() < 1e-15);
        assert!((spreading::g(1.0, 0.7) + 0.25).abs() < 1e-15);
    }

    #[test]
    fn manufactured_point_values() {
        assert_eq!(m::q(Point::new(0.0, 0.0), 0.0), 1.0);
        assert!((m::q(Point::new(1.0, 1.0), 0.25) - 2.125f64.exp()).abs() < 1e-14);
        assert!((m::beta(0.0) - 1.0 / 3.0).abs() < 1e-16);
        for t in [0.0, 0.07, 0.2] {
            let centre = Point::new(m::gamma(t), m::zeta(t));
            assert_eq!(m::p(centre, t), 0.0);
        }
    }

    #[test]
    fn interface_is_c1() {
        let t = 0.1;
        let r = m::beta(t);
        let x = Point::new(m::gamma(t) + r, m::zeta(t));
        assert!(m::p(x, t).abs() < 1e-30);
        assert!(m::grad_p(x, t).norm() < 1e-14);
    }

    #[test]
    fn derived_source_is_continuous_across_the_interface() {
        let t = 0.13;
        let r = m::beta(t);
        let dir = Vector::new(0.6, 0.8);
        let c = Point::new(m::gamma(t), m::zeta(t));
        let inside = m::source_p(c + dir * (r - 1e-9), t);
        let outside = m::source_p(c + dir * (r + 1e-9), t);
        assert!((inside - outside).abs() < 1e-6, "{inside} {outside}");
    }

    #[test]
    fn unknown_names() {
        assert!(matches!(builtin_problem("test3"), Err(ModelError::UnknownProblem(_))));
        assert!(evaluate_exact("test1", Field::P, Point::origin(), 0.0).is_err());
    }
}
