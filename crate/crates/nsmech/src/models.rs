//! Built-in model library.
//!
//! Each builder returns a complete [`Model`]: dynamics callbacks, constraint
//! set, initial state, and restitution. Models are registered by name for
//! scenario files; the same builders are usable directly from code.
//!
//! | name                 | coords            | constraints                         |
//! |----------------------|-------------------|-------------------------------------|
//! | `bouncing_ball`      | height            | floor gap                           |
//! | `two_mass_line`      | two positions     | separation gap                      |
//! | `pendulum_floor`     | bob (x, y)        | rigid rod (bilateral) + floor gap   |
//! | `cradle_line`        | N positions       | wall gap + N−1 separation gaps      |
//! | `particle_on_circle` | point (x, y)      | circle (bilateral)                  |

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impact::RestitutionSpec;
use crate::model::{ConstraintBlock, ConstraintSet, SystemDynamics};

/// A ready-to-simulate system.
pub struct Model {
    pub name: String,
    pub dynamics: SystemDynamics,
    pub constraints: ConstraintSet,
    pub q0: DVector<f64>,
    pub qd0: DVector<f64>,
    pub restitution: RestitutionSpec,
}

/// Names accepted by [`build_model`].
pub fn model_names() -> &'static [&'static str] {
    &[
        "bouncing_ball",
        "two_mass_line",
        "pendulum_floor",
        "cradle_line",
        "particle_on_circle",
    ]
}

/// Builds a named model from optional TOML parameters (missing parameters
/// take their documented defaults; unknown keys are errors).
pub fn build_model(name: &str, params: Option<&toml::Value>) -> Result<Model> {
    fn parse<T: serde::de::DeserializeOwned + Default>(
        params: Option<&toml::Value>,
    ) -> Result<T> {
        match params {
            None => Ok(T::default()),
            Some(v) => v.clone().try_into().map_err(|e| {
                Error::config("model.params", e.to_string())
            }),
        }
    }
    match name {
        "bouncing_ball" => bouncing_ball(&parse(params)?),
        "two_mass_line" => two_mass_line(&parse(params)?),
        "pendulum_floor" => pendulum_floor(&parse(params)?),
        "cradle_line" => cradle_line(&parse(params)?),
        "particle_on_circle" => particle_on_circle(&parse(params)?),
        other => Err(Error::config(
            "model.name",
            format!("unknown model '{other}'; known: {}", model_names().join(", ")),
        )),
    }
}

fn check_positive(field: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::config(field, format!("must be positive, got {v}")));
    }
    Ok(())
}

fn check_restitution_scalar(field: &str, e: f64) -> Result<()> {
    if !e.is_finite() || e < 0.0 {
        return Err(Error::config(field, format!("must be nonnegative, got {e}")));
    }
    Ok(())
}

/// Scalar or per-contact restitution in parameter files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RestitutionParam {
    Scalar(f64),
    PerContact(Vec<f64>),
}

impl RestitutionParam {
    fn into_spec(self, field: &str, m_u: usize) -> Result<RestitutionSpec> {
        match self {
            RestitutionParam::Scalar(e) => {
                check_restitution_scalar(field, e)?;
                Ok(RestitutionSpec::Global(e))
            }
            RestitutionParam::PerContact(v) => {
                if v.len() != m_u {
                    return Err(Error::config(
                        field,
                        format!("expected {m_u} coefficients, got {}", v.len()),
                    ));
                }
                for e in &v {
                    check_restitution_scalar(field, *e)?;
                }
                Ok(RestitutionSpec::PerContact(v))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// bouncing_ball

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BouncingBallParams {
    pub mass: f64,
    pub gravity: f64,
    pub restitution: f64,
    /// Initial height.
    pub q0: f64,
    /// Initial vertical velocity.
    pub qd0: f64,
}

impl Default for BouncingBallParams {
    fn default() -> Self {
        BouncingBallParams { mass: 1.0, gravity: 10.0, restitution: 0.5, q0: 1.0, qd0: 0.0 }
    }
}

/// Point mass above a floor at height zero; gap is the height itself.
pub fn bouncing_ball(p: &BouncingBallParams) -> Result<Model> {
    check_positive("model.params.mass", p.mass)?;
    check_restitution_scalar("model.params.restitution", p.restitution)?;
    let m = p.mass;
    let g = p.gravity;
    let dynamics = SystemDynamics::new(
        1,
        Box::new(move |_| DMatrix::from_element(1, 1, m)),
        Box::new(move |_, _| DVector::from_element(1, m * g)),
        Box::new(|_, _, _| DVector::zeros(1)),
    );
    let constraints = ConstraintSet::new(
        1,
        None,
        Some(ConstraintBlock {
            dim: 1,
            phi: Box::new(|q: &DVector<f64>| DVector::from_element(1, q[0])),
            jac: Box::new(|_q| DMatrix::from_element(1, 1, 1.0)),
            jac_dot: Some(Box::new(|_q, _qd| DMatrix::zeros(1, 1))),
        }),
    );
    Ok(Model {
        name: "bouncing_ball".into(),
        dynamics,
        constraints,
        q0: DVector::from_element(1, p.q0),
        qd0: DVector::from_element(1, p.qd0),
        restitution: RestitutionSpec::Global(p.restitution),
    })
}

// ---------------------------------------------------------------------------
// two_mass_line

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoMassLineParams {
    pub masses: [f64; 2],
    pub restitution: f64,
    /// Contact closes when `q[1] − q[0]` reaches this separation.
    pub rest_gap: f64,
    pub q0: [f64; 2],
    pub qd0: [f64; 2],
}

impl Default for TwoMassLineParams {
    fn default() -> Self {
        TwoMassLineParams {
            masses: [1.0, 1.0],
            restitution: 1.0,
            rest_gap: 0.0,
            q0: [0.0, 1.0],
            qd0: [1.0, 0.0],
        }
    }
}

/// Two point masses on a line; body 0 may catch up with body 1.
pub fn two_mass_line(p: &TwoMassLineParams) -> Result<Model> {
    check_positive("model.params.masses", p.masses[0].min(p.masses[1]))?;
    check_restitution_scalar("model.params.restitution", p.restitution)?;
    let masses = p.masses;
    let rest_gap = p.rest_gap;
    let dynamics = SystemDynamics::new(
        2,
        Box::new(move |_| {
            DMatrix::from_diagonal(&DVector::from_row_slice(&masses))
        }),
        Box::new(|_, _| DVector::zeros(2)),
        Box::new(|_, _, _| DVector::zeros(2)),
    );
    let constraints = ConstraintSet::new(
        2,
        None,
        Some(ConstraintBlock {
            dim: 1,
            phi: Box::new(move |q: &DVector<f64>| {
                DVector::from_element(1, q[1] - q[0] - rest_gap)
            }),
            jac: Box::new(|_q| DMatrix::from_row_slice(1, 2, &[-1.0, 1.0])),
            jac_dot: Some(Box::new(|_q, _qd| DMatrix::zeros(1, 2))),
        }),
    );
    Ok(Model {
        name: "two_mass_line".into(),
        dynamics,
        constraints,
        q0: DVector::from_row_slice(&p.q0),
        qd0: DVector::from_row_slice(&p.qd0),
        restitution: RestitutionSpec::Global(p.restitution),
    })
}

// ---------------------------------------------------------------------------
// pendulum_floor

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumFloorParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    /// Floor height the bob may not fall below.
    pub floor_y: f64,
    pub restitution: f64,
    /// Initial angle from the downward vertical, radians.
    pub theta0: f64,
    /// Initial angular rate, radians per unit time.
    pub omega0: f64,
}

impl Default for PendulumFloorParams {
    fn default() -> Self {
        PendulumFloorParams {
            mass: 1.0,
            length: 1.0,
            gravity: 10.0,
            floor_y: -0.8,
            restitution: 0.5,
            theta0: 1.2,
            omega0: 0.0,
        }
    }
}

/// Planar pendulum (bob coordinates, rigid rod as a bilateral constraint)
/// over a floor.
pub fn pendulum_floor(p: &PendulumFloorParams) -> Result<Model> {
    check_positive("model.params.mass", p.mass)?;
    check_positive("model.params.length", p.length)?;
    check_restitution_scalar("model.params.restitution", p.restitution)?;
    let m = p.mass;
    let g = p.gravity;
    let l = p.length;
    let floor_y = p.floor_y;
    let dynamics = SystemDynamics::new(
        2,
        Box::new(move |_| DMatrix::identity(2, 2) * m),
        Box::new(move |_, _| DVector::from_row_slice(&[0.0, m * g])),
        Box::new(|_, _, _| DVector::zeros(2)),
    );
    let constraints = ConstraintSet::new(
        2,
        Some(ConstraintBlock {
            dim: 1,
            phi: Box::new(move |q: &DVector<f64>| {
                DVector::from_element(1, 0.5 * (q.norm_squared() - l * l))
            }),
            jac: Box::new(|q: &DVector<f64>| DMatrix::from_row_slice(1, 2, &[q[0], q[1]])),
            jac_dot: Some(Box::new(|_q: &DVector<f64>, qd: &DVector<f64>| {
                DMatrix::from_row_slice(1, 2, &[qd[0], qd[1]])
            })),
        }),
        Some(ConstraintBlock {
            dim: 1,
            phi: Box::new(move |q: &DVector<f64>| DVector::from_element(1, q[1] - floor_y)),
            jac: Box::new(|_q| DMatrix::from_row_slice(1, 2, &[0.0, 1.0])),
            jac_dot: Some(Box::new(|_q, _qd| DMatrix::zeros(1, 2))),
        }),
    );
    let q0 = DVector::from_row_slice(&[l * p.theta0.sin(), -l * p.theta0.cos()]);
    let qd0 = DVector::from_row_slice(&[
        p.omega0 * l * p.theta0.cos(),
        p.omega0 * l * p.theta0.sin(),
    ]);
    Ok(Model {
        name: "pendulum_floor".into(),
        dynamics,
        constraints,
        q0,
        qd0,
        restitution: RestitutionSpec::Global(p.restitution),
    })
}

// ---------------------------------------------------------------------------
// cradle_line

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CradleLineParams {
    pub masses: Vec<f64>,
    pub restitution: RestitutionParam,
    /// Wall position; ball 0 keeps `q[0] − wall_pos ≥ 0`.
    pub wall_pos: f64,
    /// Minimum separation between neighbors.
    pub spacing: f64,
    pub q0: Vec<f64>,
    pub qd0: Vec<f64>,
}

impl Default for CradleLineParams {
    fn default() -> Self {
        // Both gaps (wall and inter-ball) close simultaneously at t = 1.
        CradleLineParams {
            masses: vec![1.0, 1.0],
            restitution: RestitutionParam::Scalar(1.0),
            wall_pos: 0.0,
            spacing: 0.0,
            q0: vec![1.0, 2.0],
            qd0: vec![-1.0, -2.0],
        }
    }
}

/// N balls on a line left of which sits a wall: gap 0 is ball 0 against the
/// wall, gap i is ball i against ball i−1.
pub fn cradle_line(p: &CradleLineParams) -> Result<Model> {
    let n = p.masses.len();
    if n == 0 {
        return Err(Error::config("model.params.masses", "need at least one ball"));
    }
    for m in &p.masses {
        check_positive("model.params.masses", *m)?;
    }
    if p.q0.len() != n || p.qd0.len() != n {
        return Err(Error::config(
            "model.params.q0",
            format!("q0 and qd0 must have length {n}"),
        ));
    }
    let m_u = n; // wall + (n-1) neighbor gaps
    let masses = p.masses.clone();
    let wall = p.wall_pos;
    let spacing = p.spacing;
    let dynamics = SystemDynamics::new(
        n,
        Box::new(move |_| {
            DMatrix::from_diagonal(&DVector::from_row_slice(&masses))
        }),
        Box::new(move |_, _| DVector::zeros(n)),
        Box::new(move |_, _, _| DVector::zeros(n)),
    );
    let jac_c = {
        let mut a = DMatrix::zeros(m_u, n);
        a[(0, 0)] = 1.0;
        for i in 1..m_u {
            a[(i, i - 1)] = -1.0;
            a[(i, i)] = 1.0;
        }
        a
    };
    let constraints = ConstraintSet::new(
        n,
        None,
        Some(ConstraintBlock {
            dim: m_u,
            phi: Box::new(move |q: &DVector<f64>| {
                let mut phi = DVector::zeros(m_u);
                phi[0] = q[0] - wall;
                for i in 1..m_u {
                    phi[i] = q[i] - q[i - 1] - spacing;
                }
                phi
            }),
            jac: Box::new(move |_q| jac_c.clone()),
            jac_dot: Some(Box::new(move |_q, _qd| DMatrix::zeros(m_u, n))),
        }),
    );
    Ok(Model {
        name: "cradle_line".into(),
        dynamics,
        constraints,
        q0: DVector::from_row_slice(&p.q0),
        qd0: DVector::from_row_slice(&p.qd0),
        restitution: p.restitution.clone().into_spec("model.params.restitution", m_u)?,
    })
}

// ---------------------------------------------------------------------------
// particle_on_circle

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleOnCircleParams {
    pub mass: f64,
    pub radius: f64,
    pub gravity: f64,
    /// Initial angle, radians (measured from the positive x axis).
    pub angle0: f64,
    /// Initial angular rate.
    pub omega0: f64,
}

impl Default for ParticleOnCircleParams {
    fn default() -> Self {
        ParticleOnCircleParams { mass: 1.0, radius: 1.0, gravity: 0.0, angle0: 0.0, omega0: 1.0 }
    }
}

/// Point mass bound to a circle; purely bilateral, useful as a conservative
/// reference system.
pub fn particle_on_circle(p: &ParticleOnCircleParams) -> Result<Model> {
    check_positive("model.params.mass", p.mass)?;
    check_positive("model.params.radius", p.radius)?;
    let m = p.mass;
    let g = p.gravity;
    let r = p.radius;
    let dynamics = SystemDynamics::new(
        2,
        Box::new(move |_| DMatrix::identity(2, 2) * m),
        Box::new(move |_, _| DVector::from_row_slice(&[0.0, m * g])),
        Box::new(|_, _, _| DVector::zeros(2)),
    );
    let constraints = ConstraintSet::new(
        2,
        Some(ConstraintBlock {
            dim: 1,
            phi: Box::new(move |q: &DVector<f64>| {
                DVector::from_element(1, 0.5 * (q.norm_squared() - r * r))
            }),
            jac: Box::new(|q: &DVector<f64>| DMatrix::from_row_slice(1, 2, &[q[0], q[1]])),
            jac_dot: Some(Box::new(|_q: &DVector<f64>, qd: &DVector<f64>| {
                DMatrix::from_row_slice(1, 2, &[qd[0], qd[1]])
            })),
        }),
        None,
    );
    let q0 = DVector::from_row_slice(&[r * p.angle0.cos(), r * p.angle0.sin()]);
    let qd0 = DVector::from_row_slice(&[
        -p.omega0 * r * p.angle0.sin(),
        p.omega0 * r * p.angle0.cos(),
    ]);
    Ok(Model {
        name: "particle_on_circle".into(),
        dynamics,
        constraints,
        q0,
        qd0,
        restitution: RestitutionSpec::Global(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_knows_all_names() {
        for name in model_names() {
            build_model(name, None).unwrap();
        }
        assert!(build_model("no_such_model", None).is_err());
    }

    #[test]
    fn params_parse_from_toml_with_unknown_keys_rejected() {
        let v: toml::Value = toml::from_str("gravity = 9.81\nrestitution = 0.7").unwrap();
        let model = build_model("bouncing_ball", Some(&v)).unwrap();
        assert_eq!(model.q0[0], 1.0);
        let bad: toml::Value = toml::from_str("gravityy = 9.81").unwrap();
        assert!(build_model("bouncing_ball", Some(&bad)).is_err());
    }

    #[test]
    fn pendulum_initial_state_satisfies_rod() {
        let model = build_model("pendulum_floor", None).unwrap();
        let phi = model.constraints.phi_b(&model.q0).unwrap();
        assert!(phi[0].abs() < 1e-12);
        let jac = model.constraints.jac_b(&model.q0).unwrap();
        assert!((jac * &model.qd0).norm() < 1e-12);
    }

    #[test]
    fn cradle_vector_restitution_accepted() {
        let v: toml::Value = toml::from_str(
            "masses = [1.0, 2.0]\nrestitution = [0.5, 0.9]\nq0 = [1.0, 2.0]\nqd0 = [-1.0, 0.0]",
        )
        .unwrap();
        let model = build_model("cradle_line", Some(&v)).unwrap();
        match model.restitution {
            RestitutionSpec::PerContact(ref v) => assert_eq!(v.len(), 2),
            _ => panic!("expected per-contact restitution"),
        }
        let bad: toml::Value = toml::from_str(
            "masses = [1.0, 2.0]\nrestitution = [0.5]\nq0 = [1.0, 2.0]\nqd0 = [-1.0, 0.0]",
        )
        .unwrap();
        assert!(build_model("cradle_line", Some(&bad)).is_err());
    }

    #[test]
    fn circle_starts_on_circle() {
        let v: toml::Value =
            toml::from_str("radius = 2.0\nangle0 = 0.7\nomega0 = 1.3").unwrap();
        let model = build_model("particle_on_circle", Some(&v)).unwrap();
        assert!((model.q0.norm() - 2.0).abs() < 1e-12);
        assert!(model.q0.dot(&model.qd0).abs() < 1e-12);
    }
}
