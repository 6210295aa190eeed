//! Serializable scalar fields with analytic gradients.
//!
//! Every coefficient of a scenario (lapse, spatial factor, conformal factor,
//! one-form components, potentials) is an expression tree over the interior
//! coordinates `(t, x, y[, z])`. Evaluation returns the value together with
//! the full gradient, so flows never fall back to finite differences.

use serde::{Deserialize, Serialize};

/// Largest interior dimension supported.
pub const MAX_DIM: usize = 4;

/// Value and gradient of a scalar at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub g: [f64; MAX_DIM],
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Jet {
            v,
            g: [0.0; MAX_DIM],
        }
    }

    fn map(self, f: f64, df: f64) -> Self {
        let mut g = self.g;
        for gi in &mut g {
            *gi *= df;
        }
        Jet { v: f, g }
    }

    fn add(self, o: Jet) -> Jet {
        let mut g = self.g;
        for i in 0..MAX_DIM {
            g[i] += o.g[i];
        }
        Jet { v: self.v + o.v, g }
    }

    fn mul(self, o: Jet) -> Jet {
        let mut g = [0.0; MAX_DIM];
        for i in 0..MAX_DIM {
            g[i] = self.g[i] * o.v + self.v * o.g[i];
        }
        Jet { v: self.v * o.v, g }
    }
}

/// Expression tree for a smooth scalar on the interior chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ScalarField {
    Const {
        value: f64,
    },
    Coord {
        index: usize,
    },
    /// `Σ_{i ≥ 1} x_i²`, the squared spatial radius.
    SpatialRadiusSq,
    Sum {
        terms: Vec<ScalarField>,
    },
    Product {
        factors: Vec<ScalarField>,
    },
    Scale {
        factor: f64,
        of: Box<ScalarField>,
    },
    Exp {
        of: Box<ScalarField>,
    },
    Sin {
        of: Box<ScalarField>,
    },
    Cos {
        of: Box<ScalarField>,
    },
    Recip {
        of: Box<ScalarField>,
    },
    /// C-infinity step: 0 for `of ≤ lo`, 1 for `of ≥ hi`.
    Smoothstep {
        of: Box<ScalarField>,
        lo: f64,
        hi: f64,
    },
    /// C-infinity bump `amplitude·exp(1 − 1/(1 − |x−c|²/r²))` inside the ball.
    Bump {
        center: Vec<f64>,
        radius: f64,
        amplitude: f64,
    },
}

impl Default for ScalarField {
    fn default() -> Self {
        ScalarField::zero()
    }
}

fn exp_neg_recip(u: f64) -> (f64, f64) {
    if u <= 0.0 {
        (0.0, 0.0)
    } else {
        let e = (-1.0 / u).exp();
        (e, e / (u * u))
    }
}

/// C-infinity transition on [0, 1] and its derivative.
pub fn smoothstep(u: f64) -> (f64, f64) {
    if u <= 0.0 {
        return (0.0, 0.0);
    }
    if u >= 1.0 {
        return (1.0, 0.0);
    }
    let (a, da) = exp_neg_recip(u);
    let (b, db) = exp_neg_recip(1.0 - u);
    let s = a + b;
    let v = a / s;
    let dv = (da * b + a * db) / (s * s);
    (v, dv)
}

impl ScalarField {
    pub fn zero() -> Self {
        ScalarField::Const { value: 0.0 }
    }

    pub fn constant(value: f64) -> Self {
        ScalarField::Const { value }
    }

    pub fn coord(index: usize) -> Self {
        ScalarField::Coord { index }
    }

    pub fn scaled(self, factor: f64) -> Self {
        ScalarField::Scale {
            factor,
            of: Box::new(self),
        }
    }

    pub fn plus(self, other: ScalarField) -> Self {
        match (self, other) {
            (ScalarField::Sum { mut terms }, o) => {
                terms.push(o);
                ScalarField::Sum { terms }
            }
            (s, o) => ScalarField::Sum { terms: vec![s, o] },
        }
    }

    pub fn times(self, other: ScalarField) -> Self {
        ScalarField::Product {
            factors: vec![self, other],
        }
    }

    pub fn smoothstep(of: ScalarField, lo: f64, hi: f64) -> Self {
        ScalarField::Smoothstep {
            of: Box::new(of),
            lo,
            hi,
        }
    }

    pub fn exp(of: ScalarField) -> Self {
        ScalarField::Exp { of: Box::new(of) }
    }

    pub fn recip(of: ScalarField) -> Self {
        ScalarField::Recip { of: Box::new(of) }
    }

    /// True when the tree is a literal zero.
    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarField::Const { value } if *value == 0.0)
    }

    /// True when the field does not depend on any coordinate.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            ScalarField::Const { value } => Some(*value),
            _ => None,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.jet(x).v
    }

    /// Value and gradient at `x`.
    pub fn jet(&self, x: &[f64]) -> Jet {
        match self {
            ScalarField::Const { value } => Jet::constant(*value),
            ScalarField::Coord { index } => {
                let mut j = Jet::constant(x.get(*index).copied().unwrap_or(0.0));
                if *index < MAX_DIM {
                    j.g[*index] = 1.0;
                }
                j
            }
            ScalarField::SpatialRadiusSq => {
                let mut j = Jet::constant(0.0);
                for (i, xi) in x.iter().enumerate().skip(1).take(MAX_DIM - 1) {
                    j.v += xi * xi;
                    j.g[i] = 2.0 * xi;
                }
                j
            }
            ScalarField::Sum { terms } => terms
                .iter()
                .fold(Jet::constant(0.0), |acc, t| acc.add(t.jet(x))),
            ScalarField::Product { factors } => factors
                .iter()
                .fold(Jet::constant(1.0), |acc, f| acc.mul(f.jet(x))),
            ScalarField::Scale { factor, of } => {
                let j = of.jet(x);
                j.map(j.v * factor, *factor)
            }
            ScalarField::Exp { of } => {
                let j = of.jet(x);
                let e = j.v.exp();
                j.map(e, e)
            }
            ScalarField::Sin { of } => {
                let j = of.jet(x);
                j.map(j.v.sin(), j.v.cos())
            }
            ScalarField::Cos { of } => {
                let j = of.jet(x);
                j.map(j.v.cos(), -j.v.sin())
            }
            ScalarField::Recip { of } => {
                let j = of.jet(x);
                j.map(1.0 / j.v, -1.0 / (j.v * j.v))
            }
            ScalarField::Smoothstep { of, lo, hi } => {
                let j = of.jet(x);
                let w = hi - lo;
                let (s, ds) = smoothstep((j.v - lo) / w);
                j.map(s, ds / w)
            }
            ScalarField::Bump {
                center,
                radius,
                amplitude,
            } => {
                let r2 = radius * radius;
                let mut u = 0.0;
                let mut du = [0.0; MAX_DIM];
                for (i, c) in center.iter().enumerate().take(MAX_DIM) {
                    let d = x.get(i).copied().unwrap_or(0.0) - c;
                    u += d * d / r2;
                    du[i] = 2.0 * d / r2;
                }
                if u >= 1.0 {
                    return Jet::constant(0.0);
                }
                let v = amplitude * (1.0 - 1.0 / (1.0 - u)).exp();
                let f = -v / ((1.0 - u) * (1.0 - u));
                let mut g = [0.0; MAX_DIM];
                for i in 0..MAX_DIM {
                    g[i] = f * du[i];
                }
                Jet { v, g }
            }
        }
    }

    /// Central-difference gradient, used to cross-check the analytic one.
    pub fn gradient_fd(&self, x: &[f64], h: f64) -> Vec<f64> {
        let mut xp = x.to_vec();
        (0..x.len())
            .map(|i| {
                let x0 = xp[i];
                xp[i] = x0 + h;
                let fp = self.value(&xp);
                xp[i] = x0 - h;
                let fm = self.value(&xp);
                xp[i] = x0;
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    /// Central-difference Hessian built from the analytic gradient.
    pub fn hessian_fd(&self, x: &[f64], h: f64) -> Vec<Vec<f64>> {
        let n = x.len();
        let mut xp = x.to_vec();
        let mut hess = vec![vec![0.0; n]; n];
        for j in 0..n {
            let x0 = xp[j];
            xp[j] = x0 + h;
            let gp = self.jet(&xp).g;
            xp[j] = x0 - h;
            let gm = self.jet(&xp).g;
            xp[j] = x0;
            for i in 0..n {
                hess[i][j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        for i in 0..n {
            for j in 0..i {
                let m = 0.5 * (hess[i][j] + hess[j][i]);
                hess[i][j] = m;
                hess[j][i] = m;
            }
        }
        hess
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ScalarField {
        ScalarField::exp(ScalarField::coord(1).scaled(0.3))
            .times(ScalarField::Sin {
                of: Box::new(ScalarField::coord(0)),
            })
            .plus(ScalarField::smoothstep(ScalarField::coord(2), -0.5, 0.5))
            .plus(ScalarField::Bump {
                center: vec![0.0, 0.1, 0.2],
                radius: 0.9,
                amplitude: 0.7,
            })
            .plus(ScalarField::recip(
                ScalarField::constant(2.0).plus(ScalarField::SpatialRadiusSq),
            ))
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        let f = sample();
        for x in [[0.3, -0.2, 0.1], [1.0, 0.4, -0.45], [-0.7, 0.0, 0.3]] {
            let j = f.jet(&x);
            let fd = f.gradient_fd(&x, 1e-6);
            for i in 0..3 {
                assert!(
                    (j.g[i] - fd[i]).abs() < 1e-8,
                    "{i}: {} vs {}",
                    j.g[i],
                    fd[i]
                );
            }
        }
    }

    #[test]
    fn smoothstep_limits() {
        assert_eq!(smoothstep(-1.0).0, 0.0);
        assert_eq!(smoothstep(2.0).0, 1.0);
        assert!((smoothstep(0.5).0 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bump_vanishes_outside() {
        let b = ScalarField::Bump {
            center: vec![0.0, 0.0, 0.0],
            radius: 0.5,
            amplitude: 1.0,
        };
        assert_eq!(b.value(&[0.0, 0.6, 0.0]), 0.0);
        assert!((b.value(&[0.0, 0.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let f = sample();
        let s = serde_json::to_string(&f).unwrap();
        let g: ScalarField = serde_json::from_str(&s).unwrap();
        assert_eq!(f, g);
    }
}
