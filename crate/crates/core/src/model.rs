//! Sum-decomposable drift problems `F = (1/N) Σ F_i` and checks of their
//! declared Lipschitz and dissipativity constants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dist_sq, dot, norm};
use crate::noise::{fill_uniform_in_unit_ball, StreamKey, StreamTag};

/// One drift component `F_i : R^d -> R^d`, given by an analytic family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum Component {
    /// `F(x) = A x + b`, `matrix` stored row by row.
    Affine { matrix: Vec<Vec<f64>>, offset: Vec<f64> },
    /// `F(x) = x - amplitude · tanh(<x, direction>) · direction`.
    TanhWell { direction: Vec<f64>, amplitude: f64 },
}

impl Component {
    pub fn affine(matrix: Vec<Vec<f64>>, offset: Vec<f64>) -> Self {
        Component::Affine { matrix, offset }
    }

    pub fn tanh_well(direction: Vec<f64>, amplitude: f64) -> Self {
        Component::TanhWell {
            direction,
            amplitude,
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Component::Affine { matrix, offset } => {
                if matrix.len() != dim || matrix.iter().any(|r| r.len() != dim) {
                    return Err(invalid(format!("affine matrix must be {dim}x{dim}")));
                }
                if offset.len() != dim {
                    return Err(invalid(format!("affine offset must have length {dim}")));
                }
                if !matrix.iter().all(|r| finite(r)) || !finite(offset) {
                    return Err(invalid("affine parameters must be finite"));
                }
            }
            Component::TanhWell {
                direction,
                amplitude,
            } => {
                if direction.len() != dim {
                    return Err(invalid(format!("tanh-well direction must have length {dim}")));
                }
                if !finite(direction) || !amplitude.is_finite() {
                    return Err(invalid("tanh-well parameters must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Writes `F(x)` into `out`. Lengths are not checked.
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Component::Affine { matrix, offset } => {
                for ((o, row), b) in out.iter_mut().zip(matrix).zip(offset) {
                    *o = dot(row, x) + b;
                }
            }
            Component::TanhWell {
                direction,
                amplitude,
            } => {
                let t = amplitude * dot(x, direction).tanh();
                for ((o, xi), ui) in out.iter_mut().zip(x).zip(direction) {
                    *o = xi - t * ui;
                }
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawProblem {
    dim: usize,
    count: usize,
    components: Vec<Component>,
    lipschitz: f64,
    m_hat: f64,
    c1: f64,
    c2: f64,
}

/// A drift problem with its declared constants `(M, M̂, c1, c2)`.
///
/// Immutable once built; share it freely across threads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProblem", into = "RawProblem")]
pub struct Problem {
    dim: usize,
    components: Vec<Component>,
    lipschitz: f64,
    m_hat: f64,
    c1: f64,
    c2: f64,
}

impl TryFrom<RawProblem> for Problem {
    type Error = Error;

    fn try_from(raw: RawProblem) -> Result<Self> {
        if raw.count != raw.components.len() {
            return Err(invalid(format!(
                "count {} does not match {} components",
                raw.count,
                raw.components.len()
            )));
        }
        Problem::new(raw.dim, raw.components, raw.lipschitz, raw.m_hat, raw.c1, raw.c2)
    }
}

impl From<Problem> for RawProblem {
    fn from(p: Problem) -> Self {
        RawProblem {
            dim: p.dim,
            count: p.components.len(),
            components: p.components,
            lipschitz: p.lipschitz,
            m_hat: p.m_hat,
            c1: p.c1,
            c2: p.c2,
        }
    }
}

impl Problem {
    /// Builds a problem, checking shapes and the declared ranges
    /// `M >= 1`, `M̂ >= 0`, `c1 > 0`, `0 < c2 <= 1`.
    pub fn new(
        dim: usize,
        components: Vec<Component>,
        lipschitz: f64,
        m_hat: f64,
        c1: f64,
        c2: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if components.is_empty() {
            return Err(invalid("at least one component is required"));
        }
        for c in &components {
            c.check(dim)?;
        }
        if !(lipschitz.is_finite() && lipschitz >= 1.0) {
            return Err(invalid(format!("lipschitz constant must be >= 1, got {lipschitz}")));
        }
        if !(m_hat.is_finite() && m_hat >= 0.0) {
            return Err(invalid(format!("m_hat must be >= 0, got {m_hat}")));
        }
        if !(c1.is_finite() && c1 > 0.0) {
            return Err(invalid(format!("c1 must be > 0, got {c1}")));
        }
        if !(c2 > 0.0 && c2 <= 1.0) {
            return Err(invalid(format!("c2 must lie in (0, 1], got {c2}")));
        }
        Ok(Self {
            dim,
            components,
            lipschitz,
            m_hat,
            c1,
            c2,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of components `N`.
    pub fn count(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Declared Lipschitz constant `M`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Declared bound `M̂ >= max_i |F_i(0)|`.
    pub fn m_hat(&self) -> f64 {
        self.m_hat
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(invalid(format!(
                "expected a vector of length {}, got {}",
                self.dim,
                x.len()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(invalid("point has non-finite coordinates"));
        }
        Ok(())
    }

    /// `F_i(x)` for a 0-based component index.
    pub fn component_eval(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let c = self.components.get(i).ok_or_else(|| {
            invalid(format!("component index {i} out of range 0..{}", self.count()))
        })?;
        let mut out = vec![0.0; self.dim];
        c.eval_into(x, &mut out);
        Ok(out)
    }

    #[inline]
    pub(crate) fn component_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        self.components[i].eval_into(x, out);
    }

    /// `(1/N) Σ_i F_i(x)`, summed left to right over `i`, then divided by `N`.
    pub fn mean_drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut acc = vec![0.0; self.dim];
        let mut buf = vec![0.0; self.dim];
        for c in &self.components {
            c.eval_into(x, &mut buf);
            acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
        }
        let n = self.count() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    /// Samples the declared assumptions on the ball of the given radius.
    pub fn verify_assumptions(
        &self,
        sample_count: usize,
        radius: f64,
        seed: u64,
    ) -> Result<AssumptionReport> {
        if sample_count == 0 {
            return Err(invalid("sample_count must be >= 1"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid("radius must be positive"));
        }
        let d = self.dim;
        let (mut x, mut y) = (vec![0.0; d], vec![0.0; d]);
        let (mut fx, mut fy) = (vec![0.0; d], vec![0.0; d]);
        let mut worst_ratio = 0.0f64;
        let mut worst_margin = f64::INFINITY;
        for k in 0..sample_count as u64 {
            let mut rng = StreamKey::new(seed, 0, k, StreamTag::Verify).rng();
            fill_uniform_in_unit_ball(&mut rng, &mut x);
            fill_uniform_in_unit_ball(&mut rng, &mut y);
            x.iter_mut().for_each(|v| *v *= radius);
            y.iter_mut().for_each(|v| *v *= radius);
            let gap = dist_sq(&x, &y).sqrt();
            if gap > 0.0 {
                for c in &self.components {
                    c.eval_into(&x, &mut fx);
                    c.eval_into(&y, &mut fy);
                    worst_ratio = worst_ratio.max(dist_sq(&fx, &fy).sqrt() / gap);
                }
            }
            let f = self.mean_drift(&x)?;
            let margin = dot(&f, &x) - self.c2 * dot(&x, &x) + self.c1;
            worst_margin = worst_margin.min(margin);
        }
        let zero = vec![0.0; d];
        let max_at_zero = self
            .components
            .iter()
            .map(|c| {
                c.eval_into(&zero, &mut fx);
                norm(&fx)
            })
            .fold(0.0f64, f64::max);
        let slack = 1e-9;
        Ok(AssumptionReport {
            lipschitz_ok: worst_ratio <= self.lipschitz * (1.0 + slack),
            dissip_ok: worst_margin >= -slack * (1.0 + radius * radius),
            m_hat_ok: max_at_zero <= self.m_hat * (1.0 + slack),
            worst_ratio,
            worst_margin,
            max_norm_at_zero: max_at_zero,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub lipschitz_ok: bool,
    pub dissip_ok: bool,
    pub m_hat_ok: bool,
    /// Largest sampled `|F_i(x) - F_i(y)| / |x - y|`.
    pub worst_ratio: f64,
    /// Smallest sampled `<F(x), x> - c2 |x|^2 + c1`.
    pub worst_margin: f64,
    pub max_norm_at_zero: f64,
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.lipschitz_ok && self.dissip_ok && self.m_hat_ok
    }
}

/// Problems shipped with closed-form constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BuiltinProblem {
    /// d=1, N=2, `F_1 = 2x - 1`, `F_2 = x + 1`.
    Lin1d,
    /// d=1, N=2, `F_1 = x + 0.1`, `F_2 = x - 0.1`.
    Micro1d,
    /// d=2, N=4, `F_i = x - 3 tanh(<x,u_i>) u_i` at angles 0°, 90°, 45°, 135°.
    Well2d,
}

impl BuiltinProblem {
    pub const ALL: [BuiltinProblem; 3] = [
        BuiltinProblem::Lin1d,
        BuiltinProblem::Micro1d,
        BuiltinProblem::Well2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinProblem::Lin1d => "lin-1d",
            BuiltinProblem::Micro1d => "micro-1d",
            BuiltinProblem::Well2d => "well-2d",
        }
    }

    pub fn problem(self) -> Problem {
        let affine = |a: f64, b: f64| Component::affine(vec![vec![a]], vec![b]);
        let built = match self {
            BuiltinProblem::Lin1d => {
                Problem::new(1, vec![affine(2.0, -1.0), affine(1.0, 1.0)], 2.0, 1.0, 0.01, 1.0)
            }
            BuiltinProblem::Micro1d => {
                Problem::new(1, vec![affine(1.0, 0.1), affine(1.0, -0.1)], 1.0, 0.1, 0.01, 1.0)
            }
            BuiltinProblem::Well2d => {
                let h = std::f64::consts::FRAC_1_SQRT_2;
                let dirs = [[1.0, 0.0], [0.0, 1.0], [h, h], [-h, h]];
                let comps = dirs
                    .iter()
                    .map(|u| Component::tanh_well(u.to_vec(), 3.0))
                    .collect();
                Problem::new(2, comps, 4.0, 0.0, 4.5, 0.5)
            }
        };
        built.expect("built-in constants are valid")
    }
}

impl fmt::Display for BuiltinProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinProblem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BuiltinProblem::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| invalid(format!("unknown built-in problem '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin() -> Problem {
        BuiltinProblem::Lin1d.problem()
    }

    #[test]
    fn lin_mean_drift_examples() {
        assert_eq!(lin().mean_drift(&[0.0]).unwrap(), vec![0.0]);
        assert_eq!(lin().mean_drift(&[2.0]).unwrap(), vec![3.0]);
        assert_eq!(lin().mean_drift(&[-1.0]).unwrap(), vec![-1.5]);
    }

    #[test]
    fn component_examples() {
        assert_eq!(lin().component_eval(0, &[0.0]).unwrap(), vec![-1.0]);
        assert_eq!(lin().component_eval(1, &[0.0]).unwrap(), vec![1.0]);
        let micro = BuiltinProblem::Micro1d.problem();
        assert_eq!(micro.component_eval(0, &[0.0]).unwrap(), vec![0.1]);
    }

    #[test]
    fn argument_errors() {
        assert!(matches!(
            lin().component_eval(2, &[0.0]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            lin().mean_drift(&[0.0, 1.0]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(lin().mean_drift(&[f64::NAN]).is_err());
    }

    #[test]
    fn declared_ranges_are_enforced() {
        let c = || vec![Component::affine(vec![vec![1.0]], vec![0.0])];
        assert!(Problem::new(1, c(), 0.5, 0.0, 0.1, 1.0).is_err());
        assert!(Problem::new(1, c(), 1.0, 0.0, 0.0, 1.0).is_err());
        assert!(Problem::new(1, c(), 1.0, 0.0, 0.1, 1.5).is_err());
        assert!(Problem::new(1, c(), 1.0, -1.0, 0.1, 1.0).is_err());
        assert!(Problem::new(2, c(), 1.0, 0.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn builtins_verify() {
        for b in BuiltinProblem::ALL {
            let report = b.problem().verify_assumptions(5_000, 50.0, 3).unwrap();
            assert!(report.all_ok(), "{b}: {report:?}");
        }
        let r = lin().verify_assumptions(1000, 10.0, 1).unwrap();
        assert!(r.worst_ratio <= 2.0 + 1e-12);
    }

    #[test]
    fn understated_lipschitz_is_caught() {
        let p = Problem::new(
            1,
            vec![Component::affine(vec![vec![3.0]], vec![0.0])],
            1.0,
            0.0,
            0.01,
            1.0,
        )
        .unwrap();
        let r = p.verify_assumptions(100, 5.0, 0).unwrap();
        assert!(!r.lipschitz_ok);
        assert!(r.worst_ratio > 2.9);
    }

    #[test]
    fn micro_dissipativity_margin() {
        let r = BuiltinProblem::Micro1d
            .problem()
            .verify_assumptions(10_000, 100.0, 9)
            .unwrap();
        assert!(r.dissip_ok);
        // <F(x), x> - |x|^2 + c1 = c1 exactly for the mean drift F(x) = x
        assert!(r.worst_margin >= 0.0);
    }

    #[test]
    fn json_round_trip_and_shape() {
        let p = BuiltinProblem::Well2d.problem();
        let text = p.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["dim", "count", "components", "lipschitz", "m_hat", "c1", "c2"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["components"][0]["kind"], "tanh-well");
        assert_eq!(Problem::from_json(&text).unwrap(), p);
        let bad = text.replace("\"count\": 4", "\"count\": 3");
        assert!(Problem::from_json(&bad).is_err());
    }

    #[test]
    fn builtin_names_parse() {
        for b in BuiltinProblem::ALL {
            assert_eq!(b.name().parse::<BuiltinProblem>().unwrap(), b);
        }
        assert!("nope".parse::<BuiltinProblem>().is_err());
    }
}
