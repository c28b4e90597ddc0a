//! Discrete velocity lattices and their isotropy conditions.
//!
//! A [`Lattice`] is a finite set of velocities `v_i` in `R^d` with strictly
//! positive weights `w_i` and a speed of sound `c_s`. It is *isotropic* when
//! its weighted velocity moments up to order four agree with those of a
//! centred Gaussian of variance `c_s^2`:
//!
//! | order | condition                                                  |
//! |-------|------------------------------------------------------------|
//! | 0     | `Σ w_i = 1`                                                |
//! | 1     | `Σ w_i v_a = 0`                                            |
//! | 2     | `Σ w_i v_a v_b = c_s^2 δ_ab`                               |
//! | 3     | `Σ w_i v_a v_b v_c = 0`                                    |
//! | 4     | `Σ w_i v_a v_b v_c v_d = c_s^4 (δ_ab δ_cd + δ_ac δ_bd + δ_ad δ_bc)` |
//!
//! [`validate_isotropy`] evaluates every one of these sums over the
//! nondecreasing multi-indices and reports the signed residuals.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Default tolerance for [`validate_isotropy`].
pub const DEFAULT_TOLERANCE: f64 = 1e-12;

/// Largest admissible value of the 3D family parameters.
pub const D3_FAMILY_BOUND: f64 = 1.0 / 72.0;

/// A velocity set with weights and a speed of sound.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    dim: usize,
    velocities: Vec<Vec<f64>>,
    weights: Vec<f64>,
    sound_speed: f64,
}

impl Lattice {
    /// Builds a lattice after checking the structural invariants: matching
    /// lengths, `dim`-component velocities, pairwise distinct velocities,
    /// strictly positive finite weights and a positive speed of sound.
    ///
    /// Isotropy is *not* required here; use [`validate_isotropy`].
    pub fn new(dim: usize, velocities: Vec<Vec<f64>>, weights: Vec<f64>, sound_speed: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("lattice dimension must be positive"));
        }
        if velocities.is_empty() {
            return Err(Error::domain("lattice needs at least one velocity"));
        }
        if velocities.len() != weights.len() {
            return Err(Error::domain(format!(
                "{} velocities but {} weights",
                velocities.len(),
                weights.len()
            )));
        }
        for (i, v) in velocities.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::domain(format!(
                    "velocity {i} has {} components, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::domain(format!("velocity {i} is not finite")));
            }
        }
        for (i, &w) in weights.iter().enumerate() {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::domain(format!("weight {i} = {w} is not strictly positive")));
            }
        }
        for i in 0..velocities.len() {
            for j in 0..i {
                if velocities[i] == velocities[j] {
                    return Err(Error::domain(format!("velocities {j} and {i} coincide")));
                }
            }
        }
        if !(sound_speed.is_finite() && sound_speed > 0.0) {
            return Err(Error::domain(format!("speed of sound {sound_speed} must be positive")));
        }
        Ok(Self {
            dim,
            velocities,
            weights,
            sound_speed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn velocities(&self) -> &[Vec<f64>] {
        &self.velocities
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sound_speed(&self) -> f64 {
        self.sound_speed
    }

    /// Number of velocities, `n + 1`.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Largest Euclidean speed in the set.
    pub fn max_speed(&self) -> f64 {
        self.velocities
            .iter()
            .map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Looks up one of the built-in lattices by name
    /// (`d2q9`, `d2q7`, `d3q15`, `d3q19`, `d3q27`).
    pub fn builtin(name: &str) -> Option<Lattice> {
        match name.to_ascii_lowercase().as_str() {
            "d2q9" => Some(d2q9()),
            "d2q7" => Some(d2q7()),
            "d3q15" => d3_family(D3FamilyParams::d3q15()).ok(),
            "d3q19" => d3_family(D3FamilyParams::d3q19()).ok(),
            "d3q27" => d3_family(D3FamilyParams::d3q27()).ok(),
            _ => None,
        }
    }
}

/// `Σ_i w_i Π_k v_{i, indices[k]}`; the empty index list gives `Σ_i w_i`.
pub fn moment(lattice: &Lattice, indices: &[usize]) -> Result<f64> {
    if let Some(&bad) = indices.iter().find(|&&a| a >= lattice.dim) {
        return Err(Error::domain(format!(
            "moment index {bad} out of range for a {}-dimensional lattice",
            lattice.dim
        )));
    }
    Ok(lattice
        .weights
        .iter()
        .zip(&lattice.velocities)
        .map(|(w, v)| w * indices.iter().map(|&a| v[a]).product::<f64>())
        .sum())
}

/// Right-hand side of the isotropy condition for a given multi-index.
fn isotropic_target(indices: &[usize], sound_speed: f64) -> f64 {
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let cs2 = sound_speed * sound_speed;
    match *indices {
        [] => 1.0,
        [a, b] => cs2 * delta(a, b),
        [a, b, c, d] => cs2 * cs2 * (delta(a, b) * delta(c, d) + delta(a, c) * delta(b, d) + delta(a, d) * delta(b, c)),
        _ => 0.0,
    }
}

/// All nondecreasing multi-indices of the given length over `0..dim`.
fn nondecreasing_indices(dim: usize, order: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(order);
    fn recurse(dim: usize, order: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == order {
            out.push(cur.clone());
            return;
        }
        for a in start..dim {
            cur.push(a);
            recurse(dim, order, a, cur, out);
            cur.pop();
        }
    }
    recurse(dim, order, 0, &mut current, &mut out);
    out
}

/// Outcome of [`validate_isotropy`].
#[derive(Debug, Clone, PartialEq)]
pub struct IsotropyReport {
    pub satisfied: bool,
    pub max_residual: f64,
    pub tolerance: f64,
    /// Signed `moment - target`, keyed by nondecreasing multi-index. The key
    /// length is the moment order.
    pub residuals: BTreeMap<Vec<usize>, f64>,
}

impl IsotropyReport {
    /// Largest absolute residual among conditions of one order.
    pub fn max_residual_of_order(&self, order: usize) -> f64 {
        self.residuals
            .iter()
            .filter(|(k, _)| k.len() == order)
            .map(|(_, r)| r.abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for IsotropyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:<14} {:>24}", "order", "indices", "residual")?;
        for (idx, r) in &self.residuals {
            let label = if idx.is_empty() {
                "-".to_string()
            } else {
                idx.iter().map(|a| (a + 1).to_string()).collect::<Vec<_>>().join(",")
            };
            writeln!(f, "{:<6} {:<14} {:>24.16e}", idx.len(), label, r)?;
        }
        writeln!(
            f,
            "max |residual| = {:.3e} (tolerance {:.3e})",
            self.max_residual, self.tolerance
        )?;
        write!(f, "isotropic: {}", if self.satisfied { "yes" } else { "NO" })
    }
}

/// Evaluates every isotropy condition of order 0 through 4.
pub fn validate_isotropy(lattice: &Lattice, tolerance: f64) -> Result<IsotropyReport> {
    if !(tolerance > 0.0) {
        return Err(Error::domain(format!("tolerance {tolerance} must be positive")));
    }
    let mut residuals = BTreeMap::new();
    for order in 0..=4 {
        for idx in nondecreasing_indices(lattice.dim, order) {
            let value = moment(lattice, &idx)?;
            let r = value - isotropic_target(&idx, lattice.sound_speed);
            residuals.insert(idx, r);
        }
    }
    let max_residual = residuals.values().map(|r| r.abs()).fold(0.0, f64::max);
    Ok(IsotropyReport {
        satisfied: max_residual <= tolerance,
        max_residual,
        tolerance,
        residuals,
    })
}

fn ratio(num: i64, den: i64) -> f64 {
    num as f64 / den as f64
}

/// The nine-velocity square lattice with `c_s = 1/√3`.
pub fn d2q9() -> Lattice {
    let velocities = [
        [0, 0],
        [1, 0],
        [0, 1],
        [-1, 0],
        [0, -1],
        [1, 1],
        [-1, 1],
        [-1, -1],
        [1, -1],
    ]
    .iter()
    .map(|v| v.iter().map(|&c| c as f64).collect())
    .collect();
    let mut weights = vec![ratio(4, 9)];
    weights.extend([ratio(1, 9); 4]);
    weights.extend([ratio(1, 36); 4]);
    Lattice::new(2, velocities, weights, 1.0 / 3f64.sqrt()).expect("d2q9 is well formed")
}

/// The hexagonal seven-velocity lattice with `c_s = 1/2`: rest velocity plus
/// the unit vectors at angles `2πj/6`, `j = 1..=6`.
pub fn d2q7() -> Lattice {
    let h = 3f64.sqrt() / 2.0;
    let velocities = vec![
        vec![0.0, 0.0],
        vec![0.5, h],
        vec![-0.5, h],
        vec![-1.0, 0.0],
        vec![-0.5, -h],
        vec![0.5, -h],
        vec![1.0, 0.0],
    ];
    let mut weights = vec![ratio(1, 2)];
    weights.extend([ratio(1, 12); 6]);
    Lattice::new(2, velocities, weights, 0.5).expect("d2q7 is well formed")
}

/// Parameters of the 27-point family on `{-1, 0, 1}^3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct D3FamilyParams {
    pub c: f64,
    /// Per-axis asymmetries `(c_1, c_2, c_3)`.
    pub c_axis: [f64; 3],
}

impl D3FamilyParams {
    pub fn new(c: f64, c1: f64, c2: f64, c3: f64) -> Self {
        Self {
            c,
            c_axis: [c1, c2, c3],
        }
    }

    pub fn d3q15() -> Self {
        Self::new(1.0 / 72.0, 0.0, 0.0, 0.0)
    }

    pub fn d3q19() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0)
    }

    pub fn d3q27() -> Self {
        Self::new(1.0 / 216.0, 0.0, 0.0, 0.0)
    }

    /// Checks the admissibility inequalities, naming the first one violated.
    pub fn check(&self) -> Result<()> {
        // Absorbs rounding in sums such as 1/144 + 1/144 against 1/72.
        let slack = 8.0 * f64::EPSILON * D3_FAMILY_BOUND;
        let bound = D3_FAMILY_BOUND;
        if !self.c.is_finite() || self.c_axis.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain("3D family parameters must be finite"));
        }
        if self.c < -slack || self.c > bound + slack {
            return Err(Error::domain(format!("violated 0 <= c <= 1/72 (c = {})", self.c)));
        }
        for (k, ck) in self.c_axis.iter().enumerate() {
            if ck.abs() > bound + slack {
                return Err(Error::domain(format!(
                    "violated |c_{}| <= 1/72 (c_{} = {ck})",
                    k + 1,
                    k + 1
                )));
            }
        }
        let total: f64 = self.c_axis.iter().map(|c| c.abs()).sum();
        if total > self.c + slack {
            return Err(Error::domain(format!(
                "violated |c_1| + |c_2| + |c_3| <= c ({total} > {})",
                self.c
            )));
        }
        for a in 0..3 {
            for b in (a + 1)..3 {
                let lhs = self.c + self.c_axis[a].abs() + self.c_axis[b].abs();
                if lhs > bound + slack {
                    return Err(Error::domain(format!(
                        "violated c + |c_{}| + |c_{}| <= 1/72 ({lhs} > {bound})",
                        a + 1,
                        b + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Weight of the velocity `v` in `{-1, 0, 1}^3`.
    fn weight(&self, v: [i32; 3]) -> f64 {
        let c = self.c;
        let ca = self.c_axis;
        let nonzero: Vec<usize> = (0..3).filter(|&k| v[k] != 0).collect();
        let signed = |k: usize| v[k] as f64 * ca[k];
        match nonzero.as_slice() {
            [] => 1.0 / 3.0 - 8.0 * c,
            [a] => 1.0 / 18.0 + 4.0 * c + 4.0 * signed(*a),
            [a, b] => 1.0 / 36.0 - 2.0 * c - 2.0 * signed(*a) - 2.0 * signed(*b),
            _ => c + signed(0) + signed(1) + signed(2),
        }
    }
}

/// Builds the 3D lattice on `{-1, 0, 1}^3` with `c_s = 1/√3` selected by
/// `params`. Velocities whose weight vanishes are left out, so the result has
/// between 15 and 27 entries. Ordering: rest, faces, edges, corners.
pub fn d3_family(params: D3FamilyParams) -> Result<Lattice> {
    params.check()?;
    let mut points: Vec<[i32; 3]> = Vec::with_capacity(27);
    for x in -1..=1 {
        for y in -1..=1 {
            for z in -1..=1 {
                points.push([x, y, z]);
            }
        }
    }
    points.sort_by_key(|p| p.iter().filter(|&&c| c != 0).count());

    // Weights below this are rounding noise from an exactly-zero formula.
    let zero_cut = 16.0 * f64::EPSILON * (1.0 / 36.0);
    let mut velocities = Vec::new();
    let mut weights = Vec::new();
    for p in points {
        let w = params.weight(p);
        if w.abs() <= zero_cut {
            continue;
        }
        if w < 0.0 {
            return Err(Error::domain(format!("weight of velocity {p:?} is negative ({w})")));
        }
        velocities.push(p.iter().map(|&c| c as f64).collect());
        weights.push(w);
    }
    Lattice::new(3, velocities, weights, 1.0 / 3f64.sqrt())
}

/// Multiplies every velocity by `lambda`. Second moments grow by `lambda^2`,
/// so the scaled lattice is isotropic with speed of sound `lambda * c_s`.
pub fn scale(lattice: &Lattice, lambda: f64) -> Result<Lattice> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::domain(format!("scale factor {lambda} must be positive")));
    }
    let velocities = lattice
        .velocities
        .iter()
        .map(|v| v.iter().map(|c| c * lambda).collect())
        .collect();
    Lattice::new(
        lattice.dim,
        velocities,
        lattice.weights.clone(),
        lattice.sound_speed * lambda,
    )
}

/// Plain-text form: a header `dim n c_s` (with `n + 1` velocities) followed by
/// one `w v_1 ... v_d` line per velocity.
impl fmt::Display for Lattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {} {:e}", self.dim, self.len() - 1, self.sound_speed)?;
        for (w, v) in self.weights.iter().zip(&self.velocities) {
            write!(f, "{w:e}")?;
            for c in v {
                write!(f, " {c:e}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl FromStr for Lattice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut lines = s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Format("empty lattice file".into()))?;
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() != 3 {
            return Err(Error::Format(format!("bad lattice header {header:?}")));
        }
        let parse_usize = |t: &str| {
            t.parse::<usize>()
                .map_err(|_| Error::Format(format!("expected an integer, got {t:?}")))
        };
        let parse_f64 = |t: &str| {
            t.parse::<f64>()
                .map_err(|_| Error::Format(format!("expected a number, got {t:?}")))
        };
        let dim = parse_usize(head[0])?;
        let n = parse_usize(head[1])?;
        let sound_speed = parse_f64(head[2])?;

        let mut velocities = Vec::with_capacity(n + 1);
        let mut weights = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("expected {} velocity lines, found {i}", n + 1)))?;
            let nums = line.split_whitespace().map(parse_f64).collect::<Result<Vec<_>>>()?;
            if nums.len() != dim + 1 {
                return Err(Error::Format(format!(
                    "velocity line {} has {} entries, expected {}",
                    i + 1,
                    nums.len(),
                    dim + 1
                )));
            }
            weights.push(nums[0]);
            velocities.push(nums[1..].to_vec());
        }
        if lines.next().is_some() {
            return Err(Error::Format("trailing data after the velocity lines".into()));
        }
        Lattice::new(dim, velocities, weights, sound_speed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn d2q9_moments() {
        let l = d2q9();
        assert_close(moment(&l, &[]).unwrap(), 1.0, 1e-15);
        assert_close(moment(&l, &[0, 0]).unwrap(), 1.0 / 3.0, 1e-15);
        assert_eq!(moment(&l, &[0, 1, 1]).unwrap(), 0.0);
        assert!(matches!(moment(&l, &[2]), Err(Error::Domain(_))));
    }

    #[test]
    fn d2q9_layout() {
        let l = d2q9();
        assert_eq!(l.weights()[0], 4.0 / 9.0);
        assert_eq!(l.velocities()[5], vec![1.0, 1.0]);
        assert_eq!(l.len(), 9);
        assert!(validate_isotropy(&l, 1e-12).unwrap().satisfied);
    }

    #[test]
    fn perturbed_rest_weight_fails() {
        let l = d2q9();
        let mut w = l.weights().to_vec();
        w[0] += 1e-3;
        let bad = Lattice::new(2, l.velocities().to_vec(), w, l.sound_speed()).unwrap();
        let report = validate_isotropy(&bad, 1e-12).unwrap();
        assert!(!report.satisfied);
        assert_close(report.residuals[&vec![]], 1e-3, 1e-14);
    }

    #[test]
    fn d2q7_layout() {
        let l = d2q7();
        assert_eq!(l.weights()[0], 0.5);
        assert!(l.weights()[1..].iter().all(|&w| w == 1.0 / 12.0));
        assert_eq!(l.velocities()[3], vec![-1.0, 0.0]);
        for (j, v) in l.velocities().iter().enumerate().skip(1) {
            let angle = 2.0 * std::f64::consts::PI * j as f64 / 6.0;
            assert_close(v[0], angle.cos(), 1e-15);
            assert_close(v[1], angle.sin(), 1e-15);
        }
        assert!(validate_isotropy(&l, 1e-12).unwrap().satisfied);
    }

    #[test]
    fn d3_family_named_points() {
        let q15 = d3_family(D3FamilyParams::d3q15()).unwrap();
        assert_eq!(q15.len(), 15);
        let q19 = d3_family(D3FamilyParams::d3q19()).unwrap();
        assert_eq!(q19.len(), 19);
        let q27 = d3_family(D3FamilyParams::d3q27()).unwrap();
        assert_eq!(q27.len(), 27);
        for l in [&q15, &q19, &q27] {
            assert!(validate_isotropy(l, 1e-12).unwrap().satisfied);
        }
    }

    #[test]
    fn d3_family_asymmetric_point_is_isotropic() {
        let p = D3FamilyParams::new(1.0 / 144.0, 1.0 / 576.0, -1.0 / 576.0, 1.0 / 1152.0);
        let l = d3_family(p).unwrap();
        assert_eq!(l.len(), 27);
        assert!(validate_isotropy(&l, 1e-12).unwrap().satisfied);
    }

    #[test]
    fn d3_family_rejects_constraint_violations() {
        let err = d3_family(D3FamilyParams::new(1.0 / 72.0, 1.0 / 144.0, 0.0, 0.0)).unwrap_err();
        assert!(err.to_string().contains("c + |c_1| + |c_2|"), "{err}");
        let err = d3_family(D3FamilyParams::new(0.0, 1e-3, 0.0, 0.0)).unwrap_err();
        assert!(err.to_string().contains("<= c"), "{err}");
        assert!(d3_family(D3FamilyParams::new(-1e-3, 0.0, 0.0, 0.0)).is_err());
        assert!(d3_family(D3FamilyParams::new(0.02, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn scaling() {
        let l = d2q9();
        assert_eq!(scale(&l, 1.0).unwrap(), l);
        assert_close(scale(&l, 2.0).unwrap().sound_speed(), 2.0 / 3f64.sqrt(), 1e-15);
        // Dividing instead would break the second-moment condition.
        let wrong = Lattice::new(
            2,
            scale(&l, 2.0).unwrap().velocities().to_vec(),
            l.weights().to_vec(),
            1.0 / (2.0 * 3f64.sqrt()),
        )
        .unwrap();
        assert!(!validate_isotropy(&wrong, 1e-12).unwrap().satisfied);
        assert!(validate_isotropy(&scale(&l, 0.5).unwrap(), 1e-12).unwrap().satisfied);
        assert!(scale(&l, 0.0).is_err());
        assert!(scale(&l, -1.0).is_err());
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(Lattice::new(2, vec![vec![0.0, 0.0]], vec![0.0], 1.0).is_err());
        assert!(Lattice::new(2, vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![0.5, 0.5], 1.0).is_err());
        assert!(Lattice::new(2, vec![vec![0.0]], vec![1.0], 1.0).is_err());
        assert!(Lattice::new(2, vec![vec![0.0, 0.0]], vec![1.0, 1.0], 1.0).is_err());
        assert!(Lattice::new(2, vec![vec![0.0, 0.0]], vec![1.0], 0.0).is_err());
    }

    #[test]
    fn report_counts_symmetry_reduced_conditions() {
        // 2D: 1 + 2 + 3 + 4 + 5 nondecreasing multi-indices.
        let r = validate_isotropy(&d2q9(), 1e-12).unwrap();
        assert_eq!(r.residuals.len(), 15);
        // 3D: 1 + 3 + 6 + 10 + 15.
        let r = validate_isotropy(&d3_family(D3FamilyParams::d3q19()).unwrap(), 1e-12).unwrap();
        assert_eq!(r.residuals.len(), 35);
        assert!(validate_isotropy(&d2q9(), 0.0).is_err());
    }

    #[test]
    fn text_round_trip() {
        for l in [d2q9(), d2q7(), d3_family(D3FamilyParams::d3q27()).unwrap()] {
            let text = l.to_string();
            let back: Lattice = text.parse().unwrap();
            assert_eq!(back, l);
        }
        let first = d2q9().to_string();
        assert!(first.starts_with("2 8 "));
    }

    #[test]
    fn text_parse_errors() {
        assert!(matches!("".parse::<Lattice>(), Err(Error::Format(_))));
        assert!(matches!("2 0 1\n1 0\n".parse::<Lattice>(), Err(Error::Format(_))));
        assert!(matches!("2 1 1\n1 0 0\n".parse::<Lattice>(), Err(Error::Format(_))));
        assert!(matches!("2 x 1\n".parse::<Lattice>(), Err(Error::Format(_))));
    }

    #[test]
    fn builtin_names() {
        for name in ["d2q9", "D2Q7", "d3q15", "d3q19", "d3q27"] {
            assert!(Lattice::builtin(name).is_some(), "{name}");
        }
        assert!(Lattice::builtin("d2q5").is_none());
    }
}
