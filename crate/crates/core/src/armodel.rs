//! Spatial prior and frequency dynamics.
//!
//! The state at one frequency stacks four radioelectric properties over the
//! `N` elementary zones, property-major: `[eps' zones, eps'' zones, mu' zones,
//! mu'' zones]`. Zones are grouped into contiguous material areas. The prior at
//! stage k is `N(m_k, P_k)` with `P_k` block-diagonal over (property, area)
//! and geometric spatial correlation `rho_S^{|i-j|}` inside each block.
//!
//! Across frequencies the state follows the generalized AR process
//!
//! ```text
//! x_{k+1} = m_{k+1} + D H_{k+1} H_k^{-1} (x_k - m_k) + sqrt(I - D^2) H_{k+1} V_k
//! ```
//!
//! where `H_k` is the symmetric square root of `P_k` and `D` is the diagonal
//! correlation matrix expanded from the hyper-parameter rho. Because `D` is
//! constant on the blocks of `P_k`, the two commute and every marginal stays
//! `N(m_k, P_k)`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lgss::{GaussianMoments, Transition};
use crate::linalg::{eigen_checked, symmetrize};

pub const NUM_PROPERTIES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    EpsReal,
    EpsImag,
    MuReal,
    MuImag,
}

impl Property {
    pub const ALL: [Property; NUM_PROPERTIES] = [
        Property::EpsReal,
        Property::EpsImag,
        Property::MuReal,
        Property::MuImag,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Property::EpsReal => "eps_real",
            Property::EpsImag => "eps_imag",
            Property::MuReal => "mu_real",
            Property::MuImag => "mu_imag",
        }
    }
}

/// Contiguous grouping of zones into material areas.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaLayout {
    area_sizes: Vec<usize>,
}

impl AreaLayout {
    pub fn new(area_sizes: Vec<usize>) -> Result<Self> {
        let layout = Self { area_sizes };
        layout.validate()?;
        Ok(layout)
    }

    /// Splits `num_zones` into `num_areas` contiguous areas, larger areas last.
    pub fn even(num_zones: usize, num_areas: usize) -> Result<Self> {
        if num_areas == 0 || num_zones < num_areas {
            return Err(Error::param(format!(
                "cannot split {num_zones} zones into {num_areas} areas"
            )));
        }
        let base = num_zones / num_areas;
        let extra = num_zones % num_areas;
        Self::new(
            (0..num_areas)
                .map(|a| base + usize::from(a >= num_areas - extra))
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.area_sizes.is_empty() {
            return Err(Error::param("layout needs at least one area"));
        }
        if let Some(a) = self.area_sizes.iter().position(|&s| s == 0) {
            return Err(Error::param(format!("area {a} is empty")));
        }
        Ok(())
    }

    pub fn area_sizes(&self) -> &[usize] {
        &self.area_sizes
    }

    pub fn num_areas(&self) -> usize {
        self.area_sizes.len()
    }

    pub fn num_zones(&self) -> usize {
        self.area_sizes.iter().sum()
    }

    pub fn state_dim(&self) -> usize {
        NUM_PROPERTIES * self.num_zones()
    }

    /// Zone indices belonging to `area`.
    pub fn zones(&self, area: usize) -> Range<usize> {
        let start: usize = self.area_sizes[..area].iter().sum();
        start..start + self.area_sizes[area]
    }

    pub fn zone_area(&self) -> Vec<usize> {
        self.area_sizes
            .iter()
            .enumerate()
            .flat_map(|(a, &s)| std::iter::repeat_n(a, s))
            .collect()
    }

    /// State indices of one (property, area) block.
    pub fn block(&self, property: Property, area: usize) -> Range<usize> {
        let offset = property.index() * self.num_zones();
        let z = self.zones(area);
        offset + z.start..offset + z.end
    }

    /// (property, area) blocks in state order.
    pub fn blocks(&self) -> impl Iterator<Item = (Property, usize, Range<usize>)> + '_ {
        Property::ALL.into_iter().flat_map(move |p| {
            (0..self.num_areas()).map(move |a| (p, a, self.block(p, a)))
        })
    }
}

/// Strictly increasing, positive analysis frequencies in GHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrequencyGrid {
    values_ghz: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(values_ghz: Vec<f64>) -> Result<Self> {
        let grid = Self { values_ghz };
        grid.validate()?;
        Ok(grid)
    }

    /// `count` regularly spaced frequencies from `first` to `last` inclusive.
    pub fn regular(first: f64, last: f64, count: usize) -> Result<Self> {
        if count == 1 {
            return Self::new(vec![first]);
        }
        let step = (last - first) / (count - 1) as f64;
        Self::new((0..count).map(|k| first + step * k as f64).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.values_ghz.is_empty() {
            return Err(Error::param("frequency grid is empty"));
        }
        if self.values_ghz.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::param("frequencies must be positive and finite"));
        }
        if self.values_ghz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("frequencies must be strictly increasing"));
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values_ghz
    }

    pub fn len(&self) -> usize {
        self.values_ghz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_ghz.is_empty()
    }

    /// Position of `k` in the band, mapped to [0, 1].
    pub fn normalized(&self, k: usize) -> f64 {
        let first = self.values_ghz[0];
        let last = *self.values_ghz.last().unwrap();
        if last > first {
            (self.values_ghz[k] - first) / (last - first)
        } else {
            0.0
        }
    }
}

/// Reference values tabulated per (property, area) at a set of frequency
/// nodes, interpolated linearly and held constant outside the nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    pub nodes_ghz: Vec<f64>,
    /// Indexed `[property][area][node]`.
    pub values: Vec<Vec<Vec<f64>>>,
}

impl ReferenceTable {
    /// Frequency-independent reference values, indexed `[property][area]`.
    pub fn constant(values: Vec<Vec<f64>>) -> Self {
        Self {
            nodes_ghz: vec![1.0],
            values: values
                .into_iter()
                .map(|areas| areas.into_iter().map(|v| vec![v]).collect())
                .collect(),
        }
    }

    /// Shipped reference profiles: smooth in frequency, non-negative, at most 20.
    pub fn default_profiles(num_areas: usize, first_ghz: f64, last_ghz: f64) -> Self {
        const NODES: usize = 5;
        let nodes_ghz: Vec<f64> = (0..NODES)
            .map(|i| first_ghz + (last_ghz - first_ghz) * i as f64 / (NODES - 1) as f64)
            .collect();
        let profile = |p: Property, a: f64, t: f64| -> f64 {
            match p {
                Property::EpsReal => 2.0 + 1.5 * a + 0.6 * t - 0.4 * t * t,
                Property::EpsImag => 0.3 + 0.4 * a + 0.5 * t,
                Property::MuReal => 1.0 + 0.7 * a - 0.4 * t + 0.2 * t * t,
                Property::MuImag => 0.1 + 0.3 * a + 0.8 * t - 0.3 * t * t,
            }
        };
        let values = Property::ALL
            .iter()
            .map(|&p| {
                (0..num_areas)
                    .map(|a| {
                        (0..NODES)
                            .map(|i| profile(p, a as f64, i as f64 / (NODES - 1) as f64))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { nodes_ghz, values }
    }

    pub fn validate(&self, num_areas: usize) -> Result<()> {
        if self.nodes_ghz.is_empty() || self.nodes_ghz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("reference nodes must be non-empty and increasing"));
        }
        if self.values.len() != NUM_PROPERTIES {
            return Err(Error::param("reference table needs 4 properties"));
        }
        for areas in &self.values {
            if areas.len() != num_areas {
                return Err(Error::param(format!(
                    "reference table has {} areas, layout has {num_areas}",
                    areas.len()
                )));
            }
            if areas.iter().any(|nodes| nodes.len() != self.nodes_ghz.len()) {
                return Err(Error::param("reference table node count mismatch"));
            }
        }
        Ok(())
    }

    pub fn value(&self, property: Property, area: usize, freq_ghz: f64) -> f64 {
        let table = &self.values[property.index()][area];
        let nodes = &self.nodes_ghz;
        if freq_ghz <= nodes[0] {
            return table[0];
        }
        if freq_ghz >= nodes[nodes.len() - 1] {
            return table[nodes.len() - 1];
        }
        let i = nodes.partition_point(|&f| f <= freq_ghz) - 1;
        let w = (freq_ghz - nodes[i]) / (nodes[i + 1] - nodes[i]);
        table[i] * (1.0 - w) + table[i + 1] * w
    }
}

/// Per-component prior standard deviation `floor + slope * m_k(i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaRule {
    pub floor: f64,
    pub slope: f64,
}

impl Default for SigmaRule {
    fn default() -> Self {
        Self {
            floor: 1.0,
            slope: 0.15,
        }
    }
}

impl SigmaRule {
    pub fn sigma(&self, mean: f64) -> f64 {
        self.floor + self.slope * mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub layout: AreaLayout,
    pub frequencies_ghz: FrequencyGrid,
    pub reference: ReferenceTable,
    pub rho_s: f64,
    #[serde(default)]
    pub sigma_rule: SigmaRule,
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        self.frequencies_ghz.validate()?;
        self.reference.validate(self.layout.num_areas())?;
        if !(0.0..1.0).contains(&self.rho_s) {
            return Err(Error::param(format!("rho_S = {} outside [0, 1)", self.rho_s)));
        }
        for k in 0..self.num_stages() {
            if let Some(bad) = build_prior_mean(self, k).iter().find(|&&m| self.sigma_rule.sigma(m) <= 0.0) {
                return Err(Error::param(format!(
                    "sigma rule gives a non-positive deviation for mean {bad} at stage {k}"
                )));
            }
        }
        Ok(())
    }

    pub fn num_stages(&self) -> usize {
        self.frequencies_ghz.len()
    }

    pub fn state_dim(&self) -> usize {
        self.layout.state_dim()
    }

    pub fn reference_value(&self, property: Property, area: usize, k: usize) -> f64 {
        self.reference
            .value(property, area, self.frequencies_ghz.values()[k])
    }
}

/// How the correlation hyper-parameter maps onto (property, area) blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    /// One value shared by every block.
    Scalar,
    /// One value per material area.
    PerArea,
    /// One value per (property, area), property-major.
    PerAreaProperty,
}

impl RhoMode {
    pub fn dim(self, layout: &AreaLayout) -> usize {
        match self {
            RhoMode::Scalar => 1,
            RhoMode::PerArea => layout.num_areas(),
            RhoMode::PerAreaProperty => NUM_PROPERTIES * layout.num_areas(),
        }
    }

    /// Index into the rho vector for one (property, area) block.
    pub fn component(self, property: Property, area: usize, num_areas: usize) -> usize {
        match self {
            RhoMode::Scalar => 0,
            RhoMode::PerArea => area,
            RhoMode::PerAreaProperty => property.index() * num_areas + area,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationParam {
    pub mode: RhoMode,
    pub values: Vec<f64>,
}

impl CorrelationParam {
    pub fn new(mode: RhoMode, values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param(format!("rho component {v} outside [0, 1]")));
        }
        Ok(Self { mode, values })
    }

    pub fn constant(mode: RhoMode, layout: &AreaLayout, value: f64) -> Result<Self> {
        Self::new(mode, vec![value; mode.dim(layout)])
    }

    pub fn check_layout(&self, layout: &AreaLayout) -> Result<()> {
        let want = self.mode.dim(layout);
        if self.values.len() != want {
            return Err(Error::dim(format!(
                "{:?} rho needs {want} components, got {}",
                self.mode,
                self.values.len()
            )));
        }
        Ok(())
    }
}

pub fn build_prior_mean(spec: &PriorSpec, k: usize) -> DVector<f64> {
    let layout = &spec.layout;
    let mut m = DVector::zeros(layout.state_dim());
    for (p, a, range) in layout.blocks() {
        let v = spec.reference_value(p, a, k);
        m.rows_mut(range.start, range.len()).fill(v);
    }
    m
}

pub fn build_prior_cov(spec: &PriorSpec, k: usize) -> DMatrix<f64> {
    let mean = build_prior_mean(spec, k);
    let n = spec.state_dim();
    let mut cov = DMatrix::zeros(n, n);
    for (_, _, range) in spec.layout.blocks() {
        for i in range.clone() {
            let si = spec.sigma_rule.sigma(mean[i]);
            for j in range.clone() {
                let sj = spec.sigma_rule.sigma(mean[j]);
                cov[(i, j)] = si * sj * spec.rho_s.powi(i.abs_diff(j) as i32);
            }
        }
    }
    cov
}

/// Unique symmetric positive-definite square root, via eigendecomposition.
pub fn sym_sqrt(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !p.is_square() {
        return Err(Error::dim("sym_sqrt needs a square matrix"));
    }
    let eig = eigen_checked(p, 0.0)?;
    let v = &eig.eigenvectors;
    let root = eig.eigenvalues.map(f64::sqrt);
    Ok(symmetrize(&(v * DMatrix::from_diagonal(&root) * v.transpose())))
}

/// Diagonal of D_rho in state order.
pub fn rho_diagonal(rho: &CorrelationParam, layout: &AreaLayout) -> Result<DVector<f64>> {
    rho.check_layout(layout)?;
    let mut d = DVector::zeros(layout.state_dim());
    for (p, a, range) in layout.blocks() {
        let v = rho.values[rho.mode.component(p, a, layout.num_areas())];
        d.rows_mut(range.start, range.len()).fill(v);
    }
    Ok(d)
}

pub fn expand_rho(rho: &CorrelationParam, layout: &AreaLayout) -> Result<DMatrix<f64>> {
    Ok(DMatrix::from_diagonal(&rho_diagonal(rho, layout)?))
}

/// Relative eigenvalue floor below which `H_k` is treated as singular.
const SQRT_EIGEN_FLOOR: f64 = 1e-12;

/// Per-stage prior moments, square roots, and the rho-independent factors
/// `H_{k+1} H_k^{-1}` reused by every call to [`PriorStructure::dynamics`].
#[derive(Debug, Clone)]
pub struct PriorStructure {
    pub layout: AreaLayout,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    pub roots: Vec<DMatrix<f64>>,
    ratios: Vec<DMatrix<f64>>,
}

impl PriorStructure {
    pub fn new(spec: &PriorSpec) -> Result<Self> {
        spec.validate()?;
        let k_f = spec.num_stages();
        let means: Vec<_> = (0..k_f).map(|k| build_prior_mean(spec, k)).collect();
        let covs: Vec<_> = (0..k_f).map(|k| build_prior_cov(spec, k)).collect();
        let mut roots = Vec::with_capacity(k_f);
        let mut inv_roots = Vec::with_capacity(k_f);
        for cov in &covs {
            let eig = eigen_checked(cov, SQRT_EIGEN_FLOOR * SQRT_EIGEN_FLOOR)?;
            let v = &eig.eigenvectors;
            let root = eig.eigenvalues.map(f64::sqrt);
            roots.push(symmetrize(&(v * DMatrix::from_diagonal(&root) * v.transpose())));
            inv_roots.push(v * DMatrix::from_diagonal(&root.map(|r| 1.0 / r)) * v.transpose());
        }
        let ratios = (0..k_f.saturating_sub(1))
            .map(|k| &roots[k + 1] * &inv_roots[k])
            .collect();
        Ok(Self {
            layout: spec.layout.clone(),
            means,
            covs,
            roots,
            ratios,
        })
    }

    pub fn num_stages(&self) -> usize {
        self.means.len()
    }

    pub fn state_dim(&self) -> usize {
        self.layout.state_dim()
    }

    pub fn init(&self) -> GaussianMoments {
        GaussianMoments {
            mean: self.means[0].clone(),
            cov: self.covs[0].clone(),
        }
    }

    /// Transitions `M_k = D H_{k+1} H_k^{-1}`, `b_k = m_{k+1} - M_k m_k`,
    /// `Q_k = H_{k+1} (I - D^2) H_{k+1}`.
    pub fn dynamics(&self, rho: &CorrelationParam) -> Result<Vec<Transition>> {
        let d = rho_diagonal(rho, &self.layout)?;
        let one_minus_d2 = d.map(|v| 1.0 - v * v);
        Ok((0..self.num_stages() - 1)
            .map(|k| {
                let mut matrix = self.ratios[k].clone();
                for (i, mut row) in matrix.row_iter_mut().enumerate() {
                    row *= d[i];
                }
                let offset = &self.means[k + 1] - &matrix * &self.means[k];
                let h = &self.roots[k + 1];
                let mut scaled = h.clone();
                for (j, mut col) in scaled.column_iter_mut().enumerate() {
                    col *= one_minus_d2[j];
                }
                let noise_cov = symmetrize(&(scaled * h));
                Transition {
                    matrix,
                    offset,
                    noise_cov,
                }
            })
            .collect())
    }
}

/// Initial moments and transitions of the AR process for one rho.
#[derive(Debug, Clone)]
pub struct Dynamics {
    pub init: GaussianMoments,
    pub transitions: Vec<Transition>,
}

pub fn build_dynamics(spec: &PriorSpec, rho: &CorrelationParam) -> Result<Dynamics> {
    let structure = PriorStructure::new(spec)?;
    Ok(Dynamics {
        init: structure.init(),
        transitions: structure.dynamics(rho)?,
    })
}

/// Largest stacked dimension accepted by [`joint_ar_covariance`].
pub const JOINT_LIMIT: usize = 2000;

/// Joint covariance of `(x_1, ..., x_K)`: `blockdiag(H) [D^{|i-j|}] blockdiag(H)ᵀ`.
pub fn joint_ar_covariance(spec: &PriorSpec, rho: &CorrelationParam) -> Result<DMatrix<f64>> {
    let n = spec.state_dim();
    let k_f = spec.num_stages();
    let size = n * k_f;
    if size > JOINT_LIMIT {
        return Err(Error::SizeGuard {
            size,
            limit: JOINT_LIMIT,
        });
    }
    let d = rho_diagonal(rho, &spec.layout)?;
    let roots = (0..k_f)
        .map(|k| sym_sqrt(&build_prior_cov(spec, k)))
        .collect::<Result<Vec<_>>>()?;
    let mut joint = DMatrix::zeros(size, size);
    for i in 0..k_f {
        for j in 0..k_f {
            let power = d.map(|v| v.powi(i.abs_diff(j) as i32));
            let block = &roots[i] * DMatrix::from_diagonal(&power) * roots[j].transpose();
            joint.view_mut((i * n, j * n), (n, n)).copy_from(&block);
        }
    }
    Ok(symmetrize(&joint))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sizes: Vec<usize>, k_f: usize, rho_s: f64) -> PriorSpec {
        let layout = AreaLayout::new(sizes).unwrap();
        let na = layout.num_areas();
        PriorSpec {
            reference: ReferenceTable::default_profiles(na, 0.2, 8.0),
            layout,
            frequencies_ghz: FrequencyGrid::regular(0.2, 8.0, k_f).unwrap(),
            rho_s,
            sigma_rule: SigmaRule::default(),
        }
    }

    #[test]
    fn single_area_mean_replicates_reference() {
        let mut s = spec(vec![2], 1, 0.95);
        s.reference = ReferenceTable::constant(vec![vec![3.0], vec![0.0], vec![0.0], vec![0.0]]);
        let m = build_prior_mean(&s, 0);
        assert_eq!(m.as_slice(), &[3.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn block_pattern_follows_zone_area_map() {
        let s = spec(vec![3, 4, 4, 4, 4], 3, 0.95);
        let zone_area = s.layout.zone_area();
        for k in 0..3 {
            let m = build_prior_mean(&s, k);
            for p in Property::ALL {
                for (z, &a) in zone_area.iter().enumerate() {
                    let expected = s.reference_value(p, a, k);
                    assert_eq!(m[p.index() * 19 + z], expected);
                }
            }
        }
    }

    #[test]
    fn constant_reference_gives_constant_mean() {
        let mut s = spec(vec![2, 3], 4, 0.95);
        s.reference = ReferenceTable::constant(vec![vec![1.0, 2.0]; 4]);
        let m0 = build_prior_mean(&s, 0);
        for k in 1..4 {
            assert_eq!(build_prior_mean(&s, k), m0);
        }
    }

    #[test]
    fn singleton_area_block_is_variance() {
        let mut s = spec(vec![1], 1, 0.95);
        s.reference = ReferenceTable::constant(vec![vec![0.0]; 4]);
        s.sigma_rule = SigmaRule {
            floor: 2.0,
            slope: 0.0,
        };
        let p = build_prior_cov(&s, 0);
        assert_eq!(p, DMatrix::from_diagonal_element(4, 4, 4.0));
    }

    #[test]
    fn three_zone_block_matches_geometric_correlation() {
        let mut s = spec(vec![3], 1, 0.95);
        s.reference = ReferenceTable::constant(vec![vec![0.0]; 4]);
        let p = build_prior_cov(&s, 0);
        let expected = [[1.0, 0.95, 0.9025], [0.95, 1.0, 0.95], [0.9025, 0.95, 1.0]];
        for prop in 0..4 {
            for i in 0..3 {
                for j in 0..3 {
                    assert!((p[(prop * 3 + i, prop * 3 + j)] - expected[i][j]).abs() < 1e-15);
                }
            }
        }
        // no correlation across properties
        assert_eq!(p[(0, 3)], 0.0);
    }

    #[test]
    fn prior_cov_is_positive_definite() {
        for rho_s in [0.0, 0.5, 0.95, 0.999] {
            let s = spec(vec![3, 4, 4, 4, 4], 2, rho_s);
            let p = build_prior_cov(&s, 1);
            assert_eq!(p, p.transpose());
            assert!(p.symmetric_eigen().eigenvalues.min() > 0.0, "rho_s = {rho_s}");
        }
    }

    #[test]
    fn sqrt_of_scaled_identity() {
        let h = sym_sqrt(&DMatrix::from_diagonal_element(3, 3, 4.0)).unwrap();
        assert!((h - DMatrix::from_diagonal_element(3, 3, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(sym_sqrt(&p), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn scalar_rho_expands_to_scaled_identity() {
        let layout = AreaLayout::new(vec![1, 1]).unwrap();
        let rho = CorrelationParam::new(RhoMode::Scalar, vec![0.7]).unwrap();
        assert_eq!(expand_rho(&rho, &layout).unwrap(), DMatrix::from_diagonal_element(8, 8, 0.7));
    }

    #[test]
    fn per_area_rho_repeats_in_each_property() {
        let layout = AreaLayout::new(vec![1, 1]).unwrap();
        let rho = CorrelationParam::new(RhoMode::PerArea, vec![0.2, 0.9]).unwrap();
        let d = rho_diagonal(&rho, &layout).unwrap();
        assert_eq!(d.as_slice(), &[0.2, 0.9, 0.2, 0.9, 0.2, 0.9, 0.2, 0.9]);
    }

    #[test]
    fn per_area_property_entries_repeat_by_area_size() {
        let layout = AreaLayout::new(vec![2, 3]).unwrap();
        let values: Vec<f64> = (0..8).map(|i| i as f64 / 10.0).collect();
        let rho = CorrelationParam::new(RhoMode::PerAreaProperty, values.clone()).unwrap();
        let d = rho_diagonal(&rho, &layout).unwrap();
        for (i, v) in values.iter().enumerate() {
            let count = d.iter().filter(|&&x| x == *v).count();
            assert_eq!(count, layout.area_sizes()[i % 2]);
        }
    }

    #[test]
    fn rho_dimension_mismatch_is_an_error() {
        let layout = AreaLayout::new(vec![2, 3]).unwrap();
        let rho = CorrelationParam::new(RhoMode::PerArea, vec![0.5]).unwrap();
        assert!(matches!(expand_rho(&rho, &layout), Err(Error::Dimension(_))));
        assert!(CorrelationParam::new(RhoMode::Scalar, vec![1.2]).is_err());
    }

    #[test]
    fn perfect_correlation_freezes_the_process() {
        let mut s = spec(vec![2, 2], 3, 0.9);
        s.reference = ReferenceTable::constant(vec![vec![1.0, 2.0]; 4]);
        let rho = CorrelationParam::constant(RhoMode::PerArea, &s.layout, 1.0).unwrap();
        let dynamics = build_dynamics(&s, &rho).unwrap();
        let n = s.state_dim();
        for t in &dynamics.transitions {
            assert!((&t.matrix - DMatrix::<f64>::identity(n, n)).norm() < 1e-12);
            assert!(t.offset.norm() < 1e-12);
            assert!(t.noise_cov.norm() < 1e-12);
        }
    }

    #[test]
    fn zero_correlation_gives_independent_stages() {
        let s = spec(vec![2, 3], 3, 0.9);
        let rho = CorrelationParam::constant(RhoMode::Scalar, &s.layout, 0.0).unwrap();
        let dynamics = build_dynamics(&s, &rho).unwrap();
        for (k, t) in dynamics.transitions.iter().enumerate() {
            assert_eq!(t.matrix.norm(), 0.0);
            assert!((&t.offset - build_prior_mean(&s, k + 1)).norm() < 1e-12);
            let p = build_prior_cov(&s, k + 1);
            assert!((&t.noise_cov - &p).norm() < 1e-10 * p.norm());
        }
    }

    #[test]
    fn joint_covariance_single_stage_is_prior() {
        let s = spec(vec![2, 3], 1, 0.95);
        let rho = CorrelationParam::constant(RhoMode::Scalar, &s.layout, 0.4).unwrap();
        let joint = joint_ar_covariance(&s, &rho).unwrap();
        let p = build_prior_cov(&s, 0);
        assert!((joint - &p).norm() < 1e-10 * p.norm());
    }

    #[test]
    fn joint_covariance_size_guard() {
        let s = spec(vec![100, 100], 3, 0.95);
        let rho = CorrelationParam::constant(RhoMode::Scalar, &s.layout, 0.4).unwrap();
        assert!(matches!(
            joint_ar_covariance(&s, &rho),
            Err(Error::SizeGuard { .. })
        ));
    }

    #[test]
    fn even_layout_puts_larger_areas_last() {
        let layout = AreaLayout::even(19, 5).unwrap();
        assert_eq!(layout.area_sizes(), &[3, 4, 4, 4, 4]);
        assert!(AreaLayout::new(vec![2, 0]).is_err());
    }

    #[test]
    fn reference_interpolates_linearly() {
        let table = ReferenceTable {
            nodes_ghz: vec![1.0, 3.0],
            values: vec![vec![vec![0.0, 4.0]]; 4],
        };
        assert_eq!(table.value(Property::MuReal, 0, 2.0), 2.0);
        assert_eq!(table.value(Property::MuReal, 0, 0.5), 0.0);
        assert_eq!(table.value(Property::MuReal, 0, 9.0), 4.0);
    }

    #[test]
    fn default_profiles_stay_in_range() {
        let table = ReferenceTable::default_profiles(5, 0.2, 8.0);
        for prop in &table.values {
            for area in prop {
                assert!(area.iter().all(|&v| (0.0..=20.0).contains(&v)));
            }
        }
    }
}
