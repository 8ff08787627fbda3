//! Landmark fitting: vertex and weighted-parameter distance costs, a
//! Levenberg-Marquardt landmark fit and the meta-joint branch-selecting fit.
//!
//! All parameter vectors use the flattened order of
//! [`ModelParams::to_flat`]: `[f, pitch, yaw, roll, t_x, t_y, id..., exp...]`.
//! Rotations are optimized directly in Euler-angle space; poses far from
//! gimbal lock (|pitch| near 90 degrees) are assumed.

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{LmState, ResidualModel, Step};
use crate::model::{
    project_model, project_point, rot_x, rot_y, rot_z, rotation_from_euler, MorphableBasis,
    ModelParams, POSE_PARAMS,
};

/// Solver settings shared by [`fit_landmarks`] and [`meta_joint_fit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Relative cost decrease below which a fit counts as converged.
    pub convergence_tol: f64,
    pub damping_init: f64,
    pub id_regularization: f64,
    pub exp_regularization: f64,
    /// Lookahead steps per branch and meta-iteration.
    pub meta_k: usize,
    pub meta_test_fraction: f64,
    /// Strength of the VDC/WPDC anchor terms relative to the landmark term.
    pub meta_anchor_weight: f64,
    pub rng_seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            convergence_tol: 1e-8,
            damping_init: 1e-3,
            id_regularization: 1e-4,
            exp_regularization: 1e-3,
            meta_k: 3,
            meta_test_fraction: 0.25,
            meta_anchor_weight: 1e-4,
            rng_seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.meta_k == 0 {
            return Err(Error::Config("max_iterations and meta_k must be positive".into()));
        }
        if !(self.meta_test_fraction > 0.0 && self.meta_test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "meta_test_fraction must lie in (0, 1), got {}",
                self.meta_test_fraction
            )));
        }
        let positive = [self.convergence_tol, self.damping_init];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("tolerances and damping must be strictly positive".into()));
        }
        let non_negative = [
            self.id_regularization,
            self.exp_regularization,
            self.meta_anchor_weight,
        ];
        if non_negative.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("regularization weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Which cost drove a meta-iteration's kept candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "VDC")]
    Vdc,
    #[serde(rename = "WPDC")]
    Wpdc,
}

/// One meta-iteration: the anchor both branches started from and their
/// meta-test errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub anchor: ModelParams,
    pub vdc_test_error: f64,
    pub wpdc_test_error: f64,
    pub chosen: Branch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    pub final_cost: f64,
    /// Accepted optimizer steps.
    pub iterations: usize,
    /// Objective after the start point and after every accepted step (or
    /// kept meta-iteration).
    pub cost_trace: Vec<f64>,
    pub branch_trace: Vec<Branch>,
    pub meta_trace: Vec<MetaRecord>,
    pub converged: bool,
    pub diagnostic: Option<String>,
}

/// Mean squared distance between the projected vertices of two parameter sets.
pub fn vdc(basis: &MorphableBasis, params_pred: &ModelParams, params_gt: &ModelParams) -> Result<f64> {
    let pred = project_model(basis, params_pred)?;
    let gt = project_model(basis, params_gt)?;
    Ok(sum_sq_dist(&pred, &gt) / pred.len() as f64)
}

/// Per-parameter importance: the vertex displacement caused by swapping one
/// ground-truth parameter for its predicted value, normalized by the largest
/// such displacement. All-zero displacements give uniform weights `1/P`.
pub fn wpdc_weights(
    basis: &MorphableBasis,
    params_pred: &ModelParams,
    params_gt: &ModelParams,
) -> Result<Vec<f64>> {
    params_pred.check_compatible(basis)?;
    let gt_proj = project_model(basis, params_gt)?;
    let gt = params_gt.to_flat();
    let pred = params_pred.to_flat();
    let mut raw = vec![0.0; gt.len()];
    for i in 0..gt.len() {
        if pred[i] == gt[i] {
            continue;
        }
        let mut swapped = gt.clone();
        swapped[i] = pred[i];
        let p = ModelParams::from_flat(&swapped, basis.id_dim(), basis.exp_dim())?;
        raw[i] = sum_sq_dist(&project_model(basis, &p)?, &gt_proj).sqrt();
    }
    let max = raw.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        Ok(raw.into_iter().map(|w| w / max).collect())
    } else {
        let p = raw.len() as f64;
        Ok(vec![1.0 / p; raw.len()])
    }
}

/// `sum_i w_i (pred_i - gt_i)^2` with [`wpdc_weights`].
pub fn wpdc(basis: &MorphableBasis, params_pred: &ModelParams, params_gt: &ModelParams) -> Result<f64> {
    let w = wpdc_weights(basis, params_pred, params_gt)?;
    Ok(weighted_param_distance(&w, &params_pred.to_flat(), &params_gt.to_flat()))
}

fn weighted_param_distance(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter()
        .zip(a.iter().zip(b))
        .map(|(w, (x, y))| w * (x - y) * (x - y))
        .sum()
}

fn sum_sq_dist(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
        .sum()
}

/// Rotation and its partial derivatives with respect to pitch, yaw, roll.
struct PoseFrame {
    scale: f64,
    rotation: Matrix3<f64>,
    d_rotation: [Matrix3<f64>; 3],
}

impl PoseFrame {
    fn new(params: &ModelParams) -> Self {
        let a = params.rotation;
        let (rx, ry, rz) = (rot_x(a.pitch), rot_y(a.yaw), rot_z(a.roll));
        let (sx, cx) = a.pitch.sin_cos();
        let (sy, cy) = a.yaw.sin_cos();
        let (sz, cz) = a.roll.sin_cos();
        let drx = Matrix3::new(0.0, 0.0, 0.0, 0.0, -sx, -cx, 0.0, cx, -sx);
        let dry = Matrix3::new(-sy, 0.0, cy, 0.0, 0.0, 0.0, -cy, 0.0, -sy);
        let drz = Matrix3::new(-sz, -cz, 0.0, cz, -sz, 0.0, 0.0, 0.0, 0.0);
        Self {
            scale: params.scale,
            rotation: rz * ry * rx,
            d_rotation: [rz * ry * drx, rz * dry * rx, drz * ry * rx],
        }
    }

    /// Writes the 2 x P Jacobian of vertex `i`'s projection, times `weight`,
    /// into rows `row, row + 1` of `jac`.
    fn vertex_rows(
        &self,
        basis: &MorphableBasis,
        params: &ModelParams,
        i: usize,
        weight: f64,
        jac: &mut DMatrix<f64>,
        row: usize,
    ) {
        let v = basis.shape_vertex(i, &params.id_coeffs, &params.exp_coeffs);
        let mv = |m: &Matrix3<f64>, v: [f64; 3], r: usize| {
            m[(r, 0)] * v[0] + m[(r, 1)] * v[1] + m[(r, 2)] * v[2]
        };
        let f = self.scale;
        for r in 0..2 {
            let out = row + r;
            jac[(out, 0)] = weight * mv(&self.rotation, v, r);
            for (a, dm) in self.d_rotation.iter().enumerate() {
                jac[(out, 1 + a)] = weight * f * mv(dm, v, r);
            }
            jac[(out, 4)] = if r == 0 { weight } else { 0.0 };
            jac[(out, 5)] = if r == 1 { weight } else { 0.0 };
        }
        let mut col = POSE_PARAMS;
        for m in [basis.id_basis(), basis.exp_basis()] {
            for k in 0..m.ncols() {
                let a = [m[(3 * i, k)], m[(3 * i + 1, k)], m[(3 * i + 2, k)]];
                jac[(row, col)] = weight * f * mv(&self.rotation, a, 0);
                jac[(row + 1, col)] = weight * f * mv(&self.rotation, a, 1);
                col += 1;
            }
        }
    }
}

/// Stacked `[x0 - ox0, y0 - oy0, x1 - ox1, ...]` landmark residuals.
pub fn landmark_residuals(
    basis: &MorphableBasis,
    observed: &[[f64; 2]],
    params: &ModelParams,
) -> Result<Vec<f64>> {
    let lm = crate::model::landmark_positions(basis, params)?;
    if lm.len() != observed.len() {
        return Err(Error::invalid(format!(
            "{} observed landmarks for a basis with {}",
            observed.len(),
            lm.len()
        )));
    }
    Ok(lm
        .iter()
        .zip(observed)
        .flat_map(|(p, o)| [p[0] - o[0], p[1] - o[1]])
        .collect())
}

/// Analytic 2L x P Jacobian of [`landmark_residuals`].
pub fn landmark_jacobian(basis: &MorphableBasis, params: &ModelParams) -> Result<DMatrix<f64>> {
    params.check_compatible(basis)?;
    let frame = PoseFrame::new(params);
    let lms = basis.landmark_indices();
    let mut jac = DMatrix::zeros(2 * lms.len(), basis.param_dim());
    for (j, &i) in lms.iter().enumerate() {
        frame.vertex_rows(basis, params, i as usize, 1.0, &mut jac, 2 * j);
    }
    Ok(jac)
}

/// Extra terms tying an iterate to an anchor.
enum AnchorTerm {
    None,
    /// `weight * sum_i ||V_i(p) - V_i(anchor)||^2` over all vertices.
    Vertex { anchor: Vec<[f64; 2]>, weight: f64 },
    /// `sum_i weights_i (p_i - anchor_i)^2`.
    Param { anchor: Vec<f64>, weights: Vec<f64> },
}

/// Landmark term over a subset of landmarks plus ridge and anchor terms.
struct LandmarkObjective<'a> {
    basis: &'a MorphableBasis,
    /// (vertex index, observed point) pairs.
    targets: Vec<(usize, [f64; 2])>,
    ridge: [f64; 2],
    anchor: AnchorTerm,
}

impl<'a> LandmarkObjective<'a> {
    fn new(basis: &'a MorphableBasis, observed: &[[f64; 2]], subset: &[usize]) -> Self {
        let lms = basis.landmark_indices();
        Self {
            basis,
            targets: subset.iter().map(|&j| (lms[j] as usize, observed[j])).collect(),
            ridge: [0.0, 0.0],
            anchor: AnchorTerm::None,
        }
    }

    fn params(&self, flat: &[f64]) -> Option<ModelParams> {
        let p = ModelParams::from_flat(flat, self.basis.id_dim(), self.basis.exp_dim()).ok()?;
        (p.scale > 0.0 && flat.iter().all(|v| v.is_finite())).then_some(p)
    }

    fn row_count(&self) -> usize {
        let anchor_rows = match &self.anchor {
            AnchorTerm::None => 0,
            AnchorTerm::Vertex { anchor, .. } => 2 * anchor.len(),
            AnchorTerm::Param { anchor, .. } => anchor.len(),
        };
        let ridge_rows = if self.ridge == [0.0, 0.0] {
            0
        } else {
            self.basis.id_dim() + self.basis.exp_dim()
        };
        2 * self.targets.len() + ridge_rows + anchor_rows
    }

    /// Landmark part of the cost only.
    fn data_cost(&self, params: &ModelParams) -> Result<f64> {
        let rot = params.rotation.to_matrix()?;
        Ok(self
            .targets
            .iter()
            .map(|&(i, o)| {
                let v = self.basis.shape_vertex(i, &params.id_coeffs, &params.exp_coeffs);
                let p = project_point(params.scale, &rot, params.translation, v);
                (p[0] - o[0]).powi(2) + (p[1] - o[1]).powi(2)
            })
            .sum())
    }
}

impl ResidualModel for LandmarkObjective<'_> {
    fn residuals(&self, flat: &[f64]) -> Option<DVector<f64>> {
        let p = self.params(flat)?;
        let rot = rotation_from_euler(p.rotation.pitch, p.rotation.yaw, p.rotation.roll).ok()?;
        let mut r = Vec::with_capacity(self.row_count());
        for &(i, o) in &self.targets {
            let v = self.basis.shape_vertex(i, &p.id_coeffs, &p.exp_coeffs);
            let q = project_point(p.scale, &rot, p.translation, v);
            r.push(q[0] - o[0]);
            r.push(q[1] - o[1]);
        }
        if self.ridge != [0.0, 0.0] {
            let (si, se) = (self.ridge[0].sqrt(), self.ridge[1].sqrt());
            r.extend(p.id_coeffs.iter().map(|a| si * a));
            r.extend(p.exp_coeffs.iter().map(|a| se * a));
        }
        match &self.anchor {
            AnchorTerm::None => {}
            AnchorTerm::Vertex { anchor, weight } => {
                let s = weight.sqrt();
                for (i, a) in anchor.iter().enumerate() {
                    let v = self.basis.shape_vertex(i, &p.id_coeffs, &p.exp_coeffs);
                    let q = project_point(p.scale, &rot, p.translation, v);
                    r.push(s * (q[0] - a[0]));
                    r.push(s * (q[1] - a[1]));
                }
            }
            AnchorTerm::Param { anchor, weights } => {
                r.extend(
                    flat.iter()
                        .zip(anchor)
                        .zip(weights)
                        .map(|((x, a), w)| w.sqrt() * (x - a)),
                );
            }
        }
        Some(DVector::from_vec(r))
    }

    fn jacobian(&self, flat: &[f64]) -> DMatrix<f64> {
        let p = ModelParams::from_flat(flat, self.basis.id_dim(), self.basis.exp_dim())
            .expect("jacobian evaluated at an admissible point");
        let frame = PoseFrame::new(&p);
        let np = self.basis.param_dim();
        let mut jac = DMatrix::zeros(self.row_count(), np);
        let mut row = 0;
        for &(i, _) in &self.targets {
            frame.vertex_rows(self.basis, &p, i, 1.0, &mut jac, row);
            row += 2;
        }
        if self.ridge != [0.0, 0.0] {
            let (si, se) = (self.ridge[0].sqrt(), self.ridge[1].sqrt());
            for k in 0..self.basis.id_dim() {
                jac[(row, POSE_PARAMS + k)] = si;
                row += 1;
            }
            for k in 0..self.basis.exp_dim() {
                jac[(row, POSE_PARAMS + self.basis.id_dim() + k)] = se;
                row += 1;
            }
        }
        match &self.anchor {
            AnchorTerm::None => {}
            AnchorTerm::Vertex { anchor, weight } => {
                let s = weight.sqrt();
                for i in 0..anchor.len() {
                    frame.vertex_rows(self.basis, &p, i, s, &mut jac, row);
                    row += 2;
                }
            }
            AnchorTerm::Param { weights, .. } => {
                for (k, w) in weights.iter().enumerate() {
                    jac[(row, k)] = w.sqrt();
                    row += 1;
                }
            }
        }
        jac
    }
}

fn check_observed(basis: &MorphableBasis, observed: &[[f64; 2]]) -> Result<f64> {
    if observed.len() < 4 {
        return Err(Error::UnderConstrained(format!(
            "{} landmarks given, at least 4 are required",
            observed.len()
        )));
    }
    if observed.len() != basis.landmark_indices().len() {
        return Err(Error::invalid(format!(
            "{} observed landmarks for a basis with {}",
            observed.len(),
            basis.landmark_indices().len()
        )));
    }
    if observed.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("observed landmarks must be finite"));
    }
    let diag = bbox_diagonal(observed);
    if !(diag > 0.0) {
        return Err(Error::DegenerateGeometry(
            "all observed landmarks coincide; scale is unobservable".into(),
        ));
    }
    Ok(diag)
}

/// Diagonal of the axis-aligned bounding box of `points`.
pub fn bbox_diagonal(points: &[[f64; 2]]) -> f64 {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
}

/// Root mean squared landmark reprojection error.
pub fn reprojection_rmse(
    basis: &MorphableBasis,
    observed: &[[f64; 2]],
    params: &ModelParams,
) -> Result<f64> {
    let r = landmark_residuals(basis, observed, params)?;
    Ok((r.iter().map(|v| v * v).sum::<f64>() / observed.len() as f64).sqrt())
}

/// Zero rotation and coefficients; scale and translation matched to the
/// landmark centroid and spread.
pub fn initial_estimate(basis: &MorphableBasis, observed: &[[f64; 2]]) -> ModelParams {
    let mut params = ModelParams::for_basis(basis);
    let mean = basis.mean_shape();
    let model: Vec<[f64; 2]> = basis
        .landmark_indices()
        .iter()
        .map(|&i| [mean[3 * i as usize], mean[3 * i as usize + 1]])
        .collect();
    let (mc, ms) = centroid_spread(&model);
    let (oc, os) = centroid_spread(observed);
    if ms > 0.0 && os > 0.0 {
        params.scale = os / ms;
    }
    params.translation = [oc[0] - params.scale * mc[0], oc[1] - params.scale * mc[1]];
    params
}

fn centroid_spread(points: &[[f64; 2]]) -> ([f64; 2], f64) {
    let n = points.len().max(1) as f64;
    let c = points
        .iter()
        .fold([0.0, 0.0], |acc, p| [acc[0] + p[0] / n, acc[1] + p[1] / n]);
    let spread = (points
        .iter()
        .map(|p| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (c, spread)
}

/// A stalled solve counts as converged when the residual is this close to
/// orthogonal to the Jacobian's range.
const STATIONARY_COSINE: f64 = 1e-6;

/// Cost below which a landmark fit is treated as exact.
fn cost_floor(diag: f64, count: usize) -> f64 {
    (1e-12 * diag).powi(2) * count as f64
}

/// Restricts an objective to the six pose parameters, holding the rest fixed.
struct PoseOnly<'a, M> {
    inner: &'a M,
    rest: Vec<f64>,
}

impl<M> PoseOnly<'_, M> {
    fn full(&self, pose: &[f64]) -> Vec<f64> {
        pose.iter().chain(&self.rest).copied().collect()
    }
}

impl<M: ResidualModel> ResidualModel for PoseOnly<'_, M> {
    fn residuals(&self, pose: &[f64]) -> Option<DVector<f64>> {
        self.inner.residuals(&self.full(pose))
    }

    fn jacobian(&self, pose: &[f64]) -> DMatrix<f64> {
        self.inner.jacobian(&self.full(pose)).columns(0, POSE_PARAMS).into_owned()
    }
}

/// Outcome of one LM solve.
struct Solve {
    iterations: usize,
    converged: bool,
    diagnostic: Option<String>,
}

/// Steps `state` until convergence or `budget` accepted steps, appending
/// every accepted cost to `trace`.
fn solve(
    model: &impl ResidualModel,
    state: &mut LmState,
    budget: usize,
    tol: f64,
    floor: f64,
    trace: &mut Vec<f64>,
) -> Solve {
    let mut out = Solve {
        iterations: 0,
        converged: false,
        diagnostic: None,
    };
    while out.iterations < budget {
        if state.cost <= floor {
            out.converged = true;
            break;
        }
        match state.step(model) {
            Step::Accepted {
                previous_cost,
                cost,
            } => {
                out.iterations += 1;
                trace.push(cost);
                if previous_cost - cost <= tol * previous_cost {
                    out.converged = true;
                    break;
                }
            }
            Step::Stalled => {
                if state.gradient_cosine(model) <= STATIONARY_COSINE {
                    out.converged = true;
                } else {
                    out.diagnostic = Some("no damping level decreased the cost".to_string());
                }
                break;
            }
        }
    }
    out
}

/// Pose-only solve from [`initial_estimate`]; returns the full flat vector and
/// the accepted step count.
fn rigid_stage(
    objective: &LandmarkObjective,
    observed: &[[f64; 2]],
    config: &FitConfig,
    floor: f64,
    trace: &mut Vec<f64>,
) -> Result<(Vec<f64>, usize)> {
    let flat = initial_estimate(objective.basis, observed).to_flat();
    let pose_only = PoseOnly {
        inner: objective,
        rest: flat[POSE_PARAMS..].to_vec(),
    };
    let mut state = LmState::new(&pose_only, flat[..POSE_PARAMS].to_vec(), config.damping_init)
        .ok_or_else(|| Error::invalid("initial parameters produce a non-finite cost"))?;
    trace.push(state.cost);
    let rigid = solve(
        &pose_only,
        &mut state,
        config.max_iterations,
        config.convergence_tol,
        floor,
        trace,
    );
    Ok((pose_only.full(&state.params), rigid.iterations))
}

/// Zero coefficients with the pose fitted to `observed` by the rigid stage of
/// [`fit_landmarks`].
pub fn pose_estimate(
    basis: &MorphableBasis,
    observed: &[[f64; 2]],
    config: &FitConfig,
) -> Result<ModelParams> {
    config.validate()?;
    let diag = check_observed(basis, observed)?;
    let all: Vec<usize> = (0..observed.len()).collect();
    let objective = LandmarkObjective::new(basis, observed, &all);
    let floor = cost_floor(diag, observed.len());
    let (flat, _) = rigid_stage(&objective, observed, config, floor, &mut Vec::new())?;
    ModelParams::from_flat(&flat, basis.id_dim(), basis.exp_dim())
}

/// Fits pose and coefficients to observed landmarks by Levenberg-Marquardt on
/// `sum_j ||lm_j(p) - obs_j||^2 + l_id ||a_id||^2 + l_exp ||a_exp||^2`.
///
/// Starts from `init` when given. Otherwise it starts from
/// [`initial_estimate`] and first solves for the pose alone with the
/// coefficients held at zero; large yaw is otherwise easily absorbed by
/// coefficients. Steps of both stages count toward `max_iterations`.
pub fn fit_landmarks(
    basis: &MorphableBasis,
    observed: &[[f64; 2]],
    config: &FitConfig,
    init: Option<&ModelParams>,
) -> Result<FitResult> {
    config.validate()?;
    let diag = check_observed(basis, observed)?;
    let all: Vec<usize> = (0..observed.len()).collect();
    let mut objective = LandmarkObjective::new(basis, observed, &all);
    objective.ridge = [config.id_regularization, config.exp_regularization];
    let floor = cost_floor(diag, observed.len());
    let non_finite = || Error::invalid("initial parameters produce a non-finite cost");

    let mut cost_trace = Vec::new();
    let mut iterations = 0;
    let start = match init {
        Some(p) => {
            p.check_compatible(basis)?;
            p.to_flat()
        }
        None => {
            let (flat, steps) = rigid_stage(&objective, observed, config, floor, &mut cost_trace)?;
            iterations = steps;
            flat
        }
    };

    let mut state = LmState::new(&objective, start, config.damping_init).ok_or_else(non_finite)?;
    if cost_trace.is_empty() {
        cost_trace.push(state.cost);
    }
    let full = solve(
        &objective,
        &mut state,
        config.max_iterations - iterations,
        config.convergence_tol,
        floor,
        &mut cost_trace,
    );
    iterations += full.iterations;
    let mut diagnostic = full.diagnostic;
    if !full.converged && diagnostic.is_none() {
        diagnostic = Some(format!("iteration budget {} exhausted", config.max_iterations));
    }
    let params = ModelParams::from_flat(&state.params, basis.id_dim(), basis.exp_dim())?;
    Ok(FitResult {
        params,
        final_cost: state.cost,
        iterations,
        cost_trace,
        branch_trace: Vec::new(),
        meta_trace: Vec::new(),
        converged: full.converged,
        diagnostic,
    })
}

/// Seeded partition of landmark positions into meta-train and meta-test sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl MetaSplit {
    pub fn new(landmark_count: usize, test_fraction: f64, seed: u64) -> Result<Self> {
        let test_count = (test_fraction * landmark_count as f64).round() as usize;
        if test_count < 2 {
            return Err(Error::Config(format!(
                "meta-test subset would hold {test_count} landmarks, at least 2 are required"
            )));
        }
        if landmark_count < test_count + 4 {
            return Err(Error::Config(format!(
                "meta-train subset would hold {} landmarks, at least 4 are required",
                landmark_count.saturating_sub(test_count)
            )));
        }
        let mut order: Vec<usize> = (0..landmark_count).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut test = order[..test_count].to_vec();
        let mut train = order[test_count..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        Ok(Self { train, test })
    }
}

/// RMSE over the meta-test landmarks.
pub fn meta_test_error(
    basis: &MorphableBasis,
    observed: &[[f64; 2]],
    split: &MetaSplit,
    params: &ModelParams,
) -> Result<f64> {
    let objective = LandmarkObjective::new(basis, observed, &split.test);
    Ok((objective.data_cost(params)? / split.test.len() as f64).sqrt())
}

/// The two lookahead candidates of one meta-iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchCandidates {
    pub vdc: ModelParams,
    pub vdc_steps: usize,
    pub wpdc: ModelParams,
    pub wpdc_steps: usize,
}

/// Runs `meta_k` Levenberg-Marquardt steps from `anchor` on the meta-train
/// landmarks under each branch objective.
///
/// VDC branch: landmark term plus `w * |train| * VDC(p, anchor)`.
/// WPDC branch: landmark term plus `w * |train| * WPDC(p, anchor)`, where the
/// WPDC weights compare the anchor to an undamped-as-possible landmark step
/// taken from it and stay fixed for the branch. Both anchor terms vanish at
/// the anchor, so neither branch can raise the meta-train landmark cost.
pub fn meta_candidates(
    basis: &MorphableBasis,
    observed: &[[f64; 2]],
    split: &MetaSplit,
    anchor: &ModelParams,
    config: &FitConfig,
) -> Result<BranchCandidates> {
    anchor.check_compatible(basis)?;
    let strength = config.meta_anchor_weight * split.train.len() as f64;
    let anchor_flat = anchor.to_flat();

    let mut vdc_obj = LandmarkObjective::new(basis, observed, &split.train);
    vdc_obj.anchor = AnchorTerm::Vertex {
        anchor: project_model(basis, anchor)?,
        weight: strength / basis.vertex_count() as f64,
    };
    let (vdc, vdc_steps) = run_branch(basis, &vdc_obj, &anchor_flat, config)?;

    let plain = LandmarkObjective::new(basis, observed, &split.train);
    let target = match LmState::new(&plain, anchor_flat.clone(), config.damping_init) {
        Some(mut s) => match s.step(&plain) {
            Step::Accepted { .. } => ModelParams::from_flat(&s.params, basis.id_dim(), basis.exp_dim())?,
            Step::Stalled => anchor.clone(),
        },
        None => anchor.clone(),
    };
    let weights = wpdc_weights(basis, &target, anchor)?
        .into_iter()
        .map(|w| strength * w)
        .collect();
    let mut wpdc_obj = LandmarkObjective::new(basis, observed, &split.train);
    wpdc_obj.anchor = AnchorTerm::Param {
        anchor: anchor_flat.clone(),
        weights,
    };
    let (wpdc, wpdc_steps) = run_branch(basis, &wpdc_obj, &anchor_flat, config)?;

    Ok(BranchCandidates {
        vdc,
        vdc_steps,
        wpdc,
        wpdc_steps,
    })
}

fn run_branch(
    basis: &MorphableBasis,
    objective: &LandmarkObjective<'_>,
    start: &[f64],
    config: &FitConfig,
) -> Result<(ModelParams, usize)> {
    let mut state = LmState::new(objective, start.to_vec(), config.damping_init)
        .ok_or_else(|| Error::invalid("anchor produces a non-finite cost"))?;
    let mut steps = 0;
    for _ in 0..config.meta_k {
        match state.step(objective) {
            Step::Accepted { .. } => steps += 1,
            Step::Stalled => break,
        }
    }
    Ok((
        ModelParams::from_flat(&state.params, basis.id_dim(), basis.exp_dim())?,
        steps,
    ))
}

/// Meta-joint fit: each meta-iteration looks ahead `meta_k` steps under a
/// VDC-anchored and a WPDC-anchored objective on the meta-train landmarks and
/// keeps whichever candidate has strictly lower meta-test RMSE (ties keep
/// WPDC). The anchor starts at `params_gt_proxy` and is replaced by the kept
/// candidate after every meta-iteration.
///
/// Every meta-iteration spends `meta_k` of the `max_iterations` budget, so at
/// most `max_iterations / meta_k` run; `meta_k > max_iterations` is a
/// configuration error. The cost trace records the meta-train landmark cost,
/// which never increases.
pub fn meta_joint_fit(
    basis: &MorphableBasis,
    observed: &[[f64; 2]],
    params_gt_proxy: &ModelParams,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    let diag = check_observed(basis, observed)?;
    params_gt_proxy.check_compatible(basis)?;
    if config.meta_k > config.max_iterations {
        return Err(Error::Config(format!(
            "meta_k = {} exceeds max_iterations = {}",
            config.meta_k, config.max_iterations
        )));
    }
    let split = MetaSplit::new(observed.len(), config.meta_test_fraction, config.rng_seed)?;
    let train_obj = LandmarkObjective::new(basis, observed, &split.train);
    let floor = cost_floor(diag, split.train.len());

    let mut current = params_gt_proxy.clone();
    let mut cost = train_obj.data_cost(&current)?;
    let mut cost_trace = vec![cost];
    let mut branch_trace = Vec::new();
    let mut meta_trace = Vec::new();
    let mut iterations = 0;
    let mut budget = 0;
    let mut converged = false;
    let mut diagnostic = None;

    while budget + config.meta_k <= config.max_iterations {
        let cands = meta_candidates(basis, observed, &split, &current, config)?;
        let vdc_err = meta_test_error(basis, observed, &split, &cands.vdc)?;
        let wpdc_err = meta_test_error(basis, observed, &split, &cands.wpdc)?;
        let (chosen, params, steps) = if vdc_err < wpdc_err {
            (Branch::Vdc, cands.vdc, cands.vdc_steps)
        } else {
            (Branch::Wpdc, cands.wpdc, cands.wpdc_steps)
        };
        meta_trace.push(MetaRecord {
            anchor: current,
            vdc_test_error: vdc_err,
            wpdc_test_error: wpdc_err,
            chosen,
        });
        branch_trace.push(chosen);
        budget += config.meta_k;
        iterations += steps;

        let previous = cost;
        current = params;
        cost = train_obj.data_cost(&current)?;
        cost_trace.push(cost);
        if cost <= floor || previous - cost <= config.convergence_tol * previous {
            converged = true;
            break;
        }
        if steps == 0 {
            diagnostic = Some("neither branch decreased its objective".to_string());
            break;
        }
    }
    if !converged && diagnostic.is_none() {
        diagnostic = Some(format!("iteration budget {} exhausted", config.max_iterations));
    }
    Ok(FitResult {
        params: current,
        final_cost: cost,
        iterations,
        cost_trace,
        branch_trace,
        meta_trace,
        converged,
        diagnostic,
    })
}
