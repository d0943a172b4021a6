//! The CCA family as generalized eigenproblems.
//!
//! Every method assembles a block pencil over the stacked projection vector
//! `w = [w_1; ...; w_M]`:
//!
//! | method  | diagonal blocks (left) | off-diagonal blocks (left) | right blocks        |
//! |---------|------------------------|----------------------------|---------------------|
//! | CCA     | 0                      | `X_i X_j^T`                | `X_i X_i^T`         |
//! | DCCA    | 0                      | `X_i G X_j^T`              | `X_i X_i^T`         |
//! | MCCA    | 0                      | `X_i X_j^T`                | `X_i X_i^T`         |
//! | GMA     | `alpha_i S_i`          | `beta_ij X_i X_j^T`        | `gamma_i X_i X_i^T` |
//! | GI2DCA  | `alpha_i S_i`          | `beta_ij X_i G X_j^T`      | `gamma_i X_i X_i^T` |
//!
//! where `S_i` is the between-class scatter of view `i` and `G` the class
//! coupling matrix. Inputs are expected to be centered.

mod coupling;

pub use coupling::{CouplingMatrix, CouplingMode};

use ndarray::{s, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::ClassLabels;
use crate::linalg::{between_class_scatter, class_sums, generalized_eig_sym, symmetrize, RidgePolicy};

/// Views sharing one sample axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewData {
    views: Vec<Array2<f64>>,
    labels: Option<ClassLabels>,
}

impl MultiViewData {
    pub fn new(views: Vec<Array2<f64>>, labels: ClassLabels) -> Result<Self> {
        let data = Self::unlabeled(views)?;
        if labels.len() != data.n_samples() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} samples",
                labels.len(),
                data.n_samples()
            )));
        }
        Ok(Self {
            labels: Some(labels),
            ..data
        })
    }

    pub fn unlabeled(views: Vec<Array2<f64>>) -> Result<Self> {
        if views.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "multi-view learning needs at least 2 views, got {}",
                views.len()
            )));
        }
        let n = views[0].ncols();
        if let Some((i, v)) = views.iter().enumerate().find(|(_, v)| v.ncols() != n) {
            return Err(Error::DimensionMismatch(format!(
                "view {i} has {} samples, view 0 has {n}",
                v.ncols()
            )));
        }
        if views.iter().any(|v| v.nrows() == 0) {
            return Err(Error::DimensionMismatch("a view has zero features".into()));
        }
        if views.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidParameter("view data has non-finite entries".into()));
        }
        Ok(Self {
            views,
            labels: None,
        })
    }

    pub fn views(&self) -> &[Array2<f64>] {
        &self.views
    }

    pub fn labels(&self) -> Option<&ClassLabels> {
        self.labels.as_ref()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn n_samples(&self) -> usize {
        self.views[0].ncols()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.nrows()).collect()
    }

    fn require_labels(&self) -> Result<&ClassLabels> {
        self.labels
            .as_ref()
            .ok_or_else(|| Error::InvalidLabels("this method needs class labels".into()))
    }
}

/// Balance parameters: `alpha` per view, `beta` per view pair, `gamma` per view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceParams {
    pub alpha: Vec<f64>,
    /// Symmetric `M x M`; the diagonal is unused.
    pub beta: Array2<f64>,
    pub gamma: Vec<f64>,
}

impl BalanceParams {
    pub fn uniform(n_views: usize, alpha: f64, beta: f64, gamma: f64) -> Self {
        Self {
            alpha: vec![alpha; n_views],
            beta: Array2::from_elem((n_views, n_views), beta),
            gamma: vec![gamma; n_views],
        }
    }

    /// The neutral setting that reduces GMA/GI2DCA to MCCA.
    pub fn unsupervised(n_views: usize) -> Self {
        Self::uniform(n_views, 0.0, 1.0, 1.0)
    }

    fn validate(&self, n_views: usize) -> Result<()> {
        if self.alpha.len() != n_views
            || self.gamma.len() != n_views
            || self.beta.dim() != (n_views, n_views)
        {
            return Err(Error::InvalidParameter(format!(
                "balance parameters sized for a different view count than {n_views}"
            )));
        }
        if self.alpha.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::InvalidParameter("alpha must be finite and >= 0".into()));
        }
        if self.gamma.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::InvalidParameter("gamma must be finite and > 0".into()));
        }
        for i in 0..n_views {
            for j in 0..n_views {
                let b = self.beta[[i, j]];
                if i != j && !(b.is_finite() && b >= 0.0) {
                    return Err(Error::InvalidParameter("beta must be finite and >= 0".into()));
                }
                if i != j && b != self.beta[[j, i]] {
                    return Err(Error::InvalidParameter("beta must be symmetric".into()));
                }
            }
        }
        Ok(())
    }
}

/// How many leading eigenpairs a fit keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum Retention {
    /// Eigenvalues above `1e-8 * lambda_max` and above round-off level,
    /// at most `min d_i`.
    #[default]
    Auto,
    /// Exactly this many, capped at `min d_i`.
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitOptions {
    pub ridge: RidgePolicy,
    pub retention: Retention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubspaceMethod {
    Cca,
    Dcca,
    Mcca,
    Gma,
    Gi2dca,
}

/// Fitted per-view projections plus solver provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceModel {
    pub method: SubspaceMethod,
    /// `w_i`, each `d_i x r`.
    pub projections: Vec<Array2<f64>>,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Full generalized spectrum, descending.
    pub spectrum: Vec<f64>,
    pub hyperparams: BalanceParams,
    pub coupling: Option<CouplingMode>,
    pub ridge_used: f64,
}

impl SubspaceModel {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_views(&self) -> usize {
        self.projections.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.projections.iter().map(|w| w.nrows()).collect()
    }

    /// `sum_i gamma_i w_i^T (X_i X_i^T) w_i + ridge * |w|^2` per retained
    /// column: the right-hand quadratic form the solver normalizes to 1.
    pub fn constraint_values(&self, data: &MultiViewData) -> Result<Vec<f64>> {
        if data.dims() != self.dims() {
            return Err(Error::DimensionMismatch(format!(
                "model dims {:?} vs data dims {:?}",
                self.dims(),
                data.dims()
            )));
        }
        let mut out = vec![0.0; self.rank()];
        for ((w, x), g) in self.projections.iter().zip(data.views()).zip(&self.hyperparams.gamma) {
            let z = w.t().dot(x);
            for (k, o) in out.iter_mut().enumerate() {
                let zz: f64 = z.row(k).iter().map(|v| v * v).sum();
                let ww: f64 = w.column(k).iter().map(|v| v * v).sum();
                *o += g * zz + self.ridge_used * ww;
            }
        }
        Ok(out)
    }

    /// Stacked `[w_1; ...; w_M]`, `(sum d_i) x r`.
    pub fn stacked(&self) -> Array2<f64> {
        let views: Vec<_> = self.projections.iter().map(|w| w.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("projections share r")
    }
}

/// Left and right matrices of a block pencil.
#[derive(Debug, Clone, PartialEq)]
pub struct Pencil {
    pub left: Array2<f64>,
    pub right: Array2<f64>,
    pub dims: Vec<usize>,
}

struct PencilRecipe<'a> {
    scatter_weights: Option<&'a [f64]>,
    coupling: Option<&'a CouplingMatrix>,
    params: &'a BalanceParams,
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    let mut out = Vec::with_capacity(dims.len() + 1);
    out.push(0);
    for d in dims {
        acc += d;
        out.push(acc);
    }
    out
}

fn assemble(data: &MultiViewData, recipe: PencilRecipe<'_>) -> Result<Pencil> {
    let views = data.views();
    let m = views.len();
    let dims = data.dims();
    let off = offsets(&dims);
    let total = off[m];

    // Cross-view products X_i G X_j^T for i < j. Class-block coupling is
    // applied through per-class column sums, never materializing G.
    let class_sums = match recipe.coupling {
        Some(c) if c.mode() == CouplingMode::ClassBlocks => Some(
            views
                .par_iter()
                .map(|x| class_sums(x, c.labels()))
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => None,
    };
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect();
    let cross: Vec<Array2<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| match &class_sums {
            Some(sums) => sums[i].dot(&sums[j].t()),
            None => views[i].dot(&views[j].t()),
        })
        .collect();
    let grams: Vec<Array2<f64>> = views.par_iter().map(|x| symmetrize(&x.dot(&x.t()))).collect();
    let scatters: Vec<Option<Array2<f64>>> = match recipe.scatter_weights {
        Some(_) => {
            let labels = data.require_labels()?;
            views
                .par_iter()
                .map(|x| between_class_scatter(x, labels).map(|s| Some(s.between_class)))
                .collect::<Result<Vec<_>>>()?
        }
        None => vec![None; m],
    };

    let mut left = Array2::zeros((total, total));
    let mut right = Array2::zeros((total, total));
    for i in 0..m {
        let block = s![off[i]..off[i + 1], off[i]..off[i + 1]];
        if let (Some(w), Some(s_i)) = (recipe.scatter_weights, &scatters[i]) {
            left.slice_mut(block).assign(&(s_i * w[i]));
        }
        right
            .slice_mut(block)
            .assign(&(&grams[i] * recipe.params.gamma[i]));
    }
    for (&(i, j), c) in pairs.iter().zip(&cross) {
        let b_ij = recipe.params.beta[[i, j]];
        let upper = c * b_ij;
        left.slice_mut(s![off[i]..off[i + 1], off[j]..off[j + 1]])
            .assign(&upper);
        left.slice_mut(s![off[j]..off[j + 1], off[i]..off[i + 1]])
            .assign(&upper.t());
    }
    Ok(Pencil { left, right, dims })
}

/// Pencil eigenvalues are dimensionless ratios; anything below this is
/// treated as a numerically zero direction.
const AUTO_FLOOR: f64 = 1e-10;

fn solve(
    method: SubspaceMethod,
    pencil: Pencil,
    params: BalanceParams,
    coupling: Option<CouplingMode>,
    options: &FitOptions,
) -> Result<SubspaceModel> {
    let eig = generalized_eig_sym(&pencil.left, &pencil.right, options.ridge)?;
    let max_rank = *pencil.dims.iter().min().expect("at least two views");
    let spectrum = eig.eigenvalues.to_vec();
    let r = match options.retention {
        Retention::Fixed(r) => r.min(max_rank).min(spectrum.len()),
        Retention::Auto => {
            let top = spectrum.first().copied().unwrap_or(0.0);
            if top > AUTO_FLOOR {
                spectrum
                    .iter()
                    .take_while(|&&l| l > 1e-8 * top && l > AUTO_FLOOR)
                    .count()
                    .min(max_rank)
            } else {
                0
            }
        }
    };
    let off = offsets(&pencil.dims);
    let projections = (0..pencil.dims.len())
        .map(|i| {
            eig.eigenvectors
                .slice(s![off[i]..off[i + 1], 0..r])
                .to_owned()
        })
        .collect();
    Ok(SubspaceModel {
        method,
        projections,
        eigenvalues: spectrum[..r].to_vec(),
        spectrum,
        hyperparams: params,
        coupling,
        ridge_used: eig.ridge_used,
    })
}

fn two_views(x1: &Array2<f64>, x2: &Array2<f64>) -> Result<MultiViewData> {
    if x1.ncols() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "CCA needs at least 2 samples, got {}",
            x1.ncols()
        )));
    }
    MultiViewData::unlabeled(vec![x1.clone(), x2.clone()])
}

/// Two-view canonical correlation analysis. Retained eigenvalues are the
/// canonical correlations.
pub fn fit_cca(x1: &Array2<f64>, x2: &Array2<f64>, options: &FitOptions) -> Result<SubspaceModel> {
    let data = two_views(x1, x2)?;
    let params = BalanceParams::unsupervised(2);
    let pencil = assemble(
        &data,
        PencilRecipe {
            scatter_weights: None,
            coupling: None,
            params: &params,
        },
    )?;
    solve(SubspaceMethod::Cca, pencil, params, None, options)
}

/// Discriminant CCA: the CCA pencil with `X_1 G X_2^T` cross blocks.
pub fn fit_dcca(
    x1: &Array2<f64>,
    x2: &Array2<f64>,
    labels: &ClassLabels,
    mode: CouplingMode,
    options: &FitOptions,
) -> Result<SubspaceModel> {
    let data = MultiViewData::new(two_views(x1, x2)?.views, labels.clone())?;
    let coupling = CouplingMatrix::new(mode, labels.clone());
    let params = BalanceParams::unsupervised(2);
    let pencil = assemble(
        &data,
        PencilRecipe {
            scatter_weights: None,
            coupling: Some(&coupling),
            params: &params,
        },
    )?;
    solve(SubspaceMethod::Dcca, pencil, params, Some(mode), options)
}

/// SUMCOR multi-set CCA: `(C - D) w = lambda D w`.
pub fn fit_mcca(data: &MultiViewData, options: &FitOptions) -> Result<SubspaceModel> {
    let params = BalanceParams::unsupervised(data.n_views());
    let pencil = mcca_pencil(data)?;
    solve(SubspaceMethod::Mcca, pencil, params, None, options)
}

/// The MCCA pencil `(C - D, D)`.
pub fn mcca_pencil(data: &MultiViewData) -> Result<Pencil> {
    let params = BalanceParams::unsupervised(data.n_views());
    assemble(
        data,
        PencilRecipe {
            scatter_weights: None,
            coupling: None,
            params: &params,
        },
    )
}

/// Generalized multiview analysis with per-view LDA terms.
pub fn fit_gma(
    data: &MultiViewData,
    params: &BalanceParams,
    options: &FitOptions,
) -> Result<SubspaceModel> {
    let pencil = gma_pencil(data, params)?;
    solve(SubspaceMethod::Gma, pencil, params.clone(), None, options)
}

pub fn gma_pencil(data: &MultiViewData, params: &BalanceParams) -> Result<Pencil> {
    params.validate(data.n_views())?;
    data.require_labels()?;
    assemble(
        data,
        PencilRecipe {
            scatter_weights: Some(&params.alpha),
            coupling: None,
            params,
        },
    )
}

/// Inter-view and intra-view discriminant correlation analysis: GMA's
/// per-view scatter terms with class-coupled cross-view correlation.
pub fn fit_gi2dca(
    data: &MultiViewData,
    mode: CouplingMode,
    params: &BalanceParams,
    options: &FitOptions,
) -> Result<SubspaceModel> {
    let pencil = gi2dca_pencil(data, mode, params)?;
    solve(SubspaceMethod::Gi2dca, pencil, params.clone(), Some(mode), options)
}

pub fn gi2dca_pencil(
    data: &MultiViewData,
    mode: CouplingMode,
    params: &BalanceParams,
) -> Result<Pencil> {
    params.validate(data.n_views())?;
    let labels = data.require_labels()?;
    let coupling = CouplingMatrix::new(mode, labels.clone());
    assemble(
        data,
        PencilRecipe {
            scatter_weights: Some(&params.alpha),
            coupling: Some(&coupling),
            params,
        },
    )
}

/// `Z_i = w_i^T X`.
pub fn project(model: &SubspaceModel, view_index: usize, x: &Array2<f64>) -> Result<Array2<f64>> {
    let w = model.projections.get(view_index).ok_or_else(|| {
        Error::DimensionMismatch(format!(
            "view {view_index} out of range for a {}-view model",
            model.n_views()
        ))
    })?;
    if w.nrows() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "projection for view {view_index} expects {} features, got {}",
            w.nrows(),
            x.nrows()
        )));
    }
    Ok(w.t().dot(x))
}

/// Element-wise mean of the per-view canonical variates.
pub fn average_variates(projections: &[Array2<f64>]) -> Result<Array2<f64>> {
    let first = projections
        .first()
        .ok_or_else(|| Error::InvalidParameter("no variates to average".into()))?;
    let mut sum = first.clone();
    for p in &projections[1..] {
        if p.dim() != first.dim() {
            return Err(Error::DimensionMismatch(format!(
                "variate shapes {:?} and {:?}",
                first.dim(),
                p.dim()
            )));
        }
        sum += p;
    }
    Ok(sum / projections.len() as f64)
}

/// Stacked amplitude and phase variates, amplitude rows first.
#[derive(Debug, Clone, PartialEq)]
pub struct MdfiMatrix {
    pub data: Array2<f64>,
    pub r_amplitude: usize,
    pub r_phase: usize,
    pub labels: Option<ClassLabels>,
}

pub fn fuse_mdfi(z_amp: &Array2<f64>, z_phase: &Array2<f64>) -> Result<MdfiMatrix> {
    if z_amp.ncols() != z_phase.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "amplitude block has {} columns, phase block {}",
            z_amp.ncols(),
            z_phase.ncols()
        )));
    }
    let data = ndarray::concatenate(Axis(0), &[z_amp.view(), z_phase.view()])
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    Ok(MdfiMatrix {
        data,
        r_amplitude: z_amp.nrows(),
        r_phase: z_phase.nrows(),
        labels: None,
    })
}
