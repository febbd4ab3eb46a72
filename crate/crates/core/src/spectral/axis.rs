//! One-dimensional transform matrices and the separable contraction used by [`super::Basis`].

use std::f64::consts::PI;

use super::BasisFamily;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        Mat::from_fn(self.rows, other.cols, |r, c| {
            (0..self.cols).map(|k| self.at(r, k) * other.at(k, c)).sum()
        })
    }
}

/// Contracts axis `axis` of the row-major array `data` (shape `shape`) with `mat`,
/// replacing that extent `shape[axis] = mat.cols` by `mat.rows`.
pub fn contract_axis(data: &[f64], shape: &mut [usize], axis: usize, mat: &Mat) -> Vec<f64> {
    debug_assert_eq!(shape[axis], mat.cols);
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let n_in = mat.cols;
    let n_out = mat.rows;
    let mut out = vec![0.0; outer * n_out * inner];
    if inner == 1 {
        // (outer x n_out) = data (outer x n_in) * mat^T in one call
        // SAFETY: row-major extents and strides match the slices
        unsafe {
            matrixmultiply::dgemm(
                outer,
                n_in,
                n_out,
                1.0,
                data.as_ptr(),
                n_in as isize,
                1,
                mat.data.as_ptr(),
                1,
                n_in as isize,
                0.0,
                out.as_mut_ptr(),
                n_out as isize,
                1,
            );
        }
        shape[axis] = n_out;
        return out;
    }
    for o in 0..outer {
        let src = &data[o * n_in * inner..(o + 1) * n_in * inner];
        let dst = &mut out[o * n_out * inner..(o + 1) * n_out * inner];
        // SAFETY: both blocks are row-major with the extents and strides passed here
        unsafe {
            matrixmultiply::dgemm(
                n_out,
                n_in,
                inner,
                1.0,
                mat.data.as_ptr(),
                n_in as isize,
                1,
                src.as_ptr(),
                inner as isize,
                1,
                0.0,
                dst.as_mut_ptr(),
                inner as isize,
                1,
            );
        }
    }
    shape[axis] = n_out;
    out
}

/// Applies one matrix per axis (`None` leaves the axis untouched).
pub fn apply_separable(data: &[f64], shape: &[usize], mats: &[Option<&Mat>]) -> Vec<f64> {
    let mut shape = shape.to_vec();
    let mut buf: Option<Vec<f64>> = None;
    // contract shrinking axes first
    let mut order: Vec<usize> = (0..shape.len()).filter(|&a| mats[a].is_some()).collect();
    order.sort_by_key(|&a| {
        let m = mats[a].unwrap();
        (m.rows as i64 - m.cols as i64, a)
    });
    for axis in order {
        let m = mats[axis].unwrap();
        let next = contract_axis(buf.as_deref().unwrap_or(data), &mut shape, axis, m);
        buf = Some(next);
    }
    buf.unwrap_or_else(|| data.to_vec())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Per-axis operators: velocity modes and their derivatives on the grid, plus the
/// full-resolution transforms used for the density (cosine for the Dirichlet velocity
/// family, real Fourier for the periodic one).
#[derive(Debug, Clone)]
pub struct AxisOps {
    pub length: f64,
    pub spacing: f64,
    pub nodes: Vec<f64>,
    pub wavenumbers: Vec<f64>,
    /// grid x modes: `phi_k(x_j)`
    pub eval: Mat,
    pub deval: Mat,
    /// modes x grid: `phi_k(x_j) h`
    pub proj: Mat,
    pub dproj: Mat,
    /// `pairs x grid`: `phi_k(x_j) phi_l(x_j) h` for `k <= l` (see [`Self::pair_index`]),
    /// the one-axis factor of the weighted Gram matrix.
    pub pair: Mat,
    pub pair_index: Vec<(usize, usize)>,
    pub dens_fwd: Mat,
    pub dens_inv: Mat,
    pub dens_wavenumbers: Vec<f64>,
    /// Derivative of grid data extended evenly across the faces (density, pressure).
    pub d_even: Mat,
    /// Derivative of grid data vanishing on the faces (mass fluxes).
    pub d_odd: Mat,
}

struct Mode {
    value: Box<dyn Fn(f64) -> f64>,
    slope: Box<dyn Fn(f64) -> f64>,
    wavenumber: f64,
}

fn sine_mode(k: usize, length: f64, amplitude: f64) -> Mode {
    let kappa = k as f64 * (PI / length);
    Mode {
        value: Box::new(move |x| amplitude * (kappa * x).sin()),
        slope: Box::new(move |x| amplitude * kappa * (kappa * x).cos()),
        wavenumber: kappa,
    }
}

fn cosine_mode(k: usize, length: f64, amplitude: f64) -> Mode {
    let kappa = k as f64 * (PI / length);
    Mode {
        value: Box::new(move |x| amplitude * (kappa * x).cos()),
        slope: Box::new(move |x| -amplitude * kappa * (kappa * x).sin()),
        wavenumber: kappa,
    }
}

/// Real Fourier mode `m`: 0 constant, odd `cos(2 pi q x / L)`, even `sin(2 pi q x / L)`, `q = (m+1)/2`.
fn fourier_mode(m: usize, length: f64, normalized: bool) -> Mode {
    let q = m.div_ceil(2);
    let kappa = q as f64 * (2.0 * PI / length);
    if m == 0 {
        let a = if normalized { 1.0 / length.sqrt() } else { 1.0 };
        return Mode {
            value: Box::new(move |_| a),
            slope: Box::new(|_| 0.0),
            wavenumber: 0.0,
        };
    }
    let a = if normalized { (2.0 / length).sqrt() } else { 1.0 };
    if m % 2 == 1 {
        Mode {
            value: Box::new(move |x| a * (kappa * x).cos()),
            slope: Box::new(move |x| -a * kappa * (kappa * x).sin()),
            wavenumber: kappa,
        }
    } else {
        Mode {
            value: Box::new(move |x| a * (kappa * x).sin()),
            slope: Box::new(move |x| a * kappa * (kappa * x).cos()),
            wavenumber: kappa,
        }
    }
}

/// Forward/inverse pair for the (unnormalized) mode family `modes` sampled at `nodes`,
/// using discrete orthogonality. Returns `(fwd, inv, dinv)`.
fn grid_transform(modes: &[Mode], nodes: &[f64]) -> (Mat, Mat, Mat) {
    let n = nodes.len();
    let m = modes.len();
    let inv = Mat::from_fn(n, m, |j, k| (modes[k].value)(nodes[j]));
    let norms: Vec<f64> = (0..m)
        .map(|k| (0..n).map(|j| inv.at(j, k).powi(2)).sum::<f64>())
        .collect();
    let fwd = Mat::from_fn(m, n, |k, j| inv.at(j, k) / norms[k]);
    let dinv = Mat::from_fn(n, m, |j, k| (modes[k].slope)(nodes[j]));
    (fwd, inv, dinv)
}

impl AxisOps {
    pub fn new(family: BasisFamily, length: f64, modes: usize, grid: usize) -> Self {
        let h = length / grid as f64;
        let nodes: Vec<f64> = match family {
            BasisFamily::Sine => (0..grid).map(|j| (j as f64 + 0.5) * h).collect(),
            BasisFamily::Fourier => (0..grid).map(|j| j as f64 * h).collect(),
        };
        let vel: Vec<Mode> = match family {
            BasisFamily::Sine => (1..=modes)
                .map(|k| sine_mode(k, length, (2.0 / length).sqrt()))
                .collect(),
            BasisFamily::Fourier => (0..modes).map(|m| fourier_mode(m, length, true)).collect(),
        };
        let eval = Mat::from_fn(grid, modes, |j, k| (vel[k].value)(nodes[j]));
        let deval = Mat::from_fn(grid, modes, |j, k| (vel[k].slope)(nodes[j]));
        let proj = Mat::from_fn(modes, grid, |k, j| eval.at(j, k) * h);
        let dproj = Mat::from_fn(modes, grid, |k, j| deval.at(j, k) * h);
        let pair_index: Vec<(usize, usize)> = (0..modes)
            .flat_map(|k| (k..modes).map(move |l| (k, l)))
            .collect();
        let pair = Mat::from_fn(pair_index.len(), grid, |p, j| {
            let (k, l) = pair_index[p];
            eval.at(j, k) * eval.at(j, l) * h
        });
        let wavenumbers = vel.iter().map(|m| m.wavenumber).collect();

        let (dens_modes, odd_modes): (Vec<Mode>, Vec<Mode>) = match family {
            BasisFamily::Sine => (
                (0..grid).map(|k| cosine_mode(k, length, 1.0)).collect(),
                (1..=grid).map(|k| sine_mode(k, length, 1.0)).collect(),
            ),
            BasisFamily::Fourier => (
                (0..grid).map(|m| fourier_mode(m, length, false)).collect(),
                (0..grid).map(|m| fourier_mode(m, length, false)).collect(),
            ),
        };
        let (dens_fwd, dens_inv, mut dens_dinv) = grid_transform(&dens_modes, &nodes);
        let (odd_fwd, _, mut odd_dinv) = grid_transform(&odd_modes, &nodes);
        if family == BasisFamily::Fourier && grid.is_multiple_of(2) {
            // the Nyquist cosine has no resolvable derivative
            for j in 0..grid {
                dens_dinv.data[j * grid + grid - 1] = 0.0;
                odd_dinv.data[j * grid + grid - 1] = 0.0;
            }
        }
        let d_even = dens_dinv.matmul(&dens_fwd);
        let d_odd = odd_dinv.matmul(&odd_fwd);
        let dens_wavenumbers = dens_modes.iter().map(|m| m.wavenumber).collect();

        Self {
            length,
            spacing: h,
            nodes,
            wavenumbers,
            eval,
            deval,
            proj,
            dproj,
            pair,
            pair_index,
            dens_fwd,
            dens_inv,
            dens_wavenumbers,
            d_even,
            d_odd,
        }
    }
}
