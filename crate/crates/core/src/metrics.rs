//! Quality and rate metrics: PSNR, RD curves, and the Bjontegaard delta
//! rate between two curves (classic cubic-polynomial variant).

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const PSNR_CAP_DB: f64 = 100.0;

/// PSNR in dB over the [0, 1] RGB domain, capped at 100 dB.
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: "psnr",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let mut acc = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = (*x - *y) as f64;
        acc += d * d;
    }
    let mse = acc / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RdPoint {
    pub bpp: f64,
    pub psnr_db: f64,
}

/// One (bpp, PSNR) point per rate point, ordered by increasing lambda.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct RdCurve {
    pub points: Vec<RdPoint>,
}

impl RdCurve {
    pub fn new(points: Vec<RdPoint>) -> Self {
        RdCurve { points }
    }

    /// Soft invariants: bpp strictly increasing and PSNR non-decreasing
    /// along the curve. Violations are reported, not fatal.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for w in self.points.windows(2) {
            if w[1].bpp <= w[0].bpp {
                out.push(format!(
                    "bpp not strictly increasing: {} -> {}",
                    w[0].bpp, w[1].bpp
                ));
            }
            if w[1].psnr_db < w[0].psnr_db {
                out.push(format!(
                    "psnr decreases with rate: {} -> {}",
                    w[0].psnr_db, w[1].psnr_db
                ));
            }
        }
        out
    }
}

/// Least-squares cubic fit y(x) = c0 + c1 x + c2 x^2 + c3 x^3.
fn cubic_fit(xs: &[f64], ys: &[f64]) -> Result<[f64; 4]> {
    // normal equations A^T A c = A^T y for the monomial basis
    let mut ata = [[0.0f64; 4]; 4];
    let mut aty = [0.0f64; 4];
    for (&x, &y) in xs.iter().zip(ys) {
        let pows = [1.0, x, x * x, x * x * x];
        for i in 0..4 {
            for j in 0..4 {
                ata[i][j] += pows[i] * pows[j];
            }
            aty[i] += pows[i] * y;
        }
    }
    solve4(ata, aty)
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Result<[f64; 4]> {
    for col in 0..4 {
        let mut pivot = col;
        for row in col + 1..4 {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::Internal("singular system in BD-rate fit".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 4];
    for row in (0..4).rev() {
        let mut acc = b[row];
        for k in row + 1..4 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

fn poly_integral(c: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let eval = |x: f64| {
        c[0] * x + c[1] * x * x / 2.0 + c[2] * x * x * x / 3.0 + c[3] * x * x * x * x / 4.0
    };
    eval(hi) - eval(lo)
}

fn prepare(curve: &RdCurve) -> Result<(Vec<f64>, Vec<f64>)> {
    if curve.points.len() < 4 {
        return Err(Error::CurveTooSmall {
            need: 4,
            got: curve.points.len(),
        });
    }
    let mut pts = curve.points.clone();
    pts.sort_by(|p, q| p.psnr_db.partial_cmp(&q.psnr_db).expect("finite PSNR"));
    let qs: Vec<f64> = pts.iter().map(|p| p.psnr_db).collect();
    let lrs: Vec<f64> = pts
        .iter()
        .map(|p| {
            if p.bpp <= 0.0 {
                Err(Error::Config(format!("non-positive bpp {}", p.bpp)))
            } else {
                Ok(p.bpp.log10())
            }
        })
        .collect::<Result<_>>()?;
    Ok((qs, lrs))
}

/// Bjontegaard delta rate of `test` against `anchor`, in percent.
/// Negative means the test codec needs less rate at equal quality.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64> {
    let (qa, la) = prepare(anchor)?;
    let (qt, lt) = prepare(test)?;
    let lo = qa.first().unwrap().max(*qt.first().unwrap());
    let hi = qa.last().unwrap().min(*qt.last().unwrap());
    if hi <= lo {
        return Err(Error::NoQualityOverlap);
    }
    // centre the quality axis for conditioning; the averaged difference of
    // the two fits is unchanged by the shift
    let mid = 0.5 * (lo + hi);
    let qa_c: Vec<f64> = qa.iter().map(|q| q - mid).collect();
    let qt_c: Vec<f64> = qt.iter().map(|q| q - mid).collect();
    let ca = cubic_fit(&qa_c, &la)?;
    let ct = cubic_fit(&qt_c, &lt)?;
    let span = hi - lo;
    let int_a = poly_integral(&ca, lo - mid, hi - mid);
    let int_t = poly_integral(&ct, lo - mid, hi - mid);
    let avg_diff = (int_t - int_a) / span;
    Ok(100.0 * (10.0f64.powf(avg_diff) - 1.0))
}
