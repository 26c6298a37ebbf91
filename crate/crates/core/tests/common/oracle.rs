//! Straightforward reference implementations of the image metrics, written
//! from the definitions on nested vectors.

use framepred::compute::Tensor;

pub type Image = Vec<Vec<Vec<f64>>>;

pub fn image(t: &Tensor<f32>) -> Image {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    (0..c)
        .map(|ch| {
            (0..h)
                .map(|i| {
                    (0..w)
                        .map(|j| t.data()[(ch * h + i) * w + j] as f64)
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn mask_grid(h: usize, w: usize, bits: Option<&[bool]>) -> Vec<Vec<bool>> {
    (0..h)
        .map(|i| (0..w).map(|j| bits.is_none_or(|b| b[i * w + j])).collect())
        .collect()
}

const FLOOR: f64 = 1e-10;

pub fn psnr(y: &Image, p: &Image, m: &[Vec<bool>]) -> f64 {
    let mut errs = Vec::new();
    for (yc, pc) in y.iter().zip(p) {
        for (i, row) in yc.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if m[i][j] {
                    errs.push((v - pc[i][j]).powi(2));
                }
            }
        }
    }
    let mse = errs.iter().sum::<f64>() / errs.len() as f64;
    10.0 * (255.0f64.powi(2) / mse.max(FLOOR)).log10()
}

fn gray(x: &Image) -> Vec<Vec<f64>> {
    if x.len() == 1 {
        return x[0].clone();
    }
    let (h, w) = (x[0].len(), x[0][0].len());
    (0..h)
        .map(|i| {
            (0..w)
                .map(|j| 0.299 * x[0][i][j] + 0.587 * x[1][i][j] + 0.114 * x[2][i][j])
                .collect()
        })
        .collect()
}

pub fn ssim(y: &Image, p: &Image, m: &[Vec<bool>]) -> f64 {
    let (a, b) = (gray(y), gray(p));
    let (h, w) = (a.len(), a[0].len());
    let mut k = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (u, row) in k.iter_mut().enumerate() {
        for (v, e) in row.iter_mut().enumerate() {
            let (du, dv) = (u as f64 - 5.0, v as f64 - 5.0);
            *e = (-(du * du + dv * dv) / (2.0 * 1.5 * 1.5)).exp();
            total += *e;
        }
    }
    let (c1, c2) = ((0.01 * 255.0f64).powi(2), (0.03 * 255.0f64).powi(2));
    let mut scores = Vec::new();
    for i in 0..=h - 11 {
        for j in 0..=w - 11 {
            if !m[i + 5][j + 5] {
                continue;
            }
            let wsum = |f: &dyn Fn(usize, usize) -> f64| -> f64 {
                let mut s = 0.0;
                for (u, row) in k.iter().enumerate() {
                    for (v, e) in row.iter().enumerate() {
                        s += e / total * f(i + u, j + v);
                    }
                }
                s
            };
            let mu_a = wsum(&|r, c| a[r][c]);
            let mu_b = wsum(&|r, c| b[r][c]);
            let var_a = wsum(&|r, c| (a[r][c] - mu_a).powi(2));
            let var_b = wsum(&|r, c| (b[r][c] - mu_b).powi(2));
            let cov = wsum(&|r, c| (a[r][c] - mu_a) * (b[r][c] - mu_b));
            let l = (2.0 * mu_a * mu_b + c1) / (mu_a.powi(2) + mu_b.powi(2) + c1);
            let cs = (2.0 * cov + c2) / (var_a + var_b + c2);
            scores.push(l * cs);
        }
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}

#[allow(clippy::needless_range_loop)]
pub fn sharp_diff(y: &Image, p: &Image, m: &[Vec<bool>]) -> f64 {
    let g = |x: &Vec<Vec<f64>>, i: usize, j: usize| {
        (x[i][j] - x[i - 1][j]).abs() + (x[i][j] - x[i][j - 1]).abs()
    };
    let mut diffs = Vec::new();
    for (yc, pc) in y.iter().zip(p) {
        for i in 1..yc.len() {
            for j in 1..yc[0].len() {
                if m[i][j] {
                    diffs.push((g(yc, i, j) - g(pc, i, j)).abs());
                }
            }
        }
    }
    let den = diffs.iter().sum::<f64>() / diffs.len() as f64;
    10.0 * (255.0f64.powi(2) / den.max(FLOOR)).log10()
}
