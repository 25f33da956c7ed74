//! Brute-force scalar re-implementations of the loss formulas, written
//! directly from their definitions with plain nested loops over flat slices.
//! Nothing here calls into the library's loss code; the acceptance tests
//! compare the two implementations value by value. Reductions are sequential
//! row-major sums, the library's documented accumulation order.

/// Channel-averaged Charbonnier penalty at one pixel.
fn charbonnier_pixel(x: &[f64], y: &[f64], eps: f64) -> f64 {
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(y) {
        let d = a - b;
        acc += (d * d + eps * eps).sqrt();
    }
    acc / x.len() as f64
}

/// SSIM dissimilarity `clamp(1 - SSIM, 0, 2)` of one scalar plane, box
/// window of side `window` with replicate padding and population statistics.
fn ssim_dissim_plane(
    h: usize,
    w: usize,
    x: &[f64],
    y: &[f64],
    window: usize,
    c1: f64,
    c2: f64,
) -> Vec<f64> {
    let half = (window / 2) as isize;
    let n = (window * window) as f64;
    let mut out = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in -half..=half {
                for dx in -half..=half {
                    let r = (row as isize + dy).clamp(0, h as isize - 1) as usize;
                    let c = (col as isize + dx).clamp(0, w as isize - 1) as usize;
                    let a = x[r * w + c];
                    let b = y[r * w + c];
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let mx = sx / n;
            let my = sy / n;
            let var_x = sxx / n - mx * mx;
            let var_y = syy / n - my * my;
            let cov = sxy / n - mx * my;
            let ssim = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
            out.push((1.0 - ssim).clamp(0.0, 2.0));
        }
    }
    out
}

/// Plain-loop parameters mirroring the library's robust-loss configuration.
#[derive(Clone, Copy)]
pub struct Params {
    pub lambda_rho: f64,
    pub eps: f64,
    pub c1: f64,
    pub c2: f64,
    pub window: usize,
}

/// One image as channel planes of `h * w` values each.
pub struct Planes {
    pub h: usize,
    pub w: usize,
    pub channels: Vec<Vec<f64>>,
}

/// Channel-averaged SSIM dissimilarity map.
pub fn ssim_map(x: &Planes, y: &Planes, p: &Params) -> Vec<f64> {
    let mut acc = vec![0.0; x.h * x.w];
    for (xp, yp) in x.channels.iter().zip(&y.channels) {
        let plane = ssim_dissim_plane(x.h, x.w, xp, yp, p.window, p.c1, p.c2);
        for (a, v) in acc.iter_mut().zip(plane) {
            *a += v;
        }
    }
    let c = x.channels.len() as f64;
    acc.into_iter().map(|v| v / c).collect()
}

/// Robust penalty map: `lambda_rho * charbonnier + (1 - lambda_rho) * ssim`.
pub fn robust_map(x: &Planes, y: &Planes, p: &Params) -> Vec<f64> {
    let mut charb = Vec::with_capacity(x.h * x.w);
    for i in 0..x.h * x.w {
        let xs: Vec<f64> = x.channels.iter().map(|ch| ch[i]).collect();
        let ys: Vec<f64> = y.channels.iter().map(|ch| ch[i]).collect();
        charb.push(charbonnier_pixel(&xs, &ys, p.eps));
    }
    if p.lambda_rho == 1.0 {
        return charb;
    }
    let ssim = ssim_map(x, y, p);
    charb
        .iter()
        .zip(&ssim)
        .map(|(c, s)| p.lambda_rho * c + (1.0 - p.lambda_rho) * s)
        .collect()
}

/// Robust penalty map between two flow fields: Charbonnier on the raw
/// component differences averaged over the two components, SSIM on the
/// components divided by the image diagonal.
pub fn flow_robust_map(
    h: usize,
    w: usize,
    au: &[f64],
    av: &[f64],
    bu: &[f64],
    bv: &[f64],
    p: &Params,
) -> Vec<f64> {
    let mut charb = Vec::with_capacity(h * w);
    for i in 0..h * w {
        let du = au[i] - bu[i];
        let dv = av[i] - bv[i];
        charb.push(((du * du + p.eps * p.eps).sqrt() + (dv * dv + p.eps * p.eps).sqrt()) / 2.0);
    }
    if p.lambda_rho == 1.0 {
        return charb;
    }
    let diag = ((w * w + h * h) as f64).sqrt();
    let scale = |vals: &[f64]| vals.iter().map(|v| v / diag).collect::<Vec<f64>>();
    let su = ssim_dissim_plane(h, w, &scale(au), &scale(bu), p.window, p.c1, p.c2);
    let sv = ssim_dissim_plane(h, w, &scale(av), &scale(bv), p.window, p.c1, p.c2);
    charb
        .iter()
        .zip(su.iter().zip(&sv))
        .map(|(c, (a, b))| p.lambda_rho * c + (1.0 - p.lambda_rho) * (a + b) / 2.0)
        .collect()
}

/// Keep-bit per pixel: error strictly below the mean of the visibility
/// weighted error, where the mean divides by the full pixel count.
pub fn less_than_mean(err: &[f64], occ: &[u8], h: usize, w: usize) -> Vec<u8> {
    let mut sum = 0.0;
    for (e, o) in err.iter().zip(occ) {
        sum += e * f64::from(*o);
    }
    let threshold = sum / (h * w) as f64;
    err.iter().map(|e| u8::from(*e < threshold)).collect()
}

/// Masked reconstruction loss: robust penalty summed over pixels that are
/// both visible and strictly below the mean error. Returns the loss and the
/// below-mean keep bits.
pub fn masked_recon(x: &Planes, y: &Planes, occ: &[u8], p: &Params) -> (f64, Vec<u8>) {
    let err = robust_map(x, y, p);
    let lm = less_than_mean(&err, occ, x.h, x.w);
    let mut loss = 0.0;
    for ((e, o), m) in err.iter().zip(occ).zip(&lm) {
        loss += e * f64::from(o & m);
    }
    (loss, lm)
}

/// Edge-weighted squared forward differences of one plane, both axes, with
/// zero differences past the last row/column and weights
/// `exp(-mean_ch |forward difference of the guide|)`.
pub fn plane_smoothness(h: usize, w: usize, s: &[f64], guide: &Planes) -> f64 {
    let grad = |r0: usize, c0: usize, r1: usize, c1: usize| -> f64 {
        let mut acc = 0.0;
        for ch in &guide.channels {
            acc += (ch[r1 * w + c1] - ch[r0 * w + c0]).abs();
        }
        acc / guide.channels.len() as f64
    };
    let mut loss = 0.0;
    for row in 0..h {
        for col in 0..w - 1 {
            let ds = s[row * w + col + 1] - s[row * w + col];
            let term = ds * (-grad(row, col, row, col + 1)).exp();
            loss += term * term;
        }
    }
    for row in 0..h - 1 {
        for col in 0..w {
            let ds = s[(row + 1) * w + col] - s[row * w + col];
            let term = ds * (-grad(row, col, row + 1, col)).exp();
            loss += term * term;
        }
    }
    loss
}

/// Flow smoothness: the plane form on u plus the plane form on v.
pub fn flow_smoothness(h: usize, w: usize, u: &[f64], v: &[f64], guide: &Planes) -> f64 {
    plane_smoothness(h, w, u, guide) + plane_smoothness(h, w, v, guide)
}

/// Consistency loss: the flow-vs-flow robust penalty summed where the rigid
/// warp had nothing to say (`1 - edge * blank`) and the flow branch was
/// trustworthy (`lm`).
#[allow(clippy::too_many_arguments)]
pub fn consistency(
    h: usize,
    w: usize,
    rigid_u: &[f64],
    rigid_v: &[f64],
    flow_u: &[f64],
    flow_v: &[f64],
    edge: &[u8],
    blank: &[u8],
    lm: &[u8],
    p: &Params,
) -> f64 {
    let err = flow_robust_map(h, w, rigid_u, rigid_v, flow_u, flow_v, p);
    let mut loss = 0.0;
    for i in 0..h * w {
        let weight = (1.0 - f64::from(edge[i] & blank[i])) * f64::from(lm[i]);
        loss += err[i] * weight;
    }
    loss
}
