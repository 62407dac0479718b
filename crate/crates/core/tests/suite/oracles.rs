//! Independent brute-force reference implementations on plain `f64` buffers
//! in NCHW order. Written without the autograd engine or library helpers.

pub type Dims = [usize; 4];

pub fn at(d: Dims, n: usize, c: usize, y: usize, x: usize) -> usize {
    ((n * d[1] + c) * d[2] + y) * d[3] + x
}

/// Bilinear sample of `src` at normalized `grid` (`[N, 2, H, W]`, channel 0 = x),
/// texel-centre aligned and clamped to the border.
pub fn bilinear(src: &[f64], sd: Dims, grid: &[f64], h: usize, w: usize) -> Vec<f64> {
    let gd = [sd[0], 2, h, w];
    let od = [sd[0], sd[1], h, w];
    let mut out = vec![0.0; sd[0] * sd[1] * h * w];
    let pos = |g: f64, size: usize| -> f64 {
        if size == 1 {
            0.0
        } else {
            ((g + 1.0) / 2.0 * (size - 1) as f64).clamp(0.0, (size - 1) as f64)
        }
    };
    for n in 0..sd[0] {
        for y in 0..h {
            for x in 0..w {
                let px = pos(grid[at(gd, n, 0, y, x)], sd[3]);
                let py = pos(grid[at(gd, n, 1, y, x)], sd[2]);
                let (x0, y0) = (px.floor() as usize, py.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(sd[3] - 1), (y0 + 1).min(sd[2] - 1));
                let (ax, ay) = (px - x0 as f64, py - y0 as f64);
                for c in 0..sd[1] {
                    let v = |yy, xx| src[at(sd, n, c, yy, xx)];
                    out[at(od, n, c, y, x)] = (1.0 - ay) * ((1.0 - ax) * v(y0, x0) + ax * v(y0, x1))
                        + ay * ((1.0 - ax) * v(y1, x0) + ax * v(y1, x1));
                }
            }
        }
    }
    out
}

pub fn identity_grid(n: usize, h: usize, w: usize) -> Vec<f64> {
    let coord = |i: usize, s: usize| if s == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (s - 1) as f64 };
    let d = [n, 2, h, w];
    let mut g = vec![0.0; n * 2 * h * w];
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                g[at(d, b, 0, y, x)] = coord(x, w);
                g[at(d, b, 1, y, x)] = coord(y, h);
            }
        }
    }
    g
}

pub fn resize(src: &[f64], sd: Dims, h: usize, w: usize) -> Vec<f64> {
    bilinear(src, sd, &identity_grid(sd[0], h, w), h, w)
}

/// `Warp(z, f) * o + z_prev * (1 - o)`.
pub fn warp_fuse(z: &[f64], d: Dims, flow: &[f64], occ: &[f64], prev: &[f64]) -> Vec<f64> {
    let grid: Vec<f64> = identity_grid(d[0], d[2], d[3]).iter().zip(flow).map(|(a, b)| a + b).collect();
    let warped = bilinear(z, d, &grid, d[2], d[3]);
    let od = [d[0], 1, d[2], d[3]];
    let mut out = vec![0.0; warped.len()];
    for n in 0..d[0] {
        for c in 0..d[1] {
            for y in 0..d[2] {
                for x in 0..d[3] {
                    let o = occ[at(od, n, 0, y, x)];
                    let i = at(d, n, c, y, x);
                    out[i] = warped[i] * o + prev[i] * (1.0 - o);
                }
            }
        }
    }
    out
}

/// Per-part samples of a `[N, 24 * ch, Ha, Wa]` atlas at `(U_k, V_k)` in `[0, 1]`.
pub fn sample_atlas(atlas: &[f64], ad: Dims, ch: usize, u: &[f64], v: &[f64], h: usize, w: usize) -> Vec<Vec<f64>> {
    let parts = ad[1] / ch;
    let ud = [ad[0], parts, h, w];
    (0..parts)
        .map(|k| {
            let pd = [ad[0], ch, ad[2], ad[3]];
            let mut part = vec![0.0; ad[0] * ch * ad[2] * ad[3]];
            let mut grid = vec![0.0; ad[0] * 2 * h * w];
            let gd = [ad[0], 2, h, w];
            for n in 0..ad[0] {
                for c in 0..ch {
                    for y in 0..ad[2] {
                        for x in 0..ad[3] {
                            part[at(pd, n, c, y, x)] = atlas[at(ad, n, k * ch + c, y, x)];
                        }
                    }
                }
                for y in 0..h {
                    for x in 0..w {
                        grid[at(gd, n, 0, y, x)] = 2.0 * u[at(ud, n, k, y, x)] - 1.0;
                        grid[at(gd, n, 1, y, x)] = 2.0 * v[at(ud, n, k, y, x)] - 1.0;
                    }
                }
            }
            bilinear(&part, pd, &grid, h, w)
        })
        .collect()
}

/// `sum_k S_{k+1} * R_k` with `R_k: [N, C, H, W]` and `S: [N, 25, H, W]`.
pub fn fuse_parts(parts: &[Vec<f64>], pd: Dims, score: &[f64]) -> Vec<f64> {
    let sd = [pd[0], parts.len() + 1, pd[2], pd[3]];
    let mut out = vec![0.0; pd.iter().product()];
    for (k, p) in parts.iter().enumerate() {
        for n in 0..pd[0] {
            for c in 0..pd[1] {
                for y in 0..pd[2] {
                    for x in 0..pd[3] {
                        out[at(pd, n, c, y, x)] += score[at(sd, n, k + 1, y, x)] * p[at(pd, n, c, y, x)];
                    }
                }
            }
        }
    }
    out
}

/// Channel softmax, computed with the textbook `exp(x) / sum exp(x)`.
pub fn softmax(logits: &[f64], d: Dims) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for n in 0..d[0] {
        for y in 0..d[2] {
            for x in 0..d[3] {
                let z: f64 = (0..d[1]).map(|c| logits[at(d, n, c, y, x)].exp()).sum();
                for c in 0..d[1] {
                    out[at(d, n, c, y, x)] = logits[at(d, n, c, y, x)].exp() / z;
                }
            }
        }
    }
    out
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

pub fn lsgan_d(real: &[f64], fake: &[f64]) -> f64 {
    0.5 * mean(real.iter().map(|r| (r - 1.0).powi(2))) + 0.5 * mean(fake.iter().map(|f| f * f))
}

pub fn lsgan_g(fake: &[f64]) -> f64 {
    0.5 * mean(fake.iter().map(|f| (f - 1.0).powi(2)))
}

/// All absolute horizontal and vertical neighbour differences, averaged together.
pub fn tv(f: &[f64], d: Dims) -> f64 {
    let mut diffs = Vec::new();
    for n in 0..d[0] {
        for c in 0..d[1] {
            for y in 0..d[2] {
                for x in 0..d[3] {
                    if x + 1 < d[3] {
                        diffs.push((f[at(d, n, c, y, x + 1)] - f[at(d, n, c, y, x)]).abs());
                    }
                    if y + 1 < d[2] {
                        diffs.push((f[at(d, n, c, y + 1, x)] - f[at(d, n, c, y, x)]).abs());
                    }
                }
            }
        }
    }
    if diffs.is_empty() {
        0.0
    } else {
        mean(diffs.into_iter())
    }
}

/// `sum_{l >= 1} mean |resize(f_0) - f_l|`.
pub fn consistency(flows: &[(Vec<f64>, Dims)]) -> f64 {
    let (f0, d0) = &flows[0];
    flows[1..]
        .iter()
        .map(|(f, d)| {
            let r = resize(f0, *d0, d[2], d[3]);
            mean(r.iter().zip(f).map(|(a, b)| (a - b).abs()))
        })
        .sum()
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    let mut out = [0.0; 3];
    for (j, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][j] = b[r];
        }
        *o = det(m) / d;
    }
    out
}

/// Mean squared residual of each `k x k` window to its least-squares plane
/// `a x + b y + c`, fitted by Cramer's rule on the normal equations.
pub fn affine_reg(f: &[f64], d: Dims, k: usize) -> f64 {
    if d[2] < k || d[3] < k {
        return 0.0;
    }
    let mut sq = Vec::new();
    for n in 0..d[0] {
        for c in 0..d[1] {
            for y in 0..=d[2] - k {
                for x in 0..=d[3] - k {
                    let pts: Vec<(f64, f64, f64)> = (0..k * k)
                        .map(|i| ((i % k) as f64, (i / k) as f64, f[at(d, n, c, y + i / k, x + i % k)]))
                        .collect();
                    let mut ata = [[0.0; 3]; 3];
                    let mut atb = [0.0; 3];
                    for &(px, py, v) in &pts {
                        let row = [px, py, 1.0];
                        for r in 0..3 {
                            for s in 0..3 {
                                ata[r][s] += row[r] * row[s];
                            }
                            atb[r] += row[r] * v;
                        }
                    }
                    let [a, b, c0] = solve3(ata, atb);
                    sq.extend(pts.iter().map(|&(px, py, v)| (v - (a * px + b * py + c0)).powi(2)));
                }
            }
        }
    }
    mean(sq.into_iter())
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    mean(a.iter().zip(b).map(|(x, y)| (x - y).abs()))
}

pub fn aed(pred: &[Vec<f64>], reference: &[f64]) -> f64 {
    mean(pred.iter().map(|p| p.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()))
}

/// `(x, y, present)` per joint.
pub type Kp = (f64, f64, bool);

pub fn akd(pred: &[Vec<Kp>], gt: &[Vec<Kp>]) -> f64 {
    let mut d = Vec::new();
    for (p, g) in pred.iter().zip(gt) {
        for (a, b) in p.iter().zip(g) {
            if a.2 && b.2 {
                d.push(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt());
            }
        }
    }
    if d.is_empty() {
        0.0
    } else {
        mean(d.into_iter())
    }
}

pub fn mkr(pred: &[Vec<Kp>], gt: &[Vec<Kp>]) -> f64 {
    let mut rates = Vec::new();
    for (p, g) in pred.iter().zip(gt) {
        let present = g.iter().filter(|k| k.2).count();
        if present > 0 {
            let missing = p.iter().zip(g).filter(|(a, b)| b.2 && !a.2).count();
            rates.push(missing as f64 / present as f64);
        }
    }
    if rates.is_empty() {
        0.0
    } else {
        mean(rates.into_iter())
    }
}

// Small dense matrices for the Fréchet distance oracle.

pub type Mat = Vec<Vec<f64>>;

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

fn identity(n: usize) -> Mat {
    (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(a: &Mat) -> Mat {
    let n = a.len();
    let mut m: Mat = a.iter().zip(identity(n)).map(|(r, e)| r.iter().copied().chain(e).collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                let pivot_row = m[col].clone();
                for (v, pv) in m[r].iter_mut().zip(pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Principal square root by the Denman-Beavers iteration.
pub fn sqrtm(a: &Mat) -> Mat {
    let n = a.len();
    let (mut y, mut z) = (a.clone(), identity(n));
    for _ in 0..100 {
        let (yi, zi) = (inverse(&y), inverse(&z));
        let ny: Mat = (0..n).map(|i| (0..n).map(|j| 0.5 * (y[i][j] + zi[i][j])).collect()).collect();
        let nz: Mat = (0..n).map(|i| (0..n).map(|j| 0.5 * (z[i][j] + yi[i][j])).collect()).collect();
        let delta: f64 = ny.iter().flatten().zip(y.iter().flatten()).map(|(a, b)| (a - b).abs()).sum();
        y = ny;
        z = nz;
        if delta < 1e-14 {
            break;
        }
    }
    y
}

fn moments(set: &[Vec<f64>]) -> (Vec<f64>, Mat) {
    let (n, d) = (set.len(), set[0].len());
    let mu: Vec<f64> = (0..d).map(|j| set.iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
    let cov = (0..d)
        .map(|i| {
            (0..d).map(|j| set.iter().map(|v| (v[i] - mu[i]) * (v[j] - mu[j])).sum::<f64>() / (n - 1) as f64).collect()
        })
        .collect();
    (mu, cov)
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 sqrt(S_a S_b))` with `eps I` added to
/// both covariances.
pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>], eps: f64) -> f64 {
    let (ma, mut sa) = moments(a);
    let (mb, mut sb) = moments(b);
    for i in 0..sa.len() {
        sa[i][i] += eps;
        sb[i][i] += eps;
    }
    let root = sqrtm(&matmul(&sa, &sb));
    let tr = |m: &Mat| (0..m.len()).map(|i| m[i][i]).sum::<f64>();
    ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() + tr(&sa) + tr(&sb) - 2.0 * tr(&root)
}
