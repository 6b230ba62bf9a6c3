use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::world::WorldSpec;
use crate::error::{Result, SteapError};

/// Value stored everywhere when a grid has no occupied (or no free) cell.
pub const EMPTY_WORLD_DISTANCE: f64 = 1.0e3;

/// Signed Euclidean distances sampled at cell centres, row-major (`y` major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedDistanceField {
    pub nx: usize,
    pub ny: usize,
    /// World coordinates of the centre of cell `(0, 0)`.
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfQuery {
    pub distance: f64,
    pub gradient: Vector2<f64>,
    /// The point was outside the grid and was clamped to its border.
    pub clamped: bool,
}

pub fn build_sdf(world: &WorldSpec) -> Result<SignedDistanceField> {
    world.validate()?;
    let (nx, ny) = world.grid_shape();
    let cs = world.cell_size;
    let origin = [
        -0.5 * world.extent[0] + 0.5 * cs,
        -0.5 * world.extent[1] + 0.5 * cs,
    ];
    let mut occ = vec![false; nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            let x = origin[0] + ix as f64 * cs;
            let y = origin[1] + iy as f64 * cs;
            occ[iy * nx + ix] = world.is_occupied(x, y);
        }
    }
    SignedDistanceField::from_occupancy(&occ, nx, ny, origin, cs)
}

impl SignedDistanceField {
    /// Exact signed distance transform of an occupancy grid (`true` = occupied).
    ///
    /// Free cells hold the distance to the nearest occupied cell centre,
    /// occupied cells minus the distance to the nearest free cell centre.
    pub fn from_occupancy(
        occupied: &[bool],
        nx: usize,
        ny: usize,
        origin: [f64; 2],
        cell_size: f64,
    ) -> Result<Self> {
        if nx == 0 || ny == 0 || occupied.len() != nx * ny {
            return Err(SteapError::InvalidWorld(format!(
                "occupancy grid of {} cells does not match {nx} x {ny}",
                occupied.len()
            )));
        }
        if !(cell_size > 0.0) {
            return Err(SteapError::InvalidWorld(format!("cell size {cell_size}")));
        }
        let any_occ = occupied.iter().any(|&o| o);
        let any_free = occupied.iter().any(|&o| !o);
        let data = if !any_occ {
            vec![EMPTY_WORLD_DISTANCE; nx * ny]
        } else if !any_free {
            vec![-EMPTY_WORLD_DISTANCE; nx * ny]
        } else {
            let to_occ = squared_edt(occupied, nx, ny, true);
            let to_free = squared_edt(occupied, nx, ny, false);
            (0..nx * ny)
                .map(|i| {
                    if occupied[i] {
                        -to_free[i].sqrt() * cell_size
                    } else {
                        to_occ[i].sqrt() * cell_size
                    }
                })
                .collect()
        };
        Ok(Self {
            nx,
            ny,
            origin,
            cell_size,
            data,
        })
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.nx + ix]
    }

    pub fn node_position(&self, ix: usize, iy: usize) -> Vector2<f64> {
        Vector2::new(
            self.origin[0] + ix as f64 * self.cell_size,
            self.origin[1] + iy as f64 * self.cell_size,
        )
    }

    /// Bilinear value and its exact derivative (zero along clamped axes).
    pub fn bilinear(&self, p: &Vector2<f64>) -> SdfQuery {
        let (ix, tx, cx, gx_ok) = axis(p.x, self.origin[0], self.cell_size, self.nx);
        let (iy, ty, cy, gy_ok) = axis(p.y, self.origin[1], self.cell_size, self.ny);
        let jx = (ix + 1).min(self.nx - 1);
        let jy = (iy + 1).min(self.ny - 1);
        let v00 = self.at(ix, iy);
        let v10 = self.at(jx, iy);
        let v01 = self.at(ix, jy);
        let v11 = self.at(jx, jy);
        let distance = (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11);
        let dx = ((1.0 - ty) * (v10 - v00) + ty * (v11 - v01)) / self.cell_size;
        let dy = ((1.0 - tx) * (v01 - v00) + tx * (v11 - v10)) / self.cell_size;
        SdfQuery {
            distance,
            gradient: Vector2::new(if gx_ok { dx } else { 0.0 }, if gy_ok { dy } else { 0.0 }),
            clamped: cx || cy,
        }
    }

    /// Bicubic (Catmull-Rom) value and its exact derivative; continuously differentiable across cells.
    ///
    /// Reproduces node values and linear fields. Outside the grid the point is clamped to the border
    /// and the gradient along the clamped axis is zero.
    pub fn bicubic(&self, p: &Vector2<f64>) -> SdfQuery {
        let (ix, tx, cx, gx_ok) = axis(p.x, self.origin[0], self.cell_size, self.nx);
        let (iy, ty, cy, gy_ok) = axis(p.y, self.origin[1], self.cell_size, self.ny);
        let (wx, dwx) = catmull_rom(tx);
        let (wy, dwy) = catmull_rom(ty);
        let node = |i: usize, k: usize, n: usize| (i + k).saturating_sub(1).min(n - 1);
        let (mut distance, mut dx, mut dy) = (0.0, 0.0, 0.0);
        for b in 0..4 {
            let jy = node(iy, b, self.ny);
            for a in 0..4 {
                let v = self.at(node(ix, a, self.nx), jy);
                distance += wx[a] * wy[b] * v;
                dx += dwx[a] * wy[b] * v;
                dy += wx[a] * dwy[b] * v;
            }
        }
        SdfQuery {
            distance,
            gradient: Vector2::new(
                if gx_ok { dx / self.cell_size } else { 0.0 },
                if gy_ok { dy / self.cell_size } else { 0.0 },
            ),
            clamped: cx || cy,
        }
    }

    /// Bilinear value with a central-difference gradient (step = one cell).
    pub fn query(&self, p: &Vector2<f64>) -> SdfQuery {
        let centre = self.bilinear(p);
        let h = self.cell_size;
        let f = |dx: f64, dy: f64| self.bilinear(&Vector2::new(p.x + dx, p.y + dy)).distance;
        SdfQuery {
            distance: centre.distance,
            gradient: Vector2::new(
                (f(h, 0.0) - f(-h, 0.0)) / (2.0 * h),
                (f(0.0, h) - f(0.0, -h)) / (2.0 * h),
            ),
            clamped: centre.clamped,
        }
    }

    /// Portable text form: a header line `nx ny origin_x origin_y cell_size`, then one row per line.
    pub fn to_grid_text(&self) -> String {
        let mut out = format!(
            "{} {} {} {} {}\n",
            self.nx, self.ny, self.origin[0], self.origin[1], self.cell_size
        );
        for row in self.data.chunks(self.nx) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_grid_text(text: &str) -> Result<Self> {
        let bad = |m: &str| SteapError::Parse(format!("sdf grid: {m}"));
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        if header.len() != 5 {
            return Err(bad("header needs 5 fields"));
        }
        let nx: usize = header[0].parse().map_err(|_| bad("nx"))?;
        let ny: usize = header[1].parse().map_err(|_| bad("ny"))?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(s));
        let origin = [num(header[2])?, num(header[3])?];
        let cell_size = num(header[4])?;
        let data: Vec<f64> = lines
            .flat_map(str::split_whitespace)
            .map(num)
            .collect::<Result<_>>()?;
        if data.len() != nx * ny {
            return Err(bad("value count does not match header"));
        }
        Ok(Self {
            nx,
            ny,
            origin,
            cell_size,
            data,
        })
    }
}

/// Cell index, fraction and clamp flag along one axis; the last flag is false when clamped.
fn axis(p: f64, origin: f64, cs: f64, n: usize) -> (usize, f64, bool, bool) {
    let mut f = (p - origin) / cs;
    // Snap round-off so queries at grid nodes return the stored value exactly.
    if (f - f.round()).abs() < 1e-9 {
        f = f.round();
    }
    let max = (n - 1) as f64;
    let clamped = !(0.0..=max).contains(&f);
    let f = f.clamp(0.0, max);
    if n == 1 {
        return (0, 0.0, clamped, false);
    }
    let i = (f.floor() as usize).min(n - 2);
    (i, f - i as f64, clamped, !clamped)
}

/// Catmull-Rom weights for nodes `i - 1 ..= i + 2` and their derivatives at fraction `t`.
fn catmull_rom(t: f64) -> ([f64; 4], [f64; 4]) {
    let (t2, t3) = (t * t, t * t * t);
    (
        [
            0.5 * (-t3 + 2.0 * t2 - t),
            0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
            0.5 * (-3.0 * t3 + 4.0 * t2 + t),
            0.5 * (t3 - t2),
        ],
        [
            0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
            0.5 * (9.0 * t2 - 10.0 * t),
            0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
            0.5 * (3.0 * t2 - 2.0 * t),
        ],
    )
}

/// Squared distance (in cells) from every cell to the nearest cell whose occupancy equals `target`.
fn squared_edt(occupied: &[bool], nx: usize, ny: usize, target: bool) -> Vec<f64> {
    let mut grid: Vec<f64> = occupied
        .iter()
        .map(|&o| if o == target { 0.0 } else { f64::INFINITY })
        .collect();
    let mut buf = Vec::new();
    let mut out = Vec::new();
    for ix in 0..nx {
        buf.clear();
        buf.extend((0..ny).map(|iy| grid[iy * nx + ix]));
        edt_1d(&buf, &mut out);
        for iy in 0..ny {
            grid[iy * nx + ix] = out[iy];
        }
    }
    for iy in 0..ny {
        buf.clear();
        buf.extend_from_slice(&grid[iy * nx..(iy + 1) * nx]);
        edt_1d(&buf, &mut out);
        grid[iy * nx..(iy + 1) * nx].copy_from_slice(&out);
    }
    grid
}

fn intersect(f: &[f64], q: usize, p: usize) -> f64 {
    let (qf, pf) = (q as f64, p as f64);
    ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
}

/// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) for one row.
fn edt_1d(f: &[f64], d: &mut Vec<f64>) {
    let n = f.len();
    d.clear();
    d.resize(n, f64::INFINITY);
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k: usize = 0;
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(i) => i,
        None => return,
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let mut s = intersect(f, q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(f, q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}
