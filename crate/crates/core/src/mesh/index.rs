use super::{barycentric, BaryCoord, Projection2D, Vec2};

/// Uniform grid over a projection for point location.
///
/// Every triangle is registered in each cell its (slightly inflated) bounding
/// box touches, so the answer never depends on the cell size.
#[derive(Debug, Clone)]
pub struct GridIndex {
    origin: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl GridIndex {
    /// Index with cell size equal to the median triangle bounding-box edge.
    pub fn build(proj: &Projection2D) -> Self {
        let mut edges: Vec<f64> = (0..proj.n_triangles())
            .map(|t| {
                let (lo, hi) = tri_bounds(proj.triangle(t));
                (hi[0] - lo[0]).max(hi[1] - lo[1])
            })
            .collect();
        edges.sort_by(f64::total_cmp);
        let cell = edges.get(edges.len() / 2).copied().unwrap_or(1.0);
        Self::with_cell_size(proj, cell)
    }

    pub fn with_cell_size(proj: &Projection2D, cell: f64) -> Self {
        let (lo, hi) = proj.bounds();
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
        let pad = span * 1e-7;
        let cell = if cell.is_finite() && cell > span * 1e-6 {
            cell
        } else {
            span
        };
        let origin = [lo[0] - pad, lo[1] - pad];
        let nx = (((hi[0] - lo[0]) + 2.0 * pad) / cell).ceil().max(1.0) as usize;
        let ny = (((hi[1] - lo[1]) + 2.0 * pad) / cell).ceil().max(1.0) as usize;
        let mut cells = vec![Vec::new(); nx * ny];
        for t in 0..proj.n_triangles() {
            let (tlo, thi) = tri_bounds(proj.triangle(t));
            let x0 = ((tlo[0] - pad - origin[0]) / cell).floor().max(0.0) as usize;
            let y0 = ((tlo[1] - pad - origin[1]) / cell).floor().max(0.0) as usize;
            let x1 = (((thi[0] + pad - origin[0]) / cell).floor() as usize).min(nx - 1);
            let y1 = (((thi[1] + pad - origin[1]) / cell).floor() as usize).min(ny - 1);
            for cy in y0..=y1 {
                for cx in x0..=x1 {
                    cells[cy * nx + cx].push(t as u32);
                }
            }
        }
        Self {
            origin,
            cell,
            nx,
            ny,
            cells,
        }
    }

    /// Lowest-id triangle containing `p` (barycentric tolerance included).
    pub fn locate(&self, proj: &Projection2D, p: Vec2) -> Option<(usize, BaryCoord)> {
        let fx = (p[0] - self.origin[0]) / self.cell;
        let fy = (p[1] - self.origin[1]) / self.cell;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (cx, cy) = (fx as usize, fy as usize);
        if cx >= self.nx || cy >= self.ny {
            return None;
        }
        // Cell lists are in ascending triangle order.
        self.cells[cy * self.nx + cx].iter().find_map(|&t| {
            let b = barycentric(p, proj.triangle(t as usize)).ok()?;
            b.is_inside().then_some((t as usize, b))
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }
}

fn tri_bounds(t: [Vec2; 3]) -> (Vec2, Vec2) {
    let lo = [
        t[0][0].min(t[1][0]).min(t[2][0]),
        t[0][1].min(t[1][1]).min(t[2][1]),
    ];
    let hi = [
        t[0][0].max(t[1][0]).max(t[2][0]),
        t[0][1].max(t[1][1]).max(t[2][1]),
    ];
    (lo, hi)
}
