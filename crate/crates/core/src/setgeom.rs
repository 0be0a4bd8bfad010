//! Symbolic target sets, conservative rasterization and dyadic decompositions.

use serde::Serialize;

use crate::error::GeomError;
use crate::grid::{GridContext, GridField, GridMask};

/// One building block of a target set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Primitive {
    Ball { center: [f64; 3], radius: f64 },
    Box { lo: [f64; 3], hi: [f64; 3] },
    Segment { a: [f64; 3], b: [f64; 3], thickness: f64 },
    PointCloud { points: Vec<[f64; 3]> },
    /// Corner-cube Cantor dust built from the cube `[-1, 1]^3`: each generation
    /// replaces a cube of side `s` by the eight corner cubes of side `ratio * s`.
    DyadicCantor { generation: u32, ratio: f64 },
    /// Balls with strictly decreasing positive radii.
    BallSequence { centers: Vec<[f64; 3]>, radii: Vec<f64> },
}

/// Symbolic description of a compact target set as a union of primitives.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetSpec {
    pub primitives: Vec<Primitive>,
    /// Radius of the declared bounding ball centered at the origin.
    pub bounding_radius: f64,
}

#[inline]
fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[inline]
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn point_box_distance(p: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> f64 {
    let mut d2 = 0.0;
    for a in 0..3 {
        let excess = (lo[a] - p[a]).max(0.0).max(p[a] - hi[a]);
        d2 += excess * excess;
    }
    d2.sqrt()
}

fn point_segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    if len2 == 0.0 {
        return norm(ap);
    }
    let t = ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0);
    norm([p[0] - (a[0] + t * ab[0]), p[1] - (a[1] + t * ab[1]), p[2] - (a[2] + t * ab[2])])
}

fn cantor_cubes(generation: u32, ratio: f64) -> Vec<([f64; 3], f64)> {
    // (center, half-side) pairs
    let mut cubes = vec![([0.0; 3], 1.0)];
    for _ in 0..generation {
        let mut next = Vec::with_capacity(cubes.len() * 8);
        for (c, half) in cubes {
            let child_half = half * ratio;
            let off = half - child_half;
            for sx in [-1.0, 1.0] {
                for sy in [-1.0, 1.0] {
                    for sz in [-1.0, 1.0] {
                        next.push((
                            [c[0] + sx * off, c[1] + sy * off, c[2] + sz * off],
                            child_half,
                        ));
                    }
                }
            }
        }
        cubes = next;
    }
    cubes
}

impl Primitive {
    /// Euclidean distance from a point to the (closed) primitive.
    pub fn distance(&self, p: [f64; 3]) -> f64 {
        match self {
            Primitive::Ball { center, radius } => (norm(sub(p, *center)) - radius).max(0.0),
            Primitive::Box { lo, hi } => point_box_distance(p, *lo, *hi),
            Primitive::Segment { a, b, thickness } => {
                (point_segment_distance(p, *a, *b) - thickness).max(0.0)
            }
            Primitive::PointCloud { points } => points
                .iter()
                .map(|q| norm(sub(p, *q)))
                .fold(f64::INFINITY, f64::min),
            Primitive::DyadicCantor { generation, ratio } => cantor_cubes(*generation, *ratio)
                .into_iter()
                .map(|(c, half)| {
                    point_box_distance(
                        p,
                        [c[0] - half, c[1] - half, c[2] - half],
                        [c[0] + half, c[1] + half, c[2] + half],
                    )
                })
                .fold(f64::INFINITY, f64::min),
            Primitive::BallSequence { centers, radii } => centers
                .iter()
                .zip(radii.iter())
                .map(|(c, r)| (norm(sub(p, *c)) - r).max(0.0))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Largest distance from `x` to a point of the primitive (circumradius about `x`).
    pub fn circumradius(&self, x: [f64; 3]) -> f64 {
        match self {
            Primitive::Ball { center, radius } => norm(sub(*center, x)) + radius,
            Primitive::Box { lo, hi } => {
                let mut worst: f64 = 0.0;
                for cx in [lo[0], hi[0]] {
                    for cy in [lo[1], hi[1]] {
                        for cz in [lo[2], hi[2]] {
                            worst = worst.max(norm(sub([cx, cy, cz], x)));
                        }
                    }
                }
                worst
            }
            Primitive::Segment { a, b, thickness } => {
                norm(sub(*a, x)).max(norm(sub(*b, x))) + thickness
            }
            Primitive::PointCloud { points } => points
                .iter()
                .map(|q| norm(sub(*q, x)))
                .fold(0.0f64, f64::max),
            Primitive::DyadicCantor { generation, ratio } => cantor_cubes(*generation, *ratio)
                .into_iter()
                .map(|(c, half)| norm(sub(c, x)) + half * 3f64.sqrt())
                .fold(0.0f64, f64::max),
            Primitive::BallSequence { centers, radii } => centers
                .iter()
                .zip(radii.iter())
                .map(|(c, r)| norm(sub(*c, x)) + r)
                .fold(0.0f64, f64::max),
        }
    }

    /// Exact axis-aligned bounding box of the primitive.
    pub fn aabb(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut grow = |p: [f64; 3], pad: f64| {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a] - pad);
                hi[a] = hi[a].max(p[a] + pad);
            }
        };
        match self {
            Primitive::Ball { center, radius } => grow(*center, *radius),
            Primitive::Box { lo: l, hi: h } => {
                grow(*l, 0.0);
                grow(*h, 0.0);
            }
            Primitive::Segment { a, b, thickness } => {
                grow(*a, *thickness);
                grow(*b, *thickness);
            }
            Primitive::PointCloud { points } => {
                for p in points {
                    grow(*p, 0.0);
                }
            }
            Primitive::DyadicCantor { .. } => {
                grow([-1.0; 3], 0.0);
                grow([1.0; 3], 0.0);
            }
            Primitive::BallSequence { centers, radii } => {
                for (c, r) in centers.iter().zip(radii.iter()) {
                    grow(*c, *r);
                }
            }
        }
        (lo, hi)
    }

    /// No point at all (an empty point cloud or ball sequence).
    pub fn is_empty(&self) -> bool {
        match self {
            Primitive::PointCloud { points } => points.is_empty(),
            Primitive::BallSequence { centers, .. } => centers.is_empty(),
            _ => false,
        }
    }

    /// Map every defining point by `y -> shift + scale * (y - origin)`.
    fn transform(&self, origin: [f64; 3], scale: f64, shift: [f64; 3]) -> Primitive {
        let map = |p: [f64; 3]| {
            [
                shift[0] + scale * (p[0] - origin[0]),
                shift[1] + scale * (p[1] - origin[1]),
                shift[2] + scale * (p[2] - origin[2]),
            ]
        };
        match self {
            Primitive::Ball { center, radius } => Primitive::Ball {
                center: map(*center),
                radius: radius * scale,
            },
            Primitive::Box { lo, hi } => Primitive::Box { lo: map(*lo), hi: map(*hi) },
            Primitive::Segment { a, b, thickness } => Primitive::Segment {
                a: map(*a),
                b: map(*b),
                thickness: thickness * scale,
            },
            Primitive::PointCloud { points } => Primitive::PointCloud {
                points: points.iter().map(|p| map(*p)).collect(),
            },
            // expanded into boxes by SetSpec::transform before reaching here
            Primitive::DyadicCantor { .. } => unreachable!("cantor dust is pre-expanded"),
            Primitive::BallSequence { centers, radii } => Primitive::BallSequence {
                centers: centers.iter().map(|c| map(*c)).collect(),
                radii: radii.iter().map(|r| r * scale).collect(),
            },
        }
    }
}

impl SetSpec {
    pub fn new(primitives: Vec<Primitive>, bounding_radius: f64) -> Result<SetSpec, GeomError> {
        if !(bounding_radius > 0.0) {
            return Err(GeomError::BadSpec("bounding radius must be positive".into()));
        }
        for p in &primitives {
            if let Primitive::BallSequence { centers, radii } = p {
                if centers.len() != radii.len() {
                    return Err(GeomError::BadSpec(
                        "ball sequence centers and radii differ in length".into(),
                    ));
                }
                for w in radii.windows(2) {
                    if !(w[1] > 0.0 && w[1] < w[0]) {
                        return Err(GeomError::BadSpec(
                            "ball sequence radii must be strictly decreasing and positive".into(),
                        ));
                    }
                }
                if radii.len() == 1 && !(radii[0] > 0.0) {
                    return Err(GeomError::BadSpec("ball radius must be positive".into()));
                }
            }
            if let Primitive::DyadicCantor { ratio, generation } = p {
                if !(*ratio > 0.0 && *ratio < 0.5) {
                    return Err(GeomError::BadSpec("cantor ratio must lie in (0, 1/2)".into()));
                }
                if *generation > 6 {
                    return Err(GeomError::BadSpec("cantor generation capped at 6".into()));
                }
            }
            if let Primitive::Ball { radius, .. } = p {
                if !(*radius >= 0.0) {
                    return Err(GeomError::BadSpec("ball radius must be nonnegative".into()));
                }
            }
            if !p.is_empty() && p.circumradius([0.0; 3]) > bounding_radius + 1e-12 {
                return Err(GeomError::BadSpec(format!(
                    "primitive escapes the bounding ball of radius {bounding_radius}"
                )));
            }
        }
        Ok(SetSpec { primitives, bounding_radius })
    }

    pub fn empty() -> SetSpec {
        SetSpec { primitives: Vec::new(), bounding_radius: 1.0 }
    }

    pub fn ball(center: [f64; 3], radius: f64) -> SetSpec {
        let rho = norm(center) + radius;
        SetSpec::new(vec![Primitive::Ball { center, radius }], rho.max(1e-6)).expect("valid ball")
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.iter().all(|p| p.is_empty())
    }

    pub fn distance(&self, p: [f64; 3]) -> f64 {
        self.primitives
            .iter()
            .filter(|pr| !pr.is_empty())
            .map(|pr| pr.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn circumradius(&self, x: [f64; 3]) -> f64 {
        self.primitives
            .iter()
            .filter(|pr| !pr.is_empty())
            .map(|pr| pr.circumradius(x))
            .fold(0.0f64, f64::max)
    }

    /// Map primitives by `y -> shift + scale * (y - origin)`, exactly on parameters.
    pub fn transform(&self, origin: [f64; 3], scale: f64, shift: [f64; 3]) -> SetSpec {
        let mut primitives = Vec::with_capacity(self.primitives.len());
        for p in &self.primitives {
            match p {
                // Cantor dust does not stay a dust under recentering: expand to boxes.
                Primitive::DyadicCantor { generation, ratio } => {
                    for (c, half) in cantor_cubes(*generation, *ratio) {
                        primitives.push(
                            Primitive::Box {
                                lo: [c[0] - half, c[1] - half, c[2] - half],
                                hi: [c[0] + half, c[1] + half, c[2] + half],
                            }
                            .transform(origin, scale, shift),
                        );
                    }
                }
                other => primitives.push(other.transform(origin, scale, shift)),
            }
        }
        let mut rho: f64 = 0.0;
        for p in &primitives {
            if !p.is_empty() {
                rho = rho.max(p.circumradius([0.0; 3]));
            }
        }
        SetSpec { primitives, bounding_radius: rho.max(1e-12) }
    }

    /// Stable digest of the symbolic content, used in solver cache keys.
    pub fn digest(&self) -> u64 {
        let text = format!("{:?}", self);
        let mut hash: u64 = 0xcbf29ce484222325;
        for b in text.as_bytes() {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        hash
    }
}

/// Similarity rescaling `y -> origin + (y - origin) / a`; exact on parameters.
pub fn scale_spec(spec: &SetSpec, a: f64, origin: [f64; 3]) -> Result<SetSpec, GeomError> {
    if !(a > 0.0) {
        return Err(GeomError::BadSpec(format!("scale factor must be positive, got {a}")));
    }
    Ok(spec.transform(origin, 1.0 / a, origin))
}

/// Conservative closed rasterization: a node is marked iff its cell center lies
/// within `h/2` of the set.
pub fn rasterize(spec: &SetSpec, grid: &GridContext) -> Result<GridMask, GeomError> {
    let mut mask = GridMask::empty(grid);
    if spec.is_empty() {
        return Ok(mask);
    }
    let reach = grid.h / 2.0;
    let hi = grid.hi();
    // every primitive must fit the box with a one-cell margin plus the raster reach
    for p in &spec.primitives {
        if p.is_empty() {
            continue;
        }
        let (blo, bhi) = p.aabb();
        for a in 0..3 {
            if grid.dims[a] == 1 {
                continue;
            }
            if blo[a] - reach < grid.lo[a] + grid.h || bhi[a] + reach > hi[a] - grid.h {
                return Err(GeomError::SpecOutOfBox(format!(
                    "primitive bounds [{blo:?}, {bhi:?}] escape axis {a} of the box"
                )));
            }
        }
    }
    let bits: Vec<bool> = (0..grid.len())
        .map(|idx| spec.distance(grid.node(idx)) <= reach)
        .collect();
    mask.bits = bits;
    if !mask.has_margin() {
        return Err(GeomError::SpecOutOfBox(format!(
            "rasterized set touches the outer cell layer of the box [{:?}, {:?}]",
            grid.lo, hi
        )));
    }
    Ok(mask)
}

/// Exact Euclidean distance transform to the marked nodes (error <= h against
/// the underlying set). Squared-distance lower envelopes per axis.
pub fn distance_field(mask: &GridMask) -> Result<GridField, GeomError> {
    if mask.is_empty() {
        return Err(GeomError::EmptySet);
    }
    let ctx = &mask.ctx;
    let [nx, ny, nz] = ctx.dims;
    const INF: f64 = 1e30;
    let mut d2: Vec<f64> = mask
        .bits
        .iter()
        .map(|&b| if b { 0.0 } else { INF })
        .collect();

    // 1-D squared distance transform (lower envelope of parabolas)
    fn edt_1d(f: &[f64], out: &mut Vec<f64>) {
        let n = f.len();
        out.clear();
        out.resize(n, 0.0);
        let mut v = vec![0usize; n];
        let mut z = vec![0.0f64; n + 1];
        let mut k = 0usize;
        v[0] = 0;
        z[0] = -INF;
        z[1] = INF;
        for q in 1..n {
            if f[q] >= INF && f[v[k]] >= INF {
                // plateau of empty cells: parabola from the last seed still applies
            }
            let mut s;
            loop {
                let p = v[k];
                s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                    / (2.0 * q as f64 - 2.0 * p as f64);
                if s <= z[k] {
                    if k == 0 {
                        break;
                    }
                    k -= 1;
                } else {
                    break;
                }
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = INF;
        }
        let mut k = 0usize;
        for q in 0..n {
            while z[k + 1] < q as f64 {
                k += 1;
            }
            let p = v[k];
            let dq = q as f64 - p as f64;
            out[q] = dq * dq + f[p];
        }
    }

    let mut line = Vec::new();
    let mut out_line = Vec::new();
    // axis 0
    if nx > 1 {
        for k in 0..nz {
            for j in 0..ny {
                let base = (k * ny + j) * nx;
                line.clear();
                line.extend_from_slice(&d2[base..base + nx]);
                edt_1d(&line, &mut out_line);
                d2[base..base + nx].copy_from_slice(&out_line);
            }
        }
    }
    // axis 1
    if ny > 1 {
        for k in 0..nz {
            for i in 0..nx {
                line.clear();
                for j in 0..ny {
                    line.push(d2[(k * ny + j) * nx + i]);
                }
                edt_1d(&line, &mut out_line);
                for j in 0..ny {
                    d2[(k * ny + j) * nx + i] = out_line[j];
                }
            }
        }
    }
    // axis 2
    if nz > 1 {
        for j in 0..ny {
            for i in 0..nx {
                line.clear();
                for k in 0..nz {
                    line.push(d2[(k * ny + j) * nx + i]);
                }
                edt_1d(&line, &mut out_line);
                for k in 0..nz {
                    d2[(k * ny + j) * nx + i] = out_line[k];
                }
            }
        }
    }

    let mut field = GridField::zeros(ctx);
    field
        .values
        .iter_mut()
        .zip(d2.iter())
        .for_each(|(v, &s)| *v = s.sqrt() * ctx.h);
    Ok(field)
}

/// Annulus or closed-ball pieces of the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PieceVariant {
    /// `F` intersected with the dyadic annulus `2^{-(m+1)} <= |y - x| <= 2^{-m}`.
    Annulus,
    /// `F` intersected with the closed ball of radius `2^{-m}`.
    ClosedBall,
}

/// One rescaled dyadic piece: the intersection at level `m`, blown up by `2^m`
/// about `x` and rasterized on a dedicated unit-scale window.
#[derive(Debug, Clone)]
pub struct DyadicPiece {
    pub m: i32,
    pub rescaled_mask: GridMask,
}

#[derive(Debug, Clone)]
pub struct DyadicDecomposition {
    pub center: [f64; 3],
    pub variant: PieceVariant,
    pub entries: Vec<DyadicPiece>,
}

/// Grid used for all rescaled dyadic windows; the rescaled pieces live inside
/// the closed unit ball, leaving a one-unit margin on `[-2, 2]^3`.
pub fn window_grid(resolution: usize) -> GridContext {
    GridContext::cube(2.0, resolution).expect("window grid")
}

/// Rasterize the rescaled pieces `2^m ((F cap piece_m(x)) - x)` for `m` in the
/// given range on a dedicated window grid. Empty intersections are omitted.
pub fn dyadic_pieces(
    spec: &SetSpec,
    x: [f64; 3],
    variant: PieceVariant,
    m_range: std::ops::RangeInclusive<i32>,
    window: &GridContext,
) -> Result<DyadicDecomposition, GeomError> {
    let mut entries = Vec::new();
    if !spec.is_empty() {
        for m in m_range {
            let scale = (2.0f64).powi(m);
            // recentre at x and blow up by 2^m: set lives in the unit ball
            let rescaled = spec.transform(x, scale, [0.0; 3]);
            let reach = window.h / 2.0;
            let mut bits = vec![false; window.len()];
            let mut any = false;
            for idx in 0..window.len() {
                let p = window.node(idx);
                let r = norm(p);
                let in_piece = match variant {
                    PieceVariant::Annulus => r >= 0.5 - reach && r <= 1.0 + reach,
                    PieceVariant::ClosedBall => r <= 1.0 + reach,
                };
                if in_piece && rescaled.distance(p) <= reach {
                    bits[idx] = true;
                    any = true;
                }
            }
            if any {
                entries.push(DyadicPiece {
                    m,
                    rescaled_mask: GridMask { ctx: window.clone(), bits },
                });
            }
        }
    }
    Ok(DyadicDecomposition { center: x, variant, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_ball() -> SetSpec {
        SetSpec::ball([0.0; 3], 1.0)
    }

    #[test]
    fn ball_volume_converges_at_rate_h() {
        // conservative closed rasterization dilates the ball by h/2, so the
        // counted volume overshoots by ~3h/2 relative and tightens linearly
        let exact = 4.0 * std::f64::consts::PI / 3.0;
        let mut errors = Vec::new();
        for res in [32usize, 64, 128] {
            let grid = GridContext::cube(2.0, res).unwrap();
            let mask = rasterize(&unit_ball(), &grid).unwrap();
            let volume = mask.count() as f64 * grid.h.powi(3);
            errors.push((volume - exact).abs() / exact);
        }
        assert!(errors[1] < 0.65 * errors[0], "errors {errors:?}");
        assert!(errors[2] < 0.65 * errors[1], "errors {errors:?}");
        // at 128^3 the dilation bias is inside the five-percent band
        assert!(errors[2] < 0.05, "error {}", errors[2]);
    }

    #[test]
    fn empty_spec_rasterizes_to_all_false() {
        let grid = GridContext::cube(2.0, 16).unwrap();
        let mask = rasterize(&SetSpec::empty(), &grid).unwrap();
        assert!(mask.is_empty());
    }

    #[test]
    fn point_cloud_marks_cells_within_half_spacing() {
        let grid = GridContext::cube(2.0, 16).unwrap();
        // place the point on a node so the within-h/2 rule marks exactly one cell;
        // a point on a cell corner is farther than h/2 from every node and
        // legitimately rasterizes to nothing
        let p = grid.node(grid.index(8, 8, 8));
        let spec = SetSpec::new(vec![Primitive::PointCloud { points: vec![p] }], 0.5).unwrap();
        let mask = rasterize(&spec, &grid).unwrap();
        for idx in 0..grid.len() {
            let d = norm(sub(grid.node(idx), p));
            assert_eq!(mask.bits[idx], d <= grid.h / 2.0, "node {idx}");
        }
        assert_eq!(mask.count(), 1);
    }

    #[test]
    fn spec_out_of_box_is_rejected() {
        let grid = GridContext::cube(1.0, 16).unwrap();
        let err = rasterize(&unit_ball(), &grid);
        assert!(matches!(err, Err(GeomError::SpecOutOfBox(_))));
    }

    #[test]
    fn distance_field_matches_brute_force() {
        let grid = GridContext::cube(1.0, 16).unwrap();
        let spec = SetSpec::new(
            vec![Primitive::Segment {
                a: [-0.4, -0.2, 0.0],
                b: [0.4, 0.3, 0.1],
                thickness: 0.05,
            }],
            1.0,
        )
        .unwrap();
        let mask = rasterize(&spec, &grid).unwrap();
        let field = distance_field(&mask).unwrap();
        let marked = mask.marked_indices();
        for &idx in &[0usize, 137, grid.len() / 2, grid.len() - 1] {
            let p = grid.node(idx);
            let brute = marked
                .iter()
                .map(|&m| norm(sub(p, grid.node(m))))
                .fold(f64::INFINITY, f64::min);
            assert!(
                (field.values[idx] - brute).abs() < 1e-9,
                "node {idx}: edt {} brute {}",
                field.values[idx],
                brute
            );
        }
    }

    #[test]
    fn distance_field_zero_inside_and_radial_outside() {
        let grid = GridContext::cube(2.0, 32).unwrap();
        let mask = rasterize(&unit_ball(), &grid).unwrap();
        let field = distance_field(&mask).unwrap();
        let inside = grid.nearest_node([0.0, 0.0, 0.0]).unwrap();
        assert_eq!(field.values[inside], 0.0);
        let outside = grid.nearest_node([1.9, 0.0, 0.0]).unwrap();
        let expect = norm(grid.node(outside)) - 1.0;
        assert!((field.values[outside] - expect).abs() <= grid.h);
    }

    #[test]
    fn distance_field_empty_set_errors() {
        let grid = GridContext::cube(1.0, 16).unwrap();
        let mask = GridMask::empty(&grid);
        assert!(matches!(distance_field(&mask), Err(GeomError::EmptySet)));
    }

    #[test]
    fn annulus_pieces_of_far_ball_stop_at_m_zero() {
        let window = window_grid(32);
        let spec = unit_ball();
        let dec = dyadic_pieces(&spec, [2.0, 0.0, 0.0], PieceVariant::Annulus, -4..=4, &window)
            .unwrap();
        assert!(!dec.entries.is_empty());
        for piece in &dec.entries {
            assert!(piece.m <= 0, "nonempty annulus at m={}", piece.m);
        }
    }

    #[test]
    fn single_point_occupies_exactly_one_annulus() {
        let window = window_grid(32);
        // chosen so the m=1 rescaling 2p lands exactly on a window node
        let p = [0.28125, 0.03125, 0.03125];
        let spec = SetSpec::new(vec![Primitive::PointCloud { points: vec![p] }], 0.5).unwrap();
        let dec = dyadic_pieces(&spec, [0.0; 3], PieceVariant::Annulus, -6..=10, &window).unwrap();
        // |p| = 0.2845 lies strictly inside [2^{-2}, 2^{-1}]: exactly m = 1 fires
        assert_eq!(dec.entries.len(), 1);
        assert_eq!(dec.entries[0].m, 1);
    }

    #[test]
    fn closed_ball_pieces_keep_unit_size_at_boundary_point() {
        let window = window_grid(48);
        let spec = unit_ball();
        let y = [1.0, 0.0, 0.0];
        let dec =
            dyadic_pieces(&spec, y, PieceVariant::ClosedBall, 0..=6, &window).unwrap();
        assert_eq!(dec.entries.len(), 7);
        let cell = window.h.powi(3);
        for piece in &dec.entries {
            // rescaled cap of the ball keeps a volume fraction of the unit ball
            let vol = piece.rescaled_mask.count() as f64 * cell;
            assert!(
                vol > 0.25,
                "piece m={} volume {vol} too thin",
                piece.m
            );
        }
    }

    #[test]
    fn scale_spec_halves_ball_parameters() {
        let spec = unit_ball();
        let scaled = scale_spec(&spec, 2.0, [0.0; 3]).unwrap();
        match &scaled.primitives[0] {
            Primitive::Ball { center, radius } => {
                assert_eq!(*center, [0.0; 3]);
                assert!((radius - 0.5).abs() < 1e-12);
            }
            other => panic!("unexpected primitive {other:?}"),
        }
    }

    #[test]
    fn scale_spec_identity() {
        let spec = SetSpec::ball([0.3, -0.2, 0.5], 0.4);
        let same = scale_spec(&spec, 1.0, [0.1, 0.0, 0.0]).unwrap();
        match (&spec.primitives[0], &same.primitives[0]) {
            (
                Primitive::Ball { center: c0, radius: r0 },
                Primitive::Ball { center: c1, radius: r1 },
            ) => {
                for a in 0..3 {
                    assert!((c0[a] - c1[a]).abs() < 1e-12);
                }
                assert!((r0 - r1).abs() < 1e-12);
            }
            _ => panic!("primitive kind changed"),
        }
    }
}
