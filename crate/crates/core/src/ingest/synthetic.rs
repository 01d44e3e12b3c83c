//! Ray-cast synthetic scenes with exact ground truth.
//!
//! The sensor sits at `(0, 0, sensor_height)` above the ground datum and
//! points are emitted in that world frame: x and y as in the sensor frame,
//! z measured from the datum. Flat terrain at `z = 0` therefore yields
//! ground returns at `z = 0`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Frame, GroundTruthObject, ObjectClass};
use crate::error::{Error, Result};
use crate::geom::{Box3D, Point3, PointCloud};
use crate::kv::{parse_numbers, KvFile};

/// Axis-aligned rectangle in the ground plane, half-open on the upper edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub const fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x0 <= x && x < self.x1 && self.y0 <= y && y < self.y1
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn overlap_area(&self, o: &Rect) -> f64 {
        let w = self.x1.min(o.x1) - self.x0.max(o.x0);
        let h = self.y1.min(o.y1) - self.y0.max(o.y0);
        w.max(0.0) * h.max(0.0)
    }
}

/// A planar terrain piece `z = a*x + b*y + c` over `rect`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainPatch {
    pub rect: Rect,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl TerrainPatch {
    pub const fn flat(rect: Rect, z: f64) -> Self {
        Self { rect, a: 0.0, b: 0.0, c: z }
    }

    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }
}

/// Object primitives. All sit on the terrain at their centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Yawed box; the lowest `clearance` meters are open (vehicle underbody).
    Box { length: f64, width: f64, height: f64, yaw: f64, clearance: f64 },
    /// Vertical cylinder.
    Cylinder { radius: f64, height: f64 },
    /// Side-view L: a low frame box over the full length plus an upper box
    /// at the rear third.
    LShape { length: f64, width: f64, height: f64, yaw: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectSpec {
    pub class: ObjectClass,
    pub x: f64,
    pub y: f64,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub region: Rect,
    pub terrain: Vec<TerrainPatch>,
    pub objects: Vec<ObjectSpec>,
    pub n_rings: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub azimuth_step_deg: f64,
    pub max_range: f64,
    pub sensor_height: f64,
    pub noise_sigma: f64,
}

impl Default for SceneSpec {
    /// HDL-64E-like sensor over flat ground covering the default grid region.
    fn default() -> Self {
        let region = Rect::new(0.0, 70.0, -40.0, 40.0);
        Self {
            region,
            terrain: vec![TerrainPatch::flat(region, 0.0)],
            objects: Vec::new(),
            n_rings: 64,
            elevation_min_deg: -24.8,
            elevation_max_deg: 2.0,
            azimuth_step_deg: 0.2,
            max_range: 120.0,
            sensor_height: 1.73,
            noise_sigma: 0.02,
        }
    }
}

/// Origin of one emitted point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointTag {
    Ground,
    /// Index into [`SyntheticScene::objects`].
    Object(usize),
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub cloud: PointCloud,
    pub objects: Vec<GroundTruthObject>,
    pub terrain: Vec<TerrainPatch>,
    /// One tag per cloud point.
    pub tags: Vec<PointTag>,
}

/// Returns an object needs before it is labelled in a frame.
pub const MIN_LABELLED_RETURNS: usize = 10;

impl SyntheticScene {
    /// Frame whose labels omit objects with fewer than
    /// [`MIN_LABELLED_RETURNS`] returns, which no annotator would have seen.
    pub fn into_frame(self, id: impl Into<String>) -> Frame {
        let mut hits = vec![0usize; self.objects.len()];
        for t in &self.tags {
            if let PointTag::Object(i) = t {
                hits[*i] += 1;
            }
        }
        let objects =
            self.objects.into_iter().zip(hits).filter(|(_, h)| *h >= MIN_LABELLED_RETURNS).map(|(o, _)| o).collect();
        Frame { id: id.into(), cloud: self.cloud, objects }
    }

    pub fn object_point_indices(&self, object: usize) -> Vec<usize> {
        self.tags
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == PointTag::Object(object))
            .map(|(i, _)| i)
            .collect()
    }
}

// Solid primitives in world coordinates.
#[derive(Debug, Clone, Copy)]
enum Solid {
    Obb { cx: f64, cy: f64, hx: f64, hy: f64, z0: f64, z1: f64, cos: f64, sin: f64 },
    Cyl { cx: f64, cy: f64, r: f64, z0: f64, z1: f64 },
}

impl Solid {
    fn center_radius(&self) -> (f64, f64, f64) {
        match *self {
            Solid::Obb { cx, cy, hx, hy, .. } => (cx, cy, hx.hypot(hy)),
            Solid::Cyl { cx, cy, r, .. } => (cx, cy, r),
        }
    }

    fn footprint(&self) -> Rect {
        match *self {
            Solid::Obb { cx, cy, hx, hy, cos, sin, .. } => {
                let ex = (hx * cos).abs() + (hy * sin).abs();
                let ey = (hx * sin).abs() + (hy * cos).abs();
                Rect::new(cx - ex, cx + ex, cy - ey, cy + ey)
            }
            Solid::Cyl { cx, cy, r, .. } => Rect::new(cx - r, cx + r, cy - r, cy + r),
        }
    }

    fn z_range(&self) -> (f64, f64) {
        match *self {
            Solid::Obb { z0, z1, .. } | Solid::Cyl { z0, z1, .. } => (z0, z1),
        }
    }

    /// Entry distance of the ray `o + t*d`, `t > 0`.
    fn hit(&self, o: [f64; 3], d: [f64; 3]) -> Option<f64> {
        let (mut t_in, mut t_out) = slab(o[2], d[2], self.z_range().0, self.z_range().1)?;
        match *self {
            Solid::Obb { cx, cy, hx, hy, cos, sin, .. } => {
                let (px, py) = (o[0] - cx, o[1] - cy);
                let lx = cos * px + sin * py;
                let ly = -sin * px + cos * py;
                let dx = cos * d[0] + sin * d[1];
                let dy = -sin * d[0] + cos * d[1];
                for (p, v, h) in [(lx, dx, hx), (ly, dy, hy)] {
                    let (a, b) = slab(p, v, -h, h)?;
                    t_in = t_in.max(a);
                    t_out = t_out.min(b);
                }
            }
            Solid::Cyl { cx, cy, r, .. } => {
                let (px, py) = (o[0] - cx, o[1] - cy);
                let a = d[0] * d[0] + d[1] * d[1];
                let c = px * px + py * py - r * r;
                if a < 1e-18 {
                    if c > 0.0 {
                        return None;
                    }
                } else {
                    let b = px * d[0] + py * d[1];
                    let disc = b * b - a * c;
                    if disc < 0.0 {
                        return None;
                    }
                    let s = disc.sqrt();
                    t_in = t_in.max((-b - s) / a);
                    t_out = t_out.min((-b + s) / a);
                }
            }
        }
        (t_in <= t_out && t_in > 1e-9).then_some(t_in)
    }
}

fn slab(p: f64, v: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if v.abs() < 1e-15 {
        return (lo <= p && p <= hi).then_some((f64::NEG_INFINITY, f64::INFINITY));
    }
    let a = (lo - p) / v;
    let b = (hi - p) / v;
    Some((a.min(b), a.max(b)))
}

fn solids_of(obj: &ObjectSpec, base: f64) -> Vec<Solid> {
    match obj.shape {
        Shape::Box { length, width, height, yaw, clearance } => vec![Solid::Obb {
            cx: obj.x,
            cy: obj.y,
            hx: length / 2.0,
            hy: width / 2.0,
            z0: base + clearance,
            z1: base + height,
            cos: yaw.cos(),
            sin: yaw.sin(),
        }],
        Shape::Cylinder { radius, height } => {
            vec![Solid::Cyl { cx: obj.x, cy: obj.y, r: radius, z0: base, z1: base + height }]
        }
        Shape::LShape { length, width, height, yaw } => {
            let (cos, sin) = (yaw.cos(), yaw.sin());
            let frame_top = base + 0.55 * height;
            // Upper part sits over the rear third.
            let back = -length / 3.0;
            vec![
                Solid::Obb {
                    cx: obj.x,
                    cy: obj.y,
                    hx: length / 2.0,
                    hy: width / 2.0,
                    z0: base,
                    z1: frame_top,
                    cos,
                    sin,
                },
                Solid::Obb {
                    cx: obj.x + back * cos,
                    cy: obj.y + back * sin,
                    hx: length / 6.0,
                    hy: width / 2.0,
                    z0: frame_top,
                    z1: base + height,
                    cos,
                    sin,
                },
            ]
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

impl SceneSpec {
    /// Terrain height below `(x, y)`, if some patch covers it.
    pub fn terrain_height(&self, x: f64, y: f64) -> Option<f64> {
        self.terrain.iter().find(|p| p.rect.contains(x, y)).map(|p| p.height_at(x, y))
    }

    pub fn ring_elevations(&self) -> Vec<f64> {
        let (lo, hi) = (self.elevation_min_deg.to_radians(), self.elevation_max_deg.to_radians());
        if self.n_rings == 1 {
            return vec![hi];
        }
        let step = (hi - lo) / (self.n_rings - 1) as f64;
        (0..self.n_rings).map(|r| hi - r as f64 * step).collect()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_rings == 0 || self.n_rings > u16::MAX as usize {
            return bad(format!("ring count {} out of range", self.n_rings));
        }
        if !(self.azimuth_step_deg > 0.0) || !(self.max_range > 0.0) || !(self.noise_sigma >= 0.0) {
            return bad("azimuth step and max range must be positive, noise non-negative".into());
        }
        if self.elevation_min_deg > self.elevation_max_deg {
            return bad("elevation_min_deg exceeds elevation_max_deg".into());
        }
        if !self.terrain.is_empty() {
            if self.region.area() <= 0.0 {
                return bad("empty scene region".into());
            }
            let mut covered = 0.0;
            for (i, p) in self.terrain.iter().enumerate() {
                if p.rect.area() <= 0.0 || p.rect.overlap_area(&self.region) < p.rect.area() - 1e-9 {
                    return bad(format!("terrain patch {i} is empty or leaves the region"));
                }
                for (j, q) in self.terrain.iter().enumerate().skip(i + 1) {
                    if p.rect.overlap_area(&q.rect) > 1e-12 {
                        return bad(format!("terrain patches {i} and {j} overlap"));
                    }
                }
                covered += p.rect.area();
            }
            if (covered - self.region.area()).abs() > 1e-6 * self.region.area() {
                return bad("terrain patches do not tile the region".into());
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KvFile::read(path)?)
    }

    /// Reads a scene file. Unset sensor keys keep their defaults; `terrain`
    /// and `object` may repeat.
    ///
    /// ```text
    /// region = 0 70 -40 40          # x0 x1 y0 y1
    /// terrain = 0 40 -40 40 0 0 0   # x0 x1 y0 y1 a b c
    /// object = car 10 0 box 4 2 1.5 0 0.3
    /// object = pedestrian 15 3 cylinder 0.3 1.7
    /// object = cyclist 20 -3 lshape 1.8 0.6 1.7 0
    /// ```
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut spec = SceneSpec { terrain: Vec::new(), ..SceneSpec::default() };
        if let Some(v) = kv.parse_value("n_rings")? {
            spec.n_rings = v;
        }
        for (key, slot) in [
            ("elevation_min_deg", &mut spec.elevation_min_deg),
            ("elevation_max_deg", &mut spec.elevation_max_deg),
            ("azimuth_step_deg", &mut spec.azimuth_step_deg),
            ("max_range", &mut spec.max_range),
            ("sensor_height", &mut spec.sensor_height),
            ("noise_sigma", &mut spec.noise_sigma),
        ] {
            if let Some(v) = kv.parse_value(key)? {
                *slot = v;
            }
        }
        if let Some((line, v)) = kv.get_all("region").last() {
            match parse_numbers(v).as_deref() {
                Some(&[x0, x1, y0, y1]) => spec.region = Rect::new(x0, x1, y0, y1),
                _ => return Err(kv.parse_error(line, "region expects x0 x1 y0 y1")),
            }
        }
        for (line, v) in kv.get_all("terrain") {
            match parse_numbers(v).as_deref() {
                Some(&[x0, x1, y0, y1, a, b, c]) => {
                    spec.terrain.push(TerrainPatch { rect: Rect::new(x0, x1, y0, y1), a, b, c })
                }
                _ => return Err(kv.parse_error(line, "terrain expects x0 x1 y0 y1 a b c")),
            }
        }
        for (line, v) in kv.get_all("object") {
            spec.objects.push(parse_object(v).map_err(|m| kv.parse_error(line, m))?);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let r = self.region;
        let _ = writeln!(s, "region = {} {} {} {}", r.x0, r.x1, r.y0, r.y1);
        let _ = writeln!(s, "n_rings = {}", self.n_rings);
        let _ = writeln!(s, "elevation_min_deg = {}", self.elevation_min_deg);
        let _ = writeln!(s, "elevation_max_deg = {}", self.elevation_max_deg);
        let _ = writeln!(s, "azimuth_step_deg = {}", self.azimuth_step_deg);
        let _ = writeln!(s, "max_range = {}", self.max_range);
        let _ = writeln!(s, "sensor_height = {}", self.sensor_height);
        let _ = writeln!(s, "noise_sigma = {}", self.noise_sigma);
        for p in &self.terrain {
            let q = p.rect;
            let _ = writeln!(s, "terrain = {} {} {} {} {} {} {}", q.x0, q.x1, q.y0, q.y1, p.a, p.b, p.c);
        }
        for o in &self.objects {
            let shape = match o.shape {
                Shape::Box { length, width, height, yaw, clearance } => {
                    format!("box {length} {width} {height} {yaw} {clearance}")
                }
                Shape::Cylinder { radius, height } => format!("cylinder {radius} {height}"),
                Shape::LShape { length, width, height, yaw } => {
                    format!("lshape {length} {width} {height} {yaw}")
                }
            };
            let _ = writeln!(s, "object = {} {} {} {shape}", o.class, o.x, o.y);
        }
        s
    }
}

fn parse_object(v: &str) -> std::result::Result<ObjectSpec, String> {
    let mut it = v.split_whitespace();
    let class: ObjectClass = it.next().ok_or("missing class")?.parse()?;
    let num = |s: Option<&str>| -> std::result::Result<f64, String> {
        s.ok_or("missing value")?.parse().map_err(|_| format!("bad number in {v:?}"))
    };
    let x = num(it.next())?;
    let y = num(it.next())?;
    let kind = it.next().ok_or("missing shape")?;
    let rest: Vec<&str> = it.collect();
    let vals = rest.iter().map(|s| num(Some(s))).collect::<std::result::Result<Vec<_>, _>>()?;
    let shape = match (kind, vals.as_slice()) {
        ("box", &[length, width, height, yaw, clearance]) => {
            Shape::Box { length, width, height, yaw, clearance }
        }
        ("box", &[length, width, height, yaw]) => {
            Shape::Box { length, width, height, yaw, clearance: 0.0 }
        }
        ("cylinder", &[radius, height]) => Shape::Cylinder { radius, height },
        ("lshape", &[length, width, height, yaw]) => Shape::LShape { length, width, height, yaw },
        _ => return Err(format!("cannot parse shape {kind:?} with {} values", vals.len())),
    };
    Ok(ObjectSpec { class, x, y, shape })
}

/// Simulates one full sweep of every ring over the scene.
///
/// Points are emitted ring by ring (top ring first), each ring in increasing
/// azimuth from `-pi`. Rays that miss everything within `max_range` emit no
/// point.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut solids: Vec<(usize, Solid)> = Vec::new();
    let mut objects = Vec::with_capacity(spec.objects.len());
    let mut footprints = Vec::with_capacity(spec.objects.len());
    for (i, obj) in spec.objects.iter().enumerate() {
        let base = spec.terrain_height(obj.x, obj.y).unwrap_or(0.0);
        let parts = solids_of(obj, base);
        let mut bbox: Option<Box3D> = None;
        let mut fp: Option<Rect> = None;
        for s in &parts {
            let f = s.footprint();
            let lo = [f.x0, f.y0, base];
            let hi = [f.x1, f.y1, s.z_range().1];
            match bbox.as_mut() {
                Some(b) => {
                    b.expand(lo);
                    b.expand(hi);
                }
                None => bbox = Box3D::enclosing([lo, hi]),
            }
            fp = Some(match fp {
                Some(r) => Rect::new(r.x0.min(f.x0), r.x1.max(f.x1), r.y0.min(f.y0), r.y1.max(f.y1)),
                None => f,
            });
        }
        let fp = fp.expect("every shape has a solid");
        for (j, other) in footprints.iter().enumerate() {
            if fp.overlap_area(other) > 0.0 {
                return Err(Error::Config(format!("object footprints {j} and {i} overlap")));
            }
        }
        footprints.push(fp);
        let bbox = bbox.expect("every shape has a solid");
        let c = bbox.center();
        objects.push(GroundTruthObject { class: obj.class, bbox, center: c, source: None });
        solids.extend(parts.into_iter().map(|s| (i, s)));
    }

    // Angular window of every solid, for a cheap per-azimuth prefilter.
    let windows: Vec<(f64, f64)> = solids
        .iter()
        .map(|(_, s)| {
            let (cx, cy, r) = s.center_radius();
            let d = cx.hypot(cy);
            if d <= r {
                (0.0, PI + 1.0)
            } else {
                (cy.atan2(cx), (r / d).asin())
            }
        })
        .collect();

    let origin = [0.0, 0.0, spec.sensor_height];
    let elevations = spec.ring_elevations();
    let step = spec.azimuth_step_deg.to_radians();
    let n_az = (2.0 * PI / step).round().max(1.0) as usize;
    let normal = Normal::new(0.0, spec.noise_sigma.max(0.0))
        .map_err(|e| Error::Config(format!("noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut hits: Vec<Vec<(f64, [f64; 3], PointTag)>> = vec![Vec::new(); elevations.len()];
    let mut candidates = Vec::new();
    for k in 0..n_az {
        let az = -PI + k as f64 * step;
        let (s_az, c_az) = az.sin_cos();
        candidates.clear();
        candidates.extend(
            windows
                .iter()
                .enumerate()
                .filter(|(_, &(c, h))| wrap_angle(az - c).abs() <= h + step)
                .map(|(j, _)| j),
        );
        for (ring, &el) in elevations.iter().enumerate() {
            let (s_el, c_el) = el.sin_cos();
            let d = [c_el * c_az, c_el * s_az, s_el];
            let mut best: Option<(f64, PointTag)> = None;
            for p in &spec.terrain {
                let denom = d[2] - p.a * d[0] - p.b * d[1];
                if denom.abs() < 1e-12 {
                    continue;
                }
                let t = (p.c - origin[2]) / denom;
                if t <= 0.0 || t > spec.max_range {
                    continue;
                }
                if p.rect.contains(t * d[0], t * d[1]) && best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, PointTag::Ground));
                }
            }
            for &j in &candidates {
                let (obj, solid) = solids[j];
                if let Some(t) = solid.hit(origin, d) {
                    if t <= spec.max_range && best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, PointTag::Object(obj)));
                    }
                }
            }
            if let Some((t, tag)) = best {
                hits[ring].push((az, [origin[0] + t * d[0], origin[1] + t * d[1], origin[2] + t * d[2]], tag));
            }
        }
    }

    let total: usize = hits.iter().map(Vec::len).sum();
    let mut points = Vec::with_capacity(total);
    let mut rings = Vec::with_capacity(total);
    let mut tags = Vec::with_capacity(total);
    for (ring, ring_hits) in hits.into_iter().enumerate() {
        for (_, p, tag) in ring_hits {
            let (nx, ny, nz): (f64, f64, f64) = if spec.noise_sigma > 0.0 {
                (normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng))
            } else {
                (0.0, 0.0, 0.0)
            };
            points.push(Point3::new(p[0] + nx, p[1] + ny, p[2] + nz));
            rings.push(ring as u16);
            tags.push(tag);
        }
    }
    Ok(SyntheticScene {
        cloud: PointCloud::with_rings(points, rings)?,
        objects,
        terrain: spec.terrain.clone(),
        tags,
    })
}

/// Parameters of [`random_scene_spec`].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSceneConfig {
    pub cars: usize,
    pub vans: usize,
    pub pedestrians: usize,
    pub cyclists: usize,
    /// Background structures: walls, hedges, bushes, poles and cones.
    pub clutter: usize,
    /// Add a 1 m terrain step at this x, when set.
    pub step_at: Option<f64>,
    pub noise_sigma: f64,
    /// Where objects are placed.
    pub placement: Rect,
}

impl Default for RandomSceneConfig {
    fn default() -> Self {
        Self {
            cars: 6,
            vans: 1,
            pedestrians: 3,
            cyclists: 2,
            clutter: 14,
            step_at: None,
            noise_sigma: 0.02,
            placement: Rect::new(4.0, 45.0, -18.0, 18.0),
        }
    }
}

fn random_shape(class: ObjectClass, rng: &mut ChaCha8Rng) -> Shape {
    // Road users follow the road (either direction); clutter is arbitrary.
    let yaw = if class.is_object() {
        let heading = if rng.random_bool(0.5) { 0.0 } else { PI };
        heading + rng.random_range(-0.25..0.25)
    } else {
        rng.random_range(-PI..PI)
    };
    match class {
        ObjectClass::Car => Shape::Box {
            length: rng.random_range(3.6..4.6),
            width: rng.random_range(1.6..1.9),
            height: rng.random_range(1.4..1.65),
            yaw,
            clearance: 0.3,
        },
        ObjectClass::Van => Shape::Box {
            length: rng.random_range(4.6..5.6),
            width: rng.random_range(1.9..2.1),
            height: rng.random_range(1.9..2.4),
            yaw,
            clearance: 0.32,
        },
        ObjectClass::Pedestrian => Shape::Cylinder {
            radius: rng.random_range(0.22..0.35),
            height: rng.random_range(1.5..1.9),
        },
        ObjectClass::Cyclist => Shape::LShape {
            length: rng.random_range(1.6..1.9),
            width: rng.random_range(0.5..0.7),
            height: rng.random_range(1.6..1.85),
            yaw,
        },
        ObjectClass::Background => match rng.random_range(0..5) {
            0 => Shape::Box {
                length: rng.random_range(10.0..20.0),
                width: rng.random_range(0.25..0.4),
                height: rng.random_range(1.5..2.5),
                yaw,
                clearance: 0.0,
            },
            1 => Shape::Box {
                length: rng.random_range(3.0..8.0),
                width: rng.random_range(0.6..1.0),
                height: rng.random_range(0.3..0.45),
                yaw,
                clearance: 0.0,
            },
            2 => Shape::Cylinder { radius: rng.random_range(0.4..0.9), height: rng.random_range(0.5..1.2) },
            3 => Shape::Cylinder { radius: rng.random_range(0.08..0.15), height: rng.random_range(3.0..5.0) },
            _ => Shape::Cylinder { radius: rng.random_range(0.12..0.18), height: rng.random_range(0.4..0.6) },
        },
    }
}

fn footprint_of(obj: &ObjectSpec) -> Rect {
    solids_of(obj, 0.0)
        .iter()
        .map(Solid::footprint)
        .reduce(|r, f| Rect::new(r.x0.min(f.x0), r.x1.max(f.x1), r.y0.min(f.y0), r.y1.max(f.y1)))
        .expect("every shape has a solid")
}

/// A KITTI-like street scene: labelled road users plus background clutter
/// on flat (or stepped) terrain, with footprints kept at least 0.6 m apart.
pub fn random_scene_spec(cfg: &RandomSceneConfig, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = SceneSpec { noise_sigma: cfg.noise_sigma, ..SceneSpec::default() };
    if let Some(x) = cfg.step_at {
        let r = spec.region;
        spec.terrain = vec![
            TerrainPatch::flat(Rect::new(r.x0, x, r.y0, r.y1), 0.0),
            TerrainPatch::flat(Rect::new(x, r.x1, r.y0, r.y1), 1.0),
        ];
    }
    let classes = [
        (ObjectClass::Car, cfg.cars),
        (ObjectClass::Van, cfg.vans),
        (ObjectClass::Pedestrian, cfg.pedestrians),
        (ObjectClass::Cyclist, cfg.cyclists),
        (ObjectClass::Background, cfg.clutter),
    ];
    let mut taken: Vec<Rect> = Vec::new();
    let p = cfg.placement;
    for (class, count) in classes {
        for _ in 0..count {
            for _attempt in 0..200 {
                let obj = ObjectSpec {
                    class,
                    x: rng.random_range(p.x0..p.x1),
                    y: rng.random_range(p.y0..p.y1),
                    shape: random_shape(class, &mut rng),
                };
                let fp = footprint_of(&obj);
                let grown = Rect::new(fp.x0 - 0.6, fp.x1 + 0.6, fp.y0 - 0.6, fp.y1 + 0.6);
                // Keep the sensor's immediate surroundings clear and stay off the step edge.
                let near_sensor = fp.x0 < 2.5 && fp.y0 < 2.0 && fp.y1 > -2.0;
                let on_step = cfg.step_at.is_some_and(|s| grown.x0 < s && s < grown.x1);
                if near_sensor || on_step || taken.iter().any(|t| t.overlap_area(&grown) > 0.0) {
                    continue;
                }
                taken.push(fp);
                spec.objects.push(obj);
                break;
            }
        }
    }
    spec
}

/// Six well-separated road users on flat ground, each seen at an oblique
/// angle by an unobstructed line of sight.
pub fn isolated_objects_spec() -> SceneSpec {
    let vehicle = |class, x, y, length, width, height, clearance| ObjectSpec {
        class,
        x,
        y,
        shape: Shape::Box { length, width, height, yaw: 0.0, clearance },
    };
    let objects = vec![
        vehicle(ObjectClass::Car, 9.0, 5.0, 4.2, 1.8, 1.5, 0.3),
        vehicle(ObjectClass::Car, 10.0, -9.0, 4.0, 1.7, 1.45, 0.3),
        vehicle(ObjectClass::Van, 7.0, 12.0, 5.0, 2.0, 2.1, 0.32),
        vehicle(ObjectClass::Car, 4.0, -14.0, 4.4, 1.8, 1.55, 0.3),
        ObjectSpec { class: ObjectClass::Pedestrian, x: 12.0, y: 1.5, shape: Shape::Cylinder { radius: 0.3, height: 1.75 } },
        ObjectSpec {
            class: ObjectClass::Cyclist,
            x: 16.0,
            y: -3.0,
            shape: Shape::LShape { length: 1.8, width: 0.6, height: 1.7, yaw: 0.0 },
        },
    ];
    SceneSpec { objects, ..SceneSpec::default() }
}

/// Ray-cast point sets of single isolated objects of `class`, as they would
/// appear after ground removal: random range, bearing and size, no terrain,
/// and returns below `base + 0.26` dropped. Samples with fewer than three
/// points are redrawn.
pub fn object_samples(class: ObjectClass, count: usize, seed: u64) -> Result<Vec<Vec<Point3>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (class.index() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > count * 50 + 100 {
            return Err(Error::Degenerate(format!("cannot draw visible {class} samples")));
        }
        let range = rng.random_range(5.0..30.0);
        let bearing = rng.random_range(-0.7..0.7f64);
        let obj = ObjectSpec {
            class,
            x: range * bearing.cos(),
            y: range * bearing.sin(),
            shape: random_shape(class, &mut rng),
        };
        let spec = SceneSpec { terrain: Vec::new(), objects: vec![obj], ..SceneSpec::default() };
        let scene = generate_scene(&spec, rng.random())?;
        let pts: Vec<Point3> = scene.cloud.points().iter().copied().filter(|p| p.z >= 0.26).collect();
        if pts.len() >= 3 {
            out.push(pts);
        }
    }
    Ok(out)
}
