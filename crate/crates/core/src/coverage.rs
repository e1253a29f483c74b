//! Boustrophedon coverage planning over a field polygon.
//!
//! Sweep lines run along the sweep heading (`angle`, degrees counter-clockwise
//! from east) and are stacked `spacing` apart along the perpendicular axis. The
//! first line sits `spacing / 2` in from the extreme edge so the camera
//! footprint just reaches the boundary. Each line is clipped to the ROI minus
//! the no-fly zones; the clipped pieces are visited in alternating direction
//! and their endpoints become the plan's waypoints. Gaps left by no-fly zones
//! are crossed along the sweep line.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::geojson::{linestring_feature, props, FieldLayers, GeoJsonError};
use crate::geo::{
    clip_intervals, contains, dist, intersect_intervals, point_segment_distance, subtract_intervals, GeoError,
    GeoPoint, LocalPoint, Polygon,
};

pub const DEFAULT_TURN_THRESHOLD_DEG: f64 = 10.0;
pub const ANGLE_STEP_DEG: f64 = 5.0;

const MIN_PIECE_M: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("sweep spacing must be positive, got {0}")]
    InvalidSpacing(f64),
    #[error("no sweep line intersects the region")]
    EmptyPlan,
    #[error("inset {inset} m is not smaller than half the region width ({half_width} m)")]
    InvalidInset { inset: f64, half_width: f64 },
    #[error("priority region {0} does not intersect the ROI")]
    RegionOutsideRoi(usize),
    #[error("priority region {0}: rank must be >= 1 and spacing > 0")]
    InvalidPriority(usize),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("field: {0}")]
    Field(String),
}

impl From<GeoJsonError> for PlanError {
    fn from(e: GeoJsonError) -> Self {
        PlanError::Field(e.to_string())
    }
}

/// Sweep heading: a fixed angle in degrees, or `"auto"` to search for the
/// heading with the fewest turns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum SweepAngle {
    Degrees(f64),
    Keyword(AutoAngle),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub enum AutoAngle {
    #[serde(rename = "auto")]
    Auto,
}

impl SweepAngle {
    pub const AUTO: SweepAngle = SweepAngle::Keyword(AutoAngle::Auto);

    pub fn fixed(&self) -> Option<f64> {
        match self {
            SweepAngle::Degrees(d) => Some(*d),
            SweepAngle::Keyword(_) => None,
        }
    }
}

impl Default for SweepAngle {
    fn default() -> Self {
        SweepAngle::Degrees(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct SweepConfig {
    /// Distance between neighbouring sweep lines (camera footprint width), meters.
    pub spacing: f64,
    pub angle: SweepAngle,
    /// Extra margin kept from the region boundary, meters.
    pub inset: f64,
    pub turn_threshold_deg: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            spacing: 2.0,
            angle: SweepAngle::default(),
            inset: 0.0,
            turn_threshold_deg: DEFAULT_TURN_THRESHOLD_DEG,
        }
    }
}

impl SweepConfig {
    pub fn with_spacing(spacing: f64) -> Self {
        SweepConfig {
            spacing,
            ..Default::default()
        }
    }

    pub fn at_angle(mut self, degrees: f64) -> Self {
        self.angle = SweepAngle::Degrees(degrees);
        self
    }

    pub fn auto(mut self) -> Self {
        self.angle = SweepAngle::AUTO;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PriorityRegion {
    pub region: Polygon,
    pub spacing_override: f64,
    /// 1 is the highest priority.
    pub rank: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
pub struct PathMetrics {
    pub length: f64,
    pub turn_count: u32,
    pub turn_degree_sum: f64,
}

/// One contiguous sweep inside a plan (a priority region or the remainder).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PlanPart {
    /// Index into the field's priority regions, `None` for the remainder.
    pub priority: Option<usize>,
    pub spacing: f64,
    pub angle_deg: f64,
    pub line_count: usize,
    /// Waypoint index range `[first, last]` covered by this part.
    pub waypoints: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MissionPlan {
    pub origin: GeoPoint,
    pub waypoints: Vec<LocalPoint>,
    pub spacing: f64,
    pub turn_threshold_deg: f64,
    pub parts: Vec<PlanPart>,
    pub metrics: PathMetrics,
}

impl MissionPlan {
    pub fn line_count(&self) -> usize {
        self.parts.iter().map(|p| p.line_count).sum()
    }

    /// Sweep heading of the first part.
    pub fn angle_deg(&self) -> f64 {
        self.parts.first().map_or(0.0, |p| p.angle_deg)
    }

    /// Exported plan document: a GeoJSON LineString plus the metrics block.
    pub fn to_document(&self) -> serde_json::Value {
        let feature = linestring_feature(
            self.origin,
            &self.waypoints,
            props(serde_json::json!({
                "spacing_m": self.spacing,
                "turn_count": self.metrics.turn_count,
                "length_m": self.metrics.length,
            })),
        );
        serde_json::json!({
            "origin": self.origin,
            "spacing_m": self.spacing,
            "angle_deg": self.angle_deg(),
            "line_count": self.line_count(),
            "metrics": self.metrics,
            "parts": self.parts,
            "waypoints_local": self.waypoints.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
            "path": feature,
        })
    }
}

/// The planning world: ROI, no-fly zones and priority regions in local
/// coordinates around `origin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FieldSpec {
    pub origin: GeoPoint,
    pub roi: Polygon,
    #[serde(default)]
    pub nofly: Vec<Polygon>,
    #[serde(default)]
    pub priorities: Vec<PriorityRegion>,
}

impl FieldSpec {
    pub fn new(origin: GeoPoint, roi: Polygon) -> Self {
        FieldSpec {
            origin,
            roi,
            nofly: Vec::new(),
            priorities: Vec::new(),
        }
    }

    pub fn with_nofly(mut self, zone: Polygon) -> Self {
        self.nofly.push(zone);
        self
    }

    pub fn with_priority(mut self, region: Polygon, spacing_override: f64, rank: u32) -> Self {
        self.priorities.push(PriorityRegion {
            region,
            spacing_override,
            rank,
        });
        self
    }

    pub fn from_layers(layers: &FieldLayers) -> Result<Self, PlanError> {
        let roi = layers.local_roi()?;
        let mut field = FieldSpec::new(layers.origin, roi);
        for nf in &layers.nofly {
            field.nofly.push(layers.local_polygon(&nf.ring)?);
        }
        for (i, pr) in layers.priority.iter().enumerate() {
            let spacing = pr.properties.get("spacing").and_then(|v| v.as_f64());
            let rank = pr.properties.get("rank").and_then(|v| v.as_u64());
            let (Some(spacing), Some(rank)) = (spacing, rank) else {
                return Err(PlanError::Field(format!(
                    "priority feature {i} needs numeric spacing and rank"
                )));
            };
            field.priorities.push(PriorityRegion {
                region: layers.local_polygon(&pr.ring)?,
                spacing_override: spacing,
                rank: rank as u32,
            });
        }
        Ok(field)
    }

    pub fn from_geojson(text: &str) -> Result<Self, PlanError> {
        Self::from_layers(&FieldLayers::parse(text)?)
    }
}

/// Unit vectors along the sweep heading and across it.
fn axes(angle_deg: f64) -> (LocalPoint, LocalPoint) {
    let (s, c) = angle_deg.to_radians().sin_cos();
    (LocalPoint::new(c, s), LocalPoint::new(-s, c))
}

/// Offsets of the sweep lines across a region spanning `[lo, hi]`.
fn line_offsets(lo: f64, hi: f64, spacing: f64) -> Vec<f64> {
    let width = hi - lo;
    if width <= spacing * (1.0 + 1e-9) {
        return vec![0.5 * (lo + hi)];
    }
    let n = ((width - spacing) / spacing - 1e-6).ceil() as usize + 1;
    let last = hi - spacing / 2.0;
    (0..n)
        .map(|k| (lo + spacing / 2.0 + k as f64 * spacing).min(last))
        .collect()
}

struct SweepArea<'a> {
    /// Polygon whose extent places the lines.
    shape: &'a Polygon,
    /// Additional polygon the lines must stay inside (the ROI when sweeping a
    /// priority region).
    within: Option<&'a Polygon>,
    exclude: Vec<&'a Polygon>,
}

struct Sweep {
    waypoints: Vec<LocalPoint>,
    line_count: usize,
}

fn sweep(area: &SweepArea<'_>, spacing: f64, angle_deg: f64, inset: f64) -> Result<Sweep, PlanError> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(PlanError::InvalidSpacing(spacing));
    }
    let (along, across) = axes(angle_deg);
    let (mut lo, mut hi) = area.shape.extent_along(across);
    if let Some(w) = area.within {
        let (wl, wh) = w.extent_along(across);
        lo = lo.max(wl);
        hi = hi.min(wh);
        if hi < lo {
            return Err(PlanError::EmptyPlan);
        }
    }
    if inset > 0.0 {
        let half_width = 0.5 * (hi - lo);
        if inset >= half_width {
            return Err(PlanError::InvalidInset { inset, half_width });
        }
        lo += inset;
        hi -= inset;
    }
    let (t_lo, t_hi) = area.shape.extent_along(along);
    let (t_lo, t_hi) = (t_lo - 1.0, t_hi + 1.0);

    let mut waypoints: Vec<LocalPoint> = Vec::new();
    let mut line_count = 0;
    for s in line_offsets(lo, hi, spacing) {
        let a = across.scale(s) + along.scale(t_lo);
        let b = across.scale(s) + along.scale(t_hi);
        let len = dist(a, b);
        let mut pieces = clip_intervals(area.shape, a, b);
        if let Some(w) = area.within {
            pieces = intersect_intervals(&pieces, &clip_intervals(w, a, b));
        }
        for zone in &area.exclude {
            pieces = subtract_intervals(&pieces, &clip_intervals(zone, a, b));
        }
        let trim = inset / len;
        let pieces: Vec<(f64, f64)> = pieces
            .into_iter()
            .map(|(t0, t1)| (t0 + trim, t1 - trim))
            .filter(|(t0, t1)| (t1 - t0) * len > MIN_PIECE_M)
            .collect();
        if pieces.is_empty() {
            continue;
        }
        let forward = line_count % 2 == 0;
        line_count += 1;
        let ordered: Box<dyn Iterator<Item = &(f64, f64)>> = if forward {
            Box::new(pieces.iter())
        } else {
            Box::new(pieces.iter().rev())
        };
        for &(t0, t1) in ordered {
            let (p, q) = (a.lerp(b, t0), a.lerp(b, t1));
            let (start, end) = if forward { (p, q) } else { (q, p) };
            push_distinct(&mut waypoints, start);
            push_distinct(&mut waypoints, end);
        }
    }
    if waypoints.is_empty() {
        return Err(PlanError::EmptyPlan);
    }
    Ok(Sweep { waypoints, line_count })
}

fn push_distinct(out: &mut Vec<LocalPoint>, p: LocalPoint) {
    if out.last().is_none_or(|q| dist(*q, p) > MIN_PIECE_M) {
        out.push(p);
    }
}

/// Path length and turn statistics. A turn is an interior waypoint whose
/// heading change exceeds `threshold_deg`.
pub fn count_turns(waypoints: &[LocalPoint], threshold_deg: f64) -> PathMetrics {
    let length = waypoints.windows(2).map(|w| dist(w[0], w[1])).sum();
    let mut turn_count = 0;
    let mut turn_degree_sum = 0.0;
    for w in waypoints.windows(3) {
        let change = heading_change_deg(w[0], w[1], w[2]);
        if change > threshold_deg {
            turn_count += 1;
            turn_degree_sum += change;
        }
    }
    PathMetrics {
        length,
        turn_count,
        turn_degree_sum,
    }
}

/// Absolute heading change at `b` when flying `a → b → c`, in `[0, 180]`.
pub fn heading_change_deg(a: LocalPoint, b: LocalPoint, c: LocalPoint) -> f64 {
    let v1 = b - a;
    let v2 = c - b;
    if v1.norm() == 0.0 || v2.norm() == 0.0 {
        return 0.0;
    }
    v1.cross(v2).atan2(v1.dot(v2)).abs().to_degrees()
}

fn assemble(field: &FieldSpec, cfg: &SweepConfig, parts: Vec<(Option<usize>, f64, f64, Sweep)>) -> MissionPlan {
    let mut waypoints = Vec::new();
    let mut plan_parts = Vec::new();
    for (priority, spacing, angle_deg, sw) in parts {
        let first = waypoints.len();
        for p in sw.waypoints {
            push_distinct(&mut waypoints, p);
        }
        plan_parts.push(PlanPart {
            priority,
            spacing,
            angle_deg,
            line_count: sw.line_count,
            waypoints: [first.min(waypoints.len() - 1), waypoints.len() - 1],
        });
    }
    let metrics = count_turns(&waypoints, cfg.turn_threshold_deg);
    MissionPlan {
        origin: field.origin,
        waypoints,
        spacing: cfg.spacing,
        turn_threshold_deg: cfg.turn_threshold_deg,
        parts: plan_parts,
        metrics,
    }
}

fn better(candidate: &PathMetrics, best: &PathMetrics) -> bool {
    candidate.turn_count < best.turn_count
        || (candidate.turn_count == best.turn_count && candidate.length < best.length - 1e-6)
}

/// Best heading for `area` on the 5° grid: fewest turns, then shortest path,
/// then smallest angle.
fn best_sweep(area: &SweepArea<'_>, spacing: f64, inset: f64, threshold: f64) -> Result<(f64, Sweep), PlanError> {
    let mut best: Option<(f64, Sweep, PathMetrics)> = None;
    let mut first_err = None;
    let steps = (180.0 / ANGLE_STEP_DEG) as usize;
    for k in 0..steps {
        let angle = k as f64 * ANGLE_STEP_DEG;
        match sweep(area, spacing, angle, inset) {
            Ok(sw) => {
                let m = count_turns(&sw.waypoints, threshold);
                if best.as_ref().is_none_or(|(_, _, bm)| better(&m, bm)) {
                    best = Some((angle, sw, m));
                }
            }
            Err(e @ PlanError::InvalidSpacing(_)) => return Err(e),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.map(|(a, s, _)| (a, s))
        .ok_or(first_err.unwrap_or(PlanError::EmptyPlan))
}

fn sweep_with(area: &SweepArea<'_>, spacing: f64, cfg: &SweepConfig) -> Result<(f64, Sweep), PlanError> {
    match cfg.angle.fixed() {
        Some(angle) => Ok((angle, sweep(area, spacing, angle, cfg.inset)?)),
        None => best_sweep(area, spacing, cfg.inset, cfg.turn_threshold_deg),
    }
}

/// Boustrophedon sweep of the ROI minus the no-fly zones. An `"auto"` angle
/// delegates to [`optimize_direction`].
pub fn generate_sweep(field: &FieldSpec, cfg: &SweepConfig) -> Result<MissionPlan, PlanError> {
    let area = SweepArea {
        shape: &field.roi,
        within: None,
        exclude: field.nofly.iter().collect(),
    };
    let (angle, sw) = sweep_with(&area, cfg.spacing, cfg)?;
    Ok(assemble(field, cfg, vec![(None, cfg.spacing, angle, sw)]))
}

/// Evaluates every heading in `{0°, 5°, …, 175°}` and keeps the plan with the
/// fewest turns, then the shortest length; ties go to the smaller angle.
pub fn optimize_direction(field: &FieldSpec, cfg: &SweepConfig) -> Result<MissionPlan, PlanError> {
    generate_sweep(
        field,
        &SweepConfig {
            angle: SweepAngle::AUTO,
            ..*cfg
        },
    )
}

/// Sweeps each priority region at its own spacing (rank order, overlaps
/// resolved in favour of the higher rank), then the rest of the ROI at
/// `cfg.spacing`.
pub fn apply_priorities(field: &FieldSpec, cfg: &SweepConfig) -> Result<MissionPlan, PlanError> {
    if !(cfg.spacing > 0.0) {
        return Err(PlanError::InvalidSpacing(cfg.spacing));
    }
    for (i, r) in field.priorities.iter().enumerate() {
        if r.rank == 0 || !(r.spacing_override > 0.0) {
            return Err(PlanError::InvalidPriority(i));
        }
        if !polygons_intersect(&field.roi, &r.region) {
            return Err(PlanError::RegionOutsideRoi(i));
        }
    }
    let mut order: Vec<usize> = (0..field.priorities.len()).collect();
    order.sort_by_key(|&i| (field.priorities[i].rank, i));

    let mut parts = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        let region = &field.priorities[i];
        let mut exclude: Vec<&Polygon> = field.nofly.iter().collect();
        exclude.extend(order[..pos].iter().map(|&j| &field.priorities[j].region));
        let area = SweepArea {
            shape: &region.region,
            within: Some(&field.roi),
            exclude,
        };
        match sweep_with(&area, region.spacing_override, cfg) {
            Ok((angle, sw)) => parts.push((Some(i), region.spacing_override, angle, sw)),
            Err(PlanError::EmptyPlan) => {}
            Err(e) => return Err(e),
        }
    }
    let mut exclude: Vec<&Polygon> = field.nofly.iter().collect();
    exclude.extend(field.priorities.iter().map(|r| &r.region));
    let area = SweepArea {
        shape: &field.roi,
        within: None,
        exclude,
    };
    match sweep_with(&area, cfg.spacing, cfg) {
        Ok((angle, sw)) => parts.push((None, cfg.spacing, angle, sw)),
        Err(PlanError::EmptyPlan) => {}
        Err(e) => return Err(e),
    }
    if parts.is_empty() {
        return Err(PlanError::EmptyPlan);
    }
    Ok(assemble(field, cfg, parts))
}

/// Plans the field: priority-aware when regions exist, a plain sweep otherwise.
pub fn plan_field(field: &FieldSpec, cfg: &SweepConfig) -> Result<MissionPlan, PlanError> {
    if field.priorities.is_empty() {
        generate_sweep(field, cfg)
    } else {
        apply_priorities(field, cfg)
    }
}

/// Result of sampling the eroded ROI on a square raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
pub struct RasterCoverage {
    pub samples: u64,
    pub covered: u64,
}

impl RasterCoverage {
    pub fn misses(&self) -> u64 {
        self.samples - self.covered
    }

    /// Covered share in percent; an empty raster counts as fully covered.
    pub fn pct(&self) -> f64 {
        if self.samples == 0 {
            100.0
        } else {
            100.0 * self.covered as f64 / self.samples as f64
        }
    }
}

/// Samples the ROI on a `pitch` raster, keeping points at least `radius`
/// inside the boundary and at least `radius` away from every no-fly zone.
/// A sample is covered when some piece of `swaths` passes within `radius`.
pub fn raster_coverage(
    field: &FieldSpec,
    swaths: &[(LocalPoint, LocalPoint)],
    radius: f64,
    pitch: f64,
) -> RasterCoverage {
    let (lo, hi) = field.roi.bounding_box();
    let bucket = (2.0 * radius).max(pitch).max(1e-3);
    let bx = ((hi.x - lo.x) / bucket).floor() as i64 + 1;
    let by = ((hi.y - lo.y) / bucket).floor() as i64 + 1;
    let cell = |v: f64, lo: f64, n: i64| (((v - lo) / bucket).floor() as i64).clamp(0, n - 1);
    let mut index: Vec<Vec<usize>> = vec![Vec::new(); (bx * by) as usize];
    for (k, (a, b)) in swaths.iter().enumerate() {
        let (x0, x1) = (a.x.min(b.x) - radius, a.x.max(b.x) + radius);
        let (y0, y1) = (a.y.min(b.y) - radius, a.y.max(b.y) + radius);
        if x1 < lo.x || y1 < lo.y || x0 > hi.x || y0 > hi.y {
            continue;
        }
        for cy in cell(y0, lo.y, by)..=cell(y1, lo.y, by) {
            for cx in cell(x0, lo.x, bx)..=cell(x1, lo.x, bx) {
                index[(cy * bx + cx) as usize].push(k);
            }
        }
    }

    let mut out = RasterCoverage::default();
    let nx = ((hi.x - lo.x) / pitch + 1e-9).floor() as usize;
    let ny = ((hi.y - lo.y) / pitch + 1e-9).floor() as usize;
    for j in 0..=ny {
        for i in 0..=nx {
            let p = LocalPoint::new(lo.x + i as f64 * pitch, lo.y + j as f64 * pitch);
            if !contains(&field.roi, p) || field.roi.boundary_distance(p) < radius - 1e-9 {
                continue;
            }
            if field
                .nofly
                .iter()
                .any(|z| contains(z, p) || z.boundary_distance(p) < radius - 1e-9)
            {
                continue;
            }
            out.samples += 1;
            let bucket_ix = (cell(p.y, lo.y, by) * bx + cell(p.x, lo.x, bx)) as usize;
            if index[bucket_ix]
                .iter()
                .any(|&k| point_segment_distance(p, swaths[k].0, swaths[k].1) <= radius + 1e-9)
            {
                out.covered += 1;
            }
        }
    }
    out
}

fn polygons_intersect(a: &Polygon, b: &Polygon) -> bool {
    a.vertices().iter().any(|v| contains(b, *v))
        || b.vertices().iter().any(|v| contains(a, *v))
        || a.edges()
            .any(|(p, q)| b.edges().any(|(r, s)| crate::geo::segments_intersect(p, q, r, s)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin() -> GeoPoint {
        GeoPoint::new(9.0, 38.7).unwrap()
    }

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
        Polygon::rectangle(LocalPoint::new(x0, y0), LocalPoint::new(x1, y1)).unwrap()
    }

    fn rotated_rect(w: f64, h: f64, deg: f64) -> Polygon {
        let (s, c) = deg.to_radians().sin_cos();
        let pts = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
            .iter()
            .map(|&(x, y)| LocalPoint::new(c * x - s * y + 500.0, s * x + c * y + 500.0))
            .collect();
        Polygon::new(pts).unwrap()
    }

    /// Raster oracle: every sample of the ROI minus no-fly zones, eroded by
    /// `spacing / 2`, must lie within `spacing / 2` of the path.
    fn raster_misses(field: &FieldSpec, path: &[LocalPoint], spacing: f64, pitch: f64) -> usize {
        let (lo, hi) = field.roi.bounding_box();
        let r = spacing / 2.0;
        let mut misses = 0;
        let nx = ((hi.x - lo.x) / pitch) as usize;
        let ny = ((hi.y - lo.y) / pitch) as usize;
        for i in 0..=nx {
            for j in 0..=ny {
                let p = LocalPoint::new(lo.x + i as f64 * pitch, lo.y + j as f64 * pitch);
                if !contains(&field.roi, p) || field.roi.boundary_distance(p) < r - 1e-9 {
                    continue;
                }
                if field
                    .nofly
                    .iter()
                    .any(|z| contains(z, p) || z.boundary_distance(p) < r - 1e-9)
                {
                    continue;
                }
                let near = path
                    .windows(2)
                    .any(|w| point_segment_distance(p, w[0], w[1]) <= r + 1e-9);
                if !near {
                    misses += 1;
                }
            }
        }
        misses
    }

    #[test]
    fn indexed_raster_agrees_with_brute_force() {
        let field = FieldSpec::new(origin(), rect(0.0, 0.0, 60.0, 40.0)).with_nofly(rect(20.0, 10.0, 30.0, 20.0));
        let plan = generate_sweep(&field, &SweepConfig::with_spacing(4.0)).unwrap();
        let full: Vec<_> = plan.waypoints.windows(2).map(|w| (w[0], w[1])).collect();
        let cov = raster_coverage(&field, &full, 2.0, 0.5);
        assert_eq!(cov.misses() as usize, raster_misses(&field, &plan.waypoints, 4.0, 0.5));
        assert_eq!(cov.misses(), 0);
        let half = &plan.waypoints[..plan.waypoints.len() / 2];
        let part: Vec<_> = half.windows(2).map(|w| (w[0], w[1])).collect();
        let cov = raster_coverage(&field, &part, 2.0, 0.5);
        assert_eq!(cov.misses() as usize, raster_misses(&field, half, 4.0, 0.5));
        assert!(cov.misses() > 0);
    }

    #[test]
    fn farm_square_sweep() {
        let field = FieldSpec::new(origin(), rect(0.0, 0.0, 200.0, 200.0));
        let plan = generate_sweep(&field, &SweepConfig::with_spacing(2.0)).unwrap();
        assert_eq!(plan.line_count(), 100);
        assert_eq!(plan.metrics.turn_count, 198);
        assert_eq!(plan.waypoints.len(), 200);
        // 100 lines of 200 m joined by 99 connectors of 2 m.
        assert!((plan.metrics.length - 20_198.0).abs() < 1e-6, "{}", plan.metrics.length);
        assert!((plan.metrics.turn_degree_sum - 198.0 * 90.0).abs() < 1e-6);
        assert_eq!(plan.waypoints[0], LocalPoint::new(0.0, 1.0));
        assert_eq!(plan.waypoints[1], LocalPoint::new(200.0, 1.0));
        assert_eq!(plan.waypoints[2], LocalPoint::new(200.0, 3.0));
    }

    #[test]
    fn narrow_roi_gets_a_single_center_pass() {
        let field = FieldSpec::new(origin(), rect(0.0, 0.0, 50.0, 1.5));
        let plan = generate_sweep(&field, &SweepConfig::with_spacing(2.0)).unwrap();
        assert_eq!(plan.line_count(), 1);
        assert_eq!(plan.metrics.turn_count, 0);
        assert_eq!(plan.waypoints[0].y, 0.75);
    }

    #[test]
    fn nofly_square_splits_middle_lines() {
        let field = FieldSpec::new(origin(), rect(0.0, 0.0, 100.0, 100.0)).with_nofly(rect(40.0, 40.0, 60.0, 60.0));
        let plan = generate_sweep(&field, &SweepConfig::with_spacing(2.0)).unwrap();
        let zone = &field.nofly[0];
        // Lines at y = 41, 43, …, 59 are split: four waypoints each.
        let split_lines = plan
            .waypoints
            .iter()
            .filter(|p| (p.x - 40.0).abs() < 1e-9 || (p.x - 60.0).abs() < 1e-9)
            .count();
        assert_eq!(split_lines, 2 * 10);
        // Oracle: sample capture legs (legs along a sweep line) every 0.1 m.
        for w in plan.waypoints.windows(2) {
            let on_line = (w[0].y - w[1].y).abs() < 1e-9;
            let crosses_gap = on_line && zone.strictly_contains(w[0].lerp(w[1], 0.5));
            if !on_line || crosses_gap {
                continue;
            }
            let n = (dist(w[0], w[1]) / 0.1).ceil() as usize;
            for k in 0..=n {
                let p = w[0].lerp(w[1], k as f64 / n as f64);
                assert!(!zone.strictly_contains(p), "{p:?} inside no-fly zone");
            }
        }
        for p in &plan.waypoints {
            assert!(contains(&field.roi, *p));
            assert!(!zone.strictly_contains(*p));
        }
        assert_eq!(raster_misses(&field, &plan.waypoints, 2.0, 0.5), 0);
    }

    #[test]
    fn invalid_and_empty() {
        let field = FieldSpec::new(origin(), rect(0.0, 0.0, 10.0, 10.0));
        assert_eq!(
            generate_sweep(&field, &SweepConfig::with_spacing(0.0)),
            Err(PlanError::InvalidSpacing(0.0))
        );
        assert_eq!(
            generate_sweep(&field, &SweepConfig::with_spacing(-1.0)),
            Err(PlanError::InvalidSpacing(-1.0))
        );
        let covered = field.clone().with_nofly(rect(-1.0, -1.0, 11.0, 11.0));
        assert_eq!(
            generate_sweep(&covered, &SweepConfig::with_spacing(2.0)),
            Err(PlanError::EmptyPlan)
        );
        let cfg = SweepConfig {
            inset: 6.0,
            ..SweepConfig::with_spacing(2.0)
        };
        assert!(matches!(
            generate_sweep(&field, &cfg),
            Err(PlanError::InvalidInset { .. })
        ));
    }

    #[test]
    fn inset_keeps_margin() {
        let field = FieldSpec::new(origin(), rect(0.0, 0.0, 40.0, 40.0));
        let cfg = SweepConfig {
            inset: 3.0,
            ..SweepConfig::with_spacing(2.0)
        };
        let plan = generate_sweep(&field, &cfg).unwrap();
        for p in &plan.waypoints {
            assert!(field.roi.boundary_distance(*p) >= 3.0 - 1e-9, "{p:?}");
        }
    }

    #[test]
    fn count_turns_examples() {
        let l = |x, y| LocalPoint::new(x, y);
        let m = count_turns(&[l(0.0, 0.0), l(1.0, 0.0), l(2.0, 0.0)], 10.0);
        assert_eq!(m.turn_count, 0);
        assert_eq!(m.length, 2.0);
        let m = count_turns(&[l(0.0, 0.0), l(1.0, 0.0), l(1.0, 1.0)], 10.0);
        assert_eq!(m.turn_count, 1);
        assert!((m.turn_degree_sum - 90.0).abs() < 1e-9);
        // Jitter below the threshold is not a turn.
        let m = count_turns(&[l(0.0, 0.0), l(10.0, 0.0), l(20.0, 1.0)], 10.0);
        assert_eq!(m.turn_count, 0);
    }

    #[test]
    fn boustrophedon_turns_are_right_angles() {
        for lines in 1..8 {
            let h = 2.0 * lines as f64;
            let field = FieldSpec::new(origin(), rect(0.0, 0.0, 30.0, h));
            let plan = generate_sweep(&field, &SweepConfig::with_spacing(2.0)).unwrap();
            assert_eq!(plan.line_count(), lines);
            assert_eq!(plan.metrics.turn_count as usize, 2 * (lines - 1));
            assert!((plan.metrics.turn_degree_sum - 90.0 * plan.metrics.turn_count as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn optimize_prefers_long_edge() {
        let field = FieldSpec::new(origin(), rect(0.0, 0.0, 100.0, 20.0));
        let cfg = SweepConfig::with_spacing(2.0);
        let plan = optimize_direction(&field, &cfg).unwrap();
        assert_eq!(plan.angle_deg(), 0.0);
        assert_eq!(plan.line_count(), 10);
        // Exhaustive oracle over the grid.
        let mut best = (u32::MAX, f64::INFINITY, 0.0);
        for k in 0..36 {
            let a = k as f64 * 5.0;
            let p = generate_sweep(&field, &cfg.at_angle(a)).unwrap();
            let key = (p.metrics.turn_count, p.metrics.length);
            if key.0 < best.0 || (key.0 == best.0 && key.1 < best.1 - 1e-6) {
                best = (key.0, key.1, a);
            }
        }
        assert_eq!(best.2, plan.angle_deg());
        let vertical = generate_sweep(&field, &cfg.at_angle(90.0)).unwrap();
        assert_eq!(vertical.line_count(), 50);
    }

    #[test]
    fn optimize_square_ties_to_zero() {
        let field = FieldSpec::new(origin(), rect(0.0, 0.0, 60.0, 60.0));
        let plan = optimize_direction(&field, &SweepConfig::with_spacing(2.0)).unwrap();
        assert_eq!(plan.angle_deg(), 0.0);
    }

    #[test]
    fn optimize_follows_rotated_rectangle() {
        let field = FieldSpec::new(origin(), rotated_rect(120.0, 24.0, 30.0));
        let cfg = SweepConfig::with_spacing(2.0);
        let plan = optimize_direction(&field, &cfg).unwrap();
        assert!((plan.angle_deg() - 30.0).abs() <= 5.0, "{}", plan.angle_deg());
        let zero = generate_sweep(&field, &cfg).unwrap();
        assert!(plan.metrics.turn_count <= zero.metrics.turn_count);
    }

    #[test]
    fn priorities_absent_equals_plain_sweep() {
        let field = FieldSpec::new(origin(), rect(0.0, 0.0, 50.0, 50.0));
        let cfg = SweepConfig::with_spacing(2.0);
        assert_eq!(
            apply_priorities(&field, &cfg).unwrap(),
            generate_sweep(&field, &cfg).unwrap()
        );
    }

    #[test]
    fn full_override_equals_wider_sweep() {
        let roi = rect(0.0, 0.0, 50.0, 50.0);
        let field = FieldSpec::new(origin(), roi.clone()).with_priority(roi.clone(), 4.0, 1);
        let plan = apply_priorities(&field, &SweepConfig::with_spacing(2.0)).unwrap();
        let wide = generate_sweep(&FieldSpec::new(origin(), roi), &SweepConfig::with_spacing(4.0)).unwrap();
        assert_eq!(plan.waypoints, wide.waypoints);
        assert_eq!(plan.metrics, wide.metrics);
        assert_eq!(plan.parts.len(), 1);
    }

    #[test]
    fn half_field_priority_doubles_line_density() {
        let field =
            FieldSpec::new(origin(), rect(0.0, 0.0, 60.0, 60.0)).with_priority(rect(0.0, 0.0, 60.0, 30.0), 1.0, 1);
        let plan = apply_priorities(&field, &SweepConfig::with_spacing(2.0)).unwrap();
        assert_eq!(plan.parts.len(), 2);
        assert_eq!(plan.parts[0].priority, Some(0));
        assert_eq!(plan.parts[0].line_count, 30);
        assert_eq!(plan.parts[1].priority, None);
        assert_eq!(plan.parts[1].line_count, 15);
        assert_eq!(plan.parts[0].line_count, 2 * plan.parts[1].line_count);
        assert_eq!(plan.metrics, count_turns(&plan.waypoints, plan.turn_threshold_deg));
    }

    #[test]
    fn overlapping_priorities_resolve_by_rank() {
        let field = FieldSpec::new(origin(), rect(0.0, 0.0, 60.0, 60.0))
            .with_priority(rect(0.0, 0.0, 60.0, 40.0), 4.0, 2)
            .with_priority(rect(0.0, 0.0, 60.0, 20.0), 1.0, 1);
        let plan = apply_priorities(&field, &SweepConfig::with_spacing(2.0)).unwrap();
        assert_eq!(plan.parts[0].priority, Some(1));
        assert_eq!(plan.parts[1].priority, Some(0));
        // The rank-2 region never re-flies the rank-1 area.
        let [a, b] = plan.parts[1].waypoints;
        for p in &plan.waypoints[a..=b] {
            assert!(p.y >= 20.0 - 1e-9, "{p:?}");
        }
    }

    #[test]
    fn region_outside_roi_is_rejected() {
        let field =
            FieldSpec::new(origin(), rect(0.0, 0.0, 10.0, 10.0)).with_priority(rect(50.0, 50.0, 60.0, 60.0), 1.0, 1);
        assert_eq!(
            apply_priorities(&field, &SweepConfig::default()),
            Err(PlanError::RegionOutsideRoi(0))
        );
    }

    #[test]
    fn sweep_angle_serde() {
        assert_eq!(serde_json::to_string(&SweepAngle::AUTO).unwrap(), "\"auto\"");
        assert_eq!(
            serde_json::from_str::<SweepAngle>("\"auto\"").unwrap(),
            SweepAngle::AUTO
        );
        assert_eq!(
            serde_json::from_str::<SweepAngle>("45").unwrap(),
            SweepAngle::Degrees(45.0)
        );
        let cfg: SweepConfig = serde_json::from_str(r#"{"spacing": 3}"#).unwrap();
        assert_eq!(cfg.spacing, 3.0);
        assert_eq!(cfg.turn_threshold_deg, DEFAULT_TURN_THRESHOLD_DEG);
    }
}
