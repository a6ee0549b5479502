//! Field-marking templates: line segments and circular arcs on the z = 0
//! plane, in world meters. Built-in soccer and volleyball layouts plus a
//! JSON file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A line segment between two points on the field plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

/// A circular arc. Angles in degrees, counter-clockwise from the +X axis;
/// the arc sweeps from `start_deg` to `end_deg` (start < end).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub center: [f64; 2],
    pub radius: f64,
    pub start_deg: f64,
    pub end_deg: f64,
}

/// Field markings for one sport.
///
/// Built-in soccer primitive counts (frozen by tests):
/// boundary 4 + halfway 1 + penalty areas 6 + goal areas 6 + penalty-mark
/// crosses 4 = 21 segments; center circle 1 + penalty arcs 2 + corner
/// arcs 4 = 7 arcs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TemplateFile", into = "TemplateFile")]
pub struct FieldTemplate {
    pub name: String,
    pub length_m: f64,
    pub width_m: f64,
    pub segments: Vec<Segment>,
    pub arcs: Vec<Arc>,
}

/// On-disk shape: segments as 4-number arrays, arcs as 5-number arrays.
#[derive(Serialize, Deserialize)]
struct TemplateFile {
    name: String,
    length_m: f64,
    width_m: f64,
    segments: Vec<[f64; 4]>,
    arcs: Vec<[f64; 5]>,
}

impl From<FieldTemplate> for TemplateFile {
    fn from(t: FieldTemplate) -> Self {
        TemplateFile {
            name: t.name,
            length_m: t.length_m,
            width_m: t.width_m,
            segments: t.segments.iter().map(|s| [s.a[0], s.a[1], s.b[0], s.b[1]]).collect(),
            arcs: t
                .arcs
                .iter()
                .map(|a| [a.center[0], a.center[1], a.radius, a.start_deg, a.end_deg])
                .collect(),
        }
    }
}

impl TryFrom<TemplateFile> for FieldTemplate {
    type Error = Error;

    fn try_from(f: TemplateFile) -> Result<Self> {
        let t = FieldTemplate {
            name: f.name,
            length_m: f.length_m,
            width_m: f.width_m,
            segments: f
                .segments
                .iter()
                .map(|s| Segment { a: [s[0], s[1]], b: [s[2], s[3]] })
                .collect(),
            arcs: f
                .arcs
                .iter()
                .map(|a| Arc {
                    center: [a[0], a[1]],
                    radius: a[2],
                    start_deg: a[3],
                    end_deg: a[4],
                })
                .collect(),
        };
        t.validate()?;
        Ok(t)
    }
}

impl FieldTemplate {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_m > 0.0) || !(self.width_m > 0.0) {
            return Err(Error::InvalidTemplate(format!(
                "field extents must be positive, got {} x {}",
                self.length_m, self.width_m
            )));
        }
        let in_bounds = |p: [f64; 2]| {
            p[0] >= -1.0 && p[0] <= self.length_m + 1.0 && p[1] >= -1.0 && p[1] <= self.width_m + 1.0
        };
        for (i, s) in self.segments.iter().enumerate() {
            if !in_bounds(s.a) || !in_bounds(s.b) {
                return Err(Error::InvalidTemplate(format!(
                    "segment {i} endpoint outside field bounds"
                )));
            }
            let len2 = (s.b[0] - s.a[0]).powi(2) + (s.b[1] - s.a[1]).powi(2);
            if len2 <= 0.0 {
                return Err(Error::InvalidTemplate(format!("segment {i} has zero length")));
            }
        }
        for (i, a) in self.arcs.iter().enumerate() {
            if !(a.radius > 0.0) {
                return Err(Error::InvalidTemplate(format!(
                    "arc {i} radius must be positive, got {}",
                    a.radius
                )));
            }
            if !(a.end_deg > a.start_deg) {
                return Err(Error::InvalidTemplate(format!("arc {i} has empty angular extent")));
            }
            // Check the swept extremes stay within the padded field box.
            let ext = arc_bounding_points(a);
            if !ext.into_iter().all(in_bounds) {
                return Err(Error::InvalidTemplate(format!("arc {i} extends outside field bounds")));
            }
        }
        Ok(())
    }
}

fn arc_bounding_points(a: &Arc) -> Vec<[f64; 2]> {
    let mut pts = Vec::new();
    let point_at = |deg: f64| {
        let r = deg.to_radians();
        [a.center[0] + a.radius * r.cos(), a.center[1] + a.radius * r.sin()]
    };
    pts.push(point_at(a.start_deg));
    pts.push(point_at(a.end_deg));
    // Axis-aligned extremes inside the sweep.
    let mut deg = (a.start_deg / 90.0).ceil() * 90.0;
    while deg <= a.end_deg {
        pts.push(point_at(deg));
        deg += 90.0;
    }
    pts
}

/// Standard 105 x 68 m soccer pitch.
pub fn builtin_soccer() -> FieldTemplate {
    const LEN: f64 = 105.0;
    const WID: f64 = 68.0;
    const CIRCLE_R: f64 = 9.15;
    const PENALTY_DEPTH: f64 = 16.5;
    const PENALTY_WIDTH: f64 = 40.32;
    const GOAL_DEPTH: f64 = 5.5;
    const GOAL_WIDTH: f64 = 18.32;
    const PENALTY_MARK_X: f64 = 11.0;
    const CROSS_HALF: f64 = 0.3;
    const CORNER_R: f64 = 1.0;

    let mut segments = Vec::new();
    let mut arcs = Vec::new();
    let seg = |a: [f64; 2], b: [f64; 2]| Segment { a, b };

    // Boundary.
    segments.push(seg([0.0, 0.0], [LEN, 0.0]));
    segments.push(seg([LEN, 0.0], [LEN, WID]));
    segments.push(seg([LEN, WID], [0.0, WID]));
    segments.push(seg([0.0, WID], [0.0, 0.0]));
    // Halfway line.
    segments.push(seg([LEN / 2.0, 0.0], [LEN / 2.0, WID]));

    // Penalty and goal areas, three open sides each (the goal line closes them).
    let mut area = |depth: f64, half_width: f64| {
        let lo = WID / 2.0 - half_width;
        let hi = WID / 2.0 + half_width;
        segments.push(seg([0.0, lo], [depth, lo]));
        segments.push(seg([depth, lo], [depth, hi]));
        segments.push(seg([depth, hi], [0.0, hi]));
        segments.push(seg([LEN, lo], [LEN - depth, lo]));
        segments.push(seg([LEN - depth, lo], [LEN - depth, hi]));
        segments.push(seg([LEN - depth, hi], [LEN, hi]));
    };
    area(PENALTY_DEPTH, PENALTY_WIDTH / 2.0);
    area(GOAL_DEPTH, GOAL_WIDTH / 2.0);

    // Penalty marks as short crosses.
    for x in [PENALTY_MARK_X, LEN - PENALTY_MARK_X] {
        segments.push(seg([x - CROSS_HALF, WID / 2.0], [x + CROSS_HALF, WID / 2.0]));
        segments.push(seg([x, WID / 2.0 - CROSS_HALF], [x, WID / 2.0 + CROSS_HALF]));
    }

    // Center circle.
    arcs.push(Arc {
        center: [LEN / 2.0, WID / 2.0],
        radius: CIRCLE_R,
        start_deg: 0.0,
        end_deg: 360.0,
    });
    // Penalty arcs: the part of the circle around the mark lying outside
    // the penalty area.
    let d = (PENALTY_DEPTH - PENALTY_MARK_X) / CIRCLE_R;
    let half_sweep = d.acos().to_degrees();
    arcs.push(Arc {
        center: [PENALTY_MARK_X, WID / 2.0],
        radius: CIRCLE_R,
        start_deg: -half_sweep,
        end_deg: half_sweep,
    });
    arcs.push(Arc {
        center: [LEN - PENALTY_MARK_X, WID / 2.0],
        radius: CIRCLE_R,
        start_deg: 180.0 - half_sweep,
        end_deg: 180.0 + half_sweep,
    });
    // Corner arcs.
    arcs.push(Arc { center: [0.0, 0.0], radius: CORNER_R, start_deg: 0.0, end_deg: 90.0 });
    arcs.push(Arc { center: [LEN, 0.0], radius: CORNER_R, start_deg: 90.0, end_deg: 180.0 });
    arcs.push(Arc { center: [LEN, WID], radius: CORNER_R, start_deg: 180.0, end_deg: 270.0 });
    arcs.push(Arc { center: [0.0, WID], radius: CORNER_R, start_deg: 270.0, end_deg: 360.0 });

    FieldTemplate {
        name: "soccer".into(),
        length_m: LEN,
        width_m: WID,
        segments,
        arcs,
    }
}

/// 18 x 9 m volleyball court: boundary, center line, attack lines 3 m
/// either side of center.
pub fn builtin_volleyball() -> FieldTemplate {
    const LEN: f64 = 18.0;
    const WID: f64 = 9.0;
    let seg = |a: [f64; 2], b: [f64; 2]| Segment { a, b };
    let segments = vec![
        seg([0.0, 0.0], [LEN, 0.0]),
        seg([LEN, 0.0], [LEN, WID]),
        seg([LEN, WID], [0.0, WID]),
        seg([0.0, WID], [0.0, 0.0]),
        seg([LEN / 2.0, 0.0], [LEN / 2.0, WID]),
        seg([LEN / 2.0 - 3.0, 0.0], [LEN / 2.0 - 3.0, WID]),
        seg([LEN / 2.0 + 3.0, 0.0], [LEN / 2.0 + 3.0, WID]),
    ];
    FieldTemplate {
        name: "volleyball".into(),
        length_m: LEN,
        width_m: WID,
        segments,
        arcs: Vec::new(),
    }
}

/// Look up a built-in template by name.
pub fn builtin(name: &str) -> Result<FieldTemplate> {
    match name {
        "soccer" => Ok(builtin_soccer()),
        "volleyball" => Ok(builtin_volleyball()),
        other => Err(Error::Config(format!(
            "unknown builtin template '{other}' (expected 'soccer' or 'volleyball')"
        ))),
    }
}

pub fn load_template(path: &Path) -> Result<FieldTemplate> {
    let text = std::fs::read_to_string(path)?;
    parse_template(&text).map_err(|e| match e {
        Error::Parse { msg, .. } => Error::Parse { context: path.display().to_string(), msg },
        other => other,
    })
}

pub fn parse_template(text: &str) -> Result<FieldTemplate> {
    serde_json::from_str(text).map_err(|e| {
        if e.is_data() && e.to_string().contains("invalid field template") {
            // Invariant violations surface as-is rather than as parse noise.
            Error::InvalidTemplate(e.to_string())
        } else {
            Error::Parse {
                context: "template".into(),
                msg: format!("line {}, column {}: {e}", e.line(), e.column()),
            }
        }
    })
}

pub fn save_template(t: &FieldTemplate, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(t).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        msg: e.to_string(),
    })?;
    std::fs::write(path, text)?;
    Ok(())
}
