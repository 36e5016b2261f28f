//! Procedural indenters and analytic depth maps of a flat elastomer pressed
//! by them.
//!
//! Geometry is in metres. Pixel `(row, col)` has its centre at
//! `((col + 0.5) · pitch, (row + 0.5) · pitch)`. An indenter touches the
//! undeformed surface at its lowest point and is pushed `tap_depth` further;
//! wherever its surface lies below the original elastomer plane the
//! elastomer conforms to it, so `depth = elastomer_depth − max(0, tap − gap)`
//! with `gap` the height of the indenter surface above its lowest point.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::DepthMap;

/// Field of view used by [`SensorGeometry::for_resolution`].
pub const FIELD_OF_VIEW: f64 = 0.012;
/// Default camera-to-elastomer distance.
pub const ELASTOMER_DEPTH: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorGeometry {
    /// Metres per pixel.
    pub pixel_pitch: f64,
    /// Distance from the camera to the undeformed elastomer surface.
    pub elastomer_depth: f64,
}

impl SensorGeometry {
    /// Square sensor of [`FIELD_OF_VIEW`] sampled at `resolution` pixels.
    pub fn for_resolution(resolution: usize) -> Self {
        Self { pixel_pitch: FIELD_OF_VIEW / resolution as f64, elastomer_depth: ELASTOMER_DEPTH }
    }
}

/// Rigid indenter primitive in its own frame; `angle` orients the long axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { radius: f64 },
    /// Cylinder lying on its side with flat end caps.
    Cylinder { radius: f64, length: f64, angle: f64 },
    /// Straight V-shaped ridge whose flanks rise at `slope`.
    Ridge { slope: f64, length: f64, angle: f64 },
}

impl Primitive {
    /// Height of the primitive's surface above its lowest point at planar
    /// offset `(x, y)` from its centre; infinite outside its footprint.
    pub fn gap(&self, x: f64, y: f64) -> f64 {
        match *self {
            Primitive::Sphere { radius } => {
                let rho2 = x * x + y * y;
                if rho2 < radius * radius {
                    radius - (radius * radius - rho2).sqrt()
                } else {
                    f64::INFINITY
                }
            }
            Primitive::Cylinder { radius, length, angle } => {
                let (along, across) = axis_coords(x, y, angle);
                if along.abs() <= length / 2.0 && across.abs() < radius {
                    radius - (radius * radius - across * across).sqrt()
                } else {
                    f64::INFINITY
                }
            }
            Primitive::Ridge { slope, length, angle } => {
                let (along, across) = axis_coords(x, y, angle);
                if along.abs() <= length / 2.0 {
                    slope * across.abs()
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Primitive::Sphere { radius } => radius > 0.0,
            Primitive::Cylinder { radius, length, angle } => radius > 0.0 && length > 0.0 && angle.is_finite(),
            Primitive::Ridge { slope, length, angle } => slope > 0.0 && length > 0.0 && angle.is_finite(),
        };
        ensure!(ok, Validation, "invalid indenter primitive {self:?}");
        Ok(())
    }
}

fn axis_coords(x: f64, y: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (x * c + y * s, -x * s + y * c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub primitive: Primitive,
    /// Offset of the primitive's centre from the indenter origin, metres.
    pub offset: (f64, f64),
}

/// An indenter: the union of one or more primitives sharing a common base
/// plane, so all of them touch the elastomer at the same moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Indenter {
    pub name: String,
    pub parts: Vec<Part>,
}

impl Indenter {
    pub fn single(name: &str, primitive: Primitive) -> Self {
        Self { name: name.to_string(), parts: vec![Part { primitive, offset: (0.0, 0.0) }] }
    }

    pub fn gap(&self, x: f64, y: f64) -> f64 {
        self.parts
            .iter()
            .map(|p| p.primitive.gap(x - p.offset.0, y - p.offset.1))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Where the indenter sits over the sensor: centre in (fractional) pixel
/// coordinates `(col, row)` and an in-plane rotation in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub center: (f64, f64),
    pub rotation: f64,
}

impl Pose {
    pub fn centered(height: usize, width: usize) -> Self {
        Self { center: (width as f64 / 2.0, height as f64 / 2.0), rotation: 0.0 }
    }
}

/// Depth map of the elastomer with `indenter` pressed `tap_depth` metres in.
///
/// Fails when the contact region reaches the image border, i.e. the
/// indenter footprint does not fit in the frame.
pub fn synth_depth_map(
    indenter: &Indenter,
    pose: Pose,
    tap_depth: f64,
    dims: (usize, usize),
    sensor: SensorGeometry,
) -> Result<DepthMap> {
    ensure!(tap_depth >= 0.0 && tap_depth.is_finite(), Validation, "tap depth must be >= 0, got {tap_depth}");
    ensure!(
        tap_depth < sensor.elastomer_depth,
        Validation,
        "tap depth {tap_depth} exceeds the elastomer depth {}",
        sensor.elastomer_depth
    );
    ensure!(!indenter.parts.is_empty(), Validation, "indenter `{}` has no parts", indenter.name);
    for part in &indenter.parts {
        part.primitive.validate()?;
    }
    let (h, w) = dims;
    let pitch = sensor.pixel_pitch;
    let (cx, cy) = (pose.center.0 * pitch, pose.center.1 * pitch);
    let (s, c) = pose.rotation.sin_cos();
    let mut values = Array2::from_elem((h, w), sensor.elastomer_depth);
    for ((row, col), d) in values.indexed_iter_mut() {
        let dx = (col as f64 + 0.5) * pitch - cx;
        let dy = (row as f64 + 0.5) * pitch - cy;
        // Into the indenter frame.
        let (lx, ly) = (dx * c + dy * s, -dx * s + dy * c);
        let intrusion = tap_depth - indenter.gap(lx, ly);
        if intrusion > 0.0 {
            *d = sensor.elastomer_depth - intrusion;
        }
    }
    let touches_border = |r: usize, col: usize| values[[r, col]] < sensor.elastomer_depth;
    let border_hit = (0..w).any(|x| touches_border(0, x) || touches_border(h - 1, x))
        || (0..h).any(|y| touches_border(y, 0) || touches_border(y, w - 1));
    ensure!(
        !border_hit,
        Validation,
        "indenter `{}` at tap depth {tap_depth} m does not fit in a {h}x{w} frame",
        indenter.name
    );
    DepthMap::new(values)
}

/// Analytic contact radius of a sphere of `radius` pressed `tap_depth` in.
pub fn sphere_contact_radius(radius: f64, tap_depth: f64) -> f64 {
    let d = tap_depth.min(radius);
    (2.0 * radius * d - d * d).max(0.0).sqrt()
}

const MM: f64 = 1e-3;

/// Number of distinct catalogue objects.
pub const CATALOG_SIZE: usize = 21;

/// The fixed catalogue of reference objects. The first four are the most
/// mutually distinct shapes, so small class counts stay easy to tell apart.
pub fn catalog_object(class: usize) -> Indenter {
    use std::f64::consts::FRAC_PI_2 as RIGHT;
    use std::f64::consts::FRAC_PI_4 as DIAG;
    let sphere = |r: f64| Primitive::Sphere { radius: r * MM };
    let cyl = |r: f64, l: f64, a: f64| Primitive::Cylinder { radius: r * MM, length: l * MM, angle: a };
    let ridge = |s: f64, l: f64, a: f64| Primitive::Ridge { slope: s, length: l * MM, angle: a };
    let part = |p: Primitive, x: f64, y: f64| Part { primitive: p, offset: (x * MM, y * MM) };
    let multi = |name: &str, parts: Vec<Part>| Indenter { name: name.to_string(), parts };
    match class % CATALOG_SIZE {
        0 => Indenter::single("sphere", sphere(5.0)),
        1 => Indenter::single("cylinder_h", cyl(3.0, 7.0, 0.0)),
        2 => Indenter::single("ridge_v", ridge(0.5, 7.0, RIGHT)),
        3 => multi("twin_spheres_h", vec![part(sphere(2.5), -2.6, 0.0), part(sphere(2.5), 2.6, 0.0)]),
        4 => Indenter::single("cylinder_v", cyl(3.0, 7.0, RIGHT)),
        5 => Indenter::single("small_sphere", sphere(2.5)),
        6 => Indenter::single("ridge_h", ridge(0.5, 7.0, 0.0)),
        7 => Indenter::single("cylinder_d1", cyl(3.0, 6.5, DIAG)),
        8 => Indenter::single("cylinder_d2", cyl(3.0, 6.5, -DIAG)),
        9 => Indenter::single("ridge_d1", ridge(0.5, 6.5, DIAG)),
        10 => Indenter::single("ridge_d2", ridge(0.5, 6.5, -DIAG)),
        11 => multi("twin_spheres_v", vec![part(sphere(2.5), 0.0, -2.6), part(sphere(2.5), 0.0, 2.6)]),
        12 => multi(
            "triple_spheres",
            vec![part(sphere(2.0), 0.0, -2.4), part(sphere(2.0), -2.1, 1.2), part(sphere(2.0), 2.1, 1.2)],
        ),
        13 => multi("cross", vec![part(cyl(2.0, 7.0, 0.0), 0.0, 0.0), part(cyl(2.0, 7.0, RIGHT), 0.0, 0.0)]),
        14 => Indenter::single("large_sphere", sphere(8.0)),
        15 => Indenter::single("short_cylinder", cyl(3.0, 3.5, 0.0)),
        16 => multi("ridge_and_sphere", vec![part(ridge(0.6, 5.0, RIGHT), -1.6, 0.0), part(sphere(2.0), 2.4, 0.0)]),
        17 => multi(
            "quad_spheres",
            vec![
                part(sphere(1.8), -1.9, -1.9),
                part(sphere(1.8), 1.9, -1.9),
                part(sphere(1.8), -1.9, 1.9),
                part(sphere(1.8), 1.9, 1.9),
            ],
        ),
        18 => Indenter::single("thick_cylinder", cyl(5.0, 5.0, 0.0)),
        19 => multi("twin_cylinders", vec![part(cyl(1.5, 6.0, 0.0), 0.0, -1.8), part(cyl(1.5, 6.0, 0.0), 0.0, 1.8)]),
        _ => multi("ridge_cross", vec![part(ridge(0.5, 7.0, 0.0), 0.0, 0.0), part(ridge(0.5, 7.0, RIGHT), 0.0, 0.0)]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::mask_from_depth;

    fn sensor() -> SensorGeometry {
        SensorGeometry::for_resolution(64)
    }

    #[test]
    fn zero_tap_is_flat() {
        let d = synth_depth_map(&catalog_object(0), Pose::centered(64, 64), 0.0, (64, 64), sensor()).unwrap();
        assert!(d.values().iter().all(|v| *v == ELASTOMER_DEPTH));
        assert_eq!(mask_from_depth(&d, ELASTOMER_DEPTH).unwrap().contact_pixels(), 0);
    }

    #[test]
    fn sphere_contact_disc_matches_analytic_radius() {
        let s = sensor();
        let (r, d) = (5.0 * MM, 0.8 * MM);
        let ind = Indenter::single("s", Primitive::Sphere { radius: r });
        let depth = synth_depth_map(&ind, Pose::centered(64, 64), d, (64, 64), s).unwrap();
        let mask = mask_from_depth(&depth, s.elastomer_depth).unwrap();
        let radius_px = sphere_contact_radius(r, d) / s.pixel_pitch;
        for ((row, col), m) in mask.values().indexed_iter() {
            let rho = ((col as f64 + 0.5 - 32.0).powi(2) + (row as f64 + 0.5 - 32.0).powi(2)).sqrt();
            if rho < radius_px - 1.0 {
                assert_eq!(*m, 1, "({row},{col}) inside disc");
            } else if rho > radius_px + 1.0 {
                assert_eq!(*m, 0, "({row},{col}) outside disc");
            }
        }
    }

    #[test]
    fn deepest_point_is_tap_depth() {
        let s = sensor();
        let d = synth_depth_map(&catalog_object(0), Pose { center: (32.5, 32.5), rotation: 0.0 }, 1e-3, (64, 64), s).unwrap();
        let min = d.values().iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((s.elastomer_depth - min - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn disjoint_indenters_give_disjoint_regions() {
        let s = sensor();
        let ind = catalog_object(3);
        let depth = synth_depth_map(&ind, Pose::centered(64, 64), 0.6 * MM, (64, 64), s).unwrap();
        let mask = mask_from_depth(&depth, s.elastomer_depth).unwrap();
        // The column through the centre separates the two contacts.
        assert!((0..64).all(|r| !mask.is_contact(r, 31) && !mask.is_contact(r, 32)));
        let left = mask.values().indexed_iter().filter(|((_, c), v)| *c < 32 && **v == 1).count();
        let right = mask.values().indexed_iter().filter(|((_, c), v)| *c >= 32 && **v == 1).count();
        assert!(left > 0 && right > 0);
        assert_eq!(left, right);
    }

    #[test]
    fn oversized_indenter_is_rejected() {
        let ind = Indenter::single("huge", Primitive::Sphere { radius: 0.2 });
        assert!(synth_depth_map(&ind, Pose::centered(64, 64), 1e-3, (64, 64), sensor()).is_err());
        assert!(synth_depth_map(&catalog_object(0), Pose::centered(64, 64), -1e-3, (64, 64), sensor()).is_err());
    }

    #[test]
    fn every_catalog_object_fits_at_full_depth_and_offset() {
        let s = SensorGeometry::for_resolution(32);
        for class in 0..21 {
            for (gx, gy) in [(-1.0, -1.0), (1.0, 1.0), (1.0, -1.0)] {
                let pose = Pose { center: (16.0 + gx * 0.5 * MM / s.pixel_pitch, 16.0 + gy * 0.5 * MM / s.pixel_pitch), rotation: 0.15 };
                synth_depth_map(&catalog_object(class), pose, 1.5 * MM, (32, 32), s)
                    .unwrap_or_else(|e| panic!("class {class}: {e}"));
            }
        }
    }
}
